"""Command line front end.

Subcommands: gen (synthetic traces), select (budgeted eviction), eval
(score a decision), sweep (config grid to CSV), mem (cache size math).

Every flag can also come from a TOML config file (--config); explicit
flags beat the file, the file beats built-in defaults. Exit codes: 0 on
success, 1 on operational failures (bad traces, I/O), 2 on usage errors.
"""

import argparse
import itertools
import sys

try:
    import tomllib
except ModuleNotFoundError:  # python 3.10
    import tomli as tomllib

from .baselines import Policy, PolicyConfig, pyramid_budgets
from .errors import InvalidFraction, InvalidSpec, KVCrushError, ShapeMismatch
from .evaluate import evaluate
from .grouping import AnchorStrategy
from .pipeline import BudgetSpec, EvictionDecision, Granularity, select_all
from .trace import (
    SyntheticSpec,
    TraceHeader,
    gen_synthetic,
    kv_memory_bytes,
    read_trace,
    write_trace,
)

USAGE_ERROR = 2


class CliUsageError(Exception):
    pass


# Synthetic-trace options shared by gen and sweep.
_GEN_OPTS = [
    ("seq_len", int, 1024, "sequence length"),
    ("layers", int, 1, "number of layers"),
    ("heads", int, 8, "heads per layer"),
    ("head_dim", int, 32, "head dimension"),
    ("clusters", int, 4, "planted key clusters"),
    ("spread", float, 0.1, "key noise around cluster centers"),
    ("sink_fraction", float, 0.0, "fraction of heads acting as attention sinks"),
    ("recency_bias", float, 0.0, "fraction of heads with recency-dominated scores"),
    ("name", str, "synthetic", "model name stored in the header"),
]

_SELECT_OPTS = [
    ("budget", int, 256, "tokens kept per layer"),
    ("policy", str, "h2o", "baseline policy: full_kv|h2o|window|snapkv|pyramidkv"),
    ("kvcrush_fraction", float, 0.25, "budget share spent on representatives"),
    ("retain_fraction", float, 0.5, "fingerprint density per head"),
    ("anchor", str, "random", "anchor strategy: random|mean|alternating"),
    ("granularity", str, "token", "selection granularity: token|chunk|page"),
    ("block_size", int, 1, "chunk/page size in tokens"),
    ("window", int, 32, "snapkv observation window"),
    ("pool_width", int, 5, "snapkv max-pool width (odd)"),
    ("sinks", int, 4, "window policy: leading tokens kept"),
    ("recents", int, 64, "window policy: trailing tokens kept"),
    ("taper", float, 0.5, "pyramidkv geometric budget decay"),
]

# Spelling variants accepted for convenience (same destination).
_FLAG_ALIASES = {
    "kvcrush_fraction": ["--kvcrush-frac"],
    "block_size": ["--chunk-size", "--page-size"],
}


def _add_options(parser, opts):
    for name, typ, _default, help_text in opts:
        flags = ["--" + name.replace("_", "-")] + _FLAG_ALIASES.get(name, [])
        parser.add_argument(*flags, type=typ, default=None, help=help_text, dest=name)


def _load_config(path):
    if path is None:
        return {}
    try:
        with open(path, "rb") as f:
            return tomllib.load(f)
    except OSError as exc:
        raise CliUsageError(f"cannot read config file {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise CliUsageError(f"config file {path} is not valid TOML: {exc}") from exc


def _resolve(args, opts):
    """Flags beat config file values beat declared defaults."""
    config = _load_config(getattr(args, "config", None))
    out = {}
    for name, typ, default, _help in opts:
        flag_val = getattr(args, name, None)
        if flag_val is not None:
            out[name] = flag_val
        elif name in config:
            out[name] = typ(config[name])
        else:
            out[name] = default
    return out


def _spec_from(opts, seed):
    return SyntheticSpec(
        seq_len=opts["seq_len"],
        num_layers=opts["layers"],
        num_heads=opts["heads"],
        head_dim=opts["head_dim"],
        num_clusters=opts["clusters"],
        cluster_spread=opts["spread"],
        sink_fraction=opts["sink_fraction"],
        recency_bias=opts["recency_bias"],
        rng_seed=seed,
        model_name=opts["name"],
    )


def _policy_from(opts):
    return PolicyConfig(
        policy=Policy(opts["policy"]),
        window=opts["window"],
        pool_width=opts["pool_width"],
        sinks=opts["sinks"],
        recents=opts["recents"],
        taper=opts["taper"],
    )


def _budget_from(opts):
    return BudgetSpec(
        total=opts["budget"],
        kvcrush_fraction=opts["kvcrush_fraction"],
        granularity=Granularity(opts["granularity"]),
        block_size=opts["block_size"],
    )


def cmd_gen(args):
    opts = _resolve(args, _GEN_OPTS + [("seed", int, 0, "")])
    trace = gen_synthetic(_spec_from(opts, opts["seed"]))
    write_trace(trace, args.out)
    h = trace.header
    print(
        f"wrote {args.out}: layers={h.num_layers} heads={h.num_heads} "
        f"head_dim={h.head_dim} seq_len={h.seq_len}"
    )
    return 0


def cmd_select(args):
    opts = _resolve(args, _SELECT_OPTS + [("seed", int, 0, "")])
    trace = read_trace(args.trace)
    decision = select_all(
        trace,
        _budget_from(opts),
        policy=_policy_from(opts),
        retain_fraction=opts["retain_fraction"],
        anchor=AnchorStrategy(opts["anchor"]),
        rng_seed=opts["seed"],
    )
    with open(args.out, "w") as f:
        f.write(decision.to_json())
    kept = len(decision.layers[0].retained)
    print(f"wrote {args.out}: {len(decision.layers)} layers, {kept} tokens in layer 0")
    return 0


def cmd_eval(args):
    trace = read_trace(args.trace)
    with open(args.decision) as f:
        decision = EvictionDecision.from_json(f.read())
    report = evaluate(trace, decision)  # seq_len mismatch -> usage error
    text = report.to_csv() if args.csv else report.to_json()
    if args.out:
        with open(args.out, "w") as f:
            f.write(text if text.endswith("\n") else text + "\n")
        print(f"wrote {args.out}")
    else:
        print(text)
    return 0


def _parse_list(raw, typ):
    return [typ(tok) for tok in str(raw).split(",") if tok != ""]


def cmd_sweep(args):
    opts = _resolve(args, _GEN_OPTS + _SELECT_OPTS)
    policies = _parse_list(args.policies, str)
    anchors = _parse_list(args.anchors, str)
    fractions = _parse_list(args.fractions, float)
    budgets = _parse_list(args.budgets, int)
    seeds = _parse_list(args.seeds, int)
    grid = list(itertools.product(policies, anchors, fractions, budgets, seeds))
    if len(grid) > args.max_cells:
        raise CliUsageError(
            f"grid has {len(grid)} cells, --max-cells is {args.max_cells}"
        )

    fixed_trace = read_trace(args.trace) if args.trace else None
    traces = {}
    rows = []
    for policy, anchor_name, fraction, budget, seed in grid:
        if fixed_trace is not None:
            trace = fixed_trace
        elif seed in traces:
            trace = traces[seed]
        else:
            trace = traces.setdefault(seed, gen_synthetic(_spec_from(opts, seed)))
        cell_opts = dict(
            opts, policy=policy, kvcrush_fraction=fraction, budget=budget
        )
        decision = select_all(
            trace,
            _budget_from(cell_opts),
            policy=_policy_from(cell_opts),
            retain_fraction=opts["retain_fraction"],
            anchor=AnchorStrategy(anchor_name),
            rng_seed=seed,
        )
        report = evaluate(trace, decision)
        rows.append(
            (
                policy,
                anchor_name,
                fraction,
                budget,
                seed,
                report.attention_mass_retained,
                report.renormalized_output_error,
                report.compression_ratio,
                report.distance_ops,
            )
        )

    rows.sort(key=lambda r: (r[0], r[1], r[2], r[3], r[4]))
    lines = [
        "policy,anchor,kvcrush_fraction,budget,seed,"
        "attention_mass_retained,renormalized_output_error,"
        "compression_ratio,distance_ops"
    ]
    for r in rows:
        lines.append(
            f"{r[0]},{r[1]},{r[2]:g},{r[3]},{r[4]},"
            f"{r[5]:.9f},{r[6]:.9f},{r[7]:.9f},{r[8]}"
        )
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
        print(f"wrote {args.out}: {len(rows)} rows")
    else:
        print(text, end="")
    return 0


def cmd_mem(args):
    header = TraceHeader(
        model_name="cli",
        num_layers=args.layers,
        num_heads=args.heads,
        head_dim=args.head_dim,
        seq_len=args.seq_len,
        precision=args.precision,
    )
    total = kv_memory_bytes(header, args.batch)
    print(f"kv_cache_bytes={total}")
    print(f"kv_cache_gib={total / 2**30:.3f}")
    if args.layers > 1 and args.show_pyramid:
        sched = pyramid_budgets(args.seq_len, args.layers, args.taper)
        print("pyramid_budgets=" + ",".join(str(int(b)) for b in sched))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="kvcrush",
        description="Trace-driven KV cache compression toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen", help="generate a synthetic trace")
    _add_options(p_gen, _GEN_OPTS)
    p_gen.add_argument("--seed", type=int, default=None, help="generator seed")
    p_gen.add_argument("--config", default=None, help="TOML config file")
    p_gen.add_argument("-o", "--out", required=True, help="output trace path")
    p_gen.set_defaults(fn=cmd_gen)

    p_sel = sub.add_parser("select", help="compute an eviction decision")
    _add_options(p_sel, _SELECT_OPTS)
    p_sel.add_argument("--seed", type=int, default=None, help="anchor rng seed")
    p_sel.add_argument("--config", default=None, help="TOML config file")
    p_sel.add_argument("--trace", required=True, help="input trace path")
    p_sel.add_argument("--out", required=True, help="output decision JSON path")
    p_sel.set_defaults(fn=cmd_select)

    p_eval = sub.add_parser("eval", help="score a decision against its trace")
    p_eval.add_argument("--trace", required=True, help="input trace path")
    p_eval.add_argument("--decision", required=True, help="decision JSON path")
    p_eval.add_argument("--out", default=None, help="output path (default stdout)")
    p_eval.add_argument(
        "--csv", action="store_true", help="emit per-layer CSV instead of JSON"
    )
    p_eval.set_defaults(fn=cmd_eval)

    p_sweep = sub.add_parser("sweep", help="grid of configs to a tidy CSV")
    _add_options(p_sweep, _GEN_OPTS + _SELECT_OPTS)
    p_sweep.add_argument("--config", default=None, help="TOML config file")
    p_sweep.add_argument("--trace", default=None, help="fixed input trace (else synthetic per seed)")
    p_sweep.add_argument("--policies", default="h2o", help="comma-separated policies")
    p_sweep.add_argument("--anchors", default="random", help="comma-separated anchors")
    p_sweep.add_argument("--fractions", default="0.25", help="comma-separated kvcrush fractions")
    p_sweep.add_argument("--budgets", default="256", help="comma-separated budgets")
    p_sweep.add_argument("--seeds", default="0", help="comma-separated seeds")
    p_sweep.add_argument("--max-cells", type=int, default=512, help="refuse larger grids")
    p_sweep.add_argument("--out", default=None, help="output CSV path (default stdout)")
    p_sweep.set_defaults(fn=cmd_sweep)

    p_mem = sub.add_parser("mem", help="KV cache size for a model shape")
    p_mem.add_argument("--layers", type=int, required=True)
    p_mem.add_argument("--heads", type=int, required=True)
    p_mem.add_argument("--head-dim", type=int, required=True)
    p_mem.add_argument("--seq-len", type=int, required=True)
    p_mem.add_argument("--precision", type=int, default=2, help="bytes per element")
    p_mem.add_argument("--batch", type=int, default=1)
    p_mem.add_argument("--show-pyramid", action="store_true",
                       help="also print a pyramid budget schedule over seq-len")
    p_mem.add_argument("--taper", type=float, default=0.5)
    p_mem.set_defaults(fn=cmd_mem)
    return parser


# Errors that mean the command line / config itself is inconsistent, as
# opposed to an operation failing on valid inputs.
_USAGE_ERRORS = (CliUsageError, InvalidSpec, InvalidFraction, ShapeMismatch, ValueError)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except _USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except KVCrushError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
