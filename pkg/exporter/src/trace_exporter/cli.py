"""Command line entry point.

    trace-export export --model <dir-or-id> --prompt-file <ids.txt> --out <trace>

The prompt file holds whitespace-separated token ids. Exit codes: 0 on
success, 1 when the model cannot be loaded or the file cannot be
written, 2 when the request itself is inconsistent (unparseable prompt,
prompt longer than the model's context, bad precision).
"""

import argparse
import sys

from .errors import ContextOverflow, ExporterError
from .export import ExportJob, export_trace


def read_prompt_file(path):
    try:
        with open(path) as f:
            text = f.read()
    except OSError as exc:
        raise ValueError(f"cannot read prompt file {path}: {exc}") from exc
    try:
        ids = tuple(int(tok) for tok in text.split())
    except ValueError as exc:
        raise ValueError(f"prompt file {path} must contain integers: {exc}") from exc
    return ids


def cmd_export(args):
    job = ExportJob(
        model=args.model,
        prompt=read_prompt_file(args.prompt_file),
        out=args.out,
        precision=args.precision,
        model_name=args.name,
    )
    summary = export_trace(job)
    print(
        f"wrote {summary['out']}: layers={summary['num_layers']} "
        f"heads={summary['num_heads']} head_dim={summary['head_dim']} "
        f"seq_len={summary['seq_len']} ({summary['bytes']} bytes)"
    )
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="trace-export",
        description="Record GPT-2 style attention inputs as trace files",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("export", help="run a prompt and write its trace")
    p.add_argument("--model", required=True, help="model directory or hub id")
    p.add_argument("--prompt-file", required=True,
                   help="text file of whitespace-separated token ids")
    p.add_argument("--out", required=True, help="output trace path")
    p.add_argument("--name", default="", help="model name stored in the header")
    p.add_argument("--precision", type=int, default=2,
                   help="modeled bytes per cache element (2 or 4)")
    p.set_defaults(fn=cmd_export)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, ContextOverflow) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ExporterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
