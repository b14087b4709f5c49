import sys
from pathlib import Path

import numpy as np
import pytest

# Make the naive reference importable as a plain module.
sys.path.insert(0, str(Path(__file__).parent))

from kvcrush.trace import SyntheticSpec, gen_synthetic


@pytest.fixture(scope="session")
def small_trace():
    """64 tokens, 2 layers, 4 heads: fast enough for everything."""
    return gen_synthetic(
        SyntheticSpec(
            seq_len=64,
            num_layers=2,
            num_heads=4,
            head_dim=8,
            num_clusters=4,
            cluster_spread=0.05,
            rng_seed=11,
        )
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
