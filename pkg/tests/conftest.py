import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def max_rel_err(oracle, computed, floor=1e-6):
    """Worst elementwise relative disagreement, floored for near-zero pairs."""
    oracle = np.asarray(oracle, dtype=np.float64)
    computed = np.asarray(computed, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(oracle), np.abs(computed)), floor)
    return float(np.max(np.abs(oracle - computed) / scale))
