"""Shared test helpers: random batches and finite-difference oracles."""

from __future__ import annotations

import numpy as np
import pytest


def unit_batch(rng: np.random.Generator, b: int, d: int) -> np.ndarray:
    x = rng.standard_normal((b, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def fd_gradient(fn, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function in every entry of x."""
    g = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + step
        f_plus = fn()
        x[idx] = orig - step
        f_minus = fn()
        x[idx] = orig
        g[idx] = (f_plus - f_minus) / (2.0 * step)
    return g


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-4) -> float:
    """Worst per-entry relative error, with an absolute floor for near-zero
    entries (gradcheck-style rtol/atol mix)."""
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240817)
