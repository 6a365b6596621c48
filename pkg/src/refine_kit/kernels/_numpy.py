"""Pure numpy implementation of the hot kernels.

Reference backend: the compiled extension in ``_hot.pyx`` mirrors these
functions one-to-one. Both operate on C-contiguous float64 arrays and
reduce in fixed index order, so each backend is bitwise deterministic
run-to-run.
"""

from __future__ import annotations

import numpy as np

BACKEND = "numpy"


def row_softmax(scores: np.ndarray) -> np.ndarray:
    """Row-wise softmax with per-row max subtraction."""
    shifted = scores - scores.max(axis=1, keepdims=True)
    np.exp(shifted, out=shifted)
    shifted /= shifted.sum(axis=1, keepdims=True)
    return shifted


def kl_grad_from_logits(scores: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean row-KL(target || softmax(scores)) and its gradient in the logits.

    Returns ``(value, grad)`` with
      value = (1/B) sum_ij target_ij * (log target_ij - log_softmax(scores)_ij)
      grad  = d value / d scores = (1/B) (softmax(scores) - target)

    Log-probabilities come from the shifted logits directly (never a log of
    the softmax output); zero target entries contribute exactly zero.
    """
    b = scores.shape[0]
    shifted = scores - scores.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - lse
    safe_t = np.where(target > 0.0, target, 1.0)
    value = float(np.sum(np.where(target > 0.0, target * (np.log(safe_t) - log_p), 0.0)) / b)
    grad = (np.exp(log_p) - target) / b
    return value, grad


def rbf_pair_sum(feats: np.ndarray) -> float:
    """Sum of exp(-2 ||f_a - f_b||^2) over all ordered pairs, self-pairs included."""
    sq = np.einsum("ij,ij->i", feats, feats)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (feats @ feats.T)
    np.maximum(d2, 0.0, out=d2)
    d2 *= -2.0
    np.exp(d2, out=d2)
    return float(d2.sum())
