"""Feature-space diagnostics and zero-shot evaluation.

All scores operate on unit-norm feature batches (student outputs, or the
teacher bank for the frozen baseline):

  modality gap   squared distance between the modality mean vectors
  alignment      mean squared distance between matched pairs
  uniformity     (1 / 2N) * sum over all ordered pairs (self included) of
                 exp(-2 ||f1 - f2||^2), F = image rows plus text rows
  recall@k       cosine ranking, ties broken toward the lower gallery index
  zero-shot      argmax cosine against class prompts (an image-to-text
                 retrieval task), ties toward the lower class index

The uniformity double sum keeps self-pairs and both orderings; the
convention is fixed here and affects absolute values only, not method
orderings.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import (
    ConvergenceFailureError,
    EmptySetError,
    InsufficientDataError,
    LabelMismatchError,
    ShapeMismatchError,
)
from .priors import make_rng
from .store import ClassPromptTable


@dataclass
class MetricsReport:
    modality_gap: float
    alignment: float
    uniformity: float
    n_test: int
    notes: str = ""

    def to_json(self) -> dict:
        return {
            "modality_gap": self.modality_gap,
            "alignment": self.alignment,
            "uniformity": self.uniformity,
            "n_test": self.n_test,
            "notes": self.notes,
        }


@dataclass
class RetrievalReport:
    direction: str  # "T2I" or "I2T"
    recall_at: dict[int, float]

    def to_json(self) -> dict:
        return {
            "direction": self.direction,
            "recall_at": {str(k): v for k, v in sorted(self.recall_at.items())},
        }


def _feats(x: np.ndarray, name: str) -> np.ndarray:
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise EmptySetError(f"{name} must be a nonempty 2-D batch, got shape {arr.shape}")
    return arr


def modality_gap(img_feats: np.ndarray, txt_feats: np.ndarray) -> float:
    """Squared L2 distance between the two modality means (not re-normalized)."""
    img = _feats(img_feats, "img_feats")
    txt = _feats(txt_feats, "txt_feats")
    if img.shape[1] != txt.shape[1]:
        raise ShapeMismatchError(f"feature dims differ: {img.shape[1]} vs {txt.shape[1]}")
    diff = img.mean(axis=0) - txt.mean(axis=0)
    return float(diff @ diff)


def alignment_score(img_feats: np.ndarray, txt_feats: np.ndarray) -> float:
    """Mean squared distance between matched feature pairs."""
    img = _feats(img_feats, "img_feats")
    txt = _feats(txt_feats, "txt_feats")
    if img.shape != txt.shape:
        raise ShapeMismatchError(f"paired batches differ: {img.shape} vs {txt.shape}")
    diff = img - txt
    return float(np.einsum("ij,ij->", diff, diff) / img.shape[0])


def uniformity_score(img_feats: np.ndarray, txt_feats: np.ndarray) -> float:
    """RBF-kernel average over the pooled feature set (lower = more uniform)."""
    img = _feats(img_feats, "img_feats")
    txt = _feats(txt_feats, "txt_feats")
    if img.shape != txt.shape:
        raise ShapeMismatchError(f"paired batches differ: {img.shape} vs {txt.shape}")
    pooled = np.ascontiguousarray(np.vstack([img, txt]))
    n_test = img.shape[0]
    return float(kernels.rbf_pair_sum(pooled) / (2.0 * n_test))


def recall_at_k(
    query_feats: np.ndarray,
    gallery_feats: np.ndarray,
    truth: np.ndarray,
    ks: tuple[int, ...] = (1, 5, 10),
    direction: str = "T2I",
) -> RetrievalReport:
    """Fraction of queries whose true match ranks in the cosine top-k.

    ``truth[i]`` is the gallery row holding query i's match. A gallery
    item ties with the true match only counts against it when its index
    is lower.
    """
    q = _feats(query_feats, "query_feats")
    g = _feats(gallery_feats, "gallery_feats")
    if q.shape[1] != g.shape[1]:
        raise ShapeMismatchError(f"feature dims differ: {q.shape[1]} vs {g.shape[1]}")
    truth = np.asarray(truth, dtype=np.int64)
    if truth.shape != (q.shape[0],):
        raise ShapeMismatchError(f"truth must have shape ({q.shape[0]},), got {truth.shape}")
    if truth.min() < 0 or truth.max() >= g.shape[0]:
        raise ShapeMismatchError("truth indexes outside the gallery")
    scores = q @ g.T
    true_scores = scores[np.arange(q.shape[0]), truth]
    better = (scores > true_scores[:, None]).sum(axis=1)
    cols = np.arange(g.shape[0])
    tie_ahead = ((scores == true_scores[:, None]) & (cols[None, :] < truth[:, None])).sum(axis=1)
    rank = 1 + better + tie_ahead
    return RetrievalReport(
        direction=direction,
        recall_at={int(k): float(np.mean(rank <= k)) for k in ks},
    )


def zeroshot_classify(
    img_feats: np.ndarray,
    prompts: ClassPromptTable,
    labels: list[str],
) -> float:
    """Top-1 accuracy of argmax-cosine classification against class prompts."""
    img = _feats(img_feats, "img_feats")
    prompt_feats = np.asarray(prompts.table.data, dtype=np.float64)
    if img.shape[1] != prompt_feats.shape[1]:
        raise ShapeMismatchError(
            f"feature dims differ: {img.shape[1]} vs {prompt_feats.shape[1]}"
        )
    if len(labels) != img.shape[0]:
        raise LabelMismatchError(f"{len(labels)} labels for {img.shape[0]} images")
    class_index = {label: i for i, label in enumerate(prompts.labels)}
    unknown = sorted(set(labels) - set(class_index))
    if unknown:
        raise LabelMismatchError(f"labels name unknown classes: {unknown[:8]}")
    truth = np.array([class_index[l] for l in labels], dtype=np.int64)
    pred = np.argmax(img @ prompt_feats.T, axis=1)  # argmax takes the lowest index on ties
    return float(np.mean(pred == truth))


def _power_iteration(
    cov: np.ndarray,
    component: int,
    tol: float,
    max_iter: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, float]:
    v = rng.standard_normal(cov.shape[0])
    v /= np.linalg.norm(v)
    delta = np.inf
    for _ in range(max_iter):
        w = cov @ v
        norm = np.linalg.norm(w)
        if norm < 1e-300:
            # Matrix annihilates v: remaining variance is zero.
            return v, 0.0
        w /= norm
        delta = float(np.linalg.norm(w - v))
        v = w
        if delta < tol:
            return v, float(v @ cov @ v)
    raise ConvergenceFailureError(component, max_iter, delta)


def pca_project(
    feats: np.ndarray,
    n_components: int = 2,
    tol: float = 1e-9,
    max_iter: int = 1000,
) -> tuple[np.ndarray, np.ndarray]:
    """Top principal components by power iteration with deflation.

    Returns (coordinates, explained variance ratios). Components are
    sign-fixed so their first nonzero coordinate is positive; start
    vectors come from a fixed internal stream, so results are
    deterministic.
    """
    x = np.ascontiguousarray(feats, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 3:
        raise InsufficientDataError(f"PCA needs at least 3 rows, got shape {x.shape}")
    centered = x - x.mean(axis=0)
    cov = (centered.T @ centered) / x.shape[0]
    total_var = float(np.trace(cov))
    rng = make_rng(0x9CA0, "pca-start")
    components = []
    variances = []
    deflated = cov.copy()
    for c in range(n_components):
        v, lam = _power_iteration(deflated, c, tol, max_iter, rng)
        nonzero = np.nonzero(np.abs(v) > 1e-12)[0]
        if nonzero.size and v[nonzero[0]] < 0:
            v = -v
        components.append(v)
        variances.append(max(lam, 0.0))
        deflated = deflated - lam * np.outer(v, v)
    basis = np.stack(components, axis=1)
    coords = centered @ basis
    ratios = np.array(variances) / total_var if total_var > 0 else np.zeros(n_components)
    return coords, ratios
