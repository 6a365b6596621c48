"""Loss kernels: values plus analytical gradients in the feature batches.

Every loss takes unit-norm student feature batches z_img, z_txt (B x d)
and returns the scalar together with dL/dz_img and dL/dz_txt; the trainer
backpropagates those through the refinement heads. Teacher features are
constants (stop-gradient): no gradient ever flows into them.

Conventions, fixed package-wide:
  - similarity rows are softmax((za . zb^T) / tau) with per-row max
    subtraction; log-probabilities come straight from shifted logits;
  - KL is target * log(target / student) with 0 log 0 = 0, averaged
    over rows;
  - temperature tau defaults to 0.01 (inverse of the converged CLIP
    logit scale 100) and is shared by student and teacher, frozen.

Inputs are treated as free variables: norms are not re-checked here, so
finite-difference probes that perturb single coordinates stay valid.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from . import kernels
from .errors import ConfigError, ShapeMismatchError


class LossMode(str, Enum):
    ALIGN = "align"
    RAFA = "rafa"
    CONTRASTIVE = "contrastive"
    SELF_KD = "self_kd"
    HYCD = "hycd"
    HYCD_PLUS_ALIGN = "hycd_plus_align"
    CLIP_REFINE = "clip_refine"


@dataclass(frozen=True)
class LossConfig:
    """Loss settings; ``rafa_prenorm`` applies the reference-alignment term
    to the pre-normalization residual output instead of the unit feature
    (the normalized form is the default reading)."""

    tau: float = 0.01
    alpha: float = 0.5
    lambda_rafa: float = 1.0
    lambda_hycd: float = 1.0
    mode: LossMode = LossMode.CLIP_REFINE
    rafa_prenorm: bool = False

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.lambda_rafa < 0 or self.lambda_hycd < 0:
            raise ConfigError("loss weights must be nonnegative")


@dataclass
class LossResult:
    """Scalar plus gradients in the student features; the ``grad_pre_*``
    slots are populated only by the pre-normalization alignment path and
    enter the backward pass below the output normalization."""

    value: float
    grad_img: np.ndarray
    grad_txt: np.ndarray
    grad_pre_img: np.ndarray | None = None
    grad_pre_txt: np.ndarray | None = None


def _as_batch(x: np.ndarray, name: str) -> np.ndarray:
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeMismatchError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def _check_same_shape(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"{what}: {a.shape} vs {b.shape}")


def align_loss(z_img: np.ndarray, z_txt: np.ndarray) -> LossResult:
    """Mean squared distance between matched pairs (the naive gap loss)."""
    z_img = _as_batch(z_img, "z_img")
    z_txt = _as_batch(z_txt, "z_txt")
    _check_same_shape(z_img, z_txt, "align_loss features")
    b = z_img.shape[0]
    diff = z_img - z_txt
    value = float(np.einsum("ij,ij->", diff, diff) / b)
    grad = (2.0 / b) * diff
    return LossResult(value, grad, -grad)


def rafa_loss(z_img: np.ndarray, z_txt: np.ndarray, z_ref: np.ndarray) -> LossResult:
    """Mean half-sum of squared distances to the shared reference vectors.

    Row i of z_ref is one draw shared by pair i for this step.
    """
    z_img = _as_batch(z_img, "z_img")
    z_txt = _as_batch(z_txt, "z_txt")
    z_ref = _as_batch(z_ref, "z_ref")
    _check_same_shape(z_img, z_txt, "rafa_loss features")
    _check_same_shape(z_img, z_ref, "rafa_loss references")
    b = z_img.shape[0]
    d_img = z_img - z_ref
    d_txt = z_txt - z_ref
    value = float((np.einsum("ij,ij->", d_img, d_img) + np.einsum("ij,ij->", d_txt, d_txt)) / (2.0 * b))
    return LossResult(value, d_img / b, d_txt / b)


def similarity_softmax(za: np.ndarray, zb: np.ndarray, tau: float) -> np.ndarray:
    """Row-stochastic batch similarity distribution: softmax((za . zb^T)/tau)."""
    if not tau > 0:
        raise ConfigError(f"tau must be positive, got {tau}")
    za = _as_batch(za, "za")
    zb = _as_batch(zb, "zb")
    if za.shape[1] != zb.shape[1]:
        raise ShapeMismatchError(f"feature dims differ: {za.shape[1]} vs {zb.shape[1]}")
    return kernels.row_softmax(np.ascontiguousarray(za @ zb.T / tau))


def hybrid_teacher(q: np.ndarray, alpha: float) -> np.ndarray:
    """Alpha-blend of the identity pairing with the teacher rows.

    q_hat[i, j] = alpha * [i == j] + (1 - alpha) * q[i, j]; preserves
    row-stochasticity for any alpha in [0, 1].
    """
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")
    q = _as_batch(q, "q")
    if q.shape[0] != q.shape[1]:
        raise ShapeMismatchError(f"batch distribution must be square, got {q.shape}")
    out = (1.0 - alpha) * q
    idx = np.arange(q.shape[0])
    out[idx, idx] += alpha
    return out


def kd_kl(target: np.ndarray, student: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean row-KL(target || student) over explicit distributions.

    Returns the scalar and its gradient in the student entries,
    -(1/B) target/student. Zero target entries contribute exactly zero.
    """
    target = _as_batch(target, "target")
    student = _as_batch(student, "student")
    _check_same_shape(target, student, "kd_kl distributions")
    b = target.shape[0]
    mask = target > 0.0
    safe_t = np.where(mask, target, 1.0)
    safe_s = np.where(mask, student, 1.0)
    value = float(np.sum(np.where(mask, target * np.log(safe_t / safe_s), 0.0)) / b)
    grad = np.where(mask, -target / np.where(student == 0.0, 1.0, student), 0.0) / b
    return value, grad


def _kl_pair(
    z_img: np.ndarray,
    z_txt: np.ndarray,
    target_it: np.ndarray,
    target_ti: np.ndarray,
    tau: float,
) -> LossResult:
    """Symmetric mean row-KL of the student similarity rows against fixed targets.

    Shared backbone of the distillation-style losses: value is
    0.5 * (KL over image->text rows + KL over text->image rows), and the
    chain rule through logits S = (z . z^T)/tau gives the feature gradients.
    """
    s_it = np.ascontiguousarray(z_img @ z_txt.T / tau)
    s_ti = np.ascontiguousarray(z_txt @ z_img.T / tau)
    v_it, g_it = kernels.kl_grad_from_logits(s_it, target_it)
    v_ti, g_ti = kernels.kl_grad_from_logits(s_ti, target_ti)
    scale = 0.5 / tau
    grad_img = scale * (g_it @ z_txt + g_ti.T @ z_txt)
    grad_txt = scale * (g_it.T @ z_img + g_ti @ z_img)
    return LossResult(0.5 * (v_it + v_ti), grad_img, grad_txt)


def hycd_loss(
    z_img: np.ndarray,
    z_txt: np.ndarray,
    teacher_img: np.ndarray,
    teacher_txt: np.ndarray,
    cfg: LossConfig,
) -> LossResult:
    """Hybrid contrastive-distillation: KL against alpha-blended teacher rows."""
    z_img = _as_batch(z_img, "z_img")
    z_txt = _as_batch(z_txt, "z_txt")
    teacher_img = _as_batch(teacher_img, "teacher_img")
    teacher_txt = _as_batch(teacher_txt, "teacher_txt")
    _check_same_shape(z_img, z_txt, "hycd_loss student features")
    _check_same_shape(teacher_img, z_img, "hycd_loss teacher vs student")
    _check_same_shape(teacher_txt, z_txt, "hycd_loss teacher vs student")
    q_it = similarity_softmax(teacher_img, teacher_txt, cfg.tau)
    q_ti = similarity_softmax(teacher_txt, teacher_img, cfg.tau)
    target_it = hybrid_teacher(q_it, cfg.alpha)
    target_ti = hybrid_teacher(q_ti, cfg.alpha)
    return _kl_pair(z_img, z_txt, target_it, target_ti, cfg.tau)


def self_kd_loss(
    z_img: np.ndarray,
    z_txt: np.ndarray,
    teacher_img: np.ndarray,
    teacher_txt: np.ndarray,
    cfg: LossConfig,
) -> LossResult:
    """Pure distillation from the frozen teacher: hycd_loss with alpha forced to 0."""
    return hycd_loss(z_img, z_txt, teacher_img, teacher_txt, replace(cfg, alpha=0.0))


def contrastive_loss(z_img: np.ndarray, z_txt: np.ndarray, tau: float) -> LossResult:
    """Symmetric in-batch InfoNCE: cross-entropy with the matched pair as positive."""
    z_img = _as_batch(z_img, "z_img")
    z_txt = _as_batch(z_txt, "z_txt")
    _check_same_shape(z_img, z_txt, "contrastive_loss features")
    if not tau > 0:
        raise ConfigError(f"tau must be positive, got {tau}")
    eye = np.eye(z_img.shape[0])
    return _kl_pair(z_img, z_txt, eye, eye, tau)


def clip_refine_objective(
    z_img: np.ndarray,
    z_txt: np.ndarray,
    teacher_img: np.ndarray,
    teacher_txt: np.ndarray,
    z_ref: np.ndarray,
    cfg: LossConfig,
) -> LossResult:
    """Weighted sum lambda_rafa * reference alignment + lambda_hycd * hybrid distillation."""
    rafa = rafa_loss(z_img, z_txt, z_ref)
    hycd = hycd_loss(z_img, z_txt, teacher_img, teacher_txt, cfg)
    return LossResult(
        cfg.lambda_rafa * rafa.value + cfg.lambda_hycd * hycd.value,
        cfg.lambda_rafa * rafa.grad_img + cfg.lambda_hycd * hycd.grad_img,
        cfg.lambda_rafa * rafa.grad_txt + cfg.lambda_hycd * hycd.grad_txt,
    )


def needs_reference(mode: LossMode) -> bool:
    return mode in (LossMode.RAFA, LossMode.CLIP_REFINE)


def batch_loss(
    z_img: np.ndarray,
    z_txt: np.ndarray,
    teacher_img: np.ndarray,
    teacher_txt: np.ndarray,
    z_ref: np.ndarray | None,
    cfg: LossConfig,
    pre_img: np.ndarray | None = None,
    pre_txt: np.ndarray | None = None,
) -> tuple[LossResult, dict[str, float]]:
    """Dispatch on cfg.mode; returns the total and a per-term breakdown.

    The breakdown always carries the keys rafa / hycd / align /
    contrastive / total (zeros for unused terms) so per-step records have
    a fixed schema. With cfg.rafa_prenorm the reference term is evaluated
    on (pre_img, pre_txt) and its gradients come back in the ``grad_pre_*``
    slots.
    """
    if needs_reference(cfg.mode) and z_ref is None:
        raise ConfigError(f"mode {cfg.mode.value} needs reference vectors")

    def reference_term() -> LossResult:
        if not cfg.rafa_prenorm:
            return rafa_loss(z_img, z_txt, z_ref)
        if pre_img is None or pre_txt is None:
            raise ConfigError("rafa_prenorm needs the pre-normalization features")
        pre = rafa_loss(pre_img, pre_txt, z_ref)
        zero = np.zeros_like(z_img)
        return LossResult(pre.value, zero, zero,
                          grad_pre_img=pre.grad_img, grad_pre_txt=pre.grad_txt)

    parts = {"rafa": 0.0, "hycd": 0.0, "align": 0.0, "contrastive": 0.0}
    if cfg.mode == LossMode.ALIGN:
        total = align_loss(z_img, z_txt)
        parts["align"] = total.value
    elif cfg.mode == LossMode.RAFA:
        total = reference_term()
        parts["rafa"] = total.value
    elif cfg.mode == LossMode.CONTRASTIVE:
        total = contrastive_loss(z_img, z_txt, cfg.tau)
        parts["contrastive"] = total.value
    elif cfg.mode == LossMode.SELF_KD:
        total = self_kd_loss(z_img, z_txt, teacher_img, teacher_txt, cfg)
        parts["hycd"] = total.value
    elif cfg.mode == LossMode.HYCD:
        total = hycd_loss(z_img, z_txt, teacher_img, teacher_txt, cfg)
        parts["hycd"] = total.value
    elif cfg.mode == LossMode.HYCD_PLUS_ALIGN:
        hycd = hycd_loss(z_img, z_txt, teacher_img, teacher_txt, cfg)
        align = align_loss(z_img, z_txt)
        parts["hycd"] = hycd.value
        parts["align"] = align.value
        total = LossResult(
            hycd.value + align.value,
            hycd.grad_img + align.grad_img,
            hycd.grad_txt + align.grad_txt,
        )
    elif cfg.mode == LossMode.CLIP_REFINE:
        rafa = reference_term()
        hycd = hycd_loss(z_img, z_txt, teacher_img, teacher_txt, cfg)
        parts["rafa"] = rafa.value
        parts["hycd"] = hycd.value
        total = LossResult(
            cfg.lambda_rafa * rafa.value + cfg.lambda_hycd * hycd.value,
            cfg.lambda_rafa * rafa.grad_img + cfg.lambda_hycd * hycd.grad_img,
            cfg.lambda_rafa * rafa.grad_txt + cfg.lambda_hycd * hycd.grad_txt,
            grad_pre_img=None if rafa.grad_pre_img is None else cfg.lambda_rafa * rafa.grad_pre_img,
            grad_pre_txt=None if rafa.grad_pre_txt is None else cfg.lambda_rafa * rafa.grad_pre_txt,
        )
    else:
        raise ConfigError(f"unknown loss mode {cfg.mode!r}")
    parts["total"] = total.value
    return total, parts
