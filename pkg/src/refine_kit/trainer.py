"""End-to-end training loop over cached embeddings.

Per batch: student forward through both heads, teacher lookup, a fresh
reference draw from the prior, loss dispatch, reverse accumulation into
head parameters, and one optimizer step. Two optimizer modes:

  PLAIN_SGD  theta <- theta - (eta / 2) * grad   (per head, the listing's
             half step size)
  ADAMW      decoupled weight decay with bias-corrected moments, step
             size eta on both heads jointly

The last partial batch is trained, not dropped. Every recorded loss must
be finite, otherwise training aborts with the offending step index.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ConfigError, DimensionMismatchError, NonFiniteLossError
from .losses import LossConfig, LossMode, batch_loss, needs_reference
from .model import RefineHead, TeacherBank, backward, forward_with_cache
from .priors import PriorSpec, make_rng, resolve, sample
from .store import PairedDataset


class OptimizerKind(str, Enum):
    ADAMW = "adamw"
    PLAIN_SGD = "plain_sgd"


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 512
    lr: float = 1.0e-6
    epochs: int = 1
    optimizer: OptimizerKind = OptimizerKind.ADAMW
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    deterministic: bool = True
    loss: LossConfig = field(default_factory=LossConfig)
    prior: PriorSpec = field(default_factory=PriorSpec)

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")


@dataclass
class StepRecord:
    step: int
    epoch: int
    rafa: float
    hycd: float
    align: float
    contrastive: float
    total: float


@dataclass
class TrainReport:
    seed: int
    steps: list[StepRecord]
    wall_time_s: float
    image_head_crc32: int
    text_head_crc32: int

    def to_rows(self) -> list[dict]:
        """JSON-lines payload, one object per optimization step."""
        return [
            {
                "step": r.step,
                "epoch": r.epoch,
                "loss_rafa": r.rafa,
                "loss_hycd": r.hycd,
                "loss_align": r.align,
                "loss_contrastive": r.contrastive,
                "loss_total": r.total,
            }
            for r in self.steps
        ]


def shuffle_batches(n: int, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    """Seeded permutation of 0..n-1 split into consecutive chunks.

    Each epoch gets its own permutation; every index appears exactly once
    per epoch and the trailing partial chunk is kept.
    """
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}")
    rng = make_rng(seed, "batch-order", epoch)
    perm = rng.permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]


@dataclass
class AdamWState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0

    @classmethod
    def for_params(cls, params: list[np.ndarray]) -> "AdamWState":
        return cls(m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params])


def adamw_step(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    state: AdamWState,
    lr: float,
    weight_decay: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> None:
    """One decoupled-weight-decay update, in place, with bias correction."""
    if len(params) != len(grads):
        raise ConfigError("params and grads must align")
    b1, b2 = betas
    state.step += 1
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        denom = np.sqrt(v / c2) + eps
        p -= lr * (m / c1) / denom
        if weight_decay:
            p -= lr * weight_decay * p


def train(
    dataset: PairedDataset,
    heads: tuple[RefineHead, RefineHead],
    cfg: TrainConfig,
) -> tuple[tuple[RefineHead, RefineHead], TrainReport]:
    """Run the post-pre-training loop and return trained heads plus a report.

    Heads are copied: the inputs stay untouched. In deterministic mode the
    report's wall time is recorded as 0.0 so identical (config, seed) runs
    serialize bitwise-identically.
    """
    head_img, head_txt = heads[0].copy(), heads[1].copy()
    d = dataset.dim
    for head, name in ((head_img, "image"), (head_txt, "text")):
        if head.dim != d:
            raise DimensionMismatchError(f"{name} head dim {head.dim} != dataset dim {d}")

    teacher = TeacherBank.from_dataset(dataset)
    prior = resolve(cfg.prior, teacher.img, teacher.txt)
    prior_rng = make_rng(cfg.seed, "prior-draws")

    # An identically-zero objective has nothing to optimize; leave the
    # heads untouched (decoupled weight decay would otherwise drift them).
    inert = (
        cfg.loss.mode == LossMode.CLIP_REFINE
        and cfg.loss.lambda_rafa == 0.0
        and cfg.loss.lambda_hycd == 0.0
    )

    params = head_img.params() + head_txt.params()
    adamw = AdamWState.for_params(params)
    n = dataset.count
    records: list[StepRecord] = []
    started = time.perf_counter()
    step = 0
    for epoch in range(cfg.epochs):
        for idx in shuffle_batches(n, cfg.batch_size, cfg.seed, epoch):
            b = len(idx)
            raw_img = dataset.image_table.data[idx]
            raw_txt = dataset.text_table.data[idx]
            z_img, cache_img = forward_with_cache(head_img, raw_img)
            z_txt, cache_txt = forward_with_cache(head_txt, raw_txt)
            t_img = teacher.img[idx]
            t_txt = teacher.txt[idx]
            z_ref = sample(prior, b, d, prior_rng) if needs_reference(cfg.loss.mode) else None
            pre_img = pre_txt = None
            if cfg.loss.rafa_prenorm and needs_reference(cfg.loss.mode):
                pre_img = z_img * cache_img.out_norm[:, None]
                pre_txt = z_txt * cache_txt.out_norm[:, None]

            result, parts = batch_loss(
                z_img, z_txt, t_img, t_txt, z_ref, cfg.loss, pre_img=pre_img, pre_txt=pre_txt
            )
            if not np.isfinite(result.value):
                raise NonFiniteLossError(step, f"total loss = {result.value}")
            records.append(
                StepRecord(
                    step=step,
                    epoch=epoch,
                    rafa=parts["rafa"],
                    hycd=parts["hycd"],
                    align=parts["align"],
                    contrastive=parts["contrastive"],
                    total=parts["total"],
                )
            )

            if not inert:
                g_img = backward(head_img, cache_img, result.grad_img, result.grad_pre_img)
                g_txt = backward(head_txt, cache_txt, result.grad_txt, result.grad_pre_txt)
                grads = g_img.params() + g_txt.params()
                if any(not np.isfinite(g).all() for g in grads):
                    raise NonFiniteLossError(step, "non-finite gradient")
                if cfg.optimizer == OptimizerKind.PLAIN_SGD:
                    for p, g in zip(params, grads):
                        p -= (cfg.lr / 2.0) * g
                else:
                    adamw_step(params, grads, adamw, cfg.lr, cfg.weight_decay, cfg.betas, cfg.eps)
            step += 1

    elapsed = 0.0 if cfg.deterministic else time.perf_counter() - started
    report = TrainReport(
        seed=cfg.seed,
        steps=records,
        wall_time_s=elapsed,
        image_head_crc32=head_img.checksum(),
        text_head_crc32=head_txt.checksum(),
    )
    return (head_img, head_txt), report
