"""Shared-prior samplers for the random reference vectors.

The menu: standard Gaussian N(0, I), uniform U(0, 1), moment-matched
Gaussians N(mu, diag(sigma^2)) fitted on normalized teacher features
(image-only / text-only / pooled), and scaled Gaussians N(0, beta I).
References are redrawn every optimization step.

All randomness in the package flows through ``make_rng``: Philox4x64-10,
a counter-based generator keyed by (seed, stream tag), so one seed gives
one reproducible stream per purpose within this implementation.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import (
    ConfigError,
    InsufficientDataError,
    MissingMomentsError,
    NegativeBetaError,
)


_MASK64 = 0xFFFFFFFFFFFFFFFF
_FOLD = 0x9E3779B97F4A7C15  # splitmix64 increment


def make_rng(seed: int, *streams: str | int) -> np.random.Generator:
    """Philox generator with a 128-bit key: (seed, folded stream tags)."""
    hi = 0
    for tag in streams:
        if isinstance(tag, str):
            tag = zlib.crc32(tag.encode("utf-8"))
        hi = (hi * _FOLD + int(tag) + 1) & _MASK64
    key = [np.uint64(seed & _MASK64), np.uint64(hi)]
    return np.random.Generator(np.random.Philox(key=key))


class PriorKind(str, Enum):
    STANDARD_GAUSSIAN = "standard_gaussian"
    UNIFORM_01 = "uniform_01"
    GAUSSIAN_MOMENTS = "gaussian_moments"
    SCALED_GAUSSIAN = "scaled_gaussian"


@dataclass(frozen=True)
class PriorSpec:
    """Which prior to draw reference vectors from.

    ``moments_source`` ('img' | 'txt' | 'all') asks the trainer to fit mu
    and sigma on the teacher features at train start; alternatively pass
    explicit vectors.
    """

    kind: PriorKind = PriorKind.STANDARD_GAUSSIAN
    mu: np.ndarray | None = None
    sigma: np.ndarray | None = None
    beta: float | None = None
    moments_source: str | None = None

    def __post_init__(self):
        if self.kind == PriorKind.SCALED_GAUSSIAN:
            if self.beta is None:
                raise ConfigError("scaled_gaussian prior requires beta")
            if self.beta < 0:
                raise NegativeBetaError(f"beta must be >= 0, got {self.beta}")
        if self.kind == PriorKind.GAUSSIAN_MOMENTS:
            if self.moments_source is None and (self.mu is None or self.sigma is None):
                raise MissingMomentsError(
                    "gaussian_moments prior requires mu and sigma (or a moments_source)"
                )
            if self.moments_source is not None and self.moments_source not in ("img", "txt", "all"):
                raise ConfigError(f"unknown moments_source {self.moments_source!r}")
        if self.mu is not None:
            object.__setattr__(self, "mu", np.asarray(self.mu, dtype=np.float64))
        if self.sigma is not None:
            sigma = np.asarray(self.sigma, dtype=np.float64)
            if (sigma < 0).any():
                raise ConfigError("sigma entries must be nonnegative")
            object.__setattr__(self, "sigma", sigma)

    def resolved(self) -> bool:
        if self.kind != PriorKind.GAUSSIAN_MOMENTS:
            return True
        return self.mu is not None and self.sigma is not None


def sample(spec: PriorSpec, batch: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """Draw a fresh (batch, dim) block of reference vectors."""
    if spec.kind == PriorKind.STANDARD_GAUSSIAN:
        return rng.standard_normal((batch, dim))
    if spec.kind == PriorKind.UNIFORM_01:
        return rng.random((batch, dim))
    if spec.kind == PriorKind.SCALED_GAUSSIAN:
        if spec.beta == 0.0:
            # N(0, 0 I) degenerates to a point mass at the origin.
            return np.zeros((batch, dim))
        return np.sqrt(spec.beta) * rng.standard_normal((batch, dim))
    if spec.kind == PriorKind.GAUSSIAN_MOMENTS:
        if spec.mu is None or spec.sigma is None:
            raise MissingMomentsError("moment prior not resolved: mu/sigma missing")
        if spec.mu.shape != (dim,) or spec.sigma.shape != (dim,):
            raise MissingMomentsError(
                f"moment vectors have dim {spec.mu.shape} / {spec.sigma.shape}, expected ({dim},)"
            )
        return spec.mu + spec.sigma * rng.standard_normal((batch, dim))
    raise ConfigError(f"unknown prior kind {spec.kind!r}")


def fit_moments(features, normalize: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Per-coordinate mean and population (1/N) standard deviation.

    Accepts one feature matrix / EmbeddingTable or a list to pool; rows
    are L2-normalized first unless ``normalize`` is False (references
    target the normalized feature scale).
    """
    if not isinstance(features, list):
        features = [features]
    blocks = [np.asarray(getattr(f, "data", f), dtype=np.float64) for f in features]
    stacked = np.vstack(blocks)
    if stacked.shape[0] < 2:
        raise InsufficientDataError(f"moment fitting needs >= 2 rows, got {stacked.shape[0]}")
    if normalize:
        norms = np.linalg.norm(stacked, axis=1, keepdims=True)
        stacked = stacked / np.where(norms < 1e-12, 1.0, norms)
    mu = stacked.mean(axis=0)
    var = np.maximum(np.mean(stacked * stacked, axis=0) - mu * mu, 0.0)
    return mu, np.sqrt(var)


def resolve(spec: PriorSpec, teacher_img: np.ndarray, teacher_txt: np.ndarray) -> PriorSpec:
    """Fill in moment vectors from teacher features when requested."""
    if spec.kind != PriorKind.GAUSSIAN_MOMENTS or spec.resolved():
        return spec
    if spec.moments_source == "img":
        mu, sigma = fit_moments(teacher_img, normalize=False)
    elif spec.moments_source == "txt":
        mu, sigma = fit_moments(teacher_txt, normalize=False)
    else:
        mu, sigma = fit_moments([teacher_img, teacher_txt], normalize=False)
    return PriorSpec(kind=PriorKind.GAUSSIAN_MOMENTS, mu=mu, sigma=sigma)
