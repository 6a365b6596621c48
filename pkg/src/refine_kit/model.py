"""Trainable refinement heads over frozen cached embeddings.

Each modality gets a small residual MLP applied to the L2-normalized raw
embedding:

    u = normalize(raw)
    z = normalize(u + gelu(u @ W1 + b1) @ W2 + b2)

With W2 = 0 and b2 = 0 the head is an exact identity on the normalized
features, so a freshly initialized student reproduces the frozen teacher
and training starts from the pre-trained point. The teacher itself is
just the unit-normalized raw table (TeacherBank).
"""

from __future__ import annotations

import os
import struct
import zlib
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .errors import DimensionMismatchError, ShapeMismatchError, VersionMismatchError, ZeroNormError
from .priors import make_rng
from .store import PairedDataset

HEAD_MAGIC = b"RHD1"
HEAD_VERSION = 1
_HEAD_HEADER = struct.Struct("<4sIII")

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def normalize_rows(x: np.ndarray, where: str = "input") -> np.ndarray:
    """L2-normalize each row; rejects rows with norm below 1e-12."""
    norms = np.linalg.norm(x, axis=1)
    small = norms < 1e-12
    if small.any():
        row = int(np.argmax(small))
        raise ZeroNormError(row, float(norms[row]))
    return x / norms[:, None]


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact (erf-based) GELU."""
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def gelu_prime(x: np.ndarray) -> np.ndarray:
    phi = _INV_SQRT2PI * np.exp(-0.5 * x * x)
    return 0.5 * (1.0 + erf(x * _INV_SQRT2)) + x * phi


@dataclass
class RefineHead:
    """Residual MLP head: parameters W1 (d x h), b1 (h), W2 (h x d), b2 (d)."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @property
    def dim(self) -> int:
        return self.w1.shape[0]

    @property
    def hidden(self) -> int:
        return self.w1.shape[1]

    def params(self) -> list[np.ndarray]:
        """Parameters in declaration order; mutating them mutates the head."""
        return [self.w1, self.b1, self.w2, self.b2]

    def copy(self) -> "RefineHead":
        return RefineHead(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy())

    def checksum(self) -> int:
        crc = 0
        for p in self.params():
            crc = zlib.crc32(np.ascontiguousarray(p, dtype="<f8").tobytes(), crc)
        return crc & 0xFFFFFFFF


def init_identity(d: int, h: int, seed: int, stream: str = "head-init") -> RefineHead:
    """Head that is exactly the identity on normalized features at step 0.

    W1 is a seeded Gaussian with std 1/sqrt(d) (so hidden pre-activations
    are O(1) from the start); b1, W2, b2 are zero, making the residual
    branch vanish. ``stream`` separates the draws of e.g. the image and
    text heads sharing one run seed.
    """
    if d < 1 or h < 1:
        raise DimensionMismatchError(f"head dims must be positive, got d={d}, h={h}")
    rng = make_rng(seed, stream)
    w1 = rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, h))
    return RefineHead(
        w1=w1,
        b1=np.zeros(h),
        w2=np.zeros((h, d)),
        b2=np.zeros(d),
    )


@dataclass
class ForwardCache:
    """Intermediates needed for the backward pass of one forward call."""

    u: np.ndarray
    h1: np.ndarray
    act: np.ndarray
    z: np.ndarray
    out_norm: np.ndarray


def forward_with_cache(head: RefineHead, raw: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 2 or raw.shape[1] != head.dim:
        raise ShapeMismatchError(f"expected (B, {head.dim}) input, got {raw.shape}")
    u = normalize_rows(raw)
    h1 = u @ head.w1 + head.b1
    act = gelu(h1)
    v = u + act @ head.w2 + head.b2
    norms = np.linalg.norm(v, axis=1)
    small = norms < 1e-12
    if small.any():
        row = int(np.argmax(small))
        raise ZeroNormError(row, float(norms[row]))
    z = v / norms[:, None]
    return z, ForwardCache(u=u, h1=h1, act=act, z=z, out_norm=norms)


def forward(head: RefineHead, raw: np.ndarray) -> np.ndarray:
    """Unit-norm student features for a batch of raw embedding rows."""
    z, _ = forward_with_cache(head, raw)
    return z


@dataclass
class HeadGrads:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def params(self) -> list[np.ndarray]:
        return [self.w1, self.b1, self.w2, self.b2]


def backward(
    head: RefineHead,
    cache: ForwardCache,
    dz: np.ndarray,
    dv_extra: np.ndarray | None = None,
) -> HeadGrads:
    """Accumulate dL/dparams from dL/dz by reverse-mode differentiation.

    ``dv_extra`` injects a gradient directly on the pre-normalization
    output v (used by losses defined below the final normalization).
    """
    # z = v / ||v||: project out the radial component, scale by 1/||v||.
    radial = np.einsum("ij,ij->i", cache.z, dz)
    dv = (dz - cache.z * radial[:, None]) / cache.out_norm[:, None]
    if dv_extra is not None:
        dv = dv + dv_extra
    dw2 = cache.act.T @ dv
    db2 = dv.sum(axis=0)
    dact = dv @ head.w2.T
    dh1 = dact * gelu_prime(cache.h1)
    dw1 = cache.u.T @ dh1
    db1 = dh1.sum(axis=0)
    return HeadGrads(w1=dw1, b1=db1, w2=dw2, b2=db2)


class TeacherBank:
    """Frozen unit-normalized copies of the raw embeddings, one per modality."""

    def __init__(self, img: np.ndarray, txt: np.ndarray):
        self.img = img
        self.txt = txt
        self.img.setflags(write=False)
        self.txt.setflags(write=False)

    @classmethod
    def from_dataset(cls, dataset: PairedDataset) -> "TeacherBank":
        img = normalize_rows(np.asarray(dataset.image_table.data, dtype=np.float64))
        txt = normalize_rows(np.asarray(dataset.text_table.data, dtype=np.float64))
        return cls(img, txt)


def serialize_head(head: RefineHead, path: str | os.PathLike) -> None:
    """Write an RHD1 checkpoint: magic, version, d, h, then W1,b1,W2,b2 as float64."""
    header = _HEAD_HEADER.pack(HEAD_MAGIC, HEAD_VERSION, head.dim, head.hidden)
    tmp = f"{os.fspath(path)}.tmp.{os.getpid()}"
    with open(tmp, "wb") as f:
        f.write(header)
        for p in head.params():
            f.write(np.ascontiguousarray(p, dtype="<f8").tobytes())
    os.replace(tmp, path)


def deserialize_head(path: str | os.PathLike) -> RefineHead:
    name = os.fspath(path)
    with open(name, "rb") as f:
        blob = f.read()
    if len(blob) < _HEAD_HEADER.size:
        raise VersionMismatchError(name, HEAD_VERSION, -1)
    magic, version, d, h = _HEAD_HEADER.unpack_from(blob, 0)
    if magic != HEAD_MAGIC or version != HEAD_VERSION:
        raise VersionMismatchError(name, HEAD_VERSION, version if magic == HEAD_MAGIC else -1)
    shapes = [(d, h), (h,), (h, d), (d,)]
    need = _HEAD_HEADER.size + sum(int(np.prod(s)) for s in shapes) * 8
    if len(blob) != need:
        raise VersionMismatchError(name, HEAD_VERSION, version)
    offset = _HEAD_HEADER.size
    arrays = []
    for shape in shapes:
        n = int(np.prod(shape)) * 8
        arrays.append(np.frombuffer(blob[offset:offset + n], dtype="<f8").reshape(shape).copy())
        offset += n
    return RefineHead(*arrays)
