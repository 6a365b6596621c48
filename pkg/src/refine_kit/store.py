"""Cached-embedding tables: the EMB1 binary format, pairing, and prompts.

EMB1 layout (all integers little-endian):

    offset  size  field
    0       4     magic b"EMB1"
    4       4     u32 version (currently 1)
    8       8     u64 count (rows, >= 1)
    16      4     u32 dim (columns, >= 1)
    20      4     u32 dtype code (0 = float32)
    24      -     count * dim float32 values, row-major
    ...     -     UTF-8 JSON trailer {"ids": [...], "crc32": <u32 of data block>}

The fixed 24-byte header plus a row-major float32 block keeps the data
memory-mappable; the trailer carries row ids and a CRC32 checksum.
Embeddings are stored raw (pre-normalization): normalization happens in
the model, not the store.
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadMagicError,
    ChecksumMismatchError,
    DimensionMismatchError,
    DuplicateIdError,
    NonFiniteValueError,
    StoreFormatError,
    TruncatedFileError,
    UnmatchedIdError,
    VersionMismatchError,
)

MAGIC = b"EMB1"
VERSION = 1
HEADER = struct.Struct("<4sIQII")
DTYPE_FLOAT32 = 0


def _first_duplicate(ids: list[str]) -> tuple[int, str] | None:
    seen: set[str] = set()
    for row, id_ in enumerate(ids):
        if id_ in seen:
            return row, id_
        seen.add(id_)
    return None


def _first_nonfinite_row(data: np.ndarray) -> int | None:
    finite = np.isfinite(data).all(axis=1)
    if finite.all():
        return None
    return int(np.argmax(~finite))


@dataclass(frozen=True)
class EmbeddingTable:
    """N x d float32 matrix of cached encoder outputs with stable row ids."""

    data: np.ndarray
    ids: tuple[str, ...]

    @property
    def count(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    @classmethod
    def create(cls, data: np.ndarray, ids: list[str] | tuple[str, ...], where: str = "table") -> "EmbeddingTable":
        """Validate and build a table; copies into a read-only float32 array."""
        arr = np.ascontiguousarray(data, dtype=np.float32)
        if arr.ndim != 2:
            raise StoreFormatError(f"{where}: expected a 2-D array, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise StoreFormatError(f"{where}: count and dim must be positive, got shape {arr.shape}")
        bad = _first_nonfinite_row(arr)
        if bad is not None:
            raise NonFiniteValueError(where, bad)
        ids = tuple(str(i) for i in ids)
        if len(ids) != arr.shape[0]:
            raise StoreFormatError(f"{where}: {len(ids)} ids for {arr.shape[0]} rows")
        dup = _first_duplicate(list(ids))
        if dup is not None:
            raise DuplicateIdError(where, dup[0], dup[1])
        arr = arr.copy()
        arr.setflags(write=False)
        return cls(data=arr, ids=ids)

    def row_index(self) -> dict[str, int]:
        return {id_: i for i, id_ in enumerate(self.ids)}


def save_table(table: EmbeddingTable, path: str | os.PathLike) -> None:
    """Write a table as EMB1, atomically (temp file + rename)."""
    data = np.ascontiguousarray(table.data, dtype="<f4")
    payload = data.tobytes()
    trailer = json.dumps(
        {"ids": list(table.ids), "crc32": zlib.crc32(payload) & 0xFFFFFFFF},
        sort_keys=True,
    ).encode("utf-8")
    header = HEADER.pack(MAGIC, VERSION, table.count, table.dim, DTYPE_FLOAT32)
    tmp = f"{os.fspath(path)}.tmp.{os.getpid()}"
    with open(tmp, "wb") as f:
        f.write(header)
        f.write(payload)
        f.write(trailer)
    os.replace(tmp, path)


def load_table(path: str | os.PathLike) -> EmbeddingTable:
    """Load and fully validate an EMB1 file.

    Rows come back in file order; loading never reorders.
    """
    name = os.fspath(path)
    with open(name, "rb") as f:
        blob = f.read()
    if len(blob) < HEADER.size:
        raise TruncatedFileError(name, len(blob), "incomplete header")
    magic, version, count, dim, dtype_code = HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise BadMagicError(name, magic)
    if version != VERSION:
        raise VersionMismatchError(name, VERSION, version)
    if dtype_code != DTYPE_FLOAT32:
        raise StoreFormatError(f"{name}: unsupported dtype code {dtype_code}")
    if count < 1 or dim < 1:
        raise StoreFormatError(f"{name}: count and dim must be positive, got {count}x{dim}")
    data_end = HEADER.size + count * dim * 4
    if len(blob) < data_end:
        raise TruncatedFileError(name, len(blob), f"data block ends at {data_end}")
    payload = blob[HEADER.size:data_end]
    trailer_bytes = blob[data_end:]
    if not trailer_bytes:
        raise TruncatedFileError(name, len(blob), "missing JSON trailer")
    try:
        trailer = json.loads(trailer_bytes.decode("utf-8"))
        ids = trailer["ids"]
        crc_expected = int(trailer["crc32"])
    except (ValueError, KeyError, TypeError) as exc:
        raise StoreFormatError(f"{name}: invalid JSON trailer ({exc})") from exc
    crc_actual = zlib.crc32(payload) & 0xFFFFFFFF
    if crc_actual != crc_expected:
        raise ChecksumMismatchError(name, crc_expected, crc_actual)
    if not isinstance(ids, list) or len(ids) != count:
        raise StoreFormatError(f"{name}: trailer has {len(ids)} ids for {count} rows")
    data = np.frombuffer(payload, dtype="<f4").reshape(count, dim)
    return EmbeddingTable.create(data, ids, where=name)


@dataclass(frozen=True)
class PairedDataset:
    """Row-aligned image/text tables: row i of each side forms pair i."""

    image_table: EmbeddingTable
    text_table: EmbeddingTable

    def __post_init__(self):
        if self.image_table.count != self.text_table.count:
            raise DimensionMismatchError(
                f"paired tables disagree on count: {self.image_table.count} vs {self.text_table.count}"
            )
        if self.image_table.dim != self.text_table.dim:
            raise DimensionMismatchError(
                f"paired tables disagree on dim: {self.image_table.dim} vs {self.text_table.dim}"
            )

    @property
    def count(self) -> int:
        return self.image_table.count

    @property
    def dim(self) -> int:
        return self.image_table.dim


def load_manifest(path: str | os.PathLike) -> list[tuple[str, str]]:
    """Read a pairing manifest: {"pairs": [{"image": id, "text": id}, ...]}."""
    name = os.fspath(path)
    with open(name, "r", encoding="utf-8") as f:
        doc = json.load(f)
    try:
        pairs = [(str(p["image"]), str(p["text"])) for p in doc["pairs"]]
    except (KeyError, TypeError) as exc:
        raise StoreFormatError(f"{name}: invalid manifest ({exc})") from exc
    return pairs


def save_manifest(pairs: list[tuple[str, str]], path: str | os.PathLike) -> None:
    doc = {"pairs": [{"image": a, "text": b} for a, b in pairs]}
    tmp = f"{os.fspath(path)}.tmp.{os.getpid()}"
    with open(tmp, "w", encoding="utf-8") as f:
        json.dump(doc, f, sort_keys=True)
    os.replace(tmp, path)


def make_pairs(
    img: EmbeddingTable,
    txt: EmbeddingTable,
    manifest: list[tuple[str, str]],
    caption_index: int = 0,
) -> PairedDataset:
    """Build a row-aligned dataset from a pairing manifest.

    Manifest order defines pair order. Images listed with several captions
    keep the ``caption_index``-th one (0 by default). Every image row must
    be matched; text rows may go unused (extra captions).
    """
    if img.dim != txt.dim:
        raise DimensionMismatchError(f"image dim {img.dim} != text dim {txt.dim}")
    img_index = img.row_index()
    txt_index = txt.row_index()

    unknown = sorted({a for a, _ in manifest if a not in img_index}
                     | {b for _, b in manifest if b not in txt_index})
    if unknown:
        raise UnmatchedIdError("manifest references unknown ids", unknown)

    captions: dict[str, list[str]] = {}
    image_order: list[str] = []
    for image_id, text_id in manifest:
        if image_id not in captions:
            captions[image_id] = []
            image_order.append(image_id)
        captions[image_id].append(text_id)

    missing = [id_ for id_ in img.ids if id_ not in captions]
    if missing:
        raise UnmatchedIdError("image ids missing from manifest", missing)

    chosen: list[tuple[str, str]] = []
    short = []
    for image_id in image_order:
        caps = captions[image_id]
        if caption_index >= len(caps):
            short.append(image_id)
        else:
            chosen.append((image_id, caps[caption_index]))
    if short:
        raise UnmatchedIdError(f"images lack caption index {caption_index}", short)

    img_rows = [img_index[a] for a, _ in chosen]
    txt_rows = [txt_index[b] for _, b in chosen]
    paired_img = EmbeddingTable.create(img.data[img_rows], [a for a, _ in chosen], where="paired images")
    paired_txt = EmbeddingTable.create(txt.data[txt_rows], [b for _, b in chosen], where="paired texts")
    return PairedDataset(image_table=paired_img, text_table=paired_txt)


@dataclass(frozen=True)
class ClassPromptTable:
    """Text embeddings of class prompts; labels align with rows."""

    table: EmbeddingTable
    labels: tuple[str, ...] = field(default=())

    def __post_init__(self):
        labels = self.labels or self.table.ids
        object.__setattr__(self, "labels", tuple(labels))
        if len(self.labels) != self.table.count:
            raise StoreFormatError(
                f"{len(self.labels)} labels for {self.table.count} prompt rows"
            )
        dup = _first_duplicate(list(self.labels))
        if dup is not None:
            raise DuplicateIdError("class prompts", dup[0], dup[1])
        if self.table.count < 2:
            raise InsufficientPromptsError(self.table.count)

    @property
    def count(self) -> int:
        return self.table.count


class InsufficientPromptsError(StoreFormatError):
    def __init__(self, count: int):
        super().__init__(f"classification needs at least 2 class prompts, got {count}")
