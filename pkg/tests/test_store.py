"""EMB1 round trips, validation failures, and manifest pairing."""

from __future__ import annotations

import json
import struct
import zlib

import numpy as np
import pytest

from refine_kit.errors import (
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
from refine_kit.store import (
    ClassPromptTable,
    EmbeddingTable,
    load_manifest,
    load_table,
    make_pairs,
    save_manifest,
    save_table,
)


def small_table(rng, n=4, d=3, prefix="row"):
    return EmbeddingTable.create(
        rng.standard_normal((n, d)).astype(np.float32),
        [f"{prefix}-{i}" for i in range(n)],
    )


class TestRoundTrip:
    def test_bit_exact(self, rng, tmp_path):
        table = small_table(rng, n=7, d=5)
        path = tmp_path / "t.emb1"
        save_table(table, path)
        loaded = load_table(path)
        assert loaded.count == table.count
        assert loaded.dim == table.dim
        assert loaded.ids == table.ids
        assert loaded.data.tobytes() == table.data.tobytes()

    def test_save_is_idempotent_bytes(self, rng, tmp_path):
        table = small_table(rng)
        a, b = tmp_path / "a.emb1", tmp_path / "b.emb1"
        save_table(table, a)
        save_table(table, b)
        assert a.read_bytes() == b.read_bytes()

    def test_file_size_arithmetic(self, rng, tmp_path):
        # 24-byte fixed header + N*d float32 + JSON trailer.
        n, d = 100, 16
        table = small_table(rng, n=n, d=d)
        path = tmp_path / "t.emb1"
        save_table(table, path)
        payload = np.ascontiguousarray(table.data, dtype="<f4").tobytes()
        trailer = json.dumps(
            {"ids": list(table.ids), "crc32": zlib.crc32(payload) & 0xFFFFFFFF},
            sort_keys=True,
        ).encode()
        assert path.stat().st_size == 24 + n * d * 4 + len(trailer)

    def test_loading_preserves_row_order(self, tmp_path):
        data = np.arange(12, dtype=np.float32).reshape(4, 3)
        table = EmbeddingTable.create(data, ["d", "c", "b", "a"])
        path = tmp_path / "t.emb1"
        save_table(table, path)
        loaded = load_table(path)
        assert loaded.ids == ("d", "c", "b", "a")
        np.testing.assert_array_equal(loaded.data, data)


class TestValidation:
    def test_zero_rows_rejected(self):
        with pytest.raises(StoreFormatError):
            EmbeddingTable.create(np.zeros((0, 4), dtype=np.float32), [])

    def test_nan_rejected_with_row(self):
        data = np.ones((5, 2), dtype=np.float32)
        data[3, 1] = np.nan
        with pytest.raises(NonFiniteValueError) as err:
            EmbeddingTable.create(data, [f"r{i}" for i in range(5)])
        assert err.value.row == 3

    def test_inf_rejected(self):
        data = np.ones((2, 2), dtype=np.float32)
        data[0, 0] = np.inf
        with pytest.raises(NonFiniteValueError) as err:
            EmbeddingTable.create(data, ["a", "b"])
        assert err.value.row == 0

    def test_duplicate_ids_rejected(self):
        with pytest.raises(DuplicateIdError) as err:
            EmbeddingTable.create(np.ones((3, 2), dtype=np.float32), ["a", "b", "a"])
        assert err.value.row == 2
        assert err.value.id == "a"

    def test_table_data_is_readonly(self, rng):
        table = small_table(rng)
        with pytest.raises(ValueError):
            table.data[0, 0] = 5.0


class TestLoadFailures:
    def _valid_bytes(self, rng, tmp_path):
        table = small_table(rng)
        path = tmp_path / "t.emb1"
        save_table(table, path)
        return bytearray(path.read_bytes()), path

    def test_bad_magic(self, rng, tmp_path):
        blob, path = self._valid_bytes(rng, tmp_path)
        blob[:4] = b"NOPE"
        path.write_bytes(blob)
        with pytest.raises(BadMagicError):
            load_table(path)

    def test_bad_version(self, rng, tmp_path):
        blob, path = self._valid_bytes(rng, tmp_path)
        blob[4:8] = struct.pack("<I", 9)
        path.write_bytes(blob)
        with pytest.raises(VersionMismatchError):
            load_table(path)

    def test_truncated_header(self, tmp_path):
        path = tmp_path / "t.emb1"
        path.write_bytes(b"EMB1\x01")
        with pytest.raises(TruncatedFileError) as err:
            load_table(path)
        assert err.value.offset == 5

    def test_truncated_mid_row(self, rng, tmp_path):
        blob, path = self._valid_bytes(rng, tmp_path)
        path.write_bytes(blob[: 24 + 10])  # cuts inside the data block
        with pytest.raises(TruncatedFileError):
            load_table(path)

    def test_missing_trailer(self, rng, tmp_path):
        table = small_table(rng)
        path = tmp_path / "t.emb1"
        save_table(table, path)
        data_end = 24 + table.count * table.dim * 4
        path.write_bytes(path.read_bytes()[:data_end])
        with pytest.raises(TruncatedFileError):
            load_table(path)

    def test_checksum_mismatch(self, rng, tmp_path):
        blob, path = self._valid_bytes(rng, tmp_path)
        blob[30] ^= 0xFF  # flip data bits, keep trailer
        path.write_bytes(blob)
        with pytest.raises(ChecksumMismatchError):
            load_table(path)

    def test_nan_in_file_names_row(self, tmp_path):
        # Bypass create() validation by writing bytes manually.
        data = np.ones((4, 2), dtype="<f4")
        data[2, 0] = np.nan
        payload = data.tobytes()
        trailer = json.dumps(
            {"ids": ["a", "b", "c", "d"], "crc32": zlib.crc32(payload) & 0xFFFFFFFF}
        ).encode()
        path = tmp_path / "t.emb1"
        path.write_bytes(struct.pack("<4sIQII", b"EMB1", 1, 4, 2, 0) + payload + trailer)
        with pytest.raises(NonFiniteValueError) as err:
            load_table(path)
        assert err.value.row == 2


class TestMakePairs:
    def test_identity_pairing(self, rng):
        img = small_table(rng, prefix="x")
        txt = small_table(rng, prefix="x")
        pairs = [(i, i) for i in img.ids]
        ds = make_pairs(img, txt, pairs)
        assert ds.image_table.ids == img.ids
        assert ds.text_table.ids == txt.ids
        np.testing.assert_array_equal(ds.image_table.data, img.data)

    def test_permuted_text_realigned(self, rng):
        img = small_table(rng, n=4, prefix="img")
        txt = small_table(rng, n=4, prefix="txt")
        pairs = [(f"img-{i}", f"txt-{3 - i}") for i in range(4)]
        ds = make_pairs(img, txt, pairs)
        assert ds.text_table.ids == ("txt-3", "txt-2", "txt-1", "txt-0")
        np.testing.assert_array_equal(ds.text_table.data[0], txt.data[3])
        np.testing.assert_array_equal(ds.image_table.data, img.data)

    def test_missing_image_id_reported(self, rng):
        img = small_table(rng, n=4, prefix="img")
        txt = small_table(rng, n=4, prefix="txt")
        pairs = [(f"img-{i}", f"txt-{i}") for i in range(3)]  # img-3 unmatched
        with pytest.raises(UnmatchedIdError) as err:
            make_pairs(img, txt, pairs)
        assert "img-3" in err.value.ids

    def test_unknown_manifest_id_reported(self, rng):
        img = small_table(rng, n=3, prefix="img")
        txt = small_table(rng, n=3, prefix="txt")
        pairs = [(f"img-{i}", f"txt-{i}") for i in range(3)] + [("img-9", "txt-0")]
        with pytest.raises(UnmatchedIdError) as err:
            make_pairs(img, txt, pairs)
        assert "img-9" in err.value.ids

    def test_multi_caption_selection(self, rng):
        img = small_table(rng, n=2, prefix="img")
        txt = small_table(rng, n=6, prefix="txt")
        pairs = [
            ("img-0", "txt-0"), ("img-0", "txt-1"), ("img-0", "txt-2"),
            ("img-1", "txt-3"), ("img-1", "txt-4"), ("img-1", "txt-5"),
        ]
        ds0 = make_pairs(img, txt, pairs, caption_index=0)
        assert ds0.text_table.ids == ("txt-0", "txt-3")
        ds2 = make_pairs(img, txt, pairs, caption_index=2)
        assert ds2.text_table.ids == ("txt-2", "txt-5")
        with pytest.raises(UnmatchedIdError):
            make_pairs(img, txt, pairs, caption_index=3)

    def test_dim_mismatch(self, rng):
        img = small_table(rng, n=2, d=3, prefix="img")
        txt = small_table(rng, n=2, d=4, prefix="txt")
        with pytest.raises(DimensionMismatchError):
            make_pairs(img, txt, [("img-0", "txt-0"), ("img-1", "txt-1")])

    def test_manifest_round_trip(self, tmp_path):
        pairs = [("a", "b"), ("c", "d")]
        path = tmp_path / "m.json"
        save_manifest(pairs, path)
        assert load_manifest(path) == pairs


class TestClassPromptTable:
    def test_labels_default_to_ids(self, rng):
        table = small_table(rng, n=3, prefix="class")
        prompts = ClassPromptTable(table=table)
        assert prompts.labels == table.ids

    def test_needs_two_classes(self, rng):
        table = EmbeddingTable.create(np.ones((1, 3), dtype=np.float32), ["only"])
        with pytest.raises(StoreFormatError):
            ClassPromptTable(table=table)
