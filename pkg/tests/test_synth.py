"""Synthetic data generator: determinism, gap control, split layout."""

from __future__ import annotations

import hashlib

import numpy as np
import pytest

from refine_kit.errors import ConfigError
from refine_kit.metrics import modality_gap
from refine_kit.model import TeacherBank
from refine_kit.synth import generate_pairs, write_split_dataset
from refine_kit.store import load_manifest, load_table, make_pairs


class TestGeneratePairs:
    def test_zero_gap_zero_noise_gives_zero_modality_gap(self):
        ds = generate_pairs(n=50, d=8, gap=0.0, seed=3, noise=0.0)
        bank = TeacherBank.from_dataset(ds)
        assert modality_gap(bank.img, bank.txt) <= 1e-12

    def test_gap_monotone_in_offset(self):
        gaps = []
        for gap in (0.1, 0.3, 0.5):
            ds = generate_pairs(n=2000, d=32, gap=gap, seed=7, noise=0.1)
            bank = TeacherBank.from_dataset(ds)
            gaps.append(modality_gap(bank.img, bank.txt))
        assert gaps[0] < gaps[1] < gaps[2]

    def test_rows_unit_norm(self):
        ds = generate_pairs(n=20, d=6, gap=0.4, seed=0)
        norms = np.linalg.norm(ds.image_table.data.astype(np.float64), axis=1)
        np.testing.assert_allclose(norms, 1.0, atol=1e-6)

    def test_validation(self):
        with pytest.raises(ConfigError):
            generate_pairs(n=3, d=8, gap=0.1, seed=0)
        with pytest.raises(ConfigError):
            generate_pairs(n=8, d=1, gap=0.1, seed=0)


class TestWriteSplit:
    def test_files_hash_stable(self, tmp_path):
        digests = []
        for attempt in ("a", "b"):
            prefix = str(tmp_path / f"run-{attempt}" / "synth")
            (tmp_path / f"run-{attempt}").mkdir()
            paths = write_split_dataset(prefix, n=200, d=16, gap=0.5, seed=42)
            blob = b"".join(
                open(p, "rb").read()
                for p in (
                    paths.train.images, paths.train.texts, paths.train.manifest,
                    paths.test.images, paths.test.texts, paths.test.manifest,
                )
            )
            digests.append(hashlib.sha256(blob).hexdigest())
        assert digests[0] == digests[1]

    def test_split_sizes_and_disjoint(self, tmp_path):
        paths = write_split_dataset(str(tmp_path / "s"), n=100, d=8, gap=0.3, seed=1)
        train_img = load_table(paths.train.images)
        test_img = load_table(paths.test.images)
        assert train_img.count == 80
        assert test_img.count == 20
        assert not set(train_img.ids) & set(test_img.ids)

    def test_outputs_pass_loader_and_pairing(self, tmp_path):
        paths = write_split_dataset(str(tmp_path / "s"), n=40, d=4, gap=0.2, seed=5)
        for split in (paths.train, paths.test):
            img = load_table(split.images)
            txt = load_table(split.texts)
            pairs = load_manifest(split.manifest)
            ds = make_pairs(img, txt, pairs)
            assert ds.count == img.count
