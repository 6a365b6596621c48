"""Synthetic paired embeddings with a controllable modality offset.

Each pair shares a latent unit vector drawn from a concentrated cone
(pre-trained dual encoders put their features on a narrow cone, which is
what leaves room for uniformity to improve). The image view adds the
offset gap * e1 and the text view gap * e2 (fixed orthogonal directions,
both orthogonal to the cone axis e3), plus independent Gaussian noise,
and both views are re-normalized:

    latent_i = normalize(CONE_CONCENTRATION * e3 + g_i)
    img_i = normalize(latent_i + gap * e1 + noise * h_i)
    txt_i = normalize(latent_i + gap * e2 + noise * k_i)

With gap = 0 and noise = 0 both views equal the latent, so the measured
modality gap is exactly zero; growing the offset grows the measured gap.
Output files are reproducible byte-for-byte for a fixed seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .priors import make_rng
from .store import EmbeddingTable, PairedDataset, save_manifest, save_table

CONE_CONCENTRATION = 3.0


def _cone_axis(d: int) -> np.ndarray:
    axis = np.zeros(d)
    axis[2 if d > 2 else 0] = 1.0
    return axis


@dataclass
class SynthSplit:
    images: str
    texts: str
    manifest: str


@dataclass
class SynthPaths:
    train: SynthSplit
    test: SynthSplit


def generate_pairs(n: int, d: int, gap: float, seed: int, noise: float = 0.1) -> PairedDataset:
    """Build one synthetic paired dataset (raw views stored as float32)."""
    if n < 4:
        raise ConfigError(f"n must be >= 4, got {n}")
    if d < 2:
        raise ConfigError(f"d must be >= 2, got {d}")
    if noise < 0:
        raise ConfigError(f"noise must be >= 0, got {noise}")
    rng = make_rng(seed, "synth")
    latent = CONE_CONCENTRATION * _cone_axis(d) + rng.standard_normal((n, d))
    latent /= np.linalg.norm(latent, axis=1, keepdims=True)
    offset_img = np.zeros(d)
    offset_img[0] = gap
    offset_txt = np.zeros(d)
    offset_txt[1] = gap
    img = latent + offset_img + noise * rng.standard_normal((n, d))
    txt = latent + offset_txt + noise * rng.standard_normal((n, d))
    img /= np.linalg.norm(img, axis=1, keepdims=True)
    txt /= np.linalg.norm(txt, axis=1, keepdims=True)
    img_ids = [f"img-{i:06d}" for i in range(n)]
    txt_ids = [f"txt-{i:06d}" for i in range(n)]
    return PairedDataset(
        image_table=EmbeddingTable.create(img, img_ids, where="synthetic images"),
        text_table=EmbeddingTable.create(txt, txt_ids, where="synthetic texts"),
    )


def _subset(dataset: PairedDataset, rows: np.ndarray) -> PairedDataset:
    img = dataset.image_table
    txt = dataset.text_table
    return PairedDataset(
        image_table=EmbeddingTable.create(img.data[rows], [img.ids[i] for i in rows]),
        text_table=EmbeddingTable.create(txt.data[rows], [txt.ids[i] for i in rows]),
    )


def write_dataset(dataset: PairedDataset, images: str, texts: str, manifest: str) -> None:
    save_table(dataset.image_table, images)
    save_table(dataset.text_table, texts)
    save_manifest(list(zip(dataset.image_table.ids, dataset.text_table.ids)), manifest)


def write_split_dataset(
    out_prefix: str,
    n: int,
    d: int,
    gap: float,
    seed: int,
    noise: float = 0.1,
    test_fraction: float = 0.2,
) -> SynthPaths:
    """Generate, split 80/20 on a seeded shuffle, and write both splits."""
    dataset = generate_pairs(n, d, gap, seed, noise)
    rng = make_rng(seed, "synth-split")
    perm = rng.permutation(n)
    n_test = max(1, int(round(n * test_fraction)))
    test_rows = np.sort(perm[:n_test])
    train_rows = np.sort(perm[n_test:])
    paths = SynthPaths(
        train=SynthSplit(
            images=f"{out_prefix}-train-images.emb1",
            texts=f"{out_prefix}-train-texts.emb1",
            manifest=f"{out_prefix}-train-manifest.json",
        ),
        test=SynthSplit(
            images=f"{out_prefix}-test-images.emb1",
            texts=f"{out_prefix}-test-texts.emb1",
            manifest=f"{out_prefix}-test-manifest.json",
        ),
    )
    train = _subset(dataset, train_rows)
    test = _subset(dataset, test_rows)
    write_dataset(train, paths.train.images, paths.train.texts, paths.train.manifest)
    write_dataset(test, paths.test.images, paths.test.texts, paths.test.manifest)
    return paths
