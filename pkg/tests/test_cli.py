"""CLI surface: exit codes, artifacts, determinism, sweep, convert."""

from __future__ import annotations

import csv
import json
import os

import numpy as np
import pytest

from refine_kit.cli import main
from refine_kit.model import deserialize_head
from refine_kit.store import load_table


@pytest.fixture
def workspace(tmp_path):
    """Synthetic dataset plus a base config, all inside tmp_path."""
    prefix = str(tmp_path / "data")
    assert main(["synth", "--n", "120", "--d", "8", "--gap", "0.4", "--seed", "3",
                 "--out-prefix", prefix]) == 0
    config = {
        "data": {
            "images": "data-train-images.emb1",
            "texts": "data-train-texts.emb1",
            "manifest": "data-train-manifest.json",
        },
        "model": {"hidden": None},
        "loss": {"mode": "clip_refine", "tau": 0.1, "alpha": 0.5,
                 "lambda_rafa": 1.0, "lambda_hycd": 1.0},
        "prior": {"kind": "standard_gaussian"},
        "train": {"batch_size": 32, "lr": 0.01, "epochs": 1, "optimizer": "adamw",
                  "weight_decay": 0.01, "seed": 7, "deterministic": True},
    }
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(config))
    return tmp_path, cfg_path, config


def eval_args(tmp_path, heads=None, extra=()):
    args = [
        "eval",
        "--images", str(tmp_path / "data-test-images.emb1"),
        "--texts", str(tmp_path / "data-test-texts.emb1"),
        "--manifest", str(tmp_path / "data-test-manifest.json"),
    ]
    if heads:
        args += ["--heads", str(heads)]
    return args + list(extra)


class TestTrain:
    def test_writes_artifacts(self, workspace):
        tmp_path, cfg_path, _ = workspace
        out = tmp_path / "run"
        assert main(["train", "--config", str(cfg_path), "--out", str(out)]) == 0
        for name in ("head_img.rhd1", "head_txt.rhd1", "train_report.jsonl",
                     "train_summary.json", "run_manifest.json"):
            assert (out / name).exists()
        rows = [json.loads(l) for l in (out / "train_report.jsonl").read_text().splitlines()]
        assert len(rows) == 3  # ceil(96 / 32)
        assert all(np.isfinite(r["loss_total"]) for r in rows)

    def test_missing_manifest_exits_2(self, workspace):
        tmp_path, cfg_path, config = workspace
        config["data"]["manifest"] = "nope.json"
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps(config))
        assert main(["train", "--config", str(bad), "--out", str(tmp_path / "x")]) == 2

    def test_invalid_config_exits_1(self, workspace):
        tmp_path, cfg_path, config = workspace
        config["loss"]["tau"] = -1.0
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps(config))
        assert main(["train", "--config", str(bad), "--out", str(tmp_path / "x")]) == 1

    def test_nonfinite_loss_exits_3(self, workspace):
        tmp_path, cfg_path, config = workspace
        config["prior"] = {"kind": "gaussian_moments",
                           "mu": [1e200] * 8, "sigma": [0.0] * 8}
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps(config))
        assert main(["train", "--config", str(bad), "--out", str(tmp_path / "x")]) == 3

    def test_zero_lambdas_warns_and_keeps_heads(self, workspace, capsys):
        tmp_path, cfg_path, config = workspace
        config["loss"]["lambda_rafa"] = 0.0
        config["loss"]["lambda_hycd"] = 0.0
        cfg0 = tmp_path / "zero.json"
        cfg0.write_text(json.dumps(config))
        out = tmp_path / "zero-run"
        assert main(["train", "--config", str(cfg0), "--out", str(out)]) == 0
        assert "loss weights are zero" in capsys.readouterr().err
        head = deserialize_head(out / "head_img.rhd1")
        np.testing.assert_array_equal(head.w2, np.zeros((8, 8)))

    def test_deterministic_rerun_bit_identical(self, workspace):
        tmp_path, cfg_path, _ = workspace
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert main(["train", "--config", str(cfg_path), "--out", str(out_a)]) == 0
        assert main(["train", "--config", str(cfg_path), "--out", str(out_b)]) == 0
        for name in ("head_img.rhd1", "head_txt.rhd1", "train_report.jsonl",
                     "train_summary.json", "run_manifest.json"):
            assert (out_a / name).read_bytes() == (out_b / name).read_bytes(), name


class TestEval:
    def test_identity_heads_match_frozen_baseline(self, workspace, capsys):
        tmp_path, cfg_path, config = workspace
        # lr cannot be zero; a zero objective leaves heads at identity.
        config["loss"]["lambda_rafa"] = 0.0
        config["loss"]["lambda_hycd"] = 0.0
        cfg0 = tmp_path / "zero.json"
        cfg0.write_text(json.dumps(config))
        out = tmp_path / "idrun"
        assert main(["train", "--config", str(cfg0), "--out", str(out)]) == 0
        capsys.readouterr()
        assert main(eval_args(tmp_path, heads=out)) == 0
        with_heads = json.loads(capsys.readouterr().out)
        assert main(eval_args(tmp_path)) == 0
        baseline = json.loads(capsys.readouterr().out)
        for key in ("modality_gap", "alignment", "uniformity"):
            assert with_heads["metrics"][key] == pytest.approx(
                baseline["metrics"][key], abs=1e-10
            )

    def test_retrieval_report_has_requested_ks(self, workspace, capsys):
        tmp_path, _, _ = workspace
        assert main(eval_args(tmp_path, extra=["--tasks", "retrieval", "--ks", "1,3,7"])) == 0
        report = json.loads(capsys.readouterr().out)
        assert set(report["retrieval"]["t2i"]["recall_at"]) == {"1", "3", "7"}

    def test_dim_mismatch_exits_2(self, workspace, tmp_path_factory):
        tmp_path, cfg_path, _ = workspace
        out = tmp_path / "run"
        assert main(["train", "--config", str(cfg_path), "--out", str(out)]) == 0
        other = tmp_path_factory.mktemp("other")
        assert main(["synth", "--n", "50", "--d", "6", "--gap", "0.2", "--seed", "1",
                     "--out-prefix", str(other / "data")]) == 0
        code = main([
            "eval", "--heads", str(out),
            "--images", str(other / "data-test-images.emb1"),
            "--texts", str(other / "data-test-texts.emb1"),
            "--manifest", str(other / "data-test-manifest.json"),
        ])
        assert code == 2

    def test_pca_csv_emitted(self, workspace):
        tmp_path, _, _ = workspace
        pca_csv = tmp_path / "proj.csv"
        assert main(eval_args(tmp_path, extra=["--tasks", "pca", "--pca-out", str(pca_csv),
                                              "--out", str(tmp_path / "r.json")])) == 0
        with open(pca_csv) as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["id", "modality", "pc1", "pc2"]
        assert len(rows) == 1 + 2 * 24  # header + image rows + text rows
        assert {r[1] for r in rows[1:]} == {"image", "text"}

    def test_zeroshot_via_prompt_table(self, workspace, capsys, rng):
        tmp_path, _, _ = workspace
        img_table = load_table(tmp_path / "data-test-images.emb1")
        # Prompts at the per-class mean features of two halves of the set.
        feats = img_table.data.astype(np.float64)
        half = feats.shape[0] // 2
        prompts = np.stack([feats[:half].mean(axis=0), feats[half:].mean(axis=0)])
        from refine_kit.store import EmbeddingTable, save_table

        save_table(EmbeddingTable.create(prompts.astype(np.float32), ["first", "second"]),
                   tmp_path / "prompts.emb1")
        labels = {id_: ("first" if i < half else "second")
                  for i, id_ in enumerate(img_table.ids)}
        (tmp_path / "labels.json").write_text(json.dumps(labels))
        assert main(eval_args(tmp_path, extra=[
            "--tasks", "zeroshot",
            "--prompts", str(tmp_path / "prompts.emb1"),
            "--labels", str(tmp_path / "labels.json"),
        ])) == 0
        report = json.loads(capsys.readouterr().out)
        assert 0.0 <= report["zeroshot"]["top1"] <= 1.0
        assert report["zeroshot"]["n_classes"] == 2

    def test_zeroshot_without_prompts_exits_1(self, workspace):
        tmp_path, _, _ = workspace
        assert main(eval_args(tmp_path, extra=["--tasks", "zeroshot"])) == 1


class TestSweep:
    def test_alpha_sweep_rows_and_bitwise_zero_alpha(self, workspace, capsys):
        tmp_path, cfg_path, config = workspace
        out_csv = tmp_path / "sweep.csv"
        assert main([
            "sweep", "--param", "alpha", "--values", "0,0.5,1.0",
            "--config", str(cfg_path), "--out", str(out_csv),
            "--out-dir", str(tmp_path / "sweeps"),
            "--eval-images", str(tmp_path / "data-test-images.emb1"),
            "--eval-texts", str(tmp_path / "data-test-texts.emb1"),
            "--eval-manifest", str(tmp_path / "data-test-manifest.json"),
        ]) == 0
        with open(out_csv) as f:
            rows = list(csv.DictReader(f))
        assert [r["value"] for r in rows] == ["0", "0.5", "1.0"]

        # Independent run with alpha=0 must match the alpha=0 row bitwise.
        config["loss"]["alpha"] = 0.0
        cfg0 = tmp_path / "alpha0.json"
        cfg0.write_text(json.dumps(config))
        run_dir = tmp_path / "alpha0-run"
        assert main(["train", "--config", str(cfg0), "--out", str(run_dir)]) == 0
        capsys.readouterr()
        assert main(eval_args(tmp_path, heads=run_dir)) == 0
        report = json.loads(capsys.readouterr().out)
        row0 = rows[0]
        assert float(row0["modality_gap"]) == report["metrics"]["modality_gap"]
        assert float(row0["uniformity"]) == report["metrics"]["uniformity"]
        assert float(row0["r1_t2i"]) == report["retrieval"]["t2i"]["recall_at"]["1"]

    def test_prior_sweep(self, workspace):
        tmp_path, cfg_path, _ = workspace
        out_csv = tmp_path / "priors.csv"
        assert main([
            "sweep", "--param", "prior", "--values", "std,uniform,moments-txt",
            "--config", str(cfg_path), "--out", str(out_csv),
            "--out-dir", str(tmp_path / "prior-sweeps"),
        ]) == 0
        with open(out_csv) as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == 3

    def test_empty_values_exits_1(self, workspace):
        tmp_path, cfg_path, _ = workspace
        assert main(["sweep", "--param", "alpha", "--values", "",
                     "--config", str(cfg_path), "--out", str(tmp_path / "x.csv")]) == 1

    def test_jobs_pool_matches_serial(self, workspace, monkeypatch):
        tmp_path, cfg_path, _ = workspace
        serial, pooled = tmp_path / "serial.csv", tmp_path / "pooled.csv"
        base = ["sweep", "--param", "beta", "--values", "0,1",
                "--config", str(cfg_path)]
        assert main(base + ["--out", str(serial), "--out-dir", str(tmp_path / "s1")]) == 0
        monkeypatch.setenv("REFINE_KIT_THREADS", "2")
        assert main(base + ["--out", str(pooled), "--out-dir", str(tmp_path / "s2"),
                            "--jobs", "4"]) == 0
        assert serial.read_text() == pooled.read_text()


class TestConvert:
    def test_npy_round_trip(self, tmp_path, rng):
        data = rng.standard_normal((6, 4)).astype(np.float32)
        np.save(tmp_path / "dump.npy", data)
        out = tmp_path / "out.emb1"
        assert main(["convert", "--input", str(tmp_path / "dump.npy"), "--out", str(out)]) == 0
        table = load_table(out)
        np.testing.assert_array_equal(table.data, data)
        assert table.ids[0] == "row-000000"

    def test_csv_with_ids(self, tmp_path, rng):
        data = rng.standard_normal((3, 2))
        with open(tmp_path / "dump.csv", "w") as f:
            for row in data:
                f.write(",".join(repr(float(v)) for v in row) + "\n")
        (tmp_path / "ids.txt").write_text("a\nb\nc\n")
        out = tmp_path / "out.emb1"
        assert main(["convert", "--input", str(tmp_path / "dump.csv"),
                     "--ids", str(tmp_path / "ids.txt"), "--out", str(out)]) == 0
        table = load_table(out)
        assert table.ids == ("a", "b", "c")
        np.testing.assert_allclose(table.data, data.astype(np.float32))

    def test_unknown_extension_exits_1(self, tmp_path):
        (tmp_path / "dump.bin").write_bytes(b"\x00")
        assert main(["convert", "--input", str(tmp_path / "dump.bin"),
                     "--out", str(tmp_path / "x.emb1")]) == 1


class TestParser:
    def test_bad_usage_exits_1(self):
        with pytest.raises(SystemExit) as err:
            main(["train"])  # missing required flags
        assert err.value.code == 1

    def test_unknown_command_exits_1(self):
        with pytest.raises(SystemExit) as err:
            main(["frobnicate"])
        assert err.value.code == 1
