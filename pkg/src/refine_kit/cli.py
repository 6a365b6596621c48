"""Command-line surface: train, eval, synth, sweep, convert.

Exit codes: 0 success, 1 configuration/usage error, 2 data error,
3 non-finite loss during training. All randomness flows from the seed in
the config; in deterministic mode reruns produce bit-identical outputs.
REFINE_KIT_THREADS caps the sweep worker pool.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import kernels
from .errors import (
    ConfigError,
    DimensionMismatchError,
    EmptySetError,
    InsufficientDataError,
    LabelMismatchError,
    NonFiniteLossError,
    RefineKitError,
    ShapeMismatchError,
    StoreError,
    ZeroNormError,
)
from .losses import LossMode
from .metrics import (
    alignment_score,
    modality_gap,
    pca_project,
    recall_at_k,
    uniformity_score,
    zeroshot_classify,
)
from .model import (
    RefineHead,
    TeacherBank,
    deserialize_head,
    forward,
    init_identity,
    serialize_head,
)
from .runconfig import (
    RunConfig,
    build_run_manifest,
    load_config,
    parse_config,
    write_json_atomic,
)
from .store import (
    ClassPromptTable,
    EmbeddingTable,
    PairedDataset,
    load_manifest,
    load_table,
    make_pairs,
    save_table,
)
from .synth import write_split_dataset
from .trainer import train

IMAGE_HEAD_FILE = "head_img.rhd1"
TEXT_HEAD_FILE = "head_txt.rhd1"
REPORT_FILE = "train_report.jsonl"
SUMMARY_FILE = "train_summary.json"
MANIFEST_FILE = "run_manifest.json"

_DATA_ERRORS = (
    StoreError,
    DimensionMismatchError,
    ShapeMismatchError,
    LabelMismatchError,
    EmptySetError,
    InsufficientDataError,
    ZeroNormError,
    OSError,
)


class _Parser(argparse.ArgumentParser):
    """argparse that exits 1 on usage errors (usage = configuration)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _load_dataset(images: str, texts: str, manifest: str, caption_index: int = 0) -> PairedDataset:
    img = load_table(images)
    txt = load_table(texts)
    pairs = load_manifest(manifest)
    return make_pairs(img, txt, pairs, caption_index=caption_index)


def _write_jsonl_atomic(rows: list[dict], path: str) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row, sort_keys=True))
            f.write("\n")
    os.replace(tmp, path)


def run_training(cfg: RunConfig, config_path: str, out_dir: str) -> dict:
    """Train per the run config, write all artifacts, and return the summary."""
    dataset = _load_dataset(
        cfg.data.images, cfg.data.texts, cfg.data.manifest, cfg.data.caption_index
    )
    d = dataset.dim
    hidden = cfg.hidden or d
    heads = (
        init_identity(d, hidden, cfg.train.seed, stream="image-head"),
        init_identity(d, hidden, cfg.train.seed, stream="text-head"),
    )
    loss = cfg.train.loss
    if (
        loss.mode == LossMode.CLIP_REFINE
        and loss.lambda_rafa == 0.0
        and loss.lambda_hycd == 0.0
    ):
        print("warning: both loss weights are zero; heads will not change", file=sys.stderr)

    started = time.perf_counter()
    (head_img, head_txt), report = train(dataset, heads, cfg.train)
    elapsed = time.perf_counter() - started

    os.makedirs(out_dir, exist_ok=True)
    img_path = os.path.join(out_dir, IMAGE_HEAD_FILE)
    txt_path = os.path.join(out_dir, TEXT_HEAD_FILE)
    report_path = os.path.join(out_dir, REPORT_FILE)
    summary_path = os.path.join(out_dir, SUMMARY_FILE)
    manifest_path = os.path.join(out_dir, MANIFEST_FILE)

    serialize_head(head_img, img_path)
    serialize_head(head_txt, txt_path)
    _write_jsonl_atomic(report.to_rows(), report_path)
    summary = {
        "seed": report.seed,
        "n_steps": len(report.steps),
        "wall_time_s": report.wall_time_s,
        "image_head_crc32": report.image_head_crc32,
        "text_head_crc32": report.text_head_crc32,
        "kernel_backend": kernels.backend_name(),
    }
    write_json_atomic(summary, summary_path)
    manifest = build_run_manifest(
        config_path,
        cfg,
        [IMAGE_HEAD_FILE, TEXT_HEAD_FILE, REPORT_FILE, SUMMARY_FILE],
    )
    write_json_atomic(manifest, manifest_path)
    print(f"trained {len(report.steps)} steps in {elapsed:.2f}s -> {out_dir}", file=sys.stderr)
    return summary


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    run_training(cfg, args.config, args.out)
    return 0


def _student_features(
    dataset: PairedDataset, heads_dir: str | None
) -> tuple[np.ndarray, np.ndarray, tuple[RefineHead, RefineHead] | None]:
    teacher = TeacherBank.from_dataset(dataset)
    if heads_dir is None:
        return teacher.img, teacher.txt, None
    head_img = deserialize_head(os.path.join(heads_dir, IMAGE_HEAD_FILE))
    head_txt = deserialize_head(os.path.join(heads_dir, TEXT_HEAD_FILE))
    if head_img.dim != dataset.dim or head_txt.dim != dataset.dim:
        raise DimensionMismatchError(
            f"head dims ({head_img.dim}, {head_txt.dim}) != dataset dim {dataset.dim}"
        )
    z_img = forward(head_img, dataset.image_table.data)
    z_txt = forward(head_txt, dataset.text_table.data)
    return z_img, z_txt, (head_img, head_txt)


def run_evaluation(
    images: str,
    texts: str,
    manifest: str,
    heads_dir: str | None = None,
    tasks: tuple[str, ...] = ("metrics", "retrieval"),
    ks: tuple[int, ...] = (1, 5, 10),
    prompts_path: str | None = None,
    labels_path: str | None = None,
    caption_index: int = 0,
    pca_out: str | None = None,
) -> dict:
    dataset = _load_dataset(images, texts, manifest, caption_index)
    z_img, z_txt, heads = _student_features(dataset, heads_dir)
    n = dataset.count
    out: dict = {"n_test": n, "frozen_baseline": heads_dir is None}

    if "metrics" in tasks:
        out["metrics"] = {
            "modality_gap": modality_gap(z_img, z_txt),
            "alignment": alignment_score(z_img, z_txt),
            "uniformity": uniformity_score(z_img, z_txt),
        }
    if "retrieval" in tasks:
        truth = np.arange(n)
        t2i = recall_at_k(z_txt, z_img, truth, ks, direction="T2I")
        i2t = recall_at_k(z_img, z_txt, truth, ks, direction="I2T")
        out["retrieval"] = {"t2i": t2i.to_json(), "i2t": i2t.to_json()}
    if "zeroshot" in tasks:
        if prompts_path is None or labels_path is None:
            raise ConfigError("zeroshot task needs --prompts and --labels")
        prompt_table = load_table(prompts_path)
        if heads is not None:
            prompt_feats = forward(heads[1], prompt_table.data)
        else:
            prompt_feats = np.asarray(prompt_table.data, dtype=np.float64)
            prompt_feats = prompt_feats / np.linalg.norm(prompt_feats, axis=1, keepdims=True)
        prompts = ClassPromptTable(
            table=EmbeddingTable.create(prompt_feats, prompt_table.ids, where=prompts_path)
        )
        with open(labels_path, "r", encoding="utf-8") as f:
            label_map = json.load(f)
        missing = [i for i in dataset.image_table.ids if i not in label_map]
        if missing:
            raise LabelMismatchError(f"no label for image ids: {missing[:8]}")
        labels = [str(label_map[i]) for i in dataset.image_table.ids]
        out["zeroshot"] = {
            "top1": zeroshot_classify(z_img, prompts, labels),
            "n_classes": prompts.count,
        }
    if "pca" in tasks:
        pooled = np.vstack([z_img, z_txt])
        coords, ratios = pca_project(pooled, n_components=2)
        out["pca"] = {"explained_variance_ratio": [float(r) for r in ratios]}
        if pca_out:
            tmp = f"{pca_out}.tmp.{os.getpid()}"
            with open(tmp, "w", newline="", encoding="utf-8") as f:
                writer = csv.writer(f)
                writer.writerow(["id", "modality", "pc1", "pc2"])
                for i, id_ in enumerate(dataset.image_table.ids):
                    writer.writerow([id_, "image", repr(float(coords[i, 0])), repr(float(coords[i, 1]))])
                for i, id_ in enumerate(dataset.text_table.ids):
                    writer.writerow([id_, "text", repr(float(coords[n + i, 0])), repr(float(coords[n + i, 1]))])
            os.replace(tmp, pca_out)
    return out


def cmd_eval(args) -> int:
    tasks = tuple(t.strip() for t in args.tasks.split(",") if t.strip())
    unknown = set(tasks) - {"metrics", "retrieval", "zeroshot", "pca"}
    if unknown:
        raise ConfigError(f"unknown eval tasks: {sorted(unknown)}")
    ks = tuple(int(k) for k in args.ks.split(","))
    report = run_evaluation(
        images=args.images,
        texts=args.texts,
        manifest=args.manifest,
        heads_dir=args.heads,
        tasks=tasks,
        ks=ks,
        prompts_path=args.prompts,
        labels_path=args.labels,
        caption_index=args.caption_index,
        pca_out=args.pca_out,
    )
    payload = json.dumps(report, sort_keys=True, indent=2 if args.pretty else None)
    if args.out:
        tmp = f"{args.out}.tmp.{os.getpid()}"
        with open(tmp, "w", encoding="utf-8") as f:
            f.write(payload)
            f.write("\n")
        os.replace(tmp, args.out)
    else:
        print(payload)
    return 0


def cmd_synth(args) -> int:
    paths = write_split_dataset(
        out_prefix=args.out_prefix,
        n=args.n,
        d=args.d,
        gap=args.gap,
        seed=args.seed,
        noise=args.noise,
    )
    print(
        json.dumps(
            {
                "train": paths.train.__dict__,
                "test": paths.test.__dict__,
            },
            sort_keys=True,
        )
    )
    return 0


_SWEEP_PARAMS = ("batch", "alpha", "lambda", "prior", "beta")


def _apply_sweep_value(raw: dict, param: str, value: str) -> dict:
    doc = json.loads(json.dumps(raw))  # deep copy, JSON-types only
    doc.setdefault("train", {})
    doc.setdefault("loss", {})
    if param == "batch":
        doc["train"]["batch_size"] = int(value)
    elif param == "alpha":
        doc["loss"]["alpha"] = float(value)
    elif param == "lambda":
        try:
            rafa, hycd = value.split(":")
        except ValueError as exc:
            raise ConfigError(f"lambda values look like RAFA:HYCD, got {value!r}") from exc
        doc["loss"]["lambda_rafa"] = float(rafa)
        doc["loss"]["lambda_hycd"] = float(hycd)
    elif param == "prior":
        named = {
            "std": {"kind": "standard_gaussian"},
            "uniform": {"kind": "uniform_01"},
            "moments-img": {"kind": "gaussian_moments", "moments_source": "img"},
            "moments-txt": {"kind": "gaussian_moments", "moments_source": "txt"},
            "moments-all": {"kind": "gaussian_moments", "moments_source": "all"},
        }
        if value not in named:
            raise ConfigError(f"unknown prior name {value!r} (expected one of {sorted(named)})")
        doc["prior"] = named[value]
    elif param == "beta":
        doc["prior"] = {"kind": "scaled_gaussian", "beta": float(value)}
    else:
        raise ConfigError(f"unknown sweep param {param!r}")
    return doc


def _sweep_one(
    base: RunConfig,
    base_dir: str,
    param: str,
    value: str,
    out_dir: str,
    eval_paths: tuple[str, str, str],
    ks: tuple[int, ...],
) -> dict:
    doc = _apply_sweep_value(base.raw, param, value)
    cfg = parse_config(doc, base_dir=base_dir)
    run_dir = os.path.join(out_dir, f"{param}-{value.replace(':', 'x').replace('/', '_')}")
    run_training(cfg, config_path=os.path.join(run_dir, "config.json"), out_dir=run_dir)
    write_json_atomic(doc, os.path.join(run_dir, "config.json"))
    images, texts, manifest = eval_paths
    report = run_evaluation(
        images=images,
        texts=texts,
        manifest=manifest,
        heads_dir=run_dir,
        tasks=("metrics", "retrieval"),
        ks=ks,
        caption_index=cfg.data.caption_index,
    )
    row = {
        "param": param,
        "value": value,
        "modality_gap": report["metrics"]["modality_gap"],
        "alignment": report["metrics"]["alignment"],
        "uniformity": report["metrics"]["uniformity"],
    }
    for direction in ("t2i", "i2t"):
        for k, v in report["retrieval"][direction]["recall_at"].items():
            row[f"r{k}_{direction}"] = v
    return row


def cmd_sweep(args) -> int:
    values = [v for v in (s.strip() for s in args.values.split(",")) if v]
    if not values:
        raise ConfigError("sweep needs at least one value")
    if args.param not in _SWEEP_PARAMS:
        raise ConfigError(f"unknown sweep param {args.param!r} (expected one of {_SWEEP_PARAMS})")
    base = load_config(args.config)
    base_dir = os.path.dirname(os.path.abspath(args.config))
    eval_given = [args.eval_images, args.eval_texts, args.eval_manifest]
    if any(eval_given) and not all(eval_given):
        raise ConfigError("--eval-images/--eval-texts/--eval-manifest must be given together")
    eval_paths = (
        (args.eval_images, args.eval_texts, args.eval_manifest)
        if all(eval_given)
        else (base.data.images, base.data.texts, base.data.manifest)
    )
    ks = tuple(int(k) for k in args.ks.split(","))
    out_dir = args.out_dir or os.path.join(os.path.dirname(os.path.abspath(args.out)), "sweep-runs")
    os.makedirs(out_dir, exist_ok=True)

    cap = os.environ.get("REFINE_KIT_THREADS")
    jobs = max(1, args.jobs)
    if cap:
        jobs = min(jobs, max(1, int(cap)))

    if jobs == 1:
        rows = [
            _sweep_one(base, base_dir, args.param, v, out_dir, eval_paths, ks) for v in values
        ]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = [
                pool.submit(_sweep_one, base, base_dir, args.param, v, out_dir, eval_paths, ks)
                for v in values
            ]
            rows = [f.result() for f in futures]

    fieldnames = list(rows[0].keys())
    tmp = f"{args.out}.tmp.{os.getpid()}"
    with open(tmp, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    os.replace(tmp, args.out)
    print(f"wrote {len(rows)} sweep rows -> {args.out}", file=sys.stderr)
    return 0


def cmd_convert(args) -> int:
    path = args.input
    if path.endswith(".npy"):
        data = np.load(path)
    elif path.endswith(".csv"):
        data = np.loadtxt(path, delimiter=",", ndmin=2)
    else:
        raise ConfigError(f"convert expects a .npy or .csv input, got {path!r}")
    data = np.asarray(data, dtype=np.float32)
    if data.ndim != 2:
        raise ConfigError(f"input must be 2-D, got shape {data.shape}")
    if args.ids:
        with open(args.ids, "r", encoding="utf-8") as f:
            ids = [line.strip() for line in f if line.strip()]
    else:
        ids = [f"{args.id_prefix}-{i:06d}" for i in range(data.shape[0])]
    table = EmbeddingTable.create(data, ids, where=path)
    save_table(table, args.out)
    print(f"wrote {table.count}x{table.dim} -> {args.out}", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="refine-kit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run post-pre-training from a config file")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--out", required=True, help="output directory")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate heads (or the frozen baseline) on a dataset")
    p_eval.add_argument("--heads", default=None, help="training output directory; omit for the frozen baseline")
    p_eval.add_argument("--images", required=True)
    p_eval.add_argument("--texts", required=True)
    p_eval.add_argument("--manifest", required=True)
    p_eval.add_argument("--caption-index", type=int, default=0)
    p_eval.add_argument("--tasks", default="metrics,retrieval")
    p_eval.add_argument("--ks", default="1,5,10")
    p_eval.add_argument("--prompts", default=None, help="EMB1 class-prompt table (ids are labels)")
    p_eval.add_argument("--labels", default=None, help="JSON {image_id: class_label}")
    p_eval.add_argument("--pca-out", default=None, help="CSV path for the pca task")
    p_eval.add_argument("--out", default=None, help="write the JSON report here instead of stdout")
    p_eval.add_argument("--pretty", action="store_true")
    p_eval.set_defaults(func=cmd_eval)

    p_synth = sub.add_parser("synth", help="generate a synthetic paired dataset with a controlled gap")
    p_synth.add_argument("--n", type=int, required=True)
    p_synth.add_argument("--d", type=int, required=True)
    p_synth.add_argument("--gap", type=float, required=True)
    p_synth.add_argument("--seed", type=int, required=True)
    p_synth.add_argument("--noise", type=float, default=0.1)
    p_synth.add_argument("--out-prefix", required=True)
    p_synth.set_defaults(func=cmd_synth)

    p_sweep = sub.add_parser("sweep", help="train+eval across one swept parameter, emit a CSV")
    p_sweep.add_argument("--param", required=True, choices=_SWEEP_PARAMS)
    p_sweep.add_argument("--values", required=True, help="comma-separated values")
    p_sweep.add_argument("--config", required=True, help="base run config")
    p_sweep.add_argument("--out", required=True, help="CSV output path")
    p_sweep.add_argument("--out-dir", default=None, help="directory for per-value run artifacts")
    p_sweep.add_argument("--eval-images", default=None)
    p_sweep.add_argument("--eval-texts", default=None)
    p_sweep.add_argument("--eval-manifest", default=None)
    p_sweep.add_argument("--ks", default="1,5,10")
    p_sweep.add_argument("--jobs", type=int, default=1)
    p_sweep.set_defaults(func=cmd_sweep)

    p_conv = sub.add_parser("convert", help="convert a flat .npy/.csv float dump into EMB1")
    p_conv.add_argument("--input", required=True)
    p_conv.add_argument("--out", required=True)
    p_conv.add_argument("--ids", default=None, help="file with one id per line")
    p_conv.add_argument("--id-prefix", default="row")
    p_conv.set_defaults(func=cmd_convert)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except NonFiniteLossError as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return 3
    except _DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except RefineKitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
