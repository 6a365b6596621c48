"""Run-config file parsing, hashing, and the run manifest.

Schema (JSON):

    {
      "data":  {"images": path, "texts": path, "manifest": path,
                "caption_index": 0},
      "model": {"hidden": null},            // null -> hidden width = dim
      "loss":  {"mode": "clip_refine", "tau": 0.01, "alpha": 0.5,
                "lambda_rafa": 1.0, "lambda_hycd": 1.0},
      "prior": {"kind": "standard_gaussian"},
                // or {"kind": "scaled_gaussian", "beta": 0.1}
                // or {"kind": "gaussian_moments", "moments_source": "txt"}
                // or {"kind": "uniform_01"}
      "train": {"batch_size": 512, "lr": 1e-6, "epochs": 1,
                "optimizer": "adamw", "weight_decay": 0.01,
                "seed": 0, "deterministic": true}
    }

Paths are resolved relative to the config file. The run manifest records
the resolved config hash and input file hashes before training starts;
outputs are written atomically. In deterministic mode timestamps are
omitted so reruns produce bit-identical files.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone

from .errors import ConfigError
from .losses import LossConfig, LossMode
from .priors import PriorKind, PriorSpec
from .trainer import OptimizerKind, TrainConfig

_PRIOR_NAMES = {
    "standard_gaussian": PriorKind.STANDARD_GAUSSIAN,
    "std": PriorKind.STANDARD_GAUSSIAN,
    "uniform_01": PriorKind.UNIFORM_01,
    "uniform": PriorKind.UNIFORM_01,
    "gaussian_moments": PriorKind.GAUSSIAN_MOMENTS,
    "scaled_gaussian": PriorKind.SCALED_GAUSSIAN,
}


@dataclass
class DataPaths:
    images: str
    texts: str
    manifest: str
    caption_index: int = 0


@dataclass
class RunConfig:
    data: DataPaths
    hidden: int | None
    train: TrainConfig
    raw: dict = field(repr=False, default_factory=dict)

    def config_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.raw, sort_keys=True).encode("utf-8")
        ).hexdigest()


def parse_prior(doc: dict) -> PriorSpec:
    kind_name = str(doc.get("kind", "standard_gaussian")).lower()
    if kind_name not in _PRIOR_NAMES:
        raise ConfigError(f"unknown prior kind {kind_name!r}")
    kind = _PRIOR_NAMES[kind_name]
    mu = doc.get("mu")
    sigma = doc.get("sigma")
    return PriorSpec(
        kind=kind,
        mu=None if mu is None else mu,
        sigma=None if sigma is None else sigma,
        beta=doc.get("beta"),
        moments_source=doc.get("moments_source"),
    )


def parse_loss(doc: dict) -> LossConfig:
    mode_name = str(doc.get("mode", "clip_refine")).lower()
    try:
        mode = LossMode(mode_name)
    except ValueError as exc:
        raise ConfigError(f"unknown loss mode {mode_name!r}") from exc
    return LossConfig(
        tau=float(doc.get("tau", 0.01)),
        alpha=float(doc.get("alpha", 0.5)),
        lambda_rafa=float(doc.get("lambda_rafa", 1.0)),
        lambda_hycd=float(doc.get("lambda_hycd", 1.0)),
        mode=mode,
        rafa_prenorm=bool(doc.get("rafa_prenorm", False)),
    )


def parse_config(doc: dict, base_dir: str = ".") -> RunConfig:
    try:
        data_doc = doc["data"]
        images = data_doc["images"]
        texts = data_doc["texts"]
        manifest = data_doc["manifest"]
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"config missing data paths ({exc})") from exc

    def _resolve(p: str) -> str:
        return p if os.path.isabs(p) else os.path.normpath(os.path.join(base_dir, p))

    train_doc = doc.get("train", {})
    opt_name = str(train_doc.get("optimizer", "adamw")).lower()
    try:
        optimizer = OptimizerKind(opt_name)
    except ValueError as exc:
        raise ConfigError(f"unknown optimizer {opt_name!r}") from exc

    model_doc = doc.get("model", {})
    hidden = model_doc.get("hidden")
    if hidden is not None:
        hidden = int(hidden)
        if hidden < 1:
            raise ConfigError(f"hidden width must be >= 1, got {hidden}")

    train = TrainConfig(
        batch_size=int(train_doc.get("batch_size", 512)),
        lr=float(train_doc.get("lr", 1.0e-6)),
        epochs=int(train_doc.get("epochs", 1)),
        optimizer=optimizer,
        weight_decay=float(train_doc.get("weight_decay", 0.01)),
        seed=int(train_doc.get("seed", 0)),
        deterministic=bool(train_doc.get("deterministic", True)),
        loss=parse_loss(doc.get("loss", {})),
        prior=parse_prior(doc.get("prior", {})),
    )
    return RunConfig(
        data=DataPaths(
            images=_resolve(images),
            texts=_resolve(texts),
            manifest=_resolve(manifest),
            caption_index=int(data_doc.get("caption_index", 0)),
        ),
        hidden=hidden,
        train=train,
        raw=copy.deepcopy(doc),
    )


def load_config(path: str | os.PathLike) -> RunConfig:
    name = os.fspath(path)
    try:
        with open(name, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except OSError as exc:
        raise ConfigError(f"cannot read config {name}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"config {name} is not valid JSON: {exc}") from exc
    return parse_config(doc, base_dir=os.path.dirname(os.path.abspath(name)))


def file_sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_json_atomic(doc: dict, path: str, pretty: bool = False) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", encoding="utf-8") as f:
        if pretty:
            json.dump(doc, f, sort_keys=True, indent=2)
        else:
            json.dump(doc, f, sort_keys=True)
        f.write("\n")
    os.replace(tmp, path)


def build_run_manifest(
    config_path: str,
    cfg: RunConfig,
    outputs: list[str],
) -> dict:
    inputs = {}
    for p in (cfg.data.images, cfg.data.texts, cfg.data.manifest):
        inputs[p] = file_sha256(p)
    manifest = {
        "config_path": os.path.abspath(config_path),
        "config_sha256": cfg.config_hash(),
        "inputs_sha256": inputs,
        "outputs": outputs,
        "timestamp_utc": None
        if cfg.train.deterministic
        else datetime.now(timezone.utc).isoformat(),
    }
    return manifest
