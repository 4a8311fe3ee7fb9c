"""Training and experiment configuration."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

BATCH_SIZE_GRID = (512, 1024, 2048, 4096)
LR_GRID = (1e-2, 1e-3, 1e-4)
COLD_START_LR = 1e-5
COLD_START_RATIO = 0.2
DEFAULT_TOPN = 20
DEFAULT_K = 10
EMBED_DIM = 64

MODALITIES = ("text", "image", "both")
REFRESH = ("per-epoch", "per-step")
OPTIMIZERS = ("adam", "sgd")
DTYPES = ("float32", "float64")


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 1024
    epochs: int = 500
    patience: int = 10
    lightgcn_layers: int = 3
    propagation_steps: int = 1
    reg: float = 1e-4
    seed: int = 0
    graph_refresh: str = "per-epoch"
    k: int = DEFAULT_K
    embed_dim: int = EMBED_DIM
    latent_dim: int = EMBED_DIM
    init_std: float = 0.1
    optimizer: str = "adam"
    use_item_graph: bool = True
    use_cf_graph: bool = True
    use_attention: bool = True
    modality: str = "both"
    eval_topn: int = DEFAULT_TOPN
    eval_every: int = 1
    dtype: str = "float32"
    threads: int = 1

    def validate(self) -> "TrainConfig":
        checks = [
            (self.lr > 0, f"lr must be positive, got {self.lr}"),
            (self.batch_size >= 1, f"batch_size must be >= 1, got {self.batch_size}"),
            (self.epochs >= 0, "epochs must be >= 0"),
            (self.patience >= 1, "patience must be >= 1"),
            (self.lightgcn_layers >= 0, "lightgcn_layers must be >= 0"),
            (self.propagation_steps >= 0, "propagation_steps must be >= 0"),
            (self.reg >= 0, "reg must be >= 0"),
            (self.k >= 1, "k must be >= 1"),
            (self.embed_dim >= 1 and self.latent_dim >= 1, "dimensions must be positive"),
            (self.graph_refresh in REFRESH, f"graph_refresh must be one of {REFRESH}"),
            (self.optimizer in OPTIMIZERS, f"optimizer must be one of {OPTIMIZERS}"),
            (self.modality in MODALITIES, f"modality must be one of {MODALITIES}"),
            (self.dtype in DTYPES, f"dtype must be one of {DTYPES}"),
            (self.eval_topn >= 1 and self.eval_every >= 1, "eval_topn and eval_every must be >= 1"),
            (self.threads >= 1, "threads must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        return self

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes).validate()

    def fingerprint(self) -> str:
        return fingerprint(dataclasses.asdict(self))


def fingerprint(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class ExperimentConfig:
    data: str | None = None
    out: str = "runs"
    seeds: list[int] = field(default_factory=lambda: [0])
    topn: int = DEFAULT_TOPN
    split_ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    split_seed: int = 0
    cold_ratio: float = COLD_START_RATIO
    cold_lr: float = COLD_START_LR
    interactions: str | None = None
    text_features: str | None = None
    image_features: str | None = None
    feature_ids: str | None = None
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self, need_data: bool = True) -> "ExperimentConfig":
        if not self.seeds:
            raise ConfigError("seed list must be nonempty")
        if self.topn < 1:
            raise ConfigError("topn must be >= 1")
        if not 0 <= self.cold_ratio < 1:
            raise ConfigError("cold_ratio must be in [0, 1)")
        if need_data:
            if self.data is None:
                raise ConfigError("no dataset bundle given (--data or 'data:' in config)")
            if not (Path(self.data) / "bundle.json").exists():
                raise ConfigError(f"dataset bundle not found: {self.data}")
        self.train.validate()
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _coerce(cls, raw: dict):
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(raw) - set(names)
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**raw)


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        raw = yaml.safe_load(p.read_text()) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"{p}: {e}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{p}: top level must be a mapping")
    train = _coerce(TrainConfig, raw.pop("train", None) or {})
    cfg = _coerce(ExperimentConfig, raw)
    cfg.train = train
    if isinstance(cfg.seeds, int):
        cfg.seeds = [cfg.seeds]
    cfg.split_ratios = tuple(cfg.split_ratios)
    return cfg


def defaults_snapshot() -> dict:
    """The hyperparameter defaults the engine ships with."""
    t = TrainConfig()
    e = ExperimentConfig()
    return {
        "k": t.k,
        "embed_dim": t.embed_dim,
        "latent_dim": t.latent_dim,
        "topn": e.topn,
        "eval_topn": t.eval_topn,
        "cold_lr": e.cold_lr,
        "cold_ratio": e.cold_ratio,
        "batch_size_grid": list(BATCH_SIZE_GRID),
        "lr_grid": list(LR_GRID),
        "batch_size": t.batch_size,
        "lr": t.lr,
    }
