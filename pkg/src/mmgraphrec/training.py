"""Minibatch BPR training with early stopping, and checkpoint IO."""

from __future__ import annotations

import copy
import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import TrainConfig, fingerprint
from .data import Dataset, FeatureMatrix, IngestError, InteractionTable, load_features, write_features
from .evaluation import evaluate_model
from .fusion import fuse_modalities
from .graph import co_occurrence
from .model import BipartiteAdj, GraphFusionRecommender, NegativeSampler

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


class FingerprintMismatch(IngestError):
    pass


def content_features(dataset: Dataset, modality: str) -> np.ndarray:
    return fuse_modalities(dataset.text, dataset.image, modality).values


def build_model(dataset: Dataset, cfg: TrainConfig, train: InteractionTable | None = None) -> GraphFusionRecommender:
    """Wire a model for ``dataset``; ``train`` overrides the bundle's train split (cold start)."""
    cfg.validate()
    train = dataset.train if train is None else train
    torch.set_num_threads(cfg.threads)
    features = content_features(dataset, cfg.modality) if cfg.use_item_graph else None
    cf_graph = co_occurrence(train) if cfg.use_item_graph and cfg.use_cf_graph else None
    gen = torch.Generator().manual_seed(cfg.seed)
    return GraphFusionRecommender(
        dataset.n_users, dataset.n_items, BipartiteAdj.from_train(train), cfg,
        features=features, cf_graph=cf_graph, generator=gen,
    )


def make_optimizer(model: torch.nn.Module, cfg: TrainConfig) -> torch.optim.Optimizer:
    params = list(model.parameters())
    if cfg.optimizer == "sgd":
        return torch.optim.SGD(params, lr=cfg.lr)
    return torch.optim.Adam(params, lr=cfg.lr)


def train_epoch(model, train: InteractionTable, cfg: TrainConfig, optimizer, rng: np.random.Generator,
                sampler: NegativeSampler | None = None) -> float:
    """One pass over the train pairs with one uniform negative per positive."""
    sampler = sampler or NegativeSampler(train)
    if cfg.graph_refresh == "per-epoch":
        model.refresh_support()
    order = rng.permutation(len(train))
    losses = []
    for start in range(0, len(order), cfg.batch_size):
        batch = train.pairs[order[start : start + cfg.batch_size]]
        users, pos = batch[:, 0], batch[:, 1]
        neg = sampler.sample(users, rng)
        if cfg.graph_refresh == "per-step":
            model.refresh_support()
        loss = model.loss(users, pos, neg)
        if not torch.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss {loss.item()} at batch starting {start}")
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        losses.append(loss.item())
    return float(np.mean(losses)) if losses else 0.0


@dataclass
class History:
    rows: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val: float = -math.inf

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "loss", "val_recall"])
            for r in self.rows:
                val = "" if r["val_recall"] is None else repr(r["val_recall"])
                w.writerow([r["epoch"], repr(r["loss"]), val])


def fit(model, dataset: Dataset, cfg: TrainConfig, train: InteractionTable | None = None,
        val: InteractionTable | None = None, negative_pool=None) -> History:
    """Train until ``cfg.epochs`` or until validation Recall@N stalls for ``cfg.patience`` evaluations.

    The parameters of the best validation epoch are restored at the end.
    """
    train = dataset.train if train is None else train
    val = dataset.val if val is None else val
    has_val = val is not None and len(val) > 0
    rng = np.random.default_rng(cfg.seed)
    optimizer = make_optimizer(model, cfg)
    sampler = NegativeSampler(train, negative_pool)
    hist = History()
    best_state = None
    stale = 0
    for epoch in range(cfg.epochs):
        loss = train_epoch(model, train, cfg, optimizer, rng, sampler)
        val_recall = None
        if has_val and (epoch + 1) % cfg.eval_every == 0:
            val_recall = evaluate_model(model, val, train, cfg.eval_topn).recall
            if val_recall > hist.best_val:
                hist.best_val, hist.best_epoch, stale = val_recall, epoch, 0
                best_state = copy.deepcopy(model.state_dict())
            else:
                stale += 1
        hist.rows.append({"epoch": epoch, "loss": loss, "val_recall": val_recall})
        log.debug("epoch %d loss %.6f val_recall %s", epoch, loss, val_recall)
        if stale >= cfg.patience:
            break
    if best_state is not None:
        model.load_state_dict(best_state)
    else:
        hist.best_epoch = len(hist.rows) - 1
    return hist


def save_checkpoint(directory, model: GraphFusionRecommender, cfg: TrainConfig, *, epoch: int,
                    data_fingerprint: str, extra: dict | None = None) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    params = {}
    for name, p in model.named_parameters():
        t = p.detach().to(torch.float32).numpy()
        shape = list(t.shape)
        fname = f"{name}.mmgf"
        write_features(d / fname, FeatureMatrix(t.reshape(-1, shape[-1]) if t.ndim else t.reshape(1, 1), "latent"))
        params[name] = {"file": fname, "shape": shape}
    manifest = {
        "params": params,
        "config": asdict(cfg),
        "config_fingerprint": cfg.fingerprint(),
        "seed": cfg.seed,
        "epoch": epoch,
        "data_fingerprint": data_fingerprint,
        **(extra or {}),
    }
    path = d / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def read_manifest(directory) -> dict:
    p = Path(directory) / "manifest.json"
    if not p.exists():
        raise IngestError(f"{directory}: no checkpoint manifest")
    return json.loads(p.read_text())


def load_checkpoint(directory, dataset: Dataset, train: InteractionTable | None = None):
    """Rebuild the model described by a checkpoint and load its parameters."""
    manifest = read_manifest(directory)
    if manifest["data_fingerprint"] != dataset.fingerprint:
        raise FingerprintMismatch(
            f"data fingerprint mismatch: checkpoint trained on {manifest['data_fingerprint']}, bundle is {dataset.fingerprint}"
        )
    cfg = TrainConfig(**manifest["config"])
    model = build_model(dataset, cfg, train)
    own = dict(model.named_parameters())
    if set(own) != set(manifest["params"]):
        raise IngestError(f"{directory}: checkpoint tensors {sorted(manifest['params'])} do not match model {sorted(own)}")
    with torch.no_grad():
        for name, meta in manifest["params"].items():
            fm = load_features(Path(directory) / meta["file"])
            own[name].copy_(torch.as_tensor(fm.values).reshape(meta["shape"]).to(own[name].dtype))
    model.refresh_support()
    return model, manifest


def run_fingerprint(cfg: TrainConfig, data_fingerprint: str) -> str:
    return fingerprint({"train": asdict(cfg), "data": data_fingerprint})
