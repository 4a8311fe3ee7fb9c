"""Command-line entry point: prepare, train, eval, ablate, cold."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, load_config
from .data import (
    IngestError,
    InteractionTable,
    Dataset,
    align_features,
    load_features,
    load_interactions,
    read_bundle,
    split_interactions,
    write_bundle,
)
from .evaluation import aggregate, evaluate_model
from .experiments import LIGHTGCN_ARM, COMPONENT_ARMS, MODALITY_ARMS, run_arms, run_cold, train_run, write_ablation_tables, write_arm_outputs
from .training import TrainingDiverged, load_checkpoint, read_manifest

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 2, 3

log = logging.getLogger("mmgraphrec")


def _seeds(text: str) -> list[int]:
    try:
        out = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from None
    if not out:
        raise argparse.ArgumentTypeError("empty seed list")
    return out


def _common(p: argparse.ArgumentParser, data=True) -> None:
    p.add_argument("--config", help="YAML experiment config")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=_seeds, help="seed or comma-separated seeds")
    if data:
        p.add_argument("--data", help="dataset bundle written by 'prepare'")
    p.add_argument("-v", "--verbose", action="store_true")


def _model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--modality", choices=("text", "image", "both"))
    p.add_argument("--no-cf-graph", action="store_true", help="drop the co-occurrence graph")
    p.add_argument("--no-attention", action="store_true", help="fixed equal weights instead of learned attention")
    p.add_argument("--lightgcn-only", action="store_true", help="no item graph at all")
    p.add_argument("--k", type=int, help="neighbours kept per item")
    p.add_argument("--topn", type=int, help="ranking cutoff")
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--patience", type=int)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mmgraphrec", description="multi-modal item-graph recommender")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="ingest raw logs and features into a dataset bundle")
    _common(p, data=False)
    p.add_argument("--interactions")
    p.add_argument("--text-features")
    p.add_argument("--image-features")
    p.add_argument("--feature-ids", help="item ids, one per feature row (default: <features>.ids)")

    p = sub.add_parser("train", help="train one model per seed")
    _common(p)
    _model_flags(p)

    p = sub.add_parser("eval", help="evaluate saved checkpoints")
    _common(p)
    p.add_argument("--checkpoint", required=True, help="seed directory or a run directory of seed_* dirs")
    p.add_argument("--split", choices=("val", "test"), default="test")
    p.add_argument("--topn", type=int)
    p.add_argument("--cold-slice", action="store_true", help="score only held-out cold items")

    p = sub.add_parser("ablate", help="run the component and modality ablation arms")
    _common(p)
    _model_flags(p)
    p.add_argument("--no-baseline", action="store_true", help="skip the plain LightGCN reference arm")

    p = sub.add_parser("cold", help="cold-start study")
    _common(p)
    _model_flags(p)
    p.add_argument("--cold-ratio", type=float)
    p.add_argument("--cold-lr", type=float)
    return ap


def _experiment(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if getattr(args, "data", None):
        cfg.data = args.data
    if args.out:
        cfg.out = args.out
    if args.seed:
        cfg.seeds = args.seed
    if getattr(args, "topn", None) is not None:
        cfg.topn = args.topn
    t = {}
    for flag, key in (("modality", "modality"), ("k", "k"), ("lr", "lr"), ("batch_size", "batch_size"),
                      ("epochs", "epochs"), ("patience", "patience")):
        v = getattr(args, flag, None)
        if v is not None:
            t[key] = v
    if getattr(args, "no_cf_graph", False):
        t["use_cf_graph"] = False
    if getattr(args, "no_attention", False):
        t["use_attention"] = False
    if getattr(args, "lightgcn_only", False):
        t["use_item_graph"] = False
    if getattr(args, "topn", None) is not None:
        t["eval_topn"] = args.topn
    if getattr(args, "cold_ratio", None) is not None:
        cfg.cold_ratio = args.cold_ratio
    if getattr(args, "cold_lr", None) is not None:
        cfg.cold_lr = args.cold_lr
    try:
        cfg.train = cfg.train.replace(**t)
    except TypeError as e:
        raise ConfigError(str(e)) from None
    return cfg


def _feature_ids(path: str, explicit: str | None) -> list[str] | None:
    p = Path(explicit) if explicit else Path(path + ".ids")
    if not p.exists():
        if explicit:
            raise ConfigError(f"feature id file not found: {p}")
        return None
    return [line.strip() for line in p.read_text(encoding="utf-8").splitlines() if line.strip()]


def cmd_prepare(args) -> int:
    cfg = _experiment(args)
    if args.interactions:
        cfg.interactions = args.interactions
    if args.text_features:
        cfg.text_features = args.text_features
    if args.image_features:
        cfg.image_features = args.image_features
    if args.feature_ids:
        cfg.feature_ids = args.feature_ids
    if not cfg.interactions:
        raise ConfigError("prepare needs --interactions")
    cfg.validate(need_data=False)
    table, users, items = load_interactions(cfg.interactions)
    n_logged = len(items)
    raw = {}
    for name, path in (("text", cfg.text_features), ("image", cfg.image_features)):
        if path:
            ids = _feature_ids(path, cfg.feature_ids if name == "text" else None)
            if ids is None and name == "image" and cfg.text_features:
                ids = _feature_ids(cfg.text_features, cfg.feature_ids)
            raw[name] = (load_features(path), ids)
            for x in ids or ():
                items.add(x)  # feature-only items join the catalogue after logged ones
    feats = {}
    for name, (fm, ids) in raw.items():
        if ids is None:
            if fm.n != len(items):
                raise IngestError(f"{name} features have {fm.n} rows for {len(items)} items and no id sidecar")
            feats[name] = fm
        else:
            feats[name] = align_features(fm, ids, items)
    if len(items) > n_logged:
        log.info("%d feature-only items added to the catalogue", len(items) - n_logged)
    table = InteractionTable(table.pairs, len(users), len(items), "all")
    train, val, test = split_interactions(table, cfg.split_ratios, cfg.split_seed)
    ds = Dataset(users, items, train, val, test, text=feats.get("text"), image=feats.get("image"))
    fp = write_bundle(cfg.out, ds)
    print(json.dumps({"bundle": str(cfg.out), "fingerprint": fp, "n_users": ds.n_users, "n_items": ds.n_items,
                      "train": len(train), "val": len(val), "test": len(test)}))
    return EXIT_OK


def _load(cfg: ExperimentConfig) -> Dataset:
    cfg.validate()
    return read_bundle(cfg.data)


def cmd_train(args) -> int:
    cfg = _experiment(args)
    ds = _load(cfg)
    out = Path(cfg.out)
    for s in cfg.seeds:
        tc = cfg.train.replace(seed=s)
        model, hist = train_run(ds, tc, out / f"seed_{s}")
        rep = evaluate_model(model, ds.val, ds.train, cfg.topn, seed=s)
        log.info("seed %d: best epoch %d, val recall@%d %.4f", s, hist.best_epoch, cfg.topn, rep.recall)
    print(json.dumps({"out": str(out), "seeds": cfg.seeds, "config_fingerprint": cfg.train.fingerprint()}))
    return EXIT_OK


def _checkpoint_dirs(path: Path) -> list[Path]:
    if (path / "manifest.json").exists():
        return [path]
    dirs = sorted((d for d in path.glob("seed_*") if (d / "manifest.json").exists()),
                  key=lambda d: int(d.name.split("_", 1)[1]))
    if not dirs:
        raise IngestError(f"{path}: no checkpoints found")
    return dirs


def cmd_eval(args) -> int:
    cfg = _experiment(args)
    ds = _load(cfg)
    reports, tc = [], None
    for d in _checkpoint_dirs(Path(args.checkpoint)):
        manifest = read_manifest(d)
        train = ds.train
        if manifest.get("train_split"):
            train = InteractionTable.read(d / manifest["train_split"], ds.n_users, ds.n_items, "train")
        cold = None
        if args.cold_slice:
            if not manifest.get("cold_items"):
                raise ConfigError(f"{d}: --cold-slice needs a checkpoint from the cold study")
            cold = np.loadtxt(d / manifest["cold_items"], dtype=np.int64, ndmin=1)
        model, manifest = load_checkpoint(d, ds, train)
        tc = model.cfg
        reports.append(evaluate_model(model, ds.split(args.split), train, cfg.topn, cold_items=cold, seed=manifest["seed"]))
    out = Path(args.out) if args.out else Path(args.checkpoint)
    name = f"eval_{args.split}" + ("_cold" if args.cold_slice else "")
    write_arm_outputs(out, reports, tc, ds.fingerprint, name=name)
    print(json.dumps({"out": str(out / f"{name}.csv"), "aggregate": aggregate(reports)}))
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _experiment(args)
    ds = _load(cfg)
    tables = {"components": COMPONENT_ARMS, "modalities": MODALITY_ARMS}
    if not args.no_baseline:
        tables["baseline"] = (LIGHTGCN_ARM,)
    arms = [a for group in tables.values() for a in group]
    results = run_arms(ds, cfg.train, arms, cfg.seeds, cfg.topn, out_dir=cfg.out)
    write_ablation_tables(cfg.out, tables, results)
    failed = sorted(k for k, v in results.items() if isinstance(v, str))
    print(json.dumps({"out": str(cfg.out), "arms": len(arms), "failed": failed}))
    return EXIT_OK


def cmd_cold(args) -> int:
    cfg = _experiment(args)
    ds = _load(cfg)
    arms = (COMPONENT_ARMS[-1], LIGHTGCN_ARM)
    if args.lightgcn_only:
        arms = (LIGHTGCN_ARM,)
    study = run_cold(ds, cfg.train, arms, cfg.seeds, cfg.cold_ratio, cfg.cold_lr, cfg.split_seed, cfg.topn, cfg.out)
    summary = {name: aggregate([r.cold_report for r in runs])["recall"] for name, runs in study.results.items()}
    print(json.dumps({"out": str(cfg.out), "n_cold": int(len(study.cold_items)), "cold_recall": summary}))
    return EXIT_OK


COMMANDS = {"prepare": cmd_prepare, "train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate, "cold": cmd_cold}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, IngestError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDiverged as e:
        print(f"training diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
