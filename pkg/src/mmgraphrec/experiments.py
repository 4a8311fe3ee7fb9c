"""Experiment orchestration shared by the CLI and the study scripts."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import TrainConfig
from .data import Dataset, InteractionTable, make_cold_start_split
from .evaluation import METRICS, EvalReport, aggregate, evaluate_model, write_reports_csv, write_summary_json
from .graph import row_normalize, write_graph, content_graph
from .training import History, TrainingDiverged, build_model, fit, run_fingerprint, save_checkpoint

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Arm:
    name: str
    overrides: tuple
    cf: bool
    text: bool
    image: bool

    def config(self, base: TrainConfig) -> TrainConfig:
        return base.replace(**dict(self.overrides))


def _arm(name, cf, text, image, **overrides):
    return Arm(name, tuple(sorted(overrides.items())), cf, text, image)


COMPONENT_ARMS = (
    _arm("no_cf_att", False, True, True, use_cf_graph=False, use_attention=False),
    _arm("no_cf", False, True, True, use_cf_graph=False),
    _arm("no_att", True, True, True, use_attention=False),
    _arm("full", True, True, True),
)
MODALITY_ARMS = (
    _arm("img", False, False, True, use_cf_graph=False, modality="image"),
    _arm("text", False, True, False, use_cf_graph=False, modality="text"),
    _arm("text_img", False, True, True, use_cf_graph=False, modality="both"),
    _arm("cf_img", True, False, True, modality="image"),
    _arm("cf_text", True, True, False, modality="text"),
    _arm("cf_text_img", True, True, True, modality="both"),
)
LIGHTGCN_ARM = _arm("lightgcn", True, False, False, use_item_graph=False)


@dataclass
class RunResult:
    seed: int
    report: EvalReport
    history: History
    cold_report: EvalReport | None = None


def train_run(dataset: Dataset, cfg: TrainConfig, out_dir=None, train: InteractionTable | None = None,
              negative_pool=None, extra_manifest: dict | None = None):
    """Build, fit and (optionally) persist one model: checkpoint, loss CSV, graph dumps."""
    model = build_model(dataset, cfg, train)
    history = fit(model, dataset, cfg, train=train, negative_pool=negative_pool)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        history.write_csv(out / "train_log.csv")
        save_checkpoint(out, model, cfg, epoch=history.best_epoch, data_fingerprint=dataset.fingerprint,
                        extra={"run_fingerprint": run_fingerprint(cfg, dataset.fingerprint), **(extra_manifest or {})})
        if model.projection is not None:
            model.refresh_support()
            em = row_normalize(content_graph(model.latent_features(), cfg.k, support=model._support))
            write_graph(out / "graph_content.txt", em.detach())
            write_graph(out / "graph_fused.txt", model.item_graph().detach())
    return model, history


def run_seeds(dataset: Dataset, cfg: TrainConfig, seeds: Sequence[int], topn: int = 20, out_dir=None,
              split: str = "test") -> list[RunResult]:
    """Train one model per seed and evaluate each on ``split``."""
    results = []
    for s in seeds:
        c = cfg.replace(seed=int(s))
        d = None if out_dir is None else Path(out_dir) / f"seed_{s}"
        model, hist = train_run(dataset, c, d)
        rep = evaluate_model(model, dataset.split(split), dataset.train, topn, seed=int(s))
        results.append(RunResult(int(s), rep, hist))
    return results


def evaluate(dataset: Dataset, cfg: TrainConfig, seeds: Sequence[int], topn: int = 20, split: str = "test"):
    """Per-seed reports plus their aggregate (mean/std/sem per metric, percentages)."""
    reports = [r.report for r in run_seeds(dataset, cfg, seeds, topn, split=split)]
    return reports, aggregate(reports)


def write_arm_outputs(out_dir, reports: Sequence[EvalReport], cfg: TrainConfig, data_fp: str, name="eval", **extra):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_reports_csv(out / f"{name}.csv", reports)
    write_summary_json(out / f"{name}.json", reports, run_fingerprint(cfg, data_fp), **extra)


def run_arms(dataset: Dataset, base: TrainConfig, arms: Sequence[Arm], seeds: Sequence[int], topn: int = 20,
             out_dir=None) -> dict[str, list[EvalReport] | str]:
    """Run each arm on shared seeds. Arms with identical configs share one run;
    a failing arm is recorded as its error message and the rest continue."""
    results: dict[str, list[EvalReport] | str] = {}
    cache: dict[str, list[EvalReport]] = {}
    for arm in arms:
        cfg = arm.config(base)
        key = cfg.fingerprint()
        try:
            if key not in cache:
                d = None if out_dir is None else Path(out_dir) / arm.name
                runs = run_seeds(dataset, cfg, seeds, topn, out_dir=d)
                cache[key] = [r.report for r in runs]
                if d is not None:
                    write_arm_outputs(d, cache[key], cfg, dataset.fingerprint, arm=arm.name)
            results[arm.name] = cache[key]
        except (TrainingDiverged, ValueError) as e:
            log.error("arm %s failed: %s", arm.name, e)
            results[arm.name] = f"failed: {e}"
    return results


def write_ablation_tables(out_dir, tables: dict[str, Sequence[Arm]], results: dict) -> None:
    """``ablation.csv`` in long form, ``ablation_table.csv`` with one row per arm and component flags."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "ablation.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["table", "arm", "metric", "split", "seed", "value"])
        for table, arms in tables.items():
            for arm in arms:
                reps = results[arm.name]
                if isinstance(reps, str):
                    continue
                for r in reps:
                    for m in METRICS:
                        w.writerow([table, arm.name, m, r.split, r.seed, repr(r.metric(m))])
    with open(out / "ablation_table.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["table", "arm", "cf", "text", "img", "recall", "precision", "ndcg", "status"])
        for table, arms in tables.items():
            for arm in arms:
                reps = results[arm.name]
                flags = [int(arm.cf), int(arm.text), int(arm.image)]
                if isinstance(reps, str):
                    w.writerow([table, arm.name, *flags, "", "", "", reps])
                    continue
                agg = aggregate(reps)
                w.writerow([table, arm.name, *flags, *(f"{agg[m]['mean']:.4f}" for m in METRICS), "ok"])


@dataclass
class ColdStudy:
    cold_items: np.ndarray
    train: InteractionTable
    results: dict[str, list[RunResult]]


def run_cold(dataset: Dataset, base: TrainConfig, arms: Sequence[Arm], seeds: Sequence[int], ratio: float = 0.2,
             lr: float = 1e-5, split_seed: int = 0, topn: int = 20, out_dir=None) -> ColdStudy:
    """Hold out ``ratio`` of the items from training, train each arm at ``lr`` and
    evaluate on the full test split, both overall and restricted to cold items."""
    train, cold = make_cold_start_split(dataset.train, ratio, split_seed)
    pool = np.setdiff1d(np.arange(dataset.n_items), cold)
    out = None if out_dir is None else Path(out_dir)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "cold_items.txt").write_text("".join(f"{i}\n" for i in cold))
        train.write(out / "train_cold.tsv")
    results: dict[str, list[RunResult]] = {}
    for arm in arms:
        runs = []
        for s in seeds:
            cfg = arm.config(base).replace(seed=int(s), lr=lr)
            d = None if out is None else out / arm.name / f"seed_{s}"
            model, hist = train_run(dataset, cfg, d, train=train, negative_pool=pool,
                                    extra_manifest={"cold_items": "../../cold_items.txt", "train_split": "../../train_cold.tsv"})
            full = evaluate_model(model, dataset.test, train, topn, seed=int(s))
            sliced = evaluate_model(model, dataset.test, train, topn, cold_items=cold, seed=int(s))
            runs.append(RunResult(int(s), full, hist, sliced))
        results[arm.name] = runs
        if out is not None:
            cfg = arm.config(base).replace(lr=lr)
            write_arm_outputs(out / arm.name, [r.report for r in runs], cfg, dataset.fingerprint, name="eval_test")
            write_arm_outputs(out / arm.name, [r.cold_report for r in runs], cfg, dataset.fingerprint,
                              name="eval_test_cold", cold_ratio=ratio)
    if out is not None:
        with open(out / "cold.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["arm", "slice", "metric", "seed", "value"])
            for name, runs in results.items():
                for r in runs:
                    for slice_name, rep in (("all", r.report), ("cold", r.cold_report)):
                        for m in METRICS:
                            w.writerow([name, slice_name, m, r.seed, repr(rep.metric(m))])
        (out / "cold_summary.json").write_text(json.dumps({
            name: {"all": aggregate([r.report for r in runs]), "cold": aggregate([r.cold_report for r in runs])}
            for name, runs in results.items()
        }, indent=2, sort_keys=True) + "\n")
    return ColdStudy(cold, train, results)
