"""Full-ranking top-N evaluation: Recall, Precision and NDCG at N."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import hypergeom

from .data import InteractionTable

METRICS = ("recall", "precision", "ndcg")


def rank_topn(scores: np.ndarray, n: int, exclusions: Iterable[int] = ()) -> np.ndarray:
    """Indices of the ``n`` best non-excluded items, best first; ties go to the lower index."""
    if n < 1:
        raise ValueError("n must be >= 1")
    s = np.array(scores, dtype=np.float64, copy=True)
    ex = np.fromiter(exclusions, dtype=np.int64)
    s[ex] = -np.inf
    order = np.argsort(-s, kind="stable")
    return order[: min(n, len(s) - len(np.unique(ex)))]


def metrics_at(ranked: Sequence[int], relevant, n: int) -> tuple[float, float, float]:
    relevant = set(int(x) for x in relevant)
    if not relevant:
        raise ValueError("relevant set is empty")
    top = [int(x) for x in list(ranked)[:n]]
    gains = np.array([1.0 if x in relevant else 0.0 for x in top])
    hits = gains.sum()
    discounts = 1.0 / np.log2(np.arange(2, len(top) + 2))
    dcg = float((gains * discounts).sum())
    idcg = float((1.0 / np.log2(np.arange(2, min(n, len(relevant)) + 2))).sum())
    return hits / len(relevant), hits / n, dcg / idcg


@dataclass
class EvalReport:
    recall: float
    precision: float
    ndcg: float
    n: int
    split: str
    seed: int | None
    n_users: int
    cold_slice: bool = False

    def metric(self, name: str) -> float:
        return getattr(self, name)

    def as_dict(self) -> dict:
        return asdict(self)


def _relevant_lists(split: InteractionTable, cold_items=None) -> dict[int, np.ndarray]:
    pairs = split.pairs
    if cold_items is not None:
        pairs = pairs[np.isin(pairs[:, 1], np.asarray(list(cold_items), dtype=np.int64))]
    out: dict[int, list[int]] = {}
    for u, i in pairs:
        out.setdefault(int(u), []).append(int(i))
    return {u: np.array(v, dtype=np.int64) for u, v in sorted(out.items())}


def _exclusion_lists(exclude: InteractionTable | None, n_users: int) -> list[np.ndarray]:
    if exclude is None:
        return [np.zeros(0, dtype=np.int64)] * n_users
    return exclude.items_by_user()


def evaluate_embeddings(
    user_final: np.ndarray,
    item_final: np.ndarray,
    split: InteractionTable,
    exclude: InteractionTable | None,
    n: int = 20,
    cold_items=None,
    seed: int | None = None,
    block: int = 1024,
) -> EvalReport:
    """Score every user with a relevant item against all items and average the metrics.

    Users with no relevant item in ``split`` (after the optional cold-item
    restriction) are skipped; the returned values are percentages.
    """
    relevant = _relevant_lists(split, cold_items)
    if not relevant:
        raise ValueError(f"no user has a relevant item in the {split.split} split")
    excluded = _exclusion_lists(exclude, split.n_users)
    users = np.array(list(relevant), dtype=np.int64)
    n_items = item_final.shape[0]
    discounts = 1.0 / np.log2(np.arange(2, n + 2))
    totals = np.zeros(3)
    for start in range(0, len(users), block):
        ub = users[start : start + block]
        scores = np.asarray(user_final[ub], dtype=np.float64) @ np.asarray(item_final, dtype=np.float64).T
        for row, u in enumerate(ub):
            scores[row, excluded[u]] = -np.inf
        order = np.argsort(-scores, axis=1, kind="stable")[:, :n]
        rel = np.zeros((len(ub), n_items), dtype=bool)
        for row, u in enumerate(ub):
            rel[row, relevant[u]] = True
        n_rankable = n_items - np.array([len(excluded[u]) for u in ub])
        valid = np.arange(order.shape[1])[None, :] < n_rankable[:, None]
        gains = np.take_along_axis(rel, order, axis=1) & valid
        hits = gains.sum(1)
        n_rel = rel.sum(1)
        idcg = np.cumsum(discounts)[np.minimum(n, n_rel) - 1]
        totals += [
            (hits / n_rel).sum(),
            (hits / n).sum(),
            ((gains * discounts[: order.shape[1]]).sum(1) / idcg).sum(),
        ]
    means = 100.0 * totals / len(users)
    return EvalReport(*means.tolist(), n=n, split=split.split, seed=seed, n_users=len(users),
                      cold_slice=cold_items is not None)


def evaluate_model(model, split, exclude, n: int = 20, cold_items=None, seed=None) -> EvalReport:
    u, i = model.final_embeddings()
    return evaluate_embeddings(u, i, split, exclude, n, cold_items, seed)


def aggregate(reports: Sequence[EvalReport]) -> dict[str, dict[str, float]]:
    """Mean, sample std and standard error of each metric across seeds."""
    out = {}
    for m in METRICS:
        v = np.array([r.metric(m) for r in reports], dtype=np.float64)
        std = float(v.std(ddof=1)) if len(v) > 1 else 0.0
        out[m] = {"mean": float(v.mean()), "std": std, "sem": std / math.sqrt(len(v))}
    return out


def mean_report(reports: Sequence[EvalReport]) -> EvalReport:
    agg = aggregate(reports)
    r0 = reports[0]
    return EvalReport(agg["recall"]["mean"], agg["precision"]["mean"], agg["ndcg"]["mean"],
                      r0.n, r0.split, None, r0.n_users, r0.cold_slice)


def random_recall_baseline(split, exclude, n: int = 20, cold_items=None) -> tuple[float, float]:
    """Expected Recall@n (percent) of a uniformly random ranking, and the std of the user-mean.

    Each user's hit count is hypergeometric: ``|relevant|`` successes among the
    rankable candidates, ``min(n, candidates)`` draws.
    """
    relevant = _relevant_lists(split, cold_items)
    excluded = _exclusion_lists(exclude, split.n_users)
    n_items = split.n_items
    means, variances = [], []
    for u, rel in relevant.items():
        cand = n_items - len(excluded[u])
        dist = hypergeom(cand, len(rel), min(n, cand))
        means.append(dist.mean() / len(rel))
        variances.append(dist.var() / len(rel) ** 2)
    k = len(means)
    return 100.0 * float(np.mean(means)), 100.0 * math.sqrt(float(np.sum(variances))) / k


def write_reports_csv(path, reports: Sequence[EvalReport]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "split", "seed", "value"])
        for r in reports:
            for m in METRICS:
                w.writerow([m, r.split, r.seed, repr(r.metric(m))])
        if len(reports) > 1:
            agg = aggregate(reports)
            for m in METRICS:
                w.writerow([m, reports[0].split, "mean", repr(agg[m]["mean"])])


def read_reports_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_summary_json(path, reports: Sequence[EvalReport], config_fingerprint: str, **extra) -> None:
    summary = {
        "config_fingerprint": config_fingerprint,
        "n": reports[0].n,
        "split": reports[0].split,
        "cold_slice": reports[0].cold_slice,
        "per_seed": [r.as_dict() for r in reports],
        "aggregate": aggregate(reports),
        **extra,
    }
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
