import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmgraphrec.data import InteractionTable
from mmgraphrec.evaluation import (
    EvalReport,
    aggregate,
    evaluate_embeddings,
    metrics_at,
    random_recall_baseline,
    rank_topn,
    read_reports_csv,
    write_reports_csv,
)

from .oracles import metrics_bruteforce


def test_perfect_ranking():
    r, p, n = metrics_at([3, 1, 7, 0, 2], [3, 1], 5)
    assert (r, p, n) == (1.0, 0.4, 1.0)


def test_single_relevant_at_bottom_of_cutoff():
    r, p, n = metrics_at([0, 1, 2, 3], [3], 4)
    assert r == 1.0 and p == 0.25
    assert n == pytest.approx(1 / math.log2(5), abs=1e-15)


def test_empty_relevant_rejected():
    with pytest.raises(ValueError):
        metrics_at([0, 1], [], 2)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 40), st.integers(1, 30), st.integers(0, 10**6))
def test_metrics_match_bruteforce(n_items, n, seed):
    rng = np.random.default_rng(seed)
    ranked = rng.permutation(n_items)
    rel = rng.choice(n_items, size=int(rng.integers(1, n_items + 1)), replace=False)
    got = metrics_at(ranked, rel, n)
    want = metrics_bruteforce(ranked, rel, n)
    for g, w in zip(got, want):
        assert abs(g - w) <= 1e-12
    # precision * n == recall * |rel|
    assert abs(got[1] * n - got[0] * len(rel)) <= 1e-12


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 40), st.integers(0, 10**6))
def test_recall_monotone_in_n(n_items, seed):
    rng = np.random.default_rng(seed)
    ranked = rng.permutation(n_items)
    rel = rng.choice(n_items, size=int(rng.integers(1, n_items + 1)), replace=False)
    recalls = [metrics_at(ranked, rel, n)[0] for n in range(1, n_items + 1)]
    assert all(a <= b for a, b in zip(recalls, recalls[1:]))
    assert recalls[-1] == 1.0


def test_rank_topn_ties_go_to_lower_index():
    assert rank_topn(np.array([1.0, 2.0, 2.0, 0.5]), 3).tolist() == [1, 2, 0]


def test_rank_topn_exclusions():
    s = np.array([5.0, 4.0, 3.0, 2.0])
    assert rank_topn(s, 2, [0]).tolist() == [1, 2]
    assert rank_topn(s, 10, [0, 1, 2]).tolist() == [3]


def test_evaluate_embeddings_matches_loop():
    rng = np.random.default_rng(3)
    nu, ni = 12, 30
    uf, itf = rng.normal(size=(nu, 5)), rng.normal(size=(ni, 5))
    pairs = sorted({(int(u), int(i)) for u, i in zip(rng.integers(nu, size=120), rng.integers(ni, size=120))})
    train = InteractionTable(pairs[::2], nu, ni, "train")
    test = InteractionTable([p for p in pairs[1::2] if p not in set(pairs[::2])], nu, ni, "test")
    rep = evaluate_embeddings(uf, itf, test, train, 10)
    per_user = []
    for u in sorted(set(test.users.tolist())):
        rel = test.items[test.users == u]
        ranked = rank_topn(uf[u] @ itf.T, 10, train.items[train.users == u])
        per_user.append(metrics_bruteforce(ranked, rel, 10))
    want = 100 * np.mean(per_user, axis=0)
    np.testing.assert_allclose([rep.recall, rep.precision, rep.ndcg], want, rtol=0, atol=1e-9)
    assert rep.n_users == len(per_user)


def test_cold_slice_restricts_relevant_items():
    uf = np.eye(2)
    itf = np.array([[1.0, 0], [0.9, 0], [0, 1], [0, 0.5]])
    test = InteractionTable([[0, 1], [1, 3]], 2, 4, "test")
    rep = evaluate_embeddings(uf, itf, test, None, 1, cold_items=[3])
    # only user 1 has a cold relevant item, and it sits below item 2
    assert rep.n_users == 1 and rep.recall == 0.0 and rep.cold_slice
    with pytest.raises(ValueError):
        evaluate_embeddings(uf, itf, test, None, 1, cold_items=[0])


def test_reports_are_percentages():
    uf = np.array([[1.0]])
    itf = np.array([[1.0], [0.5], [0.1]])
    test = InteractionTable([[0, 0], [0, 2]], 1, 3, "test")
    rep = evaluate_embeddings(uf, itf, test, None, 2)
    assert rep.recall == 50.0 and rep.precision == 50.0
    assert f"{0.0869 * 100:.2f}" == "8.69"


def test_aggregate_uses_sample_std():
    reps = [EvalReport(v, 0.0, 0.0, 20, "test", s, 1) for s, v in enumerate([1.0, 2.0, 3.0])]
    agg = aggregate(reps)
    assert agg["recall"]["mean"] == 2.0
    assert agg["recall"]["std"] == pytest.approx(1.0)
    assert agg["recall"]["sem"] == pytest.approx(1 / math.sqrt(3))


def test_random_baseline_matches_simulation():
    rng = np.random.default_rng(0)
    nu, ni = 30, 50
    test = InteractionTable(sorted({(u, int(i)) for u in range(nu) for i in rng.choice(ni, 3, replace=False)}), nu, ni, "test")
    mean, sd = random_recall_baseline(test, None, 10)
    assert mean == pytest.approx(100 * 10 / 50)
    sims = [evaluate_embeddings(rng.normal(size=(nu, 8)), rng.normal(size=(ni, 8)), test, None, 10).recall
            for _ in range(300)]
    assert np.mean(sims) == pytest.approx(mean, abs=4 * sd / math.sqrt(300))
    assert np.std(sims) == pytest.approx(sd, rel=0.25)


def test_reports_csv_roundtrip(tmp_path):
    reps = [EvalReport(10.0 + s, 1.0, 5.0, 20, "test", s, 4) for s in range(2)]
    write_reports_csv(tmp_path / "r.csv", reps)
    rows = read_reports_csv(tmp_path / "r.csv")
    assert list(rows[0]) == ["metric", "split", "seed", "value"]
    assert len(rows) == 9
    assert float([r for r in rows if r["seed"] == "mean" and r["metric"] == "recall"][0]["value"]) == 10.5
