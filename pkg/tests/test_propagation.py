import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from mmgraphrec.graph import SparseItemGraph, row_normalize
from mmgraphrec.propagation import propagate

from .oracles import central_diff_grad, propagate_dense, rel_err


def _stochastic(n, density, rng):
    m = rng.random((n, n)) * (rng.random((n, n)) < density)
    np.fill_diagonal(m, 0)
    return row_normalize(SparseItemGraph.from_dense(torch.as_tensor(m), "fused"))


def test_zero_steps_is_identity():
    h0 = torch.randn(4, 3, dtype=torch.float64)
    assert propagate(SparseItemGraph.empty(4, "fused"), h0, 0) is h0


def test_single_neighbor_copies_state():
    g = SparseItemGraph.from_edges(3, [0], [2], [1.0], "fused")
    h0 = torch.arange(9, dtype=torch.float64).reshape(3, 3)
    h1 = propagate(g, h0, 1)
    assert torch.equal(h1[0], h0[2])
    # rows without edges keep their state
    assert torch.equal(h1[1], h0[1]) and torch.equal(h1[2], h0[2])


def test_matches_dense_matrix_power():
    rng = np.random.default_rng(0)
    g = _stochastic(12, 0.3, rng)
    h0 = rng.normal(size=(12, 5))
    out = propagate(g, torch.as_tensor(h0), 2).numpy()
    np.testing.assert_allclose(out, propagate_dense(g.to_dense().numpy(), h0, 2), rtol=0, atol=1e-9)


def test_errors():
    g = SparseItemGraph.empty(3, "fused")
    with pytest.raises(ValueError):
        propagate(g, torch.zeros(4, 2), 1)
    with pytest.raises(ValueError):
        propagate(g, torch.zeros(3, 2), -1)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 20), st.integers(0, 4), st.integers(0, 10_000))
def test_constant_states_are_preserved(n, steps, seed):
    rng = np.random.default_rng(seed)
    g = _stochastic(n, 0.4, rng)
    c = torch.as_tensor(rng.normal(size=(1, 3))).expand(n, 3)
    torch.testing.assert_close(propagate(g, c, steps), c, rtol=0, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 20), st.integers(0, 4), st.integers(0, 10_000))
def test_max_norm_non_expansion(n, steps, seed):
    rng = np.random.default_rng(seed)
    g = _stochastic(n, 0.4, rng)
    h0 = torch.as_tensor(rng.normal(size=(n, 4)))
    assert propagate(g, h0, steps).abs().max() <= h0.abs().max() + 1e-12


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(1)
    g = _stochastic(7, 0.4, rng)
    w = g.weights.clone().requires_grad_()
    h0 = torch.as_tensor(rng.normal(size=(7, 3))).requires_grad_()
    target = torch.as_tensor(rng.normal(size=(7, 3)))

    def loss():
        gg = SparseItemGraph(g.n, g.rows, g.cols, w, "fused")
        return (torch.sin(propagate(gg, h0, 2)) * target).sum()

    loss().backward()
    for p in (w, h0):
        assert rel_err(p.grad, central_diff_grad(loss, p)) < 1e-4
