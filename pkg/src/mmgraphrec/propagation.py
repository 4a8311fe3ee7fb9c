"""Graph interaction layer over the fused item graph."""

from __future__ import annotations

import torch

from .graph import SparseItemGraph


def spmm(rows: torch.Tensor, cols: torch.Tensor, weights: torch.Tensor, x: torch.Tensor, n_out: int) -> torch.Tensor:
    """``out[r] += w * x[c]`` for every edge; differentiable in ``weights`` and ``x``."""
    out = torch.zeros(n_out, x.shape[1], dtype=x.dtype)
    return out.index_add(0, rows, weights.to(x.dtype).unsqueeze(1) * x[cols])


def propagate(eu: SparseItemGraph, h0: torch.Tensor, steps: int = 1) -> torch.Tensor:
    """Apply ``steps`` rounds of weighted neighbour aggregation.

    Items without edges keep their previous state instead of collapsing to zero,
    so isolated items still contribute their ID embedding downstream.
    """
    if steps < 0:
        raise ValueError(f"steps must be >= 0, got {steps}")
    if h0.ndim != 2 or h0.shape[0] != eu.n:
        raise ValueError(f"state has shape {tuple(h0.shape)}, graph has {eu.n} items")
    if steps == 0:
        return h0
    has_edges = eu.nonempty().unsqueeze(1)
    h = h0
    for _ in range(steps):
        h = torch.where(has_edges, spmm(eu.rows, eu.cols, eu.weights, h, eu.n), h)
    return h
