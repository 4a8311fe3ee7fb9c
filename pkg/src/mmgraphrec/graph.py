"""Item-item graphs: content kNN graph, co-occurrence graph and their attention fusion.

Graphs are kept in COO form (rows, cols, weights) sorted by (row, col). Index
tensors are plain int64; weight tensors may carry autograd history, so every
operation here that produces weights is differentiable with respect to its
weight inputs. Discrete choices (which neighbours survive top-k) are made on
detached values.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import torch

from .data import InteractionTable

GRAPH_KINDS = ("content", "collaborative", "fused")


@dataclass
class SparseItemGraph:
    n: int
    rows: torch.Tensor
    cols: torch.Tensor
    weights: torch.Tensor
    kind: str = "content"

    def __post_init__(self):
        if self.kind not in GRAPH_KINDS:
            raise ValueError(f"unknown graph kind {self.kind!r}")

    @classmethod
    def empty(cls, n: int, kind: str, dtype=torch.float64) -> "SparseItemGraph":
        idx = torch.zeros(0, dtype=torch.long)
        return cls(n, idx, idx.clone(), torch.zeros(0, dtype=dtype), kind)

    @classmethod
    def from_edges(cls, n: int, rows, cols, weights, kind: str) -> "SparseItemGraph":
        rows = torch.as_tensor(np.asarray(rows), dtype=torch.long)
        cols = torch.as_tensor(np.asarray(cols), dtype=torch.long)
        if not isinstance(weights, torch.Tensor):
            weights = torch.as_tensor(np.asarray(weights, dtype=np.float64))
        return cls(n, rows, cols, weights, kind).sorted()

    @classmethod
    def from_dense(cls, m, kind: str = "content") -> "SparseItemGraph":
        m = torch.as_tensor(m)
        off = m.detach().clone()
        off.fill_diagonal_(0)
        r, c = torch.nonzero(off, as_tuple=True)
        return cls(m.shape[0], r, c, m[r, c], kind)

    @property
    def num_edges(self) -> int:
        return int(self.rows.numel())

    def sorted(self) -> "SparseItemGraph":
        order = np.lexsort((self.cols.numpy(), self.rows.numpy()))
        o = torch.as_tensor(order, dtype=torch.long)
        return SparseItemGraph(self.n, self.rows[o], self.cols[o], self.weights[o], self.kind)

    def degree(self) -> torch.Tensor:
        return torch.bincount(self.rows, minlength=self.n)

    def nonempty(self) -> torch.Tensor:
        return self.degree() > 0

    def row_sums(self) -> torch.Tensor:
        return torch.zeros(self.n, dtype=self.weights.dtype).index_add(0, self.rows, self.weights)

    def neighbors(self, i: int) -> list[tuple[int, float]]:
        mask = self.rows == i
        return [(int(j), float(w)) for j, w in zip(self.cols[mask], self.weights[mask].detach())]

    def to_dense(self) -> torch.Tensor:
        out = torch.zeros(self.n, self.n, dtype=self.weights.dtype)
        return out.index_put((self.rows, self.cols), self.weights, accumulate=True)

    def detach(self) -> "SparseItemGraph":
        return SparseItemGraph(self.n, self.rows, self.cols, self.weights.detach(), self.kind)

    def is_symmetric(self, atol: float = 0.0) -> bool:
        d = self.to_dense().detach()
        return bool(torch.allclose(d, d.T, rtol=0, atol=atol))


def _unit_rows(z: torch.Tensor) -> torch.Tensor:
    # double-where keeps the backward pass finite on zero rows
    sq = (z * z).sum(dim=1, keepdim=True)
    pos = sq > 0
    inv = torch.where(pos, torch.rsqrt(torch.where(pos, sq, torch.ones_like(sq))), torch.zeros_like(sq))
    return z * inv


def cosine_rows(z) -> torch.Tensor:
    """Dense cosine similarity between all rows; zero rows have similarity 0."""
    z = torch.as_tensor(z)
    u = _unit_rows(z)
    return u @ u.T


def _topk_support(block: np.ndarray, row_offset: int, k: int) -> tuple[np.ndarray, np.ndarray]:
    block = np.array(block, dtype=np.float64, copy=True)
    b = block.shape[0]
    local = np.arange(b)
    block[local, row_offset + local] = -np.inf
    # stable sort on negated scores: equal scores keep ascending column order
    cols = np.argsort(-block, axis=1, kind="stable")[:, :k]
    rows = np.repeat(np.arange(row_offset, row_offset + b), k)
    return rows, cols.reshape(-1)


def _check_k(k: int, n: int) -> None:
    if not 1 <= k <= n - 1:
        raise ValueError(f"k must be in [1, {n - 1}] for {n} items, got {k}")


def topk_sparsify(m, k: int) -> SparseItemGraph:
    """Keep the k largest off-diagonal entries of each row, then drop non-positive ones."""
    m = torch.as_tensor(m)
    n = m.shape[0]
    _check_k(k, n)
    rows, cols = _topk_support(m.detach().cpu().numpy(), 0, k)
    r = torch.as_tensor(rows, dtype=torch.long)
    c = torch.as_tensor(cols, dtype=torch.long)
    w = m[r, c]
    keep = w.detach() > 0
    return SparseItemGraph(n, r[keep], c[keep], w[keep], "content").sorted()


def content_support(z, k: int, block_size: int = 1024) -> tuple[torch.Tensor, torch.Tensor]:
    """Top-k neighbour indices of each row under cosine similarity, computed in row blocks."""
    z = torch.as_tensor(z)
    n = z.shape[0]
    _check_k(k, n)
    with torch.no_grad():
        u = _unit_rows(z.to(torch.float64))
        rows, cols = [], []
        for start in range(0, n, block_size):
            s = (u[start : start + block_size] @ u.T).numpy()
            r, c = _topk_support(s, start, k)
            rows.append(r)
            cols.append(c)
    return torch.as_tensor(np.concatenate(rows)), torch.as_tensor(np.concatenate(cols))


def content_graph(z, k: int, support=None, block_size: int = 1024) -> SparseItemGraph:
    """Content kNN graph whose edge weights are differentiable cosine values.

    ``support`` (rows, cols) may be passed in to keep the neighbour sets fixed
    between refreshes; the weights are always recomputed from ``z``.
    """
    z = torch.as_tensor(z)
    n = z.shape[0]
    if support is None:
        support = content_support(z, k, block_size)
    r, c = support
    u = _unit_rows(z)
    w = (u[r] * u[c]).sum(dim=1)
    keep = w.detach() > 0
    return SparseItemGraph(n, r[keep], c[keep], w[keep], "content").sorted()


def co_occurrence_counts(train: InteractionTable) -> sp.csr_matrix:
    """Integer matrix of users shared by each item pair, diagonal removed."""
    r = sp.csr_matrix(
        (np.ones(len(train), dtype=np.int64), (train.users, train.items)),
        shape=(train.n_users, train.n_items),
    )
    c = (r.T @ r).tocsr()
    c.setdiag(0)
    c.eliminate_zeros()
    c.sort_indices()
    return c


def co_occurrence(train: InteractionTable, dtype=torch.float64) -> SparseItemGraph:
    c = co_occurrence_counts(train).tocoo()
    if c.nnz == 0:
        return SparseItemGraph.empty(train.n_items, "collaborative", dtype)
    w = c.data.astype(np.float64) / c.data.max()
    g = SparseItemGraph.from_edges(train.n_items, c.row, c.col, w, "collaborative")
    g.weights = g.weights.to(dtype)
    return g


def row_normalize(g: SparseItemGraph) -> SparseItemGraph:
    sums = g.row_sums()
    safe = torch.where(sums > 0, sums, torch.ones_like(sums))
    return SparseItemGraph(g.n, g.rows, g.cols, g.weights / safe[g.rows], g.kind)


def attention_fuse(em: SparseItemGraph, ec: SparseItemGraph, logits=None) -> SparseItemGraph:
    """Per-item convex combination of two row-normalized graphs.

    ``logits`` has shape (n, 2): column 0 weights the content graph, column 1
    the collaborative graph. ``None`` means equal weights. A row present in
    only one source becomes that source row, renormalized.
    """
    if em.n != ec.n:
        raise ValueError(f"graph sizes differ: {em.n} vs {ec.n}")
    n = em.n
    dtype = em.weights.dtype
    if logits is None:
        logits = torch.zeros(n, 2, dtype=dtype)
    if tuple(logits.shape) != (n, 2):
        raise ValueError(f"attention logits must have shape ({n}, 2), got {tuple(logits.shape)}")
    # one side empty: pass the other through exactly (no renormalization rounding)
    if ec.rows.numel() == 0:
        return SparseItemGraph(n, em.rows, em.cols, em.weights, "fused")
    if em.rows.numel() == 0:
        return SparseItemGraph(n, ec.rows, ec.cols, ec.weights.to(dtype), "fused")
    a = torch.softmax(logits, dim=1)
    ec_w = ec.weights.to(dtype)
    m_has, c_has = em.nonempty(), ec.nonempty()
    both = m_has & c_has
    m_sum, c_sum = em.row_sums(), ec.row_sums().to(dtype)
    one = torch.ones(n, dtype=dtype)
    coef_m = torch.where(both, a[:, 0], one / torch.where(m_sum > 0, m_sum, one))
    coef_c = torch.where(both, a[:, 1], one / torch.where(c_sum > 0, c_sum, one))

    rows = torch.cat([em.rows, ec.rows])
    cols = torch.cat([em.cols, ec.cols])
    w = torch.cat([coef_m[em.rows] * em.weights, coef_c[ec.rows] * ec_w])
    keys, inverse = torch.unique(rows * n + cols, sorted=True, return_inverse=True)
    fused = torch.zeros(keys.numel(), dtype=dtype).index_add(0, inverse, w)
    return SparseItemGraph(n, keys // n, keys % n, fused, "fused")


def write_graph(path, g: SparseItemGraph) -> None:
    lines = [f"# kind={g.kind} n={g.n}\n"]
    w = g.weights.detach().to(torch.float64).numpy()
    lines.extend(f"{int(i)}\t{int(j)}\t{float(x)!r}\n" for i, j, x in zip(g.rows, g.cols, w))
    Path(path).write_text("".join(lines))


def read_graph(path) -> SparseItemGraph:
    text = Path(path).read_text().splitlines()
    header = dict(kv.split("=", 1) for kv in text[0].lstrip("#").split())
    body = [ln.split("\t") for ln in text[1:] if ln.strip()]
    rows = [int(x[0]) for x in body]
    cols = [int(x[1]) for x in body]
    w = [float(x[2]) for x in body]
    return SparseItemGraph.from_edges(int(header["n"]), rows, cols, w, header["kind"])
