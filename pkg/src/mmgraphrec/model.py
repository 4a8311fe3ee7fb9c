"""Collaborative-filtering engine: item refinement, LightGCN propagation, BPR scoring."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .config import TrainConfig
from .data import InteractionTable
from .fusion import Projection, project
from .graph import SparseItemGraph, attention_fuse, content_graph, content_support, row_normalize
from .propagation import propagate, spmm

DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass
class BipartiteAdj:
    """Symmetric-normalized user-item adjacency over ``n_users + n_items`` nodes.

    Users occupy node ids ``[0, n_users)``, items follow.
    """

    n_users: int
    n_items: int
    rows: torch.Tensor
    cols: torch.Tensor
    weights: torch.Tensor

    @classmethod
    def from_train(cls, train: InteractionTable, dtype=torch.float64) -> "BipartiteAdj":
        u, i = train.users, train.items
        du = np.bincount(u, minlength=train.n_users).astype(np.float64)
        di = np.bincount(i, minlength=train.n_items).astype(np.float64)
        w = 1.0 / np.sqrt(du[u] * di[i]) if len(u) else np.zeros(0)
        item_nodes = i + train.n_users
        rows = np.concatenate([u, item_nodes])
        cols = np.concatenate([item_nodes, u])
        return cls(
            train.n_users,
            train.n_items,
            torch.as_tensor(rows, dtype=torch.long),
            torch.as_tensor(cols, dtype=torch.long),
            torch.as_tensor(np.concatenate([w, w]), dtype=dtype),
        )

    @property
    def n_nodes(self) -> int:
        return self.n_users + self.n_items

    def to_dense(self) -> torch.Tensor:
        a = torch.zeros(self.n_nodes, self.n_nodes, dtype=self.weights.dtype)
        return a.index_put((self.rows, self.cols), self.weights, accumulate=True)


def lightgcn_forward(user_emb: torch.Tensor, item_emb: torch.Tensor, adj: BipartiteAdj, layers: int = 3):
    """Mean of the layer-0..L representations under normalized neighbour sums."""
    if layers < 0:
        raise ValueError("layers must be >= 0")
    ego = torch.cat([user_emb, item_emb], dim=0)
    if layers == 0:
        return user_emb, item_emb
    total = ego
    for _ in range(layers):
        ego = spmm(adj.rows, adj.cols, adj.weights, ego, adj.n_nodes)
        total = total + ego
    final = total / (layers + 1)
    return final[: adj.n_users], final[adj.n_users :]


def refine_item_embeddings(item_emb: torch.Tensor, h: torch.Tensor) -> torch.Tensor:
    if item_emb.shape != h.shape:
        raise ValueError(f"shape mismatch: {tuple(item_emb.shape)} vs {tuple(h.shape)}")
    return item_emb + F.normalize(h, p=2, dim=1, eps=1e-12)


def score(u: int, i: int, user_final: torch.Tensor, item_final: torch.Tensor) -> float:
    return float(user_final[u] @ item_final[i])


def bpr_loss(users, pos, neg, user_final, item_final, user_emb, item_emb, reg: float = 1e-4) -> torch.Tensor:
    """Mean pairwise log-sigmoid loss plus L2 on the layer-0 rows the batch touches.

    The penalty is ``reg`` times the per-triple sum of squared norms
    (user, positive, negative), averaged over the batch.
    """
    users = torch.as_tensor(users, dtype=torch.long)
    pos = torch.as_tensor(pos, dtype=torch.long)
    neg = torch.as_tensor(neg, dtype=torch.long)
    u = user_final[users]
    diff = (u * item_final[pos]).sum(1) - (u * item_final[neg]).sum(1)
    rank_loss = -F.logsigmoid(diff).mean()
    sq = user_emb[users].pow(2).sum(1) + item_emb[pos].pow(2).sum(1) + item_emb[neg].pow(2).sum(1)
    return rank_loss + reg * sq.mean()


class NegativeSampler:
    """Uniform rejection sampling of items a user has not interacted with in train.

    ``pool`` restricts the candidates (the cold-start protocol keeps held-out
    items out of training entirely, negatives included).
    """

    def __init__(self, train: InteractionTable, pool=None):
        self.n_items = train.n_items
        self.pos_keys = np.sort(train.keys())
        self.pool = np.arange(train.n_items) if pool is None else np.unique(np.asarray(pool, dtype=np.int64))
        in_pool = np.isin(train.items, self.pool)
        counts = np.bincount(train.users[in_pool], minlength=train.n_users)
        self.saturated = np.flatnonzero(counts >= len(self.pool))

    def is_positive(self, users: np.ndarray, items: np.ndarray) -> np.ndarray:
        keys = np.asarray(users, dtype=np.int64) * self.n_items + np.asarray(items, dtype=np.int64)
        idx = np.searchsorted(self.pos_keys, keys)
        idx = np.minimum(idx, max(len(self.pos_keys) - 1, 0))
        return (self.pos_keys[idx] == keys) if len(self.pos_keys) else np.zeros(len(keys), bool)

    def sample(self, users, rng: np.random.Generator) -> np.ndarray:
        users = np.asarray(users, dtype=np.int64)
        bad = np.intersect1d(users, self.saturated)
        if len(bad):
            raise ValueError(f"user {bad[0]} interacted with every candidate item; no negative exists")
        neg = self.pool[rng.integers(len(self.pool), size=len(users))]
        redo = self.is_positive(users, neg)
        while redo.any():
            neg[redo] = self.pool[rng.integers(len(self.pool), size=int(redo.sum()))]
            redo[redo] = self.is_positive(users[redo], neg[redo])
        return neg


def sample_negatives(train: InteractionTable, u: int, rng: np.random.Generator) -> int:
    return int(NegativeSampler(train).sample([u], rng)[0])


class GraphFusionRecommender(nn.Module):
    """Item-graph-enhanced LightGCN.

    Pipeline per forward pass: fused content features -> projection -> cosine
    kNN graph -> row normalization -> attention fusion with the co-occurrence
    graph -> propagation of item ID embeddings. In parallel LightGCN runs over
    the user-item graph on the ID embeddings; the normalized propagated state
    is added to LightGCN's item output.

    ``use_item_graph=False`` drops everything before LightGCN, leaving plain
    LightGCN on the ID embeddings.
    """

    def __init__(
        self,
        n_users: int,
        n_items: int,
        adj: BipartiteAdj,
        cfg: TrainConfig,
        features: np.ndarray | None = None,
        cf_graph: SparseItemGraph | None = None,
        generator: torch.Generator | None = None,
    ):
        super().__init__()
        self.cfg = cfg
        self.n_users, self.n_items = n_users, n_items
        dtype = DTYPES[cfg.dtype]
        if generator is None:
            generator = torch.Generator().manual_seed(cfg.seed)
        self.adj = BipartiteAdj(adj.n_users, adj.n_items, adj.rows, adj.cols, adj.weights.to(dtype))
        self.user_emb = nn.Parameter(torch.randn(n_users, cfg.embed_dim, generator=generator, dtype=dtype) * cfg.init_std)
        self.item_emb = nn.Parameter(torch.randn(n_items, cfg.embed_dim, generator=generator, dtype=dtype) * cfg.init_std)
        self.projection = None
        self.attention_logits = None
        self._support = None
        if not cfg.use_item_graph:
            return
        if features is None:
            raise ValueError("content features are required when the item graph is enabled")
        feats = torch.as_tensor(np.asarray(features), dtype=dtype)
        if feats.shape[0] != n_items:
            raise ValueError(f"{feats.shape[0]} feature rows for {n_items} items")
        self.register_buffer("features", feats, persistent=False)
        self.projection = Projection(feats.shape[1], cfg.latent_dim, generator=generator, dtype=dtype)
        if cfg.use_attention:
            self.attention_logits = nn.Parameter(torch.zeros(n_items, 2, dtype=dtype))
        if cfg.use_cf_graph and cf_graph is not None:
            ec = row_normalize(cf_graph)
        else:
            ec = SparseItemGraph.empty(n_items, "collaborative", dtype)
        self.cf_graph = SparseItemGraph(ec.n, ec.rows, ec.cols, ec.weights.to(dtype).detach(), ec.kind)

    def trainable(self) -> dict[str, nn.Parameter]:
        return dict(self.named_parameters())

    def latent_features(self) -> torch.Tensor:
        return project(self.features, self.projection)

    def refresh_support(self) -> None:
        """Recompute the kNN neighbour sets from the current projection."""
        if self.projection is None:
            return
        with torch.no_grad():
            self._support = content_support(self.latent_features(), self.cfg.k)

    def set_support(self, support) -> None:
        self._support = support

    def item_graph(self) -> SparseItemGraph:
        if self._support is None:
            self.refresh_support()
        em = row_normalize(content_graph(self.latent_features(), self.cfg.k, support=self._support))
        return attention_fuse(em, self.cf_graph, self.attention_logits)

    def forward(self):
        if self.projection is None:
            return lightgcn_forward(self.user_emb, self.item_emb, self.adj, self.cfg.lightgcn_layers)
        h = propagate(self.item_graph(), self.item_emb, self.cfg.propagation_steps)
        user_final, item_cf = lightgcn_forward(self.user_emb, self.item_emb, self.adj, self.cfg.lightgcn_layers)
        return user_final, refine_item_embeddings(item_cf, h)

    def loss(self, users, pos, neg) -> torch.Tensor:
        user_final, item_final = self()
        return bpr_loss(users, pos, neg, user_final, item_final, self.user_emb, self.item_emb, self.cfg.reg)

    @torch.no_grad()
    def final_embeddings(self) -> tuple[np.ndarray, np.ndarray]:
        # inference always ranks with neighbour sets of the current parameters
        self.refresh_support()
        u, i = self()
        return u.to(torch.float64).numpy(), i.to(torch.float64).numpy()
