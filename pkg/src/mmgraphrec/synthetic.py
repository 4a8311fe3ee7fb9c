"""Seeded synthetic multi-modal interaction data with latent item clusters."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import RAW_FEATURE_DIM, Dataset, FeatureMatrix, IdMap, InteractionTable, split_interactions, write_features


@dataclass
class SyntheticSpec:
    n_users: int = 500
    n_items: int = 300
    n_clusters: int = 10
    dim: int = RAW_FEATURE_DIM
    min_interactions: int = 10
    max_interactions: int = 20
    in_cluster_prob: float = 0.4
    feature_noise: float = 1.0
    popularity_skew: float = 0.0
    seed: int = 0


@dataclass
class SyntheticData:
    pairs: np.ndarray
    text: np.ndarray
    image: np.ndarray
    item_cluster: np.ndarray
    user_cluster: np.ndarray


def generate(spec: SyntheticSpec = SyntheticSpec()) -> SyntheticData:
    """Items belong to clusters; each modality is its cluster centroid plus Gaussian noise.

    Every user prefers one cluster and draws ``in_cluster_prob`` of their items
    from it, the rest uniformly from the catalogue. Within a cluster, item ``r``
    (in a random order) is drawn with probability proportional to
    ``(r + 1) ** -popularity_skew``.
    """
    if spec.n_items < 2 or spec.n_clusters < 1 or spec.min_interactions > spec.max_interactions:
        raise ValueError(f"inconsistent synthetic spec: {spec}")
    rng = np.random.default_rng(spec.seed)
    item_cluster = rng.permutation(np.arange(spec.n_items) % spec.n_clusters)
    text_c = rng.normal(size=(spec.n_clusters, spec.dim))
    image_c = rng.normal(size=(spec.n_clusters, spec.dim))
    text = text_c[item_cluster] + spec.feature_noise * rng.normal(size=(spec.n_items, spec.dim))
    image = image_c[item_cluster] + spec.feature_noise * rng.normal(size=(spec.n_items, spec.dim))
    members = [rng.permutation(np.flatnonzero(item_cluster == c)) for c in range(spec.n_clusters)]
    weights = []
    for m in members:
        w = (np.arange(len(m)) + 1.0) ** -spec.popularity_skew
        weights.append(w / w.sum())
    user_cluster = rng.integers(spec.n_clusters, size=spec.n_users)
    pairs = []
    for u in range(spec.n_users):
        # at least one item stays unseen so every user has a negative
        n_u = min(int(rng.integers(spec.min_interactions, spec.max_interactions + 1)), spec.n_items - 1)
        n_in = min(int(rng.binomial(n_u, spec.in_cluster_prob)), len(members[user_cluster[u]]))
        c = user_cluster[u]
        chosen = set(rng.choice(members[c], size=n_in, replace=False, p=weights[c]).tolist())
        while len(chosen) < n_u:
            chosen.add(int(rng.integers(spec.n_items)))
        pairs.extend((u, i) for i in sorted(chosen))
    return SyntheticData(np.array(pairs, dtype=np.int64), text.astype(np.float32), image.astype(np.float32),
                         item_cluster, user_cluster)


def to_dataset(data: SyntheticData, split_seed: int = 0, ratios=(0.8, 0.1, 0.1)) -> Dataset:
    n_users = int(data.user_cluster.shape[0])
    n_items = int(data.item_cluster.shape[0])
    table = InteractionTable(data.pairs, n_users, n_items, "all")
    train, val, test = split_interactions(table, ratios, split_seed)
    return Dataset(
        IdMap.from_sequence(f"u{u}" for u in range(n_users)),
        IdMap.from_sequence(f"i{i}" for i in range(n_items)),
        train, val, test,
        text=FeatureMatrix(data.text, "text"),
        image=FeatureMatrix(data.image, "image"),
        fingerprint="synthetic",
    )


def write_raw(out_dir, data: SyntheticData) -> dict[str, Path]:
    """Write raw inputs in the formats ``prepare`` ingests."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "interactions": out / "interactions.tsv",
        "text_features": out / "text.mmgf",
        "image_features": out / "image.mmgf",
        "feature_ids": out / "text.mmgf.ids",
    }
    with paths["interactions"].open("w") as fh:
        fh.write("# user\titem\n")
        for u, i in data.pairs:
            fh.write(f"u{u}\ti{i}\n")
    ids = [f"i{i}" for i in range(len(data.item_cluster))]
    write_features(paths["text_features"], FeatureMatrix(data.text, "text"), ids)
    write_features(paths["image_features"], FeatureMatrix(data.image, "image"))
    return paths
