"""Interaction logs, id maps, splits and the MMGF feature-matrix format."""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MAGIC = b"MMGF"
FORMAT_VERSION = 1
MODALITY_TAGS = {"text": 0, "image": 1, "fused": 2, "latent": 3}
TAG_MODALITIES = {v: k for k, v in MODALITY_TAGS.items()}
RAW_FEATURE_DIM = 768

_HEADER = struct.Struct("<4sIBII")


class IngestError(ValueError):
    """Base class for everything that can go wrong while reading inputs."""


class ParseError(IngestError):
    def __init__(self, path, line_no: int, line: str, reason: str):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {reason}: {line!r}")


class EmptyDatasetError(IngestError):
    pass


class FeatureFormatError(IngestError):
    pass


class DimensionMismatchError(IngestError):
    pass


class NonFiniteError(IngestError):
    pass


@dataclass
class IdMap:
    external_ids: list[str] = field(default_factory=list)
    index_of: dict[str, int] = field(default_factory=dict)

    @classmethod
    def from_sequence(cls, ids: Iterable[str]) -> "IdMap":
        m = cls()
        for x in ids:
            m.add(x)
        return m

    def add(self, external_id: str) -> int:
        idx = self.index_of.get(external_id)
        if idx is None:
            idx = len(self.external_ids)
            self.external_ids.append(external_id)
            self.index_of[external_id] = idx
        return idx

    def __len__(self) -> int:
        return len(self.external_ids)

    def __getitem__(self, external_id: str) -> int:
        return self.index_of[external_id]

    def write(self, path) -> None:
        Path(path).write_text("".join(f"{x}\n" for x in self.external_ids), encoding="utf-8")

    @classmethod
    def read(cls, path) -> "IdMap":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        m = cls.from_sequence(lines)
        if len(m) != len(lines):
            raise IngestError(f"{path}: duplicate ids in id map")
        return m


@dataclass
class InteractionTable:
    """Deduplicated (user, item) pairs, stored as an int64 array of shape (m, 2)."""

    pairs: np.ndarray
    n_users: int
    n_items: int
    split: str = "train"

    def __post_init__(self):
        self.pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def users(self) -> np.ndarray:
        return self.pairs[:, 0]

    @property
    def items(self) -> np.ndarray:
        return self.pairs[:, 1]

    def keys(self) -> np.ndarray:
        return self.pairs[:, 0] * self.n_items + self.pairs[:, 1]

    def pair_set(self) -> set[tuple[int, int]]:
        return {(int(u), int(i)) for u, i in self.pairs}

    def items_by_user(self) -> list[np.ndarray]:
        out: list[list[int]] = [[] for _ in range(self.n_users)]
        for u, i in self.pairs:
            out[u].append(int(i))
        return [np.array(sorted(x), dtype=np.int64) for x in out]

    def validate(self) -> None:
        if len(self.pairs):
            if self.users.min() < 0 or self.users.max() >= self.n_users:
                raise IngestError("user index out of range")
            if self.items.min() < 0 or self.items.max() >= self.n_items:
                raise IngestError("item index out of range")
        if len(np.unique(self.keys())) != len(self.pairs):
            raise IngestError(f"duplicate pairs in {self.split} split")

    def with_pairs(self, pairs, split: str | None = None) -> "InteractionTable":
        return InteractionTable(pairs, self.n_users, self.n_items, split or self.split)

    def write(self, path) -> None:
        np.savetxt(path, self.pairs, fmt="%d", delimiter="\t")

    @classmethod
    def read(cls, path, n_users: int, n_items: int, split: str) -> "InteractionTable":
        text = Path(path).read_text()
        pairs = np.loadtxt(path, dtype=np.int64, delimiter="\t", ndmin=2) if text.strip() else np.zeros((0, 2))
        t = cls(pairs, n_users, n_items, split)
        t.validate()
        return t


def _canonical(pairs: np.ndarray) -> np.ndarray:
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if len(pairs) == 0:
        return pairs
    pairs = np.unique(pairs, axis=0)
    return pairs


def load_interactions(path, format: str = "tsv", item_map: IdMap | None = None):
    """Read a ``user<TAB>item[<TAB>timestamp]`` log.

    Returns ``(table, user_map, item_map)``. Duplicate records collapse to one
    pair; timestamps are ignored. An existing ``item_map`` is extended in place
    so feature-only items can be registered up front.
    """
    if format not in ("tsv", "txt"):
        raise IngestError(f"unsupported interaction format {format!r}")
    path = Path(path)
    users = IdMap()
    items = item_map if item_map is not None else IdMap()
    seen: dict[tuple[int, int], None] = {}
    with path.open(encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = line.split("\t") if "\t" in line else line.split()
            if len(fields) not in (2, 3):
                raise ParseError(path, line_no, line, f"expected 2 or 3 fields, got {len(fields)}")
            uid, iid = fields[0].strip(), fields[1].strip()
            if not uid or not iid:
                raise ParseError(path, line_no, line, "empty id")
            if len(fields) == 3:
                try:
                    float(fields[2])
                except ValueError:
                    raise ParseError(path, line_no, line, "timestamp is not numeric") from None
            seen[(users.add(uid), items.add(iid))] = None
    if not seen:
        raise EmptyDatasetError(f"{path}: no interactions")
    table = InteractionTable(_canonical(np.array(list(seen), dtype=np.int64)), len(users), len(items))
    return table, users, items


def split_interactions(table: InteractionTable, ratios: Sequence[float] = (0.8, 0.1, 0.1), seed: int = 0):
    """Per-user random holdout.

    Validation and test get ``floor(ratio * n_u)`` items each, train keeps the
    rest. Users with fewer than three interactions stay entirely in train.
    """
    r_train, r_val, r_test = ratios
    if min(ratios) <= 0 or not math.isclose(r_train + r_val + r_test, 1.0, abs_tol=1e-9):
        raise ValueError(f"ratios must be positive and sum to 1, got {ratios}")
    rng = np.random.default_rng(seed)
    parts: dict[str, list[tuple[int, int]]] = {"train": [], "val": [], "test": []}
    for u, items in enumerate(table.items_by_user()):
        n = len(items)
        if n == 0:
            continue
        if n < 3:
            parts["train"].extend((u, int(i)) for i in items)
            continue
        perm = items[rng.permutation(n)]
        n_val = int(math.floor(n * r_val + 1e-9))
        n_test = int(math.floor(n * r_test + 1e-9))
        parts["val"].extend((u, int(i)) for i in perm[:n_val])
        parts["test"].extend((u, int(i)) for i in perm[n_val : n_val + n_test])
        parts["train"].extend((u, int(i)) for i in perm[n_val + n_test :])
    return tuple(
        InteractionTable(_canonical(np.array(parts[s], dtype=np.int64)), table.n_users, table.n_items, s)
        for s in ("train", "val", "test")
    )


def make_cold_start_split(train: InteractionTable, ratio: float = 0.2, seed: int = 0):
    """Pick ``floor(ratio * n_items)`` items and drop every train pair touching them."""
    if not 0 <= ratio < 1:
        raise ValueError(f"cold-start ratio must be in [0, 1), got {ratio}")
    n_cold = int(math.floor(ratio * train.n_items + 1e-9))
    rng = np.random.default_rng(seed)
    cold = np.sort(rng.choice(train.n_items, size=n_cold, replace=False)).astype(np.int64)
    keep = ~np.isin(train.items, cold)
    return train.with_pairs(train.pairs[keep]), cold


@dataclass
class FeatureMatrix:
    values: np.ndarray
    modality: str = "fused"

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 2:
            raise DimensionMismatchError(f"feature matrix must be 2-D, got shape {self.values.shape}")
        if self.modality not in MODALITY_TAGS:
            raise ValueError(f"unknown modality {self.modality!r}")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]


def write_features(path, features: FeatureMatrix, ids: Sequence[str] | None = None) -> None:
    values = np.ascontiguousarray(features.values, dtype="<f4")
    rows, cols = values.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, MODALITY_TAGS[features.modality], rows, cols))
        fh.write(values.tobytes())
    if ids is not None:
        Path(str(path) + ".ids").write_text("".join(f"{x}\n" for x in ids), encoding="utf-8")


def load_features(path, n_items: int | None = None, expected_dim: int | None = None) -> FeatureMatrix:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size or raw[:4] != MAGIC:
        raise FeatureFormatError(f"{path}: bad magic, not an MMGF file")
    magic, version, tag, rows, cols = _HEADER.unpack_from(raw)
    if version != FORMAT_VERSION:
        raise FeatureFormatError(f"{path}: unsupported format version {version}")
    if tag not in TAG_MODALITIES:
        raise FeatureFormatError(f"{path}: unknown modality tag {tag}")
    body = raw[_HEADER.size :]
    if len(body) != rows * cols * 4:
        raise FeatureFormatError(f"{path}: payload has {len(body)} bytes, header promises {rows * cols * 4}")
    if n_items is not None and rows != n_items:
        raise DimensionMismatchError(f"{path}: {rows} rows but the item map has {n_items} items")
    if expected_dim is not None and cols != expected_dim:
        raise DimensionMismatchError(f"{path}: {cols} columns, expected {expected_dim}")
    values = np.frombuffer(body, dtype="<f4").reshape(rows, cols).copy()
    if not np.isfinite(values).all():
        bad = np.argwhere(~np.isfinite(values))[0]
        raise NonFiniteError(f"{path}: non-finite entry at row {bad[0]}, col {bad[1]}")
    return FeatureMatrix(values, TAG_MODALITIES[tag])


def align_features(features: FeatureMatrix, ids: Sequence[str], item_map: IdMap) -> FeatureMatrix:
    """Reorder rows listed in ``ids`` order into ``item_map`` order.

    Items known to the map but missing from the feature file get a zero row.
    """
    out = np.zeros((len(item_map), features.d), dtype=np.float32)
    if len(ids) != features.n:
        raise DimensionMismatchError(f"{len(ids)} feature ids for {features.n} rows")
    for row, x in enumerate(ids):
        out[item_map[x]] = features.values[row]
    return FeatureMatrix(out, features.modality)


@dataclass
class Dataset:
    """An indexed bundle as written by ``write_bundle``."""

    user_map: IdMap
    item_map: IdMap
    train: InteractionTable
    val: InteractionTable
    test: InteractionTable
    text: FeatureMatrix | None = None
    image: FeatureMatrix | None = None
    fingerprint: str = ""

    @property
    def n_users(self) -> int:
        return len(self.user_map)

    @property
    def n_items(self) -> int:
        return len(self.item_map)

    def split(self, name: str) -> InteractionTable:
        return {"train": self.train, "val": self.val, "test": self.test}[name]


BUNDLE_FILES = ("users.txt", "items.txt", "train.tsv", "val.tsv", "test.tsv")


def _fingerprint(directory: Path, names: Iterable[str]) -> str:
    h = hashlib.sha256()
    for name in names:
        p = directory / name
        if p.exists():
            h.update(name.encode())
            h.update(p.read_bytes())
    return h.hexdigest()[:16]


def write_bundle(out_dir, dataset: Dataset) -> str:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataset.user_map.write(out / "users.txt")
    dataset.item_map.write(out / "items.txt")
    for s in ("train", "val", "test"):
        dataset.split(s).write(out / f"{s}.tsv")
    names = list(BUNDLE_FILES)
    for name, fm in (("text", dataset.text), ("image", dataset.image)):
        if fm is not None:
            write_features(out / f"{name}.mmgf", fm)
            names.append(f"{name}.mmgf")
    fp = _fingerprint(out, names)
    meta = {"n_users": dataset.n_users, "n_items": dataset.n_items, "files": names, "fingerprint": fp}
    (out / "bundle.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    dataset.fingerprint = fp
    return fp


def read_bundle(directory) -> Dataset:
    d = Path(directory)
    meta_path = d / "bundle.json"
    if not meta_path.exists():
        raise IngestError(f"{d}: not a dataset bundle (bundle.json missing)")
    meta = json.loads(meta_path.read_text())
    users, items = IdMap.read(d / "users.txt"), IdMap.read(d / "items.txt")
    nu, ni = len(users), len(items)
    tables = [InteractionTable.read(d / f"{s}.tsv", nu, ni, s) for s in ("train", "val", "test")]
    feats = {}
    for name in ("text", "image"):
        p = d / f"{name}.mmgf"
        feats[name] = load_features(p, n_items=ni) if p.exists() else None
    fp = _fingerprint(d, meta["files"])
    if fp != meta["fingerprint"]:
        raise IngestError(f"{d}: bundle fingerprint mismatch, files changed since prepare")
    return Dataset(users, items, *tables, text=feats["text"], image=feats["image"], fingerprint=fp)
