"""Click-log ingestion, preprocessing, splitting and synthetic planted-signal data."""
from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

UNKNOWN = "<unk>"
CACHE_MAGIC = "HAMPRUNE-DATASET"
CACHE_VERSION = 1

# default frequency thresholds for Criteo-like / Avazu-like logs
DEFAULT_THRESHOLDS = {"criteo": 10, "avazu": 4}


@dataclass
class FeatureSchema:
    names: list[str]
    kinds: list[str]
    vocabs: list[dict]

    @property
    def cardinalities(self) -> list[int]:
        return [vocab_size(v) for v in self.vocabs]

    @property
    def num_fields(self) -> int:
        return len(self.names)

    def unknown_index(self, j: int) -> int:
        return self.vocabs[j][UNKNOWN]

    def encode_value(self, j: int, raw) -> int:
        vocab = self.vocabs[j]
        return vocab.get(raw, vocab[UNKNOWN])

    def encode_rows(self, raw_rows: Sequence[Sequence]) -> np.ndarray:
        out = np.empty((len(raw_rows), self.num_fields), dtype=np.int64)
        for r, row in enumerate(raw_rows):
            for j, v in enumerate(row):
                out[r, j] = self.encode_value(j, v)
        return out

    def to_json(self) -> dict:
        return {"names": self.names, "kinds": self.kinds, "vocabs": self.vocabs}

    @classmethod
    def from_json(cls, obj) -> "FeatureSchema":
        return cls(list(obj["names"]), list(obj["kinds"]), [dict(v) for v in obj["vocabs"]])

    @classmethod
    def from_cardinalities(cls, cards: Sequence[int], names=None) -> "FeatureSchema":
        """Schema for already-indexed data; the last index of each field is 'unknown'."""
        names = list(names) if names is not None else [f"f{j}" for j in range(len(cards))]
        vocabs = []
        for c in cards:
            v = {str(i): i for i in range(c - 1)}
            v[UNKNOWN] = c - 1
            vocabs.append(v)
        return cls(names, ["categorical"] * len(cards), vocabs)


def vocab_size(vocab: dict) -> int:
    return max(vocab.values()) + 1


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    schema: FeatureSchema
    tag: str = "all"
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.int64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.X.ndim != 2 or self.X.shape[0] != self.y.shape[0]:
            raise ValueError(f"X {self.X.shape} and y {self.y.shape} do not align")
        if self.X.shape[1] != self.schema.num_fields:
            raise ValueError("column count does not match schema")
        cards = np.asarray(self.schema.cardinalities)
        if self.X.size and (self.X.min() < 0 or np.any(self.X.max(axis=0) >= cards)):
            raise ValueError("index exceeds field cardinality")
        if not np.all((self.y == 0) | (self.y == 1)):
            raise ValueError("labels must be 0 or 1")

    def __len__(self):
        return self.X.shape[0]

    def subset(self, rows, tag=None) -> "Dataset":
        return Dataset(self.X[rows], self.y[rows], self.schema, tag or self.tag, self.info)

    def batches(self, batch_size: int, rng: np.random.Generator | None = None):
        order = np.arange(len(self)) if rng is None else rng.permutation(len(self))
        for start in range(0, len(self), batch_size):
            rows = order[start:start + batch_size]
            yield self.X[rows], self.y[rows]


# ---------------------------------------------------------------- preprocessing

def threshold_infrequent(raw_column: Sequence, threshold: int) -> dict:
    """Vocabulary for one field.

    Values seen fewer than ``threshold`` times share the unknown index, which is
    placed after all retained values. Retained values are indexed by first
    appearance. The returned dict always carries the ``UNKNOWN`` key.
    """
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    if len(raw_column) == 0:
        raise ValueError("cannot build a vocabulary from an empty column")
    counts = Counter(raw_column)
    vocab: dict = {}
    for v in raw_column:
        if v != UNKNOWN and v not in vocab and counts[v] >= threshold:
            vocab[v] = len(vocab)
    unk = len(vocab)
    for v in counts:
        if v not in vocab:
            vocab[v] = unk
    vocab[UNKNOWN] = unk
    return vocab


def discretize_numeric(z) -> str:
    """Bucket a numeric value: floor(ln(n)^2) if n = int(z) > 2, else n - 2."""
    if z is None:
        return UNKNOWN
    try:
        n = int(float(z))
    except (TypeError, ValueError, OverflowError):
        return UNKNOWN
    if n > 2:
        return str(int(math.floor(math.log(n) ** 2)))
    return str(n - 2)


def split(dataset: Dataset, ratios=(0.8, 0.1, 0.1), seed=0) -> tuple[Dataset, Dataset, Dataset]:
    parts = split_indices(len(dataset), ratios, seed)
    return tuple(dataset.subset(p, tag) for p, tag in zip(parts, ("train", "val", "test")))


def build_schema(names, kinds, columns: Sequence[Sequence], threshold=0) -> FeatureSchema:
    vocabs = [threshold_infrequent(col, threshold) for col in columns]
    return FeatureSchema(list(names), list(kinds), vocabs)


def read_csv(path, label="label", numeric: Iterable[str] = ()):
    """Read a click log CSV into (field names, kinds, raw token columns, labels)."""
    numeric = set(numeric)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or label not in reader.fieldnames:
            raise ValueError(f"{path}: missing '{label}' column")
        names = [n for n in reader.fieldnames if n != label]
        columns = [[] for _ in names]
        labels = []
        for row in reader:
            labels.append(int(float(row[label])))
            for j, name in enumerate(names):
                raw = row[name]
                if name in numeric:
                    columns[j].append(discretize_numeric(raw if raw != "" else None))
                else:
                    columns[j].append(raw if raw != "" else UNKNOWN)
    kinds = ["numeric" if n in numeric else "categorical" for n in names]
    return names, kinds, columns, np.asarray(labels)


def load_csv(path, label="label", numeric=(), threshold=0, threshold_scope="full",
             ratios=(0.8, 0.1, 0.1), seed=0):
    """Ingest a CSV and return (train, val, test).

    ``threshold_scope`` selects whether value frequencies are counted on the
    full file ("full") or on the training split only ("train").
    """
    names, kinds, columns, labels = read_csv(path, label, numeric)
    return encode_and_split(names, kinds, columns, labels, threshold, threshold_scope, ratios, seed)


def split_indices(n: int, ratios=(0.8, 0.1, 0.1), seed=0):
    ratios = np.asarray(ratios, dtype=float)
    if ratios.shape != (3,) or np.any(ratios < 0):
        raise ValueError("ratios must be three non-negative numbers")
    if not np.isclose(ratios.sum(), 1.0):
        raise ValueError("ratios must sum to 1")
    n_train = int(round(ratios[0] * n))
    n_val = min(int(round(ratios[1] * n)), n - n_train)
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(p) for p in (perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:])]


def encode_and_split(names, kinds, columns, labels, threshold=0, threshold_scope="full",
                     ratios=(0.8, 0.1, 0.1), seed=0):
    labels = np.asarray(labels)
    parts = split_indices(len(labels), ratios, seed)
    if threshold_scope == "full":
        schema = build_schema(names, kinds, columns, threshold)
    elif threshold_scope == "train":
        schema = build_schema(names, kinds, [[col[i] for i in parts[0]] for col in columns], threshold)
    else:
        raise ValueError(f"unknown threshold_scope {threshold_scope!r}")
    rows = list(zip(*columns))
    return tuple(Dataset(schema.encode_rows([rows[i] for i in ids]), labels[ids], schema, tag)
                 for ids, tag in zip(parts, ("train", "val", "test")))


def load_movielens(ratings_path, ratio=(0.8, 0.1, 0.1), seed=0, users_path=None, movies_path=None):
    """MovieLens-1M adapter: rating > 3 is positive, < 3 negative, = 3 dropped."""
    users, movies = {}, {}
    if users_path:
        for line in Path(users_path).read_text(encoding="latin-1").splitlines():
            uid, gender, age, occ, zipc = line.split("::")
            users[uid] = (gender, age, occ, zipc[:3])
    if movies_path:
        for line in Path(movies_path).read_text(encoding="latin-1").splitlines():
            mid, _title, genres = line.split("::")
            movies[mid] = (genres.split("|")[0],)
    names = ["user_id", "movie_id"]
    if users:
        names += ["gender", "age", "occupation", "zip"]
    if movies:
        names += ["genre"]
    columns = [[] for _ in names]
    labels = []
    for line in Path(ratings_path).read_text(encoding="latin-1").splitlines():
        uid, mid, rating, _ts = line.split("::")
        r = int(rating)
        if r == 3:
            continue
        labels.append(1 if r > 3 else 0)
        vals = [uid, mid]
        if users:
            vals += list(users.get(uid, (UNKNOWN,) * 4))
        if movies:
            vals += list(movies.get(mid, (UNKNOWN,)))
        for j, v in enumerate(vals):
            columns[j].append(v)
    kinds = ["categorical"] * len(names)
    return encode_and_split(names, kinds, columns, np.asarray(labels), 0, "full", ratio, seed)


# ---------------------------------------------------------------- cache

def save_cache(path, dataset: Dataset):
    header = json.dumps({"magic": CACHE_MAGIC, "version": CACHE_VERSION, "tag": dataset.tag,
                         "schema": dataset.schema.to_json()})
    with open(path, "wb") as fh:
        np.savez(fh, header=np.array(header), X=dataset.X, y=dataset.y)


def load_cache(path) -> Dataset:
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(str(z["header"]))
        if header.get("magic") != CACHE_MAGIC:
            raise ValueError(f"{path}: not a dataset cache")
        if header["version"] != CACHE_VERSION:
            raise ValueError(f"{path}: unsupported cache version {header['version']}")
        return Dataset(z["X"], z["y"], FeatureSchema.from_json(header["schema"]), header["tag"])


# ---------------------------------------------------------------- synthetic data

@dataclass(frozen=True)
class FieldSpec:
    """One synthetic field.

    ``rank`` is the number of latent directions the field's values carry and
    ``strength`` scales them; rank 0 or strength 0 makes a pure-noise field.
    """
    cardinality: int
    rank: int = 0
    strength: float = 1.0


def synthesize(fields: Sequence[FieldSpec], n_rows: int, seed=0, bias=0.0) -> Dataset:
    """Planted-signal click data.

    Each field j gets hidden latent vectors ``U_j[value]`` whose first
    ``rank_j`` coordinates are active. The label logit is
    ``bias + sum_{i<j} <U_i[x_i], U_j[x_j]>`` so a field of rank r needs r
    embedding directions to express its interactions, and a noise field has
    no influence on labels at all.
    """
    fields = [f if isinstance(f, FieldSpec) else FieldSpec(*f) for f in fields]
    if not fields:
        raise ValueError("need at least one field")
    if n_rows < 1:
        raise ValueError("n_rows must be >= 1")
    for f in fields:
        if f.cardinality < 2 or f.rank < 0 or f.strength < 0:
            raise ValueError(f"invalid field spec {f}")
    rng = np.random.default_rng(seed)
    width = max(1, max(f.rank for f in fields))
    latents = []
    for f in fields:
        U = np.zeros((f.cardinality, width))
        if f.rank and f.strength:
            U[:, :f.rank] = f.strength * rng.standard_normal((f.cardinality, f.rank))
        latents.append(U)
    # last index of every field is reserved as 'unknown' and never drawn
    X = np.stack([rng.integers(0, f.cardinality - 1, size=n_rows) for f in fields], axis=1)
    vecs = [U[X[:, j]] for j, U in enumerate(latents)]
    total = np.sum(vecs, axis=0)
    logit = bias + 0.5 * (np.sum(total * total, axis=1) - sum(np.sum(v * v, axis=1) for v in vecs))
    y = (rng.random(n_rows) < 1.0 / (1.0 + np.exp(-logit))).astype(np.float64)
    schema = FeatureSchema.from_cardinalities([f.cardinality for f in fields])
    return Dataset(X, y, schema, info={"fields": [f.__dict__ for f in fields], "latents": latents})
