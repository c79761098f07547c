"""Mixed-dimension embedding tables with column masks and soft orthogonality."""
from __future__ import annotations

import hashlib
from typing import Sequence

import numpy as np

from . import numerics as nx
from .numerics import Tensor


def base_dims(cardinalities: Sequence[int], cap: int = 16) -> list[int]:
    return [min(cap, c) for c in cardinalities]


def schema_hash(cardinalities: Sequence[int]) -> str:
    return hashlib.sha256(",".join(map(str, cardinalities)).encode()).hexdigest()[:16]


class ColumnMaskLayout:
    """Flat slot numbering over all embedding columns, field by field."""

    def __init__(self, dims: Sequence[int]):
        self.dims = [int(d) for d in dims]
        self.offsets = np.concatenate([[0], np.cumsum(self.dims)]).astype(int)
        self.size = int(self.offsets[-1])
        self._fields = np.repeat(np.arange(len(self.dims)), self.dims)

    def __len__(self):
        return self.size

    def slot(self, field: int, column: int) -> int:
        if not 0 <= column < self.dims[field]:
            raise IndexError(f"column {column} out of range for field {field}")
        return int(self.offsets[field] + column)

    def locate(self, slot: int) -> tuple[int, int]:
        if not 0 <= slot < self.size:
            raise IndexError(f"slot {slot} out of range")
        f = int(self._fields[slot])
        return f, int(slot - self.offsets[f])

    def field_slice(self, field: int) -> slice:
        return slice(int(self.offsets[field]), int(self.offsets[field + 1]))

    def per_field(self, mask) -> list[int]:
        """Surviving column count per field for a binary mask."""
        mask = np.asarray(mask)
        return [int(np.count_nonzero(mask[self.field_slice(j)])) for j in range(len(self.dims))]


def _uniform(rng, rows, cols):
    a = np.sqrt(6.0 / (rows + cols)) if rows + cols else 0.0
    return rng.uniform(-a, a, size=(rows, cols))


class EmbeddingLayer:
    """Tables ``V_j`` of shape ``C_j x d_j`` plus optional bias-free projections to ``proj_dim``."""

    def __init__(self, cardinalities, dims=None, proj_dim=None, rng=None, tables=None, projections=None):
        self.cardinalities = [int(c) for c in cardinalities]
        if tables is None:
            dims = base_dims(self.cardinalities) if dims is None else [int(d) for d in dims]
            rng = np.random.default_rng(0) if rng is None else rng
            for c, d in zip(self.cardinalities, dims):
                if d > c:
                    raise ValueError(f"embedding dim {d} exceeds field cardinality {c}")
            tables = [Tensor(_uniform(rng, c, d), requires_grad=True) for c, d in zip(self.cardinalities, dims)]
            if proj_dim is not None:
                projections = [Tensor(_uniform(rng, d, proj_dim), requires_grad=True) for d in dims]
        self.tables = list(tables)
        self.projections = None if projections is None else list(projections)
        self.proj_dim = proj_dim
        self.layout = ColumnMaskLayout([t.shape[1] for t in self.tables])
        if self.projections is not None:
            for t, p in zip(self.tables, self.projections):
                if p.shape != (t.shape[1], proj_dim):
                    raise ValueError("projection shape does not match table")

    @property
    def dims(self) -> list[int]:
        return self.layout.dims

    @property
    def num_fields(self) -> int:
        return len(self.tables)

    @property
    def output_dims(self) -> list[int]:
        return [self.proj_dim] * self.num_fields if self.projections is not None else self.dims

    def parameters(self) -> list[Tensor]:
        return self.tables + (self.projections or [])

    def field_vectors(self, idx, mask: Tensor | None = None) -> list[Tensor]:
        """Per-field (masked, then projected) embeddings of a batch of index rows."""
        idx = np.asarray(idx)
        if idx.ndim != 2 or idx.shape[1] != self.num_fields:
            raise ValueError(f"expected index batch of shape (B, {self.num_fields})")
        out = []
        for j, table in enumerate(self.tables):
            v = nx.gather_rows(table, idx[:, j])
            if mask is not None:
                v = nx.mul(v, mask[self.layout.field_slice(j)])
            if self.projections is not None:
                v = nx.matmul(v, self.projections[j])
            out.append(v)
        return out

    def lookup(self, idx, mask: Tensor | None = None) -> Tensor:
        """Concatenated embedding vector per row."""
        return nx.concat(self.field_vectors(idx, mask), axis=1)

    def so_penalty(self, normalized=False) -> Tensor:
        """Sum over tables of ``||V^T V - I||_F^2 / d^2``.

        With ``normalized`` every table's columns are scaled to unit norm first,
        so the penalty measures pairwise cosine similarity.
        """
        total = Tensor(0.0)
        for V in self.tables:
            d = V.shape[1]
            if d == 0:
                continue
            if normalized:
                norms = np.linalg.norm(V.data, axis=0)
                if np.any(norms == 0):
                    raise ValueError("cosine SO penalty undefined for a zero column")
                V = nx.div(V, nx.sqrt(nx.reduce_sum(nx.square(V), axis=0, keepdims=True)))
            gram = nx.matmul(nx.transpose(V), V)
            diff = nx.sub(gram, np.eye(d))
            total = nx.add(total, nx.mul(nx.reduce_sum(nx.square(diff)), 1.0 / d**2))
        return total

    def materialize_pruned(self, mask) -> "EmbeddingLayer":
        """New layer with masked columns deleted (and matching projection rows)."""
        keep = np.asarray(mask) != 0
        if keep.shape != (self.layout.size,):
            raise ValueError(f"mask length {keep.shape} != {self.layout.size}")
        tables, projections = [], [] if self.projections is not None else None
        for j, V in enumerate(self.tables):
            cols = keep[self.layout.field_slice(j)]
            tables.append(Tensor(V.data[:, cols].copy(), requires_grad=True))
            if projections is not None:
                projections.append(Tensor(self.projections[j].data[cols].copy(), requires_grad=True))
        return EmbeddingLayer(self.cardinalities, proj_dim=self.proj_dim, tables=tables, projections=projections)

    def count_params(self, mask=None, include_projections=False) -> int:
        """Embedding parameters ``sum_j C_j * surviving_j`` (optionally plus projections)."""
        per_field = self.dims if mask is None else self.layout.per_field(mask)
        n = sum(c * k for c, k in zip(self.cardinalities, per_field))
        if include_projections and self.projections is not None:
            n += sum(k * self.proj_dim for k in per_field)
        return int(n)

    def state(self) -> dict:
        out = {f"V{j}": t.data for j, t in enumerate(self.tables)}
        if self.projections is not None:
            out.update({f"P{j}": p.data for j, p in enumerate(self.projections)})
        return out


def column_cosines(V) -> np.ndarray:
    """Absolute pairwise cosine similarities between the columns of a table (upper triangle)."""
    V = np.asarray(V)
    U = V / np.linalg.norm(V, axis=0, keepdims=True)
    C = np.abs(U.T @ U)
    return C[np.triu_indices(V.shape[1], k=1)]
