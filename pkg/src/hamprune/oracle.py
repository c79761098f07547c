"""Exhaustive mask enumeration for tiny instances."""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .data import Dataset
from .metrics import evaluate
from .models import CTRModel
from .optim import Adam

MAX_SLOTS = 20


@dataclass
class MaskScore:
    mask: tuple
    val_logloss: float
    val_auc: float

    @property
    def bits(self) -> int:
        return int("".join(str(int(b)) for b in self.mask) or "0", 2)


@dataclass
class MaskEnumeration:
    size: int
    target: int | None
    ranking: list  # MaskScore, best first

    @property
    def best_mask(self) -> np.ndarray:
        return np.asarray(self.ranking[0].mask, dtype=float)

    def rank_of(self, mask) -> int:
        """1-based position of ``mask`` in the ranking."""
        key = tuple(int(v != 0) for v in np.asarray(mask))
        for i, row in enumerate(self.ranking):
            if row.mask == key:
                return i + 1
        raise KeyError("mask not part of the enumeration")

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["rank", "mask", "val_logloss", "val_auc"])
            for i, row in enumerate(self.ranking):
                w.writerow([i + 1, "".join(map(str, row.mask)), repr(row.val_logloss), repr(row.val_auc)])


def candidate_masks(size: int, target: int | None):
    if target is None:
        for bits in itertools.product((0, 1), repeat=size):
            yield bits
        return
    for on in itertools.combinations(range(size), target):
        bits = [0] * size
        for i in on:
            bits[i] = 1
        yield tuple(bits)


def score_mask(model: CTRModel, mask, train: Dataset, val: Dataset, retrain_steps=50,
               lr=1e-3, batch_size=256, seed=0) -> MaskScore:
    """Fine-tune a pruned copy for a fixed number of mini-batches and score it on validation data."""
    pruned = model.pruned(np.asarray(mask, dtype=float))
    rng = np.random.default_rng(seed)
    opt = Adam(pruned.parameters(), lr=lr)
    steps = 0
    while steps < retrain_steps:
        for xb, yb in train.batches(batch_size, rng):
            if steps >= retrain_steps:
                break
            loss = nx.logloss_node(pruned.logits(xb), yb)
            loss.backward()
            opt.step()
            steps += 1
    ev = evaluate(pruned.predict(val.X), val.y)
    return MaskScore(tuple(int(b) for b in mask), ev.logloss, ev.auc)


def enumerate_best_mask(model: CTRModel, train: Dataset, val: Dataset, s: int | None,
                        retrain_steps=50, lr=1e-3, batch_size=256, seed=0) -> MaskEnumeration:
    """Score every size-``s`` mask (every mask when ``s`` is None) from the same checkpoint.

    Masks are ranked by validation logloss; ties break on the mask bit
    pattern read as an integer (slot 0 most significant).
    """
    S = model.embeddings.layout.size
    if S > MAX_SLOTS:
        raise ValueError(f"{S} columns exceeds the enumeration cap of {MAX_SLOTS}")
    if s is not None and not 0 <= s <= S:
        raise ValueError(f"target size {s} outside [0, {S}]")
    scores = [score_mask(model, m, train, val, retrain_steps, lr, batch_size, seed)
              for m in candidate_masks(S, s)]
    scores.sort(key=lambda r: (r.val_logloss, r.bits))
    return MaskEnumeration(S, s, scores)
