"""Auxiliary column masks: HAM, SAM, SAM-GS and HAM-p behind one interface.

================  ==========================================  =================
strategy          forward                                     backward
================  ==========================================  =================
``ham``           ``1[alpha > 0]``                            identity (STE)
``sam``           ``alpha`` clipped to [0, 1]                 autograd
``sam-gs``        ``sigmoid((logit(a) + logit(u)) / temp)``   autograd
``ham-p``         ``Bernoulli(p)``                            identity (STE)
================  ==========================================  =================
"""
from __future__ import annotations

import numpy as np

from . import numerics as nx
from .numerics import Tensor

STRATEGIES = ("ham", "sam", "sam-gs", "ham-p")

DEFAULT_INIT = {"ham": 0.01, "sam": 1.0, "sam-gs": 0.9, "ham-p": 0.9}


class MaskState:
    def __init__(self, size: int, strategy="ham", init=None, temperature=0.1, p_min=1e-4,
                 seed=0, estimator="ste", alpha=None):
        if strategy not in STRATEGIES:
            raise ValueError(f"unknown mask strategy {strategy!r}")
        if estimator not in ("ste", "gumbel-ste"):
            raise ValueError(f"unknown estimator {estimator!r}")
        self.size = int(size)
        self.strategy = strategy
        self.temperature = float(temperature)
        self.p_min = float(p_min)
        self.estimator = estimator
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        if alpha is None:
            alpha = np.full(self.size, DEFAULT_INIT[strategy] if init is None else init, dtype=float)
        alpha = np.asarray(alpha, dtype=float)
        if alpha.shape != (self.size,):
            raise ValueError(f"alpha must have shape ({self.size},)")
        self.alpha = Tensor(alpha.copy(), requires_grad=True)
        self._last: Tensor | None = None
        self.clip()

    @property
    def values(self) -> np.ndarray:
        return self.alpha.data

    def clip(self):
        a = self.alpha.data
        if self.strategy == "sam":
            np.clip(a, 0.0, 1.0, out=a)
        elif self.strategy in ("ham-p", "sam-gs"):
            np.clip(a, self.p_min, 1.0 - self.p_min, out=a)

    def forward_mask(self, u=None) -> Tensor:
        """Mask values for one batch, recorded so ``backward_mask`` can follow.

        ``u`` overrides the uniform noise of the stochastic strategies.
        """
        a = self.alpha
        if self.strategy == "ham":
            m = nx.ste_indicator(a)
        elif self.strategy == "sam":
            m = nx.mul(a, 1.0)
        else:
            if u is None:
                u = self.rng.uniform(size=self.size)
            u = np.clip(np.asarray(u, dtype=float), 1e-12, 1.0 - 1e-12)
            if self.strategy == "sam-gs":
                m = nx.gumbel_sigmoid(a, u, self.temperature)
            elif self.estimator == "ste":
                m = nx.bernoulli_ste(a, u)
            else:
                m = nx.gumbel_hard_ste(a, u, self.temperature)
        self._last = m
        return m

    def backward_mask(self, upstream) -> np.ndarray:
        """Gradient with respect to alpha for the last recorded forward."""
        if self._last is None:
            raise RuntimeError("backward_mask called before forward_mask")
        self._last.backward(np.asarray(upstream, dtype=float))
        return self.alpha.grad.copy()

    def eval_mask(self) -> np.ndarray:
        """Noise-free mask used for validation during search."""
        a = self.alpha.data
        if self.strategy == "ham":
            return (a > 0).astype(float)
        if self.strategy == "sam-gs":
            return nx.stable_sigmoid(np.log(a / (1.0 - a)) / self.temperature)
        return a.copy()

    def count(self) -> int:
        return int(np.count_nonzero(self.alpha.data > 0))

    def sign_mask(self) -> np.ndarray:
        if self.strategy != "ham":
            raise ValueError("sign_mask is only defined for the deterministic hard mask")
        return (self.alpha.data > 0).astype(float)

    def select_top_s(self, s: int) -> np.ndarray:
        return select_top_s(self.alpha.data, s)

    def snapshot(self) -> dict:
        return {"strategy": self.strategy, "alpha": self.alpha.data.tolist(), "seed": self.seed,
                "temperature": self.temperature}

    @classmethod
    def from_snapshot(cls, snap: dict) -> "MaskState":
        alpha = np.asarray(snap["alpha"], dtype=float)
        return cls(alpha.size, snap["strategy"], alpha=alpha, seed=snap.get("seed", 0),
                   temperature=snap.get("temperature", 0.1))


def select_top_s(alpha, s: int) -> np.ndarray:
    """Binary mask keeping the ``s`` largest entries; ties go to the lower index."""
    alpha = np.asarray(alpha, dtype=float)
    if not 0 <= s <= alpha.size:
        raise ValueError(f"s={s} outside [0, {alpha.size}]")
    order = np.lexsort((np.arange(alpha.size), -alpha))
    mask = np.zeros(alpha.size)
    mask[order[:s]] = 1.0
    return mask
