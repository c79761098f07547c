from __future__ import annotations

import numpy as np


def _check_finite(grads):
    for g in grads:
        if g is not None and not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient passed to optimizer")


class Adam:
    """Adam with bias correction, updating ``Tensor.data`` in place."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads=None):
        if grads is None:
            grads = [p.grad for p in self.params]
        _check_finite(grads)
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if g is None:
                g = np.zeros_like(p.data)
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class SGD:
    def __init__(self, params, lr=1e-2):
        self.params = list(params)
        self.lr = lr

    def step(self, grads=None):
        if grads is None:
            grads = [p.grad for p in self.params]
        _check_finite(grads)
        for p, g in zip(self.params, grads):
            if g is not None:
                p.data -= self.lr * g


def adam_step(params, grads, state: Adam | None = None, lr=1e-3) -> Adam:
    """Functional wrapper: one Adam update of ``params`` (Tensors) with explicit ``grads``."""
    if state is None:
        state = Adam(params, lr=lr)
    state.lr = lr
    state.step(grads)
    return state


def alpha_step(alpha, grad, lr, mu, target) -> np.ndarray:
    """Penalised STE update of the auxiliary weights.

    ``alpha - lr * grad - mu * sign(#{alpha > 0} - target)``; the drift term
    vanishes when the positive count equals the target.
    """
    alpha = _as_array(alpha)
    count = int(np.count_nonzero(alpha > 0))
    return alpha - lr * _as_array(grad) - mu * int(np.sign(count - target))


def _as_array(x):
    # object arrays (e.g. of Fraction) are kept so the update can be checked in exact arithmetic
    a = np.asarray(x)
    return a if a.dtype == object else a.astype(float)
