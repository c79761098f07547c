"""Pretrain / search / retrain pipeline for column-wise embedding pruning."""
from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import numerics as nx
from .data import Dataset
from .embeddings import EmbeddingLayer
from .masks import STRATEGIES, MaskState, select_top_s
from .metrics import EvalResult, evaluate
from .models import CTRModel, build_model
from .numerics import Tensor
from .optim import Adam, alpha_step

log = logging.getLogger(__name__)

ALL_STRATEGIES = STRATEGIES + ("uniform",)
_STAGE_IDS = {"pretrain": 1, "search": 2, "retrain": 3}


@dataclass
class SearchConfig:
    target_size: int = 0
    mu: float = 5e-5
    eps: float = 0.01
    alpha_lr: float = 1e-3
    baseline_alpha_lr: float = 1e-2
    lr: float = 1e-3
    so_lambda: float = 1e-3
    so_normalized: bool = False
    so_stages: tuple = ("pretrain",)
    batch_size: int = 2048
    pretrain_epochs: int = 50
    search_epochs: int = 10
    retrain_epochs: int = 50
    patience: int = 2
    search_window: int = 2
    search_auc_tol: float = 1e-4
    search_auc_evals: int = 3
    search_eval_every: int = 0  # iterations between search-stage evaluations; 0 = once per epoch
    temperature: float = 0.1
    p_min: float = 1e-4
    hamp_estimator: str = "ste"
    strategy: str = "ham"
    seed: int = 0

    def __post_init__(self):
        self.so_stages = tuple(self.so_stages)
        if self.target_size < 0:
            raise ValueError("target_size must be >= 0")
        if self.mu <= 0 or self.eps <= 0 or self.alpha_lr <= 0:
            raise ValueError("mu, eps and alpha_lr must be positive")
        if self.strategy not in ALL_STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")

    def replace(self, **kw) -> "SearchConfig":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["so_stages"] = list(self.so_stages)
        return d


def _rng(config: SearchConfig, stage: str):
    return np.random.default_rng([config.seed, _STAGE_IDS[stage]])


def _cycle(ds: Dataset, batch_size, rng):
    while True:
        yield from ds.batches(batch_size, rng)


def _loss(model: CTRModel, xb, yb, mask, config: SearchConfig, stage: str) -> Tensor:
    loss = nx.logloss_node(model.logits(xb, mask), yb)
    if config.so_lambda > 0 and stage in config.so_stages:
        loss = nx.add(loss, nx.mul(model.embeddings.so_penalty(config.so_normalized), config.so_lambda))
    return loss


def _check(loss: Tensor, stage, epoch, batch):
    if not np.isfinite(loss.data):
        raise FloatingPointError(f"non-finite loss in {stage} stage (epoch {epoch}, batch {batch})")


def _snapshot(model: CTRModel):
    return [p.data.copy() for p in model.parameters()]


def _restore(model: CTRModel, snap):
    for p, a in zip(model.parameters(), snap):
        p.data[...] = a


def fit(model: CTRModel, train: Dataset, val: Dataset, config: SearchConfig, stage: str,
        max_epochs: int, mask=None) -> list[dict]:
    """Adam on all model parameters with early stopping on validation AUC.

    The best-validation parameters are restored before returning.
    """
    rng = _rng(config, stage)
    opt = Adam(model.parameters(), lr=config.lr)
    mask_t = None if mask is None else Tensor(np.asarray(mask, dtype=float))
    history, best_auc, best, bad = [], -np.inf, _snapshot(model), 0
    for epoch in range(max_epochs):
        losses = []
        for b, (xb, yb) in enumerate(train.batches(config.batch_size, rng)):
            loss = _loss(model, xb, yb, mask_t, config, stage)
            _check(loss, stage, epoch, b)
            loss.backward()
            opt.step()
            losses.append(float(loss.data))
        ev = evaluate(model.predict(val.X, mask), val.y)
        history.append({"stage": stage, "epoch": epoch, "train_loss": float(np.mean(losses)),
                        "val_logloss": ev.logloss, "val_auc": ev.auc})
        log.debug("%s epoch %d val_auc %.5f", stage, epoch, ev.auc)
        if ev.auc > best_auc:
            best_auc, best, bad = ev.auc, _snapshot(model), 0
        else:
            bad += 1
            if bad >= config.patience:
                break
    _restore(model, best)
    return history


def pretrain(model: CTRModel, train: Dataset, val: Dataset, config: SearchConfig) -> list[dict]:
    return fit(model, train, val, config, "pretrain", config.pretrain_epochs)


@dataclass
class SearchResult:
    mask: np.ndarray
    state: MaskState | None
    history: list
    stopped_early: bool = False
    reactivations: int = 0


def search_stage(model: CTRModel, train: Dataset, val: Dataset, config: SearchConfig,
                 strategy: str | None = None) -> SearchResult:
    """Alternate alpha updates on validation batches with model updates on training batches.

    The hard-mask strategy steps alpha with the penalised STE rule and stops
    once the positive count is within ``search_window`` of the target and the
    validation AUC has stalled. The other strategies take plain SGD steps and
    run all ``search_epochs``; their retrain mask is the top-s selection.
    """
    strategy = strategy or config.strategy
    S = model.embeddings.layout.size
    s = config.target_size
    if s > S:
        raise ValueError(f"target size {s} exceeds total columns {S}")
    ham = strategy == "ham"
    state = MaskState(S, strategy, init=config.eps if ham else None, temperature=config.temperature,
                      p_min=config.p_min, seed=[config.seed, 7], estimator=config.hamp_estimator)
    rng = _rng(config, "search")
    opt = Adam(model.parameters(), lr=config.lr)
    val_batches = _cycle(val, config.batch_size, rng)
    history, settled = [], []  # settled: AUCs of consecutive evaluations inside the count window
    it, reactivations, stopped = 0, 0, False

    def evaluate_now(epoch):
        ev = evaluate(model.predict(val.X, state.eval_mask()), val.y)
        count = state.count()
        history.append({"stage": "search", "epoch": epoch, "iteration": it, "val_logloss": ev.logloss,
                        "val_auc": ev.auc, "positive_alpha": count})
        if not ham:
            return False
        if abs(count - s) > config.search_window:
            settled.clear()
            return False
        settled.append(ev.auc)
        k = config.search_auc_evals
        return len(settled) >= k and settled[-1] - settled[-k] < config.search_auc_tol

    for epoch in range(config.search_epochs):
        for xb, yb in train.batches(config.batch_size, rng):
            xv, yv = next(val_batches)
            m = state.forward_mask()
            loss = nx.logloss_node(model.logits(xv, m), yv)
            _check(loss, "search", epoch, it)
            loss.backward()
            grad = state.alpha.grad
            if not np.all(np.isfinite(grad)):
                raise FloatingPointError("non-finite alpha gradient in search stage")
            before = state.values > 0
            if ham:
                state.alpha.data[...] = alpha_step(state.values, grad, config.alpha_lr, config.mu, s)
            else:
                state.alpha.data -= config.baseline_alpha_lr * grad
                state.clip()
            reactivations += int(np.count_nonzero(~before & (state.values > 0)))

            m = Tensor(state.forward_mask().data)
            loss = _loss(model, xb, yb, m, config, "search")
            _check(loss, "search", epoch, it)
            loss.backward()
            opt.step()
            it += 1
            if config.search_eval_every and it % config.search_eval_every == 0 and evaluate_now(epoch):
                stopped = True
                break
        if stopped:
            break
        if not config.search_eval_every and evaluate_now(epoch):
            stopped = True
            break

    mask = state.sign_mask() if ham else state.select_top_s(s)
    return SearchResult(mask, state, history, stopped, reactivations)


def uniform_mask(embeddings: EmbeddingLayer, s: int) -> np.ndarray:
    """floor(s/K) leading columns per field, capped at d_j; leftovers go to the largest fields."""
    dims = embeddings.dims
    K = len(dims)
    if not 0 <= s <= sum(dims):
        raise ValueError(f"target size {s} outside [0, {sum(dims)}]")
    alloc = [min(s // K, d) for d in dims]
    order = sorted(range(K), key=lambda j: (-embeddings.cardinalities[j], j))
    left = s - sum(alloc)
    while left > 0:
        for j in order:
            if left and alloc[j] < dims[j]:
                alloc[j] += 1
                left -= 1
    mask = np.zeros(embeddings.layout.size)
    for j, k in enumerate(alloc):
        sl = embeddings.layout.field_slice(j)
        mask[sl.start:sl.start + k] = 1.0
    return mask


@dataclass
class RetrainResult:
    model: CTRModel
    test: EvalResult
    val: EvalResult
    history: list


def retrain(model: CTRModel, mask, train: Dataset, val: Dataset, test: Dataset,
            config: SearchConfig) -> RetrainResult:
    """Freeze ``mask``, drop the masked columns and continue training to convergence."""
    pruned = model.pruned(mask)
    history = fit(pruned, train, val, config, "retrain", config.retrain_epochs)
    return RetrainResult(pruned, evaluate(pruned.predict(test.X), test.y),
                         evaluate(pruned.predict(val.X), val.y), history)


@dataclass
class RunReport:
    strategy: str
    model: str
    seed: int
    target_size: int
    config: dict
    mask: list
    selected_dims: list
    base_dims: list
    mask_size: int
    embedding_params: int
    total_params: int
    test_auc: float
    test_logloss: float
    val_auc: float
    history: list = field(default_factory=list)
    alpha: list | None = None
    search_stopped_early: bool = False
    times: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "RunReport":
        return cls(**json.loads(text))

    def metrics(self) -> dict:
        """Deterministic content of the report (everything except wall-clock times)."""
        d = dataclasses.asdict(self)
        d.pop("times")
        return d


def run_pipeline(train: Dataset, val: Dataset, test: Dataset, config: SearchConfig,
                 model_kind="fm", dims: Sequence[int] | None = None, model_opts=None,
                 pretrained: CTRModel | None = None) -> RunReport:
    """Pretrain, search and retrain for ``config.strategy``.

    Passing ``pretrained`` skips pretraining and starts the search from a copy
    of that model, so several strategies can share one pretrained supernet.
    """
    times = {}
    t0 = time.perf_counter()
    cards = train.schema.cardinalities
    history = []
    if pretrained is None:
        model = build_model(model_kind, cards, dims, seed=config.seed, **(model_opts or {}))
        history += pretrain(model, train, val, config)
    else:
        model = pretrained.clone()
        model_kind = model.kind
    times["pretrain"] = time.perf_counter() - t0

    t1 = time.perf_counter()
    alpha, stopped = None, False
    if config.strategy == "uniform":
        mask = uniform_mask(model.embeddings, config.target_size)
    else:
        res = search_stage(model, train, val, config)
        mask, alpha, stopped = res.mask, res.state.values.tolist(), res.stopped_early
        history += res.history
    times["search"] = time.perf_counter() - t1

    t2 = time.perf_counter()
    rr = retrain(model, mask, train, val, test, config)
    history += rr.history
    times["retrain"] = time.perf_counter() - t2

    return build_report(config, model_kind, model, mask, rr, history, alpha, stopped, times)


def build_report(config: SearchConfig, model_kind: str, supernet: CTRModel, mask, rr: RetrainResult,
                 history, alpha=None, stopped=False, times=None) -> RunReport:
    emb = supernet.embeddings
    pruned = rr.model
    total = pruned.embeddings.count_params(include_projections=True) + pruned.dense_param_count()
    return RunReport(
        strategy=config.strategy, model=model_kind, seed=config.seed, target_size=config.target_size,
        config=config.to_dict(), mask=[int(v) for v in mask], selected_dims=emb.layout.per_field(mask),
        base_dims=list(emb.dims), mask_size=int(np.count_nonzero(mask)),
        embedding_params=emb.count_params(mask), total_params=int(total),
        test_auc=rr.test.auc, test_logloss=rr.test.logloss, val_auc=rr.val.auc,
        history=list(history), alpha=alpha, search_stopped_early=stopped, times=dict(times or {}))


def run_baseline(strategy: str, train, val, test, config: SearchConfig, **kw) -> RunReport:
    if strategy not in ALL_STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    return run_pipeline(train, val, test, config.replace(strategy=strategy), **kw)


def report_mask(alpha, s: int) -> np.ndarray:
    """Size-s mask from HAM weights (positive weights first, then closest to zero)."""
    return select_top_s(alpha, s)


def taylor_diagnostic(model: CTRModel, xb, yb, column: int | None = None, mask=None):
    """STE gradient versus exact leave-one-column-out loss change.

    Returns ``(ste_grad, loss_delta)`` where ``loss_delta = L[on] - L[off]``
    for each column (or just ``column``), measured on the batch ``(xb, yb)``
    around the current binary ``mask`` (all ones by default).
    """
    S = model.embeddings.layout.size
    base = np.ones(S) if mask is None else np.asarray(mask, dtype=float)
    state = MaskState(S, "ham", alpha=np.where(base > 0, 1.0, -1.0))
    loss = nx.logloss_node(model.logits(xb, state.forward_mask()), yb)
    loss.backward()
    grads = state.alpha.grad.copy()
    cols = range(S) if column is None else [column]
    deltas = []
    with nx.no_grad():
        for c in cols:
            on, off = base.copy(), base.copy()
            on[c], off[c] = 1.0, 0.0
            l_on = float(nx.logloss_node(model.logits(xb, Tensor(on)), yb).data)
            l_off = float(nx.logloss_node(model.logits(xb, Tensor(off)), yb).data)
            deltas.append(l_on - l_off)
    if column is not None:
        return float(grads[column]), deltas[0]
    return grads, np.asarray(deltas)
