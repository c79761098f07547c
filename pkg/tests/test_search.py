import json
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hamprune import numerics as nx
from hamprune.data import FieldSpec, split, synthesize
from hamprune.masks import MaskState
from hamprune.metrics import auc
from hamprune.models import build_model
from hamprune.numerics import Tensor
from hamprune.optim import Adam, SGD, adam_step, alpha_step
from hamprune.search import (RunReport, SearchConfig, fit, pretrain, report_mask, retrain, run_baseline,
                             run_pipeline, search_stage, taylor_diagnostic, uniform_mask)

QUICK = SearchConfig(batch_size=128, lr=3e-3, alpha_lr=1e-2, pretrain_epochs=4, search_epochs=2,
                     retrain_epochs=3, search_eval_every=10, seed=0)


# ---------------------------------------------------------------- Adam

def test_adam_zero_gradients_leave_params_unchanged():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    opt = Adam([p])
    opt.step([np.zeros(2)])
    assert p.data.tolist() == [1.0, -2.0] and opt.t == 1


def test_adam_first_step_closed_form():
    p = Tensor(np.array([1.0, 1.0, 1.0]), requires_grad=True)
    g = np.array([0.3, -2.0, 1e-9])
    state = adam_step([p], [g], lr=0.01)
    expect = 1.0 - 0.01 * g / (np.abs(g) + 1e-8)
    assert np.allclose(p.data, expect, rtol=0, atol=1e-15) and state.t == 1


def _reference_adam(x, A, b, steps, lr=0.05, b1=0.9, b2=0.999, eps=1e-8):
    # plain python loop, written independently of the library optimizer
    x = list(x)
    n = len(x)
    m, v = [0.0] * n, [0.0] * n
    for t in range(1, steps + 1):
        g = [sum(A[i][k] * x[k] for k in range(n)) - b[i] for i in range(n)]
        for i in range(n):
            m[i] = b1 * m[i] + (1 - b1) * g[i]
            v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i]
            mh = m[i] / (1 - b1 ** t)
            vh = v[i] / (1 - b2 ** t)
            x[i] -= lr * mh / (math.sqrt(vh) + eps)
    return x


def test_adam_matches_reference_trace():
    A = np.array([[3.0, 0.5], [0.5, 1.0]])
    b = np.array([1.0, -2.0])
    x = Tensor(np.array([2.0, 2.0]), requires_grad=True)
    opt = Adam([x], lr=0.05)
    for _ in range(100):
        loss = nx.sub(nx.mul(nx.reduce_sum(nx.mul(x, nx.matmul(Tensor(A), nx.reshape(x, (2, 1))).T[0])), 0.5),
                      nx.reduce_sum(nx.mul(x, b)))
        loss.backward()
        opt.step()
    ref = _reference_adam([2.0, 2.0], A.tolist(), b.tolist(), 100)
    assert np.max(np.abs(x.data - ref)) < 1e-10


def test_optimizers_reject_non_finite_gradients():
    p = Tensor(np.zeros(2), requires_grad=True)
    with pytest.raises(FloatingPointError):
        Adam([p]).step([np.array([np.nan, 0.0])])
    with pytest.raises(FloatingPointError):
        SGD([p]).step([np.array([np.inf, 0.0])])


# ---------------------------------------------------------------- alpha update

def test_alpha_step_exact_in_rational_arithmetic():
    F = Fraction
    out = alpha_step(np.array([F("0.01"), F("0.01")], dtype=object), np.array([F("0.5"), F("-0.2")], dtype=object),
                     F("0.001"), F("0.00005"), 1)
    assert list(out) == [F("0.00945"), F("0.01015")]


def test_alpha_step_float64_is_within_one_ulp_and_reproducible():
    out = alpha_step([0.01, 0.01], [0.5, -0.2], 1e-3, 5e-5, 1)
    expect = np.array([0.00945, 0.01015])
    assert np.all(np.abs(out - expect) <= np.spacing(expect))
    assert out.tobytes() == alpha_step([0.01, 0.01], [0.5, -0.2], 1e-3, 5e-5, 1).tobytes()


def test_alpha_step_sign_zero_is_plain_gradient_descent():
    a, g = np.array([0.3, -0.1, 0.2]), np.array([0.1, 0.4, -0.3])
    assert np.array_equal(alpha_step(a, g, 0.01, 5e-5, 2), a - 0.01 * g)


def test_alpha_step_zero_gradient_drift():
    a = np.array([0.02, 0.01, -0.5])
    assert np.array_equal(alpha_step(a, np.zeros(3), 1e-3, 5e-5, 1), a - 5e-5)
    assert np.array_equal(alpha_step(a, np.zeros(3), 1e-3, 5e-5, 3), a + 5e-5)
    assert np.array_equal(alpha_step(a, np.zeros(3), 1e-3, 0.0, 1), a)


@given(st.lists(st.floats(-0.01, 0.01), min_size=1, max_size=12), st.data())
def test_drift_moves_count_toward_target(alpha, data):
    # per step: above target the count cannot grow, below target it cannot shrink
    a = np.asarray(alpha)
    s = data.draw(st.integers(0, a.size))
    for _ in range(50):
        before = int((a > 0).sum())
        a = alpha_step(a, np.zeros_like(a), 1e-3, 5e-5, s)
        after = int((a > 0).sum())
        if before > s:
            assert after <= before
        elif before < s:
            assert after >= before
        else:
            assert after == before


def test_masked_column_reactivates_when_below_target():
    a = np.array([0.5, 2e-5, -1.0])
    a = alpha_step(a, np.array([0.0, 0.1, 0.0]), 1e-3, 5e-5, 2)  # pushed below zero
    assert (a > 0).tolist() == [True, False, False]
    history = [a]
    for _ in range(5):
        a = alpha_step(a, np.zeros(3), 1e-3, 5e-5, 2)
        history.append(a)
    assert a[1] > 0 and (a > 0).sum() == 2


# ---------------------------------------------------------------- config

def test_search_config_validation():
    with pytest.raises(ValueError):
        SearchConfig(target_size=-1)
    with pytest.raises(ValueError):
        SearchConfig(mu=0.0)
    with pytest.raises(ValueError):
        SearchConfig(strategy="best")
    assert SearchConfig().to_dict()["so_stages"] == ["pretrain"]


# ---------------------------------------------------------------- stages

def _model(splits, kind="fm", seed=0):
    return build_model(kind, splits[0].schema.cardinalities, [3, 3, 3], seed=seed)


def test_lambda_zero_is_unregularized_training(small_splits):
    tr, va, _ = small_splits
    a, b = _model(small_splits), _model(small_splits)
    ha = pretrain(a, tr, va, QUICK.replace(so_lambda=0.0))
    hb = pretrain(b, tr, va, QUICK.replace(so_stages=()))
    assert ha == hb
    assert all(x.data.tobytes() == y.data.tobytes() for x, y in zip(a.parameters(), b.parameters()))


def test_training_loss_decreases_in_first_epoch(small_splits):
    tr, va, _ = small_splits
    m = _model(small_splits)
    first = float(nx.logloss_node(m.logits(tr.X), tr.y).data)
    fit(m, tr, va, QUICK.replace(patience=100), "pretrain", 1)
    assert float(nx.logloss_node(m.logits(tr.X), tr.y).data) < first


def test_divergence_is_reported(small_splits):
    tr, va, _ = small_splits
    m = _model(small_splits)
    m.embeddings.tables[0].data[0, 0] = np.nan
    with pytest.raises(FloatingPointError), np.errstate(invalid="ignore"):
        pretrain(m, tr, va, QUICK)


def test_frozen_dynamics_keep_alpha(small_splits):
    # zero tables are a stationary point of the interactions, so the STE gradients vanish;
    # with s = S the size penalty vanishes too
    tr, va, _ = small_splits
    m = _model(small_splits)
    for t in m.embeddings.tables:
        t.data[...] = 0
    S = m.embeddings.layout.size
    res = search_stage(m, tr, va, QUICK.replace(target_size=S, search_epochs=1))
    assert np.all(res.state.values == QUICK.eps) and res.mask.sum() == S


def test_search_count_within_window_when_stopped(small_splits):
    tr, va, _ = small_splits
    m = _model(small_splits)
    pretrain(m, tr, va, QUICK)
    conf = QUICK.replace(target_size=5, search_epochs=30)
    res = search_stage(m, tr, va, conf)
    assert res.stopped_early
    assert abs(res.state.count() - 5) <= conf.search_window
    assert np.array_equal(res.mask, res.state.sign_mask())


def test_search_rejects_oversized_target(small_splits):
    tr, va, _ = small_splits
    with pytest.raises(ValueError):
        search_stage(_model(small_splits), tr, va, QUICK.replace(target_size=10))


def test_all_ones_retrain_is_continued_training(small_splits):
    tr, va, te = small_splits
    m = _model(small_splits)
    pretrain(m, tr, va, QUICK)
    rr = retrain(m, np.ones(9), tr, va, te, QUICK)
    twin = m.clone()
    fit(twin, tr, va, QUICK, "retrain", QUICK.retrain_epochs)
    assert all(a.data.tobytes() == b.data.tobytes() for a, b in zip(rr.model.parameters(), twin.parameters()))


def test_masked_and_pruned_test_auc_agree(small_splits):
    tr, va, te = small_splits
    m = _model(small_splits, "dcnv2")
    pretrain(m, tr, va, QUICK)
    mask = np.array([1, 0, 1, 1, 1, 0, 0, 1, 0.0])
    assert auc(m.predict(te.X, mask), te.y) == auc(m.pruned(mask).predict(te.X), te.y)


def test_uniform_mask_allocation():
    emb = build_model("fm", [50, 20, 30], [4, 4, 4]).embeddings
    m = uniform_mask(emb, 7)
    assert emb.layout.per_field(m) == [3, 2, 2]  # remainder goes to the largest fields
    assert uniform_mask(emb, 12).sum() == 12
    capped = build_model("fm", [50, 3, 30], [6, 1, 6]).embeddings
    assert capped.layout.per_field(uniform_mask(capped, 9)) == [4, 1, 4]
    with pytest.raises(ValueError):
        uniform_mask(emb, 13)


def test_sam_without_search_epochs_selects_leading_columns(small_splits):
    tr, va, _ = small_splits
    res = search_stage(_model(small_splits), tr, va, QUICK.replace(strategy="sam", target_size=4, search_epochs=0))
    assert res.mask.tolist() == [1, 1, 1, 1, 0, 0, 0, 0, 0]


@pytest.mark.parametrize("strategy", ["ham", "sam", "sam-gs", "ham-p", "uniform"])
def test_strategies_yield_size_s_masks(strategy, small_splits):
    tr, va, te = small_splits
    rep = run_baseline(strategy, tr, va, te, QUICK.replace(target_size=5), dims=[3, 3, 3])
    mask = report_mask(rep.alpha, 5) if strategy == "ham" else np.asarray(rep.mask)
    assert mask.sum() == 5
    assert rep.selected_dims == [int(x) for x in np.add.reduceat(np.asarray(rep.mask), [0, 3, 6])]
    assert rep.embedding_params == sum(c * k for c, k in zip(tr.schema.cardinalities, rep.selected_dims))


def test_report_mask_truncates_and_pads():
    assert report_mask([0.3, 0.1, 0.2, -0.1], 2).tolist() == [1, 0, 1, 0]
    assert report_mask([0.3, -0.2, -0.01, -0.5], 2).tolist() == [1, 0, 1, 0]


def test_unknown_baseline(small_splits):
    with pytest.raises(ValueError):
        run_baseline("random", *small_splits, QUICK)


def test_ham_beats_adversarial_uniform_mask():
    ds = synthesize([FieldSpec(40, 4, 1.0), FieldSpec(40, 4, 1.0), FieldSpec(40, 0)], 20000, seed=0)
    tr, va, te = split(ds, seed=0)
    conf = SearchConfig(batch_size=256, lr=3e-3, alpha_lr=1e-2, pretrain_epochs=30, search_eval_every=20,
                        target_size=6, retrain_epochs=20, seed=0)
    model = build_model("fm", ds.schema.cardinalities, [4, 4, 4], seed=0)
    pretrain(model, tr, va, conf)
    ham = run_pipeline(tr, va, te, conf, pretrained=model)
    adversarial = np.array([1, 0, 0, 0, 1, 0, 0, 0, 1, 1, 1, 1.0])  # keeps the noise field's columns
    worst = retrain(model.clone(), adversarial, tr, va, te, conf)
    assert ham.test_auc > worst.test.auc


def test_taylor_diagnostic_zero_column(small_splits):
    tr = small_splits[0]
    m = _model(small_splits)
    m.embeddings.tables[1].data[:, 2] = 0
    g, d = taylor_diagnostic(m, tr.X[:200], tr.y[:200], column=5)
    assert g == 0.0 and d == 0.0


def test_report_json_round_trip(small_splits):
    rep = run_pipeline(*small_splits, QUICK.replace(target_size=5), dims=[3, 3, 3])
    back = RunReport.from_json(rep.to_json())
    assert back.metrics() == json.loads(json.dumps(rep.metrics()))
    assert set(rep.times) == {"pretrain", "search", "retrain"}


def test_pipeline_is_deterministic(small_splits):
    conf = QUICK.replace(target_size=5, strategy="ham-p")
    a = run_pipeline(*small_splits, conf, dims=[3, 3, 3])
    b = run_pipeline(*small_splits, conf, dims=[3, 3, 3])
    assert a.metrics() == b.metrics()
