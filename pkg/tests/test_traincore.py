from __future__ import annotations

import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from timbre.errors import TrainingFault
from timbre.traincore import (REGISTRY, AdamState, Schedule, adam_step, backward, bce_loss, ce_loss_soft,
                              finite_diff_check, lr_at, smooth_targets)

# Worst relative error allowed per op; the composed front-end path gets 1e-3.
FD_TOLERANCE = {name: 1e-4 for name in REGISTRY}
FD_TOLERANCE["sinc_frontend"] = FD_TOLERANCE["sinc_frontend_full"] = 1e-3


@pytest.mark.parametrize("op", sorted(REGISTRY))
def test_finite_differences(op):
    assert finite_diff_check(op) < FD_TOLERANCE[op]


def test_finite_difference_examples():
    assert finite_diff_check("affine", eps=1e-5) < 1e-7
    assert finite_diff_check("relu") < 1e-6
    assert finite_diff_check("batch_norm") < 1e-5


def test_finite_difference_unknown_op():
    with pytest.raises(KeyError):
        finite_diff_check("fft")


def test_backward_sum_is_ones_and_unused_is_zero():
    x = torch.randn(3, 4, requires_grad=True)
    z = torch.randn(2, requires_grad=True)
    g = backward(x.sum(), {"x": x, "z": z})
    assert list(g) == ["x", "z"]
    assert torch.equal(g["x"], torch.ones(3, 4)) and torch.equal(g["z"], torch.zeros(2))
    with pytest.raises(ValueError):
        backward(x * 2, {"x": x})


# -- losses ----------------------------------------------------------------------

def test_ce_uniform_is_log_k():
    k = 7
    t = torch.full((3, k), 1.0 / k, dtype=torch.float64)
    assert ce_loss_soft(torch.zeros(3, k, dtype=torch.float64), t).item() == pytest.approx(math.log(k), abs=1e-15)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10 ** 6), k=st.integers(2, 9), eps=st.floats(0, 0.5))
def test_ce_uniform_logits_any_targets(seed, k, eps):
    t = torch.tensor(np.random.default_rng(seed).dirichlet(np.ones(k), 4))
    loss = ce_loss_soft(torch.full((4, k), 3.0, dtype=torch.float64), t, eps).item()
    assert loss == pytest.approx(math.log(k), abs=1e-12)


def test_ce_smoothing_floor_closed_form():
    # True-class logit m, others 0. The true-class term vanishes as m grows while
    # the smoothing mass on the K-1 wrong classes leaves a floor of eps (K-1)/K * m.
    k, eps, m = 5, 0.05, 30.0
    logits = torch.zeros(1, k, dtype=torch.float64)
    logits[0, 0] = m
    target = torch.eye(k, dtype=torch.float64)[:1]
    lse = m + math.log1p((k - 1) * math.exp(-m))
    expected = (1 - eps + eps / k) * (lse - m) + eps * (k - 1) / k * lse
    assert ce_loss_soft(logits, target, eps).item() == pytest.approx(expected, rel=1e-12)


def test_smoothed_target_mass():
    t = smooth_targets(torch.eye(1006, dtype=torch.float64)[:2], 0.05)
    assert t[0, 0].item() == pytest.approx(0.95 + 0.05 / 1006, abs=1e-15)
    np.testing.assert_allclose(t.sum(1).numpy(), 1.0, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10 ** 6), lam=st.floats(0, 1), eps=st.floats(0, 0.3))
def test_ce_is_linear_in_target(seed, lam, eps):
    rng = np.random.default_rng(seed)
    logits = torch.tensor(rng.normal(size=(3, 6)))
    yi = torch.tensor(np.eye(6)[rng.integers(6, size=3)])
    yj = torch.tensor(np.eye(6)[rng.integers(6, size=3)])
    mixed = ce_loss_soft(logits, lam * yi + (1 - lam) * yj, eps).item()
    split = lam * ce_loss_soft(logits, yi, eps).item() + (1 - lam) * ce_loss_soft(logits, yj, eps).item()
    assert mixed == pytest.approx(split, abs=1e-12)
    assert mixed >= 0


def test_bce_examples():
    y = torch.tensor([[0.0, 1.0, 1.0]], dtype=torch.float64)
    assert bce_loss(torch.zeros_like(y), y).item() == pytest.approx(math.log(2), abs=1e-15)
    big = bce_loss(torch.tensor([[50.0]], dtype=torch.float64), torch.tensor([[1.0]], dtype=torch.float64))
    assert 0 <= big.item() < 1e-20
    huge = bce_loss(torch.tensor([[-1e4, 1e4]]), torch.tensor([[1.0, 0.0]]))
    assert torch.isfinite(huge)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10 ** 6))
def test_bce_matches_direct_form(seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-8, 8, (4, 5))
    y = rng.integers(0, 2, (4, 5)).astype(float)
    p = 1 / (1 + np.exp(-x))
    direct = np.mean(-(y * np.log(p) + (1 - y) * np.log(1 - p)))
    assert bce_loss(torch.tensor(x), torch.tensor(y)).item() == pytest.approx(direct, abs=1e-9)


# -- optimizer and schedule --------------------------------------------------------

def test_adam_zero_gradient_no_decay_is_noop():
    p = {"w": torch.randn(3, dtype=torch.float64)}
    before = p["w"].clone()
    adam_step(p, {"w": torch.zeros(3, dtype=torch.float64)}, AdamState(), 0.1)
    assert torch.equal(p["w"], before)


def test_adam_first_step_is_lr():
    p = {"w": torch.tensor([1.0], dtype=torch.float64)}
    adam_step(p, {"w": torch.tensor([3.0], dtype=torch.float64)}, AdamState(), 0.01)
    # m_hat = g and v_hat = g^2, so the step is lr * g / (|g| + eps)
    assert p["w"].item() == pytest.approx(1.0 - 0.01 * 3 / (3 + 1e-8), abs=1e-15)


def test_adam_matches_reference_sequence():
    rng = np.random.default_rng(0)
    w = rng.normal(size=4)
    p = {"w": torch.tensor(w.copy())}
    state = AdamState()
    m = np.zeros(4)
    v = np.zeros(4)
    for t in range(1, 6):
        g = rng.normal(size=4)
        adam_step(p, {"w": torch.tensor(g)}, state, 0.01, 0.1)
        g = g + 0.1 * w
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        w = w - 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    np.testing.assert_allclose(p["w"].numpy(), w, atol=1e-14)


def test_adam_weight_decay_shrinks():
    p = {"w": torch.tensor([2.0, -3.0], dtype=torch.float64)}
    state = AdamState()
    norms = []
    for _ in range(5):
        adam_step(p, {"w": torch.zeros(2, dtype=torch.float64)}, state, 0.01, 0.5)
        norms.append(p["w"].abs().clone())
    assert all(torch.all(b < a) for a, b in zip(norms, norms[1:]))


def test_adam_rejects_nonfinite_gradient_by_name():
    p = {"layer.weight": torch.zeros(2)}
    with pytest.raises(TrainingFault, match="layer.weight"):
        adam_step(p, {"layer.weight": torch.tensor([0.0, float("nan")])}, AdamState(), 0.1)


def test_schedule_endpoints():
    s = Schedule(0.001, 3, 30, 10)
    assert lr_at(0, s) == 0.0
    assert lr_at(30, s) == pytest.approx(0.001)
    assert lr_at(15, s) == pytest.approx(0.0005)
    assert lr_at(300, s) < 1e-8 * 0.001
    with pytest.raises(ValueError):
        lr_at(301, s)
    with pytest.raises(ValueError):
        Schedule(0.001, 3, 3, 10)


@settings(max_examples=40, deadline=None)
@given(warm=st.integers(0, 5), extra=st.integers(1, 20), spe=st.integers(1, 50), mx=st.floats(1e-5, 1.0))
def test_schedule_shape(warm, extra, spe, mx):
    s = Schedule(mx, warm, warm + extra, spe)
    lrs = np.array([lr_at(i, s) for i in range(s.total_steps + 1)])
    assert np.all(lrs >= 0) and np.all(lrs <= mx * (1 + 1e-12))
    w = s.warmup_steps
    assert np.all(np.diff(lrs[: w + 1]) >= 0)
    assert np.all(np.diff(lrs[w:]) <= 1e-15)
    assert lrs[w] == pytest.approx(mx, rel=1e-12)
