import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcadapt.errors import ConfigError, NonFiniteError, ShapeMismatchError
from pcadapt.optim import (AdamState, AdamWConfig, SGDMomentumConfig, WarmupCosine, adamw_step,
                           loss_value_and_grad, one_hot, schedule_lr, sgd_momentum_step)


def fd_grad(kind, logits, target, h=1e-6):
    g = np.zeros_like(logits)
    for idx in np.ndindex(logits.shape):
        lp, lm = logits.copy(), logits.copy()
        lp[idx] += h
        lm[idx] -= h
        g[idx] = (float(loss_value_and_grad(kind, lp, target)[0]) -
                  float(loss_value_and_grad(kind, lm, target)[0])) / (2 * h)
    return g


def test_se_zero_at_target():
    y = one_hot(np.array([1, 3]), 5)
    v, g = loss_value_and_grad("se", y.copy(), y)
    assert v == 0 and not np.any(g)


def test_ce_uniform_logits():
    y = one_hot(np.array([0, 4, 9]), 10)
    v, _ = loss_value_and_grad("ce", np.zeros((3, 10)), y)
    assert math.isclose(float(v), math.log(10), rel_tol=1e-14)


@pytest.mark.parametrize("kind", ["se", "ce"])
def test_loss_grad_matches_fd(kind, rng):
    logits = rng.normal(size=(4, 10))
    y = one_hot(rng.integers(0, 10, 4), 10)
    np.testing.assert_allclose(loss_value_and_grad(kind, logits, y)[1], fd_grad(kind, logits, y),
                               rtol=1e-6, atol=1e-9)


def test_loss_errors():
    with pytest.raises(ShapeMismatchError):
        loss_value_and_grad("ce", np.zeros((2, 10)), np.zeros((3, 10)))
    with pytest.raises(NonFiniteError):
        loss_value_and_grad("se", np.array([[np.nan]]), np.zeros((1, 1)))
    with pytest.raises(ConfigError):
        loss_value_and_grad("mse", np.zeros((1, 1)), np.zeros((1, 1)))


def test_schedule_examples():
    s = WarmupCosine(100, 1000)
    assert schedule_lr(s, 0, 0.1) == 0
    assert schedule_lr(s, 100, 0.1) == 0.1
    assert abs(schedule_lr(s, 1000, 0.1)) < 1e-18
    assert math.isclose(schedule_lr(WarmupCosine(0, 10, floor=0.2), 10, 1.0), 0.2)
    with pytest.raises(ConfigError):
        schedule_lr(s, 1001, 0.1)
    with pytest.raises(ConfigError):
        schedule_lr(s, -1, 0.1)


def test_schedule_continuous_at_warmup():
    s = WarmupCosine(50, 500)
    assert abs(schedule_lr(s, 49, 1.0) - schedule_lr(s, 50, 1.0)) <= 1 / 50 + 1e-12
    assert abs(schedule_lr(s, 51, 1.0) - schedule_lr(s, 50, 1.0)) < 1e-4


def test_schedule_defaults():
    s = WarmupCosine.for_run(1000)
    assert s.warmup_steps == 100 and s.floor == 0
    with pytest.raises(ConfigError):
        WarmupCosine(20, 10)


def test_adam_zero_grad_no_decay():
    p = np.array([1.0, -2.0])
    new, _ = adamw_step(AdamState.zeros_like(p), p, np.zeros(2), 0.1, AdamWConfig(0.1))
    assert np.array_equal(new, p)


def test_adam_first_step():
    p = np.array([1.0])
    new, st_ = adamw_step(AdamState.zeros_like(p), p, np.array([1.0]), 0.1, AdamWConfig(0.1))
    assert abs(new[0] - 0.9) < 1e-6 and st_.t == 1


def test_pure_decay():
    p = np.array([1.0])
    new, _ = adamw_step(AdamState.zeros_like(p), p, np.zeros(1), 0.1, AdamWConfig(0.1, weight_decay=0.1))
    assert math.isclose(new[0], 0.99, rel_tol=1e-12)


def reference_adam(p, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    for t, g in enumerate(grads, 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p = p - lr * ((m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps))
    return p


def test_adamw_without_decay_is_adam(rng):
    p = rng.normal(size=5)
    grads = [rng.normal(size=5) for _ in range(10)]
    cfg = AdamWConfig(1e-2)
    s, q = AdamState.zeros_like(p), p.copy()
    for g in grads:
        q, s = adamw_step(s, q, g, 1e-2, cfg)
    assert np.array_equal(q, reference_adam(p, grads, 1e-2))


def test_adam_rejects_nonfinite():
    p = np.zeros(1)
    with pytest.raises(NonFiniteError):
        adamw_step(AdamState.zeros_like(p), p, np.array([np.inf]), 0.1, AdamWConfig(0.1))
    with pytest.raises(ConfigError):
        AdamWConfig(-1e-3)
    with pytest.raises(ConfigError):
        AdamWConfig(0.1, weight_decay=-1)


def test_sgd_momentum_examples():
    v0, a, g = np.zeros(3), np.array([1.0, 2.0, 3.0]), np.array([0.5, -1.0, 2.0])
    a1, _ = sgd_momentum_step(v0, a, g, SGDMomentumConfig(0.1, 0.0))
    assert np.array_equal(a1, a - 0.1 * g)
    a2, v2 = sgd_momentum_step(v0, a, np.zeros(3), SGDMomentumConfig(0.1, 0.5))
    assert np.array_equal(a2, a) and not np.any(v2)
    cfg = SGDMomentumConfig(0.1, 0.1)
    b, v = sgd_momentum_step(v0, a, g, cfg)
    b, v = sgd_momentum_step(v, b, g, cfg)
    np.testing.assert_allclose(a - b, 0.1 * g * 2.1, rtol=0, atol=1e-12)


def test_sgd_config_validation():
    with pytest.raises(ConfigError):
        SGDMomentumConfig(0.0)
    with pytest.raises(ConfigError):
        SGDMomentumConfig(0.1, 1.0)
    with pytest.raises(ShapeMismatchError):
        sgd_momentum_step(np.zeros(2), np.zeros(3), np.zeros(3), SGDMomentumConfig(0.1))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["se", "ce"]))
def test_loss_grad_property(seed, kind):
    r = np.random.default_rng(seed)
    logits = r.normal(scale=3, size=(2, 4))
    y = one_hot(r.integers(0, 4, 2), 4)
    np.testing.assert_allclose(loss_value_and_grad(kind, logits, y)[1], fd_grad(kind, logits, y),
                               rtol=1e-6, atol=1e-9)
