"""Losses, optimizers and the learning-rate schedule used by both engines."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NonFiniteError, ShapeMismatchError

LOSSES = ("se", "ce")


def _require_finite(name: str, *arrays: np.ndarray):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NonFiniteError(f"non-finite values in {name}")


def one_hot(labels: np.ndarray, num_classes: int = 10, dtype=np.float64) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.shape[0], num_classes), dtype=dtype)
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def per_sample_loss(kind: str, logits: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample loss values and their gradients w.r.t. each sample's logits.

    SE is half the summed squared error; CE is cross-entropy of
    softmax(logits) against the (one-hot) target.
    """
    if kind == "se":
        diff = logits - target
        return 0.5 * np.sum(diff * diff, axis=1), diff
    if kind == "ce":
        return -np.sum(target * log_softmax(logits), axis=1), softmax(logits) - target
    raise ConfigError(f"unknown loss {kind!r}; expected 'se' or 'ce'")


def loss_value_and_grad(kind: str, logits: np.ndarray, target: np.ndarray) -> tuple[np.floating, np.ndarray]:
    """Batch-mean loss (scalar of the logits' dtype) and its gradient w.r.t. the logits."""
    if logits.shape != target.shape or logits.ndim != 2:
        raise ShapeMismatchError(f"logits {logits.shape} and target {target.shape} must be equal 2-D shapes")
    _require_finite("logits", logits)
    values, grads = per_sample_loss(kind, logits, target)
    n = logits.shape[0]
    return values.mean(), grads / n


# ---------------------------------------------------------------------------
# Schedule
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WarmupCosine:
    warmup_steps: int
    total_steps: int
    floor: float = 0.0

    def __post_init__(self):
        if self.total_steps < 1 or not 0 <= self.warmup_steps <= self.total_steps:
            raise ConfigError(f"need 0 <= warmup_steps <= total_steps, total_steps >= 1; "
                              f"got {self.warmup_steps}, {self.total_steps}")
        if self.floor < 0:
            raise ConfigError("schedule floor must be >= 0")

    @classmethod
    def for_run(cls, total_steps: int, warmup_fraction: float = 0.1, floor: float = 0.0) -> "WarmupCosine":
        total_steps = max(1, int(total_steps))
        return cls(int(round(warmup_fraction * total_steps)), total_steps, floor)


def schedule_lr(s: WarmupCosine, step: int, lr_peak: float) -> float:
    """Linear warmup from 0 to ``lr_peak``, then cosine decay down to ``floor * lr_peak``."""
    if not 0 <= step <= s.total_steps:
        raise ConfigError(f"step {step} outside [0, {s.total_steps}]")
    if step < s.warmup_steps:
        return lr_peak * step / s.warmup_steps
    decay_steps = s.total_steps - s.warmup_steps
    progress = 0.0 if decay_steps == 0 else (step - s.warmup_steps) / decay_steps
    return lr_peak * (s.floor + (1.0 - s.floor) * 0.5 * (1.0 + math.cos(math.pi * progress)))


# ---------------------------------------------------------------------------
# AdamW (parameters)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AdamWConfig:
    lr_peak: float
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr_peak < 0:
            raise ConfigError("lr_peak must be >= 0")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros_like(cls, p: np.ndarray) -> "AdamState":
        return cls(np.zeros_like(p), np.zeros_like(p))


def adamw_step(state: AdamState, params: np.ndarray, grads: np.ndarray, lr: float,
               cfg: AdamWConfig) -> tuple[np.ndarray, AdamState]:
    """One decoupled-weight-decay Adam step: p <- p - lr * (adam_update + wd * p)."""
    if params.shape != grads.shape:
        raise ShapeMismatchError(f"params {params.shape} vs grads {grads.shape}")
    _require_finite("gradients", grads)
    t = state.t + 1
    m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grads
    v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * (grads * grads)
    m_hat = m / (1.0 - cfg.beta1 ** t)
    v_hat = v / (1.0 - cfg.beta2 ** t)
    update = m_hat / (np.sqrt(v_hat) + cfg.eps)
    if cfg.weight_decay:
        update = update + cfg.weight_decay * params
    return params - lr * update, AdamState(m, v, t)


@dataclass
class AdamWOptimizer:
    """Per-network AdamW driven by a warmup-cosine schedule.

    Holds one :class:`AdamState` per weight and bias tensor; ``step`` consumes
    a gradient list aligned with ``net.params``.
    """

    cfg: AdamWConfig
    schedule: WarmupCosine
    step_count: int = 0
    states: list = field(default_factory=list)

    def current_lr(self) -> float:
        step = min(self.step_count, self.schedule.total_steps)
        return schedule_lr(self.schedule, step, self.cfg.lr_peak)

    def step(self, net, grads) -> float:
        if not self.states:
            self.states = [(AdamState.zeros_like(p.weights), AdamState.zeros_like(p.bias))
                           if p.size else None for p in net.params]
        lr = self.current_lr()
        for i, (prm, g) in enumerate(zip(net.params, grads)):
            if g is None or self.states[i] is None:
                continue
            sw, sb = self.states[i]
            prm.weights, sw = adamw_step(sw, prm.weights, g.weights, lr, self.cfg)
            prm.bias, sb = adamw_step(sb, prm.bias, g.bias, lr, self.cfg)
            self.states[i] = (sw, sb)
        self.step_count += 1
        return lr


# ---------------------------------------------------------------------------
# SGD with momentum (activities)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SGDMomentumConfig:
    rate: float
    momentum: float = 0.0

    def __post_init__(self):
        if self.rate <= 0:
            raise ConfigError("inference rate must be > 0")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must lie in [0, 1)")


def sgd_momentum_step(velocity: np.ndarray, value: np.ndarray, grad: np.ndarray,
                      cfg: SGDMomentumConfig) -> tuple[np.ndarray, np.ndarray]:
    """velocity <- m * velocity + grad;  value <- value - rate * velocity."""
    if not (velocity.shape == value.shape == grad.shape):
        raise ShapeMismatchError(f"shapes differ: {velocity.shape}, {value.shape}, {grad.shape}")
    _require_finite("activity gradient", grad)
    velocity = cfg.momentum * velocity + grad
    return value - cfg.rate * velocity, velocity
