"""Predictive coding: clamped activity inference and local weight updates.

Node ``l`` of the PC graph holds activity ``a_l``; ``a_0`` is the input and
group ``l`` of the network predicts ``mu_l = f(a_{l-1}, theta_l)``.  With
``eps_l = a_l - mu_l`` the per-sample energy is

    E = 1/2 * sum_{l<L} ||eps_l||^2 + output_term

where ``output_term`` is ``1/2 ||y - mu_L||^2`` when the output node is
clamped to the label (SE), ``CE(mu_L, y)`` when the loss is cross-entropy
(the output then has no free node), or ``1/2 ||eps_L||^2`` with a free output
node (test-time inference).

Gradients are the exact derivatives of that energy:

* activity gradients are the per-sample ``dE/da_l``; each sample's
  activities only enter its own energy, so this is the gradient of the batch
  *sum* and does not depend on batch size.
* weight gradients are ``dE/dtheta_l`` of the batch *mean* energy, which
  equals the BP gradient scale.  They only use ``eps_l`` and ``a_{l-1}``.

All node gradients of one inference step come from a single activity
snapshot; the update is applied after all of them are computed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bp import EpochStats
from .errors import ConfigError, ShapeMismatchError
from .nn import LayerParams, Network, _check_input, group_backward, group_forward_cached, network_forward
from .optim import AdamWConfig, AdamWOptimizer, SGDMomentumConfig, per_sample_loss, sgd_momentum_step

OUTPUT_MODES = ("se", "ce", "free")


@dataclass(frozen=True)
class PCConfig:
    inference_steps: int
    sgd: SGDMomentumConfig
    loss: str = "ce"
    weights_optimizer: AdamWConfig | None = None

    def __post_init__(self):
        if self.inference_steps < 0:
            raise ConfigError("inference_steps must be >= 0")
        if self.loss not in ("se", "ce"):
            raise ConfigError(f"unknown loss {self.loss!r}")


@dataclass
class PCState:
    """Activities a_0..a_L (a_0..a_{L-1} under CE), momentum buffers and clamp flags."""

    activities: list[np.ndarray]
    velocities: list[np.ndarray]
    clamped: list[bool]
    output: str
    target: np.ndarray | None = None

    def copy(self) -> "PCState":
        return PCState([a.copy() for a in self.activities], [v.copy() for v in self.velocities],
                       list(self.clamped), self.output,
                       None if self.target is None else self.target.copy())

    @property
    def batch_size(self) -> int:
        return self.activities[0].shape[0]

    @property
    def free_nodes(self) -> list[int]:
        return [i for i, c in enumerate(self.clamped) if not c]


@dataclass
class Evaluation:
    """Predictions, errors and (optionally) gradients at one activity snapshot.

    Lists are indexed by node; entry 0 (the input) is always ``None``.  Under
    CE ``eps[L]`` is ``None`` because the output is not a free variable.
    """

    mu: list
    eps: list
    energy: np.floating
    activity_grads: list = field(default_factory=list)
    weight_grads: list = field(default_factory=list)


def forward_init(net: Network, x: np.ndarray, y: np.ndarray | None, loss: str | None) -> PCState:
    """Initialize activities from a forward pass so every hidden error is zero.

    ``loss="se"`` clamps the output node to ``y``; ``loss="ce"`` drops the
    output node; ``loss=None`` keeps a free output node set to the network
    output (unclamped, test-time inference).
    """
    output = "free" if loss is None else loss
    if output not in OUTPUT_MODES:
        raise ConfigError(f"unknown loss {loss!r}")
    x = np.asarray(x)
    logits, acts = network_forward(net, x)
    if output != "free":
        if y is None or y.shape != logits.shape:
            raise ShapeMismatchError(f"target shape {None if y is None else y.shape} != output {logits.shape}")
        y = np.asarray(y, dtype=logits.dtype)
    hidden = acts[:-1]
    activities = [x] + hidden
    clamped = [True] + [False] * len(hidden)
    if output == "se":
        activities.append(y)
        clamped.append(True)
    elif output == "free":
        activities.append(logits)
        clamped.append(False)
    velocities = [np.zeros_like(a) for a in activities]
    return PCState(activities, velocities, clamped, output, None if output == "free" else y)


def _check_state(net: Network, state: PCState):
    L = net.n_groups
    expected = L if state.output == "ce" else L + 1
    if len(state.activities) != expected:
        raise ShapeMismatchError(f"state has {len(state.activities)} nodes, network needs {expected}")
    shapes = net.node_shapes()
    for l, a in enumerate(state.activities):
        if tuple(a.shape[1:]) != shapes[l] or a.shape[0] != state.batch_size:
            raise ShapeMismatchError(f"node {l}: expected per-sample shape {shapes[l]}, got {a.shape}")


def evaluate(net: Network, state: PCState, activity_grads: bool = False,
             weight_grads: bool = False) -> Evaluation:
    _check_state(net, state)
    L = net.n_groups
    a = state.activities
    B = state.batch_size
    mu: list = [None]
    caches: list = [None]
    for l in range(1, L + 1):
        specs, params = net.group(l - 1)
        m, c = group_forward_cached(specs, params, a[l - 1])
        mu.append(m)
        caches.append(c)

    eps: list = [None] + [a[l] - mu[l] for l in range(1, L)]
    # dE/dmu_l per sample
    dmu: list = [None] + [-e for e in eps[1:]]
    per_sample = np.zeros(B, dtype=a[0].dtype)
    for e in eps[1:]:
        per_sample = per_sample + 0.5 * np.sum(e.reshape(B, -1) ** 2, axis=1)
    if state.output == "ce":
        eps.append(None)
        out_val, out_grad = per_sample_loss("ce", mu[L], state.target)
        dmu.append(out_grad)
    else:
        e = a[L] - mu[L]
        eps.append(e)
        out_val = 0.5 * np.sum(e.reshape(B, -1) ** 2, axis=1)
        dmu.append(-e)
    energy = np.mean(per_sample + out_val)

    ev = Evaluation(mu, eps, energy)
    if activity_grads:
        grads: list = [None] * len(a)
        for l in state.free_nodes:
            if l == L:
                grads[l] = eps[L]
                continue
            specs, params = net.group(l)
            back, _ = group_backward(specs, params, caches[l + 1], dmu[l + 1], need_dx=True, need_params=False)
            grads[l] = eps[l] + back
        ev.activity_grads = grads
    if weight_grads:
        wg: list[LayerParams | None] = [None] * len(net.specs)
        for l in range(1, L + 1):
            specs, params = net.group(l - 1)
            _, gg = group_backward(specs, params, caches[l], dmu[l] / B, need_dx=False)
            wg[net.group_slice(l - 1)] = gg
        ev.weight_grads = wg
    return ev


def compute_errors(net: Network, state: PCState) -> tuple[list, list]:
    """Predictions ``mu_l = f(a_{l-1}, theta_l)`` and errors ``eps_l = a_l - mu_l``."""
    ev = evaluate(net, state)
    return ev.mu, ev.eps


def energy(net: Network, state: PCState) -> np.floating:
    """Batch-mean energy of ``state``, as a scalar of the state's dtype."""
    return evaluate(net, state).energy


def energy_from_errors(eps: list, output: str, mu_L: np.ndarray | None = None,
                       y: np.ndarray | None = None) -> float:
    """Batch-mean energy from an error list as returned by :func:`compute_errors`."""
    terms = [e for e in eps[1:] if e is not None]
    B = (terms[0] if terms else mu_L).shape[0]
    total = np.zeros(B)
    for e in terms:
        total = total + 0.5 * np.sum(e.reshape(B, -1) ** 2, axis=1)
    if output == "ce":
        total = total + per_sample_loss("ce", mu_L, y)[0]
    return float(np.mean(total))


def activity_gradients(net: Network, state: PCState) -> list:
    return evaluate(net, state, activity_grads=True).activity_grads


def weight_gradients(net: Network, state: PCState) -> list:
    return evaluate(net, state, weight_grads=True).weight_grads


def apply_activity_update(state: PCState, grads: list, sgd: SGDMomentumConfig, order=None) -> PCState:
    """Apply precomputed node gradients. ``order`` permutes the application order."""
    new = PCState(list(state.activities), list(state.velocities), list(state.clamped), state.output,
                  state.target)
    for l in (order if order is not None else state.free_nodes):
        if state.clamped[l]:
            continue
        new.activities[l], new.velocities[l] = sgd_momentum_step(state.velocities[l], state.activities[l],
                                                                 grads[l], sgd)
    return new


def inference_step(net: Network, state: PCState, sgd: SGDMomentumConfig) -> PCState:
    """One synchronized gradient step on every unclamped activity (weights fixed)."""
    if not state.free_nodes:
        raise ConfigError("inference needs at least one unclamped node")
    grads = evaluate(net, state, activity_grads=True).activity_grads
    return apply_activity_update(state, grads, sgd)


def run_inference(net: Network, state: PCState, sgd: SGDMomentumConfig, steps: int) -> PCState:
    for _ in range(steps):
        state = inference_step(net, state, sgd)
    return state


def pc_weight_update(net: Network, state: PCState, opt: AdamWOptimizer) -> float:
    """Local weight step at fixed activities; returns the energy before the step."""
    ev = evaluate(net, state, weight_grads=True)
    opt.step(net, ev.weight_grads)
    return float(ev.energy)


def pc_train_batch(net: Network, x: np.ndarray, y: np.ndarray, cfg: PCConfig, opt: AdamWOptimizer) -> float:
    """Forward init, ``T`` inference steps, one weight update. Returns the settled energy."""
    state = forward_init(net, x, y, cfg.loss)
    if state.free_nodes:
        state = run_inference(net, state, cfg.sgd, cfg.inference_steps)
    return pc_weight_update(net, state, opt)


def pc_train_epoch(net: Network, batches, cfg: PCConfig, opt: AdamWOptimizer):
    total, n = 0.0, 0
    for x, y in batches:
        total += pc_train_batch(net, x, y, cfg, opt)
        n += 1
    return EpochStats(total / n if n else 0.0, n)


def pc_test_forward(net: Network, x: np.ndarray) -> np.ndarray:
    """Test-time output: with the output unclamped, inference settles at the forward pass."""
    return network_forward(net, x)[0]


def unclamped_settling(net: Network, x: np.ndarray, sgd: SGDMomentumConfig, steps: int) -> tuple[PCState, float]:
    """Run inference with only the input clamped; return the state and the max activity change."""
    _check_input(net.specs, x, net.in_shape)
    start = forward_init(net, x, None, None)
    end = run_inference(net, start, sgd, steps)
    delta = max(float(np.max(np.abs(e - s))) if e.size else 0.0
                for e, s in zip(end.activities, start.activities))
    return end, delta
