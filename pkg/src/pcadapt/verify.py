"""Oracle and property checks run by ``pcadapt verify`` and the acceptance tests.

Finite-difference oracles here only ever call forward computations (the
network forward pass, the BP loss and the PC energy); they never touch the
analytic gradient code they are checking.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import pc
from .bp import backward
from .nn import (CONV2D, FC, FLATTEN, MAXPOOL2D, LayerParams, LayerSpec, Network, _op_forward, activate,
                 init_network, network_forward, network_from_groups)
from .optim import SGDMomentumConfig, loss_value_and_grad, one_hot

REDUCED = {
    "mlp": dict(),
    "vgg5": dict(width=8, in_shape=(3, 8, 8)),
    "vgg7": dict(width=8, in_shape=(3, 8, 8)),
    "vgg9": dict(width=8, in_shape=(3, 8, 8)),
}

FD_STEP = 1e-5
REL_TOL = 1e-5
# relative error denominator floor; gradients below this are compared absolutely
GRAD_FLOOR = 1e-6


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""
    seconds: float = 0.0
    values: dict = field(default_factory=dict)

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail} ({self.seconds:.1f}s)"


def relative_error(a: float, b: float, floor: float = GRAD_FLOOR) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def _pattern(net: Network, inputs: list[np.ndarray]) -> list[np.ndarray]:
    """Piecewise-linear switch pattern (ReLU/hardtanh masks, pool winners) for each group input."""
    out = []
    for g, x in enumerate(inputs):
        if x is None:
            continue
        specs, params = net.group(g)
        h = x
        for spec, prm in zip(specs, params):
            z, cache = _op_forward(spec, prm, h)
            if spec.kind == MAXPOOL2D:
                out.append(cache[0].ravel())
            if spec.activation == "relu":
                out.append((z > 0).ravel())
            elif spec.activation == "hardtanh":
                out.append(np.sign(np.clip(z, -1, 1) - z).ravel())
            h = activate(spec.activation, z)
    return out


def central_difference(f: Callable[[], float], arr: np.ndarray, idx, h: float = FD_STEP) -> float:
    """Central difference of ``f`` with respect to ``arr[idx]`` (restored afterwards)."""
    old = arr[idx]
    arr[idx] = old + h
    fp = f()
    arr[idx] = old - h
    fm = f()
    arr[idx] = old
    return float((fp - fm) / (2 * h))


def crosses_kink(pattern: Callable[[], list], arr: np.ndarray, idx, h: float = FD_STEP) -> bool:
    """True if the piecewise-linear switch pattern differs anywhere within +-h of ``arr[idx]``."""
    old = arr[idx]
    base = pattern()
    changed = False
    for delta in (h, -h):
        arr[idx] = old + delta
        if any(not np.array_equal(a, b) for a, b in zip(base, pattern())):
            changed = True
    arr[idx] = old
    return changed


def _compare(f, pat, arr, idx, analytic: float) -> float | None:
    """Relative error at one coordinate; ``None`` when a mismatch is explained by a kink."""
    err = relative_error(central_difference(f, arr, idx), analytic)
    if err >= REL_TOL and crosses_kink(pat, arr, idx):
        return None
    return err


def _sample_indices(rng, shape, n):
    return [tuple(int(rng.integers(0, s)) for s in shape) for _ in range(n)]


def reduced_network(arch: str, seed: int) -> Network:
    return init_network(arch, seed, **REDUCED[arch])


def random_batch(net: Network, rng, batch: int = 4):
    x = rng.normal(size=(batch,) + net.in_shape)
    y = one_hot(rng.integers(0, 10, size=batch))
    return x, y


def _all_inputs(net: Network, x: np.ndarray) -> list[np.ndarray]:
    _, acts = network_forward(net, x)
    return [x] + acts[:-1]


def extended(arr: np.ndarray) -> np.ndarray:
    return np.asarray(arr, dtype=np.longdouble)


def extended_state(state: pc.PCState) -> pc.PCState:
    return pc.PCState([extended(a) for a in state.activities], [extended(v) for v in state.velocities],
                      list(state.clamped), state.output,
                      None if state.target is None else extended(state.target))


def check_bp_gradients(net, x, y, loss, rng, per_layer=50):
    """Worst relative error of BP weight/bias gradients over sampled coordinates.

    The oracle side perturbs an extended-precision copy of the network so the
    difference quotient is not swamped by float64 rounding of the loss.
    """
    _, grads = backward(net, x, y, loss)
    ext = net.astype(np.longdouble)
    xe, ye = extended(x), extended(y)
    f = lambda: loss_value_and_grad(loss, network_forward(ext, xe)[0], ye)[0]
    pat = lambda: _pattern(ext, _all_inputs(ext, xe))
    return _compare_params(ext, grads, f, pat, rng, per_layer)


def _compare_params(net, grads, f, pat, rng, per_layer):
    """``net`` is the (extended-precision) copy that ``f`` reads."""
    worst, checked, skipped = 0.0, 0, 0
    for i, prm in enumerate(net.params):
        if grads[i] is None:
            continue
        n_w = max(1, per_layer - min(per_layer // 5, prm.bias.size))
        targets = [(prm.weights, grads[i].weights, j) for j in _sample_indices(rng, prm.weights.shape, n_w)]
        targets += [(prm.bias, grads[i].bias, j) for j in _sample_indices(rng, prm.bias.shape, per_layer - n_w)]
        for arr, garr, j in targets:
            err = _compare(f, pat, arr, j, float(garr[j]))
            if err is None:
                skipped += 1
                continue
            worst = max(worst, err)
            checked += 1
    return worst, checked, skipped


def settled_state(net, x, y, loss, steps=3, rate=0.05):
    """A PC state pushed a few inference steps away from forward init (hidden errors non-zero)."""
    state = pc.forward_init(net, x, y, loss)
    return pc.run_inference(net, state, SGDMomentumConfig(rate, 0.0), steps)


def _state_inputs(net, state):
    return [state.activities[l] for l in range(net.n_groups)]


def check_pc_activity_gradients(net, state, rng, per_layer=50):
    grads = pc.activity_gradients(net, state)
    B = state.batch_size
    net, state = net.astype(np.longdouble), extended_state(state)
    # per-sample energy gradient == gradient of the batch sum
    f = lambda: pc.energy(net, state) * B
    pat = lambda: _pattern(net, _state_inputs(net, state))
    worst, checked, skipped = 0.0, 0, 0
    for l in state.free_nodes:
        a = state.activities[l]
        for j in _sample_indices(rng, a.shape, per_layer):
            err = _compare(f, pat, a, j, float(grads[l][j]))
            if err is None:
                skipped += 1
                continue
            worst = max(worst, err)
            checked += 1
    return worst, checked, skipped


def check_pc_weight_gradients(net, state, rng, per_layer=50):
    grads = pc.weight_gradients(net, state)
    net, state = net.astype(np.longdouble), extended_state(state)
    f = lambda: pc.energy(net, state)
    pat = lambda: _pattern(net, _state_inputs(net, state))
    return _compare_params(net, grads, f, pat, rng, per_layer)


# ---------------------------------------------------------------------------
# Suites
# ---------------------------------------------------------------------------

def suite_gradients(seed: int = 0, per_layer: int = 50, archs=("mlp", "vgg5", "vgg7", "vgg9")) -> list[CheckResult]:
    results = []
    rng = np.random.default_rng(seed)
    for arch in archs:
        t0 = time.perf_counter()
        net = reduced_network(arch, seed)
        x, y = random_batch(net, rng)
        if arch == "mlp":
            x = rng.uniform(0, 1, size=x.shape)
        worst = {}
        counts = {}
        for loss in ("se", "ce"):
            worst[f"bp_{loss}"], counts[f"bp_{loss}"], _ = check_bp_gradients(net, x, y, loss, rng, per_layer)
            state = settled_state(net, x, y, loss)
            worst[f"pc_act_{loss}"], counts[f"pc_act_{loss}"], _ = check_pc_activity_gradients(net, state, rng, per_layer)
            worst[f"pc_w_{loss}"], counts[f"pc_w_{loss}"], _ = check_pc_weight_gradients(net, state, rng, per_layer)
        ok = all(v < REL_TOL for v in worst.values())
        detail = ", ".join(f"{k}={v:.2e}" for k, v in worst.items())
        results.append(CheckResult(f"gradients/{arch}", ok, detail, time.perf_counter() - t0,
                                   {"worst": worst, "checked": counts}))
    return results


def suite_equivalence(seed: int = 0, n_inputs: int = 1000, steps: int = 10) -> list[CheckResult]:
    results = []
    rng = np.random.default_rng(seed)
    for arch in ("mlp", "vgg5", "vgg7", "vgg9"):
        t0 = time.perf_counter()
        net = reduced_network(arch, seed)
        x = rng.normal(size=(n_inputs,) + net.in_shape)
        same = np.array_equal(pc.pc_test_forward(net, x), network_forward(net, x)[0])
        _, delta = pc.unclamped_settling(net, x, SGDMomentumConfig(0.1, 0.5), steps)
        results.append(CheckResult(f"equivalence/{arch}", bool(same and delta == 0.0),
                                   f"bitwise={same}, max|da|={delta}", time.perf_counter() - t0,
                                   {"bitwise": bool(same), "max_delta": delta}))
    return results


def random_small_net(rng) -> Network:
    """A random small MLP or CNN with a random hidden activation."""
    act = str(rng.choice(["relu", "tanh", "hardtanh", "identity"]))

    def fc(i, o, a):
        return (LayerSpec(FC, a, in_features=i, out_features=o),
                LayerParams(rng.normal(0, 1 / np.sqrt(i), (o, i)), rng.normal(0, 0.1, o)))

    if rng.random() < 0.5:
        dims = [int(rng.integers(2, 9)) for _ in range(int(rng.integers(3, 6)))]
        groups = [[fc(dims[k], dims[k + 1], act if k < len(dims) - 2 else "identity")]
                  for k in range(len(dims) - 1)]
        return network_from_groups(groups, (dims[0],))
    c = int(rng.integers(1, 4))
    k = int(rng.integers(2, 5))
    conv = (LayerSpec(CONV2D, act, in_channels=c, out_channels=k, kernel_size=3, padding=1),
            LayerParams(rng.normal(0, 1 / np.sqrt(9 * c), (k, c, 3, 3)), rng.normal(0, 0.1, k)))
    conv2 = (LayerSpec(CONV2D, in_channels=k, out_channels=k, kernel_size=3, padding=1),
             LayerParams(rng.normal(0, 1 / np.sqrt(9 * k), (k, k, 3, 3)), rng.normal(0, 0.1, k)))
    pool = (LayerSpec(MAXPOOL2D, pool=2), _empty())
    flat = (LayerSpec(FLATTEN, act), _empty())
    return network_from_groups([[conv], [conv2, pool, flat], [fc(k * 4, 5, "identity")]], (c, 4, 4))


def _empty():
    return LayerParams(np.zeros((0,)), np.zeros((0,)))


def suite_energy(seed: int = 0, n_nets: int = 100, steps: int = 20, rate: float = 1e-4) -> list[CheckResult]:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    violations = 0
    worst_increase = 0.0
    for _ in range(n_nets):
        net = random_small_net(rng)
        B = int(rng.integers(1, 9))
        x = rng.normal(size=(B,) + net.in_shape)
        n_out = net.node_shapes()[-1][0]
        loss = str(rng.choice(["se", "ce"]))
        y = one_hot(rng.integers(0, n_out, B), n_out) if loss == "ce" else rng.normal(size=(B, n_out))
        state = pc.forward_init(net, x, y, loss)
        if not state.free_nodes:
            continue
        sgd = SGDMomentumConfig(rate, 0.0)
        e_prev = pc.energy(net, state)
        for _ in range(steps):
            state = pc.inference_step(net, state, sgd)
            e = pc.energy(net, state)
            if e > e_prev:
                violations += 1
                worst_increase = max(worst_increase, e - e_prev)
            e_prev = e
    return [CheckResult("energy_descent", violations == 0,
                        f"{violations} violations over {n_nets} nets x {steps} steps", time.perf_counter() - t0,
                        {"violations": violations, "worst_increase": worst_increase})]


def suite_degeneracy(seed: int = 0) -> list[CheckResult]:
    """SE loss, forward init, zero inference steps: PC weight gradients vs BP."""
    results = []
    rng = np.random.default_rng(seed)
    for arch in ("mlp", "vgg5", "vgg7", "vgg9"):
        t0 = time.perf_counter()
        net = reduced_network(arch, seed)
        x, y = random_batch(net, rng)
        state = pc.forward_init(net, x, y, "se")
        pg = pc.weight_gradients(net, state)
        _, bg = backward(net, x, y, "se")
        last = net.group_slice(net.n_groups - 1)
        hidden_max = 0.0
        for i in range(net.boundaries[-2]):
            if pg[i] is not None:
                hidden_max = max(hidden_max, float(np.max(np.abs(pg[i].weights))), float(np.max(np.abs(pg[i].bias))))
        out_diff = 0.0
        for i in range(last.start, last.stop):
            if pg[i] is not None:
                out_diff = max(out_diff, float(np.max(np.abs(pg[i].weights - bg[i].weights))),
                               float(np.max(np.abs(pg[i].bias - bg[i].bias))))
        ok = hidden_max == 0.0 and out_diff <= 1e-10
        results.append(CheckResult(f"degeneracy/{arch}", ok, f"hidden max|g|={hidden_max}, output diff={out_diff:.1e}",
                                   time.perf_counter() - t0, {"hidden_max": hidden_max, "output_diff": out_diff}))
    return results


SUITES = {
    "gradients": suite_gradients,
    "equivalence": suite_equivalence,
    "energy": suite_energy,
    "degeneracy": suite_degeneracy,
}


def run_suite(name: str) -> list[CheckResult]:
    if name == "all":
        return [r for fn in SUITES.values() for r in fn()]
    if name not in SUITES:
        raise KeyError(f"unknown suite {name!r}; choose from {sorted(SUITES) + ['all']}")
    return SUITES[name]()
