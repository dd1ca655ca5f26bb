"""Reverse-mode gradients and the backpropagation training loop."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import NonFiniteError
from .nn import LayerParams, Network, _check_input, group_backward, group_forward_cached, network_forward
from .optim import AdamWOptimizer, loss_value_and_grad


def backward(net: Network, x: np.ndarray, y: np.ndarray, kind: str) -> tuple[float, list[LayerParams | None]]:
    """Batch-mean loss and its exact gradient w.r.t. every trainable parameter.

    ``grads`` is aligned with ``net.params``; parameter-free layers get ``None``.
    """
    _check_input(net.specs, x, net.in_shape)
    caches = []
    h = x
    for g in range(net.n_groups):
        specs, params = net.group(g)
        h, c = group_forward_cached(specs, params, h)
        caches.append(c)
    loss, gy = loss_value_and_grad(kind, h, y)
    grads: list[LayerParams | None] = [None] * len(net.specs)
    for g in range(net.n_groups - 1, -1, -1):
        specs, params = net.group(g)
        gy, group_grads = group_backward(specs, params, caches[g], gy, need_dx=g > 0)
        grads[net.group_slice(g)] = group_grads
    for gr in grads:
        if gr is not None and not (np.all(np.isfinite(gr.weights)) and np.all(np.isfinite(gr.bias))):
            raise NonFiniteError("non-finite gradient in backward pass")
    return loss, grads


@dataclass
class EpochStats:
    mean_metric: float
    n_batches: int


def bp_train_batch(net: Network, x: np.ndarray, y: np.ndarray, kind: str, opt: AdamWOptimizer) -> float:
    loss, grads = backward(net, x, y, kind)
    opt.step(net, grads)
    return float(loss)


def bp_train_epoch(net: Network, batches: Iterable[tuple[np.ndarray, np.ndarray]], kind: str,
                   opt: AdamWOptimizer) -> EpochStats:
    """One AdamW step per mini-batch, in the order given (shuffling is the caller's job)."""
    total, n = 0.0, 0
    for x, y in batches:
        total += bp_train_batch(net, x, y, kind, opt)
        n += 1
    return EpochStats(total / n if n else 0.0, n)


def predict(net: Network, x: np.ndarray, batch_size: int = 1000) -> np.ndarray:
    out = []
    for i in range(0, x.shape[0], batch_size):
        out.append(np.argmax(network_forward(net, x[i:i + batch_size])[0], axis=1))
    return np.concatenate(out) if out else np.zeros((0,), dtype=np.int64)


def accuracy(net: Network, x: np.ndarray, labels: np.ndarray, batch_size: int = 1000) -> float:
    if x.shape[0] == 0:
        return 0.0
    return float(np.mean(predict(net, x, batch_size) == labels))
