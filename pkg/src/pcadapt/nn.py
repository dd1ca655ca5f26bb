"""Feedforward network core shared by the BP and PC engines.

A :class:`Network` is an ordered list of layers partitioned into *groups*.
Each group holds exactly one parameterized layer (fully connected or
convolution) plus any fused parameter-free layers (pooling, flatten), and its
output is one activity node of the predictive-coding graph.  Composing all
groups gives the plain forward pass.

Arrays are plain :class:`numpy.ndarray` values with a leading batch axis.
Every layer applies ``activation(op(x))``; a group's activation therefore
lives on its last layer, so conv -> pool -> ReLU is written as
``[Conv2D(identity), MaxPool2D(relu)]``.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace
from typing import Any, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, ShapeMismatchError

FC = "fc"
CONV2D = "conv2d"
MAXPOOL2D = "maxpool2d"
FLATTEN = "flatten"

ACTIVATIONS = ("identity", "relu", "tanh", "hardtanh")
ARCHITECTURES = ("mlp", "vgg5", "vgg7", "vgg9")

VGG_BLOCKS = {
    "vgg5": (64, 128),
    "vgg7": (64, 128, 256),
    "vgg9": (64, 128, 256, 512),
}


# ---------------------------------------------------------------------------
# Activations
# ---------------------------------------------------------------------------

def activate(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "identity":
        return z
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    if kind == "hardtanh":
        return np.clip(z, -1.0, 1.0)
    raise ConfigError(f"unknown activation {kind!r}")


def activation_derivative(kind: str, z: np.ndarray) -> np.ndarray:
    """Elementwise f'(z). Kinks take the derivative of the flat side (0)."""
    if kind == "identity":
        return np.ones_like(z)
    if kind == "relu":
        return (z > 0).astype(z.dtype)
    if kind == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    if kind == "hardtanh":
        return ((z > -1.0) & (z < 1.0)).astype(z.dtype)
    raise ConfigError(f"unknown activation {kind!r}")


# ---------------------------------------------------------------------------
# Layer specs and parameters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LayerSpec:
    kind: str
    activation: str = "identity"
    in_features: int = 0
    out_features: int = 0
    in_channels: int = 0
    out_channels: int = 0
    kernel_size: int = 0
    stride: int = 1
    padding: int = 0
    pool: int = 2

    def __post_init__(self):
        if self.kind not in (FC, CONV2D, MAXPOOL2D, FLATTEN):
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")

    @property
    def trainable(self) -> bool:
        return self.kind in (FC, CONV2D)

    @property
    def fan_in(self) -> int:
        if self.kind == FC:
            return self.in_features
        if self.kind == CONV2D:
            return self.in_channels * self.kernel_size * self.kernel_size
        return 0

    def param_shapes(self) -> tuple[tuple[int, ...], tuple[int, ...]]:
        if self.kind == FC:
            return (self.out_features, self.in_features), (self.out_features,)
        if self.kind == CONV2D:
            k = self.kernel_size
            return (self.out_channels, self.in_channels, k, k), (self.out_channels,)
        return (0,), (0,)

    def output_shape(self, in_shape: Sequence[int]) -> tuple[int, ...]:
        """Per-sample output shape (no batch axis) for a per-sample input shape."""
        in_shape = tuple(in_shape)
        if self.kind == FC:
            if in_shape != (self.in_features,):
                raise ShapeMismatchError(f"fc expects ({self.in_features},), got {in_shape}")
            return (self.out_features,)
        if self.kind == FLATTEN:
            return (int(np.prod(in_shape)),)
        if len(in_shape) != 3:
            raise ShapeMismatchError(f"{self.kind} expects (C, H, W), got {in_shape}")
        c, h, w = in_shape
        if self.kind == CONV2D:
            if c != self.in_channels:
                raise ShapeMismatchError(f"conv2d expects {self.in_channels} channels, got {c}")
            k, s, p = self.kernel_size, self.stride, self.padding
            ho, wo = (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1
            if ho < 1 or wo < 1:
                raise ShapeMismatchError(f"conv2d input {in_shape} too small for kernel {k}")
            return (self.out_channels, ho, wo)
        ho, wo = h // self.pool, w // self.pool
        if ho < 1 or wo < 1:
            raise ShapeMismatchError(f"maxpool2d input {in_shape} too small for window {self.pool}")
        return (c, ho, wo)


@dataclass
class LayerParams:
    weights: np.ndarray
    bias: np.ndarray

    def copy(self) -> "LayerParams":
        return LayerParams(self.weights.copy(), self.bias.copy())

    @property
    def size(self) -> int:
        return self.weights.size + self.bias.size


def _empty_params(dtype) -> LayerParams:
    return LayerParams(np.zeros((0,), dtype=dtype), np.zeros((0,), dtype=dtype))


# ---------------------------------------------------------------------------
# Layer ops: forward with cache, backward (vector-Jacobian product)
# ---------------------------------------------------------------------------

def _conv_cols(spec: LayerSpec, x: np.ndarray):
    k, s, p = spec.kernel_size, spec.stride, spec.padding
    if p:
        x = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s]
    b, c, ho, wo = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, c * k * k)
    return cols, (b, c, ho, wo, x.shape[2], x.shape[3])


def _op_forward(spec: LayerSpec, params: LayerParams, x: np.ndarray):
    if spec.kind == FC:
        return x @ params.weights.T + params.bias, x
    if spec.kind == CONV2D:
        cols, dims = _conv_cols(spec, x)
        b, _, ho, wo = dims[:4]
        w = params.weights.reshape(spec.out_channels, -1)
        z = (cols @ w.T + params.bias).reshape(b, ho, wo, spec.out_channels)
        return z.transpose(0, 3, 1, 2), (cols, dims)
    if spec.kind == MAXPOOL2D:
        k = spec.pool
        b, c, h, w = x.shape
        ho, wo = h // k, w // k
        win = (x[:, :, : ho * k, : wo * k]
               .reshape(b, c, ho, k, wo, k)
               .transpose(0, 1, 2, 4, 3, 5)
               .reshape(b, c, ho, wo, k * k))
        idx = np.argmax(win, axis=-1)[..., None]
        return np.take_along_axis(win, idx, axis=-1)[..., 0], (idx, x.shape)
    return x.reshape(x.shape[0], -1), x.shape


def _op_backward(spec: LayerSpec, params: LayerParams, cache, gz: np.ndarray, need_dx: bool,
                 need_params: bool = True):
    """Return (dL/dx or None, dL/dW or None, dL/db or None) given dL/dz."""
    dw = db = dx = None
    if spec.kind == FC:
        x = cache
        if need_params:
            dw = gz.T @ x
            db = gz.sum(axis=0)
        if need_dx:
            dx = gz @ params.weights
        return dx, dw, db
    if spec.kind == CONV2D:
        cols, (b, c, ho, wo, hp, wp) = cache
        k, s, p = spec.kernel_size, spec.stride, spec.padding
        g = gz.transpose(0, 2, 3, 1).reshape(-1, spec.out_channels)
        if need_params:
            dw = (g.T @ cols).reshape(params.weights.shape)
            db = g.sum(axis=0)
        if need_dx:
            dcols = (g @ params.weights.reshape(spec.out_channels, -1)).reshape(b, ho, wo, c, k, k)
            dxp = np.zeros((b, c, hp, wp), dtype=gz.dtype)
            for i in range(k):
                for j in range(k):
                    dxp[:, :, i:i + s * ho:s, j:j + s * wo:s] += dcols[..., i, j].transpose(0, 3, 1, 2)
            dx = dxp[:, :, p:hp - p, p:wp - p] if p else dxp
        return dx, dw, db
    if spec.kind == MAXPOOL2D:
        idx, xshape = cache
        k = spec.pool
        b, c, h, w = xshape
        ho, wo = h // k, w // k
        dwin = np.zeros((b, c, ho, wo, k * k), dtype=gz.dtype)
        np.put_along_axis(dwin, idx, gz[..., None], axis=-1)
        dcore = dwin.reshape(b, c, ho, wo, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, ho * k, wo * k)
        if (ho * k, wo * k) != (h, w):
            full = np.zeros(xshape, dtype=gz.dtype)
            full[:, :, : ho * k, : wo * k] = dcore
            dcore = full
        return dcore, None, None
    return gz.reshape(cache), None, None


# ---------------------------------------------------------------------------
# Network
# ---------------------------------------------------------------------------

@dataclass
class Network:
    """Ordered layers with group boundaries marking PC activity nodes.

    ``boundaries[g]`` is the exclusive end index (into ``specs``) of group g.
    """

    specs: list[LayerSpec]
    params: list[LayerParams]
    boundaries: list[int]
    in_shape: tuple[int, ...]
    arch: str = "custom"
    arch_options: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.specs) != len(self.params):
            raise ConfigError("one LayerParams per LayerSpec required")
        if not self.boundaries or self.boundaries[-1] != len(self.specs):
            raise ConfigError("last group boundary must close the layer list")
        if any(b <= a for a, b in zip([0] + self.boundaries[:-1], self.boundaries)):
            raise ConfigError("group boundaries must be strictly increasing")
        self.in_shape = tuple(self.in_shape)

    @property
    def n_groups(self) -> int:
        return len(self.boundaries)

    @property
    def dtype(self):
        for p in self.params:
            if p.weights.size:
                return p.weights.dtype
        return np.dtype(np.float64)

    def group_slice(self, g: int) -> slice:
        start = 0 if g == 0 else self.boundaries[g - 1]
        return slice(start, self.boundaries[g])

    def group(self, g: int) -> tuple[list[LayerSpec], list[LayerParams]]:
        sl = self.group_slice(g)
        return self.specs[sl], self.params[sl]

    def node_shapes(self) -> list[tuple[int, ...]]:
        """Per-sample shapes of a_0 (input) through a_L (output)."""
        shapes = [self.in_shape]
        s = self.in_shape
        for g in range(self.n_groups):
            for spec in self.group(g)[0]:
                s = spec.output_shape(s)
            shapes.append(s)
        return shapes

    def copy(self) -> "Network":
        return Network(list(self.specs), [p.copy() for p in self.params], list(self.boundaries),
                       self.in_shape, self.arch, copy.deepcopy(self.arch_options))

    def zeros_like_params(self) -> list[LayerParams]:
        return [LayerParams(np.zeros_like(p.weights), np.zeros_like(p.bias)) for p in self.params]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params)

    def astype(self, dtype) -> "Network":
        net = self.copy()
        net.params = [LayerParams(p.weights.astype(dtype), p.bias.astype(dtype)) for p in net.params]
        return net


def _check_input(specs: Sequence[LayerSpec], x: np.ndarray, expected: tuple[int, ...] | None):
    if x.ndim < 2:
        raise ShapeMismatchError(f"expected a batched input, got shape {x.shape}")
    if expected is not None and tuple(x.shape[1:]) != tuple(expected):
        raise ShapeMismatchError(f"group expects per-sample shape {tuple(expected)}, got {tuple(x.shape[1:])}")
    # validates the whole chain of shapes
    s = tuple(x.shape[1:])
    for spec in specs:
        s = spec.output_shape(s)


def group_forward_cached(specs: Sequence[LayerSpec], params: Sequence[LayerParams], x: np.ndarray):
    """Forward one group, returning its output and the per-layer caches."""
    caches = []
    h = x
    for spec, prm in zip(specs, params):
        z, c = _op_forward(spec, prm, h)
        h = activate(spec.activation, z)
        caches.append((c, z))
    return h, caches


def group_backward(specs: Sequence[LayerSpec], params: Sequence[LayerParams], caches, gy: np.ndarray,
                   need_dx: bool = True, need_params: bool = True):
    """Vector-Jacobian product through one group.

    Returns ``(dx, grads)`` where ``grads`` is a list of ``LayerParams`` (or
    ``None`` for parameter-free layers) aligned with ``specs``.
    """
    grads: list[LayerParams | None] = [None] * len(specs)
    g = gy
    for i in range(len(specs) - 1, -1, -1):
        spec, prm = specs[i], params[i]
        c, z = caches[i]
        if spec.activation != "identity":
            g = g * activation_derivative(spec.activation, z)
        dx, dw, db = _op_backward(spec, prm, c, g, need_dx or i > 0, need_params)
        if spec.trainable and need_params:
            grads[i] = LayerParams(dw, db)
        g = dx
    return g, grads


def layer_group_forward(group: tuple[Sequence[LayerSpec], Sequence[LayerParams]], x: np.ndarray,
                        in_shape: tuple[int, ...] | None = None) -> np.ndarray:
    """Apply one group: affine/conv op, fused pool/flatten, then activation."""
    specs, params = group
    _check_input(specs, x, in_shape)
    return group_forward_cached(specs, params, x)[0]


def network_forward(net: Network, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Plain forward pass. Returns ``(logits, activities)`` with ``activities[-1] is logits``."""
    x = np.asarray(x)
    _check_input(net.specs, x, net.in_shape)
    acts = []
    h = x
    for g in range(net.n_groups):
        specs, params = net.group(g)
        h = group_forward_cached(specs, params, h)[0]
        acts.append(h)
    return h, acts


# ---------------------------------------------------------------------------
# Architectures and initialization
# ---------------------------------------------------------------------------

def _normalize_seed(seed: int):
    return int(seed) & ((1 << 64) - 1)


def build_layers(arch: str, *, in_shape=None, width: int | None = None, hidden: int = 256,
                 num_classes: int = 10):
    """Layer specs and group boundaries for a named architecture.

    ``width`` overrides every VGG channel count (used for reduced-size
    oracle checks); ``hidden`` is the MLP hidden size.
    """
    if arch == "mlp":
        in_shape = tuple(in_shape or (1, 28, 28))
        d = int(np.prod(in_shape))
        specs = [
            LayerSpec(FLATTEN), LayerSpec(FC, "relu", in_features=d, out_features=hidden),
            LayerSpec(FC, "relu", in_features=hidden, out_features=hidden),
            LayerSpec(FC, in_features=hidden, out_features=num_classes),
        ]
        return specs, [2, 3, 4], in_shape
    if arch not in VGG_BLOCKS:
        raise ConfigError(f"unknown architecture {arch!r}; expected one of {ARCHITECTURES}")
    in_shape = tuple(in_shape or (3, 32, 32))
    c, h, w = in_shape
    specs: list[LayerSpec] = []
    bounds: list[int] = []
    blocks = VGG_BLOCKS[arch]
    for bi, ch in enumerate(blocks):
        ch = width or ch
        last_block = bi == len(blocks) - 1
        specs.append(LayerSpec(CONV2D, "relu", in_channels=c, out_channels=ch, kernel_size=3, padding=1))
        bounds.append(len(specs))
        specs.append(LayerSpec(CONV2D, in_channels=ch, out_channels=ch, kernel_size=3, padding=1))
        c = ch
        # pooling is skipped once the feature map is 1x1 (reduced-size inputs)
        if min(h, w) >= 2:
            specs.append(LayerSpec(MAXPOOL2D, pool=2))
            h, w = h // 2, w // 2
        if last_block:
            specs.append(LayerSpec(FLATTEN))
        specs[-1] = replace(specs[-1], activation="relu")
        bounds.append(len(specs))
    specs.append(LayerSpec(FC, in_features=c * h * w, out_features=num_classes))
    bounds.append(len(specs))
    return specs, bounds, in_shape


def init_network(arch: str, seed: int = 0, *, dtype=np.float64, **options) -> Network:
    """Build a named architecture with Kaiming-uniform (fan-in) weights and zero biases."""
    specs, bounds, in_shape = build_layers(arch, **options)
    rng = np.random.default_rng(_normalize_seed(seed))
    params = []
    for spec in specs:
        if not spec.trainable:
            params.append(_empty_params(dtype))
            continue
        wshape, bshape = spec.param_shapes()
        bound = np.sqrt(6.0 / spec.fan_in)
        params.append(LayerParams(rng.uniform(-bound, bound, size=wshape).astype(dtype),
                                  np.zeros(bshape, dtype=dtype)))
    opts = {k: (list(v) if isinstance(v, tuple) else v) for k, v in options.items()}
    return Network(specs, params, bounds, in_shape, arch, opts)


def network_from_groups(groups: Sequence[Sequence[tuple[LayerSpec, LayerParams]]],
                        in_shape: Sequence[int]) -> Network:
    """Assemble a custom network from explicit (spec, params) groups."""
    specs, params, bounds = [], [], []
    for grp in groups:
        for spec, prm in grp:
            specs.append(spec)
            params.append(prm)
        bounds.append(len(specs))
    return Network(specs, params, bounds, tuple(in_shape))
