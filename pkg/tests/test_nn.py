import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import identity_fc
from pcadapt.errors import ConfigError, ShapeMismatchError
from pcadapt.nn import (ACTIVATIONS, CONV2D, FC, FLATTEN, MAXPOOL2D, LayerParams, LayerSpec, activate,
                        activation_derivative, build_layers, init_network, layer_group_forward, network_forward,
                        network_from_groups)


def test_init_deterministic_and_zero_bias():
    a, b = init_network("mlp", 7), init_network("mlp", 7)
    for pa, pb in zip(a.params, b.params):
        assert np.array_equal(pa.weights, pb.weights)
        assert np.array_equal(pa.bias, pb.bias)
        assert not np.any(pa.bias)
    c = init_network("mlp", 8)
    assert not np.array_equal(a.params[1].weights, c.params[1].weights)


def test_init_accepts_64bit_seed():
    net = init_network("mlp", 2**64 - 1)
    assert np.all(np.isfinite(net.params[1].weights))


def test_vgg5_weight_variance_matches_fan_in():
    net = init_network("vgg5", 0)
    for spec, prm in zip(net.specs, net.params):
        if spec.trainable:
            target = 2.0 / spec.fan_in
            assert abs(prm.weights.var() / target - 1) < 0.2, spec


def test_unknown_arch():
    with pytest.raises(ConfigError):
        init_network("resnet", 0)


def test_architecture_shapes():
    net = init_network("mlp", 0)
    assert net.node_shapes() == [(1, 28, 28), (256,), (256,), (10,)]
    assert net.num_parameters() == 784 * 256 + 256 + 256 * 256 + 256 + 256 * 10 + 10
    for arch, groups in (("vgg5", 5), ("vgg7", 7), ("vgg9", 9)):
        net = init_network(arch, 0)
        assert net.n_groups == groups
        assert network_forward(net, np.zeros((2, 3, 32, 32)))[0].shape == (2, 10)
    specs, _, _ = build_layers("vgg5")
    convs = [s.out_channels for s in specs if s.kind == CONV2D]
    assert convs == [64, 64, 128, 128]


def test_every_trainable_layer_in_one_group():
    net = init_network("vgg7", 0)
    seen = []
    for g in range(net.n_groups):
        specs, _ = net.group(g)
        seen.extend(i for i, s in enumerate(specs) if s.trainable)
        assert sum(s.trainable for s in specs) == 1
    assert len(seen) == sum(s.trainable for s in net.specs)


def test_fc_identity_and_relu():
    spec, prm = identity_fc(2)
    x = np.array([[3.0, -4.0]])
    assert np.array_equal(layer_group_forward(([spec], [prm]), x), x)
    relu = LayerSpec(FC, "relu", in_features=2, out_features=2)
    assert np.array_equal(layer_group_forward(([relu], [prm]), x), [[3.0, 0.0]])


def test_conv_1x1_scaling():
    spec = LayerSpec(CONV2D, in_channels=1, out_channels=1, kernel_size=1)
    prm = LayerParams(np.full((1, 1, 1, 1), 2.0), np.zeros(1))
    x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
    assert np.array_equal(layer_group_forward(([spec], [prm]), x), [[[[2, 4], [6, 8]]]])


def test_conv_matches_direct_loop(rng):
    spec = LayerSpec(CONV2D, in_channels=2, out_channels=3, kernel_size=3, stride=2, padding=1)
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    x = rng.normal(size=(2, 2, 7, 6))
    out = layer_group_forward(([spec], [LayerParams(w, b)]), x)
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ho, wo = out.shape[2:]
    ref = np.zeros_like(out)
    for i in range(ho):
        for j in range(wo):
            patch = xp[:, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3]
            ref[:, :, i, j] = np.einsum("nckl,ockl->no", patch, w) + b
    np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)


def test_maxpool_and_flatten():
    x = np.arange(16.0).reshape(1, 1, 4, 4)
    out = layer_group_forward(([LayerSpec(MAXPOOL2D), LayerSpec(FLATTEN)],
                               [LayerParams(np.zeros(0), np.zeros(0))] * 2), x)
    assert np.array_equal(out, [[5.0, 7.0, 13.0, 15.0]])


def test_two_identity_groups():
    net = network_from_groups([[identity_fc(2)], [identity_fc(2)]], (2,))
    logits, acts = network_forward(net, np.array([[1.0, 2.0]]))
    assert np.array_equal(logits, [[1, 2]])
    assert [a.tolist() for a in acts] == [[[1, 2]], [[1, 2]]]


def test_forward_pure_and_groupwise(rng):
    net = init_network("vgg5", 3, width=8, in_shape=(3, 8, 8))
    x = rng.normal(size=(3, 3, 8, 8))
    before = [p.weights.copy() for p in net.params]
    l1, acts = network_forward(net, x)
    l2, _ = network_forward(net, x)
    assert np.array_equal(l1, l2)
    assert all(np.array_equal(b, p.weights) for b, p in zip(before, net.params))
    h = x
    for g in range(net.n_groups):
        h = layer_group_forward(net.group(g), h)
        assert np.array_equal(h, acts[g])
    assert np.array_equal(acts[-1], l1)


def test_shape_mismatch():
    net = init_network("mlp", 0)
    with pytest.raises(ShapeMismatchError):
        network_forward(net, np.zeros((2, 3, 28, 28)))
    spec, prm = identity_fc(2)
    with pytest.raises(ShapeMismatchError):
        layer_group_forward(([spec], [prm]), np.zeros((1, 3)))


@pytest.mark.parametrize("kind", ACTIVATIONS)
def test_activation_derivative_matches_fd(kind):
    rng = np.random.default_rng(0)
    z = rng.uniform(-3, 3, size=100)
    kinks = {"relu": [0.0], "hardtanh": [-1.0, 1.0]}.get(kind, [])
    z = np.array([v for v in z if all(abs(v - k) > 1e-4 for k in kinks)])
    h = 1e-5
    fd = (activate(kind, z + h) - activate(kind, z - h)) / (2 * h)
    np.testing.assert_allclose(activation_derivative(kind, z), fd, atol=1e-6)


@settings(max_examples=40, deadline=None)
@given(c=st.integers(1, 3), h=st.integers(2, 9), w=st.integers(2, 9), k=st.integers(1, 3),
       s=st.integers(1, 2), p=st.integers(0, 1), oc=st.integers(1, 4), pool=st.booleans())
def test_shape_algebra(c, h, w, k, s, p, oc, pool):
    conv = LayerSpec(CONV2D, "relu", in_channels=c, out_channels=oc, kernel_size=k, stride=s, padding=p)
    if (h + 2 * p - k) // s + 1 < 1 or (w + 2 * p - k) // s + 1 < 1:
        return
    specs = [conv]
    rng = np.random.default_rng(0)
    params = [LayerParams(rng.normal(size=conv.param_shapes()[0]), np.zeros(oc))]
    shape = conv.output_shape((c, h, w))
    if pool and min(shape[1:]) >= 2:
        specs.append(LayerSpec(MAXPOOL2D))
        params.append(LayerParams(np.zeros(0), np.zeros(0)))
        shape = specs[-1].output_shape(shape)
    specs.append(LayerSpec(FLATTEN))
    params.append(LayerParams(np.zeros(0), np.zeros(0)))
    shape = specs[-1].output_shape(shape)
    out = layer_group_forward((specs, params), rng.normal(size=(2, c, h, w)))
    assert out.shape == (2,) + shape


def test_astype_and_copy_are_independent():
    net = init_network("mlp", 0)
    f32 = net.astype(np.float32)
    assert f32.dtype == np.float32 and net.dtype == np.float64
    cp = net.copy()
    cp.params[1].weights[0, 0] += 1
    assert cp.params[1].weights[0, 0] != net.params[1].weights[0, 0]
