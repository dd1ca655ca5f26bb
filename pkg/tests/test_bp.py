import numpy as np
import pytest

from conftest import blobs, dense, identity_fc
from pcadapt.bp import accuracy, backward, bp_train_batch, bp_train_epoch
from pcadapt.errors import ShapeMismatchError
from pcadapt.nn import init_network, network_from_groups
from pcadapt.optim import AdamWConfig, AdamWOptimizer, WarmupCosine, loss_value_and_grad, one_hot
from pcadapt.verify import check_bp_gradients, random_batch


def toy_net(seed=0):
    rng = np.random.default_rng(seed)
    return network_from_groups([[dense(rng, 2, 16, "relu")], [dense(rng, 16, 2)]], (2,))


def toy_batches(x, labels, batch, rng):
    order = rng.permutation(len(x))
    y = one_hot(labels, 2)
    return [(x[order[i:i + batch]], y[order[i:i + batch]]) for i in range(0, len(x), batch)]


def opt_for(lr, steps, wd=0.0):
    return AdamWOptimizer(AdamWConfig(lr, wd), WarmupCosine.for_run(steps))


def test_identity_net_zero_loss():
    net = network_from_groups([[identity_fc(3)]], (3,))
    x = np.array([[1.0, -2.0, 0.5]])
    loss, grads = backward(net, x, x.copy(), "se")
    assert loss == 0
    assert not np.any(grads[0].weights) and not np.any(grads[0].bias)


@pytest.mark.parametrize("loss", ["se", "ce"])
def test_mlp_gradients_match_fd(loss):
    rng = np.random.default_rng(7)
    net = init_network("mlp", 7)
    x = rng.uniform(0, 1, size=(4, 1, 28, 28))
    y = one_hot(rng.integers(0, 10, 4))
    worst, checked, _ = check_bp_gradients(net, x, y, loss, rng, per_layer=50)
    assert checked >= 100 and worst < 1e-5


def test_vgg_reduced_gradients_match_fd():
    rng = np.random.default_rng(0)
    net = init_network("vgg5", 1, width=8, in_shape=(3, 8, 8))
    x, y = random_batch(net, rng)
    worst, checked, _ = check_bp_gradients(net, x, y, "ce", rng, per_layer=20)
    assert checked >= 80 and worst < 1e-5


def test_duplicated_batch_same_grads(rng):
    net = init_network("mlp", 1)
    x = rng.uniform(size=(3, 1, 28, 28))
    y = one_hot(rng.integers(0, 10, 3))
    _, g1 = backward(net, x, y, "ce")
    _, g2 = backward(net, np.concatenate([x, x]), np.concatenate([y, y]), "ce")
    for a, b in zip(g1, g2):
        if a is not None:
            np.testing.assert_allclose(a.weights, b.weights, rtol=1e-12, atol=1e-15)


def test_backward_matches_last_layer_by_hand(rng):
    net = toy_net()
    x = rng.normal(size=(5, 2))
    y = one_hot(rng.integers(0, 2, 5), 2)
    _, grads = backward(net, x, y, "se")
    h = np.maximum(x @ net.params[0].weights.T + net.params[0].bias, 0)
    out = h @ net.params[1].weights.T + net.params[1].bias
    _, gout = loss_value_and_grad("se", out, y)
    np.testing.assert_allclose(grads[1].weights, gout.T @ h, rtol=1e-12)


def test_zero_lr_leaves_params_bitwise():
    net = toy_net()
    before = net.copy()
    x, lab = blobs(64)
    bp_train_epoch(net, toy_batches(x, lab, 16, np.random.default_rng(0)), "ce",
                   AdamWOptimizer(AdamWConfig(0.0), WarmupCosine(0, 4)))
    for a, b in zip(before.params, net.params):
        assert np.array_equal(a.weights, b.weights) and np.array_equal(a.bias, b.bias)


def test_toy_separable_reaches_100_percent():
    x, lab = blobs(200)
    net = toy_net()
    rng = np.random.default_rng(0)
    epochs, batch = 50, 20
    opt = opt_for(1e-2, epochs * 10)
    for _ in range(epochs):
        bp_train_epoch(net, toy_batches(x, lab, batch, rng), "ce", opt)
    assert accuracy(net, x, lab) == 1.0


def test_loss_decreases_first_steps():
    x, lab = blobs(64)
    net = toy_net()
    y = one_hot(lab, 2)
    opt = AdamWOptimizer(AdamWConfig(1e-3), WarmupCosine(0, 100))
    losses = [bp_train_batch(net, x, y, "se", opt) for _ in range(6)]
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_training_deterministic():
    def train():
        x, lab = blobs(100)
        net = toy_net(3)
        rng = np.random.default_rng(5)
        opt = opt_for(1e-2, 30)
        for _ in range(6):
            bp_train_epoch(net, toy_batches(x, lab, 20, rng), "ce", opt)
        return net
    a, b = train(), train()
    for pa, pb in zip(a.params, b.params):
        assert np.array_equal(pa.weights, pb.weights)


def test_backward_shape_mismatch():
    net = toy_net()
    with pytest.raises(ShapeMismatchError):
        backward(net, np.zeros((2, 3)), np.zeros((2, 2)), "se")
