import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import fd_grad, rel_err
from splitlab import nn

FD_TOL = 1e-5
seeds = st.integers(0, 2**32 - 1)
fifty = settings(max_examples=50, deadline=None, derandomize=True)


def check_layer(layer, x, g):
    """Compare backward() with finite differences of sum(forward(x) * R)."""
    out, cache = layer.forward(x)
    R = g.standard_normal(out.shape)
    grads, gx = layer.backward(cache, R)

    def obj_x(xx):
        return float(np.sum(layer.forward(xx)[0] * R))

    assert rel_err(gx, fd_grad(obj_x, x)) <= FD_TOL
    for name, p in layer.params().items():
        def obj_p(pp, name=name):
            old = getattr(layer, name)
            setattr(layer, name, pp)
            try:
                return float(np.sum(layer.forward(x)[0] * R))
            finally:
                setattr(layer, name, old)

        assert rel_err(grads[name], fd_grad(obj_p, p.copy())) <= FD_TOL


@fifty
@given(seeds, st.booleans())
def test_dense_gradients(seed, bias):
    g = np.random.default_rng(seed)
    layer = nn.Dense.init(int(g.integers(1, 6)), int(g.integers(1, 6)), g, bias=bias)
    check_layer(layer, g.standard_normal((int(g.integers(1, 5)), layer.d_in)), g)


@fifty
@given(seeds, st.sampled_from([1, 2]))
def test_conv_gradients(seed, stride):
    g = np.random.default_rng(seed)
    k = int(g.integers(1, 4))
    layer = nn.Conv2d.init(int(g.integers(1, 3)), int(g.integers(1, 3)), k, g, stride=stride)
    x = g.standard_normal((2, layer.W.shape[1], k + int(g.integers(0, 4)), k + int(g.integers(0, 4))))
    check_layer(layer, x, g)


@fifty
@given(seeds)
def test_relu_gradients(seed):
    g = np.random.default_rng(seed)
    x = g.standard_normal((3, 5))
    x[np.abs(x) < 1e-3] = 0.5  # keep finite differences off the kink
    check_layer(nn.ReLU(), x, g)


@fifty
@given(seeds, st.sampled_from([1, 2, 3]))
def test_maxpool_gradients(seed, k):
    g = np.random.default_rng(seed)
    x = g.permutation(np.arange(2 * 2 * 7 * 6, dtype=float)).reshape(2, 2, 7, 6) * 0.01
    check_layer(nn.MaxPool(k), x, g)


@fifty
@given(seeds)
def test_shape_layers_gradients(seed):
    g = np.random.default_rng(seed)
    check_layer(nn.Flatten(), g.standard_normal((2, 2, 3, 3)), g)
    check_layer(nn.Reshape((2, 3)), g.standard_normal((4, 6)), g)
    check_layer(nn.Sigmoid(), g.standard_normal((3, 4)), g)
    Q, _ = np.linalg.qr(g.standard_normal((4, 4)))
    check_layer(nn.FixedRotation(Q), g.standard_normal((3, 4)), g)


@fifty
@given(seeds)
def test_loss_gradients(seed):
    g = np.random.default_rng(seed)
    pred, target = g.standard_normal((4, 3)), g.standard_normal((4, 3))
    _, gm = nn.loss_mse(pred, target)
    assert rel_err(gm, fd_grad(lambda p: nn.loss_mse(p, target)[0], pred)) <= FD_TOL
    labels = g.integers(0, 3, size=4)
    _, gc = nn.loss_cross_entropy(pred, labels)
    assert rel_err(gc, fd_grad(lambda p: nn.loss_cross_entropy(p, labels)[0], pred)) <= FD_TOL
    img = g.standard_normal((2, 1, 4, 5))
    _, gt = nn.total_variation(img)
    assert rel_err(gt, fd_grad(lambda x: nn.total_variation(x)[0], img)) <= FD_TOL


@fifty
@given(seeds)
def test_network_gradients(seed):
    g = np.random.default_rng(seed)
    net = nn.Network([nn.Conv2d.init(1, 2, 3, g), nn.ReLU(), nn.MaxPool(2), nn.Flatten(),
                      nn.Dense.init(8, 3, g)])
    x = g.standard_normal((2, 1, 6, 6))
    labels = g.integers(0, 3, size=2)
    out, cache = nn.forward(net, x)
    _, gout = nn.loss_cross_entropy(out, labels)
    grads, gx = nn.backward(net, cache, gout)

    def loss_at(xx):
        return nn.loss_cross_entropy(nn.forward(net, xx)[0], labels)[0]

    assert rel_err(gx, fd_grad(loss_at, x)) <= FD_TOL
    flat = net.flat_grads(grads)
    params = net.get_params()
    for i, p in enumerate(params):
        def obj(pp, i=i):
            trial = [q.copy() for q in params]
            trial[i] = pp
            net.set_params(trial)
            try:
                return loss_at(x)
            finally:
                net.set_params(params)

        assert rel_err(flat[i], fd_grad(obj, p.copy())) <= FD_TOL


def test_mse_and_ce_values():
    assert nn.loss_mse([[1.0]], [[3.0]])[0] == 4.0
    v, _ = nn.loss_cross_entropy(np.zeros((2, 4)), np.array([0, 3]))
    assert v == pytest.approx(np.log(4))
    # large logits stay finite
    v, g = nn.loss_cross_entropy(np.array([[1e4, -1e4]]), np.array([1]))
    assert np.isfinite(v) and np.all(np.isfinite(g))


def test_shape_errors_name_the_layer():
    g = np.random.default_rng(0)
    net = nn.Network([nn.Dense.init(4, 3, g), nn.Dense.init(5, 2, g)])
    with pytest.raises(nn.ShapeError) as e:
        nn.forward(net, np.zeros((2, 4)))
    assert e.value.layer_index == 1
    with pytest.raises(nn.ShapeError):
        nn.loss_mse(np.zeros((2, 2)), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        nn.loss_cross_entropy(np.zeros((2, 3)), np.array([0, 3]))


def test_cache_is_single_use():
    g = np.random.default_rng(0)
    net = nn.Network([nn.Dense.init(3, 2, g)])
    out, cache = nn.forward(net, np.ones((1, 3)))
    nn.backward(net, cache, np.ones_like(out))
    with pytest.raises(ValueError):
        nn.backward(net, cache, np.ones_like(out))


def test_fixed_rotation_rejects_non_orthogonal():
    with pytest.raises(ValueError):
        nn.FixedRotation(np.array([[1.0, 0.1], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        nn.Network([nn.FixedRotation(np.eye(2)), nn.FixedRotation(np.eye(2))])


def test_non_finite_input_rejected():
    g = np.random.default_rng(0)
    with pytest.raises(ValueError):
        nn.forward(nn.Network([nn.Dense.init(2, 2, g)]), np.array([[np.nan, 0.0]]))


def test_set_params_checks_shapes():
    g = np.random.default_rng(0)
    net = nn.Network([nn.Dense.init(3, 2, g)])
    with pytest.raises(nn.ShapeError):
        net.set_params([np.zeros((2, 3)), np.zeros(2)])
    with pytest.raises(ValueError):
        net.set_params([np.zeros((3, 2))])


def test_conv_matches_direct_loop(rng0):
    layer = nn.Conv2d.init(2, 3, 3, rng0, stride=2)
    x = rng0.standard_normal((2, 2, 7, 8))
    out, _ = layer.forward(x)
    ref = np.zeros(out.shape)
    for s in range(2):
        for o in range(3):
            for i in range(out.shape[2]):
                for j in range(out.shape[3]):
                    patch = x[s, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3]
                    ref[s, o, i, j] = np.sum(patch * layer.W[o]) + layer.b[o]
    np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)
