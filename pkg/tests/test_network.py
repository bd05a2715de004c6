import numpy as np
import pytest

from selfverify import kernels
from selfverify.ascent import AscentConfig, gradient_ascent
from selfverify.errors import NonFiniteError, ObjectiveError, ShapeError
from selfverify.network import (LayerSpec, Network, NetworkSpec, Objective, forward,
                                forward_batch, input_gradient, objective_and_gradient)

from conftest import make_net, random_params, small_cnn_spec
from oracles import central_difference, conv2d_naive, net_forward_naive, pool_naive


def _dense_net(w, b, labels=None):
    """1x1 conv on a (n,1,1) input flagged last_conv, then a dense head."""
    n_in = w.shape[1]
    spec = NetworkSpec([
        LayerSpec("conv2d", out_channels=n_in, kernel=(1, 1), last_conv=True),
        LayerSpec("flatten"),
        LayerSpec("dense", out_features=w.shape[0]),
    ], labels or [str(i) for i in range(w.shape[0])], (n_in, 1, 1))
    eye = np.eye(n_in).reshape(n_in, n_in, 1, 1)
    return Network(spec, [{"weight": eye, "bias": np.zeros(n_in)}, {},
                          {"weight": w, "bias": b}])


def test_identity_logits():
    net = _dense_net(np.eye(2), np.zeros(2))
    logits, _ = forward(net, np.array([1.0, 2.0]).reshape(2, 1, 1))
    np.testing.assert_array_equal(logits, [1.0, 2.0])


def test_conv_scalar_scaling(backend):
    spec = NetworkSpec([
        LayerSpec("conv2d", out_channels=1, kernel=(1, 1), last_conv=True),
        LayerSpec("flatten"),
        LayerSpec("dense", out_features=1),
    ], ["only"], (1, 3, 3))
    net = Network(spec, [{"weight": np.full((1, 1, 1, 1), 2.0), "bias": np.zeros(1)}, {},
                         {"weight": np.ones((1, 9)), "bias": np.zeros(1)}])
    _, trace = forward(net, np.ones((1, 3, 3)), trace=True)
    np.testing.assert_array_equal(trace.outputs[0], np.full((1, 3, 3), 2.0))


@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1), (2, 0)])
def test_conv_kernel_matches_naive(backend, stride, pad):
    rng = np.random.default_rng(stride * 10 + pad)
    x = rng.normal(size=(2, 4, 8, 8))
    w = rng.normal(size=(3, 4, 3, 3))
    b = rng.normal(size=3)
    out = kernels.conv2d_forward(x, w, b, stride, pad)
    for i in range(2):
        np.testing.assert_allclose(out[i], conv2d_naive(x[i], w, b, stride, pad), atol=1e-6)


@pytest.mark.parametrize("size,stride", [(2, 2), (3, 1), (2, 1)])
def test_maxpool_matches_naive(backend, size, stride):
    x = np.random.default_rng(size).normal(size=(2, 4, 8, 8))
    out, _ = kernels.maxpool_forward(x, size, stride)
    for i in range(2):
        np.testing.assert_allclose(out[i], pool_naive(x[i], size, stride, "max"), atol=1e-6)


def test_maxpool_tie_goes_to_first_element(backend):
    x = np.ones((1, 1, 2, 2))
    _, idx = kernels.maxpool_forward(x, 2, 2)
    assert idx[0, 0, 0, 0] == 0
    g = kernels.maxpool_backward(np.ones((1, 1, 1, 1)), idx, 2, 2)
    np.testing.assert_array_equal(g[0, 0], [[1, 0], [0, 0]])


def test_backends_agree():
    if len(kernels.BACKENDS) < 2:
        pytest.skip("compiled extension not built")
    rng = np.random.default_rng(3)
    x = rng.normal(size=(3, 4, 9, 7)).astype(np.float32)
    w = rng.normal(size=(5, 4, 3, 3)).astype(np.float32)
    b = rng.normal(size=5).astype(np.float32)
    py, cy = kernels.BACKENDS["python"], kernels.BACKENDS["cython"]
    np.testing.assert_allclose(py.conv2d_forward(x, w, b, 2, 1), cy.conv2d_forward(x, w, b, 2, 1),
                               rtol=1e-5, atol=1e-5)
    g = rng.normal(size=(3, 5, 5, 4)).astype(np.float32)
    np.testing.assert_allclose(py.conv2d_backward_input(g, w, 9, 7, 2, 1),
                               cy.conv2d_backward_input(g, w, 9, 7, 2, 1), rtol=1e-5, atol=1e-5)
    o1, i1 = py.maxpool_forward(x, 2, 2)
    o2, i2 = cy.maxpool_forward(x, 2, 2)
    np.testing.assert_array_equal(o1, o2)
    np.testing.assert_array_equal(i1, i2)


@pytest.mark.parametrize("pool", ["maxpool2d", "avgpool2d"])
def test_network_forward_matches_naive(backend, pool):
    net = make_net(small_cnn_spec(in_ch=4, hw=8, pool=pool), seed=7, dtype=np.float64)
    x = np.random.default_rng(1).normal(size=(4, 8, 8))
    logits, _ = forward(net, x)
    np.testing.assert_allclose(logits, net_forward_naive(net, x), atol=1e-6)


def test_forward_is_bit_reproducible(small_net):
    x = np.random.default_rng(0).random((2, 8, 8))
    a, _ = forward(small_net, x)
    b, _ = forward(small_net, x)
    assert a.tobytes() == b.tobytes()


def test_batch_matches_single(small_net):
    xs = np.random.default_rng(0).random((5, 2, 8, 8))
    batch, _ = forward_batch(small_net, xs)
    for i in range(5):
        np.testing.assert_allclose(batch[i], forward(small_net, xs[i])[0], rtol=1e-6, atol=1e-6)


def test_trace_covers_every_layer(small_net):
    logits, trace = forward(small_net, np.zeros((2, 8, 8)), trace=True)
    assert len(trace.outputs) == len(small_net.spec.layers)
    assert trace.last_conv.shape == (3, 4, 4)
    assert small_net.spec.layers[trace.last_conv_index].kind == "relu"
    assert logits.shape == (3,)


def test_shape_and_finiteness_errors(small_net):
    with pytest.raises(ShapeError):
        forward(small_net, np.zeros((2, 8, 7)))
    bad = np.zeros((2, 8, 8))
    bad[0, 0, 0] = np.nan
    with pytest.raises(NonFiniteError):
        forward(small_net, bad)
    spec = small_cnn_spec()
    params = random_params(spec, np.random.default_rng(0))
    params[0]["weight"][0, 0, 0, 0] = np.inf
    with pytest.raises(NonFiniteError):
        Network(spec, params)


def test_overflow_is_an_error():
    spec = small_cnn_spec()
    params = random_params(spec, np.random.default_rng(0))
    params[0]["weight"][:] = 1e30
    params[3]["weight"][:] = 1e30
    net = Network(spec, params)
    with pytest.raises(NonFiniteError):
        forward(net, np.ones((2, 8, 8)))


def test_spec_validation_rejects_bad_layers():
    with pytest.raises(ShapeError):
        LayerSpec("batchnorm")
    layers = small_cnn_spec().layers
    no_flag = [LayerSpec(l.kind, **{k: v for k, v in l.to_dict().items()
                                   if k not in ("kind", "last_conv")}) for l in layers]
    with pytest.raises(ShapeError):
        NetworkSpec(no_flag, ["a", "b", "c"], (2, 8, 8)).validate()
    with pytest.raises(ShapeError):
        NetworkSpec(layers, ["a", "b"], (2, 8, 8)).validate()
    wrong_in = [LayerSpec("conv2d", in_channels=3, out_channels=2, kernel=(1, 1), last_conv=True),
                LayerSpec("flatten"), LayerSpec("dense", out_features=1)]
    with pytest.raises(ShapeError):
        NetworkSpec(wrong_in, ["a"], (2, 4, 4)).validate()


# -- input gradients ---------------------------------------------------------

def test_linear_gradient_is_weight():
    w = np.array([[0.5, -1.5, 2.0]])
    net = _dense_net(w, np.zeros(1)).astype(np.float64)
    g = input_gradient(net, np.ones((3, 1, 1)), Objective.logit(net, 0))
    np.testing.assert_array_equal(g.ravel(), w.ravel())


def test_relu_dead_region_has_zero_gradient():
    spec = NetworkSpec([
        LayerSpec("conv2d", out_channels=1, kernel=(1, 1), last_conv=True),
        LayerSpec("relu"),
        LayerSpec("flatten"),
        LayerSpec("dense", out_features=1),
    ], ["y"], (1, 1, 1))
    net = Network(spec, [{"weight": np.ones((1, 1, 1, 1)), "bias": np.zeros(1)}, {}, {},
                         {"weight": np.ones((1, 1)), "bias": np.zeros(1)}], dtype=np.float64)
    g = input_gradient(net, np.full((1, 1, 1), -2.0), Objective.logit(net, 0))
    assert g.item() == 0.0


def _gradcheck(net, objective, x):
    analytic = input_gradient(net, x, objective)
    numeric = central_difference(
        lambda z: objective_and_gradient(net, z, objective, batched=False)[0], x, h=1e-4)
    denom = np.maximum(np.abs(numeric).max(), 1e-12)
    return np.abs(analytic - numeric).max() / denom


LAYER_VARIANTS = {
    "maxpool": small_cnn_spec(pool="maxpool2d"),
    "avgpool": small_cnn_spec(pool="avgpool2d"),
    "softmax": NetworkSpec(small_cnn_spec().layers + [LayerSpec("softmax")],
                           ["a", "b", "c"], (2, 8, 8)),
    "strided": NetworkSpec([
        LayerSpec("conv2d", out_channels=3, kernel=(3, 3), stride=2, padding=1),
        LayerSpec("relu"),
        LayerSpec("conv2d", out_channels=4, kernel=(2, 2), last_conv=True),
        LayerSpec("relu"),
        LayerSpec("avgpool2d", size=3, stride=3),
        LayerSpec("flatten"),
        LayerSpec("dense", out_features=5),
        LayerSpec("relu"),
        LayerSpec("dense", out_features=2),
    ], ["a", "b"], (2, 8, 8)),
}


@pytest.mark.parametrize("variant", sorted(LAYER_VARIANTS))
def test_gradient_matches_finite_differences(backend, variant):
    spec = LAYER_VARIANTS[variant]
    net = make_net(spec, seed=11, dtype=np.float64)
    x = np.random.default_rng(5).normal(size=spec.input_shape)
    worst = 0.0
    for layer in range(len(spec.layers)):
        for index in range(min(net.layer_shape(layer)[0], 2)):
            worst = max(worst, _gradcheck(net, Objective(layer, index), x))
    assert worst < 1e-4


def test_gradient_rejects_unknown_objective(small_net):
    with pytest.raises(ObjectiveError):
        input_gradient(small_net, np.zeros((2, 8, 8)), Objective(99, 0))
    with pytest.raises(ObjectiveError):
        input_gradient(small_net, np.zeros((2, 8, 8)), Objective(small_net.last_conv_index, 3))


def test_gradient_is_deterministic(small_net):
    x = np.random.default_rng(2).random((2, 8, 8))
    obj = Objective.last_conv(small_net, 1)
    assert input_gradient(small_net, x, obj).tobytes() == input_gradient(small_net, x, obj).tobytes()


# -- gradient ascent ----------------------------------------------------------

def test_ascent_on_concave_quadratic_moves_toward_zero():
    x0 = np.array([3.0, -2.0, 1.5])
    res = gradient_ascent(None, x0, lambda x: (-(x ** 2).sum(), -2 * x),
                          AscentConfig(eta=0.1, steps=20, value_box=None))
    assert np.linalg.norm(res.x) < np.linalg.norm(x0)
    assert not res.warning


def test_ascent_linear_objective_saturates_box_corner():
    w = np.array([[1.0, -2.0, 0.5, -0.1]])
    net = _dense_net(w, np.zeros(1)).astype(np.float64)
    res = gradient_ascent(net, np.full((4, 1, 1), 0.5), Objective.logit(net, 0),
                          AscentConfig(eta=0.5, steps=50, value_box=(0.0, 1.0)))
    np.testing.assert_array_equal(res.x.ravel(), (w.ravel() > 0).astype(float))


def test_ascent_improves_on_most_seeds(backend):
    spec = NetworkSpec([
        LayerSpec("conv2d", out_channels=4, kernel=(3, 3), padding=1, last_conv=True),
        LayerSpec("relu"),
        LayerSpec("flatten"),
        LayerSpec("dense", out_features=2),
    ], ["a", "b"], (1, 6, 6))
    improved = 0
    for seed in range(100):
        net = make_net(spec, seed=seed)
        x0 = np.random.default_rng(seed).random(spec.input_shape)
        res = gradient_ascent(net, x0, Objective.logit(net, 0),
                              AscentConfig(eta=0.1, steps=50, value_box=None))
        improved += res.history[-1] > res.history[0]
    assert improved >= 95


def test_ascent_flags_regression():
    # step far too large on a concave objective overshoots
    res = gradient_ascent(None, np.array([1.0]), lambda x: (-(x ** 2).sum(), -2 * x),
                          AscentConfig(eta=5.0, steps=3, value_box=None))
    assert res.warning


def test_ascent_config_validation():
    with pytest.raises(ValueError):
        AscentConfig(eta=0)
    with pytest.raises(ValueError):
        AscentConfig(steps=0)
    with pytest.raises(ValueError):
        AscentConfig(regularization="semantic", blur_every=0)
