import numpy as np
import pytest

from malmtl import nn
from malmtl.nn import checkpoint
from malmtl.nn import functional as F
from malmtl.nn.gradcheck import module_grad_error, numeric_grad, rel_error

TOL = 1e-4


def away_from_kinks(rng, shape, margin=0.05):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-300) * margin + x, x)


def check_module(layer, x, seed):
    return module_grad_error(layer, x, seed + 1000)


SEEDS = range(20)


@pytest.mark.parametrize("seed", SEEDS)
def test_conv_gradients(seed):
    rng = np.random.default_rng(seed)
    stride, pad = [(1, 0), (1, 1), (2, 1)][seed % 3]
    layer = nn.Conv2d(2, 3, 3, stride=stride, pad=pad, rng=rng)
    assert check_module(layer, rng.standard_normal((2, 2, 6, 5)), seed) < TOL


@pytest.mark.parametrize("seed", SEEDS)
def test_linear_gradients(seed):
    rng = np.random.default_rng(seed)
    layer = nn.Linear(7, 4, rng=rng)
    assert check_module(layer, rng.standard_normal((3, 7)), seed) < TOL


@pytest.mark.parametrize("seed", SEEDS)
def test_pool_gradients(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 2, 7, 6))
    assert check_module(nn.MaxPool2d(), x, seed) < TOL
    assert check_module(nn.AdaptiveAvgPool2d((3, 4)), x, seed) < TOL
    assert check_module(nn.GlobalAvgPool(), x, seed) < TOL
    assert check_module(nn.Upsample2x(), x, seed) < TOL


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("kind", nn.Activation.KINDS)
def test_activation_gradients(kind, seed):
    rng = np.random.default_rng(seed)
    layer = nn.Activation(kind, channels=3, init_slope=0.2)
    x = away_from_kinks(rng, (2, 3, 4, 4))
    # includes the PReLU slope gradient
    assert check_module(layer, x, seed) < TOL


@pytest.mark.parametrize("seed", SEEDS)
def test_squashing_gradients(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((3, 5)) * 1.5
    assert check_module(nn.Tanh(), x, seed) < TOL
    assert check_module(nn.Sigmoid(), x, seed) < TOL


@pytest.mark.parametrize("seed", SEEDS)
def test_cross_entropy_gradient(seed):
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((4, 5)) * 2
    labels = rng.integers(0, 5, 4)
    _, grad = F.softmax_cross_entropy(z, labels)
    num = numeric_grad(lambda: F.softmax_cross_entropy(z, labels)[0], z)
    assert rel_error(grad, num) < TOL


def test_sequential_gradients():
    rng = np.random.default_rng(3)
    net = nn.Sequential(
        nn.Conv2d(1, 2, 3, rng=rng), nn.Activation("prelu", 2), nn.MaxPool2d(),
        nn.AdaptiveAvgPool2d((2, 2)), nn.Flatten(), nn.Linear(8, 3, rng=rng),
    )
    assert check_module(net, rng.standard_normal((2, 1, 8, 8)), 3) < TOL


# -- worked values -------------------------------------------------------------

def test_conv_worked_example():
    x = np.arange(16.0).reshape(1, 4, 4)
    w = np.ones((1, 1, 2, 2))
    out = F.conv2d(x, w)
    assert out.shape == (1, 3, 3)
    assert out[0, 0, 0] == 0 + 1 + 4 + 5
    assert F.conv2d(x, w, stride=2).shape == (1, 2, 2)


def test_conv_against_loops(rng):
    x = rng.standard_normal((2, 3, 5, 6))
    w = rng.standard_normal((4, 3, 3, 3))
    out = F.conv2d(x, w, stride=2, pad=1)
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros(out.shape)
    for n in range(2):
        for o in range(4):
            for i in range(out.shape[2]):
                for j in range(out.shape[3]):
                    ref[n, o, i, j] = np.sum(xp[n, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3] * w[o])
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_conv_shape_errors():
    with pytest.raises(nn.ShapeMismatch):
        F.conv2d(np.zeros((2, 4, 4)), np.zeros((1, 3, 3, 3)))
    with pytest.raises(nn.ShapeMismatch):
        F.conv2d(np.zeros((1, 2, 2)), np.zeros((1, 1, 3, 3)))


def test_maxpool_tie_goes_to_first():
    x = np.ones((1, 1, 2, 2))
    out, cache = F.maxpool2d_forward(x)
    assert out[0, 0, 0, 0] == 1
    dx = F.maxpool2d_backward(cache, np.ones((1, 1, 1, 1)))
    assert dx[0, 0].tolist() == [[1, 0], [0, 0]]


def test_maxpool_drops_trailing_edge():
    x = np.arange(25.0).reshape(1, 5, 5)
    out = F.maxpool2d(x)
    assert out.shape == (1, 2, 2)
    assert out[0].tolist() == [[6, 8], [16, 18]]


def test_adaptive_pool_regions(rng):
    x = rng.standard_normal((1, 7, 5))
    out = F.adaptive_avg_pool(x, (3, 2))
    for i in range(3):
        for j in range(2):
            r0, r1 = (i * 7) // 3, ((i + 1) * 7) // 3
            c0, c1 = (j * 5) // 2, ((j + 1) * 5) // 2
            assert out[0, i, j] == pytest.approx(x[0, r0:r1, c0:c1].mean(), abs=1e-12)
    with pytest.raises(nn.ShapeMismatch):
        F.adaptive_avg_pool(x, (8, 1))


def test_fully_connected_example():
    w = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert F.fully_connected(np.array([1.0, 1.0]), w, np.array([0.5, 0.0])).tolist() == [3.5, 7.0]
    with pytest.raises(nn.ShapeMismatch):
        F.fully_connected(np.zeros(3), w)


def test_activation_values():
    x = np.array([-2.0, 0.0, 3.0])
    assert nn.activate(x, "relu").tolist() == [0, 0, 3]
    assert nn.activate(x, "leaky_relu").tolist() == [-0.02, 0, 3]
    assert nn.activate(x, "prelu", a=np.array(0.5)).tolist() == [-1, 0, 3]
    assert nn.activate(x, "elu")[0] == pytest.approx(np.expm1(-2.0))
    with pytest.raises(ValueError):
        nn.activate(x, "swish")
    with pytest.raises(ValueError):
        nn.activate(x, "prelu")


@pytest.mark.parametrize("slope,kind", [(0.0, "relu"), (0.01, "leaky_relu")])
def test_prelu_special_cases_exact(slope, kind, rng):
    x = rng.standard_normal(10_000)
    x[:10] = 0.0
    dout = rng.standard_normal(10_000)
    out_p, cache_p = F.activate_forward(x, "prelu", np.array(slope))
    out_r, cache_r = F.activate_forward(x, kind)
    assert np.array_equal(out_p, out_r)
    assert np.array_equal(F.activate_backward(cache_p, dout)[0], F.activate_backward(cache_r, dout)[0])


def test_elu_continuous_at_zero():
    eps = 1e-9
    left, right = nn.activate(np.array([-eps, eps]), "elu", alpha=1.0)
    assert abs(left - right) < 1e-8


def test_softmax_properties(rng):
    z = rng.standard_normal((5, 6)) * 10
    p = nn.softmax(z)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(nn.softmax(z + 100.0), p, atol=1e-12)
    big = nn.softmax(np.array([1000.0, 0.0]))
    assert np.all(np.isfinite(big)) and big[0] == 1.0


def test_cross_entropy_values():
    loss, grad = nn.softmax_cross_entropy(np.zeros(4), 2)
    assert loss == pytest.approx(np.log(4), abs=1e-12)
    np.testing.assert_allclose(grad, [0.25, 0.25, -0.75, 0.25])
    loss, _ = nn.softmax_cross_entropy(np.array([[0.0, 50.0]]), [1])
    assert loss < 1e-20
    with pytest.raises(nn.LabelOutOfRange):
        nn.softmax_cross_entropy(np.zeros(3), 3)
    with pytest.raises(nn.ShapeMismatch):
        nn.softmax_cross_entropy(np.zeros((2, 3)), [0])


# -- optimizers ----------------------------------------------------------------

def first_step(opt, theta, g):
    return opt.update("p", np.array([theta]), np.array([g]))[0]


def test_adagrad_first_step():
    assert first_step(nn.Adagrad(lr=0.1, eps=0.0), 0.0, 2.0) == pytest.approx(-0.1, abs=1e-10)


@pytest.mark.parametrize("g", [0.3, -5.0, 1e3])
def test_adam_first_step_is_minus_lr_sign(g):
    lr, eps = 0.01, 1e-8
    expected = -lr * g / (abs(g) + eps)
    assert first_step(nn.Adam(lr=lr, eps=eps), 0.0, g) == pytest.approx(expected, abs=1e-10)


def test_rmsprop_first_step():
    lr, rho, eps, g = 0.01, 0.9, 1e-8, 2.0
    expected = -lr * g / (np.sqrt((1 - rho) * g * g) + eps)
    assert first_step(nn.RMSprop(lr=lr, rho=rho, eps=eps), 1.0, g) == pytest.approx(1.0 + expected, abs=1e-10)


def test_nadam_first_step():
    lr, b1, b2, eps, g = 0.002, 0.9, 0.999, 1e-8, 0.5
    m = (1 - b1) * g
    m_hat = b1 * m / (1 - b1 ** 2) + (1 - b1) * g / (1 - b1)
    v_hat = (1 - b2) * g * g / (1 - b2)
    expected = -lr * m_hat / (np.sqrt(v_hat) + eps)
    assert first_step(nn.Nadam(lr=lr, beta1=b1, beta2=b2, eps=eps), 0.0, g) == pytest.approx(expected, abs=1e-10)


def test_adadelta_first_step():
    rho, eps, g = 0.95, 1e-6, 1.5
    expected = -np.sqrt(eps) / np.sqrt((1 - rho) * g * g + eps) * g
    assert first_step(nn.Adadelta(rho=rho, eps=eps), 0.0, g) == pytest.approx(expected, abs=1e-10)


@pytest.mark.parametrize("name", ["adam", "adagrad", "rmsprop", "nadam", "adadelta"])
def test_zero_gradient_is_noop(name, rng):
    opt = nn.make_optimizer(name)
    theta = rng.standard_normal(5)
    out = theta
    for _ in range(3):
        out = opt.update("p", out, np.zeros(5))
    assert np.array_equal(out, theta)


def test_optimizer_state_is_per_parameter():
    opt = nn.Adam(lr=0.1)
    a, b = nn.Param("a", [0.0]), nn.Param("b", [0.0])
    a.grad[:] = 1.0
    opt.step([a])
    opt.step([a])
    b.grad[:] = 1.0
    opt.step([b])
    # b's first step is unaffected by a's history
    assert b.value[0] == pytest.approx(-0.1, abs=1e-6)
    assert opt.state[id(a)]["t"] == 2


def test_optimizer_errors():
    with pytest.raises(ValueError):
        nn.make_optimizer("sgd-momentum")
    with pytest.raises(nn.ShapeMismatch):
        nn.Adam().update("p", np.zeros(2), np.zeros(3))


def test_adam_minimizes_quadratic():
    opt = nn.Adam(lr=0.1)
    x = np.array([3.0, -2.0])
    for _ in range(300):
        x = opt.update("x", x, 2 * x)
    assert np.all(np.abs(x) < 1e-2)


# -- checkpoint ----------------------------------------------------------------

def test_checkpoint_roundtrip(tmp_path, rng):
    params = {"a": rng.standard_normal((2, 3)), "b": np.array([1.5]), "c": np.zeros((0,))}
    path = tmp_path / "m.ck"
    checkpoint.save(path, params, {"k": 1})
    meta, back = checkpoint.load(path)
    assert meta == {"k": 1}
    assert list(back) == ["a", "b", "c"]
    for k in params:
        assert np.array_equal(back[k], params[k])
    assert checkpoint.dumps(params, {"k": 1}) == path.read_bytes()


def test_checkpoint_rejects_garbage():
    blob = checkpoint.dumps({"a": np.ones(4)})
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.loads(b"NOTACKPT" + blob[8:])
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.loads(blob[:-1])
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.loads(blob[:5])


def test_layers_deterministic_init():
    a = nn.Conv2d(3, 4, 3, rng=np.random.default_rng(9))
    b = nn.Conv2d(3, 4, 3, rng=np.random.default_rng(9))
    assert all(np.array_equal(p.value, q.value) for p, q in zip(a.params(), b.params()))


def test_backward_accumulates():
    rng = np.random.default_rng(0)
    layer = nn.Linear(3, 2, rng=rng)
    x = rng.standard_normal((4, 3))
    out, cache = layer.forward(x)
    layer.backward(cache, np.ones_like(out))
    once = [p.grad.copy() for p in layer.params()]
    layer.backward(cache, np.ones_like(out))
    for p, g in zip(layer.params(), once):
        np.testing.assert_allclose(p.grad, 2 * g)
