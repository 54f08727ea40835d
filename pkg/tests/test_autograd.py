import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tonematch.nn import autograd as T
from tonematch.nn import (BackwardError, BatchNorm2d, Conv2d, ConvTranspose2d, InstanceNorm2d, LeakyReLU,
                          NonFiniteError, ResidualBlock, Sequential, ShapeError, Tanh, Tensor, grad_check,
                          init_weights, no_grad)
from tonematch.nn.autograd import conv2d_reference
from tonematch.nn.layers import ReLU

EPS, TOL = 1e-3, 1e-3


def leaf(rng, *shape, scale=1.0, away=0.0):
    """float64 leaf; with ``away`` > 0 every entry is at least that far from zero."""
    a = rng.standard_normal(shape) * scale
    if away:
        a = np.sign(a) * (np.abs(a) + away)
    return Tensor(a, requires_grad=True)


def check(fn, *tensors, tol=TOL):
    rep = grad_check(fn, tensors, eps=EPS, tol=tol)
    assert rep.passed, (rep.max_rel_error, rep.worst, rep.failures[:3])
    return rep


# --------------------------------------------------------------------------
# trivial gradients


def test_sum_gradient_is_ones(rng):
    x = leaf(rng, 2, 3, 4, 5)
    x.sum().backward()
    np.testing.assert_array_equal(x.grad, np.ones(x.shape))


def test_tanh_gradient_at_zero():
    x = Tensor(np.zeros((1, 2, 3, 3)), requires_grad=True)
    T.tanh(x).sum().backward()
    np.testing.assert_array_equal(x.grad, 1.0)


def test_double_backward_rejected(rng):
    x = leaf(rng, 3)
    y = (x * x).sum()
    y.backward()
    with pytest.raises(BackwardError, match="released"):
        y.backward()


def test_backward_needs_scalar_or_gradient(rng):
    x = leaf(rng, 3)
    with pytest.raises(BackwardError):
        (x * 2.0).backward()
    with pytest.raises(ShapeError):
        (x * 2.0).backward(np.ones(4))


def test_gradients_accumulate_over_shared_inputs(rng):
    x = leaf(rng, 4)
    (x * x + x).sum().backward()
    np.testing.assert_allclose(x.grad, 2 * x.data + 1)


def test_no_grad_records_nothing(rng):
    x = leaf(rng, 3)
    with no_grad():
        y = x * 3.0
    assert not y.requires_grad and y.is_leaf


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_tripwire_raises_on_nan():
    x = Tensor(np.array([1.0, np.inf]))
    with pytest.raises(NonFiniteError, match="mul"):
        x * 0.0
    prev = T.set_tripwire(False)
    try:
        assert np.isnan((x * 0.0).data[1])
    finally:
        T.set_tripwire(prev)


def test_grad_shape_matches_value(rng):
    x = leaf(rng, 2, 3, 6, 6)
    w = leaf(rng, 4, 3, 3, 3)
    T.conv2d(x, w, stride=2).square().sum().backward()
    assert x.grad.shape == x.shape and w.grad.shape == w.shape


# --------------------------------------------------------------------------
# convolution oracles


def test_conv_ramp_matches_direct_loop():
    x = np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4)
    w = np.arange(9, dtype=np.float64).reshape(1, 1, 3, 3) - 4
    out = T.conv2d(Tensor(x), Tensor(w)).data
    expected = np.zeros((1, 1, 2, 2))
    for i in range(2):
        for j in range(2):
            expected[0, 0, i, j] = sum(x[0, 0, i + a, j + b] * w[0, 0, a, b] for a in range(3) for b in range(3))
    np.testing.assert_array_equal(out, expected)


@given(st.integers(0, 2**31), st.sampled_from([1, 2]), st.integers(1, 3), st.integers(1, 3), st.sampled_from([1, 3, 4]))
def test_im2col_matches_loop_bitwise(seed, stride, cin, cout, k):
    # small integers keep every partial sum exact, so summation order cannot matter
    r = np.random.default_rng(seed)
    x = r.integers(-4, 5, (2, cin, 7, 6)).astype(np.float32)
    w = r.integers(-3, 4, (cout, cin, k, k)).astype(np.float32)
    b = r.integers(-2, 3, cout).astype(np.float32)
    fast = T.conv2d(Tensor(x), Tensor(w), Tensor(b), stride).data
    np.testing.assert_array_equal(fast, conv2d_reference(x, w, b, stride))


def test_identity_1x1_conv():
    conv = Conv2d(3, 3, 1)
    conv.weight.data = np.eye(3, dtype=np.float32).reshape(3, 3, 1, 1)
    x = np.random.default_rng(0).standard_normal((2, 3, 5, 5)).astype(np.float32)
    np.testing.assert_array_equal(conv(Tensor(x)).data, x)


@pytest.mark.parametrize("side", [4, 8, 10])
def test_stride2_then_transpose_restores_size(side):
    down = Conv2d(2, 3, 3, stride=2, pad=1)
    up = ConvTranspose2d(3, 2, 3, stride=2, pad=1, output_padding=1)
    x = Tensor(np.zeros((1, 2, side, side), np.float32))
    assert up(down(x)).shape == x.shape


def test_conv_rejects_bad_shapes():
    with pytest.raises(ShapeError):
        T.conv2d(Tensor(np.zeros((1, 2, 5, 5))), Tensor(np.zeros((1, 3, 3, 3))))
    with pytest.raises(ShapeError):
        T.conv2d(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 3, 3))))
    with pytest.raises(ShapeError):
        T.pad2d(Tensor(np.zeros((1, 1, 2, 2))), 2, "reflect")
    with pytest.raises(ShapeError):
        T.avg_pool2(Tensor(np.zeros((1, 1, 3, 4))))


def test_instance_norm_statistics(rng):
    x = Tensor(rng.normal(3.0, 5.0, (2, 3, 8, 8)))
    y = T.instance_norm(x).data
    np.testing.assert_allclose(y.mean(axis=(2, 3)), 0, atol=1e-6)
    np.testing.assert_allclose(y.var(axis=(2, 3)), 1, atol=1e-4)


@given(st.floats(0.1, 50), st.floats(-20, 20), st.integers(0, 1000))
def test_instance_norm_affine_invariance(a, b, seed):
    # the variance stabilizer breaks exact invariance by O(eps / var), so it is made negligible here
    x = np.random.default_rng(seed).standard_normal((1, 2, 6, 6))
    y1 = T.instance_norm(Tensor(x), eps=1e-12).data
    y2 = T.instance_norm(Tensor(a * x + b), eps=1e-12).data
    np.testing.assert_allclose(y1, y2, atol=1e-5)


def test_forward_is_bitwise_deterministic(rng):
    net = init_weights(Sequential(Conv2d(1, 4, 3, 1, 1, "reflect"), InstanceNorm2d(4), ReLU(),
                                  ResidualBlock(4)), 3)
    x = Tensor(rng.standard_normal((2, 1, 12, 12)).astype(np.float32))
    assert net(x).data.tobytes() == net(x).data.tobytes()


# --------------------------------------------------------------------------
# finite-difference suite: elementwise and reductions


def test_gc_linear_layer_exact(rng):
    # a 1x1 conv is a linear layer; with a quadratic loss central differences are exact
    x, w, b = leaf(rng, 2, 3, 2, 2), leaf(rng, 4, 3, 1, 1), leaf(rng, 4)
    target = rng.standard_normal((2, 4, 2, 2))
    rep = grad_check(lambda: T.mse(T.conv2d(x, w, b), target), [x, w, b], eps=EPS, tol=1e-6)
    assert rep.passed, rep.max_rel_error


def test_gc_add_broadcast(rng):
    a, b = leaf(rng, 2, 3, 4, 4), leaf(rng, 1, 3, 1, 1)
    check(lambda: a + b, a, b)


def test_gc_sub(rng):
    a, b = leaf(rng, 3, 4), leaf(rng, 3, 4)
    check(lambda: a - b, a, b)


def test_gc_rsub_scalar(rng):
    a = leaf(rng, 5)
    check(lambda: 1.0 - a, a)


def test_gc_mul_broadcast(rng):
    a, b = leaf(rng, 2, 3, 4), leaf(rng, 3, 1)
    check(lambda: a * b, a, b)


def test_gc_div_and_neg(rng):
    a = leaf(rng, 6)
    check(lambda: -(a / 3.0), a)


@pytest.mark.parametrize("axis", [None, 1, (2, 3)])
def test_gc_sum(rng, axis):
    a = leaf(rng, 2, 3, 4, 4)
    check(lambda: a.sum(axis), a)


def test_gc_mean(rng):
    a = leaf(rng, 2, 3, 4, 4)
    check(lambda: a.mean((0, 2)), a)


def test_gc_abs(rng):
    a = leaf(rng, 10, away=0.05)
    check(lambda: a.abs(), a)


def test_gc_square(rng):
    a = leaf(rng, 10)
    check(lambda: a.square(), a)


def test_gc_tanh(rng):
    a = leaf(rng, 10)
    check(lambda: T.tanh(a), a)


def test_gc_relu(rng):
    a = leaf(rng, 20, away=0.1)
    check(lambda: T.relu(a), a)


def test_gc_leaky_relu(rng):
    a = leaf(rng, 20, away=0.1)
    check(lambda: T.leaky_relu(a, 0.2), a)


def test_gc_cast(rng):
    a = leaf(rng, 6)
    check(lambda: T.cast(a, np.float64) * 2.0, a)


def test_gc_reshape(rng):
    a = leaf(rng, 2, 6)
    check(lambda: a.reshape(3, 4) * Tensor(np.arange(12.0).reshape(3, 4)), a)


def test_gc_concat(rng):
    a, b = leaf(rng, 1, 2, 3, 3), leaf(rng, 1, 1, 3, 3)
    check(lambda: T.concat([a, b], 1), a, b)


# --------------------------------------------------------------------------
# finite-difference suite: spatial ops


@pytest.mark.parametrize("mode", ["zero", "reflect"])
def test_gc_pad(rng, mode):
    a = leaf(rng, 1, 2, 4, 5)
    check(lambda: T.pad2d(a, 2, mode), a)


@pytest.mark.parametrize("stride", [1, 2])
def test_gc_conv2d(rng, stride):
    x, w, b = leaf(rng, 2, 2, 7, 7), leaf(rng, 3, 2, 3, 3), leaf(rng, 3)
    check(lambda: T.conv2d(x, w, b, stride), x, w, b)


def test_gc_conv2d_no_bias_k4(rng):
    x, w = leaf(rng, 1, 2, 8, 8), leaf(rng, 2, 2, 4, 4)
    check(lambda: T.conv2d(x, w, None, 2), x, w)


def test_gc_conv_transpose(rng):
    x, w, b = leaf(rng, 2, 3, 3, 4), leaf(rng, 3, 2, 3, 3), leaf(rng, 2)
    check(lambda: T.conv_transpose2d(x, w, b), x, w, b)


def test_gc_instance_norm(rng):
    x, g, b = leaf(rng, 2, 3, 4, 4), leaf(rng, 3), leaf(rng, 3)
    check(lambda: T.instance_norm(x, g, b), x, g, b)


def test_gc_batch_norm_train(rng):
    x, g, b = leaf(rng, 3, 2, 3, 3), leaf(rng, 2), leaf(rng, 2)
    check(lambda: T.batch_norm(x, g, b), x, g, b)


def test_gc_batch_norm_running_stats(rng):
    x, g, b = leaf(rng, 2, 2, 3, 3), leaf(rng, 2), leaf(rng, 2)
    stats = (np.array([0.1, -0.2]), np.array([1.5, 0.7]))
    check(lambda: T.batch_norm(x, g, b, running=stats), x, g, b)


def test_gc_avg_pool(rng):
    x = leaf(rng, 1, 2, 4, 6)
    check(lambda: T.avg_pool2(x), x)


def test_gc_upsample(rng):
    x = leaf(rng, 1, 2, 3, 2)
    check(lambda: T.upsample2(x), x)


def test_gc_mse(rng):
    x = leaf(rng, 2, 1, 3, 3)
    check(lambda: T.mse(x, np.ones(x.shape)), x)


def test_gc_l1(rng):
    x = leaf(rng, 2, 1, 3, 3, away=0.05)
    check(lambda: T.l1(x, np.zeros(x.shape)), x)


# --------------------------------------------------------------------------
# finite-difference suite: layers and composites


def params64(module):
    module.astype(np.float64)
    return module.parameters()


def _kink_free(make, pre_relu, margin=0.05, tries=200):
    """Resample until no pre-activation lies within ``margin`` of a ReLU kink."""
    for seed in range(tries):
        net, x = make(seed)
        with no_grad():
            if np.abs(pre_relu(net, x).data).min() > margin:
                return net, x
    raise AssertionError("no kink-free instance found")


def test_gc_conv_module_reflect(rng):
    conv = init_weights(Conv2d(2, 3, 3, 1, 1, "reflect"), 0, std=1.0)
    x = leaf(rng, 1, 2, 5, 5)
    check(lambda: conv(x), x, *params64(conv))


def test_gc_conv_transpose_module(rng):
    up = init_weights(ConvTranspose2d(2, 2, 3, 2, 1, 1), 0, std=1.0)
    x = leaf(rng, 1, 2, 3, 3)
    check(lambda: up(x), x, *params64(up))


def test_gc_instance_norm_module(rng):
    norm = init_weights(InstanceNorm2d(3), 0, std=0.5)
    x = leaf(rng, 2, 3, 3, 3)
    check(lambda: norm(x), x, *params64(norm))


def test_gc_batch_norm_module(rng):
    norm = init_weights(BatchNorm2d(2), 0, std=0.5)
    x = leaf(rng, 4, 2, 2, 2)
    check(lambda: norm(x), x, *params64(norm))


def test_gc_leaky_tanh_stack(rng):
    net = init_weights(Sequential(Conv2d(1, 2, 3, 2, 1), LeakyReLU(0.2), Conv2d(2, 1, 3, 1, 1), Tanh()), 0, std=0.5)
    x = leaf(rng, 1, 1, 6, 6)
    check(lambda: net(x), x, *params64(net))


def test_gc_conv_instancenorm_relu_stack():
    def make(seed):
        r = np.random.default_rng(seed)
        net = init_weights(Sequential(Conv2d(2, 3, 3, 1, 1, "reflect"), InstanceNorm2d(3), ReLU()), seed, std=1.0)
        params64(net)
        return net, Tensor(r.standard_normal((1, 2, 4, 4)), requires_grad=True)

    net, x = _kink_free(make, lambda n, x: Sequential(n[0], n[1])(x))
    check(lambda: net(x), x, *net.parameters())


@pytest.mark.parametrize("norm", ["instance", "batch"])
def test_gc_residual_block(norm):
    def make(seed):
        r = np.random.default_rng(seed)
        block = init_weights(ResidualBlock(2, norm), seed, std=1.0)
        params64(block)
        return block, Tensor(r.standard_normal((2, 2, 4, 4)), requires_grad=True)

    block, x = _kink_free(make, lambda b, x: Sequential(b.body[0], b.body[1])(x), margin=0.02)
    check(lambda: block(x), x, *block.parameters())


def test_gc_downsample_upsample_composite(rng):
    x = leaf(rng, 1, 2, 4, 4)
    w = leaf(rng, 2, 2, 3, 3)
    check(lambda: T.upsample2(T.avg_pool2(T.conv2d(T.pad2d(x, 1, "reflect"), w))), x, w)


def test_gc_detects_corrupted_backward(rng):
    x = leaf(rng, 5)

    def bad_square(t):
        return Tensor._make(t.data ** 2, (t,), lambda g: (g * t.data,), "bad_square")  # missing factor 2

    rep = grad_check(lambda: bad_square(x), [x], eps=EPS, tol=TOL)
    assert not rep.passed and rep.failures


def test_gc_limit_on_parameters():
    with pytest.raises(ValueError, match="limited"):
        grad_check(lambda: None, [Tensor(np.zeros(10_001), requires_grad=True)])
