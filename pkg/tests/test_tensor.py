import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geocaps import tensor as T
from geocaps.errors import ContractError, ShapeError
from geocaps.gradcheck import check_gradients, finite_diff_grad, relative_error


def param(rng, *shape, scale=1.0):
    return T.parameter(rng.standard_normal(shape) * scale)


def weighted_sum(out, rng):
    """Scalar probe sum(out * R) so every output coordinate gets a distinct upstream gradient."""
    r = rng.standard_normal(out.shape)
    return lambda t: T.sum_(T.mul(t, r))


# --- conv2d ----------------------------------------------------------------
def test_conv_7x7_input_3x3_kernel_valid_gives_5x5():
    x = T.Tensor(np.zeros((1, 4, 7, 7)))
    k = T.Tensor(np.zeros((8, 4, 3, 3)))
    assert T.conv2d(x, k, 1, "valid").shape == (1, 8, 5, 5)


def test_conv_unit_1x1_kernel_is_identity(rng):
    x = T.Tensor(rng.standard_normal((2, 1, 5, 6)))
    k = T.Tensor(np.ones((1, 1, 1, 1)))
    np.testing.assert_array_equal(T.conv2d(x, k).data, x.data)


def test_conv_ones_sum_to_nine():
    out = T.conv2d(T.Tensor(np.ones((1, 1, 3, 3))), T.Tensor(np.ones((1, 1, 3, 3))), 1, "valid")
    assert out.shape == (1, 1, 1, 1)
    assert out.data.item() == 9.0


def test_conv_channel_mismatch_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(1, 3, 5, 5\).*\(2, 4, 3, 3\)"):
        T.conv2d(T.Tensor(np.zeros((1, 3, 5, 5))), T.Tensor(np.zeros((2, 4, 3, 3))))


def test_conv_matches_direct_loops(rng):
    x = rng.standard_normal((2, 3, 6, 5))
    k = rng.standard_normal((4, 3, 3, 3))
    out = T.conv2d(T.Tensor(x), T.Tensor(k), 2, "same").data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros(out.shape)
    for n in range(2):
        for o in range(4):
            for i in range(out.shape[2]):
                for j in range(out.shape[3]):
                    ref[n, o, i, j] = np.sum(xp[n, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3] * k[o])
    np.testing.assert_allclose(out, ref, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(h=st.integers(1, 12), kh=st.integers(1, 7), stride=st.integers(1, 3), pad=st.integers(0, 3))
def test_conv_output_shape_floor_formula(h, kh, stride, pad):
    if kh > h + 2 * pad:
        with pytest.raises(ShapeError):
            T.conv2d(T.Tensor(np.zeros((1, 1, h, h))), T.Tensor(np.zeros((1, 1, kh, kh))), stride, pad)
        return
    out = T.conv2d(T.Tensor(np.zeros((1, 1, h, h))), T.Tensor(np.zeros((2, 1, kh, kh))), stride, pad)
    expected = (h + 2 * pad - kh) // stride + 1
    assert out.shape == (1, 2, expected, expected)


# --- batch_norm -------------------------------------------------------------
def test_batch_norm_standardizes_each_channel(f64, rng):
    x = T.Tensor(rng.standard_normal((16, 3, 4, 4)) * 5 + 2)
    out = T.batch_norm(x, T.Tensor(np.ones(3)), T.Tensor(np.zeros(3)), "train").data
    np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0, atol=1e-5)
    np.testing.assert_allclose(out.var(axis=(0, 2, 3)), 1, atol=1e-5)


def test_batch_norm_constant_channel_gives_zero(f64):
    x = T.Tensor(np.full((4, 1, 3, 3), 7.0))
    out = T.batch_norm(x, T.Tensor(np.ones(1)), T.Tensor(np.zeros(1)), "train").data
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, 0, atol=1e-12)


def test_batch_norm_affine_rescale(f64, rng):
    x = rng.standard_normal((64, 2))
    x = (x - x.mean(0)) / x.std(0)
    out = T.batch_norm(T.Tensor(x), T.Tensor([2.0, 2.0]), T.Tensor([3.0, 3.0]), "train").data
    np.testing.assert_allclose(out.mean(0), 3, atol=1e-5)
    np.testing.assert_allclose(out.std(0), 2, atol=1e-5)


def test_batch_norm_single_sample_train_is_degenerate():
    with pytest.raises(ContractError, match="degenerate"):
        T.batch_norm(T.Tensor(np.zeros((1, 2))), T.Tensor(np.ones(2)), T.Tensor(np.zeros(2)), "train")


def test_batch_norm_running_stats_and_eval(f64, rng):
    stats = T.RunningStats(2, momentum=0.9)
    x = rng.standard_normal((32, 2)) * 3 + 1
    g, b = T.Tensor(np.ones(2)), T.Tensor(np.zeros(2))
    T.batch_norm(T.Tensor(x), g, b, "train", stats)
    np.testing.assert_allclose(stats.mean, 0.1 * x.mean(0))
    np.testing.assert_allclose(stats.var, 0.9 + 0.1 * x.var(0))
    before = stats.mean.copy()
    out = T.batch_norm(T.Tensor(x), g, b, "eval", stats).data
    np.testing.assert_array_equal(stats.mean, before)
    np.testing.assert_allclose(out, (x - stats.mean) / np.sqrt(stats.var + 1e-5))


# --- l2_normalize -------------------------------------------------------------
def test_l2_normalize_3_4():
    out = T.l2_normalize(T.Tensor(np.array([3.0, 4.0])))
    np.testing.assert_allclose(out.data, [0.6, 0.8])
    assert not out.degenerate


def test_l2_normalize_unit_vector_unchanged(f64):
    v = np.array([0.0, 1.0, 0.0])
    np.testing.assert_array_equal(T.l2_normalize(T.Tensor(v)).data, v)


def test_l2_normalize_zero_vector_flagged():
    out = T.l2_normalize(T.Tensor(np.zeros(4)))
    np.testing.assert_array_equal(out.data, 0)
    assert out.degenerate


def test_l2_normalize_idempotent(f64, rng):
    v = rng.standard_normal((50, 7)) * rng.uniform(0.01, 100, size=(50, 1))
    once = T.l2_normalize(T.Tensor(v), axis=1).data
    twice = T.l2_normalize(T.Tensor(once), axis=1).data
    np.testing.assert_allclose(twice, once, atol=1e-12, rtol=0)


# --- backward ---------------------------------------------------------------
def test_backward_square():
    x = T.parameter(np.array(3.0))
    grads = T.backward(T.mul(x, x))
    assert grads[x] == pytest.approx(6.0)


def test_backward_unreachable_parameter_gets_zero():
    x = T.parameter(np.array([1.0, 2.0]))
    p = T.parameter(np.ones((2, 2)))
    grads = T.backward(T.sum_(T.mul(x, x)), [x, p])
    np.testing.assert_array_equal(grads[p], np.zeros((2, 2)))
    assert grads[p].shape == p.shape


def test_backward_rejects_non_scalar():
    with pytest.raises(ContractError):
        T.backward(T.parameter(np.ones(3)))


def test_backward_replay_is_identical(f64, rng):
    w = param(rng, 4, 3)
    x = T.Tensor(rng.standard_normal((5, 4)))
    loss = T.sum_(T.softplus(T.affine(x, w)))
    first = T.backward(loss, [w])[w].copy()
    second = T.backward(loss, [w])[w]
    np.testing.assert_array_equal(first, second)


def test_tensor_backward_sets_grad():
    x = T.parameter(np.array([1.0, -2.0]))
    T.sum_(T.mul(x, x)).backward()
    np.testing.assert_allclose(x.grad, [2.0, -4.0])


def test_l2_normalize_grad_matches_finite_differences(f64, rng):
    v = param(rng, 6)
    r = rng.standard_normal(6)
    err = check_gradients(lambda: T.sum_(T.mul(T.l2_normalize(v), r)), [v], h=1e-5)
    assert err < 1e-6


# --- finite differences -------------------------------------------------------
def test_finite_diff_of_sum_is_ones(rng):
    x = rng.standard_normal((3, 2))
    g = finite_diff_grad(lambda a: float(np.sum(a)), x)
    np.testing.assert_allclose(g, 1.0, atol=1e-9)


def test_finite_diff_quadratic():
    g = finite_diff_grad(lambda a: float(np.sum(a * a)), np.array([1.0, 2.0]))
    np.testing.assert_allclose(g, [2.0, 4.0], atol=1e-8)


def test_three_layer_net_backward_matches_finite_differences(f64, rng):
    x = T.Tensor(rng.standard_normal((6, 5)))
    w1, b1 = param(rng, 5, 8), param(rng, 8)
    w2, b2 = param(rng, 8, 8), param(rng, 8)
    w3, b3 = param(rng, 8, 3), param(rng, 3)

    def loss():
        h = T.relu(T.affine(x, w1, b1))
        h = T.relu(T.affine(h, w2, b2))
        return T.sum_(T.softplus(T.affine(h, w3, b3)))

    assert check_gradients(loss, [w1, b1, w2, b2, w3, b3], n_coords=150) < 1e-6


# --- every primitive against finite differences (>= 100 coordinates each) ----
def _primitive_cases(rng):
    x4 = param(rng, 3, 3, 6, 6)
    k = param(rng, 4, 3, 3, 3)
    kb = param(rng, 4)
    k1 = param(rng, 4, 3, 1, 1)
    gamma, beta = param(rng, 3), param(rng, 3)
    stats = T.RunningStats(3)
    stats.mean[:] = rng.standard_normal(3)
    stats.var[:] = rng.uniform(0.5, 2, 3)
    m = param(rng, 12, 10)
    w, b = param(rng, 10, 11), param(rng, 11)
    a3, b3 = param(rng, 4, 5, 6), param(rng, 6, 7)
    other = param(rng, 12, 10)
    return {
        "conv2d": (lambda: T.conv2d(x4, k, 1, "valid", kb), [x4, k, kb]),
        "conv2d_strided_same": (lambda: T.conv2d(x4, k, 2, "same"), [x4, k]),
        "conv2d_pointwise_strided": (lambda: T.conv2d(x4, k1, 2, "valid", kb), [x4, k1, kb]),
        "batch_norm_train": (lambda: T.batch_norm(x4, gamma, beta, "train"), [x4, gamma, beta]),
        "batch_norm_eval": (lambda: T.batch_norm(x4, gamma, beta, "eval", stats), [x4, gamma, beta]),
        "affine": (lambda: T.affine(m, w, b), [m, w, b]),
        "relu": (lambda: T.relu(m), [m]),
        "softmax": (lambda: T.softmax(m, axis=1), [m]),
        "add": (lambda: T.add(m, other), [m, other]),
        "add_broadcast": (lambda: T.add(a3, T.sum_(b3, axis=1)), [a3, b3]),
        "mul": (lambda: T.mul(m, other), [m, other]),
        "matmul": (lambda: T.matmul(a3, b3), [a3, b3]),
        "reshape_transpose": (lambda: T.transpose(T.reshape(m, (3, 4, 10)), (2, 0, 1)), [m]),
        "sum": (lambda: T.sum_(a3, axis=1, keepdims=True), [a3]),
        "l2_normalize": (lambda: T.l2_normalize(m, axis=1), [m]),
        "squash": (lambda: T.squash(m, axis=1), [m]),
        "softplus": (lambda: T.softplus(T.mul(m, 3.0)), [m]),
    }


@pytest.mark.parametrize("name", list(_primitive_cases(np.random.default_rng(0))))
def test_primitive_gradients(f64, name):
    rng = np.random.default_rng(7)
    fn, params = _primitive_cases(rng)[name]
    probe = rng.standard_normal(fn().shape)
    err = check_gradients(lambda: T.sum_(T.mul(fn(), probe)), params, n_coords=120, seed=3)
    assert err < 1e-6, f"{name}: relative error {err:.3g}"


def test_forward_is_bit_identical_across_runs(rng):
    x = T.Tensor(rng.standard_normal((4, 3, 9, 9)).astype(np.float32))
    k = T.Tensor(rng.standard_normal((5, 3, 3, 3)).astype(np.float32))
    g, b = T.Tensor(np.ones(5, np.float32)), T.Tensor(np.zeros(5, np.float32))

    def run():
        h = T.batch_norm(T.conv2d(x, k, 2, "same"), g, b, "train")
        return T.l2_normalize(T.reshape(T.relu(h), (4, -1)), axis=1).data

    np.testing.assert_array_equal(run(), run())


def test_relative_error_is_norm_based():
    assert relative_error(np.array([1.0, 0.0]), np.array([1.0, 1e-9])) < 1e-8
