import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from audiossl import tensor as T
from audiossl.checks import op_checks
from audiossl.errors import BatchSizeError, ContractError, ShapeError
from audiossl.gradcheck import check_gradients, relative_error
from audiossl.tensor import Tensor, backward


def conv_reference(x, k, b=None):
    """Six nested loops, zero padding 1, cross-correlation."""
    cin, h, w = x.shape
    cout = k.shape[0]
    out = np.zeros((cout, h, w))
    for o in range(cout):
        for i in range(h):
            for j in range(w):
                acc = 0.0 if b is None else b[o]
                for c in range(cin):
                    for di in range(3):
                        for dj in range(3):
                            ii, jj = i + di - 1, j + dj - 1
                            if 0 <= ii < h and 0 <= jj < w:
                                acc += x[c, ii, jj] * k[o, c, di, dj]
                out[o, i, j] = acc
    return out


def maxpool_reference(x):
    c, h, w = x.shape
    out = np.zeros((c, h // 2, w // 2))
    for ch in range(c):
        for i in range(h // 2):
            for j in range(w // 2):
                out[ch, i, j] = max(x[ch, 2 * i + a, 2 * j + b] for a in range(2) for b in range(2))
    return out


# -- forward semantics -------------------------------------------------------


def test_matmul_identity_and_zero():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(T.matmul(Tensor(np.eye(2)), Tensor(a)).data, a)
    np.testing.assert_array_equal(T.matmul(Tensor(np.eye(2)), Tensor(np.zeros((2, 1)))).data, np.zeros((2, 1)))


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_conv_zero_input_gives_zero():
    k = np.random.default_rng(0).normal(size=(4, 2, 3, 3))
    out = T.conv2d(Tensor(np.zeros((2, 5, 5))), Tensor(k), Tensor(np.zeros(4)))
    np.testing.assert_array_equal(out.data, 0.0)


def test_conv_delta_kernel_is_identity():
    x = np.arange(9.0).reshape(1, 3, 3)
    k = np.zeros((1, 1, 3, 3))
    k[0, 0, 1, 1] = 1.0
    np.testing.assert_array_equal(T.conv2d(Tensor(x), Tensor(k)).data, x)


def test_conv_matches_nested_loops():
    rng = np.random.default_rng(1)
    x, k, b = rng.normal(size=(2, 5, 5)), rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3)
    np.testing.assert_allclose(T.conv2d(Tensor(x), Tensor(k), Tensor(b)).data, conv_reference(x, k, b), atol=1e-10, rtol=0)


@pytest.mark.parametrize("cin", [1, 8])  # both the im2col and the per-tap path
def test_conv_batched_matches_per_item(cin):
    rng = np.random.default_rng(2)
    x, k = rng.normal(size=(3, cin, 6, 4)), rng.normal(size=(2, cin, 3, 3))
    out = T.conv2d(Tensor(x), Tensor(k)).data
    for n in range(3):
        np.testing.assert_allclose(out[n], conv_reference(x[n], k), atol=1e-10, rtol=0)


def test_conv_channel_mismatch():
    with pytest.raises(ShapeError):
        T.conv2d(Tensor(np.ones((2, 4, 4))), Tensor(np.ones((1, 3, 3, 3))))


def test_maxpool_cases():
    np.testing.assert_array_equal(T.maxpool2d(Tensor(np.full((2, 4, 6), 1.5))).data, np.full((2, 2, 3), 1.5))
    np.testing.assert_array_equal(T.maxpool2d(Tensor([[[1.0, 2.0], [3.0, 4.0]]])).data, [[[4.0]]])


def test_maxpool_matches_window_scan():
    x = np.random.default_rng(3).normal(size=(1, 6, 6))
    np.testing.assert_array_equal(T.maxpool2d(Tensor(x)).data, maxpool_reference(x))


def test_maxpool_odd_size_floors():
    assert T.maxpool2d(Tensor(np.ones((1, 5, 7)))).shape == (1, 2, 3)


def test_maxpool_too_small():
    with pytest.raises(ShapeError):
        T.maxpool2d(Tensor(np.ones((1, 1, 4))))


def test_maxpool_tie_routes_to_first():
    x = Tensor(np.ones((1, 2, 2)), requires_grad=True)
    g = backward(T.sum(T.maxpool2d(x)))[x]
    np.testing.assert_array_equal(g, [[[1.0, 0.0], [0.0, 0.0]]])


def test_reduce_max_tie_routes_to_first():
    x = Tensor([[2.0, 5.0, 5.0]], requires_grad=True)
    g = backward(T.sum(T.reduce_max_axis(x, 1)))[x]
    np.testing.assert_array_equal(g, [[0.0, 1.0, 0.0]])


def test_batchnorm_train_normalizes():
    x = np.random.default_rng(4).normal(3.0, 2.0, size=(32, 4))
    y = T.batchnorm(Tensor(x), Tensor(np.ones(4)), Tensor(np.zeros(4))).data
    np.testing.assert_allclose(y.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(y.var(axis=0), x.var(axis=0) / (x.var(axis=0) + 1e-5), rtol=1e-12)


def test_batchnorm_zero_gamma():
    x = np.random.default_rng(5).normal(size=(6, 3))
    y = T.batchnorm(Tensor(x), Tensor(np.zeros(3)), Tensor(np.zeros(3)))
    np.testing.assert_array_equal(y.data, 0.0)


def test_batchnorm_running_stats_and_eval():
    x = np.random.default_rng(6).normal(2.0, 3.0, size=(10, 2))
    rm, rv = np.zeros(2), np.ones(2)
    T.batchnorm(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), rm, rv, mode="train")
    np.testing.assert_allclose(rm, 0.1 * x.mean(axis=0))
    np.testing.assert_allclose(rv, 0.9 + 0.1 * x.var(axis=0, ddof=1))
    y = T.batchnorm(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), rm, rv, mode="eval").data
    np.testing.assert_allclose(y, (x - rm) / np.sqrt(rv + 1e-5))


def test_batchnorm_needs_two_rows_in_train():
    with pytest.raises(BatchSizeError):
        T.batchnorm(Tensor(np.ones((1, 3))), Tensor(np.ones(3)), Tensor(np.zeros(3)))
    # eval mode is fine with one row
    T.batchnorm(Tensor(np.ones((1, 3))), Tensor(np.ones(3)), Tensor(np.zeros(3)), np.zeros(3), np.ones(3), mode="eval")


def test_small_ops():
    np.testing.assert_allclose(T.l2_normalize(Tensor([3.0, 4.0])).data, [0.6, 0.8])
    np.testing.assert_array_equal(T.relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])
    np.testing.assert_array_equal(T.l2_normalize(Tensor(np.zeros((2, 3)))).data, 0.0)
    a, b = Tensor(np.ones((2, 3))), Tensor(np.zeros((2, 1)))
    assert T.concat(a, b, 1).shape == (2, 4)
    with pytest.raises(ShapeError):
        T.add(Tensor(np.ones(3)), Tensor(np.ones(4)))
    with pytest.raises(ShapeError):
        T.concat(a, Tensor(np.ones((3, 3))), 1)


def test_relu_subgradient_zero_at_zero():
    x = Tensor([0.0, 1.0], requires_grad=True)
    np.testing.assert_array_equal(backward(T.sum(T.relu(x)))[x], [0.0, 1.0])


# -- backward contract -------------------------------------------------------


def test_sum_gradient_is_ones():
    x = Tensor(np.random.default_rng(7).normal(size=(2, 3, 4)), requires_grad=True)
    np.testing.assert_array_equal(backward(T.sum(x))[x], np.ones((2, 3, 4)))


def test_square_norm_gradient_is_2x():
    data = np.random.default_rng(8).normal(size=5)
    x = Tensor(data, requires_grad=True)
    np.testing.assert_allclose(backward(T.sum(T.mul(x, x)))[x], 2 * data)


def test_non_scalar_root_rejected():
    with pytest.raises(ContractError):
        backward(Tensor(np.ones(3), requires_grad=True))


def test_fan_out_accumulates_exactly():
    data = np.random.default_rng(9).normal(size=(3, 3))
    x = Tensor(data, requires_grad=True)
    f = lambda t: T.sum(T.mul(T.relu(t), t))  # noqa: E731
    once = backward(f(x))[x]
    x2 = Tensor(data, requires_grad=True)
    twice = backward(T.add(f(x2), f(x2)))[x2]
    np.testing.assert_array_equal(twice, 2 * once)


def test_each_rule_runs_once():
    calls = []

    def counting(name, parent):
        return Tensor.from_op(parent.data * 1.0, (parent,), lambda g: (calls.append(name) or g,), name)

    x = Tensor(np.ones(3), requires_grad=True)
    a = counting("a", x)
    b = counting("b", a)
    c = counting("c", a)  # diamond: a feeds b and c
    backward(T.sum(T.add(b, c)))
    assert sorted(calls) == ["a", "b", "c"]


def test_no_grad_and_detach_block_gradient():
    x = Tensor(np.ones(3), requires_grad=True)
    with T.no_grad():
        y = T.scale(x, 2.0)
    assert not y.requires_grad
    z = T.add(T.sum(T.mul(x, x)), T.sum(T.scale(x, 3.0).detach()))
    np.testing.assert_array_equal(backward(z)[x], 2 * np.ones(3))


def test_checked_mode_rejects_nan():
    with T.checked_mode():
        with pytest.raises(ContractError):
            Tensor([1.0, np.nan])
        with pytest.raises(ContractError), np.errstate(over="ignore"):
            T.scale(Tensor([1e308]), 1e10)
    Tensor([np.nan])  # unchecked by default


def test_tensors_are_immutable():
    t = Tensor(np.ones(2))
    with pytest.raises(ValueError):
        t.data[0] = 3.0


# -- finite differences --------------------------------------------------------


def test_relative_error_definition():
    assert relative_error(1.0, 1.0001) == pytest.approx(1e-4 / 1.0001)
    assert relative_error(0.0, 0.0) == 0.0


@pytest.mark.parametrize("result", op_checks(), ids=lambda r: r.name)
def test_op_gradients(result):
    assert result.passed, f"{result.name}: {result.max_rel_error:.3e} > {result.tolerance}"


def test_matmul_gradient_of_sum():
    rng = np.random.default_rng(10)
    r = check_gradients(lambda a, b: T.sum(T.matmul(a, b)), [rng.normal(size=(3, 4)), rng.normal(size=(4, 2))], 1e-3, 1e-4)
    assert r.passed and r.checked == 20


def test_gradcheck_detects_a_wrong_rule():
    def bad_square(x):
        return T.sum(Tensor.from_op(x.data**2, (x,), lambda g: (g * x.data,), "bad"))

    assert not check_gradients(bad_square, [np.array([1.0, 2.0])]).passed


@settings(max_examples=25, deadline=None)
@given(
    n=st.integers(2, 4),
    c=st.integers(1, 3),
    h=st.integers(2, 5),
    w=st.integers(2, 5),
    seed=st.integers(0, 2**16),
)
def test_conv_gradient_property(n, c, h, w, seed):
    rng = np.random.default_rng(seed)
    weights = rng.normal(size=(n, 2, h, w))
    r = check_gradients(
        lambda x, k: T.sum(T.mul(T.conv2d(x, k), Tensor(weights))),
        [rng.normal(size=(n, c, h, w)), rng.normal(size=(2, c, 3, 3))],
        1e-3,
        1e-4,
    )
    assert r.passed


def test_conv_bitwise_deterministic():
    rng = np.random.default_rng(11)
    x, k = Tensor(rng.normal(size=(4, 3, 8, 8))), Tensor(rng.normal(size=(5, 3, 3, 3)))
    assert T.conv2d(x, k).data.tobytes() == T.conv2d(x, k).data.tobytes()


def test_every_listed_op_is_exercised():
    names = {r.name.split("_")[0] for r in op_checks()}
    for op in ("matmul", "linear", "conv2d", "maxpool2d", "batchnorm", "relu", "l2", "reduce", "concat", "reshape", "transpose", "add"):
        assert any(n.startswith(op.split("_")[0]) for n in names), op
    # sanity: combinations of small shapes all run
    for shape in itertools.product([1, 2], [2, 3]):
        T.reduce_mean_axis(Tensor(np.ones(shape)), 1)
