"""Tests for tensors, the tape, ops and the gradient checker."""

import numpy as np
import pytest

from src.autodiff import ops
from src.autodiff.gradcheck import grad_check
from src.autodiff.graph import Graph, current_graph
from src.autodiff.tensor import ScalarMode, Tensor, tensor_new
from src.errors import ContractError, DomainError, ModeError, NumericError, ShapeError

V = ScalarMode.VERIFICATION


def leaf(values, mode=V, name=None):
    return Tensor(np.asarray(values, dtype=mode.dtype), requires_grad=True, name=name, mode=mode)


def test_tensor_new_zeros():
    t = tensor_new([2, 3])
    assert t.shape == (2, 3)
    assert t.data.dtype == np.float32
    np.testing.assert_array_equal(t.data, np.zeros((2, 3)))


def test_tensor_new_gaussian_is_reproducible():
    a = tensor_new([1], fill="gaussian", sigma=1e-3, rng=np.random.default_rng(7))
    b = tensor_new([1], fill="gaussian", sigma=1e-3, rng=np.random.default_rng(7))
    assert a.data[0] == b.data[0]


def test_tensor_new_gaussian_std():
    t = tensor_new([10000], fill="gaussian", sigma=1e-3, rng=np.random.default_rng(1), mode=V)
    assert 0.8e-3 <= t.data.std() <= 1.2e-3


@pytest.mark.parametrize("shape", [[], [0], [2, -1]])
def test_tensor_new_rejects_bad_shapes(shape):
    with pytest.raises(ShapeError):
        tensor_new(shape)


def test_gaussian_fill_needs_rng():
    with pytest.raises(ContractError):
        tensor_new([3], fill="gaussian")


def test_matmul_identity_and_hand_values():
    m = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
    np.testing.assert_array_equal(ops.matmul(Tensor(np.eye(2)), m).data, m.data)
    out = ops.matmul(m, Tensor(np.array([[5.0], [6.0]])))
    np.testing.assert_array_equal(out.data, [[17.0], [39.0]])


def test_matmul_shape_mismatch():
    with pytest.raises(ShapeError):
        ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    a = leaf(rng.standard_normal((3, 4)), name="a")
    b = leaf(rng.standard_normal((4, 2)), name="b")
    report = grad_check(lambda: ops.reduce_sum(ops.matmul(a, b)), [a, b])
    assert report.max_rel_err < 1e-6


def test_verification_matmul_rows_are_independent():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((7, 33))
    b = rng.standard_normal((33, 5))
    full = ops.matmul_data(a, b)
    for i in range(7):
        np.testing.assert_array_equal(ops.matmul_data(a[i:i + 1], b)[0], full[i])


def test_elementwise_values():
    np.testing.assert_array_equal(ops.elementwise("relu", Tensor(np.array([-1.0, 0.0, 2.0]))).data,
                                  [0.0, 0.0, 2.0])
    assert ops.elementwise("sigmoid", Tensor(np.array([0.0]))).item() == 0.5
    assert ops.elementwise("scale", Tensor(np.array([2.0])), factor=3.0).item() == 6.0


def test_sigmoid_derivative_at_zero():
    x = leaf([0.0])
    with Graph(V) as graph:
        graph.backward(ops.sigmoid(x))
    assert x.grad[0] == 0.25


def test_relu_subgradient_at_zero_is_zero():
    x = leaf([0.0, 1.0])
    with Graph(V) as graph:
        graph.backward(ops.reduce_sum(ops.relu(x)))
    np.testing.assert_array_equal(x.grad, [0.0, 1.0])


def test_channel_broadcast_gradient_sums_over_rows():
    x = leaf(np.ones((4, 3)))
    b = leaf([1.0, 2.0, 3.0])
    with Graph(V) as graph:
        graph.backward(ops.reduce_sum(ops.add(x, b)))
    np.testing.assert_array_equal(b.grad, [4.0, 4.0, 4.0])


def test_incompatible_shapes_raise():
    with pytest.raises(ShapeError):
        ops.add(Tensor(np.ones((2, 3))), Tensor(np.ones(2)))


def test_elementwise_arity_and_unknown_op():
    with pytest.raises(ContractError):
        ops.elementwise("add", Tensor(np.ones(2)))
    with pytest.raises(ContractError):
        ops.elementwise("tanh", Tensor(np.ones(2)))


def test_log_of_non_positive_in_test_mode():
    x = leaf([0.0, 1.0])
    with Graph(V, check_numerics=True):
        with pytest.raises(DomainError):
            ops.log(x)


def test_non_finite_output_in_test_mode():
    x = leaf([1000.0])
    with Graph(V, check_numerics=True):
        with pytest.raises(NumericError):
            ops.exp(x)


def test_reductions():
    assert ops.reduce("sum", Tensor(np.array([1.0, 2.0, 3.0]))).item() == 6.0
    np.testing.assert_array_equal(
        ops.reduce("mean", Tensor(np.array([[1.0, 3.0], [3.0, 5.0]])), axes=0).data, [2.0, 4.0])


def test_max_backward_routes_to_lowest_index():
    x = leaf([2.0, 2.0, 1.0])
    with Graph(V) as graph:
        graph.backward(ops.reduce_max(x))
    np.testing.assert_array_equal(x.grad, [1.0, 0.0, 0.0])


def test_reduce_rejects_bad_axis():
    with pytest.raises(ShapeError):
        ops.reduce_sum(Tensor(np.ones((2, 2))), axes=2)


def test_concat_and_take_rows_gradients():
    rng = np.random.default_rng(5)
    a = leaf(rng.standard_normal((3, 2)), name="a")
    b = leaf(rng.standard_normal((2, 2)), name="b")
    w = Tensor(rng.standard_normal((5, 2)))

    def loss():
        stacked = ops.concat_rows([a, b])
        picked = ops.take_rows(stacked, np.array([4, 0, 0, 2, 1]))
        return ops.reduce_sum(ops.mul(picked, w))

    assert grad_check(loss, [a, b]).max_rel_err < 1e-6


def test_take_rows_repeats_accumulate():
    x = leaf(np.zeros((3, 1)))
    with Graph(V) as graph:
        graph.backward(ops.reduce_sum(ops.take_rows(x, np.array([1, 1, 2]))))
    np.testing.assert_array_equal(x.grad[:, 0], [0.0, 2.0, 1.0])


def test_backward_twice_is_bitwise_identical():
    rng = np.random.default_rng(11)
    w = leaf(rng.standard_normal((4, 3)))
    x = Tensor(rng.standard_normal((6, 4)))
    with Graph(V) as graph:
        loss = ops.reduce_mean(ops.sigmoid(ops.matmul(x, w)))
        graph.backward(loss)
        first = w.grad.copy()
        graph.backward(loss)
    np.testing.assert_array_equal(first, w.grad)


def test_unreached_leaf_gets_zero_gradient():
    used = leaf([1.0, 2.0])
    unused = leaf([3.0, 4.0])
    with Graph(V) as graph:
        ops.scale(unused, 2.0)
        graph.backward(ops.reduce_sum(used))
    np.testing.assert_array_equal(unused.grad, [0.0, 0.0])


def test_mode_mixing_is_rejected():
    with pytest.raises(ModeError):
        ops.add(Tensor(np.ones(2, dtype=np.float32)), Tensor(np.ones(2, dtype=np.float64)))
    with Graph(ScalarMode.STANDARD):
        with pytest.raises(ModeError):
            ops.scale(leaf([1.0]), 2.0)


def test_outside_a_graph_nothing_is_recorded():
    x = leaf([1.0])
    y = ops.scale(x, 2.0)
    assert current_graph() is None
    assert not y.requires_grad


def test_backward_needs_scalar_loss():
    x = leaf([1.0, 2.0])
    with Graph(V) as graph:
        with pytest.raises(ContractError):
            graph.backward(ops.scale(x, 1.0))


def test_grad_check_quadratic():
    x = leaf([1.0, 2.0], name="x")
    report = grad_check(lambda: ops.reduce_sum(ops.mul(x, x)), [x])
    assert report.max_rel_err < 1e-9
    assert report.checked == 2


def test_grad_check_constant_function():
    x = leaf([1.0, 2.0], name="x")
    c = Tensor(np.array(5.0))
    report = grad_check(lambda: ops.add(ops.scale(ops.reduce_sum(x), 0.0), c), [x])
    assert report.max_rel_err == 0.0


def test_grad_check_subsamples_scalars():
    x = leaf(np.arange(10.0), name="x")
    report = grad_check(lambda: ops.reduce_sum(ops.mul(x, x)), [x], max_per_param=3,
                        rng=np.random.default_rng(0))
    assert report.checked == 3


def test_grad_check_requires_verification_mode():
    x = leaf([1.0], mode=ScalarMode.STANDARD)
    with pytest.raises(ContractError):
        grad_check(lambda: ops.reduce_sum(x), [x])


@pytest.mark.parametrize("seed", range(50))
def test_grad_check_over_random_compositions(seed):
    rng = np.random.default_rng(seed)
    n, d, k = (int(v) for v in rng.integers(1, 5, size=3))
    x = leaf(rng.standard_normal((n, d)), name="x")
    w = leaf(rng.standard_normal((d, k)), name="w")
    b = leaf(rng.standard_normal(k), name="b")
    mix = Tensor(rng.uniform(0.5, 1.5, (n, k)))
    order = rng.permutation(n)

    def loss():
        s = ops.sigmoid(ops.add(ops.matmul(x, w), b))
        terms = ops.reduce_mean(ops.take_rows(ops.mul(ops.log(s), mix), order), axes=1)
        peaks = ops.reduce_max(ops.exp(ops.scale(s, 0.5)), axes=1)
        norms = ops.reduce_sum(ops.mul(x, x), axes=1)
        return ops.reduce_sum(ops.sub(ops.mul(terms, peaks), norms))

    report = grad_check(loss, [x, w, b])
    assert report.checked == x.size + w.size + b.size
    assert report.max_rel_err <= 1e-5
