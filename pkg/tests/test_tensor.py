"""Unit tests for the autodiff tensor core."""

import numpy as np
import pytest

from tsflow.exceptions import ConfigError, ContractError, ShapeError
from tsflow.tensor import Tensor, attention, conv1d, moving_average, no_grad

from gradcheck import check_gradients


class TestMatmul:
    def test_identity(self):
        a = Tensor(np.eye(2))
        b = Tensor([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal((a @ b).data, [[1, 2], [3, 4]])

    def test_projector(self):
        a = Tensor([[1.0, 0.0], [0.0, 0.0]])
        b = Tensor([[5.0, 6.0], [7.0, 8.0]])
        np.testing.assert_array_equal((a @ b).data, [[5, 6], [0, 0]])

    def test_gradient_of_sum_matches_finite_differences(self):
        # d sum(A@B) / dA at A=[[1,2]], B=[[3],[4]] is [[3,4]]
        a = Tensor([[1.0, 2.0]], requires_grad=True)
        b = Tensor([[3.0], [4.0]])
        (a @ b).sum().backward()
        np.testing.assert_allclose(a.grad, [[3.0, 4.0]], rtol=1e-12)
        err = check_gradients(
            lambda ts: (ts[0] @ ts[1]).sum(),
            [np.array([[1.0, 2.0]]), np.array([[3.0], [4.0]])],
        )
        assert err < 1e-4

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
            Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 2)))

    def test_batched_matmul_gradients(self):
        rng = np.random.default_rng(7)
        a = rng.standard_normal((2, 3, 4))
        b = rng.standard_normal((2, 4, 5))
        err = check_gradients(lambda ts: ((ts[0] @ ts[1]) ** 2).sum(), [a, b])
        assert err < 1e-4


class TestConv1d:
    def test_identity_kernel(self):
        x = Tensor(np.array([1.0, 2.0, 3.0]).reshape(1, 3, 1))
        k = Tensor(np.array([1.0]).reshape(1, 1, 1))
        out = conv1d(x, k)
        np.testing.assert_array_equal(out.data.ravel(), [1, 2, 3])

    def test_replicate_padded_average(self):
        # pad [1,1,2,3,3]; window means are [4/3, 2, 8/3]
        x = Tensor(np.array([1.0, 2.0, 3.0]).reshape(1, 3, 1))
        k = Tensor((np.ones(3) / 3.0).reshape(3, 1, 1))
        out = conv1d(x, k, padding="replicate")
        np.testing.assert_allclose(out.data.ravel(), [4 / 3, 2.0, 8 / 3], rtol=1e-12)

    @pytest.mark.parametrize("padding", ["replicate", "zero"])
    def test_gradients_match_finite_differences(self, padding):
        rng = np.random.default_rng(11)
        x = rng.standard_normal((2, 5, 3))
        k = rng.standard_normal((3, 3, 4))
        err = check_gradients(
            lambda ts: (conv1d(ts[0], ts[1], padding=padding) ** 2).mean(), [x, k]
        )
        assert err < 1e-4

    def test_even_kernel_rejected(self):
        with pytest.raises(ConfigError):
            conv1d(Tensor(np.ones((1, 4, 2))), Tensor(np.ones((4, 2, 2))))

    def test_channel_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            conv1d(Tensor(np.ones((1, 4, 2))), Tensor(np.ones((3, 5, 2))))


class TestAttention:
    def test_single_key_value_returns_value(self):
        rng = np.random.default_rng(3)
        q = Tensor(rng.standard_normal((1, 4, 8)))
        k = Tensor(rng.standard_normal((1, 1, 8)))
        v = Tensor(rng.standard_normal((1, 1, 8)))
        out = attention(q, k, v)
        np.testing.assert_allclose(out.data, np.broadcast_to(v.data, (1, 4, 8)), rtol=1e-12)

    def test_orthogonal_query_identical_values(self):
        # scores all zero -> uniform weights -> output is the shared value
        q = Tensor(np.zeros((1, 2, 4)))
        k = Tensor(np.array([[[1.0, 0, 0, 0], [0, 1.0, 0, 0]]]))
        vstar = np.array([0.3, -0.7, 0.2, 0.9])
        v = Tensor(np.broadcast_to(vstar, (1, 2, 4)).copy())
        out = attention(q, k, v)
        np.testing.assert_allclose(out.data, np.broadcast_to(vstar, (1, 2, 4)), rtol=1e-12)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(5)
        arrays = [rng.standard_normal((1, 4, 8)) for _ in range(3)]
        err = check_gradients(
            lambda ts: (attention(ts[0], ts[1], ts[2]) ** 2).mean(), arrays
        )
        assert err < 1e-4

    def test_head_dim_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            attention(
                Tensor(np.ones((1, 2, 4))),
                Tensor(np.ones((1, 2, 5))),
                Tensor(np.ones((1, 2, 5))),
            )

    def test_softmax_normalized(self):
        rng = np.random.default_rng(9)
        x = Tensor(rng.standard_normal((4, 7)) * 30.0)
        y = x.softmax(axis=-1).data
        assert (y >= 0).all()
        np.testing.assert_allclose(y.sum(axis=-1), np.ones(4), atol=1e-12)


class TestMovingAverage:
    def test_hand_computed_window3(self):
        x = Tensor(np.array([1.0, 2, 3, 4, 5]).reshape(1, 5, 1))
        out = moving_average(x, 3)
        np.testing.assert_allclose(
            out.data.ravel(), [4 / 3, 2.0, 3.0, 4.0, 14 / 3], rtol=1e-12
        )

    def test_window_one_is_identity(self):
        rng = np.random.default_rng(13)
        x = rng.standard_normal((2, 6, 3))
        np.testing.assert_array_equal(moving_average(Tensor(x), 1).data, x)

    @pytest.mark.parametrize("window", [1, 3, 5, 7])
    def test_constant_input_preserved_exactly(self, window):
        x = Tensor(np.full((1, 4, 2), 0.73))
        np.testing.assert_array_equal(moving_average(x, window).data, x.data)

    def test_even_window_rejected(self):
        with pytest.raises(ConfigError):
            moving_average(Tensor(np.ones((1, 5, 1))), 4)

    def test_oversized_window_rejected(self):
        with pytest.raises(ConfigError):
            moving_average(Tensor(np.ones((1, 3, 1))), 7)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(17)
        x = rng.standard_normal((2, 5, 3))
        err = check_gradients(lambda ts: (moving_average(ts[0], 3) ** 2).mean(), [x])
        assert err < 1e-4


class TestBackward:
    def test_square(self):
        x = Tensor(3.0, requires_grad=True)
        (x**2).backward()
        assert x.grad == pytest.approx(6.0)

    def test_sum_of_matrix(self):
        x = Tensor(np.arange(4.0).reshape(2, 2), requires_grad=True)
        x.sum().backward()
        np.testing.assert_array_equal(x.grad, np.ones((2, 2)))

    def test_linear_model_loss_matches_finite_differences(self):
        rng = np.random.default_rng(21)
        w = rng.standard_normal((3, 2))
        x = rng.standard_normal((5, 3))
        y = rng.standard_normal((5, 2))

        def loss(ts):
            return ((ts[1] @ ts[0] - Tensor(y)) ** 2).mean()

        assert check_gradients(loss, [w, x]) < 1e-4

    def test_non_scalar_loss_rejected(self):
        with pytest.raises(ContractError):
            Tensor(np.ones(3), requires_grad=True).backward()

    def test_repeated_backward_accumulates(self):
        x = Tensor(2.0, requires_grad=True)
        loss = x * 5.0
        loss.backward()
        loss.backward()
        assert x.grad == pytest.approx(10.0)

    def test_fan_out_gradients_sum(self):
        x = Tensor(1.5, requires_grad=True)
        (x * 2.0 + x * 3.0).backward()
        assert x.grad == pytest.approx(5.0)

    def test_no_grad_suppresses_graph(self):
        x = Tensor(2.0, requires_grad=True)
        with no_grad():
            y = x * 4.0
        assert not y.requires_grad and y._prev == ()

    def test_gradients_finite_after_backward(self):
        rng = np.random.default_rng(23)
        x = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        w = Tensor(rng.standard_normal((4, 4)), requires_grad=True)
        ((x @ w).tanh().sigmoid().mean()).backward()
        assert np.isfinite(x.grad).all() and np.isfinite(w.grad).all()


PRIMITIVES = {
    "add": (lambda ts: (ts[0] + ts[1]).sum(), 2),
    "sub": (lambda ts: (ts[0] - ts[1]).sum(), 2),
    "mul": (lambda ts: (ts[0] * ts[1]).sum(), 2),
    "div": (lambda ts: (ts[0] / (ts[1] * ts[1] + 1.0)).sum(), 2),
    "pow": (lambda ts: (ts[0] ** 3).sum(), 1),
    "exp": (lambda ts: ts[0].exp().sum(), 1),
    "log": (lambda ts: (ts[0] * ts[0] + 1.0).log().sum(), 1),
    "tanh": (lambda ts: ts[0].tanh().sum(), 1),
    "sigmoid": (lambda ts: ts[0].sigmoid().sum(), 1),
    "relu": (lambda ts: (ts[0].relu() * ts[0]).sum(), 1),
    "matmul": (lambda ts: ((ts[0] @ ts[1]) ** 2).sum(), 2),
    "softmax": (lambda ts: (ts[0].softmax(-1) * ts[0]).sum(), 1),
    "sum_axis": (lambda ts: (ts[0].sum(axis=0) ** 2).sum(), 1),
    "mean_axis": (lambda ts: (ts[0].mean(axis=-1, keepdims=True) ** 2).sum(), 1),
    "reshape": (lambda ts: (ts[0].reshape(-1) ** 2).sum(), 1),
    "getitem": (lambda ts: (ts[0][1:, :2] ** 2).sum(), 1),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients_randomized(name):
    """Each primitive against central differences on 100 random shapes."""
    build, arity = PRIMITIVES[name]
    rng = np.random.default_rng(abs(hash(name)) % 2**32)
    for _ in range(100):
        rows = int(rng.integers(2, 5))
        cols = int(rng.integers(2, 5))
        if name == "matmul":
            inner = int(rng.integers(2, 5))
            arrays = [
                rng.standard_normal((rows, inner)),
                rng.standard_normal((inner, cols)),
            ]
        else:
            arrays = [rng.standard_normal((rows, cols)) for _ in range(arity)]
        assert check_gradients(build, arrays) < 1e-4


@pytest.mark.parametrize("op", ["conv1d", "moving_average", "attention"])
def test_time_axis_primitive_gradients_randomized(op):
    rng = np.random.default_rng(abs(hash(op)) % 2**32)
    for _ in range(100):
        b = int(rng.integers(1, 3))
        length = int(rng.integers(3, 6))
        ch = int(rng.integers(1, 4))
        if op == "conv1d":
            k = int(rng.choice([1, 3]))
            arrays = [
                rng.standard_normal((b, length, ch)),
                rng.standard_normal((k, ch, 2)),
            ]
            build = lambda ts: (conv1d(ts[0], ts[1]) ** 2).mean()
        elif op == "moving_average":
            w = int(rng.choice([1, 3]))
            arrays = [rng.standard_normal((b, length, ch))]
            build = lambda ts: (moving_average(ts[0], w) ** 2).mean()
        else:
            d = int(rng.integers(2, 5))
            arrays = [rng.standard_normal((b, length, d)) for _ in range(3)]
            build = lambda ts: (attention(ts[0], ts[1], ts[2]) ** 2).mean()
        assert check_gradients(build, arrays) < 1e-4


def test_forward_is_deterministic():
    rng = np.random.default_rng(29)
    x = rng.standard_normal((3, 4, 5))
    k = rng.standard_normal((3, 5, 2))
    a = conv1d(Tensor(x), Tensor(k)).data
    b = conv1d(Tensor(x), Tensor(k)).data
    np.testing.assert_array_equal(a, b)
