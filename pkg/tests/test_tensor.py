"""Tensor engine: forward values, backward rules, finite differences."""

import numpy as np
import pytest

from anchorseg import tensor as T
from anchorseg.errors import ConfigError, ContractError, DimensionError


def t64(data, rg=False):
    return T.Tensor(np.asarray(data, dtype=np.float64), requires_grad=rg)


class TestMatmul:
    def test_identity(self):
        a = t64([[1.0, 2.0], [3.0, 4.0]])
        eye = t64(np.eye(2))
        np.testing.assert_array_equal(T.matmul(eye, a).data, a.data)

    def test_scalar_case(self):
        assert T.matmul(t64([[2.0]]), t64([[3.0]])).data[0, 0] == 6.0

    def test_hand_product(self):
        # hand multiplication: [[1*5+2*7, 1*6+2*8], [3*5+4*7, 3*6+4*8]]
        out = T.matmul(t64([[1.0, 2.0], [3.0, 4.0]]), t64([[5.0, 6.0], [7.0, 8.0]]))
        np.testing.assert_array_equal(out.data, [[19.0, 22.0], [43.0, 50.0]])

    def test_shape_mismatch_names_both(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 2\)"):
            T.matmul(t64(np.ones((2, 3))), t64(np.ones((2, 2))))


class TestConv2d:
    def test_identity_kernel(self):
        rng = np.random.default_rng(0)
        x = t64(rng.normal(size=(1, 4, 5)))
        k = t64(np.ones((1, 1, 1, 1)))
        b = t64(np.zeros(1))
        np.testing.assert_array_equal(T.conv2d_same(x, k, b).data, x.data)

    def test_ones_kernel_on_constant(self):
        c = 2.5
        x = t64(np.full((1, 5, 5), c))
        k = t64(np.ones((1, 1, 3, 3)))
        b = t64(np.zeros(1))
        out = T.conv2d_same(x, k, b).data[0]
        assert out[2, 2] == pytest.approx(9 * c)
        assert out[0, 0] == pytest.approx(4 * c)

    def test_zero_kernel_bias(self):
        x = t64(np.random.default_rng(1).normal(size=(2, 3, 3)))
        k = t64(np.zeros((3, 2, 3, 3)))
        b = t64([1.0, -2.0, 0.5])
        out = T.conv2d_same(x, k, b).data
        for c, v in enumerate([1.0, -2.0, 0.5]):
            np.testing.assert_allclose(out[c], v)

    def test_even_kernel_rejected(self):
        with pytest.raises(ConfigError):
            T.conv2d_same(t64(np.ones((1, 4, 4))), t64(np.ones((1, 1, 2, 2))),
                          t64(np.zeros(1)))

    def test_strided_extents(self):
        x = t64(np.ones((1, 8, 8)))
        k = t64(np.ones((2, 1, 3, 3)))
        out = T.conv2d(x, k, t64(np.zeros(2)), stride=2)
        assert out.shape == (2, 4, 4)


class TestElementwise:
    def test_add_zero_identity(self):
        f = t64([1.0, -2.0, 3.0])
        np.testing.assert_array_equal(T.add(f, t64(np.zeros(3))).data, f.data)

    def test_sigmoid_zero(self):
        assert T.sigmoid(t64(0.0)).data == pytest.approx(0.5)

    def test_mul_pointwise(self):
        out = T.mul(t64([2.0, 3.0]), t64([4.0, 5.0]))
        np.testing.assert_array_equal(out.data, [8.0, 15.0])

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            T.add(t64([1.0]), t64([1.0, 2.0]))

    def test_no_implicit_broadcast(self):
        with pytest.raises(DimensionError):
            T.mul(t64(np.ones((2, 2))), t64(np.ones(2)))


class TestBackward:
    def test_square(self):
        x = t64(3.0, rg=True)
        with T.Tape():
            T.backward(T.mul(x, x))
        assert x.grad == pytest.approx(6.0)

    def test_matmul_sum_finite_difference(self):
        rng = np.random.default_rng(3)
        a = t64(rng.normal(size=(3, 4)), rg=True)
        b = t64(rng.normal(size=(4, 2)), rg=True)
        err = T.grad_check(lambda: T.tsum(T.matmul(a, b)), [("a", a), ("b", b)])
        assert err < 1e-6

    def test_unused_parameter_gets_zero(self):
        x = t64(2.0, rg=True)
        unused = t64(5.0, rg=True)
        unused.grad = np.zeros(())
        with T.Tape():
            T.backward(T.mul(x, x))
        np.testing.assert_array_equal(unused.grad, 0.0)

    def test_non_scalar_loss_rejected(self):
        x = t64([1.0, 2.0], rg=True)
        with T.Tape():
            y = T.mul(x, x)
            with pytest.raises(ContractError):
                T.backward(y)

    def test_accumulation_is_addition(self):
        def grads(mode):
            x = t64([1.0, 2.0], rg=True)
            with T.Tape():
                l1 = T.tsum(T.mul(x, x))
                l2 = T.tsum(T.sigmoid(x))
                if mode == "joint":
                    T.backward(T.add(l1, l2))
                else:
                    T.backward(l1)
                    T.backward(l2)
            return x.grad
        np.testing.assert_allclose(grads("joint"), grads("separate"), rtol=1e-12)

    def test_fanout_sums(self):
        x = t64(2.0, rg=True)
        with T.Tape():
            y = T.mul(x, x)      # x^2
            z = T.add(y, y)      # 2 x^2 -> dz/dx = 4x = 8
            T.backward(z)
        assert x.grad == pytest.approx(8.0)

    def test_deterministic_forward(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(4, 4))

        def run():
            a = t64(x, rg=True)
            with T.Tape():
                out = T.tsum(T.sigmoid(T.matmul(a, a)))
                T.backward(out)
            return out.data.copy(), a.grad.copy()

        (v1, g1), (v2, g2) = run(), run()
        assert v1.tobytes() == v2.tobytes()
        assert g1.tobytes() == g2.tobytes()


class TestGradCheck:
    def test_linear_function_tiny_error(self):
        w = t64([2.0, -3.0, 0.5], rg=True)
        c = t64([1.0, 1.0, 1.0])
        err = T.grad_check(lambda: T.tsum(T.mul(w, c)), [("w", w)])
        assert err < 1e-9

    def test_corrupted_backward_detected(self):
        from anchorseg.gradcheck import corrupted_sigmoid
        rng = np.random.default_rng(7)
        a = t64(rng.normal(size=(6,)), rg=True)
        err = T.grad_check(lambda: T.tsum(T.mul(corrupted_sigmoid(a), a)), [("a", a)])
        assert err > 1e-1

    def test_nonfinite_gradient_reported_with_location(self):
        a = t64([1.0, -1.0], rg=True)

        def bad():
            return T.record(a.data.sum(), (a,),
                            lambda g: (np.array([np.nan, 0.0]),))
        with pytest.raises(ContractError, match="a.*0"):
            T.grad_check(bad, [("a", a)])


OPS_UNDER_TEST = ["matmul", "conv2d", "add", "mul", "div", "sigmoid", "relu",
                  "tanh", "log", "softmax", "minmax", "mean_rows", "concat",
                  "stack", "gather", "take_row", "transpose", "clamp"]


@pytest.mark.parametrize("trial", range(102))
def test_property_random_op_gradients(trial):
    """>= 100 trials: every differentiable op matches central differences."""
    rng = np.random.default_rng(1000 + trial)
    op = OPS_UNDER_TEST[trial % len(OPS_UNDER_TEST)]
    m = int(rng.integers(2, 5))
    n = int(rng.integers(2, 5))

    if op == "matmul":
        a = t64(rng.normal(size=(m, n)), rg=True)
        b = t64(rng.normal(size=(n, m)), rg=True)
        ts, fn = [("a", a), ("b", b)], lambda: T.tsum(T.tanh(T.matmul(a, b)))
    elif op == "conv2d":
        x = t64(rng.normal(size=(2, m + 2, n + 2)), rg=True)
        k = t64(rng.normal(size=(2, 2, 3, 3)), rg=True)
        b = t64(rng.normal(size=(2,)), rg=True)
        stride = int(rng.integers(1, 3))
        ts = [("x", x), ("k", k), ("b", b)]
        fn = lambda: T.tmean(T.sigmoid(T.conv2d(x, k, b, stride=stride)))
    elif op in ("add", "mul", "div"):
        a = t64(rng.normal(size=(m, n)), rg=True)
        b = t64(rng.normal(size=(m, n)) + 3.0, rg=True)  # keep div away from 0
        f = getattr(T, op)
        ts, fn = [("a", a), ("b", b)], lambda: T.tsum(T.sigmoid(f(a, b)))
    elif op in ("sigmoid", "tanh"):
        a = t64(rng.normal(size=(m, n)), rg=True)
        f = getattr(T, op)
        ts, fn = [("a", a)], lambda: T.tsum(T.mul(f(a), f(a)))
    elif op == "relu":
        a = t64(rng.normal(size=(m, n)) + np.sign(rng.normal(size=(m, n))) * 1e-3,
                rg=True)  # keep away from the kink
        ts, fn = [("a", a)], lambda: T.tsum(T.mul(T.relu(a), a))
    elif op == "log":
        a = t64(rng.random((m, n)) + 0.5, rg=True)
        ts, fn = [("a", a)], lambda: T.tsum(T.log(a))
    elif op == "softmax":
        a = t64(rng.normal(size=(m, n)), rg=True)
        ts, fn = [("a", a)], lambda: T.tsum(T.mul(T.softmax_rows(a), a))
    elif op == "minmax":
        a = t64(np.sort(rng.normal(size=(m * n,)) * 2), rg=True)
        ts, fn = [("a", a)], lambda: T.tsum(T.mul(T.minmax_normalize(a),
                                                  T.minmax_normalize(a)))
    elif op == "mean_rows":
        a = t64(rng.normal(size=(m, n)), rg=True)
        ts, fn = [("a", a)], lambda: T.tsum(T.tanh(T.mean_rows(a)))
    elif op == "concat":
        a = t64(rng.normal(size=(m,)), rg=True)
        b = t64(rng.normal(size=(n,)), rg=True)
        ts, fn = [("a", a), ("b", b)], lambda: T.tsum(T.sigmoid(T.concat_vec(a, b)))
    elif op == "stack":
        a = t64(rng.normal(size=(n,)), rg=True)
        b = t64(rng.normal(size=(n,)), rg=True)
        ts, fn = [("a", a), ("b", b)], lambda: T.tsum(T.tanh(T.stack_rows([a, b])))
    elif op == "gather":
        tab = t64(rng.normal(size=(5, n)), rg=True)
        idx = [int(i) for i in rng.integers(0, 5, size=4)]
        ts, fn = [("tab", tab)], lambda: T.tsum(T.sigmoid(T.gather_rows(tab, idx)))
    elif op == "take_row":
        a = t64(rng.normal(size=(m, n)), rg=True)
        i = int(rng.integers(m))
        ts, fn = [("a", a)], lambda: T.tsum(T.mul(T.take_row(a, i), T.take_row(a, i)))
    elif op == "transpose":
        a = t64(rng.normal(size=(m, n)), rg=True)
        ts, fn = [("a", a)], lambda: T.tsum(T.tanh(T.transpose2d(a)))
    else:  # clamp
        a = t64(rng.normal(size=(m, n)) * 2, rg=True)
        ts, fn = [("a", a)], lambda: T.tsum(T.mul(T.clamp(a, -1.0, 1.0), a))

    assert T.grad_check(fn, ts) < 1e-4, f"op {op} failed finite differences"
