import numpy as np
import pytest

from mcdk import tensor as T
from mcdk.errors import AutodiffError, DimensionError
from mcdk.gradcheck import check_gradients


def t64(a, requires_grad=False):
    return T.Tensor(np.asarray(a, dtype=np.float64), requires_grad=requires_grad)


class TestElementwiseValues:
    def test_relu(self):
        x = T.Tensor([-1.0, 2.0])
        assert np.array_equal(x.relu().data, [0.0, 2.0])

    def test_sigmoid_tanh_at_zero(self):
        x = T.Tensor([0.0])
        assert x.sigmoid().item() == pytest.approx(0.5)
        assert x.tanh().item() == 0.0

    def test_binary_broadcast_singleton(self):
        a = T.Tensor(np.ones((2, 3)))
        b = T.Tensor(np.full((2, 1), 2.0))
        assert np.array_equal((a * b).data, np.full((2, 3), 2.0))

    def test_non_broadcastable_raises(self):
        a = T.Tensor(np.ones((2, 3)))
        b = T.Tensor(np.ones((2, 2)))
        with pytest.raises(DimensionError, match="axis 1"):
            a + b

    def test_rank_mismatch_raises(self):
        with pytest.raises(DimensionError):
            T.Tensor(np.ones((2, 3))) + T.Tensor(np.ones(3))


class TestSoftmax:
    def test_constant_input_uniform(self):
        for value in (0.0, -5.0, 123.0):
            x = T.Tensor(np.full(8, value))
            out = T.softmax(x, axis=0).data
            assert np.allclose(out, 1.0 / 8.0, atol=1e-7)

    def test_closed_form(self):
        x = T.Tensor([0.0, np.log(3.0)])
        out = T.softmax(x, axis=0).data
        assert np.allclose(out, [0.25, 0.75], atol=1e-6)

    def test_sums_to_one_random(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            x = T.Tensor(rng.normal(size=(4, 7)) * rng.uniform(1, 50))
            out = T.softmax(x, axis=1).data
            assert np.allclose(out.sum(axis=1), 1.0, atol=1e-5)

    def test_axis_out_of_bounds(self):
        with pytest.raises(DimensionError):
            T.softmax(T.Tensor(np.ones(3)), axis=2)


class TestMatmul:
    def test_identity(self):
        b = np.array([[1.5, -2.0], [0.25, 4.0]])
        out = T.matmul(T.Tensor(np.eye(2)), T.Tensor(b))
        assert np.allclose(out.data, b)

    def test_hand_computed(self):
        a = T.Tensor([[1.0, 2.0]])
        b = T.Tensor([[3.0], [4.0]])
        assert T.matmul(a, b).item() == pytest.approx(11.0)

    def test_inner_dim_mismatch(self):
        with pytest.raises(DimensionError, match="inner"):
            T.matmul(T.Tensor(np.ones((2, 3))), T.Tensor(np.ones((2, 3))))


class TestGradientChecks:
    """Every primitive's backward against central finite differences."""

    def setup_method(self):
        self.rng = np.random.default_rng(7)

    def _rand(self, *shape):
        return self.rng.normal(size=shape) + 0.1  # offset avoids relu/abs kinks

    def test_unary_ops(self):
        x = self._rand(3, 4)
        for name, fn in (("relu", T.relu), ("sigmoid", T.sigmoid), ("tanh", T.tanh),
                         ("abs", T.absval)):
            check_gradients(lambda ts, f=fn: f(ts[0]).sum(), [x])

    def test_binary_ops(self):
        a = self._rand(2, 5)
        b = self._rand(2, 5) + 1.5  # keep divisor away from zero
        for fn in (T.add, T.sub, T.mul, T.div):
            check_gradients(lambda ts, f=fn: f(ts[0], ts[1]).sum(), [a, b])

    def test_broadcast_backward(self):
        a = self._rand(3, 4)
        b = self._rand(3, 1)
        check_gradients(lambda ts: T.mul(ts[0], ts[1]).sum(), [a, b])

    def test_scale(self):
        x = self._rand(4)
        check_gradients(lambda ts: T.scale(ts[0], -2.5, 0.3).sum(), [x])

    def test_softmax_grad(self):
        x = self._rand(3, 6)
        w = self._rand(3, 6)
        check_gradients(
            lambda ts: (T.softmax(ts[0], axis=1) * ts[1]).sum(), [x, w]
        )

    def test_matmul_grad(self):
        a = self._rand(4, 3)
        b = self._rand(3, 5)
        check_gradients(lambda ts: T.matmul(ts[0], ts[1]).sum(), [a, b])

    def test_matmul_batched_grad(self):
        a = self._rand(2, 4, 3)
        b = self._rand(2, 3, 2)
        w = self._rand(2, 4, 2)
        check_gradients(lambda ts: (T.matmul(ts[0], ts[1]) * ts[2]).sum(), [a, b, w])

    def test_reductions_and_shapes(self):
        x = self._rand(2, 3, 4)
        check_gradients(lambda ts: ts[0].sum(axis=1).mean(), [x])
        check_gradients(lambda ts: ts[0].reshape(6, 4).sum(axis=0).sum(), [x])
        check_gradients(lambda ts: ts[0].transpose((2, 0, 1)).mean(), [x])

    def test_concat_narrow(self):
        a = self._rand(2, 3)
        b = self._rand(2, 2)
        check_gradients(
            lambda ts: T.narrow(T.concat([ts[0], ts[1]], axis=1), 1, 1, 3).sum(),
            [a, b],
        )

    def test_composite_chain(self):
        # >= 5 primitives composed into one scalar loss.
        x = self._rand(3, 4)
        w = self._rand(4, 4)

        def build(ts):
            h = T.matmul(ts[0], ts[1])          # 1
            h = T.tanh(h)                       # 2
            s = T.softmax(h, axis=1)            # 3
            m = T.mul(s, ts[0])                 # 4
            d = T.sub(m, T.scale(ts[0], 0.5))   # 5, 6
            return T.absval(d).sum()            # 7, 8

        check_gradients(build, [x, w])


class TestGraphMechanics:
    def test_backward_populates_reachable_grads(self):
        a = t64([1.0, 2.0], requires_grad=True)
        b = t64([3.0, 4.0], requires_grad=True)
        loss = (a * b).sum()
        loss.backward()
        assert np.allclose(a.grad, [3.0, 4.0])
        assert np.allclose(b.grad, [1.0, 2.0])

    def test_double_backward_is_error(self):
        a = t64([1.0], requires_grad=True)
        loss = (a * a).sum()
        loss.backward()
        with pytest.raises(AutodiffError):
            loss.backward()

    def test_grad_accumulates_across_uses(self):
        a = t64([2.0], requires_grad=True)
        loss = (a * a).sum()  # d/da = 2a = 4
        loss.backward()
        assert a.grad[0] == pytest.approx(4.0)

    def test_no_grad_records_nothing(self):
        a = t64([1.0], requires_grad=True)
        with T.no_grad():
            out = a * a
        assert not out.requires_grad
        assert out._parents == ()

    def test_scalar_loss_required_without_seed(self):
        a = t64([1.0, 2.0], requires_grad=True)
        with pytest.raises(AutodiffError):
            (a * a).backward()

    def test_detach_cuts_graph(self):
        a = t64([3.0], requires_grad=True)
        loss = (a.detach() * a).sum()
        loss.backward()
        assert a.grad[0] == pytest.approx(3.0)  # only the non-detached path

    def test_determinism_bit_identical(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(4, 4)).astype(np.float32)
        w = rng.normal(size=(4, 4)).astype(np.float32)

        def run():
            a = T.Tensor(x, requires_grad=True)
            b = T.Tensor(w, requires_grad=True)
            out = T.softmax(T.matmul(a, b), axis=1).sum()
            out.backward()
            return out.data.copy(), a.grad.copy()

        (o1, g1), (o2, g2) = run(), run()
        assert np.array_equal(o1, o2)
        assert np.array_equal(g1, g2)
