"""Core tensor, tape, and autodiff tests."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from redae.errors import AutodiffError, NumericError, ShapeError
from redae.tensor import (Rng, Tape, Tensor4, active_tape, add, backward,
                          from_values, full, grad_check, mul, scale, sub,
                          sum_all, zeros)


class TestTensor4:
    def test_rank4_required(self):
        with pytest.raises(ShapeError):
            Tensor4(np.zeros((2, 3)))

    def test_nonfinite_rejected(self):
        with pytest.raises(NumericError):
            Tensor4(np.array([[[[np.nan]]]]))

    def test_float64_storage(self):
        t = Tensor4(np.ones((1, 1, 2, 2), dtype=np.float32))
        assert t.data.dtype == np.float64

    def test_constructors(self):
        assert zeros((1, 2, 3, 4)).shape == (1, 2, 3, 4)
        assert full((1, 1, 1, 1), 2.5).item() == 2.5
        t = from_values((1, 1, 2, 2), [1, 2, 3, 4])
        assert t.data.reshape(-1).tolist() == [1.0, 2.0, 3.0, 4.0]

    def test_item_requires_scalar(self):
        with pytest.raises(ShapeError):
            zeros((1, 1, 2, 2)).item()

    def test_accumulate_grad_adds(self):
        t = zeros((1, 1, 2, 2), requires_grad=True)
        t.accumulate_grad(np.ones((1, 1, 2, 2)))
        t.accumulate_grad(np.ones((1, 1, 2, 2)))
        assert np.all(t.grad == 2.0)
        t.zero_grad()
        assert t.grad is None

    def test_accumulate_grad_own_does_not_alias_shared(self):
        t = zeros((1, 1, 2, 2), requires_grad=True)
        g = np.ones((1, 1, 2, 2))
        t.accumulate_grad(g)  # not owned: must copy
        g[:] = 7.0
        assert np.all(t.grad == 1.0)


class TestTape:
    def test_no_tape_no_graph(self):
        a = full((1, 1, 1, 1), 2.0, requires_grad=True)
        out = mul(a, a)
        assert out.item() == 4.0
        with pytest.raises(AutodiffError):
            backward(out)

    def test_active_tape_scoping(self):
        assert active_tape() is None
        with Tape() as t:
            assert active_tape() is t
        assert active_tape() is None

    def test_backward_requires_scalar(self):
        a = zeros((1, 1, 2, 2), requires_grad=True)
        with Tape():
            out = add(a, a)
            with pytest.raises(AutodiffError):
                backward(out)

    def test_tape_consumed_after_backward(self):
        a = full((1, 1, 1, 1), 3.0, requires_grad=True)
        with Tape():
            out = mul(a, a)
            backward(out)
            with pytest.raises(AutodiffError):
                backward(out)

    def test_grad_flows_through_shared_node(self):
        # loss = (a*a) + (a*a) => d/da = 4a
        a = full((1, 1, 1, 1), 3.0, requires_grad=True)
        with Tape():
            sq = mul(a, a)
            backward(add(sq, sq))
        assert a.grad is not None
        assert a.grad.item() == pytest.approx(12.0)


class TestElementwiseOps:
    def setup_method(self):
        self.rng = Rng(1234)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            add(zeros((1, 1, 2, 2)), zeros((1, 1, 2, 3)))

    def test_values(self):
        a = from_values((1, 1, 1, 2), [3.0, 4.0])
        b = from_values((1, 1, 1, 2), [1.0, 2.0])
        assert add(a, b).data.reshape(-1).tolist() == [4.0, 6.0]
        assert sub(a, b).data.reshape(-1).tolist() == [2.0, 2.0]
        assert mul(a, b).data.reshape(-1).tolist() == [3.0, 8.0]
        assert scale(a, 0.5).data.reshape(-1).tolist() == [1.5, 2.0]
        assert sum_all(a).item() == 7.0

    def test_gradients(self):
        b = self.rng.tensor_normal((2, 3, 4, 4))
        cases = {
            "add": lambda t: sum_all(mul(add(t, b), add(t, b))),
            "sub": lambda t: sum_all(mul(sub(t, b), sub(t, b))),
            "mul": lambda t: sum_all(mul(t, mul(t, b))),
            "scale": lambda t: sum_all(mul(scale(t, -1.7), t)),
            "sum": lambda t: scale(sum_all(t), 2.0),
        }
        for name, f in cases.items():
            x = self.rng.tensor_normal((2, 3, 4, 4))
            err = grad_check(f, x)
            assert err <= 1e-6, f"{name}: grad error {err}"

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(-3, 3).filter(lambda s: abs(s) > 1e-3))
    def test_linearity_of_gradient(self, seed, alpha):
        # d(alpha * f)/dx == alpha * df/dx for f = sum(x * x)
        rng = Rng(seed)
        x1 = rng.tensor_normal((1, 2, 3, 3), requires_grad=True)
        x2 = Tensor4(x1.data.copy(), requires_grad=True)
        with Tape():
            backward(sum_all(mul(x1, x1)))
        with Tape():
            backward(scale(sum_all(mul(x2, x2)), alpha))
        assert np.allclose(x2.grad, alpha * x1.grad, rtol=1e-12, atol=1e-12)


class TestRng:
    def test_determinism(self):
        a = Rng(99).normal((3, 3))
        b = Rng(99).normal((3, 3))
        assert np.array_equal(a, b)

    def test_child_streams_differ(self):
        r = Rng(5)
        a = r.child(0).normal((4,))
        b = r.child(1).normal((4,))
        assert not np.array_equal(a, b)

    def test_child_independent_of_parent_draws(self):
        r1 = Rng(5)
        r1.normal((10,))
        r2 = Rng(5)
        assert np.array_equal(r1.child(3).normal((4,)),
                              r2.child(3).normal((4,)))

    def test_shuffle_deterministic(self):
        xs = list(range(10))
        ys = list(range(10))
        Rng(7).shuffle(xs)
        Rng(7).shuffle(ys)
        assert xs == ys
        assert sorted(xs) == list(range(10))
