"""Dense rank-4 tensors with tape-based reverse-mode differentiation.

Everything in the engine is a `Tensor4` with shape (batch, channel, height,
width), backed by a float64 numpy array. Gradients are computed by recording
primitive operations on a `Tape` (define-by-run) and replaying it in reverse.
A tape is created per forward pass and consumed by a single `backward` call.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import AutodiffError, NumericError, ShapeError

Shape4 = tuple[int, int, int, int]


class Tensor4:
    """A (n, c, h, w) array of float64 values with an optional grad buffer."""

    __slots__ = ("data", "grad", "requires_grad", "_tape")

    def __init__(self, data, requires_grad: bool = False, validate: bool = True):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim != 4:
            raise ShapeError(f"Tensor4 requires 4 dimensions, got shape {arr.shape}")
        if validate:
            if any(d < 1 for d in arr.shape):
                raise ShapeError(f"all dimensions must be >= 1, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise NumericError("non-finite values in tensor construction")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._tape: Tape | None = None

    @property
    def shape(self) -> Shape4:
        return self.data.shape  # type: ignore[return-value]

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() requires a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def accumulate_grad(self, g: np.ndarray, own: bool = False) -> None:
        """Add `g` to the stored gradient.

        `own=True` promises that `g` is a freshly allocated float64 array the
        caller will not touch again, letting the first accumulation adopt it
        without a defensive copy.
        """
        if self.grad is None:
            if own and g.dtype == np.float64 and g.shape == self.data.shape:
                self.grad = g
                return
            self.grad = np.array(g, dtype=np.float64)  # copy: g may be shared
            if self.grad.shape != self.data.shape:
                self.grad = np.broadcast_to(self.grad, self.data.shape).copy()
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor4(shape={self.shape}, requires_grad={self.requires_grad})"


def zeros(shape: Sequence[int], requires_grad: bool = False) -> Tensor4:
    _check_shape(shape)
    return Tensor4(np.zeros(tuple(shape)), requires_grad=requires_grad, validate=False)


def full(shape: Sequence[int], value: float, requires_grad: bool = False) -> Tensor4:
    _check_shape(shape)
    return Tensor4(np.full(tuple(shape), float(value)), requires_grad=requires_grad)


def from_values(shape: Sequence[int], values, requires_grad: bool = False) -> Tensor4:
    _check_shape(shape)
    arr = np.asarray(values, dtype=np.float64).reshape(-1)
    n = int(np.prod(shape))
    if arr.size != n:
        raise ShapeError(f"shape {tuple(shape)} needs {n} values, got {arr.size}")
    return Tensor4(arr.reshape(tuple(shape)), requires_grad=requires_grad)


def _check_shape(shape: Sequence[int]) -> None:
    if len(shape) != 4:
        raise ShapeError(f"expected 4 dimensions, got {len(shape)}")
    for d in shape:
        if int(d) < 1:
            raise ShapeError(f"all dimensions must be >= 1, got {tuple(shape)}")
    if int(np.prod([int(d) for d in shape], dtype=object)) > 2**40:
        raise ShapeError(f"shape {tuple(shape)} overflows the supported size")


# ---------------------------------------------------------------------------
# Tape


class Tape:
    """Ordered record of differentiable primitives for one forward pass.

    Use as a context manager; operations executed inside record themselves
    when any input requires gradients. `backward` replays the record once,
    in reverse, then clears it.
    """

    def __init__(self):
        self._ops: list[tuple[Tensor4, Callable[[np.ndarray], None]]] = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc) -> bool:
        _TAPE_STACK.pop()
        return False

    def record(self, out: Tensor4, backward_fn: Callable[[np.ndarray], None]) -> None:
        self._ops.append((out, backward_fn))
        out._tape = self


_TAPE_STACK: list[Tape] = []


def active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def make_op_output(data: np.ndarray, inputs: Sequence[Tensor4],
                   backward_builder: Callable[[], Callable[[np.ndarray], None]]) -> Tensor4:
    """Create an op result, recording it when gradients are being tracked.

    `backward_builder` is only invoked when recording happens, so ops can
    defer capturing state needed solely for the backward pass.
    """
    tape = active_tape()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor4(data, requires_grad=track, validate=False)
    if track:
        assert tape is not None
        tape.record(out, backward_builder())
    return out


def backward(loss: Tensor4) -> None:
    """Populate grads of every tracked tensor reachable from `loss`.

    The loss must be scalar-shaped (1,1,1,1). The tape that produced it is
    consumed: a second backward without a new forward pass raises.
    """
    if loss.shape != (1, 1, 1, 1):
        raise AutodiffError(f"backward requires a (1,1,1,1) loss, got {loss.shape}")
    tape = loss._tape
    if tape is None:
        raise AutodiffError("loss was not produced by a recorded operation")
    if tape._consumed:
        raise AutodiffError("tape already consumed; run a new forward pass")
    if not tape._ops:
        raise AutodiffError("tape is empty")
    loss.accumulate_grad(np.ones((1, 1, 1, 1)))
    for out, fn in reversed(tape._ops):
        if out.grad is not None:
            fn(out.grad)
    tape._ops.clear()
    tape._consumed = True


# ---------------------------------------------------------------------------
# Elementwise primitives


def _binary_shapes(a: Tensor4, b: Tensor4, name: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{name}: shape mismatch {a.shape} vs {b.shape} (no broadcasting)")


def add(a: Tensor4, b: Tensor4) -> Tensor4:
    _binary_shapes(a, b, "add")

    def build():
        def bwd(g):
            if a.requires_grad:
                a.accumulate_grad(g)
            if b.requires_grad:
                b.accumulate_grad(g)
        return bwd

    return make_op_output(a.data + b.data, (a, b), build)


def sub(a: Tensor4, b: Tensor4) -> Tensor4:
    _binary_shapes(a, b, "sub")

    def build():
        def bwd(g):
            if a.requires_grad:
                a.accumulate_grad(g)
            if b.requires_grad:
                b.accumulate_grad(-g)
        return bwd

    return make_op_output(a.data - b.data, (a, b), build)


def mul(a: Tensor4, b: Tensor4) -> Tensor4:
    _binary_shapes(a, b, "mul")

    def build():
        def bwd(g):
            if a.requires_grad:
                a.accumulate_grad(g * b.data)
            if b.requires_grad:
                b.accumulate_grad(g * a.data)
        return bwd

    return make_op_output(a.data * b.data, (a, b), build)


def scale(a: Tensor4, s: float) -> Tensor4:
    s = float(s)

    def build():
        def bwd(g):
            if a.requires_grad:
                a.accumulate_grad(g * s)
        return bwd

    return make_op_output(a.data * s, (a,), build)


def sum_all(a: Tensor4) -> Tensor4:
    """Sum every element into a scalar-shaped tensor."""

    def build():
        def bwd(g):
            if a.requires_grad:
                a.accumulate_grad(np.full_like(a.data, g.reshape(-1)[0]))
        return bwd

    return make_op_output(np.array(a.data.sum()).reshape(1, 1, 1, 1), (a,), build)


# ---------------------------------------------------------------------------
# Deterministic RNG


class Rng:
    """Seeded deterministic stream (numpy PCG64 behind a SeedSequence).

    The same entropy produces the same stream on every platform. `child(i)`
    derives an independent, index-addressable substream, used for per-sample
    augmentation so samples can be processed in any order.
    """

    def __init__(self, entropy):
        if isinstance(entropy, int):
            entropy = [entropy]
        self.entropy: tuple[int, ...] = tuple(int(e) for e in entropy)
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(self.entropy))))

    @property
    def seed(self) -> int:
        return self.entropy[0]

    def child(self, index: int) -> "Rng":
        return Rng(list(self.entropy) + [int(index)])

    def normal(self, shape, scale: float = 1.0) -> np.ndarray:
        return self._gen.standard_normal(size=shape) * scale

    def uniform(self, low: float = 0.0, high: float = 1.0, shape=None):
        return self._gen.uniform(low, high, size=shape)

    def integers(self, low: int, high: int, shape=None):
        return self._gen.integers(low, high, size=shape)

    def shuffle(self, seq: list) -> None:
        self._gen.shuffle(seq)

    def tensor_normal(self, shape, scale: float = 1.0, requires_grad: bool = False) -> Tensor4:
        return Tensor4(self.normal(tuple(shape), scale), requires_grad=requires_grad, validate=False)


# ---------------------------------------------------------------------------
# Finite-difference oracle


def grad_check(f: Callable[[Tensor4], Tensor4], x: Tensor4, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    `f` must be scalar-valued. Error is max over elements of
    |analytic - numeric| / max(1, |numeric|).
    """
    with Tape():
        xt = Tensor4(x.data.copy(), requires_grad=True, validate=False)
        out = f(xt)
        if out.shape != (1, 1, 1, 1):
            raise AutodiffError(f"grad_check requires a scalar-valued f, got {out.shape}")
        backward(out)
    analytic = xt.grad if xt.grad is not None else np.zeros_like(x.data)

    numeric = np.zeros_like(x.data)
    base = x.data
    for idx in np.ndindex(base.shape):
        probe = base.copy()
        probe[idx] = base[idx] + eps
        fp = f(Tensor4(probe, validate=False)).item()
        probe[idx] = base[idx] - eps
        fm = f(Tensor4(probe, validate=False)).item()
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"f non-finite at probe point index {idx}")
        numeric[idx] = (fp - fm) / (2.0 * eps)

    rel = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))
    return float(rel.max())
