"""Primitive network layers: convolution, batch norm, pooling, fusion, loss.

All layers are pure functions over (input, params) that register their
backward rule on the active tape. Pooling uses non-overlapping k x k windows
with stride k; max-pooling memorizes per-window argmax offsets so the decoder
can place values back exactly during unpooling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, NumericError, ShapeError
from .tensor import Tensor4, make_op_output

# ---------------------------------------------------------------------------
# Parameter containers


@dataclass
class ConvParams:
    """2D convolution parameters: filters (c_out, c_in, p, q) and bias (c_out)."""

    filters: Tensor4
    bias: Tensor4  # stored as (1, c_out, 1, 1)
    padding: str = "same"  # "same" zero-pads, "valid" shrinks

    def __post_init__(self):
        c_out, _c_in, p, q = self.filters.shape
        if self.padding not in ("same", "valid"):
            raise ShapeError(f"unknown padding {self.padding!r}")
        if self.padding == "same" and (p % 2 == 0 or q % 2 == 0):
            raise ShapeError(f"'same' padding requires odd filter dims, got {p}x{q}")
        if self.bias.shape != (1, c_out, 1, 1):
            raise ShapeError(f"bias shape {self.bias.shape} does not match {c_out} filters")

    @property
    def c_in(self) -> int:
        return self.filters.shape[1]

    @property
    def c_out(self) -> int:
        return self.filters.shape[0]


@dataclass
class PoolSpec:
    """Non-overlapping pooling window: k x k with stride k."""

    k: int = 2

    def __post_init__(self):
        if self.k < 1:
            raise ShapeError(f"pool window must be >= 1, got {self.k}")


@dataclass
class PoolIndices:
    """Per-window argmax offsets (flat 0..k^2-1), shaped like the pooled map."""

    offsets: np.ndarray  # int64, shape (n, c, oh, ow)
    k: int

    def __post_init__(self):
        if self.offsets.ndim != 4:
            raise ShapeError(f"pool indices must be rank 4, got {self.offsets.shape}")
        if self.offsets.size and int(self.offsets.max()) >= self.k * self.k:
            raise ShapeError("pool index offset out of window range")


@dataclass
class BatchNormParams:
    """Per-channel affine normalization with running statistics.

    `mode` selects batch statistics ("train", with a running-stat update)
    or frozen running statistics ("eval"). Running variance is tracked with
    the biased batch estimate.
    """

    gamma: Tensor4  # (1, c, 1, 1)
    beta: Tensor4  # (1, c, 1, 1)
    running_mean: np.ndarray = field(default=None)  # (c,)
    running_var: np.ndarray = field(default=None)  # (c,)
    epsilon: float = 1e-5
    momentum: float = 0.1
    mode: str = "train"

    def __post_init__(self):
        c = self.gamma.shape[1]
        if self.beta.shape != self.gamma.shape:
            raise ShapeError("gamma/beta shape mismatch")
        if self.running_mean is None:
            self.running_mean = np.zeros(c)
        if self.running_var is None:
            self.running_var = np.ones(c)
        if np.any(self.running_var < 0):
            raise NumericError("running variance must be nonnegative")

    @property
    def channels(self) -> int:
        return self.gamma.shape[1]


@dataclass
class ClassWeights:
    """Strictly positive per-class pixel weights for the loss."""

    w: np.ndarray

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(self.w)) or np.any(self.w <= 0):
            raise NumericError("class weights must be finite and strictly positive")

    def __len__(self) -> int:
        return len(self.w)

    @staticmethod
    def unit(classes: int) -> "ClassWeights":
        return ClassWeights(np.ones(classes))


# ---------------------------------------------------------------------------
# Convolution


def _conv2d_1x1(x: Tensor4, p: ConvParams) -> Tensor4:
    """Fast path for 1x1 filters: a per-pixel channel mix, no im2col."""
    n, c_in, h, w = x.shape
    c_out = p.c_out
    wmat = p.filters.data.reshape(c_out, c_in)
    xm = x.data.reshape(n, c_in, h * w)
    out = (wmat @ xm).reshape(n, c_out, h, w) + p.bias.data

    def build():
        def bwd(g):
            gr = g.reshape(n, c_out, h * w)
            if p.bias.requires_grad:
                p.bias.accumulate_grad(g.sum(axis=(0, 2, 3)).reshape(1, c_out, 1, 1))
            if p.filters.requires_grad:
                gw = np.matmul(gr, xm.transpose(0, 2, 1)).sum(axis=0)
                p.filters.accumulate_grad(gw.reshape(c_out, c_in, 1, 1))
            if x.requires_grad:
                x.accumulate_grad((wmat.T @ gr).reshape(n, c_in, h, w), own=True)
        return bwd

    return make_op_output(out, (x, p.filters, p.bias), build)


def conv2d(x: Tensor4, p: ConvParams) -> Tensor4:
    """Stride-1 2D convolution (cross-correlation) with zero 'same' padding."""
    n, c_in, h, w = x.shape
    c_out, c_in_f, kp, kq = p.filters.shape
    if c_in != c_in_f:
        raise ShapeError(f"conv2d: input has {c_in} channels, filters expect {c_in_f}")
    if kp == 1 and kq == 1:
        return _conv2d_1x1(x, p)

    if p.padding == "same":
        ph, pw = (kp - 1) // 2, (kq - 1) // 2
    else:
        ph = pw = 0
        if h < kp or w < kq:
            raise ShapeError(f"conv2d: input {h}x{w} smaller than filter {kp}x{kq}")
    oh, ow = h + 2 * ph - kp + 1, w + 2 * pw - kq + 1

    if ph == 0 and pw == 0:
        xp = x.data
    else:
        xp = np.zeros((n, c_in, h + 2 * ph, w + 2 * pw))
        xp[:, :, ph:ph + h, pw:pw + w] = x.data
    # im2col in (n, c_in * kp * kq, oh * ow) layout: one shifted-slice copy
    # per filter offset, never a strided transpose
    cols = np.empty((n, c_in, kp * kq, oh, ow))
    for i in range(kp):
        for j in range(kq):
            cols[:, :, i * kq + j] = xp[:, :, i:i + oh, j:j + ow]
    cols = cols.reshape(n, c_in * kp * kq, oh * ow)
    wmat = p.filters.data.reshape(c_out, c_in * kp * kq)
    out = (wmat @ cols).reshape(n, c_out, oh, ow) + p.bias.data

    def build():
        def bwd(g):
            gr = g.reshape(n, c_out, oh * ow)
            if p.bias.requires_grad:
                p.bias.accumulate_grad(g.sum(axis=(0, 2, 3)).reshape(1, c_out, 1, 1))
            if p.filters.requires_grad:
                gw = np.matmul(gr, cols.transpose(0, 2, 1)).sum(axis=0)
                p.filters.accumulate_grad(gw.reshape(c_out, c_in, kp, kq))
            if x.requires_grad:
                # grad wrt input: one GEMM back to column space, then
                # scatter-add each filter offset into the padded input grad
                gxc = (wmat.T @ gr).reshape(n, c_in, kp * kq, oh, ow)
                gxp = np.zeros((n, c_in, h + 2 * ph, w + 2 * pw))
                for i in range(kp):
                    for j in range(kq):
                        gxp[:, :, i:i + oh, j:j + ow] += gxc[:, :, i * kq + j]
                gx = gxp if ph == 0 and pw == 0 else np.ascontiguousarray(
                    gxp[:, :, ph:ph + h, pw:pw + w])
                x.accumulate_grad(gx, own=True)
        return bwd

    return make_op_output(out, (x, p.filters, p.bias), build)


# ---------------------------------------------------------------------------
# Activation


def relu(x: Tensor4) -> Tensor4:
    """max(0, x) elementwise; subgradient at exactly 0 is 0."""

    def build():
        mask = x.data > 0

        def bwd(g):
            if x.requires_grad:
                x.accumulate_grad(g * mask, own=True)
        return bwd

    return make_op_output(np.maximum(x.data, 0.0), (x,), build)


# ---------------------------------------------------------------------------
# Batch normalization


def batch_norm(x: Tensor4, p: BatchNormParams) -> Tensor4:
    n, c, h, w = x.shape
    if c != p.channels:
        raise ShapeError(f"batch_norm: input has {c} channels, params expect {p.channels}")
    axes = (0, 2, 3)
    count = n * h * w

    if p.mode == "train":
        if count < 2:
            raise ShapeError("batch_norm train mode needs >= 2 values per channel")
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        p.running_mean += p.momentum * (mean - p.running_mean)
        p.running_var += p.momentum * (var - p.running_var)
    elif p.mode == "eval":
        mean, var = p.running_mean, p.running_var
    else:
        raise ShapeError(f"unknown batch_norm mode {p.mode!r}")

    inv_std = 1.0 / np.sqrt(var + p.epsilon)
    xhat = (x.data - mean.reshape(1, c, 1, 1)) * inv_std.reshape(1, c, 1, 1)
    out = xhat * p.gamma.data + p.beta.data
    train_mode = p.mode == "train"

    def build():
        def bwd(g):
            if p.beta.requires_grad:
                p.beta.accumulate_grad(g.sum(axis=axes).reshape(1, c, 1, 1))
            if p.gamma.requires_grad:
                p.gamma.accumulate_grad((g * xhat).sum(axis=axes).reshape(1, c, 1, 1))
            if x.requires_grad:
                gk = g * p.gamma.data
                if train_mode:
                    m1 = gk.mean(axis=axes).reshape(1, c, 1, 1)
                    m2 = (gk * xhat).mean(axis=axes).reshape(1, c, 1, 1)
                    gx = inv_std.reshape(1, c, 1, 1) * (gk - m1 - xhat * m2)
                else:
                    gx = gk * inv_std.reshape(1, c, 1, 1)
                x.accumulate_grad(gx, own=True)
        return bwd

    return make_op_output(out, (x, p.gamma, p.beta), build)


# ---------------------------------------------------------------------------
# Pooling


def _window_view(data: np.ndarray, k: int) -> np.ndarray:
    """Reshape (n,c,h,w) into (n,c,h/k,w/k,k*k) non-overlapping windows."""
    n, c, h, w = data.shape
    oh, ow = h // k, w // k
    return np.ascontiguousarray(
        data.reshape(n, c, oh, k, ow, k).transpose(0, 1, 2, 4, 3, 5)
    ).reshape(n, c, oh, ow, k * k)


def _window_unview(win: np.ndarray, k: int) -> np.ndarray:
    """Inverse of `_window_view`."""
    n, c, oh, ow, _ = win.shape
    return np.ascontiguousarray(
        win.reshape(n, c, oh, ow, k, k).transpose(0, 1, 2, 4, 3, 5)
    ).reshape(n, c, oh * k, ow * k)


def _check_divisible(x: Tensor4, k: int, name: str) -> None:
    _, _, h, w = x.shape
    if h % k or w % k:
        raise ShapeError(
            f"{name}: spatial dims {h}x{w} not divisible by window {k}; "
            "pad the input first (see data.pad_to_multiple)")


def _windows_2x2(data: np.ndarray) -> np.ndarray:
    """Stack the four 2x2 window corners: (4, n, c, h/2, w/2), row-major order."""
    n, c, h, w = data.shape
    a = data.reshape(n, c, h // 2, 2, w // 2, 2)
    return np.stack([a[:, :, :, 0, :, 0], a[:, :, :, 0, :, 1],
                     a[:, :, :, 1, :, 0], a[:, :, :, 1, :, 1]])


def _scatter_2x2(values: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Place values at their window offsets, zeros elsewhere (k=2)."""
    n, c, oh, ow = values.shape
    out = np.zeros((n, c, oh * 2, ow * 2))
    view = out.reshape(n, c, oh, 2, ow, 2)
    for off in range(4):
        sel = offsets == off
        view[:, :, :, off // 2, :, off % 2][sel] = values[sel]
    return out


def max_pool(x: Tensor4, s: PoolSpec) -> tuple[Tensor4, PoolIndices]:
    """Window max with memorized argmax offsets; ties pick the lowest offset."""
    k = s.k
    _check_divisible(x, k, "max_pool")
    if k == 2:
        corners = _windows_2x2(x.data)
        offsets = corners.argmax(axis=0)
        vals = corners.max(axis=0)
    else:
        win = _window_view(x.data, k)
        offsets = win.argmax(axis=-1)
        vals = np.take_along_axis(win, offsets[..., None], axis=-1)[..., 0]
    idx = PoolIndices(offsets.astype(np.int64), k)

    def build():
        def bwd(g):
            if x.requires_grad:
                if k == 2:
                    x.accumulate_grad(_scatter_2x2(g, offsets))
                else:
                    gw = np.zeros(x.shape[:2] + (x.shape[2] // k, x.shape[3] // k, k * k))
                    np.put_along_axis(gw, offsets[..., None], g[..., None], axis=-1)
                    x.accumulate_grad(_window_unview(gw, k))
        return bwd

    return make_op_output(vals, (x,), build), idx


def max_unpool(y: Tensor4, idx: PoolIndices, s: PoolSpec) -> Tensor4:
    """Sparse up-sampling: each window gets y's value at the memorized offset."""
    k = s.k
    if k != idx.k:
        raise ShapeError(f"max_unpool: window {k} differs from index window {idx.k}")
    if y.shape != idx.offsets.shape:
        raise ShapeError(f"max_unpool: value shape {y.shape} vs index shape {idx.offsets.shape}")
    if k == 2:
        out = _scatter_2x2(y.data, idx.offsets)
    else:
        win = np.zeros(y.shape + (k * k,))
        np.put_along_axis(win, idx.offsets[..., None], y.data[..., None], axis=-1)
        out = _window_unview(win, k)

    def build():
        def bwd(g):
            if y.requires_grad:
                if k == 2:
                    corners = _windows_2x2(g)
                    gy = np.choose(idx.offsets, corners)
                else:
                    gw = _window_view(g, k)
                    gy = np.take_along_axis(gw, idx.offsets[..., None], axis=-1)[..., 0]
                y.accumulate_grad(gy)
        return bwd

    return make_op_output(out, (y,), build)


def avg_pool(x: Tensor4, s: PoolSpec) -> Tensor4:
    """Window arithmetic mean."""
    k = s.k
    _check_divisible(x, k, "avg_pool")
    if k == 2:
        n, c, h, w = x.shape
        a = x.data.reshape(n, c, h // 2, 2, w // 2, 2)
        out = (a[:, :, :, 0, :, 0] + a[:, :, :, 0, :, 1]
               + a[:, :, :, 1, :, 0] + a[:, :, :, 1, :, 1]) * 0.25
    else:
        out = _window_view(x.data, k).mean(axis=-1)

    def build():
        def bwd(g):
            if x.requires_grad:
                gs = g / (k * k)
                n, c, oh, ow = g.shape
                gx = np.empty((n, c, oh * k, ow * k))
                view = gx.reshape(n, c, oh, k, ow, k)
                for i in range(k):
                    for j in range(k):
                        view[:, :, :, i, :, j] = gs
                x.accumulate_grad(gx)
        return bwd

    return make_op_output(out, (x,), build)


def avg_upsample(y: Tensor4, s: PoolSpec) -> Tensor4:
    """Replicate each value across its k x k window (exact right-inverse of avg_pool)."""
    k = s.k
    out = np.repeat(np.repeat(y.data, k, axis=2), k, axis=3)

    def build():
        def bwd(g):
            if y.requires_grad:
                n, c, h, w = g.shape
                a = g.reshape(n, c, h // k, k, w // k, k)
                y.accumulate_grad(a.sum(axis=(3, 5)))
        return bwd

    return make_op_output(out, (y,), build)


# ---------------------------------------------------------------------------
# Channel concatenation


def concat_channels(a: Tensor4, b: Tensor4) -> Tensor4:
    na, ca, ha, wa = a.shape
    nb, cb, hb, wb = b.shape
    if (na, ha, wa) != (nb, hb, wb):
        raise ShapeError(f"concat_channels: batch/spatial mismatch {a.shape} vs {b.shape}")

    def build():
        def bwd(g):
            if a.requires_grad:
                a.accumulate_grad(g[:, :ca])
            if b.requires_grad:
                b.accumulate_grad(g[:, ca:])
        return bwd

    return make_op_output(np.concatenate([a.data, b.data], axis=1), (a, b), build)


# ---------------------------------------------------------------------------
# Classification head


def softmax_pixels(logits: Tensor4) -> Tensor4:
    """Per-pixel softmax over channels, max-subtracted for stability."""
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    probs = e / e.sum(axis=1, keepdims=True)

    def build():
        def bwd(g):
            if logits.requires_grad:
                dot = (g * probs).sum(axis=1, keepdims=True)
                logits.accumulate_grad(probs * (g - dot))
        return bwd

    return make_op_output(probs, (logits,), build)


def check_labels(labels: np.ndarray, classes: int) -> np.ndarray:
    """Validate an integer label mask against the class count."""
    labels = np.asarray(labels)
    bad = (labels < 0) | (labels >= classes)
    if bad.any():
        where = tuple(int(i) for i in np.argwhere(bad)[0])
        raise DataError(f"label {int(labels[where])} out of range [0, {classes}) at pixel {where}")
    return labels.astype(np.int64)


def weighted_cross_entropy(probs: Tensor4, labels: np.ndarray, w: ClassWeights) -> Tensor4:
    """Class-weighted pixel cross-entropy, normalized by total pixel weight.

    loss = -(sum_pixels w[label] * ln probs[label]) / (sum_pixels w[label]),
    so rescaling all class weights by a common factor leaves the loss (and
    its gradients) unchanged.
    """
    n, c, h, wdt = probs.shape
    labels = check_labels(labels, c)
    if labels.shape != (n, h, wdt):
        raise ShapeError(f"labels shape {labels.shape} does not match probs {probs.shape}")

    pw = w.w[labels]  # (n, h, w)
    total_w = pw.sum()
    p_label = np.take_along_axis(probs.data, labels[:, None], axis=1)[:, 0]
    with np.errstate(divide="ignore"):  # log(0) -> -inf; the caller handles it
        loss = -(pw * np.log(p_label)).sum() / total_w

    def build():
        def bwd(g):
            if probs.requires_grad:
                gs = g.reshape(-1)[0]
                gp = np.zeros(probs.shape)
                np.put_along_axis(gp, labels[:, None], (-gs * pw / (p_label * total_w))[:, None], axis=1)
                probs.accumulate_grad(gp)
        return bwd

    return make_op_output(np.array(loss).reshape(1, 1, 1, 1), (probs,), build)
