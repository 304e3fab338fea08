"""Two-encoder / two-decoder segmentation networks.

Four variants share the conv/BN/ReLU trunk and differ in their pooling path:

* ``re-dae`` / ``sa-re-dae`` - hybrid: each encoder pools through both a max
  branch (indices memorized) and an average branch, concatenates them
  (average first), and fuses with a learned 1x1 convolution. Decoders mirror
  this with index unpooling plus replication upsampling (unpooled first).
* ``max-only`` - max pooling and index unpooling only (mini SegNet).
* ``avg-only`` - average pooling and replication upsampling only.

Decoders run in reverse encoder order: the first decoder consumes the
indices of the last encoder.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .layers import (BatchNormParams, ClassWeights, ConvParams, PoolSpec,
                     avg_pool, avg_upsample, batch_norm, concat_channels,
                     conv2d, max_pool, max_unpool, relu, softmax_pixels,
                     weighted_cross_entropy)
from .tensor import Rng, Tensor4, zeros

VARIANTS = ("re-dae", "sa-re-dae", "max-only", "avg-only")


@dataclass
class EncoderBlock:
    conv: ConvParams
    bn: BatchNormParams
    pool: PoolSpec
    fuse: ConvParams | None  # 1x1, 2c -> c; None for single-branch variants


@dataclass
class DecoderBlock:
    fuse: ConvParams | None  # 1x1, 2c -> c; None for single-branch variants
    conv: ConvParams
    bn: BatchNormParams
    pool: PoolSpec


@dataclass
class Network:
    variant: str
    in_channels: int
    widths: tuple[int, ...]
    classes: int
    kernel: int
    encoders: list[EncoderBlock]
    decoders: list[DecoderBlock]  # reverse order: decoders[0] mirrors encoders[-1]
    head: ConvParams
    class_weights: ClassWeights = field(default_factory=lambda: ClassWeights.unit(3))

    @property
    def hybrid(self) -> bool:
        return self.variant in ("re-dae", "sa-re-dae")

    def set_mode(self, mode: str) -> None:
        for blk in self.encoders + self.decoders:
            blk.bn.mode = mode


def _he_conv(rng: Rng, c_in: int, c_out: int, k: int, padding: str = "same") -> ConvParams:
    std = np.sqrt(2.0 / (c_in * k * k))
    filters = Tensor4(rng.normal((c_out, c_in, k, k), std), requires_grad=True, validate=False)
    bias = zeros((1, c_out, 1, 1), requires_grad=True)
    return ConvParams(filters, bias, padding)


def _blend_fuse(rng: Rng, c: int) -> ConvParams:
    """1x1 fusion conv over a (branch_a, branch_b) channel concat.

    Initialized to average the two branches channel-for-channel (plus small
    noise to break symmetry), so the fused path starts as an unbiased blend
    and training reweights the branches instead of untangling a random mix.
    """
    std = 0.05 * np.sqrt(2.0 / (2 * c))
    w = rng.normal((c, 2 * c, 1, 1), std)
    for j in range(c):
        w[j, j, 0, 0] += 0.5
        w[j, c + j, 0, 0] += 0.5
    filters = Tensor4(w, requires_grad=True, validate=False)
    bias = zeros((1, c, 1, 1), requires_grad=True)
    return ConvParams(filters, bias, "same")


def _bn(c: int) -> BatchNormParams:
    from .tensor import full
    return BatchNormParams(gamma=full((1, c, 1, 1), 1.0, requires_grad=True),
                           beta=zeros((1, c, 1, 1), requires_grad=True))


def build(variant: str, channels, classes: int, rng: Rng, in_channels: int = 1,
          kernel: int = 3, pool_k: int = 2) -> Network:
    """Construct a network with He-initialized filters, deterministic per seed."""
    if variant not in VARIANTS:
        raise ShapeError(f"unknown variant {variant!r}, expected one of {VARIANTS}")
    channels = tuple(int(c) for c in channels)
    if len(channels) != 2:
        raise ShapeError(f"expected 2 encoder widths, got {len(channels)}")
    if classes < 2:
        raise ShapeError(f"need at least 2 classes, got {classes}")
    hybrid = variant in ("re-dae", "sa-re-dae")

    encoders: list[EncoderBlock] = []
    c_prev = in_channels
    for c in channels:
        fuse = _blend_fuse(rng, c) if hybrid else None
        encoders.append(EncoderBlock(conv=_he_conv(rng, c_prev, c, kernel),
                                     bn=_bn(c), pool=PoolSpec(pool_k), fuse=fuse))
        c_prev = c

    # decoders[0] mirrors encoders[-1]; the mirror of encoder 0 keeps width
    # channels[0] so the head sees a reasonable feature count
    decoders: list[DecoderBlock] = []
    for i in reversed(range(len(channels))):
        c = channels[i]
        c_out = channels[i - 1] if i > 0 else channels[0]
        fuse = _blend_fuse(rng, c) if hybrid else None
        decoders.append(DecoderBlock(fuse=fuse, conv=_he_conv(rng, c, c_out, kernel),
                                     bn=_bn(c_out), pool=PoolSpec(pool_k)))

    head = _he_conv(rng, channels[0], classes, 1)
    return Network(variant=variant, in_channels=in_channels, widths=channels,
                   classes=classes, kernel=kernel, encoders=encoders,
                   decoders=decoders, head=head,
                   class_weights=ClassWeights.unit(classes))


def named_parameters(net: Network) -> list[tuple[str, Tensor4]]:
    """Trainable tensors in a fixed, stable order."""
    out: list[tuple[str, Tensor4]] = []
    for i, e in enumerate(net.encoders):
        out += [(f"enc{i}.conv.filters", e.conv.filters), (f"enc{i}.conv.bias", e.conv.bias),
                (f"enc{i}.bn.gamma", e.bn.gamma), (f"enc{i}.bn.beta", e.bn.beta)]
        if e.fuse is not None:
            out += [(f"enc{i}.fuse.filters", e.fuse.filters), (f"enc{i}.fuse.bias", e.fuse.bias)]
    for i, d in enumerate(net.decoders):
        if d.fuse is not None:
            out += [(f"dec{i}.fuse.filters", d.fuse.filters), (f"dec{i}.fuse.bias", d.fuse.bias)]
        out += [(f"dec{i}.conv.filters", d.conv.filters), (f"dec{i}.conv.bias", d.conv.bias),
                (f"dec{i}.bn.gamma", d.bn.gamma), (f"dec{i}.bn.beta", d.bn.beta)]
    out += [("head.filters", net.head.filters), ("head.bias", net.head.bias)]
    return out


def named_buffers(net: Network) -> list[tuple[str, np.ndarray]]:
    """Non-trainable state (batch-norm running statistics)."""
    out: list[tuple[str, np.ndarray]] = []
    for i, e in enumerate(net.encoders):
        out += [(f"enc{i}.bn.running_mean", e.bn.running_mean),
                (f"enc{i}.bn.running_var", e.bn.running_var)]
    for i, d in enumerate(net.decoders):
        out += [(f"dec{i}.bn.running_mean", d.bn.running_mean),
                (f"dec{i}.bn.running_var", d.bn.running_var)]
    return out


def parameter_count(net: Network) -> int:
    return sum(t.data.size for _, t in named_parameters(net))


def forward(net: Network, x: Tensor4) -> Tensor4:
    """Full-resolution class logits (n, classes, h, w)."""
    n, c, h, w = x.shape
    if c != net.in_channels:
        raise ShapeError(f"forward: input has {c} channels, network expects {net.in_channels}")
    factor = net.encoders[0].pool.k ** len(net.encoders)
    if h % factor or w % factor:
        raise ShapeError(
            f"forward: spatial dims {h}x{w} must be divisible by {factor}; "
            "use data.pad_to_multiple before inference")

    indices = []
    t = x
    for enc in net.encoders:
        t = relu(batch_norm(conv2d(t, enc.conv), enc.bn))
        if net.variant == "avg-only":
            t = avg_pool(t, enc.pool)
        elif net.variant == "max-only":
            t, idx = max_pool(t, enc.pool)
            indices.append(idx)
        else:
            mx, idx = max_pool(t, enc.pool)
            indices.append(idx)
            t = conv2d(concat_channels(avg_pool(t, enc.pool), mx), enc.fuse)

    for i, dec in enumerate(net.decoders):
        if net.variant == "avg-only":
            t = avg_upsample(t, dec.pool)
        elif net.variant == "max-only":
            t = max_unpool(t, indices[-(i + 1)], dec.pool)
        else:
            up = max_unpool(t, indices[-(i + 1)], dec.pool)
            t = conv2d(concat_channels(up, avg_upsample(t, dec.pool)), dec.fuse)
        t = relu(batch_norm(conv2d(t, dec.conv), dec.bn))

    return conv2d(t, net.head)


def predict(net: Network, x: Tensor4) -> np.ndarray:
    """Per-pixel argmax class mask; ties pick the lowest class index.

    argmax over the softmax equals argmax over the logits (softmax is
    strictly monotone per pixel), so the softmax is skipped.
    """
    logits = forward(net, x)
    return logits.data.argmax(axis=1).astype(np.uint8)


def loss(net: Network, x: Tensor4, labels: np.ndarray) -> Tensor4:
    """Weighted cross-entropy of softmax probabilities against a label mask."""
    probs = softmax_pixels(forward(net, x))
    return weighted_cross_entropy(probs, labels, net.class_weights)


def median_frequency_weights(masks, classes: int) -> ClassWeights:
    """Static-attention weights: median class frequency over each frequency.

    Classes absent from the masks fall back to weight 1.
    """
    counts = np.zeros(classes, dtype=np.int64)
    for m in masks:
        counts += np.bincount(np.asarray(m).reshape(-1), minlength=classes)[:classes]
    total = counts.sum()
    freq = counts / total
    present = freq > 0
    med = np.median(freq[present])
    w = np.ones(classes)
    w[present] = med / freq[present]
    return ClassWeights(w)
