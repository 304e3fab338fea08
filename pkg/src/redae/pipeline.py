"""End-to-end dataset pipeline shared by the CLI and the test suite."""

from __future__ import annotations

import numpy as np

from .data import (AugmentSpec, Sample, SplitManifest, augment,
                   equalize_image, generate_phantoms, split)
from .tensor import Rng


def generate_dataset(count: int, h: int, w: int, seed: int,
                     tear_fraction: float = 0.02,
                     ratio: float = 0.8) -> tuple[list[Sample], SplitManifest]:
    """Seeded phantom dataset plus its train/test manifest."""
    samples = generate_phantoms(count, h, w, Rng(seed), tear_fraction)
    manifest = split([s.id for s in samples], ratio=ratio, seed=seed)
    return samples, manifest


def preprocess(samples: dict[str, Sample], manifest: SplitManifest,
               equalize: bool = True, augment_copies: int = 0,
               spec: AugmentSpec | None = None,
               seed: int = 0) -> tuple[dict[str, Sample], SplitManifest]:
    """Equalize everything; add augmented copies of training samples only.

    Augmented copies stay on the training side of the split; their rng stream
    is derived from (seed, train index, copy index) so output is independent
    of processing order.
    """
    spec = spec or AugmentSpec()
    base_rng = Rng([seed, 0xA06])
    out: dict[str, Sample] = {}
    train_ids: list[str] = []

    for sid, s in samples.items():
        img = equalize_image(s.image) if equalize else s.image
        out[sid] = Sample(image=img, mask=s.mask.copy(), id=sid)

    for i, sid in enumerate(manifest.train):
        train_ids.append(sid)
        for k in range(augment_copies):
            aug = augment(out[sid], spec, base_rng.child(i).child(k))
            aug_id = f"{sid}_aug{k}"
            aug.id = aug_id
            out[aug_id] = aug
            train_ids.append(aug_id)

    new_manifest = SplitManifest(train=train_ids, test=list(manifest.test),
                                 seed=manifest.seed, ratio=manifest.ratio)
    return out, new_manifest


OVERLAY_COLORS = {
    0: (255, 0, 255),  # background: magenta
    1: (218, 112, 214),  # muscle: orchid
    2: (0, 255, 0),  # tear: green
}


def overlay(image: np.ndarray, mask: np.ndarray, alpha: float = 0.5) -> np.ndarray:
    """RGB overlay: palette color alpha-blended over the source image."""
    h, w = mask.shape
    if image.shape[2] == 1:
        base = np.repeat(image, 3, axis=2)
    else:
        base = image
    palette = np.zeros((h, w, 3))
    for label, color in OVERLAY_COLORS.items():
        palette[mask == label] = np.asarray(color) / 255.0
    blended = (1 - alpha) * base + alpha * palette
    return np.floor(np.clip(blended, 0, 1) * 255.0 + 0.5).astype(np.uint8)
