"""Seeded synthetic shape-classification images (disk / bar / cross on a noisy background)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SHAPES = ("disk", "bar", "cross")


@dataclass
class SyntheticDataset:
    images: np.ndarray  # (N, C, size, size), normalised to zero mean / unit std
    labels: np.ndarray  # (N,) int

    def __len__(self) -> int:
        return len(self.labels)

    def batches(self, batch_size: int, rng: np.random.Generator | None = None):
        order = np.arange(len(self)) if rng is None else rng.permutation(len(self))
        for i in range(0, len(self), batch_size):
            idx = order[i : i + batch_size]
            yield self.images[idx], self.labels[idx]


def _draw(shape: str, size: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    scale = rng.uniform(0.18, 0.32) * size
    cy, cx = rng.uniform(scale * 0.6, size - scale * 0.6, size=2)
    dy, dx = yy - cy, xx - cx
    thick = max(1.5, 0.25 * scale)
    if shape == "disk":
        return (dy**2 + dx**2 <= scale**2).astype(np.float64)
    if shape == "bar":
        if rng.random() < 0.5:
            dy, dx = dx, dy
        return ((np.abs(dy) <= thick / 2) & (np.abs(dx) <= scale)).astype(np.float64)
    if shape == "cross":
        arm_h = (np.abs(dy) <= thick / 2) & (np.abs(dx) <= scale)
        arm_v = (np.abs(dx) <= thick / 2) & (np.abs(dy) <= scale)
        return (arm_h | arm_v).astype(np.float64)
    raise ValueError(f"unknown shape {shape!r}")


def make_dataset(n: int, seed: int, n_classes: int = 3, size: int = 32, channels: int = 1,
                 background_noise: float = 0.15) -> SyntheticDataset:
    """``n`` images with classes balanced to within one sample; fully determined by ``seed``."""
    if not 1 <= n_classes <= len(SHAPES):
        raise ValueError(f"n_classes must be in 1..{len(SHAPES)}")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % n_classes)
    images = np.empty((n, channels, size, size))
    for i, lab in enumerate(labels):
        img = _draw(SHAPES[lab], size, rng)
        contrast = rng.uniform(0.6, 1.0)
        for ch in range(channels):
            images[i, ch] = contrast * img + background_noise * rng.standard_normal((size, size))
    # fixed affine normalisation (not data-dependent) so train and test share units
    images = (images - 0.1) / 0.35
    return SyntheticDataset(images, labels.astype(np.int64))
