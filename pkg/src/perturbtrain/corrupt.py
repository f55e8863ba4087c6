"""Input corruptions with five severity levels, plus FGSM.

Corruptions act on raw [0, 1] inputs (one sample or a batch of rows) and clip
their output back into [0, 1]. The severity tables are small-image analogues
of the usual common-corruption benchmarks, not a reproduction of them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import InputError
from .network import backward, forward
from .perturb import CORRUPT_STREAM, stream

# Per-kind parameter for severities 1..5. Noise/shift kinds grow with
# severity; Contrast (kept fraction) and ShotNoise (photon scale) shrink,
# which still means a stronger corruption. Pixelate is the block area in
# pixels; each block shape is a union of the previous level's blocks.
SEVERITY_TABLE = {
    "GaussianNoise": (0.04, 0.08, 0.18, 0.26, 0.38),
    "ShotNoise": (60.0, 25.0, 12.0, 5.0, 3.0),
    "ImpulseNoise": (0.01, 0.02, 0.05, 0.08, 0.14),
    "Brightness": (0.05, 0.1, 0.15, 0.2, 0.3),
    "Contrast": (0.75, 0.6, 0.45, 0.3, 0.15),
    "Pixelate": (4, 8, 16, 32, 64),
    "GaussianBlur": (0.5, 0.75, 1.0, 1.5, 2.0),
}
CORRUPTIONS = tuple(SEVERITY_TABLE)
STOCHASTIC = frozenset({"GaussianNoise", "ShotNoise", "ImpulseNoise"})
SPATIAL = frozenset({"Pixelate", "GaussianBlur"})
_DECREASING = frozenset({"ShotNoise", "Contrast"})
PIXELATE_BLOCKS = {4: (2, 2), 8: (2, 4), 16: (4, 4), 32: (4, 8), 64: (8, 8)}


@dataclass(frozen=True)
class CorruptionSpec:
    kind: str = "None"
    severity: int = 1

    def __post_init__(self):
        if self.kind != "None" and self.kind not in SEVERITY_TABLE:
            raise InputError(f"unknown corruption {self.kind!r}")
        if self.kind != "None" and self.severity not in (1, 2, 3, 4, 5):
            raise InputError(f"severity must be an integer in 1..5, got {self.severity}")

    @property
    def parameter(self) -> float | None:
        if self.kind == "None":
            return None
        return SEVERITY_TABLE[self.kind][self.severity - 1]

    @property
    def strength(self) -> float:
        """A number that strictly increases with severity for every kind."""
        if self.kind == "None":
            return 0.0
        p = self.parameter
        return -p if self.kind in _DECREASING else p

    @property
    def stochastic(self) -> bool:
        return self.kind in STOCHASTIC

    def __str__(self):
        return "none" if self.kind == "None" else f"{self.kind}:{self.severity}"


def parse_corruption(text: str) -> CorruptionSpec:
    """Parse ``"Kind:severity"`` or ``"None"``."""
    text = text.strip()
    if text.lower() == "none":
        return CorruptionSpec()
    kind, _, sev = text.partition(":")
    try:
        return CorruptionSpec(kind.strip(), int(sev) if sev else 1)
    except ValueError as exc:
        raise InputError(f"bad corruption spec {text!r}: {exc}") from exc


def _image_shape(d, image_shape):
    if image_shape is not None:
        image_shape = tuple(int(s) for s in image_shape)
        if int(np.prod(image_shape)) != d:
            raise InputError(f"image shape {image_shape} does not match {d} features")
        if len(image_shape) == 2:
            image_shape = (1,) + image_shape
        return image_shape
    side = int(round(np.sqrt(d)))
    if side * side != d:
        raise InputError(f"{d} features is not a square pixel count; pass image_shape")
    return (1, side, side)


def _block_mean(imgs, size, axis):
    starts = np.arange(0, imgs.shape[axis], size)
    sums = np.add.reduceat(imgs, starts, axis=axis)
    counts = np.minimum(size, imgs.shape[axis] - starts).astype(np.float64)
    shape = [1] * imgs.ndim
    shape[axis] = len(starts)
    return np.take(sums / counts.reshape(shape), np.arange(imgs.shape[axis]) // size, axis=axis)


def _pixelate(imgs, area):
    # imgs: (n, c, h, w). Edge blocks may be partial; they average what they cover.
    bh, bw = PIXELATE_BLOCKS[int(area)]
    return _block_mean(_block_mean(imgs, bh, 2), bw, 3)


def apply(spec: CorruptionSpec, x, rng: np.random.Generator | None = None, image_shape=None, clip: bool = True):
    """Return a corrupted copy of ``x`` (never modified in place).

    ``clip=False`` skips the final clipping to [0, 1]; only useful for
    inspecting the raw perturbation.
    """
    x = np.asarray(x, dtype=np.float64)
    if spec.kind == "None":
        return x.copy()
    if spec.stochastic and rng is None:
        raise InputError(f"{spec.kind} needs a random generator")
    batch = np.atleast_2d(x)
    n, d = batch.shape
    p = spec.parameter
    kind = spec.kind
    if kind == "GaussianNoise":
        out = batch + p * rng.standard_normal(batch.shape)
    elif kind == "ShotNoise":
        out = rng.poisson(np.clip(batch, 0.0, None) * p) / p
    elif kind == "ImpulseNoise":
        hit = rng.random(batch.shape) < p
        salt = rng.random(batch.shape) < 0.5
        out = np.where(hit, salt.astype(np.float64), batch)
    elif kind == "Brightness":
        out = batch + p
    elif kind == "Contrast":
        mean = batch.mean(axis=1, keepdims=True)
        out = (batch - mean) * p + mean
    else:
        c, h, w = _image_shape(d, image_shape)
        imgs = batch.reshape(n, c, h, w)
        if kind == "Pixelate":
            out = _pixelate(imgs, p)
        else:
            out = gaussian_filter(imgs, sigma=(0, 0, p, p), mode="reflect", truncate=4.0)
        out = out.reshape(n, d)
    if clip:
        out = np.clip(out, 0.0, 1.0)
    return out.reshape(x.shape)


def corrupt_dataset(spec: CorruptionSpec, dataset, seed: int, draw: int = 0):
    """Corrupt every input of ``dataset`` with a generator derived from ``seed``."""
    from .data import Dataset

    rng = stream(seed, CORRUPT_STREAM, draw)
    inputs = apply(spec, dataset.inputs, rng, dataset.image_shape)
    return Dataset(inputs, dataset.labels, dataset.num_classes, dataset.image_shape)


def estimate_bound(spec: CorruptionSpec, dataset, seed: int = 0, n_draws: int = 10) -> float:
    """Largest observed ||g(x) - x||_2 over the dataset (and noise draws)."""
    if len(dataset) == 0:
        raise InputError("cannot estimate a corruption bound on an empty dataset")
    if spec.kind == "None":
        return 0.0
    draws = n_draws if spec.stochastic else 1
    best = 0.0
    for k in range(draws):
        shifted = corrupt_dataset(spec, dataset, seed, k).inputs
        best = max(best, float(np.linalg.norm(shifted - dataset.inputs, axis=1).max()))
    return best


def fgsm(net, x, label, epsilon: float):
    """x + epsilon * sign(grad_x loss), clipped to [0, 1]."""
    if epsilon < 0:
        raise InputError(f"epsilon must be >= 0, got {epsilon}")
    x = np.asarray(x, dtype=np.float64)
    grads = backward(net, forward(net, x), label)
    return np.clip(x + epsilon * np.sign(grads.input), 0.0, 1.0)
