"""Datasets: IDX and CIFAR-10 binary readers/writers, synthetic blobs, splits.

Loaders return raw pixels scaled into [0, 1]. Any standardisation happens
later in the training pipeline, after corruption.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConsistencyError, FormatError, InputError, TruncatedFileError
from .perturb import DATA_STREAM, SPLIT_STREAM, stream

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 1 + 3 * 32 * 32


@dataclass
class Dataset:
    inputs: np.ndarray  # (n, d) float64 in [0, 1]
    labels: np.ndarray  # (n,) int64
    num_classes: int
    image_shape: tuple | None = None  # (channels, height, width), channel-major

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2:
            raise InputError(f"inputs must be 2-D (samples x features), got {self.inputs.shape}")
        if len(self.inputs) != len(self.labels):
            raise ConsistencyError(f"{len(self.inputs)} inputs but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise InputError(f"labels must lie in [0, {self.num_classes})")
        if self.inputs.size and (self.inputs.min() < 0.0 or self.inputs.max() > 1.0):
            raise InputError("input values must lie in [0, 1]")
        if self.image_shape is not None:
            self.image_shape = tuple(int(s) for s in self.image_shape)
            if int(np.prod(self.image_shape)) != self.inputs.shape[1]:
                raise ConsistencyError(f"image shape {self.image_shape} does not match {self.inputs.shape[1]} features")

    def __len__(self):
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def subset(self, idx) -> Dataset:
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.inputs[idx], self.labels[idx], self.num_classes, self.image_shape)


def _read_exact(fh, n, path):
    data = fh.read(n)
    if len(data) != n:
        raise TruncatedFileError(f"{path}: unexpected end of file")
    return data


def _read_idx(path, magic, ndim):
    path = Path(path)
    with path.open("rb") as fh:
        (got,) = struct.unpack(">I", _read_exact(fh, 4, path))
        if got != magic:
            raise FormatError(f"{path}: bad IDX magic 0x{got:08x}, expected 0x{magic:08x}")
        dims = struct.unpack(">" + "I" * ndim, _read_exact(fh, 4 * ndim, path))
        count = int(np.prod(dims))
        payload = _read_exact(fh, count, path)
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after IDX payload")
    return dims, np.frombuffer(payload, dtype=np.uint8)


def load_idx(images_path, labels_path, num_classes: int = 10) -> Dataset:
    (n_img, rows, cols), pixels = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    (n_lab,), labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if n_img != n_lab:
        raise ConsistencyError(f"{n_img} images but {n_lab} labels")
    if n_lab and int(labels.max()) >= num_classes:
        raise FormatError(f"{labels_path}: label {int(labels.max())} >= {num_classes}")
    inputs = pixels.reshape(n_img, rows * cols).astype(np.float64) / 255.0
    return Dataset(inputs, labels.astype(np.int64), num_classes, (1, rows, cols))


def _to_bytes(inputs):
    return np.rint(np.asarray(inputs) * 255.0).astype(np.uint8)


def write_idx(dataset: Dataset, images_path, labels_path) -> None:
    """Write ``dataset`` as an IDX pair; pixels are quantised to the 1/255 grid."""
    n = len(dataset)
    if dataset.image_shape is not None and dataset.image_shape[0] == 1:
        rows, cols = dataset.image_shape[1:]
    else:
        rows, cols = 1, dataset.dim
    header = struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols)
    Path(images_path).write_bytes(header + _to_bytes(dataset.inputs).tobytes())
    Path(labels_path).write_bytes(
        struct.pack(">II", IDX_LABELS_MAGIC, n) + dataset.labels.astype(np.uint8).tobytes()
    )


def load_cifar10_bin(path) -> Dataset:
    """One CIFAR-10 binary batch: per record 1 label byte + 3072 channel-major pixels."""
    raw = Path(path).read_bytes()
    if len(raw) % CIFAR_RECORD:
        raise FormatError(f"{path}: size {len(raw)} is not a multiple of {CIFAR_RECORD}")
    records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = records[:, 0].astype(np.int64)
    if labels.size and labels.max() > 9:
        raise FormatError(f"{path}: label {labels.max()} > 9")
    inputs = records[:, 1:].astype(np.float64) / 255.0
    return Dataset(inputs, labels, 10, (3, 32, 32))


def write_cifar10_bin(dataset: Dataset, path) -> None:
    if dataset.dim != CIFAR_RECORD - 1:
        raise InputError(f"CIFAR-10 records need 3072 features, got {dataset.dim}")
    out = np.empty((len(dataset), CIFAR_RECORD), dtype=np.uint8)
    out[:, 0] = dataset.labels
    out[:, 1:] = _to_bytes(dataset.inputs)
    Path(path).write_bytes(out.tobytes())


def _simplex_vertices(C, d, rng):
    if C == 1:
        return np.zeros((1, d))
    if d >= C:
        v = np.eye(C) - 1.0 / C
        q, _ = np.linalg.qr(rng.standard_normal((d, C)))
        verts = v @ q.T
    else:
        verts = rng.standard_normal((C, d))
        verts -= verts.mean(axis=0)
    norms = np.linalg.norm(verts, axis=1, keepdims=True)
    return verts / np.where(norms > 0, norms, 1.0)


def synth_blobs(n: int, C: int, d: int, spread: float, seed: int, radius: float | None = None) -> Dataset:
    """Balanced Gaussian clusters around the vertices of a randomly rotated simplex.

    Centres sit at 0.5 + radius * vertex; by default ``radius`` is the largest
    value keeping every centre coordinate inside [0.1, 0.9]. Samples are
    clipped to [0, 1]. 64-d blobs are tagged as 8x8 single-channel images.
    """
    if n < 1 or C < 1 or d < 1:
        raise InputError(f"n, C and d must be >= 1 (got {n}, {C}, {d})")
    if spread < 0:
        raise InputError(f"spread must be >= 0, got {spread}")
    rng = stream(seed, DATA_STREAM)
    verts = _simplex_vertices(C, d, rng)
    if radius is None:
        peak = np.abs(verts).max()
        radius = 0.4 / peak if peak > 0 else 0.0
    centres = np.clip(0.5 + radius * verts, 0.0, 1.0)
    labels = rng.permutation(np.arange(n) % C)
    inputs = centres[labels] + spread * rng.standard_normal((n, d))
    side = int(round(np.sqrt(d)))
    shape = (1, side, side) if side * side == d else None
    return Dataset(np.clip(inputs, 0.0, 1.0), labels, C, shape)


def split(dataset: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded random split into (train, validation) with validation ~= ``fraction``."""
    if not 0 < fraction < 1:
        raise InputError(f"fraction must be in (0, 1), got {fraction}")
    n = len(dataset)
    n_train = int(np.floor(n * (1.0 - fraction) + 1e-9))
    perm = stream(seed, SPLIT_STREAM).permutation(n)
    return dataset.subset(np.sort(perm[:n_train])), dataset.subset(np.sort(perm[n_train:]))
