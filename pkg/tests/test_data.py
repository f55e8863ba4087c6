import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import minimize
from scipy.special import log_softmax

from perturbtrain.data import (
    Dataset,
    load_cifar10_bin,
    load_idx,
    split,
    synth_blobs,
    write_cifar10_bin,
    write_idx,
)
from perturbtrain.errors import ConsistencyError, FormatError, InputError, TruncatedFileError


def _idx_pair(tmp_path, pixels, rows, cols, labels, img_magic=0x803, lab_magic=0x801):
    img = tmp_path / "img.idx"
    lab = tmp_path / "lab.idx"
    img.write_bytes(struct.pack(">IIII", img_magic, len(labels), rows, cols) + bytes(pixels))
    lab.write_bytes(struct.pack(">II", lab_magic, len(labels)) + bytes(labels))
    return img, lab


def test_crafted_idx_bytes(tmp_path):
    img, lab = _idx_pair(tmp_path, [0, 128, 255, 64], 2, 2, [3])
    ds = load_idx(img, lab)
    assert ds.inputs.shape == (1, 4)
    assert np.allclose(ds.inputs[0], [0.0, 0.50196078, 1.0, 0.25098039], atol=1e-8)
    assert ds.labels.tolist() == [3]
    assert ds.image_shape == (1, 2, 2)


def test_idx_bad_magic(tmp_path):
    img, lab = _idx_pair(tmp_path, [0, 1, 2, 3], 2, 2, [1], img_magic=0x804)
    with pytest.raises(FormatError):
        load_idx(img, lab)


def test_idx_truncated(tmp_path):
    img, lab = _idx_pair(tmp_path, [0, 1, 2], 2, 2, [1])
    with pytest.raises(TruncatedFileError):
        load_idx(img, lab)


def test_idx_count_mismatch(tmp_path):
    img, lab = _idx_pair(tmp_path, [0] * 8, 2, 2, [1, 2])
    lab.write_bytes(struct.pack(">II", 0x801, 3) + bytes([1, 2, 3]))
    img.write_bytes(struct.pack(">IIII", 0x803, 2, 2, 2) + bytes(8))
    with pytest.raises(ConsistencyError):
        load_idx(img, lab)


def test_crafted_cifar_record(tmp_path):
    path = tmp_path / "batch.bin"
    path.write_bytes(bytes([7]) + bytes([255]) * 3072)
    ds = load_cifar10_bin(path)
    assert len(ds) == 1 and ds.labels.tolist() == [7]
    assert np.array_equal(ds.inputs, np.ones((1, 3072)))
    assert ds.image_shape == (3, 32, 32)


@pytest.mark.parametrize("size", [3072, 3074, 2 * 3073 - 1])
def test_cifar_bad_size(tmp_path, size):
    path = tmp_path / "batch.bin"
    path.write_bytes(bytes(size))
    with pytest.raises(FormatError):
        load_cifar10_bin(path)


def test_cifar_bad_label(tmp_path):
    path = tmp_path / "batch.bin"
    path.write_bytes(bytes([10]) + bytes(3072))
    with pytest.raises(FormatError):
        load_cifar10_bin(path)


@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.integers(1, 5), st.integers(1, 5))
def test_idx_round_trip_on_byte_grid(tmp_path_factory, seed, n, rows, cols):
    rng = np.random.default_rng(seed)
    ds = Dataset(rng.integers(0, 256, (n, rows * cols)) / 255.0, rng.integers(0, 10, n), 10, (1, rows, cols))
    d = tmp_path_factory.mktemp("idx")
    write_idx(ds, d / "i", d / "l")
    back = load_idx(d / "i", d / "l")
    assert np.array_equal(back.inputs, ds.inputs)
    assert np.array_equal(back.labels, ds.labels)
    assert back.image_shape == ds.image_shape


def test_cifar_round_trip(tmp_path, rng):
    ds = Dataset(rng.integers(0, 256, (3, 3072)) / 255.0, [0, 9, 4], 10, (3, 32, 32))
    write_cifar10_bin(ds, tmp_path / "b")
    back = load_cifar10_bin(tmp_path / "b")
    assert np.array_equal(back.inputs, ds.inputs) and np.array_equal(back.labels, ds.labels)


def test_dataset_validation():
    with pytest.raises(InputError):
        Dataset(np.full((1, 2), 1.5), [0], 2)
    with pytest.raises(InputError):
        Dataset(np.zeros((1, 2)), [2], 2)
    with pytest.raises(ConsistencyError):
        Dataset(np.zeros((2, 2)), [0], 2)


def _logistic_error(ds):
    X = np.hstack([ds.inputs, np.ones((len(ds), 1))])
    C, d = ds.num_classes, X.shape[1]

    def loss(w):
        W = w.reshape(C, d)
        lp = log_softmax(X @ W.T, axis=1)
        p = np.exp(lp)
        p[np.arange(len(ds)), ds.labels] -= 1
        return -lp[np.arange(len(ds)), ds.labels].mean(), (p.T @ X / len(ds)).ravel()

    w = minimize(loss, np.zeros(C * d), jac=True, method="L-BFGS-B").x
    return float(np.mean(np.argmax(X @ w.reshape(C, d).T, axis=1) != ds.labels))


def test_tight_blobs_are_linearly_separable():
    assert _logistic_error(synth_blobs(1000, 2, 2, 0.05, seed=0)) <= 0.01


@given(st.integers(0, 1000), st.integers(1, 6), st.integers(1, 20))
def test_blobs_are_valid_and_balanced(seed, C, d):
    ds = synth_blobs(60, C, d, 0.3, seed)
    assert ds.inputs.min() >= 0 and ds.inputs.max() <= 1
    counts = np.bincount(ds.labels, minlength=C)
    assert counts.max() - counts.min() <= 1


def test_blobs_deterministic():
    a, b = synth_blobs(50, 3, 5, 0.1, 7), synth_blobs(50, 3, 5, 0.1, 7)
    assert np.array_equal(a.inputs, b.inputs) and np.array_equal(a.labels, b.labels)


@given(st.integers(2, 300), st.floats(0.05, 0.95), st.integers(0, 100))
def test_split_partitions(n, fraction, seed):
    ds = synth_blobs(n, 2, 3, 0.1, 0)
    tr, va = split(ds, fraction, seed)
    assert len(tr) + len(va) == n
    assert len(tr) == int(np.floor(n * (1 - fraction) + 1e-9))
    rows = {tuple(r) for r in ds.inputs}
    assert {tuple(r) for r in tr.inputs} | {tuple(r) for r in va.inputs} <= rows
