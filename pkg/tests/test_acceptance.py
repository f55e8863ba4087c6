"""Acceptance gate: one test per criterion, each at its stated tolerance.

A PASS/FAIL line per criterion is printed in the ``acceptance criteria``
section at the end of the pytest run.
"""

import struct
import time
from pathlib import Path

import numpy as np
import pytest

from perturbtrain.cli import run_benchmark
from perturbtrain.config import parse_config, parse_config_text
from perturbtrain.corrupt import CORRUPTIONS
from perturbtrain.data import Dataset, load_cifar10_bin, load_idx, synth_blobs, write_cifar10_bin, write_idx
from perturbtrain.errors import FormatError, TruncatedFileError
from perturbtrain.metrics import corruption_error, mean_error, read_records
from perturbtrain.perturb import asam_direction, sam_direction
from perturbtrain.train import fit, make_run_config
from perturbtrain.verify import (
    check_gradients,
    check_reduces_to_sgd,
    first_order_suite,
    mwp_equivalence_suite,
    noise_moment_check,
    perturbation_norm_suite,
    reduction_configs,
    reduction_dataset,
)


def test_criterion_01_mwp_equivalence(criterion):
    start = time.perf_counter()
    rep = mwp_equivalence_suite(1000, seed=0, tol=1e-9)
    elapsed = time.perf_counter() - start
    criterion(1, f"MWP equivalence max rel diff {rep.measured:.2e} (<= 1e-9), {elapsed:.2f} s (< 1 s)")
    assert rep.measured <= 1e-9 and elapsed < 1.0


def test_criterion_02_gradient_oracle(criterion):
    start = time.perf_counter()
    rep = check_gradients(n_cases=10, seed=0, tol=1e-5)
    elapsed = time.perf_counter() - start
    criterion(2, f"backward vs central differences max rel err {rep.measured:.2e} (<= 1e-5), {elapsed:.1f} s")
    assert rep.passed and elapsed < 60


def test_criterion_03_degenerate_reductions(criterion):
    ds = reduction_dataset(0)
    sgd, variants = reduction_configs(0)
    worst = {name: check_reduces_to_sgd(cfg, sgd, ds, steps=100, tol=1e-12).measured for name, cfg in variants.items()}
    criterion(3, "max trajectory diff vs SGD over 100 steps: " + ", ".join(f"{k}={v:.1e}" for k, v in worst.items()))
    assert all(v <= 1e-12 for v in worst.values())


def test_criterion_04_perturbation_norms(criterion):
    rep = perturbation_norm_suite(100, seed=0, tol=1e-12)
    xi = asam_direction([np.array([1.0, 2.0])], [np.array([3.0, 4.0])], 1.0).tensors[0]
    expected = np.array([0.351123, 3.745315])
    example_ok = bool(np.all(np.abs(xi - expected) <= 1e-6))
    criterion(
        4,
        f"norm identities rel err {rep.measured:.1e} (<= 1e-12); worked example gives "
        f"[{xi[0]:.6f}, {xi[1]:.6f}], expected [0.351123, 3.745315] -> {'match' if example_ok else 'MISMATCH'}",
    )
    assert rep.passed
    assert sam_direction([np.array([3.0, 4.0])], 1.0).norm() == pytest.approx(1.0, rel=1e-12)
    assert example_ok


def test_criterion_05_noise_moments(criterion):
    rep = noise_moment_check(sigma=0.2, draws=10**6, seed=0)
    mean, std = rep.details["mean"], rep.details["std"]
    criterion(5, f"10^6 draws: mean {mean:.6f} (1 +- 0.001), std {std:.6f} (0.2 +- 0.002)")
    assert abs(mean - 1.0) <= 0.001 and abs(std - 0.2) <= 0.002


def test_criterion_06_first_order_shift(criterion):
    rep = first_order_suite(n_cases=40, seed=0, min_cases=20)
    d = rep.details
    criterion(
        6,
        f"{d['used']} probes used, {d['skipped']} skipped (skip rate {d['skip_rate']:.0%} < 50%), "
        f"worst shrink factor {rep.measured:.3f} in [3.2, 4.8]",
    )
    assert d["used"] >= 20 and d["skip_rate"] < 0.5 and 3.2 <= rep.measured <= 4.8 and rep.passed


def test_criterion_07_ce_metric(criterion):
    rng = np.random.default_rng(0)
    self_ok = all(corruption_error(e, e) == 1.0 for e in rng.uniform(0.001, 1.0, (1000, 5)).tolist())
    hand = corruption_error([0.1] * 5, [0.2] * 5)
    criterion(7, f"self-baseline CE exactly 1.0 on 1000 cases: {self_ok}; hand case CE = {hand} (0.5)")
    assert self_ok and hand == 0.5


ROBUSTNESS = Path(__file__).resolve().parent.parent / "configs" / "desk_robustness.ini"


@pytest.mark.slow
def test_criterion_08_desk_robustness(criterion, tmp_path):
    cfg = parse_config(ROBUSTNESS)
    assert cfg.corruptions == CORRUPTIONS
    start = time.perf_counter()
    run_benchmark(cfg, tmp_path)
    elapsed = time.perf_counter() - start
    records = read_records(tmp_path / "records.csv")
    wins, clean_gap = 0, []
    for seed in cfg.seeds:
        sgd, damp = mean_error(records, "SGD", seed), mean_error(records, "DAMP", seed)
        wins += damp < sgd
        clean_gap.append(mean_error(records, "DAMP", seed, clean=True) - mean_error(records, "SGD", seed, clean=True))
    degradation = 100 * float(np.mean(clean_gap))
    criterion(
        8,
        f"DAMP below SGD on corrupted mean error in {wins}/5 seeds (>= 4); "
        f"clean degradation {degradation:+.2f} pp (<= 1.0); {elapsed / 60:.1f} min (<= 15)",
    )
    assert wins >= 4 and degradation <= 1.0 and elapsed <= 15 * 60


def test_criterion_09_cost_accounting(criterion):
    ds = synth_blobs(256, 4, 16, 0.2, 0)
    counts = {}
    for method in ("SGD", "DAMP", "DAAP", "Dropout", "CorruptionAug", "SAM", "ASAM"):
        sub = 8 if method in ("DAMP", "DAAP") else 1
        _, log = fit(make_run_config(method, epochs=1, batch_size=64, sub_batches=sub, hidden=(16,)), ds)
        counts[method] = sorted(set(log.grad_evals))
    criterion(9, "gradient evaluations per batch: " + ", ".join(f"{m}={c}" for m, c in counts.items()))
    expected = {m: [2] if m in ("SAM", "ASAM") else [1] for m in counts}
    assert counts == expected


DETERMINISM = """
[experiment]
seeds = 3, 8
methods = SGD, DAMP, SAM
[data]
n = 800
dim = 64
classes = 5
[train]
epochs = 3
batch_size = 64
hidden = 32, 32
"""


def test_criterion_10_determinism(criterion, tmp_path):
    cfg = parse_config_text(DETERMINISM)
    run_benchmark(cfg, tmp_path / "a")
    run_benchmark(cfg, tmp_path / "b", threads=4)
    same = {
        name: (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        for name in ("records.csv", "aggregate.csv")
    }
    criterion(10, "two independent full benchmark runs byte-identical: " + ", ".join(f"{k}={v}" for k, v in same.items()))
    assert all(same.values())


def test_criterion_11_format_conformance(criterion, tmp_path):
    rng = np.random.default_rng(0)
    mnist = Dataset(rng.integers(0, 256, (5, 784)) / 255.0, rng.integers(0, 10, 5), 10, (1, 28, 28))
    write_idx(mnist, tmp_path / "img", tmp_path / "lab")
    back = load_idx(tmp_path / "img", tmp_path / "lab")
    idx_ok = np.array_equal(back.inputs, mnist.inputs) and np.array_equal(back.labels, mnist.labels)
    cifar = Dataset(rng.integers(0, 256, (3, 3072)) / 255.0, [1, 7, 9], 10, (3, 32, 32))
    write_cifar10_bin(cifar, tmp_path / "c.bin")
    cback = load_cifar10_bin(tmp_path / "c.bin")
    cifar_ok = np.array_equal(cback.inputs, cifar.inputs) and np.array_equal(cback.labels, cifar.labels)

    img_bytes = (tmp_path / "img").read_bytes()
    typed = {}
    (tmp_path / "bad_magic").write_bytes(struct.pack(">I", 0x0802) + img_bytes[4:])
    (tmp_path / "trunc").write_bytes(img_bytes[:-10])
    (tmp_path / "c_bad").write_bytes((tmp_path / "c.bin").read_bytes()[:-1])
    for name, call, err in [
        ("bad magic", lambda: load_idx(tmp_path / "bad_magic", tmp_path / "lab"), FormatError),
        ("truncation", lambda: load_idx(tmp_path / "trunc", tmp_path / "lab"), TruncatedFileError),
        ("size % 3073", lambda: load_cifar10_bin(tmp_path / "c_bad"), FormatError),
    ]:
        try:
            call()
            typed[name] = False
        except err:
            typed[name] = True
    criterion(
        11,
        f"IDX round trip {idx_ok}, CIFAR round trip {cifar_ok}; typed errors: "
        + ", ".join(f"{k}={v}" for k, v in typed.items()),
    )
    assert idx_ok and cifar_ok and all(typed.values())
