"""Numerical checks of the weight-perturbation identities and training reductions.

Each check returns a :class:`CheckReport`. ``run_suite`` runs all of them
under one root seed and is what ``perturbtrain verify`` executes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .corrupt import CorruptionSpec, corrupt_dataset
from .data import Dataset, synth_blobs
from .errors import InputError, PreconditionError
from .metrics import corruption_error
from .network import (
    IDENTITY,
    RELU,
    Layer,
    LayeredNet,
    backward,
    batch_loss,
    cross_entropy,
    forward,
    init_net,
    per_sample_losses,
)
from .perturb import asam_direction, sam_direction, sample_mwp, stream
from .tensor import frobenius_inner, frobenius_norm, outer
from .train import RunConfig, ScheduleSpec, fit, make_run_config

VERIFY_STREAM = 7
SHRINK_BAND = (3.2, 4.8)


@dataclass
class CheckReport:
    check: str
    seed: int
    measured: float
    threshold: float
    passed: bool
    hard: bool = True
    details: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "check": self.check,
            "seed": self.seed,
            "measured": _jsonable(self.measured),
            "threshold": self.threshold,
            "pass": bool(self.passed),
        }


def _jsonable(x):
    x = float(x)
    return x if math.isfinite(x) else str(x)


def write_jsonl(reports, path) -> None:
    with Path(path).open("w") as fh:
        for r in reports:
            fh.write(json.dumps(r.to_json(), sort_keys=False) + "\n")


# ------------------------------------------------------------- multiplicative equivalence


def check_mwp_equivalence(w, x, eps, seed: int = 0, tol: float = 1e-9) -> CheckReport:
    """w.(x + eps) against (w * (1 + eps / x)).x."""
    w, x, eps = (np.asarray(a, dtype=np.float64) for a in (w, x, eps))
    if np.any(np.abs(x) < 1e-6):
        raise PreconditionError("the equivalent multiplicative perturbation is undefined where x is ~0")
    xi = 1.0 + eps / x
    lhs = float(np.dot(w, x + eps))
    rhs = float(np.dot(w * xi, x))
    denom = max(abs(lhs), abs(rhs), 1e-300)
    rel = abs(lhs - rhs) / denom if lhs != rhs else 0.0
    return CheckReport("mwp_equivalence", seed, rel, tol, rel <= tol, details={"lhs": lhs, "rhs": rhs})


def mwp_equivalence_suite(n_cases: int = 1000, seed: int = 0, tol: float = 1e-9) -> CheckReport:
    rng = stream(seed, VERIFY_STREAM, 0)
    worst = 0.0
    for _ in range(n_cases):
        d = int(rng.integers(1, 33))
        w = rng.standard_normal(d)
        x = rng.choice([-1.0, 1.0], d) * rng.uniform(0.1, 2.0, d)
        eps = rng.standard_normal(d)
        worst = max(worst, check_mwp_equivalence(w, x, eps, seed, tol).measured)
    return CheckReport("mwp_equivalence", seed, worst, tol, worst <= tol, details={"cases": n_cases})


# ------------------------------------------------------------- gradients


def _rel_err(a, b):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)


def finite_difference(f, x, step=1e-6):
    """Central differences of scalar ``f`` with respect to every entry of ``x``."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f(x)
        flat[i] = orig - step
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * step)
    return grad


def random_net(rng, depth=None, max_width=16, bias=True, input_dim=None, classes=None) -> LayeredNet:
    depth = int(rng.integers(2, 5)) if depth is None else depth
    sizes = [int(input_dim or rng.integers(2, max_width + 1))]
    sizes += [int(rng.integers(2, max_width + 1)) for _ in range(depth - 1)]
    sizes.append(int(classes or rng.integers(2, max_width + 1)))
    return init_net(sizes, rng, bias=bias)


def gradient_errors(net, x, label, backward_fn=backward, step=1e-6) -> float:
    """Largest relative error over all weight, bias and input coordinates."""
    grads = backward_fn(net, forward(net, x), label)
    worst = 0.0
    params = net.params()
    for i, (p, g) in enumerate(zip(params, grads.params())):

        def loss_at(pi, i=i):
            ps = list(params)
            ps[i] = pi
            return cross_entropy(forward(net.with_params(ps), x).logits, label)

        worst = max(worst, float(_rel_err(g, finite_difference(loss_at, p, step)).max()))
    fd_x = finite_difference(lambda xx: cross_entropy(forward(net, xx).logits, label), x, step)
    return max(worst, float(_rel_err(grads.input, fd_x).max()))


def check_gradients(n_cases: int = 10, seed: int = 0, backward_fn=backward, tol: float = 1e-5) -> CheckReport:
    if n_cases < 1:
        raise InputError("need at least one gradient case")
    rng = stream(seed, VERIFY_STREAM, 1)
    worst = 0.0
    for _ in range(n_cases):
        net = random_net(rng)
        # Give biases non-zero values so their gradients are exercised off-init.
        net = net.with_params([p + 0.1 * rng.standard_normal(p.shape) for p in net.params()])
        x = rng.uniform(0.0, 1.0, net.input_dim)
        label = int(rng.integers(net.num_classes))
        worst = max(worst, gradient_errors(net, x, label, backward_fn))
    return CheckReport("gradients", seed, worst, tol, worst <= tol, details={"cases": n_cases})


# ------------------------------------------------------------- first-order shift


def _patterns(trace, net):
    return [z > 0 for z, layer in zip(trace.pre_activations, net.layers) if layer.activation == RELU]


def first_order_residuals(net, x, label, direction, scales, layer: int, linearize: bool = False):
    """Residuals |dl - <grad_z(h+1) l (x) dx(h), W(h+1)>_F| for each scale.

    ``layer`` is h in 0..H-1 (0 shifts the raw input). With ``linearize`` the
    loss is replaced by its tangent at the clean logits.
    """
    base = forward(net, x)
    grads = backward(net, base, label)
    dz_next = grads.pre_activations[layer]
    W_next = net.layers[layer].weight
    l0 = cross_entropy(base.logits, label)
    dlogits = grads.pre_activations[-1]
    residuals = []
    for t in scales:
        shifted = forward(net, x + t * direction)
        dx = shifted.layer_input(layer) - base.layer_input(layer)
        term = frobenius_inner(outer(dz_next, dx), W_next)
        if linearize:
            dl = float(np.dot(dlogits, shifted.logits - base.logits))
        else:
            dl = cross_entropy(shifted.logits, label) - l0
        residuals.append(abs(dl - term))
    return residuals


def crosses_kink(net, x, direction, scales) -> bool:
    base = _patterns(forward(net, x), net)
    for t in scales:
        moved = _patterns(forward(net, x + t * direction), net)
        if any(np.any(a != b) for a, b in zip(base, moved)):
            return True
    return False


def check_first_order_shift(
    net, x, label, direction, scales=(1e-2, 5e-3, 2.5e-3), seed: int = 0, band=SHRINK_BAND
) -> CheckReport:
    """Halving the input shift should shrink the first-order residual ~4x at every layer.

    ``measured`` is the shrink factor furthest from 4, normalised to a
    halving step. Probes crossing a ReLU kink, or whose residual is below
    1e-14, are reported as skipped (``details['skipped']``).
    """
    scales = [float(s) for s in scales]
    if len(scales) < 2 or any(s <= 0 for s in scales) or any(b >= a for a, b in zip(scales, scales[1:])):
        raise InputError("scales must be a strictly decreasing sequence of positive numbers")
    if net.has_bias:
        raise InputError("first-order shift checks use bias-free networks")
    x = np.asarray(x, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    details = {"factors": [], "skipped": None, "residuals": []}
    if crosses_kink(net, x, direction, scales):
        details["skipped"] = "kink"
        return CheckReport("first_order_shift", seed, float("nan"), band[0], True, details=details)
    worst = 4.0
    degenerate = False
    for h in range(net.depth):
        r = first_order_residuals(net, x, label, direction, scales, h)
        details["residuals"].append(r)
        for (t0, r0), (t1, r1) in zip(zip(scales, r), zip(scales[1:], r[1:])):
            if r0 < 1e-14 or r1 < 1e-14:
                degenerate = True
                continue
            order = math.log(r0 / r1) / math.log(t0 / t1)
            factor = 2.0**order
            details["factors"].append(factor)
            if abs(factor - 4.0) > abs(worst - 4.0):
                worst = factor
    if not details["factors"]:
        details["skipped"] = "degenerate"
        return CheckReport("first_order_shift", seed, float("nan"), band[0], True, details=details)
    details["degenerate_pairs"] = degenerate
    ok = all(band[0] <= f <= band[1] for f in details["factors"])
    return CheckReport("first_order_shift", seed, worst, band[0], ok, details=details)


def first_order_suite(n_cases: int = 40, seed: int = 0, min_cases: int = 20) -> CheckReport:
    """Random bias-free ReLU probes; passes when >= ``min_cases`` probes run,
    all their shrink factors sit in the band, and fewer than half are skipped."""
    rng = stream(seed, VERIFY_STREAM, 2)
    used, skipped, worst, ok = 0, 0, 4.0, True
    for _ in range(n_cases):
        net = random_net(rng, depth=3, bias=False)
        x = rng.uniform(0.0, 1.0, net.input_dim)
        d = rng.standard_normal(net.input_dim)
        d /= np.linalg.norm(d)
        rep = check_first_order_shift(net, x, int(rng.integers(net.num_classes)), d, seed=seed)
        if rep.details["skipped"]:
            skipped += 1
            continue
        used += 1
        ok &= rep.passed
        if abs(rep.measured - 4.0) > abs(worst - 4.0):
            worst = rep.measured
    rate = skipped / n_cases
    passed = ok and used >= min_cases and rate < 0.5
    return CheckReport(
        "first_order_shift",
        seed,
        worst,
        SHRINK_BAND[0],
        passed,
        details={"used": used, "skipped": skipped, "skip_rate": rate},
    )


def linear_first_order_suite(n_cases: int = 20, seed: int = 0, tol: float = 1e-14) -> CheckReport:
    """On all-linear networks the first-order term is exact for the tangent loss."""
    rng = stream(seed, VERIFY_STREAM, 3)
    worst = 0.0
    for _ in range(n_cases):
        net = random_net(rng, depth=3, bias=False)
        net = LayeredNet([Layer(l.weight, None, IDENTITY) for l in net.layers])
        x = rng.uniform(0.0, 1.0, net.input_dim)
        d = rng.standard_normal(net.input_dim)
        label = int(rng.integers(net.num_classes))
        for h in range(net.depth):
            worst = max(worst, max(first_order_residuals(net, x, label, d, (1e-2, 5e-3), h, linearize=True)))
    return CheckReport("linear_first_order", seed, worst, tol, worst <= tol)


# ------------------------------------------------------------- constructed multiplier


def constructed_multiplier(net, dataset: Dataset, corrupted: Dataset, threshold: float = 1e-8):
    """Entrywise ratio of sum_k grad_z l (x) dx_k to sum_k grad_z l (x) x_k, per layer, divided by H.

    Entries whose denominator magnitude is below ``threshold`` are set to 0
    and counted in the returned mask.
    """
    clean = forward(net, dataset.inputs)
    shifted = forward(net, corrupted.inputs)
    grads = backward(net, clean, dataset.labels)
    H = net.depth
    xis, masks = [], []
    for h in range(H):
        dz = np.atleast_2d(grads.pre_activations[h])
        f_prev = clean.layer_input(h)
        num = dz.T @ (shifted.layer_input(h) - f_prev)
        den = dz.T @ f_prev
        mask = np.abs(den) < threshold
        xi = np.where(mask, 0.0, num / (H * np.where(mask, 1.0, den)))
        xis.append(xi)
        masks.append(mask)
    return xis, masks


def check_constructed_multiplier(net, dataset: Dataset, g: CorruptionSpec, seed: int = 0) -> CheckReport:
    """Diagnostic: corrupted loss vs loss at w * (1 + xi(g)), plus the implied constant.

    ``measured`` is 2 * max(0, gap) / ||w||_F^2; the check only fails when a
    reported quantity is non-finite.
    """
    if net.has_bias:
        raise InputError("the constructed multiplier is defined for bias-free networks")
    corrupted = corrupt_dataset(g, dataset, seed)
    xis, masks = constructed_multiplier(net, dataset, corrupted)
    loss_g = batch_loss(net, corrupted.inputs, corrupted.labels)
    scaled = net.with_params([w * (1.0 + xi) for w, xi in zip(net.params(), xis)])
    loss_xi = batch_loss(scaled, dataset.inputs, dataset.labels)
    gap = loss_g - loss_xi
    norm_sq = sum(frobenius_norm(w) ** 2 for w in net.params())
    c_hat = 2.0 * max(0.0, gap) / norm_sq
    n_masked = int(sum(m.sum() for m in masks))
    n_total = int(sum(m.size for m in masks))
    details = {
        "gap": gap,
        "loss_corrupted": loss_g,
        "loss_multiplied": loss_xi,
        "weight_norm_sq": norm_sq,
        "masked": n_masked,
        "masked_fraction": n_masked / n_total,
        "xi_stats": [
            {"mean": float(xi.mean()), "std": float(xi.std()), "min": float(xi.min()), "max": float(xi.max())}
            for xi in xis
        ],
    }
    finite = all(math.isfinite(v) for v in (gap, c_hat, loss_g, loss_xi)) and all(
        np.all(np.isfinite(xi)) for xi in xis
    )
    return CheckReport("constructed_multiplier", seed, c_hat, math.inf, finite, hard=False, details=details)


# ------------------------------------------------------------- training reductions


def _comparable(cfg: RunConfig):
    return replace(cfg, method="SGD", perturbation=make_run_config("SGD").perturbation, sub_batches=1)


def check_reduces_to_sgd(
    config: RunConfig, reference: RunConfig, dataset: Dataset, steps: int = 100, tol: float = 1e-12, seed: int = 0
) -> CheckReport:
    """Run both configs for ``steps`` updates and compare weight trajectories.

    ``measured`` is the largest per-coordinate difference seen after any step.
    """
    if _comparable(config) != _comparable(reference):
        raise InputError("configs may differ only in method, perturbation and sub-batch count")
    trajectories = []
    for cfg in (config, reference):
        traj = []
        fit(cfg, dataset, max_steps=steps, on_step=lambda s, n: traj.append(n.params()))
        trajectories.append(traj)
    a, b = trajectories
    if len(a) != len(b) or len(a) < steps:
        raise InputError(f"dataset too small for {steps} steps")
    worst = 0.0
    for pa, pb in zip(a, b):
        for x, y in zip(pa, pb):
            worst = max(worst, float(np.abs(x - y).max()))
    name = f"reduces_to_sgd[{config.method}]"
    return CheckReport(name, seed, worst, tol, worst <= tol, details={"steps": len(a)})


def check_damp_reduces_to_sgd(config: RunConfig, reference: RunConfig, dataset: Dataset, steps=100, seed=0):
    return check_reduces_to_sgd(config, reference, dataset, steps, seed=seed)


def reduction_dataset(seed: int) -> Dataset:
    return synth_blobs(1600, 4, 16, 0.2, seed)


def reduction_configs(seed: int, **overrides):
    base = dict(epochs=5, batch_size=64, hidden=(24, 24), seed=seed)
    base.update(overrides)
    sgd = make_run_config("SGD", **base)
    variants = {
        "DAMP_M1": make_run_config("DAMP", sigma=0.0, **{**base, "sub_batches": 1}),
        "DAMP_M8": make_run_config("DAMP", sigma=0.0, **{**base, "sub_batches": 8}),
        "DAAP": make_run_config("DAAP", sigma=0.0, **{**base, "sub_batches": 8}),
        "SAM": make_run_config("SAM", rho=0.0, **base),
        "ASAM": make_run_config("ASAM", rho=0.0, **base),
    }
    return sgd, variants


# ------------------------------------------------------------- perturbation identities


def perturbation_norm_suite(n_cases: int = 100, seed: int = 0, tol: float = 1e-12) -> CheckReport:
    rng = stream(seed, VERIFY_STREAM, 4)
    worst = 0.0
    for _ in range(n_cases):
        shapes = [tuple(rng.integers(1, 6, size=int(rng.integers(1, 3)))) for _ in range(int(rng.integers(1, 4)))]
        g = [rng.standard_normal(s) for s in shapes]
        w = [rng.standard_normal(s) for s in shapes]
        rho = float(rng.uniform(0.01, 3.0))
        sam = sam_direction(g, rho)
        worst = max(worst, abs(sam.norm() - rho) / rho)
        asam = asam_direction(w, g, rho)
        scaled = [np.where(wi != 0, xi / np.where(wi != 0, np.abs(wi), 1.0), 0.0) for wi, xi in zip(w, asam.tensors)]
        worst = max(worst, abs(math.sqrt(sum(float((s * s).sum()) for s in scaled)) - rho) / rho)
    return CheckReport("perturbation_norms", seed, worst, tol, worst <= tol, details={"cases": n_cases})


def noise_moment_check(sigma: float = 0.2, draws: int = 10**6, seed: int = 0) -> CheckReport:
    """Mean and std of 10^6 multiplicative draws against 1 and sigma."""
    xi = sample_mwp([(draws,)], sigma, stream(seed, VERIFY_STREAM, 5)).tensors[0]
    mean_dev = abs(float(xi.mean()) - 1.0)
    std_dev = abs(float(xi.std()) - sigma)
    ok = mean_dev <= 0.005 * sigma and std_dev <= 0.01 * sigma
    return CheckReport(
        "noise_moments", seed, max(mean_dev, std_dev), 0.01 * sigma, ok,
        details={"mean": float(xi.mean()), "std": float(xi.std())},
    )


def ce_self_check(seed: int = 0) -> CheckReport:
    rng = stream(seed, VERIFY_STREAM, 6)
    worst = 0.0
    for _ in range(100):
        e = list(rng.uniform(0.01, 1.0, 5))
        worst = max(worst, abs(corruption_error(e, e) - 1.0))
    return CheckReport("ce_self_baseline", seed, worst, 0.0, worst == 0.0)


# ------------------------------------------------------------- suite


def multiplier_probe(seed: int, severity: int = 1) -> CheckReport:
    """Diagnostic on a small trained bias-free 2-layer net with Gaussian noise.

    Inputs are all positive and there is no bias, so a hidden row that is
    negative on every sample at init would stay dead and mask its entries;
    such rows are negated before a gentle constant-rate training run.
    """
    ds = synth_blobs(600, 3, 16, 0.15, seed)
    cfg = make_run_config(
        "SGD", epochs=5, batch_size=50, hidden=(32,), seed=seed, standardize=False,
        schedule=ScheduleSpec("Constant", lr=0.01),
    )
    net = init_net([16, 32, 3], stream(seed, VERIFY_STREAM, 8), bias=False)
    w = net.layers[0].weight
    dead = np.all(ds.inputs @ w.T <= 0.0, axis=0)
    net = net.with_params([np.where(dead[:, None], -w, w), net.layers[1].weight])
    net, _ = fit(cfg, ds, net=net)
    return check_constructed_multiplier(net, ds, CorruptionSpec("GaussianNoise", severity), seed)


def run_suite(seed: int = 0, backward_fn=backward) -> list[CheckReport]:
    reports = [
        mwp_equivalence_suite(seed=seed),
        check_gradients(10, seed, backward_fn),
        first_order_suite(seed=seed),
        linear_first_order_suite(seed=seed),
        perturbation_norm_suite(seed=seed),
        noise_moment_check(seed=seed),
        ce_self_check(seed),
    ]
    ds = reduction_dataset(seed)
    sgd, variants = reduction_configs(seed)
    for name, cfg in variants.items():
        rep = check_reduces_to_sgd(cfg, sgd, ds, seed=seed)
        rep.check = f"reduces_to_sgd[{name}]"
        reports.append(rep)
    reports.append(multiplier_probe(seed))
    return reports


def suite_passed(reports) -> bool:
    return all(r.passed for r in reports if r.hard)
