"""Training loops: SGD, Dropout, DAMP, DAAP, corruption augmentation, SAM, ASAM.

Every method shares one update rule, SGD with optional (Nesterov) momentum
and weight decay folded into the gradient. The methods differ only in where
the gradient is evaluated:

* DAMP: each of M sub-batches at ``w * xi_m`` with ``xi_m ~ N(1, sigma^2)``
* DAAP: each of M sub-batches at ``w + xi_m`` with ``xi_m ~ N(0, sigma^2)``
* Dropout: at ``w * mask`` with one structured Bernoulli mask per batch
* CorruptionAug: at ``w`` on a batch whose random half is corrupted
* SAM / ASAM: at ``w + xi`` where ``xi`` is the (adaptive) ascent step

Weight decay always uses the unperturbed weights.
"""

from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np

from . import corrupt
from .corrupt import CorruptionSpec
from .data import Dataset
from .errors import DegenerateDirectionError, DimensionError, InputError
from .metrics import predictive_error
from .network import LayeredNet, batch_loss_and_grad, init_net, perturbed_copy
from .perturb import (
    INIT_STREAM,
    NOISE_STREAM,
    SHUFFLE_STREAM,
    PerturbationSpec,
    asam_direction,
    sam_direction,
    sample_awp,
    sample_dropout_mask,
    sample_mwp,
    stream,
)

log = logging.getLogger(__name__)

METHODS = ("SGD", "Dropout", "DAMP", "DAAP", "CorruptionAug", "SAM", "ASAM")
AUG_STREAM = 6
LOG_FIELDS = ("epoch", "step", "lr", "train_loss", "val_error", "grad_evals")
THREADS_ENV = "PERTURB_TRAIN_THREADS"


# ---------------------------------------------------------------- schedules


@dataclass(frozen=True)
class ScheduleSpec:
    """Learning-rate schedule over training progress ``t / T``.

    ``Constant`` uses ``lr``. ``PiecewiseLinear`` interpolates between
    ``knots`` of (fraction, lr) and is flat outside them.
    ``WarmLinearCosine`` ramps linearly from ``init_lr`` to ``lr`` over
    ``warmup`` (a fraction of T), then follows a half cosine down to
    ``final_lr``.
    """

    kind: str = "Constant"
    lr: float = 0.1
    knots: tuple = ()
    init_lr: float = 0.0
    final_lr: float = 0.0
    warmup: float = 0.0

    def __post_init__(self):
        if self.kind not in ("Constant", "PiecewiseLinear", "WarmLinearCosine"):
            raise InputError(f"unknown schedule kind {self.kind!r}")
        rates = [self.lr, self.init_lr, self.final_lr] + [v for _, v in self.knots]
        if min(rates) < 0:
            raise InputError("learning rates must be non-negative")
        if self.kind == "PiecewiseLinear":
            fracs = [f for f, _ in self.knots]
            if not fracs or fracs != sorted(fracs):
                raise InputError("piecewise knots must be non-empty and sorted")
        if not 0 <= self.warmup <= 1:
            raise InputError("warmup fraction must be in [0, 1]")


def hold_anneal_schedule(peak: float = 0.1, floor: float = 0.001) -> ScheduleSpec:
    """Hold ``peak`` for the first half, anneal linearly to ``floor`` by 90%, then hold."""
    return ScheduleSpec("PiecewiseLinear", knots=((0.0, peak), (0.5, peak), (0.9, floor)))


def lr_at(schedule: ScheduleSpec, t: int, T: int) -> float:
    if not 0 <= t < T:
        raise InputError(f"step {t} outside [0, {T})")
    u = t / T
    if schedule.kind == "Constant":
        return schedule.lr
    if schedule.kind == "PiecewiseLinear":
        knots = schedule.knots
        if u <= knots[0][0]:
            return knots[0][1]
        for (f0, v0), (f1, v1) in zip(knots, knots[1:]):
            if u <= f1:
                return v0 if f1 == f0 else v0 + (v1 - v0) * (u - f0) / (f1 - f0)
        return knots[-1][1]
    if u < schedule.warmup:
        return schedule.init_lr + (schedule.lr - schedule.init_lr) * u / schedule.warmup
    span = 1.0 - schedule.warmup
    v = (u - schedule.warmup) / span if span > 0 else 1.0
    return schedule.final_lr + 0.5 * (schedule.lr - schedule.final_lr) * (1.0 + math.cos(math.pi * v))


# ---------------------------------------------------------------- optimizer


def sgd_step(params, grads, velocity, lr, momentum=0.0, nesterov=False, weight_decay=0.0):
    """One SGD update with the decay term folded into the gradient.

    Returns ``(new_params, new_velocity)``; with ``momentum == 0`` this is
    exactly ``w - lr * (g + weight_decay * w)``.
    """
    if len(params) != len(grads):
        raise DimensionError(f"{len(params)} parameters but {len(grads)} gradients")
    if velocity is None:
        velocity = [np.zeros_like(p) for p in params]
    new_params, new_velocity = [], []
    for w, g, v in zip(params, grads, velocity):
        if w.shape != g.shape or w.shape != v.shape:
            raise DimensionError(f"shape mismatch {w.shape} / {g.shape} / {v.shape}")
        d = g + weight_decay * w
        if momentum == 0.0:
            new_params.append(w - lr * d)
            new_velocity.append(d)
            continue
        v = momentum * v + d
        step = d + momentum * v if nesterov else v
        new_params.append(w - lr * step)
        new_velocity.append(v)
    return new_params, new_velocity


@dataclass(frozen=True)
class OptimizerSpec:
    momentum: float = 0.9
    nesterov: bool = True
    weight_decay: float = 5e-4

    def __post_init__(self):
        if self.weight_decay < 0:
            raise InputError("weight decay must be >= 0")
        if not 0 <= self.momentum < 1:
            raise InputError("momentum must be in [0, 1)")


class StepResult(NamedTuple):
    net: LayeredNet
    velocity: list
    loss: float
    grad_evals: int


def _apply_update(net, grads, velocity, lr, opt):
    params, velocity = sgd_step(
        net.params(), grads, velocity, lr, opt.momentum, opt.nesterov, opt.weight_decay
    )
    return net.with_params(params), velocity


def _mean_params(grad_lists):
    # Fixed m-order summation keeps results independent of worker timing.
    total = [g.copy() for g in grad_lists[0]]
    for gl in grad_lists[1:]:
        for acc, g in zip(total, gl):
            acc += g
    return [acc / len(grad_lists) for acc in total]


def sub_batch_gradient(net, inputs, labels, sampler, sub_batches, seed, step, threads=1):
    """Average of sub-batch gradients, each at its own perturbed copy of ``net``.

    ``sampler(net, rng)`` returns a NoiseDraw; sub-batch ``m`` uses the stream
    ``(seed, NOISE_STREAM, step, m)``.
    """
    n = len(labels)
    if sub_batches < 1 or n % sub_batches:
        raise InputError(f"batch of {n} is not divisible into {sub_batches} sub-batches")
    size = n // sub_batches

    def work(m):
        noise = sampler(net, stream(seed, NOISE_STREAM, step, m))
        sl = slice(m * size, (m + 1) * size)
        loss, g = batch_loss_and_grad(perturbed_copy(net, noise), inputs[sl], labels[sl])
        return loss, g.params()

    if threads > 1 and sub_batches > 1:
        with ThreadPoolExecutor(max_workers=min(threads, sub_batches)) as pool:
            results = list(pool.map(work, range(sub_batches)))
    else:
        results = [work(m) for m in range(sub_batches)]
    loss = math.fsum(r[0] for r in results) / sub_batches
    return loss, _mean_params([r[1] for r in results])


def plain_step(net, inputs, labels, velocity, lr, opt) -> StepResult:
    loss, g = batch_loss_and_grad(net, inputs, labels)
    net, velocity = _apply_update(net, g.params(), velocity, lr, opt)
    return StepResult(net, velocity, loss, 1)


def damp_step(net, inputs, labels, sigma, sub_batches, seed, step, velocity, lr, opt, threads=1) -> StepResult:
    loss, g = sub_batch_gradient(
        net, inputs, labels, lambda n, r: sample_mwp(n, sigma, r), sub_batches, seed, step, threads
    )
    net, velocity = _apply_update(net, g, velocity, lr, opt)
    return StepResult(net, velocity, loss, 1)


def daap_step(net, inputs, labels, sigma, sub_batches, seed, step, velocity, lr, opt, threads=1) -> StepResult:
    loss, g = sub_batch_gradient(
        net, inputs, labels, lambda n, r: sample_awp(n, sigma, r), sub_batches, seed, step, threads
    )
    net, velocity = _apply_update(net, g, velocity, lr, opt)
    return StepResult(net, velocity, loss, 1)


def dropout_step(net, inputs, labels, p, seed, step, velocity, lr, opt) -> StepResult:
    loss, g = sub_batch_gradient(net, inputs, labels, lambda n, r: sample_dropout_mask(n, p, r), 1, seed, step)
    net, velocity = _apply_update(net, g, velocity, lr, opt)
    return StepResult(net, velocity, loss, 1)


def corruption_aug_step(
    net, inputs, labels, corruption: CorruptionSpec, seed, step, velocity, lr, opt, image_shape=None, preprocess=None
) -> StepResult:
    """Corrupt a random half of the raw batch, then take one SGD step on the union."""
    n = len(labels)
    if n % 2:
        raise InputError(f"corruption augmentation needs an even batch, got {n}")
    rng = stream(seed, AUG_STREAM, step)
    chosen = rng.permutation(n)[: n // 2]
    batch = inputs.copy()
    batch[chosen] = corrupt.apply(corruption, inputs[chosen], rng, image_shape)
    if preprocess is not None:
        batch = preprocess(batch)
    return plain_step(net, batch, labels, velocity, lr, opt)


def _sharpness_step(net, inputs, labels, direction, velocity, lr, opt) -> StepResult:
    loss, g = batch_loss_and_grad(net, inputs, labels)
    try:
        xi = direction(net, g)
    except DegenerateDirectionError:
        log.warning("degenerate ascent direction; taking a plain SGD step")
        net, velocity = _apply_update(net, g.params(), velocity, lr, opt)
        return StepResult(net, velocity, loss, 1)
    _, g_adv = batch_loss_and_grad(perturbed_copy(net, xi), inputs, labels)
    net, velocity = _apply_update(net, g_adv.params(), velocity, lr, opt)
    return StepResult(net, velocity, loss, 2)


def sam_step(net, inputs, labels, rho, velocity, lr, opt) -> StepResult:
    return _sharpness_step(net, inputs, labels, lambda n, g: sam_direction(g, rho), velocity, lr, opt)


def asam_step(net, inputs, labels, rho, velocity, lr, opt) -> StepResult:
    return _sharpness_step(
        net, inputs, labels, lambda n, g: asam_direction(n.params(), g, rho), velocity, lr, opt
    )


# ---------------------------------------------------------------- run config


@dataclass(frozen=True)
class RunConfig:
    method: str = "SGD"
    perturbation: PerturbationSpec = field(default_factory=PerturbationSpec)
    train_corruption: CorruptionSpec = field(default_factory=CorruptionSpec)
    epochs: int = 10
    batch_size: int = 128
    sub_batches: int = 1
    schedule: ScheduleSpec = field(default_factory=hold_anneal_schedule)
    optimizer: OptimizerSpec = field(default_factory=OptimizerSpec)
    hidden: tuple = (256, 256)
    seed: int = 0
    standardize: bool = True

    def __post_init__(self):
        if self.method not in METHODS:
            raise InputError(f"unknown method {self.method!r}")
        if self.sub_batches < 1:
            raise InputError("sub_batches must be >= 1")
        if self.batch_size < 1 or self.batch_size % self.sub_batches:
            raise InputError(f"batch size {self.batch_size} not divisible by {self.sub_batches} sub-batches")
        if self.epochs < 0:
            raise InputError("epochs must be >= 0")
        if self.method == "CorruptionAug" and self.batch_size % 2:
            raise InputError("corruption augmentation needs an even batch size")
        expected = {
            "DAMP": "MultiplicativeGaussian",
            "DAAP": "AdditiveGaussian",
            "SAM": "SAM",
            "ASAM": "ASAM",
            "Dropout": "BernoulliDropout",
        }.get(self.method)
        if expected and self.perturbation.kind != expected:
            raise InputError(f"{self.method} needs a {expected} perturbation, got {self.perturbation.kind}")


def make_run_config(method: str, sigma=0.2, rho=0.05, p=0.1, **kwargs) -> RunConfig:
    """RunConfig with the perturbation matching ``method``."""
    pert = {
        "DAMP": PerturbationSpec("MultiplicativeGaussian", sigma=sigma),
        "DAAP": PerturbationSpec("AdditiveGaussian", sigma=sigma),
        "SAM": PerturbationSpec("SAM", rho=rho),
        "ASAM": PerturbationSpec("ASAM", rho=rho),
        "Dropout": PerturbationSpec("BernoulliDropout", p=p),
    }.get(method, PerturbationSpec())
    return RunConfig(method=method, perturbation=pert, **kwargs)


def train_step(config: RunConfig, net, inputs, labels, step, velocity, lr, threads=1, image_shape=None, preprocess=None):
    """Dispatch one update for ``config.method``; ``inputs`` are network-ready
    except for CorruptionAug, which receives raw inputs plus ``preprocess``."""
    opt, pert, seed = config.optimizer, config.perturbation, config.seed
    method = config.method
    if method == "SGD":
        return plain_step(net, inputs, labels, velocity, lr, opt)
    if method == "DAMP":
        return damp_step(net, inputs, labels, pert.sigma, config.sub_batches, seed, step, velocity, lr, opt, threads)
    if method == "DAAP":
        return daap_step(net, inputs, labels, pert.sigma, config.sub_batches, seed, step, velocity, lr, opt, threads)
    if method == "Dropout":
        return dropout_step(net, inputs, labels, pert.p, seed, step, velocity, lr, opt)
    if method == "CorruptionAug":
        return corruption_aug_step(
            net, inputs, labels, config.train_corruption, seed, step, velocity, lr, opt, image_shape, preprocess
        )
    if method == "SAM":
        return sam_step(net, inputs, labels, pert.rho, velocity, lr, opt)
    return asam_step(net, inputs, labels, pert.rho, velocity, lr, opt)


# ---------------------------------------------------------------- preprocessing


@dataclass(frozen=True)
class Standardizer:
    """Per-channel (x - mean) / std, with channels taken from the image shape."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, dataset: Dataset) -> Standardizer:
        d = dataset.dim
        channels = dataset.image_shape[0] if dataset.image_shape else 1
        per = dataset.inputs.reshape(len(dataset), channels, d // channels)
        mean = per.mean(axis=(0, 2))
        std = per.std(axis=(0, 2))
        std = np.where(std > 1e-8, std, 1.0)
        return cls(np.repeat(mean, d // channels), np.repeat(std, d // channels))

    @classmethod
    def identity(cls, d: int) -> Standardizer:
        return cls(np.zeros(d), np.ones(d))

    def __call__(self, x):
        return (x - self.mean) / self.std

    def fold(self, net: LayeredNet) -> LayeredNet:
        """Equivalent network that takes raw inputs."""
        first = net.layers[0]
        w = first.weight / self.std
        params = net.params()
        params[0] = w
        if first.bias is not None:
            params[1] = first.bias - w @ self.mean
        elif np.any(self.mean != 0):
            raise InputError("cannot fold a non-zero mean into a bias-free layer")
        return net.with_params(params)


def initial_net(config: RunConfig, input_dim: int, num_classes: int) -> LayeredNet:
    sizes = [input_dim, *config.hidden, num_classes]
    return init_net(sizes, stream(config.seed, INIT_STREAM))


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)
    grad_evals: list = field(default_factory=list)  # per step

    def write_csv(self, path) -> None:
        path = Path(path)
        new = not path.exists()
        with path.open("a", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            if new:
                w.writerow(LOG_FIELDS)
            for row in self.rows:
                w.writerow(
                    (row["epoch"], row["step"], f"{row['lr']:.6g}", f"{row['train_loss']:.6f}",
                     "" if row["val_error"] is None else f"{row['val_error']:.6f}", row["grad_evals"])
                )


def fit(
    config: RunConfig,
    train: Dataset,
    val: Dataset | None = None,
    net: LayeredNet | None = None,
    threads: int | None = None,
    max_steps: int | None = None,
    on_step: Callable | None = None,
) -> tuple[LayeredNet, TrainLog]:
    """Train for ``config.epochs`` epochs; the returned net takes raw inputs.

    Each epoch reshuffles with the stream ``(seed, SHUFFLE_STREAM, epoch)``
    and drops the final incomplete batch. ``on_step(step, net)`` sees the
    network (in raw-input coordinates only when ``standardize`` is off)
    after every update.
    """
    threads = default_threads() if threads is None else threads
    if len(train) < config.batch_size and config.epochs > 0:
        raise InputError(f"training set of {len(train)} is smaller than one batch ({config.batch_size})")
    prep = Standardizer.fit(train) if config.standardize else Standardizer.identity(train.dim)
    if net is None:
        net = initial_net(config, train.dim, train.num_classes)
    steps_per_epoch = len(train) // config.batch_size if config.batch_size else 0
    total = config.epochs * steps_per_epoch
    if max_steps is not None:
        total = min(total, max_steps)
    X = prep(train.inputs) if config.method != "CorruptionAug" else train.inputs
    y = train.labels
    tlog = TrainLog()
    velocity = None
    step = 0
    for epoch in range(config.epochs):
        if step >= total:
            break
        order = stream(config.seed, SHUFFLE_STREAM, epoch).permutation(len(train))
        losses, evals = [], 0
        lr = 0.0
        for b in range(steps_per_epoch):
            if step >= total:
                break
            idx = order[b * config.batch_size : (b + 1) * config.batch_size]
            lr = lr_at(config.schedule, step, total)
            res = train_step(config, net, X[idx], y[idx], step, velocity, lr, threads, train.image_shape, prep)
            net, velocity = res.net, res.velocity
            losses.append(res.loss)
            evals += res.grad_evals
            tlog.grad_evals.append(res.grad_evals)
            step += 1
            if on_step is not None:
                on_step(step, net)
        val_error = predictive_error(prep.fold(net), val) if val is not None and len(val) else None
        tlog.rows.append(
            {"epoch": epoch, "step": step, "lr": lr, "train_loss": float(np.mean(losses)) if losses else float("nan"),
             "val_error": val_error, "grad_evals": evals}
        )
        log.info("epoch %d  loss %.4f  val_error %s", epoch, tlog.rows[-1]["train_loss"], val_error)
    return prep.fold(net), tlog


def with_seed(config: RunConfig, seed: int) -> RunConfig:
    return replace(config, seed=seed)
