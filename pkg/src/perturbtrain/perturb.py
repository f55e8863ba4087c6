"""Weight-noise samplers and sharpness-aware perturbation directions.

All samplers are pure functions of (shapes, parameters, generator). Use
:func:`stream` to derive an independent Philox generator for each
(root seed, step, sub-batch) tuple so parallel sub-batches draw the same
noise regardless of scheduling order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDirectionError, DimensionError, InputError
from .tensor import global_norm

MULTIPLICATIVE = "multiplicative"
ADDITIVE = "additive"

KINDS = ("MultiplicativeGaussian", "AdditiveGaussian", "SAM", "ASAM", "BernoulliDropout", "None")


@dataclass(frozen=True)
class PerturbationSpec:
    kind: str = "None"
    sigma: float = 0.0
    rho: float = 0.0
    p: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InputError(f"unknown perturbation kind {self.kind!r}")
        if self.kind in ("MultiplicativeGaussian", "AdditiveGaussian") and not self.sigma >= 0:
            raise InputError(f"sigma must be >= 0, got {self.sigma}")
        if self.kind in ("SAM", "ASAM") and not self.rho >= 0:
            raise InputError(f"rho must be >= 0, got {self.rho}")
        if self.kind == "BernoulliDropout" and not 0 <= self.p < 1:
            raise InputError(f"drop probability must be in [0, 1), got {self.p}")


@dataclass(frozen=True)
class NoiseDraw:
    """Per-parameter noise tensors in :meth:`LayeredNet.params` order."""

    tensors: tuple
    mode: str

    def norm(self) -> float:
        return global_norm(self.tensors)


# Stream tags keep the different consumers of randomness apart.
NOISE_STREAM = 0
SHUFFLE_STREAM = 1
CORRUPT_STREAM = 2
INIT_STREAM = 3
SPLIT_STREAM = 4
DATA_STREAM = 5


def stream(root_seed: int, *keys: int) -> np.random.Generator:
    """Counter-based generator keyed by ``(root_seed, *keys)``."""
    entropy = [int(root_seed)] + [int(k) for k in keys]
    if any(e < 0 for e in entropy):
        raise InputError("seeds and stream keys must be non-negative")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def param_shapes(net_or_shapes) -> list[tuple]:
    if hasattr(net_or_shapes, "params"):
        return [p.shape for p in net_or_shapes.params()]
    return [tuple(s) for s in net_or_shapes]


def sample_mwp(shapes, sigma: float, rng: np.random.Generator) -> NoiseDraw:
    """i.i.d. N(1, sigma^2) multiplicative noise."""
    if not sigma >= 0:
        raise InputError(f"sigma must be >= 0, got {sigma}")
    tensors = tuple(1.0 + sigma * rng.standard_normal(s) for s in param_shapes(shapes))
    return NoiseDraw(tensors, MULTIPLICATIVE)


def sample_awp(shapes, sigma: float, rng: np.random.Generator) -> NoiseDraw:
    """i.i.d. N(0, sigma^2) additive noise."""
    if not sigma >= 0:
        raise InputError(f"sigma must be >= 0, got {sigma}")
    tensors = tuple(sigma * rng.standard_normal(s) for s in param_shapes(shapes))
    return NoiseDraw(tensors, ADDITIVE)


def sample_dropout_mask(net, p: float, rng: np.random.Generator) -> NoiseDraw:
    """Structured inverted-dropout mask: one keep/drop draw per output unit.

    A kept unit has its whole incoming weight row (and its bias) scaled by
    1/(1-p); a dropped unit has them zeroed.
    """
    if not 0 <= p < 1:
        raise InputError(f"drop probability must be in [0, 1), got {p}")
    tensors = []
    for layer in net.layers:
        keep = (rng.random(layer.fan_out) >= p).astype(np.float64) / (1.0 - p)
        tensors.append(np.repeat(keep[:, None], layer.fan_in, axis=1))
        if layer.bias is not None:
            tensors.append(keep.copy())
    return NoiseDraw(tuple(tensors), MULTIPLICATIVE)


def _as_list(grads):
    return list(grads.params()) if hasattr(grads, "params") else [np.asarray(g, dtype=np.float64) for g in grads]


def sam_direction(grads, rho: float) -> NoiseDraw:
    """rho * g / ||g||_2 with the norm taken jointly over all parameters."""
    if not rho >= 0:
        raise InputError(f"rho must be >= 0, got {rho}")
    g = _as_list(grads)
    norm = global_norm(g)
    if norm == 0.0:
        raise DegenerateDirectionError("gradient is identically zero")
    return NoiseDraw(tuple(rho * gi / norm for gi in g), ADDITIVE)


def asam_direction(weights, grads, rho: float) -> NoiseDraw:
    """rho * (w*w*g) / ||w*g||_2, the first-order adversarial multiplicative step."""
    if not rho >= 0:
        raise InputError(f"rho must be >= 0, got {rho}")
    w = _as_list(weights)
    g = _as_list(grads)
    if len(w) != len(g):
        raise DimensionError(f"{len(w)} weight tensors but {len(g)} gradient tensors")
    for wi, gi in zip(w, g):
        if wi.shape != gi.shape:
            raise DimensionError(f"weight shape {wi.shape} != gradient shape {gi.shape}")
    wg = [wi * gi for wi, gi in zip(w, g)]
    norm = global_norm(wg)
    if norm == 0.0:
        raise DegenerateDirectionError("w * g is identically zero")
    return NoiseDraw(tuple(rho * wi * wgi / norm for wi, wgi in zip(w, wg)), ADDITIVE)
