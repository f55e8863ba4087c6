"""Training MLPs under random multiplicative weight perturbations (and baselines),
with input-corruption benchmarks and numerical self-checks."""

from .corrupt import CORRUPTIONS, CorruptionSpec
from .data import Dataset, load_cifar10_bin, load_idx, split, synth_blobs
from .network import LayeredNet, backward, forward, init_net
from .train import METHODS, RunConfig, fit, make_run_config

__version__ = "0.1.0"
