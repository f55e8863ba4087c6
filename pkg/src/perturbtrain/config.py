"""Experiment configuration files.

The format is line-oriented::

    # comment
    [section]
    key = value

Unknown sections or keys, duplicates, bad values and missing required keys
are all :class:`ConfigError` (with the offending line number when there is
one). Omitted keys take the CIFAR-style defaults: lr 0.1 with a hold/anneal
schedule, Nesterov momentum 0.9, weight decay 5e-4, batch 128, M = 8,
sigma 0.2, SAM rho 0.045, ASAM rho 1.0.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from pathlib import Path

from .corrupt import CORRUPTIONS, CorruptionSpec, parse_corruption
from .errors import ConfigError, InputError
from .train import (
    METHODS,
    OptimizerSpec,
    RunConfig,
    ScheduleSpec,
    hold_anneal_schedule,
    make_run_config,
)


def _bool(text):
    low = text.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _int_list(text):
    return tuple(int(v) for v in text.replace(",", " ").split())


def _str_list(text):
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _severities(text):
    text = text.strip()
    if "-" in text and "," not in text:
        lo, hi = (int(v) for v in text.split("-"))
        return tuple(range(lo, hi + 1))
    return _int_list(text)


def _nonneg(conv):
    def check(text):
        v = conv(text)
        if v < 0:
            raise ValueError(f"must be >= 0, got {v}")
        return v

    return check


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise ValueError(f"must be >= 1, got {v}")
    return v


SCHEMA = {
    "experiment": {
        "seeds": _int_list,
        "methods": _str_list,
        "output": str,
        "threads": _positive_int,
    },
    "data": {
        "kind": str,
        "n": _positive_int,
        "classes": _positive_int,
        "dim": _positive_int,
        "spread": _nonneg(float),
        "data_seed": _nonneg(int),
        "test_fraction": float,
        "train_images": str,
        "train_labels": str,
        "test_images": str,
        "test_labels": str,
        "train_path": str,
        "test_path": str,
    },
    "train": {
        "epochs": _nonneg(int),
        "batch_size": _positive_int,
        "sub_batches": _positive_int,
        "lr": _nonneg(float),
        "final_lr": _nonneg(float),
        "schedule": str,
        "warmup": float,
        "momentum": _nonneg(float),
        "nesterov": _bool,
        "weight_decay": _nonneg(float),
        "hidden": _int_list,
        "standardize": _bool,
    },
    "perturbation": {
        "sigma": _nonneg(float),
        "daap_sigma": _nonneg(float),
        "sam_rho": _nonneg(float),
        "asam_rho": _nonneg(float),
        "dropout_p": _nonneg(float),
        "train_corruption": str,
    },
    "eval": {
        "corruptions": _str_list,
        "severities": _severities,
    },
}
REQUIRED = {("experiment", "seeds")}


@dataclass(frozen=True)
class ExperimentConfig:
    seeds: tuple = (0,)
    methods: tuple = ("SGD", "DAMP")
    output: str = "results"
    threads: int = 1
    data: dict = field(default_factory=lambda: {"kind": "blobs"})
    epochs: int = 10
    batch_size: int = 128
    sub_batches: int = 8
    schedule: ScheduleSpec = field(default_factory=hold_anneal_schedule)
    optimizer: OptimizerSpec = field(default_factory=OptimizerSpec)
    hidden: tuple = (256, 256)
    standardize: bool = True
    sigma: float = 0.2
    daap_sigma: float = 0.2
    sam_rho: float = 0.045
    asam_rho: float = 1.0
    dropout_p: float = 0.05
    train_corruption: CorruptionSpec = field(default_factory=lambda: CorruptionSpec("GaussianNoise", 3))
    corruptions: tuple = CORRUPTIONS
    severities: tuple = (1, 2, 3, 4, 5)

    def run_config(self, method: str, seed: int) -> RunConfig:
        sigma = self.daap_sigma if method == "DAAP" else self.sigma
        rho = self.asam_rho if method == "ASAM" else self.sam_rho
        return make_run_config(
            method,
            sigma=sigma,
            rho=rho,
            p=self.dropout_p,
            train_corruption=self.train_corruption if method == "CorruptionAug" else CorruptionSpec(),
            epochs=self.epochs,
            batch_size=self.batch_size,
            sub_batches=self.sub_batches if method in ("DAMP", "DAAP") else 1,
            schedule=self.schedule,
            optimizer=self.optimizer,
            hidden=tuple(self.hidden),
            seed=seed,
            standardize=self.standardize,
        )

    def fingerprint(self, method: str, seed: int) -> str:
        """Hash of everything that determines one (method, seed) result set."""
        key = repr((self.run_config(method, seed), sorted(self.data.items()), self.corruptions, self.severities))
        return hashlib.sha256(key.encode()).hexdigest()[:16]

    def echo(self) -> str:
        lines = []
        for name in self.__dataclass_fields__:
            lines.append(f"{name} = {getattr(self, name)!r}")
        return "\n".join(lines) + "\n"


def parse_config_text(text: str, source: str = "<config>") -> ExperimentConfig:
    values: dict = {}
    lines_of: dict = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header {raw.strip()!r}", lineno)
            section = line[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError(f"unknown section [{section}]", lineno)
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        if section is None:
            raise ConfigError("key outside of any [section]", lineno)
        key, _, value = (part.strip() for part in line.partition("="))
        if key not in SCHEMA[section]:
            raise ConfigError(f"unknown key {key!r} in [{section}]", lineno)
        if (section, key) in values:
            raise ConfigError(f"duplicate key {key!r} in [{section}]", lineno)
        try:
            values[(section, key)] = SCHEMA[section][key](value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}", lineno) from None
        lines_of[(section, key)] = lineno
    for sec, key in REQUIRED:
        if (sec, key) not in values:
            raise ConfigError(f"{source}: missing required key {key!r} in [{sec}]")
    try:
        return _build(values, lines_of)
    except ConfigError:
        raise
    except InputError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def _build(values, lines_of) -> ExperimentConfig:
    def get(sec, key, default):
        return values.get((sec, key), default)

    def fail(sec, key, msg):
        raise ConfigError(msg, lines_of.get((sec, key)))

    cfg = ExperimentConfig()
    seeds = get("experiment", "seeds", cfg.seeds)
    if not seeds:
        fail("experiment", "seeds", "at least one seed is required")
    if len(set(seeds)) != len(seeds):
        fail("experiment", "seeds", f"seeds must be distinct, got {seeds}")
    if any(s < 0 for s in seeds):
        fail("experiment", "seeds", "seeds must be non-negative")
    methods = get("experiment", "methods", cfg.methods)
    for m in methods:
        if m not in METHODS:
            fail("experiment", "methods", f"unknown method {m!r}; expected one of {', '.join(METHODS)}")
    if len(set(methods)) != len(methods):
        fail("experiment", "methods", "methods must be distinct")

    data = {"kind": "blobs", "n": 2000, "classes": 10, "dim": 64, "spread": 0.25, "data_seed": 100,
            "test_fraction": 0.3}
    for key in SCHEMA["data"]:
        if ("data", key) in values:
            data[key] = values[("data", key)]
    if data["kind"] not in ("blobs", "idx", "cifar10"):
        fail("data", "kind", f"unknown data kind {data['kind']!r}")
    if not 0 < data["test_fraction"] < 1:
        fail("data", "test_fraction", "test_fraction must be in (0, 1)")

    lr = get("train", "lr", 0.1)
    final_lr = get("train", "final_lr", 0.001)
    kind = get("train", "schedule", "piecewise")
    if kind == "piecewise":
        schedule = hold_anneal_schedule(lr, final_lr)
    elif kind == "constant":
        schedule = ScheduleSpec("Constant", lr=lr)
    elif kind == "cosine":
        schedule = ScheduleSpec(
            "WarmLinearCosine", lr=lr, init_lr=final_lr, final_lr=final_lr, warmup=get("train", "warmup", 0.05)
        )
    else:
        fail("train", "schedule", f"unknown schedule {kind!r}; expected piecewise, constant or cosine")
    momentum = get("train", "momentum", 0.9)
    if momentum >= 1:
        fail("train", "momentum", "momentum must be < 1")
    optimizer = OptimizerSpec(momentum, get("train", "nesterov", True), get("train", "weight_decay", 5e-4))

    batch = get("train", "batch_size", cfg.batch_size)
    sub = get("train", "sub_batches", cfg.sub_batches)
    if batch % sub:
        fail("train", "sub_batches", f"batch_size {batch} is not divisible by sub_batches {sub}")
    p = get("perturbation", "dropout_p", cfg.dropout_p)
    if p >= 1:
        fail("perturbation", "dropout_p", "dropout_p must be < 1")
    tc = cfg.train_corruption
    if ("perturbation", "train_corruption") in values:
        try:
            tc = parse_corruption(values[("perturbation", "train_corruption")])
        except InputError as exc:
            fail("perturbation", "train_corruption", str(exc))
    corruptions = get("eval", "corruptions", cfg.corruptions)
    if corruptions == ("all",):
        corruptions = CORRUPTIONS
    for c in corruptions:
        if c not in CORRUPTIONS:
            fail("eval", "corruptions", f"unknown corruption {c!r}")
    severities = get("eval", "severities", cfg.severities)
    if not severities or any(s not in (1, 2, 3, 4, 5) for s in severities):
        fail("eval", "severities", "severities must be drawn from 1..5")

    return replace(
        cfg,
        seeds=seeds,
        methods=methods,
        output=get("experiment", "output", cfg.output),
        threads=get("experiment", "threads", cfg.threads),
        data=data,
        epochs=get("train", "epochs", cfg.epochs),
        batch_size=batch,
        sub_batches=sub,
        schedule=schedule,
        optimizer=optimizer,
        hidden=get("train", "hidden", cfg.hidden),
        standardize=get("train", "standardize", cfg.standardize),
        sigma=get("perturbation", "sigma", cfg.sigma),
        daap_sigma=get("perturbation", "daap_sigma", get("perturbation", "sigma", cfg.daap_sigma)),
        sam_rho=get("perturbation", "sam_rho", cfg.sam_rho),
        asam_rho=get("perturbation", "asam_rho", cfg.asam_rho),
        dropout_p=p,
        train_corruption=tc,
        corruptions=tuple(corruptions),
        severities=tuple(severities),
    )


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    return parse_config_text(path.read_text(), str(path))
