"""Predictive error, corruption error (CE) and result tables."""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateBaselineError, FormatError, InputError
from .network import predict

RECORD_FIELDS = ("method", "corruption", "severity", "seed", "error")
AGGREGATE_FIELDS = ("method", "corruption", "mean_CE", "std_CE")
MILD = (1, 2, 3)
SEVERE = (4, 5)


@dataclass(frozen=True)
class MetricsRecord:
    method: str
    corruption: str
    severity: int
    error: float
    seed: int

    def __post_init__(self):
        if not 0.0 <= self.error <= 1.0:
            raise InputError(f"error {self.error} outside [0, 1]")
        if self.severity not in range(6):
            raise InputError(f"severity {self.severity} outside 0..5")
        if self.severity == 0 and self.corruption != "None":
            raise InputError("severity-0 records must have corruption 'None'")


def predictive_error(net, dataset) -> float:
    """Fraction of argmax-misclassified samples (ties -> lowest class index)."""
    if len(dataset) == 0:
        raise InputError("predictive error of an empty dataset is undefined")
    return float(np.mean(predict(net, dataset.inputs) != dataset.labels))


def corruption_error(errors_f, errors_baseline) -> float:
    """Severity-summed error of a model over that of the baseline."""
    if len(errors_f) != 5 or len(errors_baseline) != 5:
        raise InputError("corruption error needs exactly 5 severities per model")
    denom = math.fsum(errors_baseline)
    if denom <= 0.0:
        raise DegenerateBaselineError("baseline errors sum to zero")
    return math.fsum(errors_f) / denom


def _mean_std(values):
    arr = np.asarray(values, dtype=np.float64)
    std = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
    return float(arr.mean()), std


def ce_by_seed(records, baseline: str = "SGD") -> dict:
    """CE for every (method, corruption, seed), using the baseline of the same seed.

    Cells whose baseline errors sum to zero are reported as NaN.
    """
    errors = defaultdict(dict)
    for r in records:
        if r.severity > 0:
            errors[(r.method, r.corruption, r.seed)][r.severity] = r.error
    out = {}
    for (method, corruption, seed), by_sev in errors.items():
        base = errors.get((baseline, corruption, seed))
        if base is None:
            raise InputError(f"no {baseline} baseline records for {corruption}, seed {seed}")
        sev = range(1, 6)
        try:
            out[(method, corruption, seed)] = corruption_error(
                [by_sev[s] for s in sev], [base[s] for s in sev]
            )
        except KeyError as exc:
            raise InputError(f"missing severity {exc} for {method}/{corruption}/seed {seed}") from None
        except DegenerateBaselineError:
            out[(method, corruption, seed)] = float("nan")
    return out


def aggregate(records, baseline: str = "SGD") -> list[tuple]:
    """Rows ``(method, corruption, mean_CE, std_CE)`` plus one ``Avg`` row per method.

    Methods and corruptions are sorted by name so the table does not depend
    on record order. ``Avg`` is the unweighted mean over corruptions.
    """
    records = list(records)
    if all(r.severity == 0 for r in records):
        return []
    if len({r.method for r in records}) == 1 and baseline not in {r.method for r in records}:
        baseline = records[0].method
    ce = ce_by_seed(records, baseline)
    cells = defaultdict(list)
    for (method, corruption, seed), value in sorted(ce.items()):
        cells[(method, corruption)].append(value)
    per_seed_avg = defaultdict(lambda: defaultdict(list))
    for (method, _, seed), value in ce.items():
        per_seed_avg[method][seed].append(value)
    rows = []
    for method in sorted({m for m, _ in cells}):
        for corruption in sorted({c for m, c in cells if m == method}):
            mean, std = _mean_std(cells[(method, corruption)])
            rows.append((method, corruption, mean, std))
        # Avg spread is taken across seeds of the per-seed corruption average
        avgs = [math.fsum(v) / len(v) for _, v in sorted(per_seed_avg[method].items())]
        rows.append((method, "Avg", *_mean_std(avgs)))
    return rows


def mean_error(records, method: str, seed: int | None = None, clean: bool = False) -> float:
    """Mean error over corrupted cells (or the clean cell) for one method."""
    vals = [
        r.error
        for r in records
        if r.method == method and (seed is None or r.seed == seed) and ((r.severity == 0) == clean)
    ]
    if not vals:
        raise InputError(f"no records for method {method!r}")
    return float(np.mean(vals))


def severity_group_error(records, method: str, group) -> float:
    vals = [r.error for r in records if r.method == method and r.severity in group]
    return float(np.mean(vals))


def _fmt(x: float) -> str:
    return "nan" if math.isnan(x) else f"{x:.6f}"


def write_records(records, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_FIELDS)
        for r in records:
            w.writerow((r.method, r.corruption, r.severity, r.seed, _fmt(r.error)))


def read_records(path) -> list[MetricsRecord]:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RECORD_FIELDS:
            raise FormatError(f"{path}: expected header {','.join(RECORD_FIELDS)}")
        return [
            MetricsRecord(row["method"], row["corruption"], int(row["severity"]), float(row["error"]), int(row["seed"]))
            for row in reader
        ]


def write_aggregate(rows, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(AGGREGATE_FIELDS)
        for method, corruption, mean, std in rows:
            w.writerow((method, corruption, _fmt(mean), _fmt(std)))
