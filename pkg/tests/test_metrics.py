import math
import random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from perturbtrain.corrupt import CORRUPTIONS
from perturbtrain.data import Dataset
from perturbtrain.errors import DegenerateBaselineError, FormatError, InputError
from perturbtrain.metrics import (
    MILD,
    SEVERE,
    MetricsRecord,
    aggregate,
    corruption_error,
    mean_error,
    predictive_error,
    read_records,
    severity_group_error,
    write_aggregate,
    write_records,
)
from perturbtrain.network import IDENTITY, Layer, LayeredNet

errors5 = st.lists(st.floats(0.001, 1.0), min_size=5, max_size=5)


def test_predictive_error_counts():
    net = LayeredNet([Layer(np.array([[1.0], [-1.0]]), None, IDENTITY)])
    x = np.array([[0.9]] * 5 + [[0.1]] * 3)  # all predicted class 0
    labels = [0, 0, 0, 0, 0, 1, 1, 1]
    assert predictive_error(net, Dataset(x, labels, 2)) == 0.375


def test_ce_hand_value():
    assert corruption_error([0.1] * 5, [0.2] * 5) == 0.5


def test_ce_degenerate_baseline():
    with pytest.raises(DegenerateBaselineError):
        corruption_error([0.1] * 5, [0.0] * 5)


def test_ce_needs_five_severities():
    with pytest.raises(InputError):
        corruption_error([0.1] * 4, [0.2] * 4)


@given(errors5)
def test_ce_self_baseline_is_exactly_one(e):
    assert corruption_error(e, e) == 1.0


@given(errors5, errors5, st.floats(0.01, 1.0))
def test_ce_homogeneous(f, b, c):
    assert corruption_error([c * v for v in f], [c * v for v in b]) == pytest.approx(
        corruption_error(f, b), rel=1e-12
    )


def test_record_validation():
    with pytest.raises(InputError):
        MetricsRecord("SGD", "GaussianNoise", 0, 0.1, 0)
    with pytest.raises(InputError):
        MetricsRecord("SGD", "GaussianNoise", 1, 1.1, 0)


def _grid(seeds=(0, 1, 2), methods=("SGD", "DAMP"), seed=0):
    rng = random.Random(seed)
    recs = []
    for s in seeds:
        for m in methods:
            recs.append(MetricsRecord(m, "None", 0, round(rng.uniform(0.05, 0.2), 6), s))
            for c in CORRUPTIONS:
                for sev in range(1, 6):
                    recs.append(MetricsRecord(m, c, sev, round(rng.uniform(0.1, 0.9), 6), s))
    return recs


def test_aggregate_matches_scripted_recomputation():
    recs = _grid()
    rows = {(m, c): (mean, std) for m, c, mean, std in aggregate(recs)}
    table = {}
    for r in recs:
        table[(r.method, r.corruption, r.seed, r.severity)] = r.error
    for c in CORRUPTIONS:
        ces = []
        for s in (0, 1, 2):
            num = sum(table[("DAMP", c, s, k)] for k in range(1, 6))
            den = sum(table[("SGD", c, s, k)] for k in range(1, 6))
            ces.append(num / den)
        mean = sum(ces) / 3
        std = math.sqrt(sum((v - mean) ** 2 for v in ces) / 2)
        assert rows[("DAMP", c)][0] == pytest.approx(mean, rel=1e-12)
        assert rows[("DAMP", c)][1] == pytest.approx(std, rel=1e-9)
        assert rows[("SGD", c)] == (1.0, 0.0)
    avg = sum(rows[("DAMP", c)][0] for c in CORRUPTIONS) / len(CORRUPTIONS)
    assert rows[("DAMP", "Avg")][0] == pytest.approx(avg, rel=1e-12)


@given(st.randoms(use_true_random=False))
def test_aggregate_permutation_invariant(r):
    recs = _grid(seeds=(0, 1))
    shuffled = recs[:]
    r.shuffle(shuffled)
    assert aggregate(shuffled) == aggregate(recs)


def test_aggregate_degenerate_cell_is_nan():
    recs = [MetricsRecord(m, "Brightness", s, 0.0 if m == "SGD" else 0.1, 0) for m in ("SGD", "DAMP") for s in range(1, 6)]
    rows = {(m, c): mean for m, c, mean, _ in aggregate(recs)}
    assert math.isnan(rows[("DAMP", "Brightness")])


def test_mean_and_group_errors():
    recs = _grid(seeds=(0,))
    damp = [r for r in recs if r.method == "DAMP"]
    assert mean_error(recs, "DAMP", clean=True) == damp[0].error
    assert mean_error(recs, "DAMP") == pytest.approx(np.mean([r.error for r in damp[1:]]))
    assert severity_group_error(recs, "DAMP", MILD) == pytest.approx(
        np.mean([r.error for r in damp if r.severity in (1, 2, 3)])
    )
    assert SEVERE == (4, 5)


def test_csv_round_trip_and_format(tmp_path):
    recs = _grid(seeds=(0,))
    write_records(recs, tmp_path / "r.csv")
    text = (tmp_path / "r.csv").read_text().splitlines()
    assert text[0] == "method,corruption,severity,seed,error"
    assert all(len(line.rsplit(",", 1)[1].split(".")[1]) == 6 for line in text[1:])
    assert read_records(tmp_path / "r.csv") == recs
    write_aggregate(aggregate(recs), tmp_path / "a.csv")
    lines = (tmp_path / "a.csv").read_text().splitlines()
    assert lines[0] == "method,corruption,mean_CE,std_CE"
    assert any(line.startswith("DAMP,Avg,") for line in lines)


def test_read_records_rejects_bad_header(tmp_path):
    (tmp_path / "r.csv").write_text("a,b\n1,2\n")
    with pytest.raises(FormatError):
        read_records(tmp_path / "r.csv")
