import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from perturbtrain.errors import DegenerateDirectionError, DimensionError, InputError
from perturbtrain.network import Layer, LayeredNet, init_net
from perturbtrain.perturb import (
    PerturbationSpec,
    asam_direction,
    sam_direction,
    sample_awp,
    sample_dropout_mask,
    sample_mwp,
    stream,
)

vec = arrays(np.float64, st.integers(1, 8), elements=st.floats(-5, 5, allow_nan=False))


def test_mwp_moments():
    xi = sample_mwp([(10**6,)], 0.2, stream(0, 99)).tensors[0]
    assert abs(xi.mean() - 1.0) <= 0.001
    assert abs(xi.std() - 0.2) <= 0.002


def test_awp_moments():
    eps = sample_awp([(10**6,)], 0.1, stream(0, 98)).tensors[0]
    assert abs(eps.mean()) <= 0.0005
    assert abs(eps.std() - 0.1) <= 0.001


def test_dropout_drop_fraction():
    net = LayeredNet([Layer(np.ones((1000, 1)), None, "relu"), Layer(np.ones((1, 1000)), None, "identity")])
    dropped = [
        float((sample_dropout_mask(net, 0.5, stream(1, k)).tensors[0][:, 0] == 0).mean()) for k in range(100)
    ]
    assert abs(np.mean(dropped) - 0.5) <= 0.01


def test_dropout_half_keeps_rows_at_two():
    net = init_net([3, 50, 2], np.random.default_rng(0))
    rows = sample_dropout_mask(net, 0.5, stream(0, 4)).tensors[0]
    for row in rows:
        assert np.all(row == 2.0) or np.all(row == 0.0)


def test_dropout_mask_is_structured_and_rescaled(rng):
    net = init_net([5, 7, 3], rng)
    mask = sample_dropout_mask(net, 0.25, rng)
    w1, b1 = mask.tensors[0], mask.tensors[1]
    assert set(np.unique(w1)) <= {0.0, 1 / 0.75}
    assert np.array_equal(w1, np.repeat(b1[:, None], 5, axis=1))


def test_sam_hand_value():
    xi = sam_direction([np.array([3.0, 4.0])], 1.0)
    assert np.allclose(xi.tensors[0], [0.6, 0.8], rtol=0, atol=1e-15)


def test_asam_hand_value():
    # w*g = [3, 8], |w*g| = sqrt(73); w*w*g = [3, 16]
    xi = asam_direction([np.array([1.0, 2.0])], [np.array([3.0, 4.0])], 1.0).tensors[0]
    assert np.allclose(xi, np.array([3.0, 16.0]) / math.sqrt(73), rtol=1e-12)
    assert xi[0] == pytest.approx(0.351123, abs=1e-6)
    assert xi[1] == pytest.approx(1.872658, abs=1e-6)


def test_zero_gradient_is_degenerate():
    with pytest.raises(DegenerateDirectionError):
        sam_direction([np.zeros(3)], 0.1)
    with pytest.raises(DegenerateDirectionError):
        asam_direction([np.zeros(3)], [np.ones(3)], 0.1)


def test_asam_shape_mismatch():
    with pytest.raises(DimensionError):
        asam_direction([np.ones(2)], [np.ones(3)], 1.0)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(kind="MultiplicativeGaussian", sigma=-0.1),
        dict(kind="SAM", rho=-1.0),
        dict(kind="BernoulliDropout", p=1.0),
        dict(kind="Gamma"),
    ],
)
def test_spec_validation(kwargs):
    with pytest.raises(InputError):
        PerturbationSpec(**kwargs)


def test_stream_rejects_negative_keys():
    with pytest.raises(InputError):
        stream(-1)


def test_streams_are_independent_of_call_order():
    a = stream(5, 0, 3, 1).standard_normal(4)
    stream(5, 0, 3, 0).standard_normal(100)
    assert np.array_equal(a, stream(5, 0, 3, 1).standard_normal(4))


@given(vec, st.floats(0.01, 10))
def test_sam_norm_identity(g, rho):
    if not np.any(g):
        return
    assert sam_direction([g], rho).norm() == pytest.approx(rho, rel=1e-12)


@given(st.data(), st.floats(0.01, 10))
def test_asam_transformed_norm_identity(data, rho):
    w = data.draw(vec)
    g = data.draw(arrays(np.float64, w.shape, elements=st.floats(-5, 5, allow_nan=False)))
    if not np.any(w * g) or np.any((w != 0) & (np.abs(w) < 1e-100)) or np.any((g != 0) & (np.abs(g) < 1e-100)):
        return
    xi = asam_direction([w], [g], rho).tensors[0]
    nz = w != 0
    assert np.linalg.norm(xi[nz] / np.abs(w[nz])) == pytest.approx(rho, rel=1e-12)


@given(st.data(), st.floats(0.1, 10))
def test_asam_scale_covariance(data, c):
    w = data.draw(arrays(np.float64, 4, elements=st.floats(0.1, 5)))
    g = data.draw(arrays(np.float64, 4, elements=st.floats(0.1, 5)))
    base = asam_direction([w], [g], 0.5).tensors[0]
    scaled = asam_direction([c * w], [g / c], 0.5).tensors[0]
    assert np.allclose(scaled, c * base, rtol=1e-12)


@given(st.integers(0, 2**32 - 1), st.floats(0, 1))
def test_samplers_are_pure(seed, sigma):
    shapes = [(3, 2), (3,)]
    for sampler in (sample_mwp, sample_awp):
        a = sampler(shapes, sigma, stream(seed, 1))
        b = sampler(shapes, sigma, stream(seed, 1))
        for x, y in zip(a.tensors, b.tensors):
            assert np.array_equal(x, y)


def test_samplers_mirror_net_shapes(rng):
    net = init_net([4, 6, 3], rng)
    for draw in (sample_mwp(net, 0.1, rng), sample_awp(net, 0.1, rng), sample_dropout_mask(net, 0.1, rng)):
        assert [t.shape for t in draw.tensors] == [p.shape for p in net.params()]
