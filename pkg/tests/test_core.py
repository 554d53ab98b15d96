import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from approxcd.core import (
    DegenerateSampleError,
    ParticleSet,
    RngStream,
    effective_sample_size,
    substream,
    weighted_cov,
    weighted_mean,
)


def _ps(thetas, weights):
    thetas = np.asarray(thetas, dtype=float)
    return ParticleSet(thetas, np.zeros((len(thetas), 1)), weights, attempts=len(thetas), tolerance=1.0)


def test_substream_is_deterministic():
    a = substream(42, 0).generator().random(100)
    b = substream(42, 0).generator().random(100)
    assert np.array_equal(a, b)


def test_distinct_indices_differ():
    a = substream(42, 0).generator().random(100)
    b = substream(42, 1).generator().random(100)
    assert not np.array_equal(a, b)


def test_substream_uniform_mean():
    u = substream(42, 5).generator().random(100_000)
    assert abs(u.mean() - 0.5) < 0.005


def test_spawned_paths_are_independent_of_creation_order():
    s = RngStream(7)
    first = s.spawn(3, 1).generator().random(5)
    s.spawn(0).generator().random(1000)
    assert np.array_equal(first, RngStream(7, (3, 1)).generator().random(5))


def test_negative_index_rejected():
    with pytest.raises(ValueError):
        substream(1, -1)


@pytest.mark.parametrize(
    "thetas, weights, expected",
    [([1, 3], [1, 1], 2.0), ([1, 5], [3, 1], 2.0), ([7], [0.2], 7.0)],
)
def test_weighted_mean_examples(thetas, weights, expected):
    assert weighted_mean(_ps(thetas, weights))[0] == pytest.approx(expected)


def test_weighted_mean_zero_weights():
    with pytest.raises(DegenerateSampleError):
        weighted_mean(_ps([1, 2], [0, 0]))


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=20),
    st.floats(1e-3, 1e3),
)
def test_weighted_mean_scale_invariant(values, c):
    w = np.linspace(1, 2, len(values))
    a = weighted_mean(_ps(values, w))
    b = weighted_mean(_ps(values, c * w))
    assert np.allclose(a, b, rtol=1e-9, atol=1e-9)


def test_particle_set_invariants():
    with pytest.raises(ValueError):
        ParticleSet([1.0, 2.0], [[0.0], [0.0]], [1, 1], attempts=1, tolerance=1.0)
    with pytest.raises(ValueError):
        ParticleSet([1.0], [[0.0]], [-1], attempts=1, tolerance=1.0)
    with pytest.raises(ValueError):
        ParticleSet([1.0], [[0.0]], [1], attempts=1, tolerance=0.0)
    ps = _ps([1.0, 2.0, 3.0], [1, 1, 1])
    assert ps.thetas.shape == (3, 1)
    with pytest.raises(ValueError):
        ps.thetas[0, 0] = 5.0


def test_ess_and_cov():
    assert effective_sample_size(np.ones(10)) == pytest.approx(10)
    assert effective_sample_size(np.array([1.0, 0, 0])) == pytest.approx(1)
    x = np.array([[0.0], [2.0]])
    assert weighted_cov(x)[0, 0] == pytest.approx(1.0)
