import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from approxcd.adjustment import RegressionFit, adjust, fit_local_linear, regression_adjust
from approxcd.core import ParticleSet, SingularDesignError, weighted_mean, weighted_var


def _ps(thetas, summaries, weights=None):
    thetas = np.asarray(thetas, dtype=float).reshape(len(thetas), -1)
    summaries = np.asarray(summaries, dtype=float).reshape(len(summaries), -1)
    weights = np.ones(len(thetas)) if weights is None else weights
    return ParticleSet(thetas, summaries, weights, attempts=len(thetas) * 2, tolerance=0.1)


def test_three_point_fit():
    fit = fit_local_linear(_ps([1, 2, 3], [-1, 0, 1]), [0.0])
    assert fit.slope[0, 0] == pytest.approx(1.0)
    assert fit.intercept[0] == pytest.approx(2.0)


def test_constant_summaries_are_singular():
    with pytest.raises(SingularDesignError) as info:
        fit_local_linear(_ps([1, 2, 3, 4], [0.5] * 4), [0.5])
    assert info.value.columns == [0]


def test_collinear_summaries_name_column():
    s = np.column_stack([np.arange(6.0), 2 * np.arange(6.0)])
    with pytest.raises(SingularDesignError) as info:
        fit_local_linear(_ps(np.arange(6.0), s), [0.0, 0.0])
    assert info.value.columns == [1]


def test_constant_response_gives_zero_slope():
    fit = fit_local_linear(_ps([4, 4, 4, 4], [-1, 0, 2, 5]), [0.0])
    assert fit.slope[0, 0] == pytest.approx(0.0, abs=1e-12)
    assert fit.intercept[0] == pytest.approx(4.0)


def test_zero_slope_is_identity():
    ps = _ps([1, 5, 2], [0.3, -1, 2])
    out = regression_adjust(ps, RegressionFit(np.zeros(1), np.zeros((1, 1)), np.zeros(1)), [0.0])
    assert np.array_equal(out.thetas, ps.thetas)
    assert out.adjusted


def test_unit_slope_example():
    ps = _ps([1, 2, 3], [-1, 0, 1])
    out = regression_adjust(ps, RegressionFit(np.array([2.0]), np.array([[1.0]]), np.zeros(1)), [0.0])
    assert np.allclose(out.thetas[:, 0], [2, 2, 2])


def test_exact_linear_relation_removes_all_variance():
    s = np.linspace(-1, 1, 20)
    out = adjust(_ps(5 + 2 * s, s + 0.3), [0.3])
    assert np.allclose(out.thetas, 5.0)


def test_ill_conditioned_design_needs_opt_in():
    rng = np.random.default_rng(0)
    base = rng.standard_normal(50)
    s = np.column_stack([base, base + 1e-7 * rng.standard_normal(50)])
    ps = _ps(rng.standard_normal(50), s)
    with pytest.raises(SingularDesignError):
        fit_local_linear(ps, [0.0, 0.0])
    with pytest.warns(RuntimeWarning, match="ridge"):
        fit = fit_local_linear(ps, [0.0, 0.0], ridge_fallback=True)
    assert fit.ridge > 0 and np.all(np.isfinite(fit.slope))


def test_shape_mismatch():
    ps = _ps([1, 2, 3, 4], [0, 1, 3, 2])
    with pytest.raises(ValueError):
        fit_local_linear(ps, [0.0, 1.0])


_weights = arrays(float, 12, elements=st.floats(0.05, 5.0))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), _weights, st.integers(1, 3), st.integers(1, 2))
def test_variance_reduction_and_mean_identity(seed, w, d, p):
    rng = np.random.default_rng(seed)
    s = rng.standard_normal((12, d))
    th = s @ rng.standard_normal((d, p)) + rng.standard_normal((12, p))
    s_obs = rng.standard_normal(d)
    ps = _ps(th, s, w)
    fit = fit_local_linear(ps, s_obs)
    out = regression_adjust(ps, fit, s_obs)
    assert np.all(weighted_var(out.thetas, w) <= weighted_var(th, w) + 1e-9)
    assert np.allclose(weighted_mean(out), fit.intercept, atol=1e-9)


@pytest.mark.slow
def test_adjusted_coverage_matches_finer_tolerance():
    from approxcd.core import RngStream
    from approxcd.inference import interval_from_W, location_maps
    from approxcd.initial import improper_location
    from approxcd.kernels import KernelSpec
    from approxcd.models import GaussianLocationModel
    from approxcd.samplers import SamplerConfig, acc_reject

    n, reps = 100, 200
    model = GaussianLocationModel(n)
    maps = location_maps(model.summary_estimate)
    coarse = SamplerConfig(KernelSpec("gaussian", n ** -0.55), target_accepted=1000)
    fine = SamplerConfig(KernelSpec("gaussian", n ** -0.75), target_accepted=1000)
    hits_adj = hits_fine = 0
    for i in range(reps):
        s_obs = model.summarize(model.simulate([0.0], RngStream(30, (i,)).generator()))
        box = improper_location(s_obs[0] - 1.0, s_obs[0] + 1.0)
        adj = adjust(acc_reject(model, box, s_obs, coarse, RngStream(31, (i,))), s_obs)
        raw = acc_reject(model, box, s_obs, fine, RngStream(32, (i,)))
        hits_adj += interval_from_W(adj, maps, s_obs, 0.05).contains([0.0])
        hits_fine += interval_from_W(raw, maps, s_obs, 0.05).contains([0.0])
    assert abs(hits_adj - hits_fine) / reps <= 0.03
