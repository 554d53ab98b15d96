import math
import warnings

import numpy as np
import pytest

from approxcd.core import RngStream, SupportMismatchError, ToleranceTooSmallError, weighted_mean
from approxcd.initial import default_location_box, improper_location, minibatch_rn, MinibatchConfig, POINT_ESTIMATORS
from approxcd.kernels import KernelSpec
from approxcd.models import CauchyModel, GaussianLocationModel, gaussian_acc_closed_form, median
from approxcd.samplers import (
    ProposalDistribution,
    SamplerConfig,
    abc_importance,
    abc_reject,
    acc_reject,
    flat_prior,
    gaussian_mixture_proposal,
    normal_proposal,
    pmc_refine,
    student_t_proposal,
)


class ConstantModel:
    """Summaries always equal the observed value."""

    dim_theta = 1
    dim_summary = 1

    def simulate_summaries(self, thetas, rng):
        return np.full((len(thetas), 1), 0.5)


def _within_4se(sample, weights, target_mean, target_var):
    w = weights / weights.sum()
    ess = 1.0 / np.sum(w * w)
    mean = float(w @ sample)
    var = float(w @ (sample - mean) ** 2)
    se_mean = math.sqrt(var / ess)
    se_var = var * math.sqrt(2.0 / (ess - 1))
    return abs(mean - target_mean) < 4 * se_mean, abs(var - target_var) < 4 * se_var


def test_degenerate_model_accepts_everything():
    cfg = SamplerConfig(KernelSpec("uniform", 0.1), n_proposals=1000)
    ps = abc_reject(ConstantModel(), normal_proposal(0, 1), [0.5], cfg, RngStream(1))
    assert ps.acceptance_proportion == 1.0
    assert np.all(ps.weights == 1.0)


def test_abc_reject_small_tolerance_matches_posterior_mean():
    n, s_obs = 100, 1.0
    model = GaussianLocationModel(n)
    cfg = SamplerConfig(KernelSpec("gaussian", 0.01), target_accepted=5000, max_attempts=10**7)
    ps = abc_reject(model, normal_proposal(0, 1), [s_obs], cfg, RngStream(2))
    mean, var = gaussian_acc_closed_form(s_obs, n, 0.01, 0.0, 1.0)
    assert mean == pytest.approx(s_obs * n / (n + 1), abs=1e-3)
    ok_mean, ok_var = _within_4se(ps.thetas[:, 0], ps.weights, mean, var)
    assert ok_mean and ok_var
    assert len(ps) == 5000 and ps.attempts >= len(ps)


def test_acc_reject_with_prior_is_bit_identical_to_abc_reject():
    model = CauchyModel(100, summary="median")
    prior = normal_proposal(0, 2)
    cfg = SamplerConfig(KernelSpec("gaussian", 0.05), target_accepted=300)
    a = abc_reject(model, prior, [0.1], cfg, RngStream(3, (4,)))
    b = acc_reject(model, prior, [0.1], cfg, RngStream(3, (4,)))
    assert np.array_equal(a.thetas, b.thetas)
    assert np.array_equal(a.summaries, b.summaries)
    assert a.attempts == b.attempts


def test_acc_reject_gaussian_closed_form():
    model = GaussianLocationModel(100)
    cfg = SamplerConfig(KernelSpec("gaussian", 0.1), target_accepted=8000)
    # b_n is a precision: r_n = N(mu_n, 1 / b_n^2)
    ps = acc_reject(model, normal_proposal(0, 0.5), [1.0], cfg, RngStream(5))
    mean, var = gaussian_acc_closed_form(1.0, 100, 0.1, 0.0, 2.0)
    assert mean == pytest.approx(1 / 1.08)
    assert var == pytest.approx(0.02 / 1.08)
    ok_mean, ok_var = _within_4se(ps.thetas[:, 0], ps.weights, mean, var)
    assert ok_mean and ok_var


def test_importance_weights_are_one_when_proposal_is_prior():
    prior = normal_proposal(0.3, 1.5)
    cfg = SamplerConfig(KernelSpec("gaussian", 0.1), target_accepted=500)
    ps = abc_importance(GaussianLocationModel(50), prior, prior, [0.2], cfg, RngStream(6))
    assert np.allclose(ps.weights, 1.0)
    assert ps.info["ess"] == pytest.approx(len(ps))


def test_importance_sampling_matches_reject_posterior():
    n, s_obs = 100, 1.0
    model = GaussianLocationModel(n)
    cfg = SamplerConfig(KernelSpec("gaussian", 0.05), target_accepted=8000)
    ps = abc_importance(model, normal_proposal(0, 1), student_t_proposal(1.0, 0.3), [s_obs], cfg, RngStream(7))
    mean, var = gaussian_acc_closed_form(s_obs, n, 0.05, 0.0, 1.0)
    ok_mean, _ = _within_4se(ps.thetas[:, 0], ps.weights, mean, var)
    assert ok_mean


def test_support_mismatch():
    nowhere = ProposalDistribution(lambda rng, size: np.zeros((size, 1)),
                                   lambda th: np.full(len(th), -np.inf), 1, "nowhere")
    cfg = SamplerConfig(KernelSpec("gaussian", 1.0), target_accepted=10)
    with pytest.raises(SupportMismatchError):
        abc_importance(GaussianLocationModel(10), nowhere, normal_proposal(0, 1), [0.0], cfg, RngStream(8))


def test_tolerance_too_small_reports_attempts():
    cfg = SamplerConfig(KernelSpec("uniform", 1e-9), target_accepted=5, max_attempts=2000)
    with pytest.raises(ToleranceTooSmallError) as info:
        abc_reject(GaussianLocationModel(10), normal_proposal(0, 1), [3.0], cfg, RngStream(9))
    assert info.value.attempts == 2000


def test_fixed_acceptance_mode_keeps_closest_fraction():
    cfg = SamplerConfig(n_proposals=10_000, acceptance=0.05)
    model = GaussianLocationModel(100)
    ps = acc_reject(model, normal_proposal(0, 1), [0.2], cfg, RngStream(10))
    assert len(ps) == 500 and ps.attempts == 10_000
    assert np.all(np.abs(ps.summaries[:, 0] - 0.2) <= ps.tolerance)
    assert ps.acceptance_proportion == pytest.approx(0.05)


def test_same_stream_same_output():
    cfg = SamplerConfig(KernelSpec("gaussian", 0.1), target_accepted=200)
    model = CauchyModel(50, summary="median")
    a = abc_reject(model, normal_proposal(0, 1), [0.0], cfg, RngStream(11))
    b = abc_reject(model, normal_proposal(0, 1), [0.0], cfg, RngStream(11))
    c = abc_reject(model, normal_proposal(0, 1), [0.0], cfg, RngStream(12))
    assert np.array_equal(a.thetas, b.thetas)
    assert not np.array_equal(a.thetas[:10], c.thetas[:10])


def test_config_requires_one_stopping_rule():
    with pytest.raises(ValueError):
        SamplerConfig()
    with pytest.raises(ValueError):
        SamplerConfig(n_proposals=10, target_accepted=5)
    with pytest.raises(ValueError):
        SamplerConfig(target_accepted=5, acceptance=0.1)
    with pytest.raises(ValueError):
        SamplerConfig(n_proposals=10, acceptance=1.0)


def test_proposal_draws_lie_in_support():
    mix = gaussian_mixture_proposal(np.array([[0.0], [3.0]]), np.array([0.5, 0.5]), np.array([[0.1]]))
    rng = np.random.default_rng(0)
    for prop in (normal_proposal(0, 1), student_t_proposal(0, 1), mix, improper_location(-1, 1)):
        th = prop.draw(rng, 500)
        assert np.all(np.isfinite(prop.logpdf(th)))
    with pytest.raises(Exception):
        flat_prior(1).draw(rng, 3)


def test_pmc_single_iteration_is_importance_sampling():
    model = GaussianLocationModel(100)
    init = normal_proposal(0.5, 1.0)
    res = pmc_refine(model, init, [1.0], 400, 1, RngStream(13), epsilon_schedule=[0.1])
    cfg = SamplerConfig(KernelSpec("gaussian", 0.1), target_accepted=400)
    ref = abc_importance(model, flat_prior(1), init, [1.0], cfg, RngStream(13).spawn(0))
    assert np.array_equal(res.particles.thetas, ref.thetas)
    assert np.array_equal(res.particles.weights, ref.weights)


def test_pmc_gaussian_final_mean():
    model = GaussianLocationModel(100)
    res = pmc_refine(model, normal_proposal(0, 2), [1.0], 3000, 4, RngStream(14),
                     epsilon_schedule=[0.5, 0.2, 0.1, 0.05])
    mean, var = gaussian_acc_closed_form(1.0, 100, 0.05, 0.0, 0.0)
    ok_mean, _ = _within_4se(res.particles.thetas[:, 0], res.particles.weights, mean, var)
    assert ok_mean
    assert [h["iteration"] for h in res.history] == [0, 1, 2, 3]


def test_pmc_rejects_increasing_schedule():
    with pytest.raises(ValueError):
        pmc_refine(GaussianLocationModel(10), normal_proposal(0, 1), [0.0], 10, 2, RngStream(0),
                   epsilon_schedule=[0.1, 0.2])


def test_pmc_degenerate_covariance_falls_back():
    init = normal_proposal(0.5, 1.0)
    with pytest.warns(RuntimeWarning, match="falling back|degenerate"):
        res = pmc_refine(ConstantModel(), ProposalDistribution(
            lambda rng, size: np.full((size, 1), 0.5), lambda th: np.zeros(len(th)), 1, "point"),
            [0.5], 50, 2, RngStream(15), epsilon_schedule=[0.2, 0.1])
    assert res.proposal.name == "point"
    del init


def test_abc_bias_shrinks_with_tolerance():
    # tempered mean moves toward the s-likelihood mean as epsilon shrinks
    means = []
    for eps in (0.5, 0.05):
        cfg = SamplerConfig(KernelSpec("gaussian", eps), target_accepted=4000)
        ps = abc_reject(GaussianLocationModel(100), normal_proposal(0, 0.5), [1.0], cfg, RngStream(16))
        means.append(float(weighted_mean(ps)[0]))
    exact = gaussian_acc_closed_form(1.0, 100, 0.0, 0.0, 0.5)[0]
    assert abs(means[1] - exact) < abs(means[0] - exact)


@pytest.mark.xfail(strict=True, reason="r-ABC acceptance depends on an unstated prior box; see decisions ledger")
def test_cauchy_rabc_acceptance_rate_near_published():
    model = CauchyModel(400, summary="median", scale=0.55)
    x = model.simulate([10.0], RngStream(17).generator())
    lo, hi = default_location_box(x)
    cfg = SamplerConfig(KernelSpec("uniform", 0.001), n_proposals=100_000)
    ps = abc_reject(model, improper_location(lo, hi), model.summarize(x), cfg, RngStream(18))
    assert 0.004 <= ps.acceptance_proportion <= 0.012


@pytest.mark.xfail(strict=True, reason="published rate needs a wider tolerance than 0.001; see decisions ledger")
def test_cauchy_racc_acceptance_rate_near_published():
    model = CauchyModel(400, summary="median", scale=0.55)
    x = model.simulate([10.0], RngStream(17).generator())
    rn = minibatch_rn(x, MinibatchConfig(POINT_ESTIMATORS["median"]), RngStream(19))
    cfg = SamplerConfig(KernelSpec("uniform", 0.001), n_proposals=100_000)
    ps = acc_reject(model, rn.as_proposal(), model.summarize(x), cfg, RngStream(20))
    assert 0.0395 <= ps.acceptance_proportion <= 0.1185
