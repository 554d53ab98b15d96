"""Accept-reject, importance-sampling and population Monte Carlo samplers.

All samplers share one proposal loop. Proposals are generated in fixed-size
blocks and block ``b`` of a run draws everything (parameters, simulated
summaries, acceptance uniforms) from ``rng.spawn(b)``. The accepted set is
therefore a deterministic function of the seed and block size alone, and a
run with ``r_n`` equal to the prior reproduces the ABC run bit for bit.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from .core import (
    DegenerateSampleError,
    ParticleSet,
    RngStream,
    SupportMismatchError,
    ToleranceTooSmallError,
    as_stream,
    weighted_cov,
)
from .kernels import KernelSpec, accept_probability, mad_scale

DEFAULT_BLOCK = 4096


@dataclass(frozen=True)
class ProposalDistribution:
    """A sampler paired with a (possibly unnormalized) log-density."""

    sample: Callable[[np.random.Generator, int], np.ndarray]
    log_density: Callable[[np.ndarray], np.ndarray]
    dim: int
    name: str = "proposal"

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        out = np.asarray(self.sample(rng, size), dtype=float)
        return out.reshape(size, self.dim)

    def logpdf(self, thetas: np.ndarray) -> np.ndarray:
        thetas = np.asarray(thetas, dtype=float).reshape(-1, self.dim)
        return np.asarray(self.log_density(thetas), dtype=float).reshape(-1)


def _no_sampler(rng, size):
    raise TypeError("this distribution is improper and cannot be sampled")


def flat_prior(dim: int) -> ProposalDistribution:
    """Improper flat density (log-density 0 everywhere); not sampleable."""
    return ProposalDistribution(_no_sampler, lambda th: np.zeros(len(th)), dim, "flat")


def normal_proposal(mean, sd) -> ProposalDistribution:
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    sd = np.broadcast_to(np.atleast_1d(np.asarray(sd, dtype=float)), mean.shape).copy()
    p = len(mean)

    def sample(rng, size):
        return mean + sd * rng.standard_normal((size, p))

    def logpdf(th):
        z = (th - mean) / sd
        return -0.5 * np.sum(z * z, axis=1) - np.sum(np.log(sd)) - 0.5 * p * np.log(2 * np.pi)

    return ProposalDistribution(sample, logpdf, p, "normal")


def student_t_proposal(loc: float, scale: float, df: float = 4.0) -> ProposalDistribution:
    from scipy import stats

    dist = stats.t(df=df, loc=loc, scale=scale)

    def sample(rng, size):
        return loc + scale * rng.standard_t(df, size=(size, 1))

    return ProposalDistribution(sample, lambda th: dist.logpdf(th[:, 0]), 1, f"t{df:g}")


def gaussian_mixture_proposal(centers: np.ndarray, weights: np.ndarray, cov: np.ndarray) -> ProposalDistribution:
    """Equal-covariance Gaussian mixture, the population Monte Carlo move."""
    centers = np.asarray(centers, dtype=float)
    p = centers.shape[1]
    w = np.asarray(weights, dtype=float)
    w = w / w.sum()
    chol = np.linalg.cholesky(np.atleast_2d(cov))
    log_w = np.log(np.where(w > 0, w, 1e-300))
    log_norm = -np.sum(np.log(np.diag(chol))) - 0.5 * p * np.log(2 * np.pi)

    def sample(rng, size):
        idx = rng.choice(len(centers), size=size, p=w)
        return centers[idx] + rng.standard_normal((size, p)) @ chol.T

    # whiten once so densities need only differences, not triangular solves
    chol_inv = np.linalg.inv(chol)
    white_centers = centers @ chol_inv.T

    def logpdf(th):
        out = np.empty(len(th))
        white = np.asarray(th, dtype=float) @ chol_inv.T
        for start in range(0, len(th), 512):
            z = white[start:start + 512, None, :] - white_centers[None, :, :]
            q = -0.5 * np.sum(z * z, axis=2)
            out[start:start + 512] = logsumexp(q + log_w[None, :], axis=1) + log_norm
        return out

    return ProposalDistribution(sample, logpdf, p, "pmc-mixture")


@dataclass(frozen=True)
class SamplerConfig:
    """Stopping rule, kernel and tolerance policy for one sampler run.

    Exactly one of ``n_proposals`` (fixed budget N) or ``target_accepted``
    (stop after m acceptances, capped by ``max_attempts``) is set. When
    ``acceptance`` is given the tolerance is chosen after the fact as the
    distance quantile that keeps ``ceil(acceptance * N)`` particles (uniform
    kernel); this mode requires ``n_proposals``.

    ``standardize=None`` rescales summaries by a pilot MAD when d > 1.
    """

    kernel: KernelSpec = field(default_factory=KernelSpec)
    n_proposals: int | None = None
    target_accepted: int | None = None
    max_attempts: int | None = None
    acceptance: float | None = None
    block_size: int = DEFAULT_BLOCK
    standardize: bool | None = None

    def __post_init__(self):
        if (self.n_proposals is None) == (self.target_accepted is None):
            raise ValueError("set exactly one of n_proposals and target_accepted")
        if self.n_proposals is not None and self.n_proposals <= 0:
            raise ValueError("n_proposals must be > 0")
        if self.target_accepted is not None and self.target_accepted <= 0:
            raise ValueError("target_accepted must be > 0")
        if self.acceptance is not None:
            if not 0 < self.acceptance < 1:
                raise ValueError("acceptance proportion must lie in (0, 1)")
            if self.n_proposals is None:
                raise ValueError("fixed acceptance proportion needs n_proposals")
        if self.block_size <= 0:
            raise ValueError("block_size must be > 0")

    @property
    def mode(self) -> str:
        return "fixed_epsilon" if self.acceptance is None else "fixed_acceptance_proportion"

    @property
    def attempt_cap(self) -> int:
        if self.n_proposals is not None:
            return self.n_proposals
        return self.max_attempts if self.max_attempts is not None else 100 * self.target_accepted


def _block(model, proposal, stream: RngStream, b: int, size: int):
    gen = stream.spawn(b).generator()
    th = proposal.draw(gen, size)
    s = np.asarray(model.simulate_summaries(th, gen), dtype=float).reshape(size, -1)
    u = gen.random(size)
    return th, s, u


def _distances(kernel: KernelSpec, s: np.ndarray, s_obs: np.ndarray) -> np.ndarray:
    ok = np.all(np.isfinite(s), axis=1)
    d = np.full(len(s), np.inf)
    if ok.any():
        d[ok] = kernel.norm(s[ok] - s_obs)
    return d


def _resolve_scale(cfg: SamplerConfig, kernel: KernelSpec, pilot: np.ndarray) -> KernelSpec:
    d = pilot.shape[1]
    standardize = cfg.standardize if cfg.standardize is not None else d > 1
    if standardize and kernel.scale is None:
        return kernel.with_scale(mad_scale(pilot))
    return kernel


def _run(model, proposal: ProposalDistribution, s_obs, cfg: SamplerConfig, rng,
         log_weight: Callable[[np.ndarray], np.ndarray] | None = None) -> ParticleSet:
    stream = as_stream(rng)
    s_obs = np.asarray(s_obs, dtype=float).reshape(-1)
    if not np.all(np.isfinite(s_obs)):
        raise ValueError("observed summary must be finite")
    if proposal.dim != model.dim_theta:
        raise ValueError(f"proposal dimension {proposal.dim} != model dimension {model.dim_theta}")
    if model.dim_summary != len(s_obs):
        raise ValueError(f"observed summary has length {len(s_obs)}, model produces {model.dim_summary}")

    kernel = cfg.kernel
    cap = cfg.attempt_cap
    thetas, sums, attempts = [], [], 0
    accepted_count = 0
    min_dist = np.inf
    b = 0

    if cfg.mode == "fixed_acceptance_proportion":
        dists = []
        while attempts < cap:
            size = min(cfg.block_size, cap - attempts)
            th, s, _ = _block(model, proposal, stream, b, size)
            thetas.append(th)
            sums.append(s)
            attempts += size
            b += 1
        th = np.concatenate(thetas)
        s = np.concatenate(sums)
        finite = s[np.all(np.isfinite(s), axis=1)]
        if len(finite):
            kernel = _resolve_scale(cfg, kernel, finite)
        d = _distances(kernel, s, s_obs)
        k = math.ceil(cfg.acceptance * attempts - 1e-9)
        order = np.argsort(d, kind="stable")[:k]
        if not np.isfinite(d[order[-1]]):
            raise ToleranceTooSmallError(attempts, np.inf, float(np.min(d)))
        eps = float(d[order[-1]])
        idx = np.sort(order)
        th_acc, s_acc = th[idx], s[idx]
        tolerance = eps if eps > 0 else np.finfo(float).tiny
    else:
        acc_th, acc_s = [], []
        while attempts < cap and (cfg.target_accepted is None or accepted_count < cfg.target_accepted):
            size = min(cfg.block_size, cap - attempts)
            th, s, u = _block(model, proposal, stream, b, size)
            if b == 0:
                pilot = s[np.all(np.isfinite(s), axis=1)]
                if len(pilot):
                    kernel = _resolve_scale(cfg, kernel, pilot)
            d = _distances(kernel, s, s_obs)
            min_dist = min(min_dist, float(d.min()))
            prob = np.zeros(size)
            fin = np.isfinite(d)
            prob[fin] = kernel._profile(d[fin] / kernel.epsilon)
            hit = np.flatnonzero(u < prob)
            used = size
            if cfg.target_accepted is not None and accepted_count + len(hit) >= cfg.target_accepted:
                hit = hit[: cfg.target_accepted - accepted_count]
                used = int(hit[-1]) + 1
            acc_th.append(th[hit])
            acc_s.append(s[hit])
            accepted_count += len(hit)
            attempts += used
            b += 1
        if accepted_count == 0:
            raise ToleranceTooSmallError(attempts, kernel.epsilon, min_dist)
        if cfg.target_accepted is not None and accepted_count < cfg.target_accepted:
            warnings.warn(
                f"only {accepted_count} of {cfg.target_accepted} requested particles accepted "
                f"within {attempts} attempts",
                RuntimeWarning,
            )
        th_acc = np.concatenate(acc_th)
        s_acc = np.concatenate(acc_s)
        tolerance = kernel.epsilon

    if log_weight is None:
        w = np.ones(len(th_acc))
    else:
        with np.errstate(over="ignore", invalid="ignore"):
            w = np.exp(log_weight(th_acc))
        if not np.all(np.isfinite(w)) or w.sum() <= 0:
            raise SupportMismatchError("importance weights are all zero or non-finite")

    info = {
        "mode": cfg.mode,
        "kernel": kernel.family if cfg.mode == "fixed_epsilon" else "uniform",
        "epsilon": float(tolerance),
        "scale": None if kernel.scale is None else np.diag(kernel.scale).tolist(),
        "blocks": b,
    }
    ps = ParticleSet(th_acc, s_acc, w, attempts, tolerance, info=info)
    ps.info["ess"] = ps.ess
    return ps


def abc_reject(model, prior: ProposalDistribution, s_obs, cfg: SamplerConfig, rng) -> ParticleSet:
    """Accept-reject ABC: propose from the prior, keep with kernel probability."""
    return _run(model, prior, s_obs, cfg, rng)


def acc_reject(model, r_n: ProposalDistribution, s_obs, cfg: SamplerConfig, rng) -> ParticleSet:
    """Accept-reject approximate confidence distribution computing.

    Identical to :func:`abc_reject` except that proposals come from the
    (possibly data-dependent) initial distribution ``r_n``.
    """
    return _run(model, r_n, s_obs, cfg, rng)


def abc_importance(model, prior: ProposalDistribution, r_n: ProposalDistribution, s_obs,
                   cfg: SamplerConfig, rng) -> ParticleSet:
    """Importance-sampling ABC: propose from ``r_n``, weight by prior / r_n.

    Weights are left unnormalized; ``info["ess"]`` holds the effective
    sample size.
    """
    def log_weight(th):
        return prior.logpdf(th) - r_n.logpdf(th)

    return _run(model, r_n, s_obs, cfg, rng, log_weight=log_weight)


@dataclass
class PMCResult:
    particles: ParticleSet
    proposal: ProposalDistribution
    history: list[dict]


def pmc_refine(
    model,
    init_proposal: ProposalDistribution,
    s_obs,
    particles_per_iter: int,
    n_iters: int,
    rng,
    epsilon_schedule=None,
    acceptance: float | None = None,
    prior: ProposalDistribution | None = None,
    kernel_family: str = "gaussian",
    max_attempts: int | None = None,
    standardize: bool | None = None,
) -> PMCResult:
    """Population Monte Carlo ABC with a shrinking tolerance.

    Iteration 0 is importance-sampling ABC with ``init_proposal``; each later
    iteration proposes from a Gaussian mixture centred on the previous
    weighted particles with twice their weighted covariance. Tolerances come
    from ``epsilon_schedule`` (strictly decreasing, one per iteration) or, if
    ``acceptance`` is given instead, from the distance quantile at that
    proportion of ``ceil(particles_per_iter / acceptance)`` proposals.

    The returned proposal is the mixture built on the final particles.
    """
    if n_iters < 1:
        raise ValueError("n_iters must be >= 1")
    if (epsilon_schedule is None) == (acceptance is None):
        raise ValueError("give exactly one of epsilon_schedule and acceptance")
    if epsilon_schedule is not None:
        epsilon_schedule = [float(e) for e in epsilon_schedule]
        if len(epsilon_schedule) != n_iters:
            raise ValueError("epsilon_schedule must have one entry per iteration")
        if any(b >= a for a, b in zip(epsilon_schedule, epsilon_schedule[1:])):
            raise ValueError("epsilon_schedule must be strictly decreasing")
    stream = as_stream(rng)
    prior = prior or flat_prior(model.dim_theta)
    proposal = init_proposal
    kernel = KernelSpec(kernel_family, epsilon_schedule[0] if epsilon_schedule else 1.0)
    history = []
    particles = None
    for t in range(n_iters):
        if epsilon_schedule is not None:
            cfg = SamplerConfig(kernel.with_epsilon(epsilon_schedule[t]), target_accepted=particles_per_iter,
                                max_attempts=max_attempts, standardize=standardize)
        else:
            n_prop = math.ceil(particles_per_iter / acceptance)
            cfg = SamplerConfig(kernel, n_proposals=n_prop, acceptance=acceptance, standardize=standardize)
        particles = abc_importance(model, prior, proposal, s_obs, cfg, stream.spawn(t))
        if t == 0 and particles.info["scale"] is not None:
            # keep distances comparable across iterations
            kernel = kernel.with_scale(np.diag(particles.info["scale"]))
        ess = particles.ess
        history.append({"iteration": t, "epsilon": particles.tolerance, "ess": ess,
                         "attempts": particles.attempts, "accepted": len(particles)})
        if ess < 0.05 * len(particles):
            warnings.warn(f"PMC iteration {t}: ESS {ess:.1f} below 5% of {len(particles)} particles; "
                          "tolerance schedule may be too aggressive", RuntimeWarning)
        proposal = _mixture_or_fallback(particles, init_proposal)
    return PMCResult(particles, proposal, history)


def _mixture_or_fallback(particles: ParticleSet, fallback: ProposalDistribution) -> ProposalDistribution:
    cov = 2.0 * weighted_cov(particles.thetas, particles.weights)
    try:
        if not np.all(np.isfinite(cov)) or np.min(np.linalg.eigvalsh(cov)) <= 1e-14 * max(np.trace(cov), 1e-300):
            raise np.linalg.LinAlgError
        return gaussian_mixture_proposal(particles.thetas, particles.weights, cov)
    except (np.linalg.LinAlgError, DegenerateSampleError):
        warnings.warn("degenerate particle covariance; falling back to the initial proposal", RuntimeWarning)
        return fallback
