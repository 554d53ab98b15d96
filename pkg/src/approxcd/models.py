"""Benchmark generative models, their summaries and point estimators.

Three models are provided:

* :class:`GaussianLocationModel` -- N(theta, 1) observations, sample-mean
  summary, with the closed-form tempered posterior used as an oracle.
* :class:`CauchyModel` -- Cauchy(theta, tau) observations with location,
  scale or joint parameterization and mean / median / MAD summaries.
* :class:`RickerModel` -- noisily observed Ricker map, parameters on the log
  scale ``(log r, log sigma, log phi)``, 13 Wood-style summaries.

Every model exposes ``simulate``/``summarize`` for single datasets and a
batch ``simulate_summaries`` used by the samplers. For the Gaussian mean and
the Cauchy mean/median the batch path draws the summary from its exact
sampling distribution instead of materializing ``n`` observations per
proposal (``exact_summaries=True``); the full path is kept for checking.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
from scipy import optimize

from .core import DomainError, RngStream, as_stream

_CHUNK = 2_000_000  # max simulated observations held in memory at once


def median(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Sample median; for even ``n`` the lower of the two middle values."""
    x = np.asarray(x, dtype=float)
    n = x.shape[axis]
    k = (n + 1) // 2 - 1
    return np.take(np.partition(x, k, axis=axis), k, axis=axis)


def mad(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Unscaled median absolute deviation (no normal-consistency factor)."""
    x = np.asarray(x, dtype=float)
    m = np.expand_dims(median(x, axis=axis), axis)
    return median(np.abs(x - m), axis=axis)


def _batched(m: int, n: int):
    rows = max(1, _CHUNK // max(n, 1))
    for start in range(0, m, rows):
        yield slice(start, min(m, start + rows))


def save_dataset(path, data: np.ndarray) -> None:
    """Write a dataset as plain text, one observation (row) per line."""
    np.savetxt(path, np.asarray(data, dtype=float), fmt="%.17g")


def load_dataset(path) -> np.ndarray:
    data = np.loadtxt(path, dtype=float, ndmin=1)
    if data.size < 1:
        raise ValueError(f"{path}: empty dataset")
    return data


# ---------------------------------------------------------------------------
# Gaussian


def gaussian_acc_closed_form(s_obs: float, n: int, eps: float, mu_n: float, b_n: float) -> tuple[float, float]:
    """Mean and variance of the accepted-draw distribution, Gaussian example.

    Model ``N(theta, 1)`` with sample-mean summary, initial distribution
    ``N(mu_n, 1/b_n**2)`` (``b_n = 0`` is the flat limit) and a Gaussian
    kernel of standard deviation ``eps``. The accepted draws are exactly
    normal with the returned mean and variance.
    """
    if eps < 0 or n < 1:
        raise ValueError("need eps >= 0 and n >= 1")
    v = 1.0 / n + eps * eps
    denom = 1.0 + b_n * b_n * v
    return (s_obs + b_n * b_n * v * mu_n) / denom, v / denom


@dataclass(frozen=True)
class GaussianLocationModel:
    n: int
    mu_n: float = 0.0
    b_n: float = 0.0
    exact_summaries: bool = True

    dim_theta = 1
    dim_summary = 1
    name = "gaussian"

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.b_n < 0:
            raise ValueError("b_n must be >= 0")

    def with_n(self, n: int) -> "GaussianLocationModel":
        return replace(self, n=n)

    def simulate(self, theta, rng: np.random.Generator) -> np.ndarray:
        theta = np.asarray(theta, dtype=float).reshape(-1)
        if not np.all(np.isfinite(theta)):
            raise DomainError(f"theta must be finite, got {theta}")
        return theta[0] + rng.standard_normal(self.n)

    def summarize(self, data: np.ndarray) -> np.ndarray:
        return np.array([np.mean(data)])

    def simulate_summaries(self, thetas: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        thetas = np.asarray(thetas, dtype=float).reshape(-1, 1)
        m = len(thetas)
        if self.exact_summaries:
            return thetas + rng.standard_normal((m, 1)) / np.sqrt(self.n)
        out = np.empty((m, 1))
        for sl in _batched(m, self.n):
            x = thetas[sl] + rng.standard_normal((sl.stop - sl.start, self.n))
            out[sl, 0] = x.mean(axis=1)
        return out

    def summary_estimate(self, s: np.ndarray) -> np.ndarray:
        return np.asarray(s, dtype=float).reshape(-1)[:1]

    def crude_estimate(self, data: np.ndarray) -> np.ndarray:
        return np.array([np.mean(data)])


# ---------------------------------------------------------------------------
# Cauchy

_CAUCHY_SUMMARIES = {
    "location": ("mean", "median"),
    "scale": ("mad",),
    "joint": ("median_mad",),
}


@dataclass(frozen=True)
class CauchyModel:
    """Cauchy(location, scale) observations.

    ``parameterization`` picks which coordinates are unknown: ``"location"``
    (theta = [location], scale fixed), ``"scale"`` (theta = [scale], location
    fixed) or ``"joint"`` (theta = [location, scale]).
    """

    n: int
    parameterization: str = "location"
    summary: str = "median"
    location: float = 0.0
    scale: float = 1.0
    exact_summaries: bool = True

    name = "cauchy"

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        allowed = _CAUCHY_SUMMARIES.get(self.parameterization)
        if allowed is None:
            raise ValueError(f"unknown parameterization {self.parameterization!r}")
        if self.summary not in allowed:
            raise ValueError(f"summary {self.summary!r} not available for {self.parameterization} parameterization")
        if not self.scale > 0:
            raise ValueError("scale must be > 0")

    @property
    def dim_theta(self) -> int:
        return 2 if self.parameterization == "joint" else 1

    @property
    def dim_summary(self) -> int:
        return 2 if self.summary == "median_mad" else 1

    def with_n(self, n: int) -> "CauchyModel":
        return replace(self, n=n)

    def _loc_scale(self, thetas: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        thetas = np.asarray(thetas, dtype=float).reshape(-1, self.dim_theta)
        m = len(thetas)
        if self.parameterization == "location":
            return thetas[:, 0], np.full(m, self.scale)
        if self.parameterization == "scale":
            return np.full(m, self.location), thetas[:, 0]
        return thetas[:, 0], thetas[:, 1]

    def simulate(self, theta, rng: np.random.Generator) -> np.ndarray:
        loc, sc = self._loc_scale(theta)
        if not (np.isfinite(loc[0]) and np.isfinite(sc[0]) and sc[0] > 0):
            raise DomainError(f"invalid Cauchy parameters {np.asarray(theta).tolist()}")
        return loc[0] + sc[0] * rng.standard_cauchy(self.n)

    def summarize(self, data: np.ndarray) -> np.ndarray:
        data = np.asarray(data, dtype=float)
        return self._summarize_rows(data[None, :])[0]

    def _summarize_rows(self, x: np.ndarray) -> np.ndarray:
        if self.summary == "mean":
            return x.mean(axis=1)[:, None]
        if self.summary == "median":
            return median(x, axis=1)[:, None]
        if self.summary == "mad":
            return mad(x, axis=1)[:, None]
        return np.column_stack([median(x, axis=1), mad(x, axis=1)])

    def simulate_summaries(self, thetas: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        loc, sc = self._loc_scale(thetas)
        m = len(loc)
        ok = np.isfinite(loc) & np.isfinite(sc) & (sc > 0)
        # invalid rows still consume draws so that stream positions do not
        # depend on which proposals are valid
        loc_s = np.where(ok, loc, 0.0)
        sc_s = np.where(ok, sc, 1.0)
        if self.exact_summaries and self.summary == "mean":
            # the mean of n iid Cauchy variables is Cauchy with the same parameters
            out = (loc_s + sc_s * rng.standard_cauchy(m))[:, None]
        elif self.exact_summaries and self.summary == "median":
            # k-th order statistic of n uniforms is Beta(k, n - k + 1)
            k = (self.n + 1) // 2
            u = rng.beta(k, self.n - k + 1, size=m)
            out = (loc_s + sc_s * np.tan(np.pi * (u - 0.5)))[:, None]
        else:
            out = np.empty((m, self.dim_summary))
            for sl in _batched(m, self.n):
                x = loc_s[sl, None] + sc_s[sl, None] * rng.standard_cauchy((sl.stop - sl.start, self.n))
                out[sl] = self._summarize_rows(x)
        out[~ok] = np.nan
        return out

    def summary_estimate(self, s: np.ndarray) -> np.ndarray:
        # median and unscaled MAD are consistent for location and scale
        return np.asarray(s, dtype=float).reshape(-1)[: self.dim_theta]

    def crude_estimate(self, data: np.ndarray) -> np.ndarray:
        data = np.asarray(data, dtype=float)
        if self.parameterization == "location":
            return np.array([np.mean(data) if self.summary == "mean" else median(data)])
        if self.parameterization == "scale":
            return np.array([mad(data)])
        return np.array([median(data), mad(data)])


# ---------------------------------------------------------------------------
# Ricker

WOOD_SUMMARY_NAMES = (
    "mean", "n_zeros",
    "acov0", "acov1", "acov2", "acov3", "acov4", "acov5",
    "cubic1", "cubic2", "cubic3",
    "ar1", "ar2",
)


def simulate_ricker_latent(r, sigma, n_steps: int, rng: np.random.Generator, n0=None) -> np.ndarray:
    """Latent Ricker trajectories ``N_1..N_T`` for a batch of parameters.

    ``r`` and ``sigma`` are arrays of length m (or scalars). ``n0`` defaults
    to Uniform(0.5, 1.5) draws. Returns shape ``(m, n_steps)``.
    """
    r = np.atleast_1d(np.asarray(r, dtype=float))
    sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
    m = max(len(r), len(sigma))
    r = np.broadcast_to(r, (m,))
    sigma = np.broadcast_to(sigma, (m,))
    start = rng.uniform(0.5, 1.5, size=m)
    if n0 is not None:
        start = np.broadcast_to(np.asarray(n0, dtype=float), (m,)).copy()
    noise = rng.standard_normal((n_steps, m)) * sigma
    out = np.empty((m, n_steps))
    state = start
    with np.errstate(over="ignore", under="ignore", invalid="ignore"):
        for t in range(n_steps):
            state = r * state * np.exp(-state + noise[t])
            state = np.where(np.isfinite(state), state, 0.0)
            out[:, t] = state
    return out


def wood_summaries(y: np.ndarray, reference: np.ndarray | None = None) -> np.ndarray:
    """Thirteen summaries of Poisson-observed population series.

    Components (see ``WOOD_SUMMARY_NAMES``): mean of y; number of zeros;
    autocovariances at lags 0-5; coefficients of the no-intercept cubic
    regression of the sorted first differences on the sorted first
    differences of ``reference`` (the observed series); and the no-intercept
    regression of ``y[t+1]**0.3`` on ``(y[t]**0.3, y[t]**0.6)``.

    Without ``reference`` each series is regressed on itself.
    """
    y = np.asarray(y, dtype=float)
    single = y.ndim == 1
    y = np.atleast_2d(y)
    m, T = y.shape
    if T < 6:
        raise ValueError(f"series too short for Wood summaries: n={T} < 6")
    out = np.empty((m, 13))
    out[:, 0] = y.mean(axis=1)
    out[:, 1] = np.sum(y == 0, axis=1)
    yc = y - out[:, :1]
    for lag in range(6):
        out[:, 2 + lag] = np.sum(yc[:, lag:] * yc[:, : T - lag], axis=1) / T

    diffs = np.sort(np.diff(y, axis=1), axis=1)
    if reference is not None:
        ref = np.sort(np.diff(np.asarray(reference, dtype=float).reshape(-1)))
        if len(ref) != T - 1:
            raise ValueError("reference series must have the same length as the simulated series")
        X = np.column_stack([ref, ref ** 2, ref ** 3])
        out[:, 8:11] = (np.linalg.pinv(X) @ diffs.T).T
    else:
        X = np.stack([diffs, diffs ** 2, diffs ** 3], axis=2)
        out[:, 8:11] = (np.linalg.pinv(X) @ diffs[:, :, None])[:, :, 0]

    z = y ** 0.3
    z0, z1 = z[:, :-1], z[:, 1:]
    a = np.sum(z0 ** 2, axis=1)
    b = np.sum(z0 ** 3, axis=1)
    c = np.sum(z0 ** 4, axis=1)
    r1 = np.sum(z0 * z1, axis=1)
    r2 = np.sum(z0 ** 2 * z1, axis=1)
    det = a * c - b * b
    good = det > 1e-10 * (a * c + 1e-300)
    with np.errstate(divide="ignore", invalid="ignore"):
        out[:, 11] = np.where(good, (c * r1 - b * r2) / det, 0.0)
        out[:, 12] = np.where(good, (a * r2 - b * r1) / det, 0.0)
    bad = np.flatnonzero(~good)
    if len(bad):
        # minimum-norm least squares, batched over the degenerate rows
        X = np.stack([z0[bad], z0[bad] ** 2], axis=2)
        out[bad, 11:13] = (np.linalg.pinv(X) @ z1[bad][:, :, None])[:, :, 0]
    return out[0] if single else out


@dataclass(frozen=True)
class RickerModel:
    """Ricker map ``N_t = r N_{t-1} exp(-N_{t-1} + e_t)``, ``y_t ~ Pois(phi N_t)``.

    theta = (log r, log sigma, log phi). Each dataset runs ``burn_in`` steps
    from ``N_0 ~ U(0.5, 1.5)`` and records the next ``n`` observations.
    """

    n: int = 50
    burn_in: int = 50
    reference: tuple[float, ...] | None = None

    dim_theta = 3
    dim_summary = 13
    name = "ricker"

    def __post_init__(self):
        if self.n < 6:
            raise ValueError("Ricker series must have at least 6 observations")
        if self.reference is not None and len(self.reference) != self.n:
            raise ValueError("reference length must equal n")

    def with_n(self, n: int) -> "RickerModel":
        return replace(self, n=n, reference=None)

    def with_reference(self, y_obs: np.ndarray) -> "RickerModel":
        y_obs = np.asarray(y_obs, dtype=float).reshape(-1)
        return replace(self, n=len(y_obs), reference=tuple(y_obs.tolist()))

    def _simulate_rows(self, thetas: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        thetas = np.asarray(thetas, dtype=float).reshape(-1, 3)
        ok = np.all(np.isfinite(thetas), axis=1)
        th = np.where(ok[:, None], thetas, 0.0)
        r, sigma, phi = np.exp(th[:, 0]), np.exp(th[:, 1]), np.exp(th[:, 2])
        latent = simulate_ricker_latent(r, sigma, self.burn_in + self.n, rng)[:, self.burn_in:]
        lam = np.clip(phi[:, None] * latent, 0.0, 1e12)
        return rng.poisson(lam).astype(float), ok

    def simulate(self, theta, rng: np.random.Generator) -> np.ndarray:
        theta = np.asarray(theta, dtype=float).reshape(-1)
        if theta.shape != (3,) or not np.all(np.isfinite(theta)):
            raise DomainError(f"Ricker theta must be 3 finite log-parameters, got {theta.tolist()}")
        y, _ = self._simulate_rows(theta[None, :], rng)
        return y[0]

    def summarize(self, data: np.ndarray) -> np.ndarray:
        return wood_summaries(data, self.reference)

    def simulate_summaries(self, thetas: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        y, ok = self._simulate_rows(thetas, rng)
        out = wood_summaries(y, self.reference)
        out[~ok] = np.nan
        return out

    def summary_estimate(self, s):
        return None

    def crude_start(self, data: np.ndarray) -> np.ndarray:
        """Rough starting point: the Ricker fixed point is N* = log r."""
        log_r = 3.5
        ybar = max(float(np.mean(data)), 0.5)
        return np.array([log_r, np.log(0.5), np.log(ybar / log_r)])


# ---------------------------------------------------------------------------
# synthetic likelihood


@dataclass(frozen=True)
class SyntheticLikelihoodConfig:
    replicates: int = 100
    budget: int = 200
    restarts: int = 3
    perturbation: float = 0.3

    def validate(self, d: int) -> None:
        if self.replicates < d + 2:
            raise ValueError(f"need at least d + 2 = {d + 2} replicates, got {self.replicates}")
        if self.budget < 0 or self.restarts < 1:
            raise ValueError("budget must be >= 0 and restarts >= 1")


def synthetic_loglik_from_summaries(sims: np.ndarray, s_obs: np.ndarray) -> float:
    """Gaussian log-likelihood of ``s_obs`` under the moments of ``sims``."""
    sims = np.asarray(sims, dtype=float)
    if sims.ndim == 1:
        sims = sims[:, None]
    s_obs = np.asarray(s_obs, dtype=float).reshape(-1)
    d = sims.shape[1]
    mu = sims.mean(axis=0)
    cov = np.atleast_2d(np.cov(sims, rowvar=False))
    cov = cov + 1e-8 * np.trace(cov) / d * np.eye(d)
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError("summary covariance is not positive definite") from None
    z = np.linalg.solve(chol, s_obs - mu)
    return float(-0.5 * z @ z - np.sum(np.log(np.diag(chol))))


def synthetic_loglik(theta, s_obs, model, cfg: SyntheticLikelihoodConfig, rng: RngStream | int) -> float:
    """Synthetic log-likelihood at ``theta`` from ``cfg.replicates`` simulations.

    The stream is re-created on every call, so the same ``(theta, rng)``
    always gives the same value (common random numbers across calls).
    """
    cfg.validate(model.dim_summary)
    theta = np.asarray(theta, dtype=float).reshape(1, -1)
    gen = as_stream(rng).generator()
    sims = model.simulate_summaries(np.repeat(theta, cfg.replicates, axis=0), gen)
    if not np.all(np.isfinite(sims)):
        return -np.inf
    return synthetic_loglik_from_summaries(sims, s_obs)


@dataclass
class SyntheticLikelihoodFit:
    theta: np.ndarray
    loglik: float
    improved: bool
    evaluations: int


def max_synthetic_likelihood(
    model,
    s_obs,
    cfg: SyntheticLikelihoodConfig,
    rng: RngStream | int,
    start,
) -> SyntheticLikelihoodFit:
    """Maximize the synthetic likelihood by Nelder-Mead with restarts.

    Restart 0 starts at ``start``; later restarts start from Gaussian
    perturbations of it. Every objective evaluation uses the same simulation
    stream, so the objective is a deterministic function of ``theta``.
    """
    cfg.validate(model.dim_summary)
    stream = as_stream(rng)
    sim_stream = stream.spawn(0)
    start = np.asarray(start, dtype=float).reshape(-1)
    evals = 0

    def objective(th):
        nonlocal evals
        evals += 1
        try:
            ll = synthetic_loglik(th, s_obs, model, cfg, sim_stream)
        except np.linalg.LinAlgError:
            return 1e300
        return -ll if np.isfinite(ll) else 1e300

    f0 = objective(start)
    best_x, best_f = start.copy(), f0
    if cfg.budget == 0:
        return SyntheticLikelihoodFit(start, -f0, False, evals)
    jitter = stream.spawn(1).generator()
    improved = False
    for k in range(cfg.restarts):
        x0 = start if k == 0 else start + cfg.perturbation * jitter.standard_normal(start.size)
        res = optimize.minimize(
            objective, x0, method="Nelder-Mead",
            options={"maxfev": cfg.budget, "xatol": 1e-4, "fatol": 1e-6},
        )
        if res.fun < best_f:
            improved = improved or res.fun < f0
            best_x, best_f = np.asarray(res.x, dtype=float), float(res.fun)
    if not improved:
        warnings.warn("synthetic likelihood search did not improve on the start point", RuntimeWarning)
    return SyntheticLikelihoodFit(best_x, -best_f, improved, evals)


def msl_estimator(model, cfg: SyntheticLikelihoodConfig, rng: RngStream | int,
                  start_fn: Callable[[np.ndarray], np.ndarray] | None = None):
    """Point estimator ``data -> theta`` based on the synthetic likelihood.

    The returned callable accepts ``(data, stream)``; the model is re-targeted
    to each dataset's length (and, for Ricker, its reference series).
    """

    def estimate(data: np.ndarray, stream: RngStream | None = None) -> np.ndarray:
        data = np.asarray(data, dtype=float)
        sub = model.with_reference(data) if hasattr(model, "with_reference") else model.with_n(len(data))
        start = start_fn(data) if start_fn else sub.crude_start(data)
        fit = max_synthetic_likelihood(sub, sub.summarize(data), cfg, stream or as_stream(rng), start)
        return fit.theta

    return estimate
