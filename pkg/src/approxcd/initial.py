"""Initial distributions ``r_n``: truncated improper forms and minibatch KDEs.

The minibatch construction splits the data into subsets of size about
``n**nu``, computes a point estimate on each and smooths the estimates with a
product Gaussian kernel. The refined variant replaces each crude subset
estimate by a population Monte Carlo approximation of the posterior mean
given that subset's summary.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from .core import ApproxCDError, RngStream, as_stream, weighted_mean
from .models import mad, median
from .samplers import ProposalDistribution, pmc_refine

PointEstimator = Callable[[np.ndarray, RngStream], np.ndarray]


# ---------------------------------------------------------------------------
# kernel density estimate


def _iqr(x: np.ndarray, axis: int = 0) -> np.ndarray:
    q75, q25 = np.percentile(x, [75, 25], axis=axis, method="hazen")
    return q75 - q25


def kde_bandwidth(centers) -> np.ndarray:
    """Per-coordinate Silverman bandwidth ``0.9 min(sd, IQR/1.34) k^(-1/5)``.

    Quartiles use the midpoint (Hazen) plotting positions. The result is
    floored at ``1e-8 (1 + |median|)`` so identical centers still give a
    proper density.
    """
    c = np.asarray(centers, dtype=float)
    if c.ndim == 1:
        c = c[:, None]
    k = c.shape[0]
    if k < 2:
        raise ValueError("need at least 2 centers for a bandwidth")
    sd = c.std(axis=0, ddof=1)
    spread = np.minimum(sd, _iqr(c) / 1.34)
    # a zero IQR with positive sd would zero the bandwidth; fall back to sd
    spread = np.where(spread > 0, spread, sd)
    h = 0.9 * spread * k ** (-0.2)
    floor = 1e-8 * (1.0 + np.abs(np.median(c, axis=0)))
    return np.maximum(h, floor)


@dataclass(frozen=True)
class KdeEstimate:
    """Product Gaussian KDE with per-coordinate bandwidth."""

    centers: np.ndarray
    bandwidth: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=float)
        if c.ndim == 1:
            c = c[:, None]
        if c.shape[0] < 2:
            raise ValueError("a KDE needs k >= 2 centers")
        h = np.broadcast_to(np.asarray(self.bandwidth, dtype=float), (c.shape[1],)).copy()
        if not np.all(h > 0):
            raise ValueError("bandwidth must be positive")
        c.setflags(write=False)
        h.setflags(write=False)
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "bandwidth", h)

    @classmethod
    def fit(cls, centers) -> "KdeEstimate":
        return cls(centers, kde_bandwidth(centers))

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    @property
    def k(self) -> int:
        return self.centers.shape[0]

    def log_density(self, thetas) -> np.ndarray:
        th = np.asarray(thetas, dtype=float).reshape(-1, self.dim)
        h = self.bandwidth
        const = -np.log(self.k) - np.sum(np.log(h)) - 0.5 * self.dim * np.log(2 * np.pi)
        out = np.empty(len(th))
        step = max(1, 2_000_000 // (self.k * self.dim))
        for a in range(0, len(th), step):
            z = (th[a:a + step, None, :] - self.centers[None, :, :]) / h
            out[a:a + step] = logsumexp(-0.5 * np.sum(z * z, axis=2), axis=1) + const
        return out

    def density(self, thetas) -> np.ndarray:
        return np.exp(self.log_density(thetas))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        idx = rng.integers(0, self.k, size=size)
        return self.centers[idx] + self.bandwidth * rng.standard_normal((size, self.dim))

    def mean(self) -> np.ndarray:
        return self.centers.mean(axis=0)

    def sd(self) -> np.ndarray:
        return np.sqrt(self.centers.var(axis=0) + self.bandwidth ** 2)

    def as_proposal(self) -> ProposalDistribution:
        return ProposalDistribution(self.sample, self.log_density, self.dim, "minibatch-kde")


# ---------------------------------------------------------------------------
# point estimators


def _vec(f):
    def estimator(z: np.ndarray, stream: RngStream | None = None) -> np.ndarray:
        return np.atleast_1d(np.asarray(f(z), dtype=float))

    return estimator


POINT_ESTIMATORS: dict[str, PointEstimator] = {
    "mean": _vec(np.mean),
    "median": _vec(median),
    "mad": _vec(mad),
    "median_mad": _vec(lambda z: [median(z), mad(z)]),
}


# ---------------------------------------------------------------------------
# minibatch scheme


@dataclass(frozen=True)
class MinibatchConfig:
    """Subset design for the minibatch ``r_n``.

    ``policy="disjoint"`` randomly partitions the observations into
    ``floor(n / b)`` blocks of size ``b = floor(n**nu)`` (or
    ``subset_size``); ``policy="overlapping"`` takes contiguous windows,
    either every ``stride`` observations or ``k`` evenly spaced windows.
    ``k`` caps the number of subsets used.
    """

    point_estimator: PointEstimator = field(default=POINT_ESTIMATORS["median"])
    nu: float = 0.5
    k: int | None = None
    policy: str = "disjoint"
    stride: int | None = None
    subset_size: int | None = None

    def __post_init__(self):
        if not 0 < self.nu < 1:
            raise ValueError("nu must lie in (0, 1)")
        if self.policy not in ("disjoint", "overlapping"):
            raise ValueError(f"unknown overlap policy {self.policy!r}")
        if self.k is not None and self.k < 2:
            raise ValueError("need k >= 2 subsets")
        if self.stride is not None and self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.nu >= 0.6:
            warnings.warn(f"nu = {self.nu} >= 3/5; the initial distribution may be too concentrated",
                          RuntimeWarning)

    def size(self, n: int) -> int:
        b = self.subset_size if self.subset_size is not None else int(math.floor(n ** self.nu + 1e-9))
        if b < 2:
            raise ValueError(f"subset size {b} < 2 for n = {n}")
        if b > n:
            raise ValueError(f"subset size {b} exceeds n = {n}")
        return b


def default_minibatch(n: int, point_estimator: PointEstimator, **kw) -> MinibatchConfig:
    """Disjoint subsets for n >= 100, overlapping windows below that."""
    policy = "disjoint" if n >= 100 else "overlapping"
    return MinibatchConfig(point_estimator, policy=policy, **kw)


def subset_indices(n: int, cfg: MinibatchConfig, rng) -> list[np.ndarray]:
    """Index arrays of the subsets chosen by ``cfg`` for ``n`` observations."""
    b = cfg.size(n)
    if cfg.policy == "disjoint":
        blocks = n // b
        k = blocks if cfg.k is None else cfg.k
        if k > blocks:
            raise ValueError(f"only {blocks} disjoint subsets of size {b} fit in n = {n}, asked for {k}")
        perm = as_stream(rng).generator().permutation(n)
        return [np.sort(perm[i * b:(i + 1) * b]) for i in range(k)]
    if cfg.stride is not None:
        starts = list(range(0, n - b + 1, cfg.stride))
        if cfg.k is not None:
            starts = starts[: cfg.k]
    else:
        k = cfg.k if cfg.k is not None else n - b + 1
        starts = sorted(set(np.round(np.linspace(0, n - b, k)).astype(int).tolist()))
    if len(starts) < 2:
        raise ValueError("overlap policy yields fewer than 2 subsets")
    return [np.arange(s, s + b) for s in starts]


def _estimate_all(data, subsets, estimator: PointEstimator, stream: RngStream) -> np.ndarray:
    out = []
    for i, idx in enumerate(subsets):
        try:
            out.append(np.atleast_1d(estimator(data[idx], stream.spawn(i))))
        except Exception as exc:
            raise ApproxCDError(f"point estimator failed on subset {i}: {exc}") from exc
    return np.vstack(out)


def minibatch_rn(data, cfg: MinibatchConfig, rng) -> KdeEstimate:
    """KDE over subset point estimates; ``rng`` drives the partition and estimators."""
    data = np.asarray(data, dtype=float)
    n = len(data)
    if n < 4:
        raise ValueError("need n >= 4 observations")
    stream = as_stream(rng)
    subsets = subset_indices(n, cfg, stream.spawn(0))
    centers = _estimate_all(data, subsets, cfg.point_estimator, stream.spawn(1))
    return KdeEstimate.fit(centers)


@dataclass(frozen=True)
class PmcConfig:
    """Population Monte Carlo settings for the refined scheme."""

    particles: int = 10_000
    iterations: int = 10
    acceptance: float | None = 0.1
    epsilon_schedule: Sequence[float] | None = None
    kernel_family: str = "gaussian"

    def __post_init__(self):
        if self.particles < 1 or self.iterations < 0:
            raise ValueError("need particles >= 1 and iterations >= 0")
        if self.iterations and (self.acceptance is None) == (self.epsilon_schedule is None):
            raise ValueError("give exactly one of acceptance and epsilon_schedule")


def _submodel(model, z: np.ndarray):
    if hasattr(model, "with_reference"):
        return model.with_reference(z)
    return model.with_n(len(z))


def refined_minibatch_rn(data, cfg: MinibatchConfig, model, pmc_cfg: PmcConfig, rng,
                         prior: ProposalDistribution | None = None, return_crude: bool = False):
    """Minibatch KDE whose centers are refined by PMC on each subset.

    The crude KDE ``rbar`` is built first; for each subset ``z_i`` a PMC run
    targets ``E(theta | S(z_i))`` under ``prior``, proposing from ``rbar`` in its
    first iteration. The default prior is flat on the crude centers' range
    widened by that range on each side, which keeps diffuse subset posteriors
    (for example a Ricker noise scale drifting toward zero) proper. Subsets whose PMC run fails keep their
    crude estimate. With ``pmc_cfg.iterations == 0`` the crude KDE is
    returned unchanged.
    """
    data = np.asarray(data, dtype=float)
    n = len(data)
    if n < 4:
        raise ValueError("need n >= 4 observations")
    stream = as_stream(rng)
    subsets = subset_indices(n, cfg, stream.spawn(0))
    crude = _estimate_all(data, subsets, cfg.point_estimator, stream.spawn(1))
    rbar = KdeEstimate.fit(crude)
    if pmc_cfg.iterations == 0:
        return (rbar, rbar) if return_crude else rbar
    proposal = rbar.as_proposal()
    if prior is None:
        lo, hi = crude.min(axis=0), crude.max(axis=0)
        span = np.maximum(hi - lo, 1e-8 * (1.0 + np.abs(lo)))
        prior = improper_location(lo - span, hi + span)
    refined = crude.copy()
    for i, idx in enumerate(subsets):
        z = data[idx]
        sub = _submodel(model, z)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                res = pmc_refine(
                    sub, proposal, sub.summarize(z), pmc_cfg.particles, pmc_cfg.iterations,
                    stream.spawn(2, i),
                    epsilon_schedule=pmc_cfg.epsilon_schedule,
                    acceptance=pmc_cfg.acceptance if pmc_cfg.epsilon_schedule is None else None,
                    prior=prior,
                    kernel_family=pmc_cfg.kernel_family,
                )
            est = weighted_mean(res.particles)
            if not np.all(np.isfinite(est)):
                raise ApproxCDError("non-finite refined estimate")
            refined[i] = est
        except (ApproxCDError, np.linalg.LinAlgError, ValueError) as exc:
            warnings.warn(f"refinement failed on subset {i} ({exc}); keeping crude estimate", RuntimeWarning)
    out = KdeEstimate.fit(refined)
    return (out, rbar) if return_crude else out


# ---------------------------------------------------------------------------
# truncated improper forms


def _box(lo, hi) -> tuple[np.ndarray, np.ndarray]:
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    if lo.shape != hi.shape or not np.all(np.isfinite(lo) & np.isfinite(hi)) or np.any(hi <= lo):
        raise ValueError(f"empty or invalid box [{lo.tolist()}, {hi.tolist()}]")
    return lo, hi


def improper_location(lo, hi) -> ProposalDistribution:
    """Flat density on the box ``[lo, hi]`` (unnormalized log-density 0)."""
    lo, hi = _box(lo, hi)
    p = len(lo)

    def sample(rng, size):
        return lo + (hi - lo) * rng.random((size, p))

    def logpdf(th):
        inside = np.all((th >= lo) & (th <= hi), axis=1)
        return np.where(inside, 0.0, -np.inf)

    return ProposalDistribution(sample, logpdf, p, "flat")


def improper_scale(lo, hi) -> ProposalDistribution:
    """Density proportional to ``1/sigma`` on ``[lo, hi]``; ``log sigma`` is uniform."""
    lo, hi = _box(lo, hi)
    if np.any(lo <= 0):
        raise ValueError("scale box must be positive")
    p = len(lo)
    a, b = np.log(lo), np.log(hi)

    def sample(rng, size):
        return np.exp(a + (b - a) * rng.random((size, p)))

    def logpdf(th):
        inside = np.all((th >= lo) & (th <= hi), axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(inside, -np.sum(np.log(np.abs(th)), axis=1), -np.inf)

    return ProposalDistribution(sample, logpdf, p, "one_over_sigma")


def improper_location_scale(loc_box, scale_box) -> ProposalDistribution:
    """Flat in location times ``1/sigma`` in scale, on a product box."""
    loc = improper_location(*loc_box)
    sc = improper_scale(*scale_box)

    def sample(rng, size):
        return np.column_stack([loc.draw(rng, size), sc.draw(rng, size)])

    def logpdf(th):
        return loc.logpdf(th[:, :1]) + sc.logpdf(th[:, 1:])

    return ProposalDistribution(sample, logpdf, 2, "flat_x_one_over_sigma")


def default_location_box(data, width: float = 10.0) -> tuple[float, float]:
    """``median(data) -+ width * IQR(data)``.

    Centred on the median rather than spanning the sample range: with
    heavy-tailed data the range can be orders of magnitude wider than the
    pivot's support, which only wastes proposals.
    """
    data = np.asarray(data, dtype=float)
    iqr = float(_iqr(data))
    if iqr <= 0:
        iqr = float(np.std(data)) or 1.0
    m = float(median(data))
    return m - width * iqr, m + width * iqr


def default_scale_box(data, factor: float = 50.0) -> tuple[float, float]:
    """``[MAD / factor, factor * MAD]``."""
    s = float(mad(np.asarray(data, dtype=float)))
    if s <= 0:
        s = float(np.std(data)) or 1.0
    return s / factor, s * factor
