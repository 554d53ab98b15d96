"""Confidence distributions, intervals and depth regions from particle sets.

A pair of matching maps ``(V, W)`` turns accepted draws into a region:
``v_i = V(theta_i, s_obs)`` is a Monte Carlo sample whose law approximates
that of ``W(theta_0, S)``, so ``{theta : W(theta, s_obs) in A}`` has the
coverage of ``A`` under the ``v_i``. Scalar maps give intervals via
quantiles; vector maps give Mahalanobis-depth contours.
"""

from __future__ import annotations

import hashlib
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid

from .core import DegenerateSampleError, ParticleSet, RngStream, as_stream, weighted_cov
from .kernels import unit_ball_volume

# ---------------------------------------------------------------------------
# quantiles and confidence distributions


def empirical_quantile(values, alpha: float, weights=None, convention: str = "smallest") -> float:
    """Order statistic of rank ``ceil(m * alpha)``.

    ``convention="smallest"`` counts the rank from the bottom (so small
    ``alpha`` gives a lower quantile); ``"largest"`` counts from the top.
    With weights the rank condition becomes "cumulative normalized weight
    reaches ``alpha``", which agrees with the unweighted rule for equal
    weights.
    """
    v = np.asarray(values, dtype=float).reshape(-1)
    m = len(v)
    if m == 0:
        raise ValueError("empirical_quantile of an empty sample")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if convention not in ("smallest", "largest"):
        raise ValueError(f"unknown convention {convention!r}")
    if m < 1.0 / min(alpha, 1 - alpha):
        warnings.warn(f"only {m} values for a {alpha:g} quantile; result is an extreme order statistic",
                      RuntimeWarning)
    if convention == "largest":
        # the ceil(m a)-th largest is the smallest-ranked quantile of -v
        return -empirical_quantile(-v, alpha, weights, "smallest")
    order = np.argsort(v, kind="stable")
    if weights is None:
        r = min(max(math.ceil(m * alpha - 1e-9), 1), m)
        return float(v[order[r - 1]])
    w = np.asarray(weights, dtype=float).reshape(-1)[order]
    if w.sum() <= 0:
        raise DegenerateSampleError("total weight is zero")
    cum = np.cumsum(w) / w.sum()
    i = int(np.searchsorted(cum, alpha - 1e-12, side="left"))
    return float(v[order[min(i, m - 1)]])


@dataclass(frozen=True)
class EmpiricalCD:
    """Right-continuous step CDF on the parameter axis."""

    points: np.ndarray
    cdf: np.ndarray
    m: int

    @classmethod
    def from_sample(cls, values, weights=None) -> "EmpiricalCD":
        v = np.asarray(values, dtype=float).reshape(-1)
        if len(v) == 0:
            raise ValueError("empty sample")
        w = np.ones(len(v)) if weights is None else np.asarray(weights, dtype=float).reshape(-1)
        order = np.argsort(v, kind="stable")
        v, w = v[order], w[order]
        pts, inv = np.unique(v, return_inverse=True)
        mass = np.bincount(inv, weights=w)
        cdf = np.cumsum(mass) / mass.sum()
        cdf[-1] = 1.0
        return cls(pts, cdf, len(v))

    def __call__(self, t):
        idx = np.searchsorted(self.points, np.asarray(t, dtype=float), side="right")
        out = np.where(idx > 0, self.cdf[np.maximum(idx - 1, 0)], 0.0)
        return float(out) if out.ndim == 0 else out

    def quantile(self, alpha: float) -> float:
        i = int(np.searchsorted(self.cdf, alpha - 1e-12, side="left"))
        return float(self.points[min(i, len(self.points) - 1)])

    def median(self) -> float:
        return self.quantile(0.5)


def cd_from_particles(particles: ParticleSet, theta_hat: float) -> EmpiricalCD:
    """Confidence distribution of the reflected draws ``2 theta_hat - theta_i``."""
    if particles.dim != 1:
        raise ValueError("a confidence distribution needs a scalar parameter")
    return EmpiricalCD.from_sample(2.0 * float(theta_hat) - particles.thetas[:, 0], particles.weights)


# ---------------------------------------------------------------------------
# matching maps

MapFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class MatchingMaps:
    """Maps ``V`` (applied to draws) and ``W`` (applied to candidate thetas).

    Both take ``(thetas (m, p), s)`` and return ``(m, k)``. ``W_inverse``,
    when available, solves ``W(theta, s) = c`` for scalar maps; ``domain``
    bounds the parameter for numerical inversion.
    """

    V: MapFn
    W: MapFn
    estimator: Callable[[np.ndarray], np.ndarray] | None = None
    W_inverse: Callable[[float, np.ndarray], float] | None = None
    domain: tuple[float, float] = (-np.inf, np.inf)
    name: str = "custom"


def _est(estimator, s):
    return np.asarray(estimator(np.asarray(s, dtype=float)), dtype=float).reshape(-1)


def location_maps(estimator) -> MatchingMaps:
    """``V = theta - theta_hat(s)``, ``W = theta_hat(s) - theta``."""

    def V(th, s):
        return np.asarray(th, dtype=float).reshape(len(th), -1)[:, :1] - _est(estimator, s)[0]

    def W(th, s):
        return _est(estimator, s)[0] - np.asarray(th, dtype=float).reshape(len(th), -1)[:, :1]

    return MatchingMaps(V, W, estimator, lambda c, s: _est(estimator, s)[0] - c, name="location")


def scale_maps(estimator) -> MatchingMaps:
    """``V = sigma / sigma_hat(s)``, ``W = sigma_hat(s) / sigma``."""

    def V(th, s):
        return np.asarray(th, dtype=float).reshape(len(th), -1)[:, :1] / _est(estimator, s)[0]

    def W(th, s):
        th = np.asarray(th, dtype=float).reshape(len(th), -1)[:, :1]
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(th > 0, _est(estimator, s)[0] / th, np.nan)

    def inverse(c, s):
        return _est(estimator, s)[0] / c if c > 0 else np.inf

    return MatchingMaps(V, W, estimator, inverse, domain=(0.0, np.inf), name="scale")


def location_scale_maps(estimator) -> MatchingMaps:
    """Joint pivot ``((theta_hat - theta) / tau, tau_hat / tau)`` for ``(theta, tau)``.

    The same function serves as ``V`` and ``W``: evaluated at the truth and a
    fresh summary it has the law of ``((theta_hat - theta_0)/tau_0,
    tau_hat/tau_0)``, which the draws reproduce under a flat-by-``1/tau``
    initial distribution.
    """

    def pivot(th, s):
        th = np.asarray(th, dtype=float).reshape(len(th), 2)
        loc_hat, sc_hat = _est(estimator, s)[:2]
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.column_stack([(loc_hat - th[:, 0]) / th[:, 1], sc_hat / th[:, 1]])
        out[th[:, 1] <= 0] = np.nan
        return out

    return MatchingMaps(pivot, pivot, estimator, name="location_scale")


def identity_maps(p: int = 1) -> MatchingMaps:
    """``V = W = theta``; regions are then credible regions of the draws."""

    def ident(th, s):
        return np.asarray(th, dtype=float).reshape(len(th), p)

    inverse = (lambda c, s: c) if p == 1 else None
    return MatchingMaps(ident, ident, None, inverse, name="identity")


# ---------------------------------------------------------------------------
# regions


@dataclass(frozen=True)
class ConfidenceRegion:
    """An interval (possibly one-sided) or a depth contour at level ``1 - alpha``.

    Depth regions keep what membership needs: the maps, ``s_obs``, the
    reference mean/covariance and the sorted reference depths.
    """

    kind: str
    level: float
    lo: float = -np.inf
    hi: float = np.inf
    threshold: float | None = None
    digest: str = ""
    _depth: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in ("interval", "one_sided", "depth"):
            raise ValueError(f"unknown region kind {self.kind!r}")
        if not 0 < self.level < 1:
            raise ValueError("level must lie in (0, 1)")
        if self.kind != "depth" and not self.lo <= self.hi:
            raise ValueError(f"interval endpoints out of order: [{self.lo}, {self.hi}]")
        if self.threshold is not None and not 0 <= self.threshold <= 1:
            raise ValueError("depth threshold must lie in [0, 1]")

    @property
    def alpha(self) -> float:
        return 1.0 - self.level

    def contains(self, theta) -> bool | np.ndarray:
        th = np.asarray(theta, dtype=float)
        single = th.ndim <= 1
        if self.kind != "depth":
            x = th.reshape(-1)
            out = (x >= self.lo) & (x <= self.hi)
            return bool(out[0]) if single and out.size == 1 else out
        d = self._depth
        pts = th.reshape(1, -1) if single else th
        w = d["maps"].W(pts, d["s_obs"])
        ok = np.all(np.isfinite(w), axis=1)
        depth = np.zeros(len(pts))
        depth[ok] = _depth_values(w[ok], d["mean"], d["prec"])
        below = np.searchsorted(d["sorted"], depth, side="left")
        frac = np.where(below > 0, d["cum"][np.maximum(below - 1, 0)], 0.0)
        out = ok & (frac >= self.alpha - 1e-12)
        return bool(out[0]) if single else out

    @property
    def width(self) -> float:
        if self.kind == "depth":
            raise ValueError("depth regions have a volume, not a width")
        return float(self.hi - self.lo)

    def w_volume(self) -> float:
        """Volume of the contour in the transformed (W) space: an ellipsoid."""
        d = self._depth
        k = len(d["mean"])
        r2 = 1.0 / self.threshold - 1.0 if self.threshold > 0 else np.inf
        return float(unit_ball_volume(k) * r2 ** (k / 2) * np.sqrt(np.linalg.det(d["cov"])))

    def volume(self, rng: RngStream | int = 0, n: int = 20_000) -> float:
        """Parameter-space volume: analytic for identity maps, else importance sampling.

        The importance proposal is a Gaussian on the particle cloud with
        doubled covariance, so the estimate targets the part of the region
        near the draws.
        """
        if self.kind != "depth":
            return self.width
        d = self._depth
        if d["maps"].name == "identity":
            return self.w_volume()
        th = d["thetas"]
        mu = th.mean(axis=0)
        cov = 2.0 * np.cov(th.T).reshape(th.shape[1], th.shape[1])
        chol = np.linalg.cholesky(cov)
        gen = as_stream(rng).generator()
        z = gen.standard_normal((n, th.shape[1]))
        x = mu + z @ chol.T
        logq = (-0.5 * np.sum(z * z, axis=1) - np.sum(np.log(np.diag(chol)))
                - 0.5 * th.shape[1] * np.log(2 * np.pi))
        return float(np.mean(self.contains(x) * np.exp(-logq)))

    def size(self) -> float:
        return self.width if self.kind != "depth" else self.volume()

    def to_record(self) -> str:
        """One-line plain-text record used in CSV output."""
        if self.kind == "depth":
            return f"kind=depth;level={self.level:.6g};threshold={self.threshold:.6g};digest={self.digest}"
        return f"kind={self.kind};level={self.level:.6g};lo={self.lo:.6g};hi={self.hi:.6g}"


def _bisect(f, a: float, b: float, rtol: float = 1e-10) -> float:
    fa = f(a)
    for _ in range(200):
        mid = 0.5 * (a + b)
        if abs(b - a) <= rtol * max(1.0, abs(mid)):
            break
        fm = f(mid)
        if (fm > 0) == (fa > 0):
            a, fa = mid, fm
        else:
            b = mid
    return 0.5 * (a + b)


def _invert_numeric(maps: MatchingMaps, s_obs, targets, thetas) -> list[float]:
    lo_dom, hi_dom = maps.domain
    t_min, t_max = float(thetas.min()), float(thetas.max())
    span = max(t_max - t_min, 1e-8 * (1 + abs(t_max)))
    a, b = t_min - 0.5 * span, t_max + 0.5 * span

    def clip(x, side):
        if side < 0 and np.isfinite(lo_dom) and x <= lo_dom:
            return lo_dom + 1e-12 * max(1.0, abs(t_min))
        if side > 0 and np.isfinite(hi_dom) and x >= hi_dom:
            return hi_dom - 1e-12 * max(1.0, abs(t_max))
        return x

    def W(x):
        return float(maps.W(np.array([[x]]), s_obs)[0, 0])

    a, b = clip(a, -1), clip(b, 1)
    for _ in range(60):
        wa, wb = W(a), W(b)
        if all(min(wa, wb) <= t <= max(wa, wb) for t in targets):
            break
        span *= 2
        a, b = clip(t_min - span, -1), clip(t_max + span, 1)
    grid = np.linspace(a, b, 201)
    vals = maps.W(grid[:, None], s_obs)[:, 0]
    diffs = np.diff(vals)
    if not (np.all(diffs > 0) or np.all(diffs < 0)):
        raise ValueError("W is not monotone over the search range; use depth_region instead")
    out = []
    for t in targets:
        if not min(vals[0], vals[-1]) <= t <= max(vals[0], vals[-1]):
            raise ValueError(f"could not bracket W = {t:g}")
        out.append(_bisect(lambda x: W(x) - t, a, b))
    return out


def interval_from_W(particles: ParticleSet, maps: MatchingMaps, s_obs, alpha: float,
                    sided: str = "two_sided", convention: str = "smallest") -> ConfidenceRegion:
    """Invert ``q_lo <= W(theta, s_obs) <= q_hi`` for a scalar parameter.

    ``sided="two_sided"`` uses the ``alpha/2`` and ``1 - alpha/2`` quantiles
    of the ``v_i``; ``sided="upper"`` keeps ``W >= q_alpha``, which for a
    decreasing ``W`` is an upper confidence bound.
    """
    if particles.dim != 1:
        raise ValueError("interval_from_W needs a scalar parameter")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    v = maps.V(particles.thetas, s_obs)[:, 0]
    w = particles.weights
    if sided == "two_sided":
        targets = [empirical_quantile(v, alpha / 2, w, convention),
                   empirical_quantile(v, 1 - alpha / 2, w, convention)]
    elif sided == "upper":
        targets = [empirical_quantile(v, alpha, w, convention)]
    else:
        raise ValueError(f"unknown sidedness {sided!r}")
    if maps.W_inverse is not None:
        roots = [float(maps.W_inverse(t, s_obs)) for t in targets]
    else:
        roots = _invert_numeric(maps, s_obs, targets, particles.thetas[:, 0])
    level = 1 - alpha
    if sided == "two_sided":
        lo, hi = sorted(roots)
        return ConfidenceRegion("interval", level, lo, hi)
    # W >= q: below the root if W decreases, above it if W increases
    c = float(np.median(particles.thetas[:, 0]))
    step = max(float(np.std(particles.thetas[:, 0])), 1e-6 * (1 + abs(c)))
    lo_dom = maps.domain[0]
    a = c - step if not np.isfinite(lo_dom) else max(c - step, 0.5 * (c + lo_dom))
    wa, wb = maps.W(np.array([[a], [c + step]]), s_obs)[:, 0]
    if wb < wa:
        return ConfidenceRegion("one_sided", level, maps.domain[0], roots[0])
    return ConfidenceRegion("one_sided", level, roots[0], maps.domain[1])


def credible_interval(particles: ParticleSet, alpha: float) -> ConfidenceRegion:
    """Equal-tailed weighted percentile interval of a scalar parameter."""
    return interval_from_W(particles, identity_maps(1), None, alpha)


def _depth_values(x, mean, prec) -> np.ndarray:
    diff = x - mean
    d2 = np.einsum("ij,jk,ik->i", diff, prec, diff)
    return 1.0 / (1.0 + d2)


def _reference_moments(ref: np.ndarray, weights, ridge: bool):
    cov = np.atleast_2d(weighted_cov(ref, weights))
    w = np.ones(len(ref)) if weights is None else np.asarray(weights, dtype=float)
    mean = (w / w.sum()) @ ref
    k = cov.shape[0]
    if np.linalg.cond(cov) > 1e10 or np.linalg.det(cov) <= 0:
        if not ridge:
            raise DegenerateSampleError("reference covariance is singular; enable the ridge fallback")
        lam = 1e-8 * max(np.trace(cov), 1e-300) / k
        warnings.warn(f"singular reference covariance; adding ridge {lam:.3g}", RuntimeWarning)
        cov = cov + lam * np.eye(k)
    return mean, cov, np.linalg.inv(cov)


def mahalanobis_depth(points, reference, weights=None, ridge: bool = False) -> np.ndarray | float:
    """``1 / (1 + (x - mu)' S^-1 (x - mu))`` with weighted reference moments."""
    ref = np.asarray(reference, dtype=float)
    if ref.ndim == 1:
        ref = ref[:, None]
    mean, _, prec = _reference_moments(ref, weights, ridge)
    x = np.asarray(points, dtype=float)
    single = x.ndim <= 1 and x.size == ref.shape[1]
    out = _depth_values(x.reshape(-1, ref.shape[1]), mean, prec)
    return float(out[0]) if single else out


def _digest(a: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(a, dtype="<f8").tobytes()).hexdigest()[:16]


def depth_region(particles: ParticleSet, maps: MatchingMaps, s_obs, alpha: float,
                 ridge: bool = False) -> ConfidenceRegion:
    """Depth contour ``{theta : share of v_i shallower than W(theta) >= alpha}``."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    m = len(particles)
    if m <= 20 / alpha:
        warnings.warn(f"{m} reference draws is few for a depth region at alpha={alpha:g}", RuntimeWarning)
    v = np.asarray(maps.V(particles.thetas, s_obs), dtype=float)
    w = particles.weights
    ok = np.all(np.isfinite(v), axis=1)
    if not ok.all():
        v, w = v[ok], w[ok]
    mean, cov, prec = _reference_moments(v, w, ridge)
    depths = _depth_values(v, mean, prec)
    order = np.argsort(depths, kind="stable")
    sorted_d = depths[order]
    cum = np.cumsum(w[order]) / w.sum()
    # the smallest depth at which membership starts
    r = int(np.searchsorted(cum, alpha - 1e-12, side="left"))
    threshold = float(sorted_d[min(r, len(sorted_d) - 1)])
    return ConfidenceRegion(
        "depth", 1 - alpha, threshold=threshold, digest=_digest(v),
        _depth={"maps": maps, "s_obs": s_obs, "mean": mean, "cov": cov, "prec": prec,
                "sorted": sorted_d, "cum": cum, "thetas": particles.thetas},
    )


def coverage_score(regions: Sequence[ConfidenceRegion], theta0) -> tuple[float, float]:
    """Share of regions containing ``theta0`` and their median width or volume."""
    regions = list(regions)
    if not regions:
        raise ValueError("no regions to score")
    kinds = {r.kind == "depth" for r in regions}
    if len(kinds) > 1:
        raise ValueError("cannot mix intervals and depth regions in one score")
    hits = [bool(r.contains(theta0)) for r in regions]
    sizes = [r.size() for r in regions]
    return float(np.mean(hits)), float(np.median(sizes))


# ---------------------------------------------------------------------------
# Cauchy reference posterior


def cauchy_target_posterior_grid(data, tau: float, grid) -> np.ndarray:
    """Flat-prior Cauchy location posterior evaluated and normalized on ``grid``."""
    if not tau > 0:
        raise ValueError("tau must be > 0")
    x = np.asarray(data, dtype=float).reshape(-1)
    g = np.asarray(grid, dtype=float).reshape(-1)
    if len(x) > 1:
        q75, q25 = np.percentile(x, [75, 25])
        span = 10 * (q75 - q25)
        if span > 0 and len(g) * span / max(g[-1] - g[0], 1e-300) < 200:
            warnings.warn("grid has fewer than 200 points per 10 interquartile ranges", RuntimeWarning)
    logp = np.zeros(len(g))
    for start in range(0, len(x), 256):
        z = (x[start:start + 256, None] - g[None, :]) / tau
        logp -= np.sum(np.log1p(z * z), axis=0)
    p = np.exp(logp - logp.max())
    return p / trapezoid(p, g)


def ks_to_grid_density(sample, grid, dens) -> float:
    """Kolmogorov distance between a sample's ECDF and a density tabulated on a grid."""
    x = np.sort(np.asarray(sample, dtype=float).reshape(-1))
    cdf = cumulative_trapezoid(dens, grid, initial=0.0)
    cdf /= cdf[-1]
    f = np.interp(x, grid, cdf, left=0.0, right=1.0)
    m = len(x)
    upper = np.arange(1, m + 1) / m - f
    lower = f - np.arange(0, m) / m
    return float(max(upper.max(), lower.max()))
