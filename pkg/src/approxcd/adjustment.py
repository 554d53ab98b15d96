"""Local-linear regression adjustment of accepted particles.

Fits ``theta_i = alpha + beta (s_i - s_obs) + e_i`` by weighted least squares
and shifts every particle to ``theta_i - beta (s_i - s_obs)``, removing the
part of its spread explained by the summary mismatch.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .core import ParticleSet, SingularDesignError

COND_LIMIT = 1e10


@dataclass(frozen=True)
class RegressionFit:
    intercept: np.ndarray  # (p,)
    slope: np.ndarray  # (p, d)
    residual_var: np.ndarray  # (p,)
    ridge: float = 0.0


def _offending_columns(x: np.ndarray, w: np.ndarray) -> list[int]:
    """Summary columns (0-based) that are constant or linearly dependent on earlier ones."""
    bad = []
    sw = np.sqrt(w)[:, None]
    kept = [np.ones(len(x))]
    for j in range(x.shape[1]):
        trial = np.column_stack(kept + [x[:, j]]) * sw
        if np.linalg.matrix_rank(trial, tol=1e-10 * max(1.0, np.abs(trial).max())) < trial.shape[1]:
            bad.append(j)
        else:
            kept.append(x[:, j])
    return bad


def fit_local_linear(particles: ParticleSet, s_obs, ridge_fallback: bool = False) -> RegressionFit:
    """Weighted least-squares fit of parameters on centred summaries.

    The normal equations are solved by Cholesky. A rank-deficient design
    raises :class:`SingularDesignError`; with ``ridge_fallback=True`` an
    ill-conditioned (but nonsingular) design gets a small ridge instead.
    """
    s_obs = np.asarray(s_obs, dtype=float).reshape(-1)
    m, d = particles.summaries.shape
    if len(s_obs) != d:
        raise ValueError(f"s_obs has length {len(s_obs)}, particles carry {d} summaries")
    x = particles.summaries - s_obs
    if m <= d + 1:
        raise ValueError(f"need more than d + 1 = {d + 1} particles, got {m}")
    w = particles.weights / particles.weights.sum()
    y = particles.thetas
    design = np.column_stack([np.ones(m), x])
    gram = design.T @ (design * w[:, None])
    rhs = design.T @ (y * w[:, None])

    bad = _offending_columns(x, w)
    if bad:
        raise SingularDesignError(bad)
    lam = 0.0
    cond = np.linalg.cond(gram)
    if cond > COND_LIMIT:
        if not ridge_fallback:
            raise SingularDesignError(
                [], f"regression design is ill-conditioned (condition number {cond:.3g}); "
                "pass ridge_fallback=True to regularize",
            )
        lam = 1e-8 * np.trace(gram[1:, 1:]) / d
        warnings.warn(f"ill-conditioned regression design (cond {cond:.3g}); adding ridge {lam:.3g}",
                      RuntimeWarning)
        gram = gram.copy()
        gram[1:, 1:] += lam * np.eye(d)
    coef = cho_solve(cho_factor(gram), rhs)  # (1 + d, p)
    resid = y - design @ coef
    return RegressionFit(
        intercept=coef[0].copy(),
        slope=coef[1:].T.copy(),
        residual_var=w @ (resid * resid),
        ridge=lam,
    )


def regression_adjust(particles: ParticleSet, fit: RegressionFit, s_obs) -> ParticleSet:
    """Return a copy with ``theta_i - beta (s_i - s_obs)`` and ``adjusted=True``."""
    s_obs = np.asarray(s_obs, dtype=float).reshape(-1)
    slope = np.atleast_2d(fit.slope)
    if slope.shape != (particles.dim, particles.summaries.shape[1]) or len(s_obs) != slope.shape[1]:
        raise ValueError(
            f"fit slope has shape {slope.shape}; particles need ({particles.dim}, {particles.summaries.shape[1]})"
        )
    shifted = particles.thetas - (particles.summaries - s_obs) @ slope.T
    return particles.replace(thetas=shifted, adjusted=True)


def adjust(particles: ParticleSet, s_obs, ridge_fallback: bool = False) -> ParticleSet:
    """Fit and apply the adjustment on the same particle set."""
    return regression_adjust(particles, fit_local_linear(particles, s_obs, ridge_fallback), s_obs)
