"""Smoothing kernels used for accept/reject decisions.

Acceptance uses the mode-normalized kernel ``K(u/eps) / K(0)``, so the most
favourable proposal is accepted with probability exactly one. The unscaled
``eps**-d K(u/eps)`` is generally not a probability for small ``eps``; the
rescaling by a constant does not change the distribution of accepted draws.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import gamma, pi

import numpy as np

FAMILIES = ("gaussian", "uniform", "epanechnikov")


def unit_ball_volume(d: int) -> float:
    return pi ** (d / 2) / gamma(d / 2 + 1)


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family, tolerance ``epsilon`` and a d x d scale matrix.

    Distances are measured as ``||u||_L = sqrt(u' L^{-1} u)`` with ``L`` the
    scale matrix (identity when omitted).
    """

    family: str = "gaussian"
    epsilon: float = 1.0
    scale: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}; expected one of {FAMILIES}")
        if not (np.isfinite(self.epsilon) and self.epsilon > 0):
            raise ValueError("epsilon must be a finite positive number")
        if self.scale is not None:
            lam = np.atleast_2d(np.asarray(self.scale, dtype=float))
            if lam.shape[0] != lam.shape[1] or not np.allclose(lam, lam.T):
                raise ValueError("scale matrix must be symmetric")
            try:
                chol = np.linalg.cholesky(lam)
            except np.linalg.LinAlgError:
                raise ValueError("scale matrix must be positive definite") from None
            lam.setflags(write=False)
            object.__setattr__(self, "scale", lam)
            object.__setattr__(self, "_chol", chol)

    def with_epsilon(self, epsilon: float) -> "KernelSpec":
        return KernelSpec(self.family, epsilon, self.scale)

    def with_scale(self, scale: np.ndarray | None) -> "KernelSpec":
        return KernelSpec(self.family, self.epsilon, scale)

    def norm(self, u: np.ndarray) -> np.ndarray:
        """Scaled norm of each row of ``u`` (a single vector gives a scalar)."""
        u = np.asarray(u, dtype=float)
        single = u.ndim < 2
        u2 = u.reshape(1, -1) if single else u
        if not np.all(np.isfinite(u2)):
            raise ValueError("summary difference contains non-finite values")
        if self.scale is None:
            r = np.sqrt(np.einsum("ij,ij->i", u2, u2))
        else:
            if u2.shape[1] != self.scale.shape[0]:
                raise ValueError(f"dimension mismatch: u has {u2.shape[1]} columns, scale is {self.scale.shape}")
            z = np.linalg.solve(self._chol, u2.T)
            r = np.sqrt(np.sum(z * z, axis=0))
        return float(r[0]) if single else r

    def _profile(self, r: np.ndarray) -> np.ndarray:
        # kernel as a function of the standardized radius, with K(0) = 1
        if self.family == "gaussian":
            return np.exp(-0.5 * r * r)
        if self.family == "uniform":
            return (r <= 1.0).astype(float)
        return np.clip(1.0 - r * r, 0.0, None)


def accept_probability(kernel: KernelSpec, u: np.ndarray) -> np.ndarray | float:
    """Acceptance probability ``K(u/eps) / K(0)`` in [0, 1].

    ``u`` is a summary difference ``s - s_obs``; pass a 2-d array to evaluate
    many differences at once.
    """
    r = np.asarray(kernel.norm(u)) / kernel.epsilon
    p = kernel._profile(r)
    return float(p) if p.ndim == 0 else p


def density(kernel: KernelSpec, u: np.ndarray) -> np.ndarray | float:
    """Normalized kernel density ``K_eps(u)`` on R^d."""
    u = np.asarray(u, dtype=float)
    d = u.shape[-1] if u.ndim else 1
    r = np.asarray(kernel.norm(u)) / kernel.epsilon
    if kernel.family == "gaussian":
        const = (2 * pi) ** (-d / 2)
    elif kernel.family == "uniform":
        const = 1.0 / unit_ball_volume(d)
    else:
        const = (d + 2) / (2 * unit_ball_volume(d))
    det = 1.0 if kernel.scale is None else float(np.linalg.det(kernel.scale))
    out = const * kernel._profile(r) / (kernel.epsilon ** d * np.sqrt(det))
    return float(out) if out.ndim == 0 else out


def mad_scale(summaries: np.ndarray) -> np.ndarray:
    """Diagonal scale matrix from componentwise median absolute deviations.

    Used to put summaries on a common footing before measuring distances.
    Components with zero MAD fall back to the standard deviation, then to 1.
    """
    s = np.asarray(summaries, dtype=float)
    if s.ndim == 1:
        s = s[:, None]
    s = s[np.all(np.isfinite(s), axis=1)]
    med = np.median(s, axis=0)
    mad = np.median(np.abs(s - med), axis=0)
    sd = s.std(axis=0)
    scale = np.where(mad > 0, mad, np.where(sd > 0, sd, 1.0))
    return np.diag(scale ** 2)
