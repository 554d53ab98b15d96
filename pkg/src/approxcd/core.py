"""Shared types, random streams and small numeric helpers.

Parameters and summaries are carried as plain float arrays: a parameter point
is a length-``p`` vector and a summary a length-``d`` vector. Batches stack
them row-wise, so ``thetas`` has shape ``(m, p)`` and ``summaries``
``(m, d)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Protocol, Sequence, runtime_checkable

import numpy as np


class ApproxCDError(Exception):
    """Base class for errors raised by this package."""


class DegenerateSampleError(ApproxCDError):
    """Raised when a weighted sample has no usable mass."""


class ToleranceTooSmallError(ApproxCDError):
    """No proposal was accepted before the attempt budget ran out."""

    def __init__(self, attempts: int, tolerance: float, min_distance: float):
        self.attempts = attempts
        self.tolerance = tolerance
        self.min_distance = min_distance
        super().__init__(
            f"no acceptances after {attempts} attempts at tolerance {tolerance:g} "
            f"(closest simulated summary at distance {min_distance:g})"
        )


class SupportMismatchError(ApproxCDError):
    """Importance weights are all zero or non-finite."""


class SingularDesignError(ApproxCDError):
    def __init__(self, columns: Sequence[int], message: str = ""):
        self.columns = list(columns)
        msg = message or f"singular regression design; offending summary columns {self.columns}"
        super().__init__(msg)


class DomainError(ApproxCDError, ValueError):
    """Parameter outside a model's domain."""


class ValidationError(ApproxCDError, ValueError):
    """Invalid configuration."""


# ---------------------------------------------------------------------------
# random streams


@dataclass(frozen=True)
class RngStream:
    """Addressable random stream.

    A stream is identified by a master seed and an integer path. The path is
    hashed together with the seed into a 128-bit Philox key, so any two
    distinct paths give statistically independent streams and the same
    ``(seed, path)`` always reproduces the same draws, independent of the
    order in which streams are created or which worker consumes them.
    """

    seed: int
    path: tuple[int, ...] = ()

    def __post_init__(self):
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if any(i < 0 for i in self.path):
            raise ValueError("stream indices must be non-negative")

    def spawn(self, *index: int) -> "RngStream":
        return RngStream(self.seed, self.path + tuple(int(i) for i in index))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=int(self.seed), spawn_key=self.path)
        key = ss.generate_state(2, dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))


def substream(master_seed: int, index: int) -> RngStream:
    """Return the stream with the given index under ``master_seed``."""
    if index < 0:
        raise ValueError("index must be >= 0")
    return RngStream(int(master_seed), (int(index),))


def as_stream(rng: RngStream | int) -> RngStream:
    if isinstance(rng, RngStream):
        return rng
    return RngStream(int(rng))


# ---------------------------------------------------------------------------
# particles


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ParticleSet:
    """Accepted draws with their simulated summaries and weights.

    ``attempts`` counts every proposal generated, accepted or not, so
    ``acceptance_proportion`` is the empirical acceptance rate.
    """

    thetas: np.ndarray
    summaries: np.ndarray
    weights: np.ndarray
    attempts: int
    tolerance: float
    adjusted: bool = False
    info: dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        thetas = np.atleast_2d(np.asarray(self.thetas, dtype=float))
        if thetas.shape[0] == 1 and np.ndim(self.thetas) == 1:
            thetas = thetas.T
        summaries = np.asarray(self.summaries, dtype=float)
        if summaries.ndim == 1:
            summaries = summaries[:, None]
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        m = thetas.shape[0]
        if m < 1:
            raise DegenerateSampleError("particle set is empty")
        if summaries.shape[0] != m or weights.shape[0] != m:
            raise ValueError("thetas, summaries and weights must have the same length")
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise ValueError("weights must be finite and non-negative")
        if self.attempts < m:
            raise ValueError(f"attempts ({self.attempts}) < number of particles ({m})")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be > 0")
        object.__setattr__(self, "thetas", _frozen(thetas))
        object.__setattr__(self, "summaries", _frozen(summaries))
        object.__setattr__(self, "weights", _frozen(weights))

    def __len__(self) -> int:
        return self.thetas.shape[0]

    @property
    def dim(self) -> int:
        return self.thetas.shape[1]

    @property
    def acceptance_proportion(self) -> float:
        return len(self) / self.attempts

    @property
    def ess(self) -> float:
        return effective_sample_size(self.weights)

    def replace(self, **changes) -> "ParticleSet":
        kw = dict(
            thetas=self.thetas,
            summaries=self.summaries,
            weights=self.weights,
            attempts=self.attempts,
            tolerance=self.tolerance,
            adjusted=self.adjusted,
            info=dict(self.info),
        )
        kw.update(changes)
        return ParticleSet(**kw)


def effective_sample_size(weights: np.ndarray) -> float:
    w = np.asarray(weights, dtype=float)
    s = w.sum()
    if s <= 0:
        return 0.0
    return float(s * s / np.dot(w, w))


def _normalized(weights: np.ndarray) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    total = w.sum()
    if not np.isfinite(total) or total <= 0:
        raise DegenerateSampleError("total weight is zero")
    return w / total


def weighted_mean(particles: ParticleSet) -> np.ndarray:
    """Weighted mean ``sum(w_i theta_i) / sum(w_i)`` of a particle set."""
    w = _normalized(particles.weights)
    return w @ particles.thetas


def weighted_cov(x: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
    """Weighted covariance of the rows of ``x`` (normalized by total weight)."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    w = _normalized(np.ones(len(x)) if weights is None else weights)
    mu = w @ x
    xc = x - mu
    return (xc * w[:, None]).T @ xc


def weighted_var(x: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
    return np.diag(weighted_cov(x, weights))


@runtime_checkable
class GenerativeModel(Protocol):
    """What the samplers need from a model.

    ``simulate_summaries`` is the batch entry point used by the samplers; a
    model may implement it by looping ``summarize(simulate(...))`` or through
    an exact shortcut for the summary's sampling distribution. Rows for
    parameters outside the model domain come back as NaN.
    """

    n: int
    dim_theta: int
    dim_summary: int

    def simulate(self, theta: np.ndarray, rng: np.random.Generator) -> np.ndarray: ...

    def summarize(self, data: np.ndarray) -> np.ndarray: ...

    def simulate_summaries(self, thetas: np.ndarray, rng: np.random.Generator) -> np.ndarray: ...
