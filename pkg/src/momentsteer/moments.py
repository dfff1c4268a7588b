"""Truncated power-moment vectors and their Hankel-matrix tests.

A moment vector is a plain 1-d float array ``(m_1, ..., m_2n)`` of even
length holding the raw power moments of a scalar random variable.  The
Hankel embedding pads it with ``m_0 = 1`` (unit mass), so every vector,
including differences of moment vectors, is interpreted as the moments
of a unit-mass measure.  Positive definiteness of that matrix is the
realizability test: it holds iff some nondegenerate probability density
on the real line has exactly these moments.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels

MAX_ORDER = 12  # highest supported moment order 2n


def as_moments(values) -> np.ndarray:
    """Validate and return a moment vector as a float array."""
    m = np.asarray(values, dtype=np.float64)
    if m.ndim != 1 or m.size < 2 or m.size % 2 != 0:
        raise ValueError(f"moment vector needs even length >= 2, got shape {m.shape}")
    if m.size > MAX_ORDER:
        raise ValueError(f"moment order {m.size} exceeds supported maximum {MAX_ORDER}")
    if not np.all(np.isfinite(m)):
        raise ValueError("moment vector contains NaN or Inf")
    return m


def hankel_matrix(m) -> np.ndarray:
    """(n+1) x (n+1) Hankel embedding of ``(m_1, ..., m_2n)`` with m_0 = 1."""
    m = as_moments(m)
    padded = np.concatenate(([1.0], m))
    r = np.arange(m.size // 2 + 1)
    return padded[r[:, None] + r[None, :]]


def default_tolerance(ha: np.ndarray) -> float:
    """Scale-aware eigenvalue tolerance for positive-definiteness checks."""
    return 1e-10 * (1.0 + np.abs(ha).max())


def realizable(m, tol: float | None = None) -> tuple[bool, float]:
    """Strict realizability test via the smallest Hankel eigenvalue.

    Returns ``(member, min_eigenvalue)`` where ``member`` is true iff the
    smallest eigenvalue of the embedding exceeds ``tol`` (default
    ``1e-10 * (1 + max |entry|)``).
    """
    ha = hankel_matrix(m)
    if tol is None:
        tol = default_tolerance(ha)
    elif tol < 0:
        raise ValueError("tolerance must be nonnegative")
    min_eig = float(np.linalg.eigvalsh(ha)[0])
    return min_eig > tol, min_eig


def lyapunov_consistent(m, rtol: float = 1e-12) -> bool:
    """Check the moment-growth inequality on the even orders.

    For a random variable, ``E[|u|^s]^(1/s)`` is nondecreasing in ``s``;
    even raw moments equal absolute moments, so the test applies to them
    directly.  Odd orders are skipped (raw odd moments carry signs).
    Negative even entries are rejected as malformed input.
    """
    m = as_moments(m)
    evens = m[1::2]
    if np.any(evens < 0):
        raise ValueError("even-order moments must be nonnegative")
    roots = [ev ** (1.0 / s) for ev, s in zip(evens, range(2, m.size + 1, 2))]
    return all(a <= b * (1.0 + rtol) + rtol for a, b in zip(roots, roots[1:]))


# ---------------------------------------------------------------------------
# distribution families
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Gaussian:
    mean: float
    variance: float

    def __post_init__(self):
        if self.variance <= 0:
            raise ValueError("gaussian variance must be positive")


@dataclass(frozen=True)
class Laplace:
    loc: float
    scale: float

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("laplace scale must be positive")


@dataclass(frozen=True)
class Mixture:
    weights: tuple
    components: tuple

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if len(self.weights) != len(self.components) or len(self.components) == 0:
            raise ValueError("mixture needs matching, nonempty weights and components")
        if np.any(w <= 0):
            raise ValueError("mixture weights must be positive")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"mixture weights sum to {w.sum()!r}, expected 1")


@dataclass(frozen=True)
class Empirical:
    samples: tuple

    def __post_init__(self):
        if len(self.samples) == 0:
            raise ValueError("empirical distribution needs at least one sample")


@dataclass(frozen=True)
class RawMoments:
    values: tuple = field(default_factory=tuple)

    def __post_init__(self):
        as_moments(np.asarray(self.values))


DistributionSpec = Gaussian | Laplace | Mixture | Empirical | RawMoments


def _central_to_raw(mean: float, central: np.ndarray) -> np.ndarray:
    """Raw moments 1..order from central moments (c_0 = 1) and the mean."""
    order = central.size - 1
    out = np.empty(order)
    for l in range(1, order + 1):
        acc = 0.0
        binom = 1.0
        for j in range(l + 1):
            acc += binom * central[j] * mean ** (l - j)
            binom = binom * (l - j) / (j + 1)
        out[l - 1] = acc
    return out


def _gaussian_central(variance: float, order: int) -> np.ndarray:
    c = np.zeros(order + 1)
    c[0] = 1.0
    for l in range(2, order + 1, 2):
        c[l] = c[l - 2] * (l - 1) * variance
    return c


def _laplace_central(scale: float, order: int) -> np.ndarray:
    c = np.zeros(order + 1)
    c[0] = 1.0
    for l in range(2, order + 1, 2):
        c[l] = c[l - 2] * l * (l - 1) * scale * scale
    return c


def distribution_moments(spec: DistributionSpec, order: int) -> np.ndarray:
    """Raw moments 1..order of a supported distribution.

    Gaussian and Laplace moments come from their central-moment formulas
    plus a binomial mean shift; mixtures average component moments.
    Empirical specs fall through to sample power sums, raw-moment specs
    are returned as given (the order must match).
    """
    if order < 2 or order % 2 or order > MAX_ORDER:
        raise ValueError(f"order must be even, in [2, {MAX_ORDER}]; got {order}")
    if isinstance(spec, Gaussian):
        return _central_to_raw(spec.mean, _gaussian_central(spec.variance, order))
    if isinstance(spec, Laplace):
        return _central_to_raw(spec.loc, _laplace_central(spec.scale, order))
    if isinstance(spec, Mixture):
        parts = [distribution_moments(c, order) for c in spec.components]
        return np.average(parts, axis=0, weights=np.asarray(spec.weights))
    if isinstance(spec, Empirical):
        return empirical_moments(np.asarray(spec.samples, dtype=np.float64), order)
    if isinstance(spec, RawMoments):
        m = as_moments(np.asarray(spec.values))
        if m.size != order:
            raise ValueError(f"raw moments have order {m.size}, requested {order}")
        return m
    raise TypeError(f"unsupported distribution spec: {spec!r}")


def empirical_moments(samples, order: int) -> np.ndarray:
    """Sample power sums ``m_l = mean(x^l)`` for l = 1..order."""
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("empty sample list")
    return kernels.power_sums(x, order)
