"""Exact moment propagation through x' = a x + u with independent control.

With x and u independent, every raw moment of x' is a finite binomial
sum of products of lower-order moments, so the truncated moment vector
evolves linearly: X' = A(U) X + U with a lower-triangular transition
matrix whose diagonal is (a, a^2, ..., a^2n).  That triangularity makes
the inverse problem (recovering U from consecutive states) an exact
back-substitution; it always succeeds algebraically, and whether the
result is realizable is a separate Hankel check for the caller.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import kernels
from .moments import MAX_ORDER, as_moments


@lru_cache(maxsize=None)
def binomial_table(order: int) -> np.ndarray:
    """Pascal triangle up to ``order`` as exact small integers in floats."""
    if order > MAX_ORDER:
        raise ValueError(f"order {order} exceeds supported maximum {MAX_ORDER}")
    table = np.zeros((order + 1, order + 1))
    for l in range(order + 1):
        table[l, 0] = 1.0
        for j in range(1, l + 1):
            table[l, j] = table[l - 1, j - 1] + table[l - 1, j]
    return table


def _check_coefficient(a: float) -> float:
    a = float(a)
    if not 0.0 < a < 1.0:
        raise ValueError(f"system coefficient must lie in (0, 1), got {a!r}")
    return a


@dataclass(frozen=True)
class SystemSchedule:
    """Horizon, moment order n and the per-step coefficients a(0..K-1)."""

    horizon: int
    order: int
    coefficients: np.ndarray

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.order < 1 or 2 * self.order > MAX_ORDER:
            raise ValueError(f"order must be in [1, {MAX_ORDER // 2}]")
        a = np.asarray(self.coefficients, dtype=np.float64)
        if a.shape != (self.horizon,):
            raise ValueError(
                f"need exactly {self.horizon} coefficients, got {a.shape}")
        for v in a:
            _check_coefficient(v)
        object.__setattr__(self, "coefficients", a)

    @property
    def moment_length(self) -> int:
        return 2 * self.order

    @classmethod
    def from_seed(cls, horizon: int, order: int, seed: int,
                  lo: float = 0.3, hi: float = 0.5) -> "SystemSchedule":
        """Draw a(k) i.i.d. uniform on [lo, hi] from a deterministic stream."""
        if not 0.0 < lo <= hi < 1.0:
            raise ValueError(f"empty coefficient range [{lo}, {hi}]")
        u = kernels.seeded_uniforms(seed, horizon, stream=0x5C4ED)
        return cls(horizon, order, lo + (hi - lo) * u)


def transition_matrix(a: float, control_moments) -> np.ndarray:
    """Lower-triangular 2n x 2n transition matrix of the moment system.

    Entry (l, j) for 1 <= j <= l is C(l, j) a^j m_{l-j}(u) with m_0(u) = 1.
    """
    a = _check_coefficient(a)
    u = as_moments(control_moments)
    order = u.size
    binom = binomial_table(order)
    padded = np.concatenate(([1.0], u))
    mat = np.zeros((order, order))
    for l in range(1, order + 1):
        for j in range(1, l + 1):
            mat[l - 1, j - 1] = binom[l, j] * a ** j * padded[l - j]
    return mat


def propagate(state, control, a: float) -> np.ndarray:
    """Moment vector of a x + u for independent x, u."""
    a = _check_coefficient(a)
    x = as_moments(state)
    u = as_moments(control)
    if x.size != u.size:
        raise ValueError(f"order mismatch: state {x.size}, control {u.size}")
    order = x.size
    binom = binomial_table(order)
    px = np.concatenate(([1.0], x))
    pu = np.concatenate(([1.0], u))
    out = np.empty(order)
    for l in range(1, order + 1):
        acc = 0.0
        for j in range(l + 1):
            acc += binom[l, j] * a ** j * px[j] * pu[l - j]
        out[l - 1] = acc
    return out


def deconvolve(state, state_next, a: float) -> np.ndarray:
    """The unique control moments mapping ``state`` to ``state_next``.

    Solved order by order: m_l(u) = m_l(x') - sum_{j=1..l} C(l,j) a^j
    m_j(x) m_{l-j}(u), reusing the lower-order control moments already
    recovered.  Purely algebraic; the result need not be realizable.
    """
    a = _check_coefficient(a)
    x = as_moments(state)
    xn = as_moments(state_next)
    if x.size != xn.size:
        raise ValueError(f"order mismatch: state {x.size}, next {xn.size}")
    order = x.size
    binom = binomial_table(order)
    px = np.concatenate(([1.0], x))
    pu = np.zeros(order + 1)
    pu[0] = 1.0
    for l in range(1, order + 1):
        acc = xn[l - 1]
        for j in range(1, l + 1):
            acc -= binom[l, j] * a ** j * px[j] * pu[l - j]
        pu[l] = acc
    return pu[1:]


def decay(state, a_seq) -> np.ndarray:
    """Moments after running uncontrolled through the given coefficients."""
    x = as_moments(state)
    factor = 1.0
    for a in np.atleast_1d(np.asarray(a_seq, dtype=np.float64)):
        factor *= _check_coefficient(a)
    powers = factor ** np.arange(1, x.size + 1)
    return x * powers
