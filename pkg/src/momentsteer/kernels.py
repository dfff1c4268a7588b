"""Hot numeric kernels: numba-compiled loops with a pure-numpy fallback.

Backend selection happens once at import time.  Set the environment
variable ``MOMENTSTEER_DISABLE_NUMBA=1`` (or numba's own
``NUMBA_DISABLE_JIT=1``) to force the vectorised numpy path; otherwise
the numba path is used when numba imports cleanly.  Both paths implement
the same arithmetic.  Random streams are counter based (splitmix64
finalizer over a mixed base of seed, stream tag and agent index), so a
sample depends only on its coordinates, never on execution order.

Within one backend all outputs are bit-for-bit reproducible.  Across
backends the integer stream is identical, but values passed through
transcendental functions (cos, log, tan) may differ in the last ulp
because numpy's vectorised routines are not libm.

``benchmarks/bench_kernels.py`` times the two paths against each other.
"""

from __future__ import annotations

import math
import os

import numpy as np

_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_MASK = 0xFFFFFFFFFFFFFFFF
_U53 = 1.0 / (1 << 53)

# status codes returned by the rejection kernel
REJECT_OK = 0
REJECT_ENVELOPE = 1
REJECT_EXHAUSTED = 2

REF_GAUSSIAN = 0
REF_CAUCHY = 1


def _env_disabled() -> bool:
    for var in ("MOMENTSTEER_DISABLE_NUMBA", "NUMBA_DISABLE_JIT"):
        if os.environ.get(var, "").strip().lower() in ("1", "true", "yes", "on"):
            return True
    return False


NUMBA_ENABLED = not _env_disabled()
if NUMBA_ENABLED:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover - numba is a declared dependency
        NUMBA_ENABLED = False


def backend() -> str:
    return "numba" if NUMBA_ENABLED else "numpy"


# ---------------------------------------------------------------------------
# counter-based uniforms, numpy path (also used for non-hot seeding work)
# ---------------------------------------------------------------------------

def _mix64_np(z: np.ndarray) -> np.ndarray:
    z = z.astype(np.uint64, copy=True)
    with np.errstate(over="ignore"):
        z ^= z >> np.uint64(30)
        z *= np.uint64(_MIX1)
        z ^= z >> np.uint64(27)
        z *= np.uint64(_MIX2)
        z ^= z >> np.uint64(31)
    return z


def stream_bases(seed: int, stream: int, agents: np.ndarray) -> np.ndarray:
    """64-bit substream bases for (seed, stream, agent) coordinates."""
    with np.errstate(over="ignore"):
        s = _mix64_np(np.uint64((seed + 1) & _MASK) + np.zeros(len(agents), np.uint64))
        s = _mix64_np(s + np.uint64(((stream + 1) * _GAMMA) & _MASK))
        s = _mix64_np(s + (agents.astype(np.uint64) + np.uint64(1)) * np.uint64(_GAMMA))
    return s


def unit_uniforms(bases: np.ndarray, counters: np.ndarray) -> np.ndarray:
    """Uniform (0,1) draws at the given counter positions."""
    with np.errstate(over="ignore"):
        v = _mix64_np(bases + counters.astype(np.uint64) * np.uint64(_GAMMA))
    return ((v >> np.uint64(11)).astype(np.float64) + 0.5) * _U53


def seeded_uniforms(seed: int, count: int, stream: int = 0) -> np.ndarray:
    """`count` uniforms from one substream; used for schedule coefficients."""
    base = stream_bases(seed, stream, np.zeros(1, np.int64))
    bases = np.repeat(base, count)
    return unit_uniforms(bases, np.arange(count, dtype=np.uint64))


# ---------------------------------------------------------------------------
# power sums
# ---------------------------------------------------------------------------

def _power_sums_numpy(x: np.ndarray, order: int) -> np.ndarray:
    out = np.empty(order)
    p = np.ones_like(x)
    for l in range(order):
        p = p * x
        out[l] = p.mean()
    return out


# ---------------------------------------------------------------------------
# polynomial evaluation (ascending coefficients)
# ---------------------------------------------------------------------------

def _polyval_numpy(coef: np.ndarray, x: np.ndarray) -> np.ndarray:
    out = np.full_like(x, coef[-1], dtype=np.float64)
    for c in coef[-2::-1]:
        out = out * x + c
    return out


# ---------------------------------------------------------------------------
# acceptance-rejection sampling from p(u) = r(u) / (1 + Q(u))^2 on [lo, hi]
# with the reference density itself as the proposal.  The density ratio
# p/(M r) = inv_m / (1 + Q)^2 never touches r, so only the polynomial is
# evaluated per proposal.  Each attempt consumes exactly three uniforms.
# ---------------------------------------------------------------------------

def _rejection_numpy(count, seed, stream, ref_kind, loc, scale, qcoef,
                     lo, hi, inv_m, max_attempts):
    out = np.zeros(count)
    agents = np.arange(count, dtype=np.int64)
    bases = stream_bases(seed, stream, agents)
    counters = np.zeros(count, dtype=np.uint64)
    pending = agents.copy()
    for _ in range(max_attempts):
        if pending.size == 0:
            break
        b = bases[pending]
        c = counters[pending]
        u1 = unit_uniforms(b, c)
        u2 = unit_uniforms(b, c + np.uint64(1))
        u3 = unit_uniforms(b, c + np.uint64(2))
        counters[pending] += np.uint64(3)
        if ref_kind == REF_GAUSSIAN:
            z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
        else:
            z = np.tan(np.pi * (u1 - 0.5))
        x = loc + scale * z
        inside = (x >= lo) & (x <= hi)
        ap = np.zeros_like(x)
        if inside.any():
            q = _polyval_numpy(qcoef, x[inside])
            ratio = inv_m / ((1.0 + q) * (1.0 + q))
            if np.any(ratio > 1.0 + 1e-9):
                bad = x[inside][ratio > 1.0 + 1e-9][0]
                return out, REJECT_ENVELOPE, float(bad)
            ap[inside] = ratio
        accept = u3 < ap
        out[pending[accept]] = x[accept]
        pending = pending[~accept]
    if pending.size:
        return out, REJECT_EXHAUSTED, float(pending[0])
    return out, REJECT_OK, 0.0


if NUMBA_ENABLED:

    @njit(cache=True)
    def _mix64_jit(z):
        z = np.uint64(z)
        z ^= z >> np.uint64(30)
        z = z * np.uint64(_MIX1)
        z ^= z >> np.uint64(27)
        z = z * np.uint64(_MIX2)
        z ^= z >> np.uint64(31)
        return z

    @njit(cache=True)
    def _base_jit(seed, stream, agent):
        s = _mix64_jit(np.uint64(seed) + np.uint64(1))
        s = _mix64_jit(s + np.uint64(stream + 1) * np.uint64(_GAMMA))
        s = _mix64_jit(s + np.uint64(agent + 1) * np.uint64(_GAMMA))
        return s

    @njit(cache=True)
    def _unit_jit(base, counter):
        v = _mix64_jit(base + np.uint64(counter) * np.uint64(_GAMMA))
        return (float(v >> np.uint64(11)) + 0.5) * _U53

    @njit(cache=True)
    def _power_sums_jit(x, order):
        acc = np.zeros(order)
        for i in range(x.shape[0]):
            p = 1.0
            xi = x[i]
            for l in range(order):
                p *= xi
                acc[l] += p
        return acc / x.shape[0]

    @njit(cache=True)
    def _polyval_scalar_jit(coef, x):
        out = coef[coef.shape[0] - 1]
        for j in range(coef.shape[0] - 2, -1, -1):
            out = out * x + coef[j]
        return out

    @njit(cache=True)
    def _polyval_jit(coef, x):
        out = np.empty_like(x)
        for i in range(x.shape[0]):
            out[i] = _polyval_scalar_jit(coef, x[i])
        return out

    @njit(cache=True)
    def _rejection_jit(count, seed, stream, ref_kind, loc, scale, qcoef,
                       lo, hi, inv_m, max_attempts):
        out = np.zeros(count)
        for agent in range(count):
            base = _base_jit(seed, stream, agent)
            n = 0
            done = False
            for _ in range(max_attempts):
                u1 = _unit_jit(base, n)
                u2 = _unit_jit(base, n + 1)
                u3 = _unit_jit(base, n + 2)
                n += 3
                if ref_kind == REF_GAUSSIAN:
                    z = math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)
                else:
                    z = math.tan(math.pi * (u1 - 0.5))
                x = loc + scale * z
                if x < lo or x > hi:
                    continue
                q = _polyval_scalar_jit(qcoef, x)
                ap = inv_m / ((1.0 + q) * (1.0 + q))
                if ap > 1.0 + 1e-9:
                    return out, REJECT_ENVELOPE, x
                if u3 < ap:
                    out[agent] = x
                    done = True
                    break
            if not done:
                return out, REJECT_EXHAUSTED, float(agent)
        return out, REJECT_OK, 0.0

    power_sums = _power_sums_jit
    polyval_ascending = _polyval_jit
    rejection_kernel = _rejection_jit
else:
    power_sums = _power_sums_numpy
    polyval_ascending = _polyval_numpy
    rejection_kernel = _rejection_numpy
