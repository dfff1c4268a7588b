"""Discrete-agent steering: sampling realized controls and stepping agents.

Agent randomness is counter based: the substream of agent ``i`` in
stream ``s`` is fully determined by ``(seed, s, i)``, so trajectories
are reproducible under any execution order.  Stream 0 draws the initial
positions; the controls of step ``k`` use stream ``k + 1``.  Controls
are sampled by acceptance-rejection with the realization's reference
density as the proposal: the density ratio reduces to
``1 / (M (1 + Q(u))^2)``, with the envelope constant ``M`` taken as 1.2
times the grid maximum of ``1 / (1 + Q)^2`` over the support.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .moments import (DistributionSpec, Empirical, Gaussian, Laplace, Mixture,
                      RawMoments)
from .planner import SteeringPlan
from .realize import (CauchyRef, DensityEstimate, GaussianRef,
                      quadratic_form_coeffs)

ENVELOPE_GRID = 4096
ENVELOPE_SAFETY = 1.2
MAX_ATTEMPTS = 100_000
_SEED_MASK = 0x7FFFFFFFFFFFFFFF


class EnvelopeViolation(RuntimeError):
    """A proposal beat the envelope: the cached maximum is stale."""


@dataclass(frozen=True)
class EnsembleState:
    positions: np.ndarray
    step: int
    seed: int

    def __post_init__(self):
        p = np.asarray(self.positions, dtype=np.float64)
        if p.ndim != 1 or p.size < 1:
            raise ValueError("ensemble needs at least one agent position")
        if not np.all(np.isfinite(p)):
            raise ValueError("agent positions must be finite")
        object.__setattr__(self, "positions", p)

    @property
    def count(self) -> int:
        return self.positions.size


# ---------------------------------------------------------------------------
# initial draws from the supported families (vectorized, counter based)
# ---------------------------------------------------------------------------

def _gaussian_from_units(u1, u2, mean, std):
    return mean + std * np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def _laplace_from_units(u1, loc, scale):
    centered = u1 - 0.5
    return loc - scale * np.sign(centered) * np.log1p(-2.0 * np.abs(centered))


def sample_distribution(spec: DistributionSpec, count: int, seed: int,
                        stream: int = 0) -> np.ndarray:
    """Deterministic i.i.d. draws; every agent consumes three uniforms."""
    seed &= _SEED_MASK
    agents = np.arange(count, dtype=np.int64)
    bases = kernels.stream_bases(seed, stream, agents)
    zeros = np.zeros(count, dtype=np.uint64)
    u1 = kernels.unit_uniforms(bases, zeros)
    u2 = kernels.unit_uniforms(bases, zeros + np.uint64(1))
    u3 = kernels.unit_uniforms(bases, zeros + np.uint64(2))
    return _transform_units(spec, u1, u2, u3)


def _transform_units(spec, u1, u2, u3):
    if isinstance(spec, Gaussian):
        return _gaussian_from_units(u1, u2, spec.mean, np.sqrt(spec.variance))
    if isinstance(spec, Laplace):
        return _laplace_from_units(u1, spec.loc, spec.scale)
    if isinstance(spec, Mixture):
        edges = np.cumsum(np.asarray(spec.weights, dtype=np.float64))
        choice = np.searchsorted(edges, u3, side="right")
        choice = np.minimum(choice, len(spec.components) - 1)
        out = np.empty_like(u1)
        for idx, comp in enumerate(spec.components):
            mask = choice == idx
            if mask.any():
                out[mask] = _transform_units(comp, u1[mask], u2[mask], u3[mask])
        return out
    if isinstance(spec, Empirical):
        pool = np.asarray(spec.samples, dtype=np.float64)
        return pool[np.minimum((u1 * pool.size).astype(np.int64), pool.size - 1)]
    if isinstance(spec, RawMoments):
        raise TypeError("raw moment specs carry no sampling rule")
    raise TypeError(f"unsupported distribution spec: {spec!r}")


# ---------------------------------------------------------------------------
# acceptance-rejection sampling from density estimates
# ---------------------------------------------------------------------------

def envelope_scale(est: DensityEstimate, grid_points: int = ENVELOPE_GRID,
                   safety: float = ENVELOPE_SAFETY) -> float:
    """Envelope constant M: safety factor times the grid max of p/r.

    The probe grid is uniform over the core of the reference (where the
    density ratio can peak) and falls back to the quadrature nodes for
    the rest of the support, which matters for the long-tailed Cauchy
    grids whose support dwarfs the region with any mass.
    """
    lo, hi = est.support
    center = est.reference.center
    width = 12.0 * est.reference.scale
    core = np.linspace(max(lo, center - width), min(hi, center + width),
                       grid_points)
    probe = np.concatenate((core, est.grid.nodes))
    ratio = 1.0 / (1.0 + est.quadratic_form(probe)) ** 2
    return safety * float(ratio.max())


def rejection_sample(est: DensityEstimate, count: int, seed: int,
                     stream: int = 0) -> np.ndarray:
    """``count`` i.i.d. draws from the estimate, deterministic in the seed."""
    if count < 1:
        raise ValueError("sample count must be positive")
    ref = est.reference
    if isinstance(ref, GaussianRef):
        kind, loc, scale = kernels.REF_GAUSSIAN, ref.mean, ref.scale
    elif isinstance(ref, CauchyRef):
        kind, loc, scale = kernels.REF_CAUCHY, ref.loc, ref.scale
    else:
        raise TypeError(f"unsupported reference: {ref!r}")
    lo, hi = est.support
    n = (est.lam.size - 1) // 2
    qcoef = np.ascontiguousarray(quadratic_form_coeffs(est.lam, n))
    inv_m = 1.0 / envelope_scale(est)
    samples, status, info = kernels.rejection_kernel(
        count, seed & _SEED_MASK, stream, kind, float(loc), float(scale),
        qcoef, float(lo), float(hi), inv_m, MAX_ATTEMPTS)
    if status == kernels.REJECT_ENVELOPE:
        raise EnvelopeViolation(
            f"proposal at u={info:.6g} exceeded the cached envelope; "
            "recompute the envelope and restart")
    if status == kernels.REJECT_EXHAUSTED:
        raise RuntimeError(
            f"agent {int(info)} found no acceptable sample in {MAX_ATTEMPTS} attempts")
    return samples


# ---------------------------------------------------------------------------
# agent updates
# ---------------------------------------------------------------------------

def advance(state: EnsembleState, a: float, control_samples) -> EnsembleState:
    """One step x <- a x + u for every agent."""
    u = np.asarray(control_samples, dtype=np.float64)
    if u.shape != state.positions.shape:
        raise ValueError(
            f"need {state.count} control samples, got {u.shape}")
    return EnsembleState(a * state.positions + u, state.step + 1, state.seed)


def steer_ensemble(steering: SteeringPlan, densities, sched, count: int,
                   seed: int, initial) -> np.ndarray:
    """Run the discrete steering loop; returns positions (K+1, count).

    ``densities`` maps each steering step k (waiting_steps <= k < K) to
    its realized control density.  ``initial`` is a distribution spec or
    an explicit position array.  Steps before the waiting time apply
    zero control; each steering step draws fresh control samples from
    its own stream, independent of the agent positions.
    """
    horizon = steering.horizon
    if isinstance(initial, np.ndarray):
        positions = np.asarray(initial, dtype=np.float64)
        if positions.size != count:
            raise ValueError("initial positions disagree with agent count")
    else:
        positions = sample_distribution(initial, count, seed, stream=0)
    state = EnsembleState(positions, 0, seed)
    trajectory = np.empty((horizon + 1, count))
    trajectory[0] = state.positions
    for k in range(horizon):
        a = float(sched.coefficients[k])
        if k < steering.waiting_steps:
            controls = np.zeros(count)
        else:
            controls = rejection_sample(densities[k], count, seed, stream=k + 1)
        state = advance(state, a, controls)
        trajectory[k + 1] = state.positions
    return trajectory


def write_trajectory_csv(trajectory: np.ndarray, path) -> None:
    """Rows (step, agent_index, position), one per agent per step."""
    steps, count = trajectory.shape
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("step,agent_index,position\n")
        for k in range(steps):
            row = trajectory[k]
            for i in range(count):
                fh.write(f"{k},{i},{row[i]:.17g}\n")
