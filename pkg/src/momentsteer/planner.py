"""Wait-then-steer planning over the convex weight domain.

The planner first lets the system decay uncontrolled until the gap
between the target moments and the current state moments becomes
realizable (positive-definite Hankel).  From that point the state
trajectory is parametrized by nondecreasing weights on the straight
segment between the reached state and the target; the terminal state
hits the target exactly by construction.  Convex costs over the weights
are minimized by projected gradient descent on the monotone box, with a
feasibility oracle (deconvolve each step, check the control's Hankel
matrix) backing off any step that leaves the realizable set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import SystemSchedule, decay, deconvolve, transition_matrix
from .moments import (Empirical, Gaussian, Laplace, Mixture, RawMoments,
                      as_moments, default_tolerance, distribution_moments,
                      hankel_matrix, realizable)

_SPEC_TYPES = (Gaussian, Laplace, Mixture, Empirical, RawMoments)


class InfeasibleError(RuntimeError):
    """Base class for everything the steering pipeline cannot satisfy."""


class NoFeasibleWaitingTime(InfeasibleError):
    pass


class InfeasibleStart(InfeasibleError):
    pass


class InfeasibleAtZero(InfeasibleError):
    pass


# ---------------------------------------------------------------------------
# cost specifications
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Smoothness:
    """Sum of squared weight increments, anchored at 0 and 1."""


@dataclass(frozen=True)
class Energy:
    """Total second-order control moment over the steering steps."""


@dataclass(frozen=True)
class EnergyPlusState:
    """Control energy plus a weighted sum of state second moments."""

    state_weight: float = 1.0

    def __post_init__(self):
        if self.state_weight < 0:
            raise ValueError("state weight must be nonnegative")


@dataclass(frozen=True)
class GeneralCost:
    """Per-step weighted mix of first/second moments of state and control.

    Each field is one weight per steering step (scalars broadcast):
    alpha * E[x^2] + beta * E[u^2] + gamma * E[x] E[u] + epsilon * E[x]
    + zeta * E[u] + psi.  Zero weights are allowed so the other cost
    types arise as specializations.
    """

    alpha: tuple = (0.0,)
    beta: tuple = (1.0,)
    gamma: tuple = (0.0,)
    epsilon: tuple = (0.0,)
    zeta: tuple = (0.0,)
    psi: tuple = (0.0,)

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "epsilon", "zeta", "psi"):
            w = np.asarray(getattr(self, name), dtype=np.float64)
            if np.any(w < 0):
                raise ValueError(f"{name} weights must be nonnegative")

    def step_weights(self, steps: int) -> dict:
        out = {}
        for name in ("alpha", "beta", "gamma", "epsilon", "zeta", "psi"):
            w = np.asarray(getattr(self, name), dtype=np.float64).ravel()
            if w.size == 1:
                w = np.full(steps, w[0])
            elif w.size != steps:
                raise ValueError(
                    f"{name} has {w.size} weights for {steps} steering steps")
            out[name] = w
        return out


CostSpec = Smoothness | Energy | EnergyPlusState | GeneralCost


# ---------------------------------------------------------------------------
# planning context: everything fixed once the waiting time is known
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PlanContext:
    start: np.ndarray        # state moments when steering begins
    gap: np.ndarray          # target minus start, realizable by construction
    coefficients: np.ndarray  # a(k0), ..., a(K-1)
    waiting_steps: int

    @property
    def steps(self) -> int:
        return self.coefficients.size

    @property
    def target(self) -> np.ndarray:
        return self.start + self.gap


def moment_gap(target, state) -> np.ndarray:
    """Entrywise difference target - state."""
    t = as_moments(target)
    s = as_moments(state)
    if t.size != s.size:
        raise ValueError(f"order mismatch: target {t.size}, state {s.size}")
    return t - s


def waiting_time(initial, target, sched: SystemSchedule,
                 k_max: int | None = None, k_min: int = 0) -> int:
    """Smallest k with a realizable gap after k uncontrolled steps.

    The scan needs a coefficient per elapsed step, so ``k_max`` is capped
    by the schedule length; the planner leaves at least one steering step
    by scanning to horizon - 1.
    """
    x0 = as_moments(initial)
    t = as_moments(target)
    if k_max is None:
        k_max = sched.horizon - 1
    if k_max > sched.horizon:
        raise ValueError(
            f"k_max {k_max} needs coefficients beyond the {sched.horizon}-step schedule")
    state = decay(x0, sched.coefficients[:k_min]) if k_min else x0
    for k in range(k_min, k_max + 1):
        member, _ = realizable(moment_gap(t, state))
        if member:
            return k
        if k < k_max:
            state = decay(state, sched.coefficients[k:k + 1])
    raise NoFeasibleWaitingTime(
        f"gap never became realizable within {k_max} uncontrolled steps")


# ---------------------------------------------------------------------------
# weight-vector geometry
# ---------------------------------------------------------------------------

def _isotonic(y: np.ndarray) -> np.ndarray:
    """Nondecreasing least-squares fit (pool adjacent violators)."""
    vals: list[float] = []
    counts: list[int] = []
    for v in y:
        vals.append(float(v))
        counts.append(1)
        while len(vals) > 1 and vals[-2] > vals[-1]:
            v2, c2 = vals.pop(), counts.pop()
            v1, c1 = vals.pop(), counts.pop()
            vals.append((v1 * c1 + v2 * c2) / (c1 + c2))
            counts.append(c1 + c2)
    return np.repeat(vals, counts)


def project_weights(w: np.ndarray, upper: float = 1.0) -> np.ndarray:
    """Euclidean projection onto {0 <= w_1 <= ... <= w_M <= upper}."""
    return np.clip(_isotonic(np.asarray(w, dtype=np.float64)), 0.0, upper)


def interpolate_states(omega: np.ndarray, ctx: PlanContext) -> np.ndarray:
    """Planned states for the steering window, shape (steps + 1, 2n).

    Row 0 is the physical state when steering begins and the last row is
    the target; rows in between sit on the segment at weights
    ``omega[1:]``.  The first weight anchors the cost functions only; it
    does not move the (already realized) starting state.
    """
    states = np.empty((ctx.steps + 1, ctx.start.size))
    states[0] = ctx.start
    for j in range(1, ctx.steps):
        states[j] = ctx.start + omega[j] * ctx.gap
    states[ctx.steps] = ctx.target
    return states


def interpolate_controls(omega: np.ndarray, ctx: PlanContext) -> np.ndarray:
    """Control moments realizing the planned states, shape (steps, 2n)."""
    states = interpolate_states(omega, ctx)
    return np.array([
        deconvolve(states[j], states[j + 1], ctx.coefficients[j])
        for j in range(ctx.steps)
    ])


def control_certificates(omega: np.ndarray, ctx: PlanContext) -> np.ndarray:
    """Smallest Hankel eigenvalue of each step's control moments."""
    return np.array([realizable(u)[1] for u in interpolate_controls(omega, ctx)])


# Keep optimized controls this far inside the realizable cone, measured
# scale-free as the smallest eigenvalue of the diagonally normalized
# Hankel matrix; controls closer to the boundary defeat the density
# solver downstream.
FEASIBILITY_MARGIN = 0.02


def normalized_certificate(u) -> float:
    """Smallest eigenvalue of the Hankel matrix scaled to unit diagonal."""
    ha = hankel_matrix(u)
    d = 1.0 / np.sqrt(np.diag(ha))
    return float(np.linalg.eigvalsh(ha * np.outer(d, d))[0])


def _controls_feasible(omega: np.ndarray, ctx: PlanContext,
                       margin: float = FEASIBILITY_MARGIN) -> bool:
    for u in interpolate_controls(omega, ctx):
        ha = hankel_matrix(u)
        if np.any(np.diag(ha) <= 0.0):
            return False
        if not realizable(u)[0]:
            return False
        if normalized_certificate(u) <= margin:
            return False
    return True


# ---------------------------------------------------------------------------
# cost evaluation
# ---------------------------------------------------------------------------

def smoothness_hessian(steps: int) -> np.ndarray:
    """Constant tridiagonal Hessian of the smoothness cost: 4 / -2."""
    h = 4.0 * np.eye(steps)
    idx = np.arange(steps - 1)
    h[idx, idx + 1] = -2.0
    h[idx + 1, idx] = -2.0
    return h


def _smoothness_value(omega: np.ndarray) -> float:
    path = np.concatenate((omega, [1.0]))
    return float(np.sum(np.diff(path) ** 2) + omega[0] ** 2)


def _smoothness_gradient(omega: np.ndarray) -> np.ndarray:
    padded = np.concatenate(([0.0], omega, [1.0]))
    return 4.0 * padded[1:-1] - 2.0 * padded[:-2] - 2.0 * padded[2:]


def cost_value(spec: CostSpec, omega, ctx: PlanContext) -> float:
    """Evaluate a cost at the given weights.

    Moment-based costs are computed exactly: interpolate the states,
    deconvolve every step's control, sum the requested moment terms.
    """
    omega = np.asarray(omega, dtype=np.float64)
    if isinstance(spec, Smoothness):
        return _smoothness_value(omega)
    states = interpolate_states(omega, ctx)[:-1]
    controls = interpolate_controls(omega, ctx)
    if isinstance(spec, Energy):
        return float(controls[:, 1].sum())
    if isinstance(spec, EnergyPlusState):
        return float(controls[:, 1].sum() + spec.state_weight * states[:, 1].sum())
    if isinstance(spec, GeneralCost):
        w = spec.step_weights(ctx.steps)
        return float(np.sum(
            w["alpha"] * states[:, 1] + w["beta"] * controls[:, 1]
            + w["gamma"] * states[:, 0] * controls[:, 0]
            + w["epsilon"] * states[:, 0] + w["zeta"] * controls[:, 0]
            + w["psi"]))
    raise TypeError(f"unsupported cost spec: {spec!r}")


def cost_gradient(spec: CostSpec, omega, ctx: PlanContext,
                  fd_step: float = 1e-6) -> np.ndarray:
    """Analytic gradient for the smoothness cost, central differences
    (clipped to the [0, 1] box) for the moment-based costs."""
    omega = np.asarray(omega, dtype=np.float64)
    if isinstance(spec, Smoothness):
        return _smoothness_gradient(omega)
    grad = np.empty(omega.size)
    for j in range(omega.size):
        hi = min(omega[j] + fd_step, 1.0)
        lo = max(omega[j] - fd_step, 0.0)
        wp = omega.copy()
        wp[j] = hi
        wm = omega.copy()
        wm[j] = lo
        grad[j] = (cost_value(spec, wp, ctx) - cost_value(spec, wm, ctx)) / (hi - lo)
    return grad


# ---------------------------------------------------------------------------
# terminal-step feasibility bound (bisection diagnostic)
# ---------------------------------------------------------------------------

def max_terminal_weight(target, gap, a: float, tol: float = 1e-6) -> float:
    """Largest terminal weight keeping the final control's Hankel PSD.

    The state one step before the end sits at target - (1 - w) * gap;
    feasibility of the deconvolved final control is monotone in w, so a
    bisection pins the boundary to ``tol``.
    """
    t = as_moments(target)
    g = as_moments(gap)

    def psd(w: float) -> bool:
        u = deconvolve(t - (1.0 - w) * g, t, a)
        member, min_eig = realizable(u, tol=0.0)
        return member or min_eig >= -1e-12 * (1.0 + np.abs(u).max())

    if not psd(1e-9):
        raise InfeasibleAtZero(
            "final control infeasible even with a vanishing terminal weight")
    hi_probe = 1.0 - 1e-12
    if psd(hi_probe):
        return 1.0 - tol
    lo, hi = 1e-9, hi_probe
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if psd(mid):
            lo = mid
        else:
            hi = mid
    return lo


# ---------------------------------------------------------------------------
# weight optimization: projected gradient with a feasibility oracle
# ---------------------------------------------------------------------------

@dataclass
class OptimizeResult:
    omega: np.ndarray
    cost: float
    iterations: int
    converged: bool
    start_profile: str


def _start_profiles(steps: int):
    equis = np.arange(1, steps + 1) / (steps + 1.0)
    yield "zero", np.zeros(steps)
    yield "equispaced", equis
    for t in (0.5, 0.25, 0.75):
        yield f"equispaced*{t}", t * equis
    for c in (0.1, 0.5, 0.9):
        yield f"constant {c}", np.full(steps, c)


def _feasible_start(ctx: PlanContext, margin: float) -> tuple[str, np.ndarray]:
    for name, w in _start_profiles(ctx.steps):
        if _controls_feasible(w, ctx, margin):
            return name, w
    raise InfeasibleStart(
        "no candidate starting weights give realizable controls from the "
        "current waiting state")


def optimize_weights(spec: CostSpec, ctx: PlanContext, *, upper: float = 1.0,
                     grad_tol: float = 1e-8, max_iter: int = 10_000,
                     margin: float = FEASIBILITY_MARGIN) -> OptimizeResult:
    """Minimize the cost over the monotone weight box.

    Projected gradient descent with Armijo backtracking; any trial point
    whose deconvolved control sequence leaves the realizable set (by the
    given relative margin) halves the step.  Terminates on a small
    projected gradient or after ``max_iter`` iterations, returning the
    best feasible iterate.
    """
    profile, w = _feasible_start(ctx, margin)
    f = cost_value(spec, w, ctx)
    step = 1.0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        g = cost_gradient(spec, w, ctx)
        pg = w - project_weights(w - g, upper)
        if np.linalg.norm(pg) < grad_tol:
            converged = True
            break
        t = step
        moved = False
        for _ in range(60):
            cand = project_weights(w - t * g, upper)
            delta = w - cand
            if np.linalg.norm(delta) == 0.0:
                break
            f_cand = cost_value(spec, cand, ctx)
            if (f_cand <= f - 1e-4 * float(g @ delta)
                    and _controls_feasible(cand, ctx, margin)):
                w, f = cand, f_cand
                moved = True
                break
            t *= 0.5
        if not moved:
            break
        step = min(t * 2.0, 16.0)
    return OptimizeResult(w, f, it, converged, profile)


# ---------------------------------------------------------------------------
# full plans
# ---------------------------------------------------------------------------

@dataclass
class SteeringPlan:
    """A certified steering plan over the full horizon.

    ``states`` has one row per time step 0..K (row K equals the target
    exactly); ``controls`` covers the steering steps k0..K-1.  The
    certificates are the smallest Hankel eigenvalues of each state and
    control vector.  The first entry of ``omega`` anchors the cost
    functions only and defines no state.
    """

    waiting_steps: int
    omega: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    state_certificates: np.ndarray
    control_certificates: np.ndarray
    total_energy: float
    cost_name: str
    cost_value: float
    optimizer_iterations: int
    optimizer_converged: bool
    start_profile: str
    terminal_weight_bound: float | None

    @property
    def horizon(self) -> int:
        return self.states.shape[0] - 1

    def controls_padded(self) -> np.ndarray:
        """Controls for every step 0..K-1, zero rows before steering."""
        full = np.zeros((self.horizon, self.states.shape[1]))
        if self.controls.size:
            full[self.waiting_steps:] = self.controls
        return full


def _cost_name(spec: CostSpec) -> str:
    return type(spec).__name__.lower()


def _as_order_moments(spec_or_values, order: int) -> np.ndarray:
    if isinstance(spec_or_values, _SPEC_TYPES):
        return distribution_moments(spec_or_values, order)
    m = as_moments(spec_or_values)
    if m.size != order:
        raise ValueError(f"moment vector has order {m.size}, schedule expects {order}")
    return m


def _decay_trajectory(x0: np.ndarray, sched: SystemSchedule) -> np.ndarray:
    states = np.empty((sched.horizon + 1, x0.size))
    states[0] = x0
    for k in range(sched.horizon):
        states[k + 1] = decay(states[k], sched.coefficients[k:k + 1])
    return states


def plan(initial, terminal, sched: SystemSchedule,
         cost: CostSpec = Smoothness(), *, grad_tol: float = 1e-8,
         max_iter: int = 10_000,
         margin: float = FEASIBILITY_MARGIN) -> SteeringPlan:
    """Plan a full steering run: wait, optimize weights, deconvolve.

    ``initial`` and ``terminal`` may be distribution specs or raw moment
    vectors of the schedule's order.  Raises NoFeasibleWaitingTime when
    no waiting time within the horizon admits feasible steering.
    """
    order = sched.moment_length
    x0 = _as_order_moments(initial, order)
    target = _as_order_moments(terminal, order)
    for name, m in (("initial", x0), ("terminal", target)):
        member, min_eig = realizable(m)
        if not member:
            raise ValueError(
                f"{name} moments are not realizable (min Hankel eig {min_eig:.3e})")

    decay_states = _decay_trajectory(x0, sched)
    scale = 1.0 + np.abs(target).max()
    if np.abs(decay_states[-1] - target).max() <= 1e-12 * scale:
        # target sits on the uncontrolled decay path: nothing to steer
        return SteeringPlan(
            waiting_steps=sched.horizon, omega=np.empty(0),
            states=decay_states, controls=np.empty((0, order)),
            state_certificates=np.array([realizable(s)[1] for s in decay_states]),
            control_certificates=np.empty(0), total_energy=0.0,
            cost_name=_cost_name(cost), cost_value=0.0,
            optimizer_iterations=0, optimizer_converged=True,
            start_profile="null", terminal_weight_bound=None)

    k0 = 0
    last_error: InfeasibleError | None = None
    while k0 <= sched.horizon - 1:
        try:
            k0 = waiting_time(x0, target, sched, k_min=k0)
        except NoFeasibleWaitingTime as exc:
            raise NoFeasibleWaitingTime(str(exc)) from last_error
        ctx = PlanContext(
            start=decay_states[k0], gap=target - decay_states[k0],
            coefficients=sched.coefficients[k0:], waiting_steps=k0)
        try:
            result = optimize_weights(cost, ctx, grad_tol=grad_tol,
                                      max_iter=max_iter, margin=margin)
        except InfeasibleStart as exc:
            last_error = exc
            k0 += 1
            continue
        return _assemble(ctx, result, decay_states, cost, sched)
    raise NoFeasibleWaitingTime(
        "every feasible waiting time left an unsteerable window"
    ) from last_error


def _assemble(ctx: PlanContext, result: OptimizeResult,
              decay_states: np.ndarray, cost: CostSpec,
              sched: SystemSchedule) -> SteeringPlan:
    k0 = ctx.waiting_steps
    steer_states = interpolate_states(result.omega, ctx)
    controls = interpolate_controls(result.omega, ctx)
    states = np.vstack((decay_states[:k0], steer_states))
    try:
        bound = max_terminal_weight(ctx.target, ctx.gap, ctx.coefficients[-1])
    except InfeasibleAtZero:
        bound = None
    return SteeringPlan(
        waiting_steps=k0,
        omega=result.omega,
        states=states,
        controls=controls,
        state_certificates=np.array([realizable(s)[1] for s in states]),
        control_certificates=np.array([realizable(u)[1] for u in controls]),
        total_energy=float(controls[:, 1].sum()),
        cost_name=_cost_name(cost),
        cost_value=result.cost,
        optimizer_iterations=result.iterations,
        optimizer_converged=result.converged,
        start_profile=result.start_profile,
        terminal_weight_bound=bound)


# ---------------------------------------------------------------------------
# terminal-control sensitivity report
# ---------------------------------------------------------------------------

@dataclass
class SensitivityReport:
    finite_difference: np.ndarray
    linear_approximation: np.ndarray
    relative_error: np.ndarray
    cosine_similarity: float


def terminal_control_sensitivity(steering: SteeringPlan, sched: SystemSchedule,
                                 fd_step: float = 1e-5) -> SensitivityReport:
    """Compare the terminal control's weight sensitivity to -A(U) e.

    The finite difference re-deconvolves the final step at perturbed
    terminal weights; the approximation drops the transition-matrix
    derivative terms and keeps only -A(U(K-1)) e(k0).
    """
    k0 = steering.waiting_steps
    if steering.controls.shape[0] == 0:
        raise ValueError("plan has no steering steps")
    start = steering.states[k0]
    target = steering.states[-1]
    gap = target - start
    a_last = float(sched.coefficients[-1])
    # with a single steering step the last planned state is the physical
    # start, which sits at weight zero on the segment
    w = float(steering.omega[-1]) if steering.controls.shape[0] > 1 else 0.0

    def control_at(weight: float) -> np.ndarray:
        before = target - (1.0 - weight) * gap
        return deconvolve(before, target, a_last)

    fd = (control_at(w + fd_step) - control_at(w - fd_step)) / (2.0 * fd_step)
    approx = -transition_matrix(a_last, steering.controls[-1]) @ gap
    denom = np.maximum(np.abs(fd), 1e-300)
    rel = np.abs(fd - approx) / denom
    norms = np.linalg.norm(fd) * np.linalg.norm(approx)
    cosine = float(fd @ approx / norms) if norms > 0 else 1.0
    return SensitivityReport(fd, approx, rel, cosine)
