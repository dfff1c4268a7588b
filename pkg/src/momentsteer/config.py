"""Flat key=value scenario configuration.

Schema (one ``key = value`` per line, ``#`` comments, unknown keys are
rejected with the offending line number):

    horizon = 4                   steps K (required)
    order = 2                     moment order n, vectors have length 2n
    a_values = 0.38,0.45,0.48     explicit coefficients (length K), or:
    a_seed = 6                    seed for i.i.d. uniform coefficients
    a_lo = 0.3                    coefficient range lower bound
    a_hi = 0.5                    coefficient range upper bound
    initial = gaussian(0, 1)      distribution expression (required)
    terminal = mixture(0.5 laplace(2,1), 0.5 laplace(-3,1))   (required)
    cost = smoothness             smoothness | energy | energy_plus_state | general
    state_weight = 1.0            energy_plus_state only
    cost_alpha = 0.4              general only: scalar or per-step list
    cost_beta = 1,1,4,18          (likewise gamma, epsilon, zeta, psi)
    planner_grad_tol = 1e-8
    planner_max_iter = 10000
    feasibility_margin = 1e-3
    reference = auto              auto | gaussian | cauchy
    truncation_halfwidth = 12
    quadrature_panels = 32
    quadrature_nodes = 64
    realize_tol = 1e-9
    ensemble = off                on | off
    agents = 1000
    ensemble_seed = 99
    output_dir = out

Distribution expressions: ``gaussian(mean, variance)``,
``laplace(loc, scale)``, ``raw_moments(m1, ..., m2n)``,
``empirical(x1, x2, ...)`` and ``mixture(w1 expr1, w2 expr2, ...)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .moments import (DistributionSpec, Empirical, Gaussian, Laplace, Mixture,
                      RawMoments)
from .planner import (CostSpec, Energy, EnergyPlusState, GeneralCost,
                      Smoothness)


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)
        self.line = line


@dataclass
class ScenarioConfig:
    horizon: int
    order: int
    initial: DistributionSpec
    terminal: DistributionSpec
    a_values: np.ndarray | None = None
    a_seed: int = 0
    a_lo: float = 0.3
    a_hi: float = 0.5
    cost: CostSpec = field(default_factory=Smoothness)
    planner_grad_tol: float = 1e-8
    planner_max_iter: int = 10_000
    feasibility_margin: float = 1e-3
    reference: str = "auto"
    truncation_halfwidth: float = 12.0
    quadrature_panels: int = 32
    quadrature_nodes: int = 64
    realize_tol: float = 1e-9
    ensemble: bool = False
    agents: int = 1000
    ensemble_seed: int = 99
    output_dir: str = "out"


_KEYS = {
    "horizon", "order", "a_values", "a_seed", "a_lo", "a_hi", "initial",
    "terminal", "cost", "state_weight", "cost_alpha", "cost_beta",
    "cost_gamma", "cost_epsilon", "cost_zeta", "cost_psi",
    "planner_grad_tol", "planner_max_iter", "feasibility_margin",
    "reference", "truncation_halfwidth", "quadrature_panels",
    "quadrature_nodes", "realize_tol", "ensemble", "agents",
    "ensemble_seed", "output_dir",
}


def _split_top_level(text: str) -> list[str]:
    parts = []
    depth = 0
    token = []
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
            if depth < 0:
                raise ValueError("unbalanced parentheses")
        if ch == "," and depth == 0:
            parts.append("".join(token))
            token = []
        else:
            token.append(ch)
    if depth != 0:
        raise ValueError("unbalanced parentheses")
    parts.append("".join(token))
    return [p.strip() for p in parts if p.strip()]


def parse_distribution(text: str) -> DistributionSpec:
    text = text.strip()
    if "(" not in text or not text.endswith(")"):
        raise ValueError(f"malformed distribution expression {text!r}")
    name, _, body = text.partition("(")
    name = name.strip().lower()
    body = body[:-1]
    if name == "gaussian":
        mean, var = (float(p) for p in _split_top_level(body))
        return Gaussian(mean, var)
    if name == "laplace":
        loc, scale = (float(p) for p in _split_top_level(body))
        return Laplace(loc, scale)
    if name == "raw_moments":
        return RawMoments(tuple(float(p) for p in _split_top_level(body)))
    if name == "empirical":
        return Empirical(tuple(float(p) for p in _split_top_level(body)))
    if name == "mixture":
        weights = []
        comps = []
        for part in _split_top_level(body):
            w_text, _, rest = part.partition(" ")
            weights.append(float(w_text))
            comps.append(parse_distribution(rest))
        return Mixture(tuple(weights), tuple(comps))
    raise ValueError(f"unknown distribution family {name!r}")


def _parse_floats(text: str) -> tuple[float, ...]:
    return tuple(float(p) for p in text.replace(",", " ").split())


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("on", "true", "1", "yes"):
        return True
    if lowered in ("off", "false", "0", "no"):
        return False
    raise ValueError(f"expected on/off, got {text!r}")


def _build_cost(raw: dict, lines: dict) -> CostSpec:
    name = raw.get("cost", "smoothness").strip().lower()
    weight_keys = ("cost_alpha", "cost_beta", "cost_gamma", "cost_epsilon",
                   "cost_zeta", "cost_psi")
    if name != "general":
        for key in weight_keys:
            if key in raw:
                raise ConfigError(f"{key} only applies to cost = general",
                                  lines.get(key))
    if name == "smoothness":
        return Smoothness()
    if name == "energy":
        return Energy()
    if name == "energy_plus_state":
        return EnergyPlusState(float(raw.get("state_weight", "1.0")))
    if name == "general":
        kwargs = {}
        for key in weight_keys:
            if key in raw:
                kwargs[key.removeprefix("cost_")] = _parse_floats(raw[key])
        return GeneralCost(**kwargs)
    raise ConfigError(f"unknown cost {name!r}", lines.get("cost"))


def parse_config(text: str, overrides: dict[str, str] | None = None) -> ScenarioConfig:
    """Parse and validate a scenario document; overrides win over keys."""
    raw: dict[str, str] = {}
    lines: dict[str, int] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"expected 'key = value', got {stripped!r}", lineno)
        key, _, value = stripped.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _KEYS:
            raise ConfigError(f"unknown key {key!r}", lineno)
        if key in raw:
            raise ConfigError(f"duplicate key {key!r}", lineno)
        if not value:
            raise ConfigError(f"empty value for {key!r}", lineno)
        raw[key] = value
        lines[key] = lineno
    for key, value in (overrides or {}).items():
        if key not in _KEYS:
            raise ConfigError(f"unknown override key {key!r}")
        raw[key] = value
        lines.pop(key, None)

    def fail(key: str, message: str):
        raise ConfigError(message, lines.get(key))

    for key in ("horizon", "order", "initial", "terminal"):
        if key not in raw:
            raise ConfigError(f"missing required key {key!r}")

    try:
        horizon = int(raw["horizon"])
        order = int(raw["order"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if horizon < 1:
        fail("horizon", "horizon must be at least 1")
    if order < 1:
        fail("order", "order must be at least 1")

    try:
        initial = parse_distribution(raw["initial"])
    except ValueError as exc:
        fail("initial", f"initial: {exc}")
    try:
        terminal = parse_distribution(raw["terminal"])
    except ValueError as exc:
        fail("terminal", f"terminal: {exc}")

    a_lo = float(raw.get("a_lo", "0.3"))
    a_hi = float(raw.get("a_hi", "0.5"))
    if not 0.0 < a_lo <= a_hi < 1.0:
        fail("a_lo", f"empty coefficient range [{a_lo}, {a_hi}]")
    a_values = None
    if "a_values" in raw:
        a_values = np.asarray(_parse_floats(raw["a_values"]))
        if a_values.size != horizon:
            fail("a_values",
                 f"need {horizon} coefficients, got {a_values.size}")
        if np.any(a_values <= 0.0) or np.any(a_values >= 1.0):
            fail("a_values", "coefficients must lie in (0, 1)")

    cost = _build_cost(raw, lines)
    reference = raw.get("reference", "auto").strip().lower()
    if reference not in ("auto", "gaussian", "cauchy"):
        fail("reference", f"unknown reference family {reference!r}")

    try:
        return ScenarioConfig(
            horizon=horizon, order=order, initial=initial, terminal=terminal,
            a_values=a_values, a_seed=int(raw.get("a_seed", "0")),
            a_lo=a_lo, a_hi=a_hi, cost=cost,
            planner_grad_tol=float(raw.get("planner_grad_tol", "1e-8")),
            planner_max_iter=int(raw.get("planner_max_iter", "10000")),
            feasibility_margin=float(raw.get("feasibility_margin", "1e-3")),
            reference=reference,
            truncation_halfwidth=float(raw.get("truncation_halfwidth", "12")),
            quadrature_panels=int(raw.get("quadrature_panels", "32")),
            quadrature_nodes=int(raw.get("quadrature_nodes", "64")),
            realize_tol=float(raw.get("realize_tol", "1e-9")),
            ensemble=_parse_bool(raw.get("ensemble", "off")),
            agents=int(raw.get("agents", "1000")),
            ensemble_seed=int(raw.get("ensemble_seed", "99")),
            output_dir=raw.get("output_dir", "out"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
