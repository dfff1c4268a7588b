"""Scenario execution and artifact emission.

``run_scenario`` drives the full pipeline (plan, per-step density
realization, sensitivity report, optional ensemble) and writes a CSV
bundle plus a JSON manifest into the configured output directory.  All
numbers are printed with 17 significant digits and every random stream
is counter based, so identical configs produce byte-identical bundles.
``emit_plot_data`` rebuilds figures purely from the CSVs.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from . import __version__, kernels
from .config import ScenarioConfig
from .dynamics import SystemSchedule
from .ensemble import steer_ensemble, write_trajectory_csv
from .moments import distribution_moments
from .planner import SteeringPlan, plan, terminal_control_sensitivity
from .realize import (build_grid, default_reference, fallback_reference,
                      realize_control, write_density_csv)


@dataclass
class RunResult:
    plan: SteeringPlan
    schedule: SystemSchedule
    densities: dict
    files: list[str]
    manifest: dict


def _fmt(value: float) -> str:
    return f"{value:.17g}"


def _write_moment_csv(path: str, rows: np.ndarray) -> None:
    order = rows.shape[1]
    header = "k," + ",".join(f"m{l}" for l in range(1, order + 1))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for step, row in enumerate(rows):
            fields = ",".join(_fmt(v) for v in row)
            fh.write(f"{step},{fields}\n")


def _build_schedule(cfg: ScenarioConfig) -> SystemSchedule:
    if cfg.a_values is not None:
        return SystemSchedule(cfg.horizon, cfg.order, cfg.a_values)
    return SystemSchedule.from_seed(cfg.horizon, cfg.order, cfg.a_seed,
                                    cfg.a_lo, cfg.a_hi)


def _realize_step(control, cfg: ScenarioConfig):
    """Realize one control moment vector per the configured family."""
    if cfg.reference == "cauchy":
        ref = fallback_reference(control)
    elif cfg.reference == "gaussian":
        ref = default_reference(control)
    else:
        ref = None  # gaussian default with cauchy retry
    grid = None
    if ref is not None:
        grid = build_grid(ref, cfg.quadrature_panels, cfg.quadrature_nodes,
                          cfg.truncation_halfwidth)
    est, result = realize_control(control, ref, tol=cfg.realize_tol, grid=grid)
    return est, result


def run_scenario(cfg: ScenarioConfig) -> RunResult:
    """Run the pipeline and write the artifact bundle.

    Partially written files are removed if any stage fails, so a bundle
    on disk is always complete.
    """
    out = cfg.output_dir
    os.makedirs(out, exist_ok=True)
    written: list[str] = []

    def emit(name: str, writer) -> str:
        path = os.path.join(out, name)
        writer(path)
        written.append(path)
        return path

    try:
        sched = _build_schedule(cfg)
        steering = plan(cfg.initial, cfg.terminal, sched, cfg.cost,
                        grad_tol=cfg.planner_grad_tol,
                        max_iter=cfg.planner_max_iter,
                        margin=cfg.feasibility_margin)

        densities = {}
        realization_log = []
        for j, control in enumerate(steering.controls):
            k = steering.waiting_steps + j
            est, result = _realize_step(control, cfg)
            densities[k] = est
            realization_log.append({
                "step": k,
                "reference_family": type(est.reference).__name__,
                "iterations": result.iterations,
                "gradient_norm": result.gradient_norm,
                "min_denominator": result.min_denominator,
                "min_quadratic_form": result.min_quadratic_form,
                "dual_objective": result.objective,
            })
            emit(f"density_step_{k}.csv",
                 lambda path, e=est: write_density_csv(e, path))

        emit("state_moments.csv",
             lambda path: _write_moment_csv(path, steering.states))
        emit("control_moments.csv",
             lambda path: _write_moment_csv(path, steering.controls_padded()))

        sensitivity = None
        if steering.controls.shape[0]:
            sensitivity = terminal_control_sensitivity(steering, sched)

            def write_sensitivity(path):
                with open(path, "w", encoding="utf-8", newline="\n") as fh:
                    fh.write("order,finite_difference,linear_approximation,"
                             "relative_error\n")
                    for i in range(sensitivity.finite_difference.size):
                        fh.write(f"{i + 1},"
                                 f"{_fmt(sensitivity.finite_difference[i])},"
                                 f"{_fmt(sensitivity.linear_approximation[i])},"
                                 f"{_fmt(sensitivity.relative_error[i])}\n")

            emit("sensitivity.csv", write_sensitivity)

        ensemble_info = None
        if cfg.ensemble:
            trajectory = steer_ensemble(steering, densities, sched,
                                        cfg.agents, cfg.ensemble_seed,
                                        cfg.initial)
            emit("ensemble.csv",
                 lambda path: write_trajectory_csv(trajectory, path))
            from .moments import empirical_moments

            ensemble_info = {
                "agents": cfg.agents,
                "seed": cfg.ensemble_seed,
                "terminal_moments": [float(v) for v in
                                     empirical_moments(trajectory[-1],
                                                       sched.moment_length)],
            }

        manifest = {
            "tool": "momentsteer",
            "version": __version__,
            "kernel_backend": kernels.backend(),
            "system": {
                "horizon": sched.horizon,
                "order": sched.order,
                "coefficients": [float(a) for a in sched.coefficients],
                "coefficient_seed": None if cfg.a_values is not None else cfg.a_seed,
            },
            "terminal_moments_target": [float(v) for v in
                                        distribution_moments(cfg.terminal,
                                                             sched.moment_length)],
            "plan": {
                "cost": steering.cost_name,
                "cost_value": steering.cost_value,
                "waiting_steps": steering.waiting_steps,
                "omega": [float(w) for w in steering.omega],
                "omega_convention": "first weight anchors the cost only",
                "start_profile": steering.start_profile,
                "optimizer_iterations": steering.optimizer_iterations,
                "optimizer_converged": steering.optimizer_converged,
                "total_energy": steering.total_energy,
                "terminal_weight_bound": steering.terminal_weight_bound,
                "state_certificates": [float(v) for v in steering.state_certificates],
                "control_certificates": [float(v) for v in steering.control_certificates],
            },
            "realization": realization_log,
            "sensitivity": None if sensitivity is None else {
                "cosine_similarity": sensitivity.cosine_similarity,
                "order2_sign_match": bool(
                    np.sign(sensitivity.finite_difference[1])
                    == np.sign(sensitivity.linear_approximation[1])),
            },
            "ensemble": ensemble_info,
        }

        def write_manifest(path):
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                json.dump(manifest, fh, indent=2, sort_keys=True)
                fh.write("\n")

        emit("manifest.json", write_manifest)
    except Exception:
        for path in written:
            if os.path.exists(path):
                os.remove(path)
        raise
    return RunResult(steering, sched, densities, written, manifest)


# ---------------------------------------------------------------------------
# figures, rebuilt purely from the CSV bundle
# ---------------------------------------------------------------------------

def _read_csv(path: str) -> tuple[list[str], np.ndarray]:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    return header, data


def emit_plot_data(bundle_dir: str, normalization_tol: float = 1e-4) -> list[str]:
    """Rebuild SVG figures from a bundle's CSVs.

    Also validates every density CSV: a trapezoid integral over the dump
    grid must be within ``normalization_tol`` of one.
    """
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    plt.rcParams["svg.hashsalt"] = "momentsteer"

    state_path = os.path.join(bundle_dir, "state_moments.csv")
    if not os.path.exists(state_path):
        raise FileNotFoundError(f"bundle incomplete: missing {state_path}")
    produced = []

    def save(fig, name):
        path = os.path.join(bundle_dir, name)
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        produced.append(path)

    for stem, title in (("state_moments", "state moments"),
                        ("control_moments", "control moments")):
        path = os.path.join(bundle_dir, f"{stem}.csv")
        if not os.path.exists(path):
            raise FileNotFoundError(f"bundle incomplete: missing {path}")
        header, data = _read_csv(path)
        steps, values = data[:, 0], data[:, 1:]
        order = values.shape[1]
        fig, axes = plt.subplots(2, (order + 1) // 2, figsize=(9, 6))
        for l, ax in zip(range(order), np.ravel(axes)):
            ax.plot(steps, values[:, l], marker="o")
            ax.set_xlabel("step")
            ax.set_ylabel(header[l + 1])
        fig.suptitle(title)
        fig.tight_layout()
        save(fig, f"plot_{stem}.svg")

    density_files = sorted(
        f for f in os.listdir(bundle_dir)
        if f.startswith("density_step_") and f.endswith(".csv"))
    if density_files:
        fig, ax = plt.subplots(figsize=(8, 5))
        for name in density_files:
            _, data = _read_csv(os.path.join(bundle_dir, name))
            u, p = data[:, 0], data[:, 1]
            mass = float(np.trapezoid(p, u))
            if abs(mass - 1.0) > normalization_tol:
                raise ValueError(
                    f"{name}: density integrates to {mass!r}, "
                    f"outside 1 +/- {normalization_tol}")
            step = name.removeprefix("density_step_").removesuffix(".csv")
            ax.plot(u, p, label=f"step {step}")
        ax.legend()
        ax.set_xlabel("u")
        ax.set_ylabel("density")
        fig.suptitle("realized control densities")
        fig.tight_layout()
        save(fig, "plot_densities.svg")

    ensemble_path = os.path.join(bundle_dir, "ensemble.csv")
    if os.path.exists(ensemble_path):
        _, data = _read_csv(ensemble_path)
        last = int(data[:, 0].max())
        terminal = data[data[:, 0] == last, 2]
        fig, ax = plt.subplots(figsize=(8, 5))
        ax.hist(terminal, bins=60, density=True)
        ax.set_xlabel("terminal position")
        ax.set_ylabel("frequency")
        fig.suptitle(f"terminal ensemble at step {last}")
        fig.tight_layout()
        save(fig, "plot_terminal_histogram.svg")

    return produced
