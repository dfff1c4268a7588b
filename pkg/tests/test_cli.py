import json
import os
import xml.etree.ElementTree as ET

import numpy as np
import pytest

import momentsteer as ms
from momentsteer.cli import main
from momentsteer.config import ConfigError, parse_config, parse_distribution
from momentsteer.runner import emit_plot_data, run_scenario

SCENARIO_A = """\
horizon = 4
order = 2
a_seed = 6
initial = gaussian(0, 1)
terminal = mixture(0.5 laplace(2, 1), 0.5 laplace(-3, 1))
cost = smoothness
ensemble_seed = 3
"""


class TestParseConfig:
    def test_minimal_defaults(self):
        cfg = parse_config(SCENARIO_A)
        assert cfg.horizon == 4 and cfg.order == 2
        assert cfg.agents == 1000
        assert cfg.planner_grad_tol == 1e-8
        assert cfg.ensemble is False
        assert isinstance(cfg.cost, ms.Smoothness)
        assert cfg.initial == ms.Gaussian(0.0, 1.0)

    def test_empty_coefficient_range(self):
        text = SCENARIO_A + "a_lo = 0.6\na_hi = 0.5\n"
        with pytest.raises(ConfigError, match="empty coefficient range"):
            parse_config(text)

    def test_alist_length_mismatch(self):
        text = SCENARIO_A + "a_values = 0.4, 0.5\n"
        with pytest.raises(ConfigError, match="need 4 coefficients"):
            parse_config(text)

    def test_unknown_key_line_anchored(self):
        with pytest.raises(ConfigError, match="line 2"):
            parse_config("horizon = 4\nwat = 9\n")

    def test_duplicate_key(self):
        with pytest.raises(ConfigError, match="duplicate"):
            parse_config("horizon = 4\nhorizon = 5\n")

    def test_overrides_win(self):
        cfg = parse_config(SCENARIO_A, {"agents": "50", "ensemble": "on"})
        assert cfg.agents == 50 and cfg.ensemble is True

    def test_general_cost_weights(self):
        text = SCENARIO_A.replace("cost = smoothness", "cost = general") + (
            "cost_alpha = 0.4\ncost_beta = 1, 1, 4, 18\n")
        cfg = parse_config(text)
        assert isinstance(cfg.cost, ms.GeneralCost)
        assert cfg.cost.beta == (1.0, 1.0, 4.0, 18.0)

    def test_cost_weights_rejected_elsewhere(self):
        with pytest.raises(ConfigError, match="cost_beta"):
            parse_config(SCENARIO_A + "cost_beta = 1\n")

    def test_distribution_grammar(self):
        assert parse_distribution("laplace(2, 1)") == ms.Laplace(2.0, 1.0)
        mix = parse_distribution(
            "mixture(0.25 gaussian(0,1), 0.75 mixture(0.5 laplace(1,2), 0.5 gaussian(3,4)))")
        assert isinstance(mix.components[1], ms.Mixture)
        with pytest.raises(ValueError):
            parse_distribution("gamma(1, 2)")
        with pytest.raises(ValueError):
            parse_distribution("gaussian(1, 2")


@pytest.fixture(scope="module")
def bundle_a(tmp_path_factory):
    out = tmp_path_factory.mktemp("bundle_a")
    cfg = parse_config(SCENARIO_A, {"ensemble": "on",
                                    "output_dir": str(out)})
    result = run_scenario(cfg)
    return out, result


class TestRunScenario:
    def test_bundle_contents(self, bundle_a):
        out, result = bundle_a
        names = sorted(os.listdir(out))
        assert "state_moments.csv" in names
        assert "control_moments.csv" in names
        assert "ensemble.csv" in names
        assert "manifest.json" in names
        assert "sensitivity.csv" in names
        assert sum(n.startswith("density_step_") for n in names) == 4

    def test_terminal_row_matches_target(self, bundle_a):
        out, _ = bundle_a
        rows = np.loadtxt(out / "state_moments.csv", delimiter=",",
                          skiprows=1)
        np.testing.assert_allclose(rows[-1, 1:], [-0.5, 8.5, -12.5, 150.5],
                                   rtol=1e-12)

    def test_manifest_energy_consistent(self, bundle_a):
        out, _ = bundle_a
        manifest = json.loads((out / "manifest.json").read_text())
        controls = np.loadtxt(out / "control_moments.csv", delimiter=",",
                              skiprows=1)
        recomputed = controls[:, 2].sum()
        assert abs(manifest["plan"]["total_energy"] - recomputed) <= 1e-12
        assert manifest["kernel_backend"] in ("numba", "numpy")
        assert manifest["sensitivity"]["order2_sign_match"] is True

    def test_cost_ordering_directional(self, tmp_path):
        energies = {}
        for name, extra in (
                ("energy", "cost = energy\n"),
                ("weighted", "cost = general\ncost_alpha = 0.4\n"
                             "cost_beta = 1, 1, 4, 18\n"),
                ("smoothness", "cost = smoothness\n")):
            text = SCENARIO_A.replace("cost = smoothness\n", extra)
            cfg = parse_config(text, {"output_dir": str(tmp_path / name)})
            result = run_scenario(cfg)
            energies[name] = result.manifest["plan"]["total_energy"]
        assert energies["energy"] <= energies["weighted"] <= energies["smoothness"]

    def test_cauchy_reference_family(self, tmp_path):
        text = SCENARIO_A.replace("cost = smoothness", "cost = energy") + (
            "reference = cauchy\n")
        cfg = parse_config(text, {"output_dir": str(tmp_path),
                                  "ensemble": "on", "agents": "200"})
        result = run_scenario(cfg)
        families = {entry["reference_family"]
                    for entry in result.manifest["realization"]}
        assert families == {"CauchyRef"}
        assert (tmp_path / "ensemble.csv").exists()

    def test_empirical_initial_distribution(self, tmp_path):
        rng = np.random.default_rng(5)
        samples = ", ".join(f"{v:.6f}" for v in rng.standard_normal(400))
        text = SCENARIO_A.replace("initial = gaussian(0, 1)",
                                  f"initial = empirical({samples})")
        cfg = parse_config(text, {"output_dir": str(tmp_path),
                                  "ensemble": "on", "agents": "200"})
        result = run_scenario(cfg)
        np.testing.assert_allclose(result.plan.states[-1],
                                   [-0.5, 8.5, -12.5, 150.5], rtol=1e-12)

    def test_energy_plus_state_cost(self, tmp_path):
        text = SCENARIO_A.replace("cost = smoothness",
                                  "cost = energy_plus_state\nstate_weight = 0.4")
        cfg = parse_config(text, {"output_dir": str(tmp_path)})
        result = run_scenario(cfg)
        assert isinstance(cfg.cost, ms.EnergyPlusState)
        assert np.all(result.plan.control_certificates > 0)

    def test_failure_removes_partial_outputs(self, tmp_path):
        # a one-step horizon cannot absorb this shrinking target
        text = """\
horizon = 1
order = 2
a_values = 0.9
initial = gaussian(0, 1)
terminal = gaussian(0, 0.05)
"""
        out = tmp_path / "doomed"
        cfg = parse_config(text, {"output_dir": str(out)})
        with pytest.raises(ms.NoFeasibleWaitingTime):
            run_scenario(cfg)
        assert not list(out.glob("*"))

    def test_byte_identical_reruns(self, tmp_path, bundle_a):
        out1, _ = bundle_a
        out2 = tmp_path / "again"
        cfg = parse_config(SCENARIO_A, {"ensemble": "on",
                                        "output_dir": str(out2)})
        run_scenario(cfg)
        for name in sorted(os.listdir(out1)):
            if name.endswith((".csv", ".json")):
                assert (out2 / name).read_bytes() == (out1 / name).read_bytes()


class TestEmitPlotData:
    def test_figures_parse(self, bundle_a):
        out, _ = bundle_a
        files = emit_plot_data(str(out))
        names = {os.path.basename(f) for f in files}
        assert names == {"plot_state_moments.svg", "plot_control_moments.svg",
                         "plot_densities.svg", "plot_terminal_histogram.svg"}
        for f in files:
            ET.parse(f)  # well-formed XML

    def test_density_normalization_check(self, bundle_a):
        out, _ = bundle_a
        for name in os.listdir(out):
            if name.startswith("density_step_"):
                data = np.loadtxt(out / name, delimiter=",", skiprows=1)
                mass = np.trapezoid(data[:, 1], data[:, 0])
                assert abs(mass - 1.0) <= 1e-4

    def test_histogram_absent_without_ensemble(self, tmp_path):
        cfg = parse_config(SCENARIO_A, {"output_dir": str(tmp_path)})
        run_scenario(cfg)
        files = emit_plot_data(str(tmp_path))
        names = {os.path.basename(f) for f in files}
        assert "plot_terminal_histogram.svg" not in names
        assert "plot_state_moments.svg" in names

    def test_missing_bundle(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            emit_plot_data(str(tmp_path / "nowhere"))


class TestCli:
    def test_plan_command(self, tmp_path, capsys):
        cfg_path = tmp_path / "scenario.cfg"
        cfg_path.write_text(SCENARIO_A)
        code = main(["plan", str(cfg_path), "--output-dir",
                     str(tmp_path / "out")])
        assert code == 0
        captured = capsys.readouterr()
        assert "total energy" in captured.out
        assert (tmp_path / "out" / "manifest.json").exists()
        # plan alone runs no ensemble
        assert not (tmp_path / "out" / "ensemble.csv").exists()

    def test_steer_ensemble_command(self, tmp_path):
        cfg_path = tmp_path / "scenario.cfg"
        cfg_path.write_text(SCENARIO_A)
        code = main(["steer-ensemble", str(cfg_path), "--set", "agents=64",
                     "--output-dir", str(tmp_path / "out")])
        assert code == 0
        data = np.loadtxt(tmp_path / "out" / "ensemble.csv", delimiter=",",
                          skiprows=1)
        assert data.shape == (5 * 64, 3)

    def test_realize_command(self, tmp_path, capsys):
        out = tmp_path / "density.csv"
        code = main(["realize", "--moments=-0.5,8.5,-12.5,150.5",
                     "--output", str(out)])
        assert code == 0
        data = np.loadtxt(out, delimiter=",", skiprows=1)
        assert abs(np.trapezoid(data[:, 1], data[:, 0]) - 1.0) < 1e-4

    def test_report_command(self, tmp_path):
        cfg_path = tmp_path / "scenario.cfg"
        cfg_path.write_text(SCENARIO_A)
        main(["plan", str(cfg_path), "--output-dir", str(tmp_path / "out")])
        assert main(["report", str(tmp_path / "out")]) == 0

    def test_usage_error_exit_code(self):
        assert main(["plan", "/does/not/exist.cfg"]) == 1
        assert main(["frobnicate"]) == 1

    def test_infeasible_exit_code(self, tmp_path):
        cfg_path = tmp_path / "scenario.cfg"
        cfg_path.write_text("""\
horizon = 1
order = 2
a_values = 0.9
initial = gaussian(0, 1)
terminal = gaussian(0, 0.05)
""")
        assert main(["plan", str(cfg_path), "--output-dir",
                     str(tmp_path / "out")]) == 2

    def test_config_error_exit_code(self, tmp_path):
        cfg_path = tmp_path / "scenario.cfg"
        cfg_path.write_text("horizon = 4\nbogus = 1\n")
        assert main(["plan", str(cfg_path)]) == 1
