import json
import math
import textwrap
from pathlib import Path

import pandas as pd
import pytest

from balancecheck.common import ConfigError, ConvergenceInputError
from balancecheck.harness import (
    EXIT_CONFIG,
    EXIT_FAILED,
    EXIT_OK,
    EXIT_VIOLATED,
    ScenarioResult,
    SuiteResult,
    build_model,
    convergence_report,
    load_scenario,
    load_settings,
    resolutions,
    run_scenario,
    run_suite,
    violated_at_all_resolutions,
)

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"

SMALL_SCENARIO = """\
schema_version: 1
name: small-burgers
model:
  id: burgers
initial_data:
  id: indicator
  params: {lower: 0.0, upper: 0.5}
comparison_initial_data:
  id: indicator
  params: {lower: 0.0, upper: 0.75}
grid:
  lower: [-0.5]
  upper: [1.5]
  cells: 32
solver:
  end_time: 0.2
  snapshots: 4
estimates: [kruzkov, tv_theorem]
sampling: {points: 9, rounds: 1}
"""


def write_scenario(directory: Path, name: str, text: str) -> Path:
    path = directory / f"{name}.yaml"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(textwrap.dedent(text), encoding="utf-8")
    return path


class TestParsing:
    def test_small_scenario(self, tmp_path):
        scenario = load_scenario(write_scenario(tmp_path, "small", SMALL_SCENARIO))
        assert scenario.name == "small-burgers"
        assert scenario.dimension == 1
        assert scenario.solver.times == pytest.approx((0.0, 0.05, 0.1, 0.15, 0.2))
        assert scenario.estimates == ("kruzkov", "tv_theorem")
        assert scenario.needs_pair
        assert resolutions(scenario, 0.5) == [("base", 32), ("fine", 64)]

    def test_missing_grid_names_the_field(self, tmp_path):
        text = SMALL_SCENARIO.replace("grid:\n  lower: [-0.5]\n  upper: [1.5]\n  cells: 32\n", "")
        with pytest.raises(ConfigError) as excinfo:
            load_scenario(write_scenario(tmp_path, "no-grid", text))
        assert excinfo.value.field == "grid"
        assert excinfo.value.line == 1
        assert "field 'grid'" in str(excinfo.value)

    def test_missing_cells_names_the_subfield(self, tmp_path):
        text = SMALL_SCENARIO.replace("  cells: 32\n", "")
        with pytest.raises(ConfigError) as excinfo:
            load_scenario(write_scenario(tmp_path, "no-cells", text))
        assert excinfo.value.field == "grid.cells"
        assert excinfo.value.line == 12

    def test_solver_errors_keep_field_and_line(self, tmp_path):
        text = SMALL_SCENARIO.replace("  snapshots: 4\n", "  snapshots: 4\n  margin_policy: loose\n")
        with pytest.raises(ConfigError) as excinfo:
            load_scenario(write_scenario(tmp_path, "bad-policy", text))
        assert excinfo.value.field == "solver.margin_policy"
        assert excinfo.value.line == 16

    def test_sampling_polish_is_read(self, tmp_path):
        assert load_scenario(write_scenario(tmp_path, "small", SMALL_SCENARIO)).sampling.polish
        text = SMALL_SCENARIO.replace("{points: 9, rounds: 1}", "{points: 9, rounds: 1, polish: false}")
        assert not load_scenario(write_scenario(tmp_path, "rough", text)).sampling.polish

    def test_strict_policy_is_read(self, tmp_path):
        text = SMALL_SCENARIO.replace("  snapshots: 4\n", "  snapshots: 4\n  margin_policy: strict\n  safety_cells: 6\n")
        scenario = load_scenario(write_scenario(tmp_path, "strict", text))
        assert scenario.solver.margin_policy == "strict"
        assert scenario.solver.safety_cells == 6

    def test_unknown_estimate(self, tmp_path):
        text = SMALL_SCENARIO.replace("[kruzkov, tv_theorem]", "[kruzkov, entropy_rate]")
        with pytest.raises(ConfigError, match="entropy_rate"):
            load_scenario(write_scenario(tmp_path, "bad-estimate", text))

    def test_unknown_model_id(self, tmp_path):
        text = SMALL_SCENARIO.replace("id: burgers", "id: euler")
        with pytest.raises(ConfigError) as excinfo:
            load_scenario(write_scenario(tmp_path, "bad-model", text))
        assert excinfo.value.field == "model"

    def test_catalog_fields_are_rooted_at_the_scenario_key(self):
        with pytest.raises(ConfigError) as excinfo:
            build_model({"id": "burgers_decay", "params": {"speed": 2.0}}, 1, "comparison_model")
        assert excinfo.value.field == "comparison_model.params"
        with pytest.raises(ConfigError) as excinfo:
            build_model({"flux": {"id": "linear_advection", "params": {"velocity": [1.0, 2.0]}}}, 1)
        assert excinfo.value.field == "model.flux.params.velocity"

    def test_stability_needs_a_comparison(self, tmp_path):
        text = SMALL_SCENARIO.replace(
            "comparison_initial_data:\n  id: indicator\n  params: {lower: 0.0, upper: 0.75}\n", ""
        ).replace("[kruzkov, tv_theorem]", "[stability_theorem]")
        with pytest.raises(ConfigError, match="comparison"):
            load_scenario(write_scenario(tmp_path, "no-comparison", text))

    def test_syntax_error_reports_line(self, tmp_path):
        path = tmp_path / "broken.yaml"
        path.write_text("name: x\ngrid: [1, 2\nsolver: {}\n", encoding="utf-8")
        with pytest.raises(ConfigError) as excinfo:
            load_scenario(path)
        assert excinfo.value.line is not None

    def test_default_stability_ball_covers_grid(self, tmp_path):
        scenario = load_scenario(write_scenario(tmp_path, "small", SMALL_SCENARIO))
        center, radius = scenario.stability_ball()
        assert center == (0.5,)
        assert radius == pytest.approx(1.0)

    def test_build_model_from_parts(self):
        model = build_model({"flux": {"id": "burgers"}, "source": {"id": "linear", "params": {"alpha": -2.0}}}, 1)
        assert model.name == "burgers+linear"
        with pytest.raises(ConfigError) as excinfo:
            build_model({"params": {}}, 1, "comparison_model")
        assert excinfo.value.field == "comparison_model"


class TestSettings:
    def test_missing_file_gives_defaults(self, tmp_path):
        settings = load_settings(tmp_path / "absent.yaml")
        assert settings.jobs == 1
        assert settings.resolution_scale == 0.5

    def test_resolution_scale_must_refine(self, tmp_path):
        path = tmp_path / "balancecheck.yaml"
        path.write_text("resolution_scale: 1.5\n", encoding="utf-8")
        with pytest.raises(ConfigError):
            load_settings(path)

    def test_values_are_read(self, tmp_path):
        path = tmp_path / "balancecheck.yaml"
        path.write_text("jobs: 3\ntolerance: {rel: 0.01}\nout: results\n", encoding="utf-8")
        settings = load_settings(path)
        assert settings.jobs == 3
        assert settings.tolerance_rel == 0.01
        assert settings.tolerance_abs is None
        assert settings.out == Path("results")


class TestVerdictAggregation:
    def test_violated_only_when_every_resolution_is(self):
        rows = [
            {"estimate": "kruzkov", "verdict": "violated"},
            {"estimate": "kruzkov", "verdict": "holds_within_tolerance"},
            {"estimate": "tv_theorem", "verdict": "violated"},
            {"estimate": "tv_theorem", "verdict": "violated"},
        ]
        assert violated_at_all_resolutions(rows) == ["tv_theorem"]

    @pytest.mark.parametrize(
        "statuses, expected",
        [
            ([], EXIT_OK),
            (["ok", "ok"], EXIT_OK),
            (["ok", "violated"], EXIT_VIOLATED),
            (["violated", "config_error"], EXIT_FAILED),
            (["failed"], EXIT_FAILED),
        ],
    )
    def test_suite_exit_code(self, statuses, expected):
        results = [ScenarioResult(f"s{i}", None, status) for i, status in enumerate(statuses)]
        assert SuiteResult(results, pd.DataFrame(), pd.DataFrame()).exit_code == expected

    def test_scenario_exit_codes(self):
        assert ScenarioResult("a", None, "config_error").exit_code == EXIT_CONFIG
        assert ScenarioResult("a", None, "violated").exit_code == EXIT_VIOLATED


class TestRunScenario:
    def test_run_writes_reports(self, tmp_path):
        path = write_scenario(tmp_path / "scenarios", "small", SMALL_SCENARIO)
        out = tmp_path / "out"
        result = run_scenario(path, out)
        assert result.status == "ok", result.error
        assert len(result.rows) == 4
        assert {row["resolution"] for row in result.rows} == {"base", "fine"}

        base = out / "small-burgers" / "base"
        document = json.loads((base / "kruzkov.json").read_text())
        assert document["header"]["resolution"] == "base"
        assert document["report"]["estimate_id"] == "kruzkov"
        assert (base / "tv_theorem.json").exists()
        assert (base / "hypotheses.json").exists()
        assert (base / "dt_history_u.csv").exists()
        assert (base / "dt_history_v_same.csv").exists()
        assert (base / "snapshots" / "u_000.csv").exists()
        summary = pd.read_csv(out / "small-burgers" / "summary.csv")
        assert list(summary.columns) == ["scenario", "resolution", "cells", "h", "estimate", "lhs", "rhs", "margin", "verdict"]
        assert result.coefficients is not None
        assert result.coefficients["scenario"] == "small-burgers"

    def test_reports_are_reproducible(self, tmp_path):
        path = write_scenario(tmp_path / "scenarios", "small", SMALL_SCENARIO)
        run_scenario(path, tmp_path / "first")
        run_scenario(path, tmp_path / "second")
        for name in ("kruzkov.json", "tv_theorem.json"):
            first = json.loads((tmp_path / "first" / "small-burgers" / "fine" / name).read_text())
            second = json.loads((tmp_path / "second" / "small-burgers" / "fine" / name).read_text())
            assert first["report"] == second["report"]

    def test_sine_flux_initial_variation_term(self, tmp_path):
        # TV(u₀) = 2 and κ*₀ = 3 once the support covers x = 0
        result = run_scenario(SCENARIOS / "tv" / "tv-sine-flux.yaml", tmp_path)
        assert result.status == "ok", result.error
        for label in ("base", "fine"):
            report = json.loads((tmp_path / "tv-sine-flux" / label / "tv_theorem.json").read_text())["report"]
            assert report["coefficients"]["kappa_star_0"] == pytest.approx(3.0, abs=1e-7)
            assert report["terms"]["initial_variation"] == pytest.approx(2.0 * math.exp(0.75), abs=1e-6)

    def test_comparison_pair_is_diagnosed(self, tmp_path):
        result = run_scenario(SCENARIOS / "stability" / "stability-flux-perturbation.yaml", tmp_path)
        assert result.status == "ok", result.error
        for label in ("base", "fine"):
            hypotheses = json.loads((tmp_path / "stability-flux-perturbation" / label / "hypotheses.json").read_text())
            assert hypotheses["model"]["model"] == "burgers"
            assert hypotheses["pair_model"]["model"] == "(burgers) - (1.1*burgers)"
            entries = {e["name"]: e for e in hypotheses["pair_model"]["entries"]}
            # f - g = -0.05 u², so ∂_u(f - g) = -0.1 u and div(f - g) = 0 at fixed u
            assert entries["sup_du_flux"]["value"] > 0.0
            assert entries["integral_residual"]["status"] == "pass"

    def test_single_model_has_no_pair_entry(self, tmp_path):
        path = write_scenario(tmp_path / "scenarios", "small", SMALL_SCENARIO)
        run_scenario(path, tmp_path / "out")
        hypotheses = json.loads((tmp_path / "out" / "small-burgers" / "base" / "hypotheses.json").read_text())
        assert "pair_model" not in hypotheses

    def test_config_error_is_captured(self, tmp_path):
        path = write_scenario(tmp_path, "bad", SMALL_SCENARIO.replace("cells: 32", "cells: many"))
        result = run_scenario(path, None)
        assert result.status == "config_error"
        assert "grid.cells" in result.error

    def test_precondition_failure_is_captured(self, tmp_path):
        text = SMALL_SCENARIO.replace("id: burgers", "id: sine_flux").replace("[kruzkov, tv_theorem]", "[tv_special_ck]")
        result = run_scenario(write_scenario(tmp_path, "ck", text), None)
        assert result.status == "failed"
        assert result.error.startswith("PreconditionError")


class TestSuite:
    def test_empty_directory(self, tmp_path):
        (tmp_path / "empty").mkdir()
        suite = run_suite(tmp_path / "empty", tmp_path / "out")
        assert suite.exit_code == EXIT_OK
        assert suite.results == []
        assert (tmp_path / "out" / "aggregate.csv").exists()

    def test_failing_scenario_is_isolated(self, tmp_path):
        scenarios = tmp_path / "scenarios"
        write_scenario(scenarios, "a-good", SMALL_SCENARIO)
        write_scenario(scenarios, "b-bad", SMALL_SCENARIO.replace("id: burgers", "id: euler"))
        suite = run_suite(scenarios, tmp_path / "out")
        assert suite.exit_code == EXIT_FAILED
        assert [r.status for r in suite.results] == ["ok", "config_error"]
        assert len(suite.aggregate) == 4
        failures = pd.read_csv(tmp_path / "out" / "failures.csv")
        assert failures["scenario"].tolist() == ["b-bad"]
        coefficients = pd.read_csv(tmp_path / "out" / "coefficients.csv")
        assert coefficients["scenario"].tolist() == ["small-burgers"]


class TestConvergenceReport:
    def test_needs_three_resolutions(self, tmp_path):
        scenario = load_scenario(write_scenario(tmp_path, "small", SMALL_SCENARIO))
        with pytest.raises(ConvergenceInputError, match="need ≥ 3"):
            convergence_report(scenario, [32])

    def test_margins_per_resolution(self, tmp_path):
        text = SMALL_SCENARIO.replace("[kruzkov, tv_theorem]", "[tv_theorem]") + (
            "exact:\n  id: burgers_shock\n  params: {lower: 0.0, upper: 0.5, height: 1.0}\n"
        )
        scenario = load_scenario(write_scenario(tmp_path, "small", text))
        frame = convergence_report(scenario, [16, 32, 64], tmp_path / "out")
        assert frame["cells"].tolist() == [16, 32, 64]
        assert {"l1_error", "observed_order", "lhs_tv_theorem", "margin_tv_theorem", "verdict_tv_theorem"} <= set(frame.columns)
        assert frame["l1_error"].iloc[-1] < frame["l1_error"].iloc[0]
        assert (tmp_path / "out" / "small-burgers" / "convergence.csv").exists()


@pytest.mark.slow
def test_suite_output_is_independent_of_jobs(tmp_path):
    serial = run_suite(SCENARIOS, tmp_path / "jobs1", jobs=1)
    parallel = run_suite(SCENARIOS, tmp_path / "jobs8", jobs=8)
    assert serial.exit_code == parallel.exit_code == EXIT_OK

    files = sorted(p.relative_to(tmp_path / "jobs1") for p in (tmp_path / "jobs1").rglob("*") if p.is_file())
    assert files == sorted(p.relative_to(tmp_path / "jobs8") for p in (tmp_path / "jobs8").rglob("*") if p.is_file())
    assert any(f.suffix == ".json" for f in files)
    for relative in files:
        first, second = tmp_path / "jobs1" / relative, tmp_path / "jobs8" / relative
        if relative.suffix == ".json":
            a, b = json.loads(first.read_text()), json.loads(second.read_text())
            a.get("header", {}).pop("generated_at", None)
            b.get("header", {}).pop("generated_at", None)
            assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True), relative
        else:
            assert first.read_bytes() == second.read_bytes(), relative
