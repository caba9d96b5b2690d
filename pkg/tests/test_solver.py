import math

import numpy as np
import pytest

from balancecheck import catalog
from balancecheck.common import (
    CatalogError,
    ConfigError,
    ConvergenceInputError,
    GridError,
    NonCompactSupportError,
    SupportBoundaryError,
)
from balancecheck.fields import Grid, ScalarField, l1_distance
from balancecheck.models import BalanceLawModel
from balancecheck.solver import (
    FiniteVolumeSolver,
    SolverConfig,
    check_resolutions,
    convergence_study,
    exact_model,
    exact_solution,
    observed_order,
    solve,
    solve_pair,
)


class TestSolverConfig:
    def test_default_snapshots_include_both_ends(self):
        config = SolverConfig(end_time=1.0)
        assert config.times[0] == 0.0
        assert config.times[-1] == 1.0
        assert len(config.times) == 33

    def test_explicit_snapshots_are_completed(self):
        config = SolverConfig(end_time=1.0, snapshot_times=(0.5,))
        assert config.times == (0.0, 0.5, 1.0)

    def test_zero_end_time(self):
        assert SolverConfig(end_time=0.0).times == (0.0,)

    @pytest.mark.parametrize(
        "kwargs, field",
        [
            ({"cfl": 1.5}, "solver.cfl"),
            ({"cfl": 0.0}, "solver.cfl"),
            ({"source_integrator": "rk4"}, "solver.source_integrator"),
            ({"margin_policy": "loose"}, "solver.margin_policy"),
            ({"snapshot_times": (2.0,)}, "solver.snapshots"),
            ({"snapshot_times": (0.5, 0.5)}, "solver.snapshots"),
        ],
    )
    def test_invalid_settings_name_the_field(self, kwargs, field):
        with pytest.raises(ConfigError) as excinfo:
            SolverConfig(end_time=1.0, **kwargs)
        assert excinfo.value.field == field

    def test_negative_end_time(self):
        with pytest.raises(ConfigError):
            SolverConfig(end_time=-1.0)


class TestFiniteVolume:
    def test_burgers_conserves_mass_and_keeps_bounds(self, burgers, indicator):
        trajectory = solve(burgers, indicator, SolverConfig(end_time=0.5, snapshot_times=(0.25,)))
        assert trajectory.times == (0.0, 0.25, 0.5)
        assert trajectory.padding > 0
        assert trajectory.final.total() == pytest.approx(indicator.total(), rel=1e-12)
        assert trajectory.final.sup <= indicator.sup + 1e-12
        assert float(np.min(trajectory.final.values)) >= -1e-12
        assert trajectory.step_counts[0] == 0
        assert trajectory.step_counts[-1] == len(trajectory.dt_history)

    def test_padding_keeps_support_inside(self, burgers, indicator):
        trajectory = solve(burgers, indicator, SolverConfig(end_time=0.5))
        assert trajectory.final.is_compact(threshold=trajectory.range_track.threshold)
        assert trajectory.grid.cells[0] == indicator.grid.cells[0] + 2 * trajectory.padding

    def test_cfl_bounds_the_step(self, burgers, indicator):
        trajectory = solve(burgers, indicator, SolverConfig(end_time=0.25, cfl=0.4))
        h = indicator.grid.spacing
        steps = np.array(trajectory.dt_history) * np.maximum(np.array(trajectory.speed_history), 1e-300)
        assert np.all(steps <= 0.4 * h * (1 + 1e-12))

    def test_source_decay_matches_exponential(self, bump):
        model = BalanceLawModel.named("source_decay", {"rate": 1.0}, 1)
        config = SolverConfig(end_time=0.5, source_integrator="heun")
        trajectory = solve(model, bump, config)
        assert trajectory.final.sup == pytest.approx(math.exp(-0.5) * bump.sup, rel=1e-4)

    def test_heun_beats_euler_on_decay(self, bump):
        model = BalanceLawModel.named("source_decay", {"rate": 2.0}, 1)
        exact = math.exp(-1.0) * bump.sup
        errors = {
            integrator: abs(solve(model, bump, SolverConfig(end_time=0.5, source_integrator=integrator)).final.sup - exact)
            for integrator in ("euler", "heun")
        }
        assert errors["heun"] < errors["euler"]

    def test_strict_policy_rejects_data_on_margin(self, burgers, line_grid):
        ones = ScalarField(line_grid, np.ones(line_grid.shape))
        with pytest.raises(NonCompactSupportError):
            solve(burgers, ones, SolverConfig(end_time=0.1, margin_policy="strict"))

    def test_strict_policy_reports_boundary_contact(self):
        grid = Grid.from_bounds((0.0,), (1.0,), 32)
        u0 = ScalarField.sample(grid, catalog.initial_data("cos2_bump", {"center": 0.8, "radius": 0.15}, 1))
        model = BalanceLawModel.named("advection", {"velocity": 1.0}, 1)
        with pytest.raises(SupportBoundaryError):
            solve(model, u0, SolverConfig(end_time=0.5, margin_policy="strict"))

    def test_dimension_mismatch(self, indicator):
        with pytest.raises(GridError):
            solve(BalanceLawModel.named("burgers", None, 2), indicator, SolverConfig(end_time=0.1))

    def test_zero_end_time_returns_initial_data(self, burgers, indicator):
        trajectory = solve(burgers, indicator, SolverConfig(end_time=0.0))
        assert trajectory.times == (0.0,)
        assert trajectory.dt_history == ()
        np.testing.assert_array_equal(trajectory.final.values[trajectory.padding : -trajectory.padding], indicator.values)

    def test_two_dimensional_advection_moves_mass(self):
        grid = Grid.from_bounds((-1.0, -1.0), (1.0, 1.0), 24)
        u0 = ScalarField.sample(grid, catalog.initial_data("cos2_bump", {"center": 0.0, "radius": 0.5}, 2))
        model = BalanceLawModel.named("advection", {"velocity": [1.0, 0.0]}, 2)
        trajectory = solve(model, u0, SolverConfig(end_time=0.25, snapshot_times=()))
        final = trajectory.final
        x = final.grid.mesh()[0]
        centroid = float(np.sum(x * final.values) / np.sum(final.values))
        assert centroid == pytest.approx(0.25, abs=0.02)
        assert final.total() == pytest.approx(u0.total(), rel=1e-12)

    def test_diagnostics(self, tmp_path, burgers, indicator):
        trajectory = solve(burgers, indicator, SolverConfig(end_time=0.1))
        frame = trajectory.diagnostics_frame()
        assert list(frame.columns) == ["step", "time", "dt", "max_wave_speed"]
        assert frame["time"].iloc[-1] == pytest.approx(0.1)
        trajectory.write_diagnostics(tmp_path / "dt.csv")
        assert (tmp_path / "dt.csv").read_text().startswith("step,time,dt,max_wave_speed")


class TestSolvePair:
    def test_pair_shares_grid_and_padding(self, burgers, indicator, bump):
        decay = BalanceLawModel.named("burgers_decay", None, 1)
        traj_u, traj_v = solve_pair(burgers, indicator, decay, bump, SolverConfig(end_time=0.25))
        assert traj_u.grid.matches(traj_v.grid)
        assert traj_u.padding == traj_v.padding
        assert traj_u.times == traj_v.times

    def test_pair_needs_one_grid(self, burgers, indicator):
        other = ScalarField.zeros(Grid.from_bounds((-1.0,), (2.0,), 48))
        with pytest.raises(GridError):
            solve_pair(burgers, indicator, burgers, other, SolverConfig(end_time=0.1))

    def test_discrete_contraction(self, burgers, line_grid, indicator):
        wider = ScalarField.sample(line_grid, catalog.initial_data("indicator", {"upper": 1.5}, 1))
        traj_u, traj_v = solve_pair(burgers, indicator, burgers, wider, SolverConfig(end_time=0.5, snapshot_times=(0.25,)))
        distances = [l1_distance(u, v) for u, v in zip(traj_u.fields, traj_v.fields)]
        assert all(d <= distances[0] * (1 + 1e-12) for d in distances)


class TestExactSolutions:
    def test_unknown_id(self, line_grid):
        with pytest.raises(CatalogError):
            exact_solution("kdv", None, line_grid, 0.0)

    def test_burgers_shock_conserves_mass(self):
        grid = Grid.from_bounds((-1.0,), (4.0,), 2000)
        for t in (0.0, 1.0, 3.0):
            assert exact_solution("burgers_shock", None, grid, t).total() == pytest.approx(1.0, abs=5e-3)

    def test_burgers_shock_position(self):
        grid = Grid.from_bounds((-1.0,), (3.0,), 400)
        field = exact_solution("burgers_shock", None, grid, 1.0)
        x = grid.centers(0)
        assert np.all(field.values[x > 1.5 + grid.spacing] == 0.0)
        assert np.all(field.values[(x > 1.0) & (x < 1.5)] == 1.0)

    def test_exact_models(self):
        assert exact_model("advection", {"velocity": 2.0}, 1).name == "advection"
        assert exact_model("burgers_rarefaction", None, 1).name == "burgers"

    def test_source_decay_scales_initial_data(self, line_grid):
        start = exact_solution("source_decay", {"rate": 1.0}, line_grid, 0.0)
        later = exact_solution("source_decay", {"rate": 1.0}, line_grid, 1.0)
        np.testing.assert_allclose(later.values, math.exp(-1.0) * start.values)


class TestConvergence:
    def test_resolution_ladder_checks(self):
        with pytest.raises(ConvergenceInputError, match="need ≥ 3"):
            check_resolutions([64])
        with pytest.raises(ConvergenceInputError, match="dyadic"):
            check_resolutions([64, 128, 200])
        assert check_resolutions([256, 64, 128]) == [64, 128, 256]

    def test_observed_order_of_exact_power_law(self):
        spacings = [0.1, 0.05, 0.025]
        assert observed_order(spacings, [h**2 for h in spacings]) == pytest.approx(2.0)

    def test_advection_converges_at_first_order(self):
        model = BalanceLawModel.named("advection", {"velocity": 1.0}, 1)
        table = convergence_study(
            model,
            "advection",
            {"velocity": 1.0, "initial": {"id": "cos2_bump", "params": {"radius": 0.5}}},
            (-1.0,),
            (2.0,),
            [64, 128, 256],
            SolverConfig(end_time=0.5, snapshot_times=()),
        )
        errors = [row["l1_error"] for row in table.rows]
        assert errors[0] > errors[1] > errors[2]
        assert 0.5 < table.order < 1.3
        assert list(table.frame().columns) == ["cells", "h", "l1_error", "steps", "observed_order"]

    def test_burgers_shock_order_and_position(self, burgers):
        params = {"lower": 0.0, "upper": 1.0, "height": 1.0}
        config = SolverConfig(end_time=1.0, snapshot_times=())
        table = convergence_study(burgers, "burgers_shock", params, (-0.5,), (2.5,), [64, 128, 256, 512], config)
        errors = [row["l1_error"] for row in table.rows]
        assert errors == sorted(errors, reverse=True)
        assert table.order >= 0.5

        # fan head at 1, shock at 1 + T/2 until the fan catches it at t = 2
        grid = Grid.from_bounds((-0.5,), (2.5,), 512)
        final = solve(burgers, exact_solution("burgers_shock", params, grid, 0.0), config).final
        x, u = final.grid.centers(0), final.values
        j = int(np.argmax(u))
        while u[j + 1] >= 0.5:
            j += 1
        shock = x[j] + (u[j] - 0.5) / (u[j] - u[j + 1]) * final.grid.spacing
        assert abs(shock - 1.5) <= 2 * grid.spacing

    def test_padding_cells_grow_with_end_time(self, burgers, indicator):
        short = FiniteVolumeSolver(burgers, SolverConfig(end_time=0.1)).padding_cells(indicator)
        long = FiniteVolumeSolver(burgers, SolverConfig(end_time=1.0)).padding_cells(indicator)
        assert long > short
