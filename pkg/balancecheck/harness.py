"""Scenario files, the scenario and suite runners, and convergence reports.

A scenario is a YAML mapping (JSON documents are valid YAML):

    schema_version: 1
    name: tv-burgers-shock
    model: {id: burgers}                          # or {flux: {id, params}, source: {id, params}}
    comparison_model: {id: burgers, flux_scale: 1.1}   # optional, pair estimates
    initial_data: {id: indicator, params: {lower: 0, upper: 1}}
    comparison_initial_data: {...}                # optional, defaults to initial_data
    grid: {lower: [-1], upper: [3], cells: 256}
    solver: {end_time: 1.0, cfl: 0.45, snapshots: 32, source_integrator: euler, margin_policy: auto}
    estimates: [tv_theorem]
    stability: {center: [1.0], radius: 1.5}       # optional
    tolerance: {rel: 1.0e-3, abs: null}           # optional
    sampling: {points: 33, rounds: 2, polish: true} # optional
    exact: {id: advection, params: {...}}         # optional, convergence reports
    outputs: {snapshots: ends}                    # none | ends | all

Each scenario runs at two resolutions: the declared cells and cells/scale
(scale 0.5 by default, so twice as fine). A verdict counts as violated only
when it is violated at both.
"""

import json
import logging
import math
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import UTC, datetime
from pathlib import Path
from typing import Any, Literal

import pandas as pd

from balancecheck import catalog
from balancecheck.common import (
    BalanceCheckError,
    CatalogError,
    Component,
    ConfigError,
    GridError,
    load_yaml,
    mapping_line,
)
from balancecheck.estimates import (
    ESTIMATE_IDS,
    EstimateReport,
    Tolerance,
    check_kruzkov,
    check_stability_simplified,
    check_stability_theorem,
    check_tv_theorem,
    coefficient_comparison,
    tv_special_ck,
)
from balancecheck.fields import Grid, ScalarField, write_snapshot
from balancecheck.models import (
    BalanceLawModel,
    Sampling,
    check_hypotheses,
    check_support_growth,
    pair_range_track,
)
from balancecheck.solver import (
    SAFETY_CELLS,
    SolverConfig,
    Trajectory,
    check_resolutions,
    convergence_study,
    solve,
    solve_pair,
)

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
REPORT_SCHEMA_VERSION = 1
DEFAULT_RESOLUTION_SCALE = 0.5
PAIR_ESTIMATES = ("kruzkov", "stability_theorem", "stability_simplified")
SUMMARY_COLUMNS = ["scenario", "resolution", "cells", "h", "estimate", "lhs", "rhs", "margin", "verdict"]

SnapshotPolicy = Literal["none", "ends", "all"]
ScenarioStatus = Literal["ok", "violated", "config_error", "failed"]

# CLI exit codes
EXIT_OK = 0
EXIT_VIOLATED = 1
EXIT_CONFIG = 2
EXIT_FAILED = 3


# --- Scenario parsing ---

def _plain(node: Any) -> Any:
    """Round-trip YAML nodes as plain dicts, lists and Python scalars."""
    if isinstance(node, dict):
        return {str(k): _plain(v) for k, v in node.items()}
    if isinstance(node, list):
        return [_plain(v) for v in node]
    if isinstance(node, bool) or node is None:
        return node
    if isinstance(node, int):
        return int(node)
    if isinstance(node, float):
        return float(node)
    return str(node)


def _mapping(parent: Any, key: str, path: str, required: bool = True) -> Any:
    node = parent.get(key)
    if node is None:
        if required:
            raise ConfigError("missing required field", field=path, line=mapping_line(parent))
        return None
    if not isinstance(node, dict):
        raise ConfigError("expected a mapping", field=path, line=mapping_line(parent))
    return node


def _number(node: Any, key: str, path: str, default: float | None = None) -> float:
    value = node.get(key, default) if node is not None else default
    if value is None:
        raise ConfigError("missing required field", field=path, line=mapping_line(node))
    try:
        number = float(value)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"expected a number, got {value!r}", field=path, line=mapping_line(node)) from e
    if not math.isfinite(number):
        raise ConfigError(f"expected a finite number, got {value!r}", field=path, line=mapping_line(node))
    return number


def _vector(value: Any, path: str, line: int | None) -> tuple[float, ...]:
    items = value if isinstance(value, list) else [value]
    try:
        return tuple(float(v) for v in items)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"expected a number or a list of numbers, got {value!r}", field=path, line=line) from e


def _subfield(path: str, field: str | None, own_prefix: str) -> str:
    """Catalog field path re-rooted under the scenario key (`model.params` -> `comparison_model.params`)."""
    if not field:
        return path
    return f"{path}.{field.removeprefix(own_prefix)}"


def build_model(spec: dict, dimension: int, path: str = "model") -> BalanceLawModel:
    """Named model {id, params} or {flux: {id, params}, source: {id, params}}; `flux_scale` scales f.

    Raises:
        ConfigError: malformed spec, unknown id or parameter
    """
    spec = dict(spec)
    if "id" not in spec and "flux" not in spec and "source" not in spec:
        raise ConfigError("needs either 'id' or 'flux'/'source'", field=path)
    try:
        if "id" in spec:
            model = BalanceLawModel.named(str(spec["id"]), spec.get("params"), dimension)
        else:
            flux = spec.get("flux") or {"id": "zero"}
            source = spec.get("source") or {"id": "zero"}
            model = BalanceLawModel.from_catalog(
                dimension,
                (str(flux["id"]), flux.get("params")),
                (str(source["id"]), source.get("params")),
                name=spec.get("name"),
            )
    except (CatalogError, KeyError) as e:
        raise ConfigError(str(e).strip("'"), field=path) from e
    except ConfigError as e:
        raise ConfigError(e.message, field=_subfield(path, e.field, "model.")) from e
    if "flux_scale" in spec:
        model = model.scaled(float(spec["flux_scale"]))
    return model


def build_initial(spec: dict, grid: Grid, path: str = "initial_data") -> ScalarField:
    if "id" not in spec:
        raise ConfigError("missing 'id'", field=path)
    try:
        fn = catalog.initial_data(str(spec["id"]), spec.get("params"), grid.dimension)
    except CatalogError as e:
        raise ConfigError(str(e), field=path) from e
    except ConfigError as e:
        raise ConfigError(e.message, field=_subfield(path, e.field, "initial_data.")) from e
    return ScalarField.sample(grid, fn)


@dataclass(frozen=True)
class Scenario:
    name: str
    path: Path | None
    dimension: int
    model: dict
    initial_data: dict
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    cells: int
    solver: SolverConfig
    estimates: tuple[str, ...]
    comparison_model: dict | None = None
    comparison_initial_data: dict | None = None
    center: tuple[float, ...] | None = None
    radius: float | None = None
    tolerance: Tolerance = Tolerance()
    sampling: Sampling = Sampling()
    exact: dict | None = None
    snapshots: SnapshotPolicy = "ends"

    @property
    def needs_pair(self) -> bool:
        return any(e in PAIR_ESTIMATES for e in self.estimates)

    def grid(self, cells: int | None = None) -> Grid:
        return Grid.from_bounds(self.lower, self.upper, cells or self.cells)

    def stability_ball(self) -> tuple[tuple[float, ...], float]:
        """Declared ball, or the grid's circumscribed ball around its midpoint."""
        center = self.center or tuple((lo + hi) / 2.0 for lo, hi in zip(self.lower, self.upper))
        radius = self.radius
        if radius is None:
            radius = math.sqrt(sum(((hi - lo) / 2.0) ** 2 for lo, hi in zip(self.lower, self.upper)))
        return center, radius


def parse_scenario(doc: Any, path: Path | None = None) -> Scenario:
    """Validate a scenario mapping.

    Raises:
        ConfigError: naming the field path and the line of the enclosing mapping
    """
    if not isinstance(doc, dict):
        raise ConfigError("scenario must be a mapping", line=mapping_line(doc))
    version = doc.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version}", field="schema_version", line=mapping_line(doc))

    name = str(doc.get("name") or (path.stem if path else "scenario"))

    grid_node = _mapping(doc, "grid", "grid")
    line = mapping_line(grid_node)
    for key in ("lower", "upper", "cells"):
        if key not in grid_node:
            raise ConfigError("missing required field", field=f"grid.{key}", line=line)
    lower = _vector(grid_node["lower"], "grid.lower", line)
    upper = _vector(grid_node["upper"], "grid.upper", line)
    if len(lower) != len(upper):
        raise ConfigError("lower and upper differ in dimension", field="grid", line=line)
    cells = int(_number(grid_node, "cells", "grid.cells"))
    if cells < 4:
        raise ConfigError("need at least 4 cells", field="grid.cells", line=line)
    dimension = len(lower)

    solver_node = _mapping(doc, "solver", "solver")
    snapshots = solver_node.get("snapshots")
    end_time = _number(solver_node, "end_time", "solver.end_time")
    if isinstance(snapshots, list):
        snapshot_times = tuple(float(t) for t in snapshots)
    elif snapshots is not None:
        count = int(snapshots)
        if count < 1:
            raise ConfigError("need at least one snapshot interval", field="solver.snapshots", line=mapping_line(solver_node))
        snapshot_times = tuple(end_time * k / count for k in range(count + 1))
    else:
        snapshot_times = None
    try:
        solver = SolverConfig(
            end_time=end_time,
            cfl=_number(solver_node, "cfl", "solver.cfl", 0.45),
            snapshot_times=snapshot_times,
            source_integrator=str(solver_node.get("source_integrator", "euler")),  # type: ignore[arg-type]
            margin_policy=str(solver_node.get("margin_policy", "auto")),  # type: ignore[arg-type]
            safety_cells=int(_number(solver_node, "safety_cells", "solver.safety_cells", SAFETY_CELLS)),
            min_wave_speed=_number(solver_node, "min_wave_speed", "solver.min_wave_speed", 0.0),
        )
    except ConfigError as e:
        raise ConfigError(e.message, field=e.field, line=mapping_line(solver_node)) from e

    model = _plain(_mapping(doc, "model", "model"))
    initial = _plain(_mapping(doc, "initial_data", "initial_data"))
    comparison = _plain(_mapping(doc, "comparison_model", "comparison_model", required=False))
    comparison_initial = _plain(_mapping(doc, "comparison_initial_data", "comparison_initial_data", required=False))

    # catalog ids and parameters are checked here so a bad file fails before any solve
    for spec, key in ((model, "model"), (comparison, "comparison_model")):
        if spec is not None:
            try:
                build_model(spec, dimension, key)
            except ConfigError as e:
                raise ConfigError(e.message, field=e.field, line=mapping_line(doc.get(key))) from e
    try:
        probe = Grid.from_bounds(lower, upper, 4)
        Grid.from_bounds(lower, upper, cells)
    except GridError as e:
        raise ConfigError(str(e), field="grid", line=line) from e
    for spec, key in ((initial, "initial_data"), (comparison_initial, "comparison_initial_data")):
        if spec is not None:
            try:
                build_initial(spec, probe, key)
            except ConfigError as e:
                raise ConfigError(e.message, field=e.field, line=mapping_line(doc.get(key))) from e

    estimates = doc.get("estimates")
    if not isinstance(estimates, list) or not estimates:
        raise ConfigError("expected a non-empty list", field="estimates", line=mapping_line(doc))
    estimates = tuple(str(e) for e in estimates)
    unknown = [e for e in estimates if e not in ESTIMATE_IDS]
    if unknown:
        raise ConfigError(
            f"unknown estimate(s) {', '.join(unknown)} (known: {', '.join(ESTIMATE_IDS)})",
            field="estimates",
            line=mapping_line(doc),
        )
    if any(e.startswith("stability") for e in estimates) and comparison is None and comparison_initial is None:
        raise ConfigError("stability estimates need comparison_model or comparison_initial_data", field="estimates")

    center, radius = None, None
    stability_node = _mapping(doc, "stability", "stability", required=False)
    if stability_node is not None:
        if "center" in stability_node:
            center = _vector(stability_node["center"], "stability.center", mapping_line(stability_node))
            if len(center) != dimension:
                raise ConfigError("center dimension mismatch", field="stability.center", line=mapping_line(stability_node))
        if "radius" in stability_node:
            radius = _number(stability_node, "radius", "stability.radius")
            if radius < 0.0:
                raise ConfigError("radius must be ≥ 0", field="stability.radius", line=mapping_line(stability_node))

    tolerance = Tolerance()
    tolerance_node = _mapping(doc, "tolerance", "tolerance", required=False)
    if tolerance_node is not None:
        tolerance = Tolerance(
            rel=_number(tolerance_node, "rel", "tolerance.rel", tolerance.rel),
            abs=None if tolerance_node.get("abs") is None else _number(tolerance_node, "abs", "tolerance.abs"),
        )

    sampling = Sampling()
    sampling_node = _mapping(doc, "sampling", "sampling", required=False)
    if sampling_node is not None:
        sampling = replace(
            sampling,
            points=int(_number(sampling_node, "points", "sampling.points", sampling.points)),
            rounds=int(_number(sampling_node, "rounds", "sampling.rounds", sampling.rounds)),
            polish=bool(sampling_node.get("polish", sampling.polish)),
        )
        if sampling.points < 3 or sampling.rounds < 0:
            raise ConfigError("need points ≥ 3 and rounds ≥ 0", field="sampling", line=mapping_line(sampling_node))

    snapshots_policy = "ends"
    outputs_node = _mapping(doc, "outputs", "outputs", required=False)
    if outputs_node is not None:
        snapshots_policy = str(outputs_node.get("snapshots", "ends"))
        if snapshots_policy not in ("none", "ends", "all"):
            raise ConfigError(
                f"expected none, ends or all, got '{snapshots_policy}'", field="outputs.snapshots", line=mapping_line(outputs_node)
            )

    return Scenario(
        name=name,
        path=path,
        dimension=dimension,
        model=model,
        initial_data=initial,
        lower=lower,
        upper=upper,
        cells=cells,
        solver=solver,
        estimates=estimates,
        comparison_model=comparison,
        comparison_initial_data=comparison_initial,
        center=center,
        radius=radius,
        tolerance=tolerance,
        sampling=sampling,
        exact=_plain(_mapping(doc, "exact", "exact", required=False)),
        snapshots=snapshots_policy,  # type: ignore[arg-type]
    )


def load_scenario(path: Path) -> Scenario:
    return parse_scenario(load_yaml(Path(path)), Path(path))


# --- Settings ---

@dataclass(frozen=True)
class Settings:
    """Suite defaults from balancecheck.yaml; CLI flags override them."""

    jobs: int = 1
    resolution_scale: float = DEFAULT_RESOLUTION_SCALE
    tolerance_rel: float | None = None
    tolerance_abs: float | None = None
    out: Path = Path("out")
    scenarios: Path = Path("scenarios")


def load_settings(path: Path | None) -> Settings:
    if path is None or not Path(path).exists():
        return Settings()
    doc = load_yaml(Path(path)) or {}
    if not isinstance(doc, dict):
        raise ConfigError("settings must be a mapping", line=mapping_line(doc))
    tolerance = _mapping(doc, "tolerance", "tolerance", required=False) or {}
    settings = Settings(
        jobs=int(doc.get("jobs", 1)),
        resolution_scale=float(doc.get("resolution_scale", DEFAULT_RESOLUTION_SCALE)),
        tolerance_rel=None if tolerance.get("rel") is None else float(tolerance["rel"]),
        tolerance_abs=None if tolerance.get("abs") is None else float(tolerance["abs"]),
        out=Path(str(doc.get("out", "out"))),
        scenarios=Path(str(doc.get("scenarios", "scenarios"))),
    )
    check_resolution_scale(settings.resolution_scale)
    if settings.jobs < 1:
        raise ConfigError("jobs must be ≥ 1", field="jobs", line=mapping_line(doc))
    return settings


def check_resolution_scale(scale: float) -> float:
    if not 0.0 < scale < 1.0:
        raise ConfigError(f"resolution scale must lie in (0, 1), got {scale}", field="resolution_scale")
    return scale


def resolutions(scenario: Scenario, scale: float) -> list[tuple[str, int]]:
    """Declared resolution and the finer one, cells/scale."""
    return [("base", scenario.cells), ("fine", int(round(scenario.cells / check_resolution_scale(scale))))]


# --- Reports on disk ---

def report_document(report: EstimateReport, scenario: str, resolution: str) -> dict:
    """JSON document of one report; the timestamp lives only in the header."""
    return {
        "header": {
            "generated_at": datetime.now(UTC).isoformat(timespec="seconds"),
            "schema_version": REPORT_SCHEMA_VERSION,
            "scenario": scenario,
            "resolution": resolution,
        },
        "report": report.to_dict(),
    }


def write_json(path: Path, document: dict):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(document, fh, indent=2, ensure_ascii=False, allow_nan=True)
        fh.write("\n")


def write_frame(frame: pd.DataFrame, path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.17g")


# --- Scenario runner ---

@dataclass(frozen=True)
class ResolutionOutcome:
    label: str
    cells: int
    spacing: float
    reports: tuple[EstimateReport, ...]
    coefficients: dict


@dataclass
class ScenarioResult:
    name: str
    path: str | None
    status: ScenarioStatus = "ok"
    rows: list[dict] = field(default_factory=list)
    coefficients: dict | None = None
    error: str | None = None

    @property
    def exit_code(self) -> int:
        return {"ok": EXIT_OK, "violated": EXIT_VIOLATED, "config_error": EXIT_CONFIG, "failed": EXIT_FAILED}[self.status]


def violated_at_all_resolutions(rows: Sequence[dict]) -> list[str]:
    """Estimates whose verdict is violated at every resolution they ran at."""
    verdicts: dict[str, list[str]] = {}
    for row in rows:
        verdicts.setdefault(row["estimate"], []).append(row["verdict"])
    return [name for name, seen in verdicts.items() if seen and all(v == "violated" for v in seen)]


def _distinct(runs: dict[str, Trajectory]) -> dict[str, Trajectory]:
    """Roles that hold their own run (a shared run is kept under its first role)."""
    seen: set[int] = set()
    distinct = {}
    for key, trajectory in runs.items():
        if id(trajectory) not in seen:
            seen.add(id(trajectory))
            distinct[key] = trajectory
    return distinct


class ScenarioRunner(Component):
    """Solves a scenario at its resolutions and evaluates the requested estimates."""

    def __init__(
        self,
        scenario: Scenario,
        out: Path | None = None,
        resolution_scale: float = DEFAULT_RESOLUTION_SCALE,
        tolerance: Tolerance | None = None,
    ):
        self.scenario = scenario
        self.out = Path(out) / scenario.name if out is not None else None
        self.resolution_scale = resolution_scale
        self.tolerance = tolerance or scenario.tolerance
        n = scenario.dimension
        self.model = build_model(scenario.model, n, "model")
        self.comparison = (
            build_model(scenario.comparison_model, n, "comparison_model") if scenario.comparison_model else self.model
        )

    def _estimate(self, estimate: str, runs: dict[str, Trajectory]) -> EstimateReport:
        s = self.scenario
        u = runs["u"]
        match estimate:
            case "kruzkov":
                return check_kruzkov(u, runs["v_same"], self.model, s.sampling, self.tolerance)
            case "tv_theorem":
                return check_tv_theorem(u, self.model, sampling=s.sampling, tolerance=self.tolerance)
            case "tv_special_ck":
                return tv_special_ck(u, self.model, sampling=s.sampling, tolerance=self.tolerance)
            case "stability_theorem" | "stability_simplified":
                center, radius = s.stability_ball()
                check = check_stability_theorem if estimate == "stability_theorem" else check_stability_simplified
                return check(
                    runs["u_cmp"], runs["v"], self.model, self.comparison, radius, center,
                    sampling=s.sampling, tolerance=self.tolerance,
                )
        raise ConfigError(f"unknown estimate '{estimate}'", field="estimates")

    def evaluate(self, label: str, cells: int) -> ResolutionOutcome:
        """One resolution: solve, diagnose, evaluate every requested estimate, write artifacts."""
        s = self.scenario
        grid = s.grid(cells)
        self.info(f"{s.name} [{label}]: {grid.cells} cells, h = {grid.spacing:.4g}")
        runs = self.solve_all(grid)
        u = runs["u"]

        pair_track = pair_range_track(runs["u_cmp"].range_track, runs["v"].range_track) if "v" in runs else None
        hypotheses = {"model": check_hypotheses(self.model, u.range_track.slab(), s.sampling).as_dict()}
        if pair_track is not None:
            if s.comparison_model:
                difference = self.model.difference(self.comparison)
                hypotheses["pair_model"] = check_hypotheses(difference, pair_track.slab(), s.sampling).as_dict()
            growth = check_support_growth(
                self.model,
                pair_track,
                u.grid.spacing,
                runs["u_cmp"].step_counts,
                other=self.comparison,
                sampling=s.sampling,
            )
        else:
            growth = check_support_growth(self.model, u.range_track, u.grid.spacing, u.step_counts, sampling=s.sampling)
        if growth.applicable and not growth.holds:
            self.warning(f"{s.name} [{label}]: support grew beyond the propagation bound")

        reports = tuple(self._estimate(estimate, runs) for estimate in s.estimates)
        slab = pair_track.slab() if pair_track is not None else u.range_track.slab()
        coefficients = coefficient_comparison(
            s.name, self.model, self.comparison if s.comparison_model else None, slab, s.sampling
        )

        if self.out is not None:
            directory = self.out / label
            for report in reports:
                write_json(directory / f"{report.estimate_id}.json", report_document(report, s.name, label))
            write_json(directory / "hypotheses.json", {**hypotheses, "support_growth": growth.as_dict()})
            for key, trajectory in _distinct(runs).items():
                trajectory.write_diagnostics(directory / f"dt_history_{key}.csv")
            self._write_snapshots(directory, runs)
        return ResolutionOutcome(label, grid.cells[0], u.grid.spacing, reports, coefficients)

    def solve_all(self, grid: Grid) -> dict[str, Trajectory]:
        """Trajectories by role: u, v_same (Kružkov partner), u_cmp/v (stability pair)."""
        s = self.scenario
        u0 = build_initial(s.initial_data, grid)
        runs: dict[str, Trajectory] = {}
        if not s.needs_pair:
            runs["u"] = solve(self.model, u0, s.solver)
            return runs
        v0 = build_initial(s.comparison_initial_data, grid, "comparison_initial_data") if s.comparison_initial_data else u0
        if "kruzkov" in s.estimates:
            runs["u"], runs["v_same"] = solve_pair(self.model, u0, self.model, v0, s.solver)
        if any(e.startswith("stability") for e in s.estimates):
            if self.comparison is self.model and "v_same" in runs:
                runs["u_cmp"], runs["v"] = runs["u"], runs["v_same"]
            else:
                runs["u_cmp"], runs["v"] = solve_pair(self.model, u0, self.comparison, v0, s.solver)
            runs.setdefault("u", runs["u_cmp"])
        return runs

    def _write_snapshots(self, directory: Path, runs: dict[str, Trajectory]):
        policy = self.scenario.snapshots
        if policy == "none":
            return
        for key, trajectory in _distinct(runs).items():
            indices = range(len(trajectory.times)) if policy == "all" else sorted({0, len(trajectory.times) - 1})
            for i in indices:
                write_snapshot(trajectory.fields[i], directory / "snapshots" / f"{key}_{i:03d}.csv", trajectory.times[i])

    def run(self) -> ScenarioResult:
        s = self.scenario
        result = ScenarioResult(s.name, str(s.path) if s.path else None)
        for label, cells in resolutions(s, self.resolution_scale):
            outcome = self.evaluate(label, cells)
            for report in outcome.reports:
                result.rows.append(
                    {
                        "scenario": s.name,
                        "resolution": label,
                        "cells": outcome.cells,
                        "h": outcome.spacing,
                        "estimate": report.estimate_id,
                        "lhs": report.lhs,
                        "rhs": report.rhs,
                        "margin": report.margin,
                        "verdict": report.verdict,
                    }
                )
            if label == "base":
                result.coefficients = outcome.coefficients

        violated = violated_at_all_resolutions(result.rows)
        if violated:
            result.status = "violated"
            self.warning(f"{s.name}: violated at both resolutions: {', '.join(violated)}")
        if self.out is not None:
            write_frame(pd.DataFrame(result.rows, columns=SUMMARY_COLUMNS), self.out / "summary.csv")
        self.info(f"{s.name}: {result.status} ({len(result.rows)} verdicts)")
        return result


def run_scenario(
    path: Path,
    out: Path | None = None,
    resolution_scale: float = DEFAULT_RESOLUTION_SCALE,
    tolerance: Tolerance | None = None,
) -> ScenarioResult:
    """Run one scenario file; errors are captured in the result, never raised."""
    path = Path(path)
    try:
        scenario = load_scenario(path)
    except ConfigError as e:
        logger.error("%s: %s", path, e)
        return ScenarioResult(path.stem, str(path), "config_error", error=str(e))
    try:
        return ScenarioRunner(scenario, out, resolution_scale, tolerance).run()
    except ConfigError as e:
        logger.error("%s: %s", scenario.name, e)
        return ScenarioResult(scenario.name, str(path), "config_error", error=str(e))
    except BalanceCheckError as e:
        logger.error("%s: %s", scenario.name, e)
        return ScenarioResult(scenario.name, str(path), "failed", error=f"{type(e).__name__}: {e}")


# --- Suite runner ---

@dataclass
class SuiteResult:
    results: list[ScenarioResult]
    aggregate: pd.DataFrame
    coefficients: pd.DataFrame

    @property
    def exit_code(self) -> int:
        codes = [r.exit_code for r in self.results]
        if any(c in (EXIT_CONFIG, EXIT_FAILED) for c in codes):
            return EXIT_FAILED
        return EXIT_VIOLATED if EXIT_VIOLATED in codes else EXIT_OK

    @property
    def failures(self) -> list[ScenarioResult]:
        return [r for r in self.results if r.status in ("config_error", "failed")]


def _run_job(args: tuple[Path, Path | None, float, Tolerance | None]) -> ScenarioResult:
    return run_scenario(*args)


def find_scenarios(directory: Path) -> list[Path]:
    return sorted(p for p in Path(directory).rglob("*") if p.suffix in (".yaml", ".yml", ".json") and p.is_file())


class SuiteRunner(Component):
    """Runs every scenario under a directory, in parallel across scenarios."""

    def __init__(
        self,
        directory: Path,
        out: Path | None = None,
        jobs: int = 1,
        resolution_scale: float = DEFAULT_RESOLUTION_SCALE,
        tolerance: Tolerance | None = None,
    ):
        self.directory = Path(directory)
        self.out = Path(out) if out is not None else None
        self.jobs = max(1, jobs)
        self.resolution_scale = resolution_scale
        self.tolerance = tolerance

    def run(self) -> SuiteResult:
        paths = find_scenarios(self.directory)
        if not paths:
            self.warning(f"no scenario files under {self.directory}")
        jobs = [(p, self.out, self.resolution_scale, self.tolerance) for p in paths]
        if self.jobs == 1 or len(jobs) <= 1:
            results = [_run_job(job) for job in jobs]
        else:
            with ProcessPoolExecutor(max_workers=self.jobs) as pool:
                results = list(pool.map(_run_job, jobs))

        rows = [row for result in results for row in result.rows]
        aggregate = pd.DataFrame(rows, columns=SUMMARY_COLUMNS)
        coefficients = pd.DataFrame([r.coefficients for r in results if r.coefficients is not None])
        failures = [
            {"scenario": r.name, "status": r.status, "error": r.error} for r in results if r.status in ("config_error", "failed")
        ]
        if self.out is not None:
            write_frame(aggregate, self.out / "aggregate.csv")
            write_frame(coefficients, self.out / "coefficients.csv")
            write_frame(pd.DataFrame(failures, columns=["scenario", "status", "error"]), self.out / "failures.csv")
        for failure in failures:
            self.warning(f"{failure['scenario']}: {failure['status']}: {failure['error']}")
        self.info(f"{len(results)} scenarios, {len(rows)} verdicts, {len(failures)} failures")
        return SuiteResult(results, aggregate, coefficients)


def run_suite(
    directory: Path,
    out: Path | None = None,
    jobs: int = 1,
    resolution_scale: float = DEFAULT_RESOLUTION_SCALE,
    tolerance: Tolerance | None = None,
) -> SuiteResult:
    return SuiteRunner(directory, out, jobs, resolution_scale, tolerance).run()


# --- Convergence report ---

def convergence_report(
    scenario: Scenario,
    cell_counts: Sequence[int],
    out: Path | None = None,
    tolerance: Tolerance | None = None,
) -> pd.DataFrame:
    """Per resolution: L1 error against the exact solution (when declared) and every estimate margin.

    Raises:
        ConvergenceInputError: fewer than three or non-dyadic resolutions
    """
    cells = check_resolutions(cell_counts)
    runner = ScenarioRunner(scenario, None, tolerance=tolerance)
    frame = pd.DataFrame({"cells": cells})

    if scenario.exact is not None:
        exact = scenario.exact
        if "id" not in exact:
            raise ConfigError("missing 'id'", field="exact")
        table = convergence_study(
            runner.model, str(exact["id"]), exact.get("params"), scenario.lower, scenario.upper, cells, scenario.solver
        )
        frame = frame.merge(table.frame(), on="cells", how="left")

    for n in cells:
        outcome = runner.evaluate(f"cells_{n}", n)
        frame.loc[frame["cells"] == n, "h"] = outcome.spacing
        for report in outcome.reports:
            frame.loc[frame["cells"] == n, f"lhs_{report.estimate_id}"] = report.lhs
            frame.loc[frame["cells"] == n, f"rhs_{report.estimate_id}"] = report.rhs
            frame.loc[frame["cells"] == n, f"margin_{report.estimate_id}"] = report.margin
            frame.loc[frame["cells"] == n, f"verdict_{report.estimate_id}"] = report.verdict

    if out is not None:
        write_frame(frame, Path(out) / scenario.name / "convergence.csv")
    return frame
