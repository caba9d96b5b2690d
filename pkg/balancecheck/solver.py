"""First-order finite-volume solver for ∂ₜu + div f(t, x, u) = F(t, x, u).

Scheme:
    Explicit, unsplit, one local Lax-Friedrichs flux per face and axis

        F_{i+1/2} = (f_d(u_i) + f_d(u_{i+1})) / 2 - α (u_{i+1} - u_i) / 2,

    with α the max of |∂_u f_d(t_n, x_face, w)| over 9 values w between the two
    cell averages. The flux is evaluated at t_n. Ghost cells outside the grid
    are zero; the grid is padded beforehand so the solution never reaches them.

Time step:
    dt = cfl·h / (N·max face speed), further limited by dt·sup|∂_u F| ≤ 0.5 and
    clipped so every snapshot time is hit exactly (no interpolation in time).

Source integrators:
    euler  u ← u + dt·(L(u) + F(u))       (L: flux divergence)
    heun   SSP-RK2 on the full operator

Padding (margin_policy "auto"):
    c·T cells for the propagation bound, plus the random-walk allowance of the
    numerical support front, plus a few safety cells. The outermost cell layer
    is checked after every step; a nonzero value there stops the run.
"""

import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Literal

import numpy as np
import pandas as pd

from balancecheck import catalog
from balancecheck.common import (
    BalanceCheckError,
    CatalogError,
    Component,
    ConfigError,
    ConvergenceInputError,
    GridError,
    SupportBoundaryError,
)
from balancecheck.fields import Grid, ScalarField, SupportBox, l1_distance
from balancecheck.models import (
    BalanceLawModel,
    DomainSlab,
    Quantity,
    RangeTrack,
    diffusion_allowance,
    propagation_speed,
    range_track,
    sup_norm,
)

logger = logging.getLogger(__name__)

SourceIntegrator = Literal["euler", "heun"]
MarginPolicy = Literal["auto", "strict"]

DEFAULT_CFL = 0.45
DEFAULT_SNAPSHOTS = 32
FACE_SAMPLES = 9
SOURCE_STEP_LIMIT = 0.5
SAFETY_CELLS = 4
MAX_STEPS = 10**7

# Relative slack when deciding that a step lands on a snapshot time
TIME_EPS = 1e-13


@dataclass(frozen=True)
class SolverConfig:
    """Time stepping settings.

    snapshot_times defaults to DEFAULT_SNAPSHOTS uniform intervals of
    [0, end_time]; 0 and end_time are always included.
    """

    end_time: float
    cfl: float = DEFAULT_CFL
    snapshot_times: tuple[float, ...] | None = None
    source_integrator: SourceIntegrator = "euler"
    margin_policy: MarginPolicy = "auto"
    safety_cells: int = SAFETY_CELLS
    min_wave_speed: float = 0.0
    max_steps: int = MAX_STEPS

    def __post_init__(self):
        if not 0.0 < self.cfl <= 1.0:
            raise ConfigError(f"cfl must lie in (0, 1], got {self.cfl}", field="solver.cfl")
        if not self.end_time >= 0.0 or not math.isfinite(self.end_time):
            raise ConfigError(f"end_time must be finite and ≥ 0, got {self.end_time}", field="solver.end_time")
        if self.source_integrator not in ("euler", "heun"):
            raise ConfigError(f"unknown source integrator '{self.source_integrator}'", field="solver.source_integrator")
        if self.margin_policy not in ("auto", "strict"):
            raise ConfigError(f"unknown margin policy '{self.margin_policy}'", field="solver.margin_policy")
        if self.min_wave_speed < 0.0:
            raise ConfigError("min_wave_speed must be ≥ 0", field="solver.min_wave_speed")

        if self.snapshot_times is None:
            times = [self.end_time * k / DEFAULT_SNAPSHOTS for k in range(DEFAULT_SNAPSHOTS + 1)]
        else:
            times = sorted(float(t) for t in self.snapshot_times)
            if any(t < 0.0 or t > self.end_time for t in times):
                raise ConfigError(f"snapshot times must lie in [0, {self.end_time}]", field="solver.snapshots")
            if any(b <= a for a, b in zip(times, times[1:])):
                raise ConfigError("snapshot times must be strictly increasing", field="solver.snapshots")
            if not times or times[0] > 0.0:
                times.insert(0, 0.0)
            if times[-1] < self.end_time:
                times.append(self.end_time)
        if self.end_time == 0.0:
            times = [0.0]
        object.__setattr__(self, "snapshot_times", tuple(times))

    @property
    def times(self) -> tuple[float, ...]:
        return self.snapshot_times or (0.0,)


@dataclass(frozen=True)
class Trajectory:
    """Snapshots of one run plus step diagnostics."""

    times: tuple[float, ...]
    fields: tuple[ScalarField, ...]
    step_counts: tuple[int, ...]
    dt_history: tuple[float, ...]
    speed_history: tuple[float, ...]
    range_track: RangeTrack
    padding: int = 0

    @property
    def grid(self) -> Grid:
        return self.fields[0].grid

    @property
    def initial(self) -> ScalarField:
        return self.fields[0]

    @property
    def final(self) -> ScalarField:
        return self.fields[-1]

    @property
    def t_end(self) -> float:
        return self.times[-1]

    def diagnostics_frame(self) -> pd.DataFrame:
        """One row per step: step, time after the step, dt, max wave speed."""
        return pd.DataFrame(
            {
                "step": np.arange(1, len(self.dt_history) + 1),
                "time": np.cumsum(self.dt_history) if self.dt_history else np.zeros(0),
                "dt": list(self.dt_history),
                "max_wave_speed": list(self.speed_history),
            }
        )

    def write_diagnostics(self, path: Path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.diagnostics_frame().to_csv(path, index=False, float_format="%.17g")


def _margin_sup(values: np.ndarray) -> float:
    """max |u| over the outermost cell layer."""
    best = 0.0
    for axis in range(values.ndim):
        for index in (0, -1):
            best = max(best, float(np.max(np.abs(np.take(values, index, axis=axis)))))
    return best


def _face_coordinates(grid: Grid, axis: int) -> tuple[np.ndarray, ...]:
    """Sparse coordinates of the faces normal to `axis` (cell centers elsewhere)."""
    parts = []
    for d in range(grid.dimension):
        if d == axis:
            coords = grid.origin[d] + grid.spacing * np.arange(grid.cells[d] + 1)
        else:
            coords = grid.centers(d)
        shape = [1] * grid.dimension
        shape[d] = coords.size
        parts.append(coords.reshape(shape))
    return tuple(parts)


class FiniteVolumeSolver(Component):
    """Runs one model from one initial field through the configured snapshot times."""

    def __init__(self, model: BalanceLawModel, config: SolverConfig):
        if model.dimension < 1:
            raise GridError("model dimension must be positive")
        self.model = model
        self.config = config
        self._face_cache: dict[tuple[Grid, int], tuple[np.ndarray, ...]] = {}
        self._samples = np.linspace(0.0, 1.0, FACE_SAMPLES)

    def padding_cells(self, u0: ScalarField) -> int:
        """Cells to add per side so the support cannot reach the boundary by end_time."""
        grid = u0.grid
        end_time = self.config.end_time
        if end_time == 0.0:
            return self.config.safety_cells
        box = SupportBox(grid.lower, grid.upper)

        # |u(t)| ≤ (sup|u₀| + t·sup|F(·,·,0)|)·exp(t·sup|∂_u F|)
        source_at_zero = sup_norm(self.model, Quantity.SOURCE, DomainSlab.from_box(end_time, box, 0.0)).value
        bound = u0.sup + end_time * source_at_zero
        for _ in range(2):
            rate = sup_norm(self.model, Quantity.DU_SOURCE, DomainSlab.from_box(end_time, box, bound)).value
            bound = (u0.sup + end_time * source_at_zero) * math.exp(min(rate * end_time, 50.0))

        speed = propagation_speed(self.model, DomainSlab.from_box(end_time, box, bound))
        widened = box.dilate(speed * end_time)
        speed = max(speed, propagation_speed(self.model, DomainSlab.from_box(end_time, widened, bound)))

        h = grid.spacing
        step_speed = max(speed, self.config.min_wave_speed)
        steps = math.ceil(grid.dimension * step_speed * end_time / (self.config.cfl * h)) + 1
        cells = math.ceil(speed * end_time / h) + math.ceil(diffusion_allowance(h, steps) / h) + self.config.safety_cells
        self.info(f"padding {cells} cells per side (c = {speed:.4g}, |u| ≤ {bound:.4g}, ~{steps} steps)")
        return cells

    def prepare(self, u0: ScalarField) -> tuple[ScalarField, int]:
        if self.config.margin_policy == "strict":
            return u0, 0
        cells = self.padding_cells(u0)
        return u0.padded(cells), cells

    def _faces(self, grid: Grid, axis: int) -> tuple[np.ndarray, ...]:
        key = (grid, axis)
        if key not in self._face_cache:
            self._face_cache[key] = _face_coordinates(grid, axis)
        return self._face_cache[key]

    def _flux_divergence(self, t: float, grid: Grid, u: np.ndarray) -> tuple[np.ndarray, float]:
        """-Σ_d (F_{i+1/2} - F_{i-1/2}) / h and the largest face speed."""
        divergence = np.zeros_like(u)
        max_speed = 0.0
        for axis in range(grid.dimension):
            widths = [(0, 0)] * grid.dimension
            widths[axis] = (1, 1)
            padded = np.pad(u, widths)
            n = u.shape[axis]
            left = np.take(padded, np.arange(0, n + 1), axis=axis)
            right = np.take(padded, np.arange(1, n + 2), axis=axis)
            x = self._faces(grid, axis)

            between = left[None] + self._samples.reshape((-1,) + (1,) * u.ndim) * (right - left)[None]
            alpha = np.max(np.abs(self.model.evaluate(Quantity.FLUX_DU, t, x, between)[axis]), axis=0)
            face_flux = 0.5 * (self.model.flux(t, x, left)[axis] + self.model.flux(t, x, right)[axis]) - 0.5 * alpha * (
                right - left
            )
            face_flux = np.broadcast_to(face_flux, left.shape)
            divergence -= np.diff(face_flux, axis=axis) / grid.spacing
            max_speed = max(max_speed, float(np.max(alpha)))
        return divergence, max_speed

    def _source(self, t: float, grid: Grid, u: np.ndarray) -> np.ndarray:
        return np.broadcast_to(self.model.source(t, grid.mesh(), u), u.shape)

    def _operator(self, t: float, grid: Grid, u: np.ndarray) -> tuple[np.ndarray, float]:
        divergence, speed = self._flux_divergence(t, grid, u)
        return divergence + self._source(t, grid, u), speed

    def _time_step(self, t: float, grid: Grid, u: np.ndarray, speed: float, remaining: float) -> float:
        dt = remaining
        speed = max(speed, self.config.min_wave_speed)
        if speed > 0.0:
            dt = min(dt, self.config.cfl * grid.spacing / (grid.dimension * speed))
        rate = float(np.max(np.abs(self.model.evaluate(Quantity.DU_SOURCE, t, grid.mesh(), u))))
        if rate > 0.0:
            dt = min(dt, SOURCE_STEP_LIMIT / rate)
        return dt

    def solve(self, u0: ScalarField) -> Trajectory:
        """Integrate from u0 and return the snapshots.

        Raises:
            NonCompactSupportError: u0 is nonzero on its own margin (strict policy)
            SupportBoundaryError: the solution reached the outer cell layer
        """
        if u0.grid.dimension != self.model.dimension:
            raise GridError(f"{self.model.dimension}-D model cannot run on a {u0.grid.dimension}-D field")
        start, padding = self.prepare(u0)
        grid = start.grid
        threshold = u0.support_threshold()
        start.require_compact(threshold=threshold)

        times = self.config.times
        u = np.array(start.values)
        t = 0.0
        steps = 0
        fields = [start]
        step_counts = [0]
        dt_history: list[float] = []
        speed_history: list[float] = []

        for target in times[1:]:
            while t < target:
                operator, speed = self._operator(t, grid, u)
                dt = self._time_step(t, grid, u, speed, target - t)
                if self.config.source_integrator == "heun":
                    stage = u + dt * operator
                    operator2, _ = self._operator(t + dt, grid, stage)
                    u = 0.5 * (u + stage + dt * operator2)
                else:
                    u = u + dt * operator

                if target - (t + dt) <= TIME_EPS * max(1.0, target):
                    t = target
                else:
                    t += dt
                steps += 1
                dt_history.append(dt)
                speed_history.append(speed)

                if not np.all(np.isfinite(u)):
                    raise BalanceCheckError(f"{self.model.name}: non-finite values at t = {t:.6g}")
                margin = _margin_sup(u)
                if margin > threshold:
                    raise SupportBoundaryError(
                        f"{self.model.name}: support reached the padded boundary at t = {t:.6g} "
                        f"(max |u| = {margin:.3e} on the outer layer, {padding} padding cells)"
                    )
                if steps >= self.config.max_steps:
                    raise BalanceCheckError(f"{self.model.name}: step limit {self.config.max_steps} reached at t = {t:.6g}")

            fields.append(ScalarField(grid, u))
            step_counts.append(steps)
            self.debug(f"t = {t:.6g} after {steps} steps, max |u| = {fields[-1].sup:.6g}")

        track = range_track(times, fields, threshold)
        self.info(f"{self.model.name}: {steps} steps to T = {times[-1]:.6g} on {grid.cells} cells")
        return Trajectory(
            times=tuple(times),
            fields=tuple(fields),
            step_counts=tuple(step_counts),
            dt_history=tuple(dt_history),
            speed_history=tuple(speed_history),
            range_track=track,
            padding=padding,
        )


def solve(model: BalanceLawModel, u0: ScalarField, config: SolverConfig) -> Trajectory:
    return FiniteVolumeSolver(model, config).solve(u0)


def solve_pair(
    model: BalanceLawModel,
    u0: ScalarField,
    other: BalanceLawModel,
    v0: ScalarField,
    config: SolverConfig,
) -> tuple[Trajectory, Trajectory]:
    """Two runs on one padded grid (the larger of the two paddings)."""
    if not u0.grid.matches(v0.grid):
        raise GridError("initial fields of a pair must share one grid")
    if config.margin_policy == "strict":
        return solve(model, u0, config), solve(other, v0, config)
    cells = max(FiniteVolumeSolver(model, config).padding_cells(u0), FiniteVolumeSolver(other, config).padding_cells(v0))
    strict = replace(config, margin_policy="strict")
    trajectories = []
    for m, start in ((model, u0), (other, v0)):
        trajectory = solve(m, start.padded(cells), strict)
        trajectories.append(replace(trajectory, padding=cells))
    return trajectories[0], trajectories[1]


# --- Exact solutions ---

def _initial_from(spec: dict | None, dimension: int) -> Callable[..., np.ndarray]:
    spec = spec or {"id": "cos2_bump", "params": {}}
    return catalog.initial_data(spec["id"], spec.get("params"), dimension)


def _advection(p: dict, n: int) -> Callable[..., np.ndarray]:
    u0 = _initial_from(p["initial"], n)
    velocity = catalog.as_vector(p["velocity"], n, "exact.params.velocity")
    return lambda t, *x: u0(*(xi - a * t for xi, a in zip(x, velocity)))


def _box_pulse_burgers(p: dict, n: int) -> Callable[..., np.ndarray]:
    """Burgers from height·1_[a,b]: fan from a, plateau, shock moving at height/2.

    After t* = 2(b - a)/height the fan catches the shock and the solution is
    the triangle (x - a)/t on [a, a + sqrt(2(b - a)·height·t)].
    """
    if n != 1:
        raise GridError("Burgers box-pulse solutions are one-dimensional")
    a, b, height = float(p["lower"]), float(p["upper"]), float(p["height"])
    if height <= 0.0 or b <= a:
        raise ConfigError("box pulse needs height > 0 and upper > lower", field="exact.params")
    width = b - a

    def solution(t: float, x: np.ndarray) -> np.ndarray:
        if t == 0.0:
            return np.where((x >= a) & (x <= b), height, 0.0)
        if t < 2.0 * width / height:
            head, shock = a + height * t, b + height * t / 2.0
            return np.where((x >= a) & (x < head), (x - a) / t, np.where((x >= head) & (x < shock), height, 0.0))
        reach = a + math.sqrt(2.0 * width * height * t)
        return np.where((x >= a) & (x < reach), (x - a) / t, 0.0)

    return solution


def _source_decay(p: dict, n: int) -> Callable[..., np.ndarray]:
    u0 = _initial_from(p["initial"], n)
    rate = float(p["rate"])
    return lambda t, *x: math.exp(-rate * t) * u0(*x)


EXACT_SOLUTIONS: dict[str, dict[str, Any]] = {
    "advection": {"params": {"velocity": 1.0, "initial": None}, "build": _advection},
    "burgers_shock": {"params": {"lower": 0.0, "upper": 1.0, "height": 1.0}, "build": _box_pulse_burgers},
    "burgers_rarefaction": {"params": {"lower": 0.0, "upper": 2.0, "height": 1.0}, "build": _box_pulse_burgers},
    "source_decay": {"params": {"rate": 1.0, "initial": None}, "build": _source_decay},
}


def exact_solution(catalog_id: str, params: dict | None, grid: Grid, t: float) -> ScalarField:
    """Exact solution sampled at cell centers.

    Raises:
        CatalogError: unknown id
    """
    entry = EXACT_SOLUTIONS.get(catalog_id)
    if entry is None:
        raise CatalogError(f"unknown exact solution '{catalog_id}' (known: {', '.join(sorted(EXACT_SOLUTIONS))})")
    solution = entry["build"](catalog.merge_params(entry, params, "exact.params"), grid.dimension)
    return ScalarField(grid, np.broadcast_to(solution(t, *grid.mesh()), grid.shape))


def exact_model(catalog_id: str, params: dict | None, dimension: int) -> BalanceLawModel:
    """The model each exact solution belongs to."""
    entry = EXACT_SOLUTIONS.get(catalog_id)
    if entry is None:
        raise CatalogError(f"unknown exact solution '{catalog_id}'")
    p = catalog.merge_params(entry, params, "exact.params")
    if catalog_id == "advection":
        return BalanceLawModel.named("advection", {"velocity": p["velocity"]}, dimension)
    if catalog_id == "source_decay":
        return BalanceLawModel.named("source_decay", {"rate": p["rate"]}, dimension)
    return BalanceLawModel.named("burgers", None, dimension)


# --- Convergence ---

@dataclass(frozen=True)
class ConvergenceTable:
    catalog_id: str
    rows: tuple[dict, ...]
    order: float
    notes: tuple[str, ...] = field(default=())

    def frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(list(self.rows))
        frame["observed_order"] = self.order
        return frame


def check_resolutions(resolutions: Sequence[int]) -> list[int]:
    """Cell counts sorted ascending; at least three, each twice the previous.

    Raises:
        ConvergenceInputError: fewer than three or not dyadic
    """
    cells = sorted(int(n) for n in resolutions)
    if len(cells) < 3:
        raise ConvergenceInputError(f"need ≥ 3 resolutions, got {len(cells)}")
    if any(b != 2 * a for a, b in zip(cells, cells[1:])):
        raise ConvergenceInputError(f"resolutions must be dyadic, got {cells}")
    return cells


def observed_order(spacings: Sequence[float], errors: Sequence[float]) -> float:
    """Least-squares slope of log(error) against log(h)."""
    logs = np.log(np.maximum(np.asarray(errors, dtype=float), np.finfo(float).tiny))
    slope = np.polyfit(np.log(np.asarray(spacings, dtype=float)), logs, 1)[0]
    return float(slope)


def convergence_study(
    model: BalanceLawModel,
    catalog_id: str,
    params: dict | None,
    lower: tuple[float, ...],
    upper: tuple[float, ...],
    resolutions: Sequence[int],
    config: SolverConfig,
) -> ConvergenceTable:
    """L1 errors at end_time against the exact solution, and the observed order.

    The wave speed used for dt is at least 1 so dt scales with h even for
    models without transport.
    """
    cells = check_resolutions(resolutions)
    config = replace(config, min_wave_speed=max(config.min_wave_speed, 1.0))
    rows = []
    for n in cells:
        grid = Grid.from_bounds(lower, upper, n)
        u0 = exact_solution(catalog_id, params, grid, 0.0)
        trajectory = solve(model, u0, config)
        reference = exact_solution(catalog_id, params, trajectory.grid, config.end_time)
        error = l1_distance(trajectory.final, reference)
        rows.append({"cells": n, "h": grid.spacing, "l1_error": error, "steps": trajectory.step_counts[-1]})
        logger.info("%s: %d cells, L1 error %.4e", catalog_id, n, error)
    order = observed_order([row["h"] for row in rows], [row["l1_error"] for row in rows])
    return ConvergenceTable(catalog_id, tuple(rows), order)
