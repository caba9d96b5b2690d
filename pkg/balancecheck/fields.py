"""Uniform-grid scalar fields and their BV functionals.

Fields are cell averages on an isotropic grid of N dimensions. All functionals
assume the field vanishes outside the grid; the compact-support check looks at
the outermost layer of cells (the margin).

Summation:
    Every reduction goes through common.compensated_sum (exactly rounded, fixed
    C-order) so results do not depend on the number of workers.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from balancecheck.common import (
    GridError,
    NonCompactSupportError,
    NonLatticeShiftError,
    ProfileError,
    SubGridScaleError,
    compensated_sum,
)
from balancecheck.constants import MollifierProfile

logger = logging.getLogger(__name__)

# Upper bound on the number of cells of a grid
MAX_CELLS = 2**24

DEFAULT_MARGIN_WIDTH = 1

# Relative support threshold: |u| > SUPPORT_RTOL * max|u| counts as support
SUPPORT_RTOL = 1e-12

LATTICE_TOL = 1e-9


@dataclass(frozen=True)
class Grid:
    """Isotropic uniform grid.

    Cell i (multi-index) covers origin + h·[i, i+1) per axis; its center is
    origin + h·(i + 1/2).
    """

    origin: tuple[float, ...]
    spacing: float
    cells: tuple[int, ...]

    def __post_init__(self):
        if len(self.origin) != len(self.cells) or not self.cells:
            raise GridError(f"origin {self.origin} and cells {self.cells} disagree on dimension")
        if not self.spacing > 0.0 or not math.isfinite(self.spacing):
            raise GridError(f"spacing must be positive, got {self.spacing}")
        if any(n < 1 for n in self.cells):
            raise GridError(f"cells per axis must be positive, got {self.cells}")
        if math.prod(self.cells) > MAX_CELLS:
            raise GridError(f"{math.prod(self.cells)} cells exceed the cap of {MAX_CELLS}")

    @classmethod
    def from_bounds(cls, lower: tuple[float, ...], upper: tuple[float, ...], cells_first_axis: int) -> "Grid":
        """Grid covering [lower, upper] with the spacing set by the first axis.

        The other axes get as many cells as fit their extent (rounded up).
        """
        if len(lower) != len(upper):
            raise GridError("lower and upper bounds disagree on dimension")
        extents = [hi - lo for lo, hi in zip(lower, upper)]
        if any(e <= 0.0 for e in extents):
            raise GridError(f"empty box {lower} .. {upper}")
        h = extents[0] / cells_first_axis
        cells = [cells_first_axis] + [max(1, math.ceil(e / h - 1e-9)) for e in extents[1:]]
        return cls(tuple(float(v) for v in lower), h, tuple(cells))

    @property
    def dimension(self) -> int:
        return len(self.cells)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.cells

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dimension

    @property
    def lower(self) -> tuple[float, ...]:
        return self.origin

    @property
    def upper(self) -> tuple[float, ...]:
        return tuple(o + n * self.spacing for o, n in zip(self.origin, self.cells))

    def centers(self, axis: int) -> np.ndarray:
        """1-D cell-center coordinates along one axis."""
        return self.origin[axis] + self.spacing * (np.arange(self.cells[axis]) + 0.5)

    def mesh(self, sparse: bool = True) -> tuple[np.ndarray, ...]:
        """Cell-center coordinate arrays broadcastable to the grid shape."""
        return tuple(np.meshgrid(*(self.centers(d) for d in range(self.dimension)), indexing="ij", sparse=sparse))

    def padded(self, cells_per_side: int) -> "Grid":
        """Same spacing, grown by cells_per_side on every side."""
        return Grid(
            tuple(o - cells_per_side * self.spacing for o in self.origin),
            self.spacing,
            tuple(n + 2 * cells_per_side for n in self.cells),
        )

    def matches(self, other: "Grid") -> bool:
        return (
            self.cells == other.cells
            and math.isclose(self.spacing, other.spacing, rel_tol=1e-12)
            and all(math.isclose(a, b, rel_tol=1e-12, abs_tol=1e-12 * self.spacing) for a, b in zip(self.origin, other.origin))
        )

    def metadata(self) -> dict:
        return {"h": self.spacing, "N": self.dimension, "cells": list(self.cells), "origin": list(self.origin)}


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != self.grid.shape:
            raise GridError(f"values of shape {values.shape} do not fit grid {self.grid.shape}")
        if not np.all(np.isfinite(values)):
            raise GridError("field values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, grid: Grid) -> "ScalarField":
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def sample(cls, grid: Grid, fn) -> "ScalarField":
        """Cell-center sampling of fn(*coordinates)."""
        values = np.broadcast_to(fn(*grid.mesh()), grid.shape)
        return cls(grid, values)

    @property
    def sup(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0

    def support_threshold(self) -> float:
        """Default support threshold, SUPPORT_RTOL relative to max|u|."""
        scale = self.sup
        return SUPPORT_RTOL * scale if scale > 0.0 else SUPPORT_RTOL

    def margin_sup(self, width: int = DEFAULT_MARGIN_WIDTH) -> float:
        """max |u| over the outer layer of `width` cells."""
        mask = np.zeros(self.grid.shape, dtype=bool)
        for axis in range(self.grid.dimension):
            index = [slice(None)] * self.grid.dimension
            index[axis] = slice(0, width)
            mask[tuple(index)] = True
            index[axis] = slice(-width, None)
            mask[tuple(index)] = True
        return float(np.max(np.abs(self.values[mask])))

    def is_compact(self, width: int = DEFAULT_MARGIN_WIDTH, threshold: float = 0.0) -> bool:
        return self.margin_sup(width) <= threshold

    def require_compact(self, width: int = DEFAULT_MARGIN_WIDTH, threshold: float = 0.0):
        margin = self.margin_sup(width)
        if margin > threshold:
            raise NonCompactSupportError(
                f"field reaches the grid margin (max |u| = {margin:.3e} on the outer {width} cell layer); "
                "the domain is too small for the propagation bound"
            )

    def padded(self, cells_per_side: int) -> "ScalarField":
        return ScalarField(self.grid.padded(cells_per_side), np.pad(self.values, cells_per_side))

    def total(self) -> float:
        """∫ u dx as a compensated cell sum."""
        return compensated_sum(self.values) * self.grid.cell_volume


@dataclass(frozen=True)
class SupportBox:
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    empty: bool = False

    def __post_init__(self):
        if not self.empty and any(lo > hi for lo, hi in zip(self.lower, self.upper)):
            raise GridError(f"support box with lower {self.lower} above upper {self.upper}")

    @classmethod
    def nothing(cls, dimension: int) -> "SupportBox":
        return cls((0.0,) * dimension, (0.0,) * dimension, empty=True)

    @property
    def dimension(self) -> int:
        return len(self.lower)

    def dilate(self, radius: float) -> "SupportBox":
        if self.empty:
            return self
        return SupportBox(tuple(lo - radius for lo in self.lower), tuple(hi + radius for hi in self.upper))

    def union(self, other: "SupportBox") -> "SupportBox":
        if self.empty:
            return other
        if other.empty:
            return self
        return SupportBox(
            tuple(min(a, b) for a, b in zip(self.lower, other.lower)),
            tuple(max(a, b) for a, b in zip(self.upper, other.upper)),
        )

    def intersect(self, other: "SupportBox") -> "SupportBox":
        if self.empty or other.empty:
            return SupportBox.nothing(self.dimension)
        lower = tuple(max(a, b) for a, b in zip(self.lower, other.lower))
        upper = tuple(min(a, b) for a, b in zip(self.upper, other.upper))
        if any(lo > hi for lo, hi in zip(lower, upper)):
            return SupportBox.nothing(self.dimension)
        return SupportBox(lower, upper)

    def contains(self, other: "SupportBox", slack: float = 0.0) -> bool:
        if other.empty:
            return True
        if self.empty:
            return False
        return all(
            lo - slack <= olo and ohi <= hi + slack
            for lo, hi, olo, ohi in zip(self.lower, self.upper, other.lower, other.upper)
        )

    def cell_mask(self, grid: Grid) -> np.ndarray:
        """Cells whose centers lie in the box."""
        if self.empty:
            return np.zeros(grid.shape, dtype=bool)
        mask = np.ones(grid.shape, dtype=bool)
        for axis, coords in enumerate(grid.mesh()):
            mask &= (coords >= self.lower[axis]) & (coords <= self.upper[axis])
        return mask

    def as_dict(self) -> dict:
        if self.empty:
            return {"empty": True}
        return {"empty": False, "lower": list(self.lower), "upper": list(self.upper)}


@dataclass(frozen=True)
class Ball:
    center: tuple[float, ...]
    radius: float

    def cell_mask(self, grid: Grid) -> np.ndarray:
        """Cells whose centers lie within the closed ball."""
        distance_sq = sum((coords - c) ** 2 for coords, c in zip(grid.mesh(), self.center))
        return np.broadcast_to(distance_sq <= self.radius**2, grid.shape)


def _difference_along(values: np.ndarray, axis: int) -> np.ndarray:
    return np.diff(values, axis=axis)


def total_variation(field: ScalarField, threshold: float | None = None) -> float:
    """Anisotropic grid TV: Σ_d Σ |u(x + h e_d) - u(x)| h^{N-1}.

    Margin values up to `threshold` (default: the field's own support
    threshold) count as zero tails.

    Raises:
        NonCompactSupportError: values above the threshold on the margin layer
    """
    field.require_compact(threshold=field.support_threshold() if threshold is None else threshold)
    grid = field.grid
    face = grid.spacing ** (grid.dimension - 1)
    jumps = [compensated_sum(np.abs(_difference_along(field.values, d))) for d in range(grid.dimension)]
    return compensated_sum(jumps) * face


def _shift_difference(values: np.ndarray, offset: tuple[int, ...]) -> np.ndarray:
    """u(x) - u(x - k h) on a zero-padded array wide enough for the shift."""
    widths = [(abs(k), abs(k)) for k in offset]
    padded = np.pad(values, widths)
    shifted = padded
    for axis, k in enumerate(offset):
        if k:
            shifted = np.roll(shifted, k, axis=axis)
    return padded - shifted


def _lattice_offset(grid: Grid, z) -> tuple[int, ...]:
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if z.shape != (grid.dimension,):
        raise NonLatticeShiftError(f"shift {z.tolist()} does not have {grid.dimension} components")
    ratio = z / grid.spacing
    rounded = np.rint(ratio)
    if np.any(np.abs(ratio - rounded) > LATTICE_TOL * np.maximum(1.0, np.abs(ratio))):
        raise NonLatticeShiftError(f"shift {z.tolist()} is not a multiple of h = {grid.spacing}")
    return tuple(int(k) for k in rounded)


def _offset_l1(field: ScalarField, offset: tuple[int, ...]) -> float:
    if not any(offset):
        return 0.0
    return compensated_sum(np.abs(_shift_difference(field.values, offset))) * field.grid.cell_volume


def shifted_l1_difference(field: ScalarField, z) -> float:
    """∫ |u(x) - u(x - z)| dx for a lattice vector z.

    Raises:
        NonLatticeShiftError: z is not an integer multiple of h per axis
    """
    return _offset_l1(field, _lattice_offset(field.grid, z))


def _lattice_ball(grid: Grid, radius: float) -> list[tuple[int, ...]]:
    """Lattice offsets k ≠ 0 with |k h| < radius, one of each ±k pair."""
    reach = int(math.floor(radius / grid.spacing))
    offsets = []
    for k in itertools.product(range(-reach, reach + 1), repeat=grid.dimension):
        if k <= (0,) * grid.dimension:
            continue
        if math.hypot(*k) * grid.spacing < radius:
            offsets.append(k)
    return offsets


def tv_via_mollifier(field: ScalarField, profile: MollifierProfile, scale: float) -> float:
    """TV estimate (1/C₁)(1/λ) ∬ |u(x) - u(x - z)| ρ_λ(z) dx dz.

    The z-integral runs over the lattice points of the ball of radius λ with
    weights ρ_λ(z) h^N; C₁ is evaluated with the same weights, so the estimate
    is exact for one-dimensional piecewise-constant data.

    Raises:
        SubGridScaleError: λ < 2h
        NonCompactSupportError: nonzero margin above the support threshold
    """
    grid = field.grid
    if scale < 2.0 * grid.spacing:
        raise SubGridScaleError(f"sub-grid smoothing scale: λ = {scale} < 2h = {2.0 * grid.spacing}")
    if profile.dimension != grid.dimension:
        raise ProfileError(f"profile normalized for N={profile.dimension}, field has N={grid.dimension}")
    field.require_compact(threshold=field.support_threshold())

    quotient_terms = []
    c1_terms = []
    for offset in _lattice_ball(grid, scale):
        distance = math.hypot(*offset) * grid.spacing
        weight = 2.0 * float(profile.density(distance, scale)) * grid.cell_volume
        if weight == 0.0:
            continue
        quotient_terms.append(weight * _offset_l1(field, offset))
        c1_terms.append(weight * abs(offset[0]) * grid.spacing / scale)

    c1 = compensated_sum(c1_terms)
    if c1 == 0.0:
        raise SubGridScaleError(f"no lattice point carries weight at λ = {scale}")
    return compensated_sum(quotient_terms) / (scale * c1)


def l1_distance(a: ScalarField, b: ScalarField, region: Ball | SupportBox | None = None) -> float:
    """Σ |a - b| h^N over cells whose centers lie in region (all cells if None).

    Raises:
        GridError: the fields live on different grids
    """
    if not a.grid.matches(b.grid):
        raise GridError("l1_distance needs fields on identical grids")
    difference = np.abs(a.values - b.values)
    if region is not None:
        difference = np.where(region.cell_mask(a.grid), difference, 0.0)
    return compensated_sum(difference) * a.grid.cell_volume


def support_box(field: ScalarField, threshold: float | None = None) -> SupportBox:
    """Tight box around cells with |u| > threshold (cell edges, not centers)."""
    if threshold is None:
        threshold = field.support_threshold()
    grid = field.grid
    active = np.abs(field.values) > threshold
    if not np.any(active):
        return SupportBox.nothing(grid.dimension)
    lower, upper = [], []
    for axis in range(grid.dimension):
        other = tuple(d for d in range(grid.dimension) if d != axis)
        along = np.any(active, axis=other) if other else active
        hits = np.flatnonzero(along)
        lower.append(grid.origin[axis] + hits[0] * grid.spacing)
        upper.append(grid.origin[axis] + (hits[-1] + 1) * grid.spacing)
    return SupportBox(tuple(lower), tuple(upper))


# --- Snapshot dumps ---

def write_snapshot(field: ScalarField, path: Path, time: float | None = None):
    """Dump a field as CSV (cell centers + value) or .npz, chosen by suffix.

    The CSV starts with '#'-prefixed metadata lines: dimension, spacing,
    origin, cells and, when given, the snapshot time.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    grid = field.grid
    if path.suffix == ".npz":
        np.savez(
            path,
            values=field.values,
            origin=np.array(grid.origin),
            spacing=np.array(grid.spacing),
            cells=np.array(grid.cells),
            time=np.array(np.nan if time is None else time),
        )
        return

    columns = {f"x{d + 1}": coords.ravel() for d, coords in enumerate(grid.mesh(sparse=False))}
    columns["value"] = field.values.ravel()
    header = [
        f"# dimension: {grid.dimension}",
        f"# spacing: {grid.spacing!r}",
        f"# origin: {' '.join(repr(o) for o in grid.origin)}",
        f"# cells: {' '.join(str(n) for n in grid.cells)}",
    ]
    if time is not None:
        header.append(f"# time: {time!r}")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(header) + "\n")
        pd.DataFrame(columns).to_csv(fh, index=False, float_format="%.17g")


def read_snapshot(path: Path) -> tuple[ScalarField, float | None]:
    """Inverse of write_snapshot."""
    path = Path(path)
    if path.suffix == ".npz":
        with np.load(path) as data:
            grid = Grid(tuple(data["origin"].tolist()), float(data["spacing"]), tuple(int(n) for n in data["cells"]))
            time = float(data["time"])
            return ScalarField(grid, data["values"]), None if math.isnan(time) else time

    meta: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].partition(":")
            meta[key.strip()] = value.strip()
    frame = pd.read_csv(path, comment="#")
    grid = Grid(
        tuple(float(v) for v in meta["origin"].split()),
        float(meta["spacing"]),
        tuple(int(v) for v in meta["cells"].split()),
    )
    time = float(meta["time"]) if "time" in meta else None
    return ScalarField(grid, frame["value"].to_numpy().reshape(grid.shape)), time
