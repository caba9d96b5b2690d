import math

import numpy as np
import pytest

from balancecheck import catalog
from balancecheck.common import GridError, NonCompactSupportError, NonLatticeShiftError, ProfileError, SubGridScaleError
from balancecheck.constants import build_mollifier
from balancecheck.fields import (
    Ball,
    Grid,
    ScalarField,
    SupportBox,
    l1_distance,
    read_snapshot,
    shifted_l1_difference,
    support_box,
    total_variation,
    tv_via_mollifier,
    write_snapshot,
)


class TestGrid:
    def test_from_bounds_sets_spacing_from_first_axis(self):
        grid = Grid.from_bounds((0.0, 0.0), (2.0, 1.0), 64)
        assert grid.spacing == pytest.approx(1 / 32)
        assert grid.cells == (64, 32)
        assert grid.upper == pytest.approx((2.0, 1.0))

    def test_empty_box_is_rejected(self):
        with pytest.raises(GridError):
            Grid.from_bounds((1.0,), (1.0,), 8)

    def test_cell_cap(self):
        with pytest.raises(GridError):
            Grid((0.0, 0.0), 1e-3, (5000, 5000))

    def test_centers_and_padding(self, line_grid):
        centers = line_grid.centers(0)
        assert centers[0] == pytest.approx(-1.0 + line_grid.spacing / 2)
        padded = line_grid.padded(3)
        assert padded.cells == (102,)
        assert padded.lower[0] == pytest.approx(-1.0 - 3 * line_grid.spacing)
        assert not padded.matches(line_grid)


class TestScalarField:
    def test_values_are_read_only(self, indicator):
        with pytest.raises(ValueError):
            indicator.values[0] = 1.0

    def test_non_finite_values_are_rejected(self, line_grid):
        values = np.zeros(line_grid.shape)
        values[3] = np.nan
        with pytest.raises(GridError):
            ScalarField(line_grid, values)

    def test_shape_mismatch(self, line_grid):
        with pytest.raises(GridError):
            ScalarField(line_grid, np.zeros(5))

    def test_total_of_indicator(self, indicator):
        assert indicator.total() == pytest.approx(1.0, abs=1e-12)


class TestTotalVariation:
    def test_indicator_has_variation_two(self, indicator):
        assert total_variation(indicator) == pytest.approx(2.0, abs=1e-14)

    def test_two_dimensional_square_gives_perimeter(self):
        grid = Grid.from_bounds((-1.0, -1.0), (2.0, 2.0), 48)
        square = ScalarField.sample(grid, catalog.initial_data("indicator", {"lower": 0.0, "upper": 1.0}, 2))
        # 16 × 16 cells of width 1/16, two jumps per row and column
        assert total_variation(square) == pytest.approx(4.0)

    def test_field_on_margin_is_rejected(self, line_grid):
        ones = ScalarField(line_grid, np.ones(line_grid.shape))
        with pytest.raises(NonCompactSupportError):
            total_variation(ones)

    def test_tiny_tails_count_as_zero(self, indicator):
        values = np.array(indicator.values)
        values[0] = 1e-14
        assert total_variation(ScalarField(indicator.grid, values)) == pytest.approx(2.0 + 1e-14)


class TestShiftedDifference:
    def test_lattice_shift_of_indicator(self, indicator):
        h = indicator.grid.spacing
        assert shifted_l1_difference(indicator, 3 * h) == pytest.approx(6 * h)
        assert shifted_l1_difference(indicator, -3 * h) == pytest.approx(6 * h)
        assert shifted_l1_difference(indicator, 0.0) == 0.0

    def test_non_lattice_shift(self, indicator):
        with pytest.raises(NonLatticeShiftError):
            shifted_l1_difference(indicator, 0.3 * indicator.grid.spacing)

    def test_wrong_component_count(self, indicator):
        with pytest.raises(NonLatticeShiftError):
            shifted_l1_difference(indicator, [0.0, 0.0])

    def test_bounded_by_shift_times_variation(self):
        grid = Grid.from_bounds((0.0,), (1.0,), 128)
        h = grid.spacing
        rng = np.random.default_rng(11)
        for _ in range(100):
            # piecewise constant on random breakpoints, zero on a 16-cell margin
            breaks = np.sort(rng.choice(np.arange(17, 112), size=rng.integers(1, 12), replace=False))
            levels = rng.uniform(-2.0, 2.0, size=len(breaks) + 1)
            values = np.zeros(grid.shape)
            values[16:112] = levels[np.searchsorted(breaks, np.arange(16, 112), side="right")]
            field = ScalarField(grid, values)
            variation = total_variation(field)
            for k in rng.integers(-16, 17, size=10):
                z = float(k) * h
                assert shifted_l1_difference(field, z) <= abs(z) * variation * (1 + 1e-12) + 1e-15


class TestMollifiedVariation:
    @pytest.mark.parametrize("scale", [1 / 8, 1 / 16, 1 / 32])
    def test_indicator_at_fine_resolution(self, scale):
        grid = Grid.from_bounds((-1.0,), (2.0,), 3072)
        field = ScalarField.sample(grid, catalog.initial_data("indicator", None, 1))
        estimate = tv_via_mollifier(field, build_mollifier(0.5, 1), scale)
        assert estimate == pytest.approx(2.0, rel=0.05)

    def test_smooth_bump(self, bump):
        estimate = tv_via_mollifier(bump, build_mollifier(0.5, 1), 4 * bump.grid.spacing)
        assert estimate == pytest.approx(total_variation(bump), rel=0.05)

    def test_sub_grid_scale(self, indicator):
        with pytest.raises(SubGridScaleError):
            tv_via_mollifier(indicator, build_mollifier(0.5, 1), indicator.grid.spacing)

    def test_profile_dimension_mismatch(self, indicator):
        with pytest.raises(ProfileError):
            tv_via_mollifier(indicator, build_mollifier(0.5, 2), 0.25)


class TestRegions:
    def test_l1_distance_restricted_to_ball(self, line_grid, indicator):
        zero = ScalarField.zeros(line_grid)
        assert l1_distance(indicator, zero) == pytest.approx(indicator.total())
        inside = l1_distance(indicator, zero, Ball((0.0,), 0.25))
        assert inside == pytest.approx(8 * line_grid.spacing)

    def test_l1_distance_needs_one_grid(self, indicator):
        other = ScalarField.zeros(indicator.grid.padded(1))
        with pytest.raises(GridError):
            l1_distance(indicator, other)

    def test_support_box_uses_cell_edges(self, indicator):
        box = support_box(indicator)
        assert box.lower == pytest.approx((0.0,))
        assert box.upper == pytest.approx((1.0,))

    def test_support_of_zero_is_empty(self, line_grid):
        assert support_box(ScalarField.zeros(line_grid)).empty

    def test_box_algebra(self):
        a = SupportBox((0.0,), (1.0,))
        b = SupportBox((2.0,), (3.0,))
        assert a.union(b) == SupportBox((0.0,), (3.0,))
        assert a.intersect(b).empty
        assert a.dilate(0.5).contains(a)
        assert not a.contains(a.dilate(0.5))
        assert SupportBox.nothing(1).union(a) == a


class TestSnapshots:
    @pytest.mark.parametrize("suffix", [".csv", ".npz"])
    def test_write_and_read(self, tmp_path, bump, suffix):
        path = tmp_path / f"snapshot{suffix}"
        write_snapshot(bump, path, time=0.25)
        field, time = read_snapshot(path)
        assert time == 0.25
        assert field.grid.matches(bump.grid)
        np.testing.assert_array_equal(field.values, bump.values)

    def test_csv_header(self, tmp_path, bump):
        path = tmp_path / "snapshot.csv"
        write_snapshot(bump, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "# dimension: 1"
        assert lines[4] == "x1,value"
        assert not any(line.startswith("# time") for line in lines)
        assert math.isclose(float(lines[5].split(",")[0]), bump.grid.centers(0)[0])
