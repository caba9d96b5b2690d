import math

import numpy as np
import pytest

from balancecheck.common import GridError, MissingDerivativeError, SamplingError
from balancecheck.constants import wallis_integral
from balancecheck.fields import ScalarField, SupportBox
from balancecheck.models import (
    BalanceLawModel,
    DomainSlab,
    Quantity,
    Sampling,
    check_hypotheses,
    check_support_growth,
    derivative_consistency,
    kappa_1,
    kappa_star,
    kappa_star_0,
    legacy_coefficients,
    pair_range_track,
    propagation_speed,
    quantity_norm,
    range_track,
    residual_box_integral,
    sup_norm,
)


def _bare_burgers(numeric_fallback: bool) -> BalanceLawModel:
    return BalanceLawModel(
        dimension=1,
        flux=lambda t, x, u: np.stack(np.broadcast_arrays(u**2 / 2.0, *x)[:1]),
        source=lambda t, x, u: np.zeros(np.broadcast_shapes(np.shape(u), *(np.shape(c) for c in x))),
        name="bare_burgers",
        numeric_fallback=numeric_fallback,
    )


class TestEvaluate:
    def test_analytic_burgers_speed(self, burgers):
        u = np.array([-2.0, 0.0, 1.5])
        np.testing.assert_allclose(burgers.evaluate(Quantity.FLUX_DU, 0.0, (np.zeros(3),), u)[0], u)

    def test_numeric_fallback(self):
        model = _bare_burgers(numeric_fallback=True)
        u = np.array([-2.0, 0.5, 1.5])
        np.testing.assert_allclose(model.evaluate(Quantity.FLUX_DU, 0.0, (np.zeros(3),), u)[0], u, rtol=1e-8)
        assert model.provenance()[Quantity.FLUX_DU.value] == "numeric"

    def test_missing_derivative_names_the_hypotheses(self):
        model = _bare_burgers(numeric_fallback=False)
        with pytest.raises(MissingDerivativeError, match="regularity"):
            model.evaluate(Quantity.FLUX_DU, 0.0, (np.zeros(1),), np.ones(1))

    def test_residual_of_source_decay(self):
        model = BalanceLawModel.named("source_decay", {"rate": 2.0}, 1)
        x = (np.array([0.3]),)
        assert model.evaluate(Quantity.RESIDUAL, 0.0, x, np.array([1.5]))[0] == pytest.approx(-3.0)
        assert model.evaluate(Quantity.DU_RESIDUAL, 0.0, x, np.array([1.5]))[0] == pytest.approx(-2.0)

    def test_difference_and_scaling(self, burgers):
        x, u = (np.zeros(2),), np.array([1.0, -3.0])
        difference = burgers.difference(burgers)
        np.testing.assert_allclose(difference.evaluate(Quantity.FLUX_DU, 0.0, x, u), 0.0)
        scaled = burgers.scaled(1.5)
        np.testing.assert_allclose(scaled.evaluate(Quantity.FLUX_DU, 0.0, x, u)[0], 1.5 * u)
        np.testing.assert_allclose(scaled.evaluate(Quantity.SOURCE, 0.0, x, u), 0.0)

    def test_difference_needs_one_dimension(self, burgers):
        with pytest.raises(GridError):
            burgers.difference(BalanceLawModel.named("burgers", None, 2))


def test_quantity_norms():
    assert quantity_norm(Quantity.DU_SOURCE, np.array([-2.0]))[0] == pytest.approx(2.0)
    assert quantity_norm(Quantity.FLUX_DU, np.array([[3.0], [4.0]]))[0] == pytest.approx(5.0)
    square = np.array([[1.0, -3.0], [2.0, 0.5]])[..., None]
    assert quantity_norm(Quantity.GRAD_DU_FLUX, square)[0] == pytest.approx(3.0)


class TestSlab:
    def test_invalid_slab(self):
        with pytest.raises(ValueError):
            DomainSlab(-1.0, (0.0,), (1.0,), 1.0)
        with pytest.raises(ValueError):
            DomainSlab(1.0, (0.0,), (1.0,), -1.0)

    def test_empty_slab_has_zero_norms(self, burgers):
        slab = DomainSlab.from_box(1.0, SupportBox.nothing(1), 1.0)
        assert sup_norm(burgers, Quantity.FLUX_DU, slab).value == 0.0

    def test_containment(self):
        big = DomainSlab(1.0, (-1.0,), (2.0,), 2.0)
        small = DomainSlab(0.5, (0.0,), (1.0,), 1.0)
        assert big.contains(small)
        assert not small.contains(big)


class TestCoefficients:
    def test_sine_flux_kappa_star_0(self):
        model = BalanceLawModel.named("sine_flux", None, 1)
        slab = DomainSlab(1.0, (0.0,), (2.0 * math.pi,), 1.0)
        assert kappa_star_0(model, slab) == pytest.approx(3.0, rel=1e-12)

    def test_peak_between_grid_points_is_found(self, sampling):
        # 0 is not on the 17-point grid over [-0.37, 1.1]
        model = BalanceLawModel.named("sine_flux", None, 1)
        slab = DomainSlab(1.0, (-0.37,), (1.1,), 1.0)
        estimate = sup_norm(model, Quantity.GRAD_DU_FLUX, slab, sampling)
        assert estimate.value == pytest.approx(1.0, abs=1e-9)
        assert estimate.argmax["x"][0] == pytest.approx(0.0, abs=1e-3)
        sampled = sup_norm(model, Quantity.GRAD_DU_FLUX, slab, Sampling(points=17, rounds=1, polish=False))
        assert sampled.value < 1.0 - 1e-6
        assert kappa_star_0(model, slab, sampling) == pytest.approx(3.0, abs=1e-8)

    def test_source_decay_coefficients(self):
        model = BalanceLawModel.named("source_decay", {"rate": 0.7}, 1)
        slab = DomainSlab(1.0, (-1.0,), (1.0,), 2.0)
        assert kappa_star_0(model, slab) == pytest.approx(0.7)
        assert kappa_star(model, slab) == pytest.approx(0.7)
        assert kappa_1(model, slab, slab) == pytest.approx(0.7)

    def test_burgers_speed_is_value_bound(self, burgers):
        slab = DomainSlab(1.0, (0.0,), (1.0,), 1.5)
        assert propagation_speed(burgers, slab) == pytest.approx(1.5)

    @pytest.mark.parametrize("dimension", [1, 2, 3])
    def test_legacy_ratio_is_n_times_wallis(self, dimension):
        model = BalanceLawModel.from_catalog(
            dimension, ("variable_advection", {"base": 0.5, "amplitude": 1.0}), ("linear", {"alpha": -1.0})
        )
        slab = DomainSlab(1.0, (0.0,) * dimension, (2.0 * math.pi,) * dimension, 1.0)
        legacy = legacy_coefficients(model, None, slab, Sampling(points=9, rounds=1))
        assert legacy.ratio == pytest.approx(dimension * wallis_integral(dimension), rel=1e-12)
        assert legacy.kappa_old == pytest.approx(2 * dimension + 1.0, rel=1e-12)

    def test_sampling_error_names_the_point(self):
        model = BalanceLawModel(
            dimension=1,
            flux=lambda t, x, u: np.stack(np.broadcast_arrays(0.0 * u, *x)[:1]),
            source=lambda t, x, u: 1.0 / u,
            source_du=lambda t, x, u: -1.0 / u**2,
            name="singular",
        )
        slab = DomainSlab(1.0, (0.0,), (1.0,), 1.0)
        with pytest.raises(SamplingError, match="u=0"):
            sup_norm(model, Quantity.DU_SOURCE, slab)


@pytest.mark.parametrize(
    "name, params, dimension",
    [
        ("burgers", None, 1),
        ("sine_flux", {"wavenumber": 2.0}, 1),
        ("burgers_gaussian_source", None, 1),
        ("advection_gaussian_source", {"velocity": [1.0, 0.5]}, 2),
        ("advection_oscillating_source", {"frequency": 3.0}, 1),
    ],
)
def test_analytic_derivatives_match_differences(name, params, dimension):
    model = BalanceLawModel.named(name, params, dimension)
    slab = DomainSlab(1.0, (-1.0,) * dimension, (1.0,) * dimension, 1.0)
    checks = derivative_consistency(model, slab)
    assert checks
    assert all(check.consistent for check in checks), checks


class TestRangeTracking:
    def test_bounds_and_supports(self, indicator, bump):
        track = range_track((0.0, 1.0), (indicator, bump))
        assert track.bounds == (1.0, bump.sup)
        assert track.union.lower[0] == pytest.approx(0.0)
        assert track.global_bound == 1.0
        assert track.slab().t_end == 1.0

    def test_pair_track_takes_maxima(self, line_grid, indicator):
        zero = ScalarField.zeros(line_grid)
        pair = pair_range_track(range_track((0.0,), (indicator,)), range_track((0.0,), (zero,)))
        assert pair.bounds == (1.0,)
        assert not pair.union.empty

    def test_pair_track_rejects_time_mismatch(self, indicator):
        with pytest.raises(GridError):
            pair_range_track(range_track((0.0,), (indicator,)), range_track((0.5,), (indicator,)))


class TestSupportGrowth:
    def test_not_applicable_with_source_at_zero(self, indicator):
        model = BalanceLawModel.named("burgers_gaussian_source", None, 1)
        report = check_support_growth(model, range_track((0.0,), (indicator,)), indicator.grid.spacing, (0,))
        assert not report.applicable
        assert report.holds

    def test_static_support_is_contained(self, burgers, indicator):
        report = check_support_growth(burgers, range_track((0.0, 0.5), (indicator, indicator)), indicator.grid.spacing, (0, 10))
        assert report.applicable
        assert report.holds
        assert report.speed == pytest.approx(1.0)

    def test_jump_outside_cone_is_flagged(self, burgers, line_grid, indicator):
        moved = ScalarField.sample(line_grid, lambda x: np.where((x > 1.5) & (x < 1.9), 1.0, 0.0))
        report = check_support_growth(burgers, range_track((0.0, 0.01), (indicator, moved)), line_grid.spacing, (0, 1))
        assert not report.holds
        assert report.rows[-1].excess > 0.0


class TestHypotheses:
    def test_bounded_model_passes(self, burgers):
        slab = DomainSlab(1.0, (-1.0,), (1.0,), 1.0)
        report = check_hypotheses(burgers, slab, Sampling(points=9, rounds=1))
        assert report.by_name("sup_du_flux").value == pytest.approx(1.0)
        assert report.by_name("second_derivatives_flux").status == "assumed"
        assert report.by_name("integral_grad_residual").status == "pass"
        assert report.passed

    def test_unbounded_source_warns(self):
        model = BalanceLawModel.from_catalog(1, ("zero", None), ("affine_x", {"slope": 1.0}))
        slab = DomainSlab(1.0, (-1.0,), (1.0,), 1.0)
        report = check_hypotheses(model, slab, Sampling(points=9, rounds=1))
        assert report.by_name("integral_residual").status == "warn"
        assert not report.passed
        assert report.as_dict()["model"] == model.name


class TestTimeDependence:
    @pytest.fixture
    def pulsing(self) -> BalanceLawModel:
        return BalanceLawModel.from_catalog(1, ("zero", None), ("oscillating_gaussian", None))

    def test_catalog_marks_time_dependent_models(self, pulsing, burgers):
        assert not pulsing.autonomous
        assert burgers.autonomous
        assert not burgers.difference(pulsing).autonomous
        assert not pulsing.scaled(2.0).autonomous

    def test_sup_norm_samples_time(self, pulsing, sampling):
        # sin(πt) peaks at t = 1/2; an autonomous model would only see t = 0
        estimate = sup_norm(pulsing, Quantity.SOURCE, DomainSlab(1.0, (-1.0,), (1.0,), 1.0), sampling)
        assert estimate.value == pytest.approx(1.0, abs=1e-9)
        assert estimate.argmax["t"] == pytest.approx(0.5, abs=1e-4)
        short = sup_norm(pulsing, Quantity.SOURCE, DomainSlab(0.25, (-1.0,), (1.0,), 1.0), sampling)
        assert short.value == pytest.approx(math.sin(math.pi / 4), abs=1e-9)

    def test_residual_integral_follows_the_pulse(self, pulsing):
        steady = BalanceLawModel.from_catalog(1, ("zero", None), ("gaussian", None))
        slab = DomainSlab(1.0, (-1.0,), (1.0,), 1.0)
        ratio = residual_box_integral(pulsing, Quantity.RESIDUAL, slab, 4, 32) / residual_box_integral(
            steady, Quantity.RESIDUAL, slab, 4, 32
        )
        # ∫₀¹ |sin πt| dt on the coarse time grid
        assert ratio == pytest.approx(2.0 / math.pi, rel=2e-2)

    def test_hypotheses_pass(self, pulsing):
        report = check_hypotheses(pulsing, DomainSlab(1.0, (-1.0,), (1.0,), 1.0), Sampling(points=9, rounds=1))
        assert report.by_name("integral_residual").status == "pass"
        assert report.by_name("integral_grad_residual").status == "pass"
