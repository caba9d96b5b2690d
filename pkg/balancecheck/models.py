"""Balance-law models, their derivative bundles and the coefficient norms.

A BalanceLawModel holds the flux f(t, x, u) (N components) and the source
F(t, x, u). Derivatives enter the estimates through a fixed set of quantities:

    du_flux         ∂_u f               vector, Euclidean norm
    grad_du_flux    ∇∂_u f              N×N matrix, max absolute entry
    du_source       ∂_u F               scalar
    div_flux        div f               scalar
    residual        F - div f           scalar
    grad_residual   ∇(F - div f)        vector (spatial gradient at fixed u)
    du_residual     ∂_u (F - div f)     scalar

Each is taken from the analytic bundle when supplied and otherwise from central
differences (step 1e-5·max(1, |arg|), 1e-4 when differencing an already
numeric derivative). The provenance of every quantity is recorded.

L∞ norms over a DomainSlab [0, T] × box × [-U, U] are sampled estimates:
a tensor grid (33 points per axis by default, fewer when the sample budget is
exceeded) followed by two refinement rounds around the argmax, each one four
times finer. Ties go to the lexicographically smallest probe index. The sampled
argmax then seeds a bounded L-BFGS-B search, kept only when it improves on the
sample.
"""

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field, replace
from enum import StrEnum
from functools import reduce

import numpy as np
from scipy.optimize import minimize

from balancecheck import catalog
from balancecheck.catalog import Coordinates, TermFunc
from balancecheck.common import (
    BalanceCheckError,
    GridError,
    MissingDerivativeError,
    SamplingError,
    compensated_sum,
)
from balancecheck.constants import wallis_integral
from balancecheck.fields import SUPPORT_RTOL, ScalarField, SupportBox, support_box

logger = logging.getLogger(__name__)

FD_STEP = 1e-5
NESTED_FD_STEP = 1e-4

# Sup-norm sampling
SUP_POINTS = 33
SUP_ROUNDS = 2
REFINE_POINTS = 9
SAMPLE_BUDGET = 2**21

# Hypothesis diagnostics
HYPOTHESIS_BOXES = (1, 2, 4, 8)
INTEGRAL_BUDGET = 2**21
INTEGRAL_VALUE_POINTS = 17
INTEGRAL_TIME_POINTS = 9
INTEGRAL_MAX_CELLS = 256
GROWTH_WARN_TOL = 1e-3
CONSISTENCY_PROBES = 5
CONSISTENCY_TOL = 1e-5

# Support growth: values below this fraction of max|u₀| count as zero
SUPPORT_EPSILON = SUPPORT_RTOL


class Quantity(StrEnum):
    FLUX_DU = "du_flux"
    GRAD_DU_FLUX = "grad_du_flux"
    DU_SOURCE = "du_source"
    DIV_FLUX = "div_flux"
    SOURCE = "source"
    RESIDUAL = "residual"
    GRAD_RESIDUAL = "grad_residual"
    DU_RESIDUAL = "du_residual"


RANK: dict[Quantity, int] = {
    Quantity.FLUX_DU: 1,
    Quantity.GRAD_DU_FLUX: 2,
    Quantity.DU_SOURCE: 0,
    Quantity.DIV_FLUX: 0,
    Quantity.SOURCE: 0,
    Quantity.RESIDUAL: 0,
    Quantity.GRAD_RESIDUAL: 1,
    Quantity.DU_RESIDUAL: 0,
}

# Hypothesis set that needs each derivative, for error messages
HYPOTHESES: dict[Quantity, str] = {
    Quantity.FLUX_DU: "flux/source regularity (∂_u f bounded)",
    Quantity.GRAD_DU_FLUX: "flux/source regularity (∇∂_u f bounded)",
    Quantity.DU_SOURCE: "flux/source regularity (∂_u F bounded)",
    Quantity.DIV_FLUX: "residual integrability (F - div f)",
    Quantity.SOURCE: "residual integrability (F - div f)",
    Quantity.RESIDUAL: "residual integrability (F - div f)",
    Quantity.GRAD_RESIDUAL: "residual-gradient integrability (∇(F - div f))",
    Quantity.DU_RESIDUAL: "residual integrability (F - div f)",
}

NORM_CONVENTION = "matrices: max absolute entry; vectors: Euclidean norm; all L∞ norms are sampled estimates"


def _combine(a: TermFunc | None, b: TermFunc | None, sign: float) -> TermFunc | None:
    if a is None or b is None:
        return None
    return lambda t, x, u: a(t, x, u) + sign * b(t, x, u)


def _scale(a: TermFunc | None, factor: float) -> TermFunc | None:
    if a is None:
        return None
    return lambda t, x, u: factor * a(t, x, u)


def _du_difference(fn: TermFunc, t, x: Coordinates, u, step: float) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    eta = step * np.maximum(1.0, np.abs(u))
    return (fn(t, x, u + eta) - fn(t, x, u - eta)) / (2.0 * eta)


def _dx_difference(fn: TermFunc, t, x: Coordinates, u, axis: int, step: float) -> np.ndarray:
    xi = np.asarray(x[axis], dtype=float)
    eta = step * np.maximum(1.0, np.abs(xi))
    plus = x[:axis] + (xi + eta,) + x[axis + 1 :]
    minus = x[:axis] + (xi - eta,) + x[axis + 1 :]
    return (fn(t, plus, u) - fn(t, minus, u)) / (2.0 * eta)


@dataclass(frozen=True, eq=False)
class BalanceLawModel:
    """∂ₜu + div f(t, x, u) = F(t, x, u) with an optional analytic derivative bundle."""

    dimension: int
    flux: TermFunc
    source: TermFunc
    flux_du: TermFunc | None = None
    flux_du_grad: TermFunc | None = None
    flux_div: TermFunc | None = None
    flux_div_grad: TermFunc | None = None
    source_du: TermFunc | None = None
    source_grad: TermFunc | None = None
    name: str = "model"
    autonomous: bool = True
    numeric_fallback: bool = True

    @classmethod
    def from_catalog(
        cls,
        dimension: int,
        flux: tuple[str, dict | None],
        source: tuple[str, dict | None],
        name: str | None = None,
        numeric_fallback: bool = True,
    ) -> "BalanceLawModel":
        """Assemble a model from catalog flux and source ids."""
        f = catalog.flux_term(flux[0], flux[1], dimension)
        s = catalog.source_term(source[0], source[1], dimension)
        return cls(
            dimension=dimension,
            flux=f["flux"],
            source=s["source"],
            flux_du=f.get("du"),
            flux_du_grad=f.get("du_grad"),
            flux_div=f.get("div"),
            flux_div_grad=f.get("div_grad"),
            source_du=s.get("du"),
            source_grad=s.get("grad"),
            name=name or f"{flux[0]}+{source[0]}",
            autonomous=not catalog.time_dependent(flux[0], source[0]),
            numeric_fallback=numeric_fallback,
        )

    @classmethod
    def named(cls, ident: str, params: dict | None, dimension: int) -> "BalanceLawModel":
        flux, source = catalog.model_parts(ident, params)
        return cls.from_catalog(dimension, flux, source, name=ident)

    def _analytic(self, quantity: Quantity) -> TermFunc | None:
        match quantity:
            case Quantity.FLUX_DU:
                return self.flux_du
            case Quantity.GRAD_DU_FLUX:
                return self.flux_du_grad
            case Quantity.DU_SOURCE:
                return self.source_du
            case Quantity.DIV_FLUX:
                return self.flux_div
            case Quantity.SOURCE:
                return self.source
            case Quantity.GRAD_RESIDUAL:
                return _combine(self.source_grad, self.flux_div_grad, -1.0)
        return None

    def provenance(self) -> dict[str, str]:
        """'analytic' or 'numeric' for every derivative quantity."""
        result = {}
        for quantity in (Quantity.FLUX_DU, Quantity.GRAD_DU_FLUX, Quantity.DU_SOURCE, Quantity.DIV_FLUX, Quantity.GRAD_RESIDUAL):
            result[quantity.value] = "analytic" if self._analytic(quantity) is not None else "numeric"
        return result

    def _require_fallback(self, quantity: Quantity):
        if not self.numeric_fallback:
            raise MissingDerivativeError(
                f"{self.name}: no analytic {quantity.value} and numeric fallback is disabled; "
                f"required by the {HYPOTHESES[quantity]} hypotheses"
            )

    def evaluate(self, quantity: Quantity, t, x: Coordinates, u, numeric: bool = False) -> np.ndarray:
        """Value of a quantity at (t, x, u); numeric=True forces central differences.

        Raises:
            MissingDerivativeError: derivative absent and fallback disabled
        """
        if quantity is Quantity.RESIDUAL:
            return self.source(t, x, u) - self.evaluate(Quantity.DIV_FLUX, t, x, u, numeric)
        if quantity is Quantity.DU_RESIDUAL:
            grad = self.evaluate(Quantity.GRAD_DU_FLUX, t, x, u, numeric)
            trace = sum(grad[i, i] for i in range(self.dimension))
            return self.evaluate(Quantity.DU_SOURCE, t, x, u, numeric) - trace

        analytic = self._analytic(quantity)
        if analytic is not None and (not numeric or quantity is Quantity.SOURCE):
            return analytic(t, x, u)
        if analytic is None:
            self._require_fallback(quantity)

        match quantity:
            case Quantity.FLUX_DU:
                return _du_difference(self.flux, t, x, u, FD_STEP)
            case Quantity.DU_SOURCE:
                return _du_difference(self.source, t, x, u, FD_STEP)
            case Quantity.GRAD_DU_FLUX:
                inner_numeric = numeric or self.flux_du is None
                step = NESTED_FD_STEP if inner_numeric else FD_STEP
                du = lambda t_, x_, u_: self.evaluate(Quantity.FLUX_DU, t_, x_, u_, numeric)  # noqa: E731
                columns = [_dx_difference(du, t, x, u, j, step) for j in range(self.dimension)]
                return np.stack(np.broadcast_arrays(*columns), axis=1)
            case Quantity.DIV_FLUX:
                parts = [
                    _dx_difference(lambda t_, x_, u_, i=i: self.flux(t_, x_, u_)[i], t, x, u, i, FD_STEP)
                    for i in range(self.dimension)
                ]
                return reduce(np.add, parts)
            case Quantity.GRAD_RESIDUAL:
                inner_numeric = numeric or self.flux_div is None
                step = NESTED_FD_STEP if inner_numeric else FD_STEP
                residual = lambda t_, x_, u_: self.evaluate(Quantity.RESIDUAL, t_, x_, u_, numeric)  # noqa: E731
                return np.stack(
                    np.broadcast_arrays(*[_dx_difference(residual, t, x, u, j, step) for j in range(self.dimension)])
                )
        raise ValueError(f"unsupported quantity {quantity}")

    def difference(self, other: "BalanceLawModel") -> "BalanceLawModel":
        """(f - g, F - G) with the derivative bundle wherever both sides supply it."""
        if other.dimension != self.dimension:
            raise GridError(f"cannot subtract a {other.dimension}-D model from a {self.dimension}-D one")
        return BalanceLawModel(
            dimension=self.dimension,
            flux=_combine(self.flux, other.flux, -1.0),  # type: ignore[arg-type]
            source=_combine(self.source, other.source, -1.0),  # type: ignore[arg-type]
            flux_du=_combine(self.flux_du, other.flux_du, -1.0),
            flux_du_grad=_combine(self.flux_du_grad, other.flux_du_grad, -1.0),
            flux_div=_combine(self.flux_div, other.flux_div, -1.0),
            flux_div_grad=_combine(self.flux_div_grad, other.flux_div_grad, -1.0),
            source_du=_combine(self.source_du, other.source_du, -1.0),
            source_grad=_combine(self.source_grad, other.source_grad, -1.0),
            name=f"({self.name}) - ({other.name})",
            autonomous=self.autonomous and other.autonomous,
            numeric_fallback=self.numeric_fallback and other.numeric_fallback,
        )

    def scaled(self, factor: float) -> "BalanceLawModel":
        """Same source, flux multiplied by factor (g = (1 + ε) f families)."""
        return replace(
            self,
            flux=_scale(self.flux, factor),
            flux_du=_scale(self.flux_du, factor),
            flux_du_grad=_scale(self.flux_du_grad, factor),
            flux_div=_scale(self.flux_div, factor),
            flux_div_grad=_scale(self.flux_div_grad, factor),
            name=f"{factor:g}*{self.name}",
        )


def quantity_norm(quantity: Quantity, values: np.ndarray) -> np.ndarray:
    """Pointwise norm following NORM_CONVENTION."""
    values = np.asarray(values, dtype=float)
    match RANK[quantity]:
        case 2:
            return np.max(np.abs(values), axis=(0, 1))
        case 1:
            return np.sqrt(np.sum(values**2, axis=0))
    return np.abs(values)


@dataclass(frozen=True)
class Sampling:
    points: int = SUP_POINTS
    rounds: int = SUP_ROUNDS
    refine_points: int = REFINE_POINTS
    budget: int = SAMPLE_BUDGET
    polish: bool = True

    def as_dict(self) -> dict:
        return {
            "points": self.points,
            "rounds": self.rounds,
            "refine_points": self.refine_points,
            "polish": self.polish,
        }


@dataclass(frozen=True)
class DomainSlab:
    """[0, t_end] × box × [-value_bound, value_bound]; an empty slab has zero norms."""

    t_end: float
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    value_bound: float
    empty: bool = False

    def __post_init__(self):
        if self.t_end < 0.0 or self.value_bound < 0.0:
            raise ValueError(f"slab needs t_end ≥ 0 and value bound ≥ 0, got {self.t_end}, {self.value_bound}")
        if not self.empty and any(lo > hi for lo, hi in zip(self.lower, self.upper)):
            raise ValueError(f"slab box lower {self.lower} above upper {self.upper}")

    @classmethod
    def from_box(cls, t_end: float, box: SupportBox, value_bound: float) -> "DomainSlab":
        if box.empty:
            return cls(t_end, (0.0,) * box.dimension, (0.0,) * box.dimension, value_bound, empty=True)
        return cls(t_end, box.lower, box.upper, value_bound)

    @property
    def dimension(self) -> int:
        return len(self.lower)

    @property
    def box(self) -> SupportBox:
        if self.empty:
            return SupportBox.nothing(self.dimension)
        return SupportBox(self.lower, self.upper)

    def with_values(self, value_bound: float) -> "DomainSlab":
        return replace(self, value_bound=value_bound)

    def with_box(self, box: SupportBox) -> "DomainSlab":
        return DomainSlab.from_box(self.t_end, box, self.value_bound)

    def contains(self, other: "DomainSlab") -> bool:
        if other.empty:
            return True
        return (
            not self.empty
            and other.t_end <= self.t_end
            and other.value_bound <= self.value_bound
            and self.box.contains(other.box)
        )

    def as_dict(self) -> dict:
        return {"t_end": self.t_end, "box": self.box.as_dict(), "value_bound": self.value_bound}


@dataclass(frozen=True)
class NormEstimate:
    value: float
    argmax: dict | None = None
    points_per_axis: int = 0
    rounds: int = 0


def _slab_ranges(model: BalanceLawModel, slab: DomainSlab) -> list[tuple[float, float]]:
    t_range = (0.0, 0.0) if model.autonomous else (0.0, slab.t_end)
    return [t_range, *zip(slab.lower, slab.upper), (-slab.value_bound, slab.value_bound)]


def _axis(lo: float, hi: float, points: int) -> np.ndarray:
    return np.linspace(lo, hi, points) if hi > lo else np.array([lo])


def _probe(model: BalanceLawModel, quantity: Quantity, axes: list[np.ndarray]) -> tuple[float, tuple[float, ...]]:
    """Max of the quantity norm over the tensor product of axes."""
    mesh = np.meshgrid(*axes, indexing="ij", sparse=True)
    t, x, u = mesh[0], tuple(mesh[1:-1]), mesh[-1]
    shape = tuple(len(a) for a in axes)
    with np.errstate(all="ignore"):
        norms = np.broadcast_to(quantity_norm(quantity, model.evaluate(quantity, t, x, u)), shape)
    finite = np.isfinite(norms)
    if not np.all(finite):
        index = np.unravel_index(int(np.argmin(finite)), shape)
        point = tuple(float(a[i]) for a, i in zip(axes, index))
        raise SamplingError(
            f"{model.name}: non-finite {quantity.value} at t={point[0]:.6g}, "
            f"x={[round(v, 6) for v in point[1:-1]]}, u={point[-1]:.6g}"
        )
    index = np.unravel_index(int(np.argmax(norms)), shape)
    return float(norms[index]), tuple(float(a[i]) for a, i in zip(axes, index))


def _polish(
    model: BalanceLawModel,
    quantity: Quantity,
    ranges: list[tuple[float, float]],
    best: float,
    point: tuple[float, ...],
) -> tuple[float, tuple[float, ...]]:
    """Bounded local maximization over the active coordinates, started at point."""
    free = [i for i, (lo, hi) in enumerate(ranges) if hi > lo]

    def at(p: np.ndarray) -> tuple[float, ...]:
        full = list(point)
        for i, v in zip(free, p):
            full[i] = float(v)
        return tuple(full)

    def negative_norm(p: np.ndarray) -> float:
        full = at(p)
        x = tuple(np.array([v]) for v in full[1:-1])
        with np.errstate(all="ignore"):
            value = quantity_norm(quantity, model.evaluate(quantity, full[0], x, np.array([full[-1]])))
        value = float(np.max(value))
        return -value if math.isfinite(value) else 0.0

    try:
        result = minimize(
            negative_norm,
            np.array([point[i] for i in free]),
            method="L-BFGS-B",
            bounds=[ranges[i] for i in free],
            options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 200},
        )
    except (ArithmeticError, ValueError) as e:
        logger.debug("%s: local search on %s abandoned: %s", model.name, quantity.value, e)
        return best, point
    value = -float(result.fun)
    if math.isfinite(value) and value > best:
        return value, at(result.x)
    return best, point


def sup_norm(
    model: BalanceLawModel,
    quantity: Quantity,
    slab: DomainSlab,
    sampling: Sampling = Sampling(),
) -> NormEstimate:
    """Sampled L∞ norm of a quantity over the slab.

    Raises:
        SamplingError: a probe returned a non-finite value (the point is named)
    """
    if slab.empty:
        return NormEstimate(0.0)
    ranges = _slab_ranges(model, slab)
    active = sum(1 for lo, hi in ranges if hi > lo)
    points = sampling.points
    while points > 3 and active and points**active > sampling.budget:
        points -= 1

    axes = [_axis(lo, hi, points) for lo, hi in ranges]
    spacings = [(hi - lo) / (points - 1) if hi > lo else 0.0 for lo, hi in ranges]
    best, point = _probe(model, quantity, axes)

    for _ in range(sampling.rounds):
        axes = [
            _axis(max(lo, c - s), min(hi, c + s), sampling.refine_points) if s > 0.0 else np.array([c])
            for (lo, hi), c, s in zip(ranges, point, spacings)
        ]
        value, candidate = _probe(model, quantity, axes)
        if value > best:
            best, point = value, candidate
        spacings = [2.0 * s / (sampling.refine_points - 1) for s in spacings]

    if sampling.polish and active:
        best, point = _polish(model, quantity, ranges, best, point)

    argmax = {"t": point[0], "x": list(point[1:-1]), "u": point[-1]}
    return NormEstimate(best, argmax, points, sampling.rounds)


def kappa_star_0(model: BalanceLawModel, slab: DomainSlab, sampling: Sampling = Sampling()) -> float:
    """(2N+1)·‖∇∂_u f‖ + ‖∂_u F‖ over the u-slab."""
    n = model.dimension
    gradient = sup_norm(model, Quantity.GRAD_DU_FLUX, slab, sampling).value
    source = sup_norm(model, Quantity.DU_SOURCE, slab, sampling).value
    return (2 * n + 1) * gradient + source


def kappa_star(model: BalanceLawModel, slab_uv: DomainSlab, sampling: Sampling = Sampling()) -> float:
    """‖∂_u F‖ over the pair slab."""
    return sup_norm(model, Quantity.DU_SOURCE, slab_uv, sampling).value


def kappa_1(
    model: BalanceLawModel,
    slab_u: DomainSlab,
    slab_uv: DomainSlab,
    sampling: Sampling = Sampling(),
) -> float:
    """(2N+1)·‖∇∂_u f‖ over the u-slab + ‖∂_u F‖ over the pair slab."""
    n = model.dimension
    gradient = sup_norm(model, Quantity.GRAD_DU_FLUX, slab_u, sampling).value
    return (2 * n + 1) * gradient + kappa_star(model, slab_uv, sampling)


@dataclass(frozen=True)
class LegacyCoefficients:
    """Prior-work coefficients next to the current ones, all on one slab."""

    dimension: int
    kappa_0_old: float
    kappa_old: float
    kappa_star_0: float
    kappa_star: float

    @property
    def ratio(self) -> float | None:
        """κ₀_old / κ*₀, equal to N·W_N whenever κ*₀ > 0."""
        return self.kappa_0_old / self.kappa_star_0 if self.kappa_star_0 > 0.0 else None


def legacy_coefficients(
    model: BalanceLawModel,
    comparison: BalanceLawModel | None,
    slab: DomainSlab,
    sampling: Sampling = Sampling(),
) -> LegacyCoefficients:
    """κ₀_old = N·W_N·((2N+1)‖∇∂_u f‖ + ‖∂_u F‖) and κ_old = 2N‖∇∂_u f‖ + ‖∂_u F‖ + ‖∂_u(F - G)‖."""
    n = model.dimension
    gradient = sup_norm(model, Quantity.GRAD_DU_FLUX, slab, sampling).value
    source = sup_norm(model, Quantity.DU_SOURCE, slab, sampling).value
    perturbation = 0.0
    if comparison is not None:
        perturbation = sup_norm(model.difference(comparison), Quantity.DU_SOURCE, slab, sampling).value
    new = (2 * n + 1) * gradient + source
    return LegacyCoefficients(
        dimension=n,
        kappa_0_old=n * wallis_integral(n) * new,
        kappa_old=2 * n * gradient + source + perturbation,
        kappa_star_0=new,
        kappa_star=source,
    )


def propagation_speed(model: BalanceLawModel, slab: DomainSlab, sampling: Sampling = Sampling()) -> float:
    """c = ‖∂_u f‖ (Euclidean over components)."""
    return sup_norm(model, Quantity.FLUX_DU, slab, sampling).value


def pair_propagation_speed(
    model: BalanceLawModel,
    other: BalanceLawModel,
    slab_u: DomainSlab,
    slab_v: DomainSlab | None = None,
    sampling: Sampling = Sampling(),
) -> float:
    """c′ = max(‖∂_u f‖, ‖∂_u g‖)."""
    return max(
        propagation_speed(model, slab_u, sampling),
        propagation_speed(other, slab_v if slab_v is not None else slab_u, sampling),
    )


# --- Range tracking ---

@dataclass(frozen=True)
class RangeTrack:
    """Per-snapshot value bounds U_t and supports of a trajectory (or a pair)."""

    times: tuple[float, ...]
    bounds: tuple[float, ...]
    supports: tuple[SupportBox, ...]
    threshold: float

    @property
    def global_bound(self) -> float:
        return max(self.bounds) if self.bounds else 0.0

    @property
    def union(self) -> SupportBox:
        return reduce(SupportBox.union, self.supports)

    @property
    def t_end(self) -> float:
        return self.times[-1]

    def slab(self, t_end: float | None = None) -> DomainSlab:
        """Σ = [0, T] × union support × [-𝒰, 𝒰]."""
        return DomainSlab.from_box(self.t_end if t_end is None else t_end, self.union, self.global_bound)

    def as_dict(self) -> dict:
        return {
            "times": list(self.times),
            "bounds": list(self.bounds),
            "global_bound": self.global_bound,
            "union": self.union.as_dict(),
            "threshold": self.threshold,
        }


def range_track(
    times: Sequence[float],
    fields: Sequence[ScalarField],
    threshold: float | None = None,
) -> RangeTrack:
    """Value bounds and supports per snapshot; support threshold 1e-12·max|u₀| by default."""
    if not fields or len(times) != len(fields):
        raise BalanceCheckError("range tracking needs a non-empty trajectory with one time per snapshot")
    if threshold is None:
        threshold = fields[0].support_threshold()
    return RangeTrack(
        times=tuple(float(t) for t in times),
        bounds=tuple(f.sup for f in fields),
        supports=tuple(support_box(f, threshold) for f in fields),
        threshold=threshold,
    )


def pair_range_track(track_u: RangeTrack, track_v: RangeTrack) -> RangeTrack:
    """V_t = max(U_t(u), U_t(v)) and the union of both supports per snapshot."""
    if len(track_u.times) != len(track_v.times) or not np.allclose(track_u.times, track_v.times, rtol=0.0, atol=1e-12):
        raise GridError("trajectories disagree on snapshot times")
    return RangeTrack(
        times=track_u.times,
        bounds=tuple(max(a, b) for a, b in zip(track_u.bounds, track_v.bounds)),
        supports=tuple(a.union(b) for a, b in zip(track_u.supports, track_v.supports)),
        threshold=max(track_u.threshold, track_v.threshold),
    )


# --- Support growth ---

def diffusion_allowance(spacing: float, steps: int) -> float:
    """Extra support width a first-order scheme may add after `steps` steps.

    Tail of a one-cell-per-step random walk dropping below SUPPORT_EPSILON.
    """
    if steps <= 0:
        return 2.0 * spacing
    return 2.0 * spacing + spacing * math.sqrt(2.0 * steps * math.log(1.0 / SUPPORT_EPSILON))


@dataclass(frozen=True)
class SupportGrowthRow:
    time: float
    support: SupportBox
    allowed: SupportBox
    contained: bool
    excess: float


@dataclass(frozen=True)
class SupportGrowthReport:
    applicable: bool
    speed: float
    rows: tuple[SupportGrowthRow, ...] = ()
    note: str = ""

    @property
    def holds(self) -> bool:
        return not self.applicable or all(row.contained for row in self.rows)

    def as_dict(self) -> dict:
        return {
            "applicable": self.applicable,
            "speed": self.speed,
            "holds": self.holds,
            "note": self.note,
            "rows": [
                {
                    "time": row.time,
                    "support": row.support.as_dict(),
                    "allowed": row.allowed.as_dict(),
                    "contained": row.contained,
                    "excess": row.excess,
                }
                for row in self.rows
            ],
        }


def _excess(allowed: SupportBox, box: SupportBox) -> float:
    if box.empty:
        return 0.0
    if allowed.empty:
        return math.inf
    return max(
        0.0,
        *(lo - blo for lo, blo in zip(allowed.lower, box.lower)),
        *(bhi - hi for hi, bhi in zip(allowed.upper, box.upper)),
    )


def check_support_growth(
    model: BalanceLawModel,
    track: RangeTrack,
    spacing: float,
    step_counts: Sequence[int],
    other: BalanceLawModel | None = None,
    sampling: Sampling = Sampling(),
) -> SupportGrowthReport:
    """Supp u(t) within Supp u₀ + B(0, c t), up to 2h plus the diffusion allowance.

    With `other` the track is a pair track and c is the pair speed c′. Not
    applicable when the source does not vanish at u = 0.
    """
    slab = track.slab()
    at_zero = slab.with_values(0.0)
    source_at_zero = sup_norm(model, Quantity.SOURCE, at_zero, sampling).value
    if other is not None:
        source_at_zero = max(source_at_zero, sup_norm(other, Quantity.SOURCE, at_zero, sampling).value)
    if source_at_zero > 0.0:
        logger.info("support growth not applicable: F(t, x, 0) reaches %.3e", source_at_zero)
        return SupportGrowthReport(False, 0.0, note="source does not vanish at u = 0")

    if other is None:
        speed = propagation_speed(model, slab, sampling)
    else:
        speed = pair_propagation_speed(model, other, slab, sampling=sampling)

    base = track.supports[0]
    rows = []
    for time, box, steps in zip(track.times, track.supports, step_counts):
        allowed = base.dilate(speed * time + diffusion_allowance(spacing, steps))
        excess = _excess(allowed, box)
        rows.append(SupportGrowthRow(time, box, allowed, excess == 0.0, excess))
    report = SupportGrowthReport(True, speed, tuple(rows))
    if not report.holds:
        logger.warning("support grew faster than c = %.4g allows", speed)
    return report


# --- Hypothesis diagnostics ---

@dataclass(frozen=True)
class HypothesisEntry:
    name: str
    hypothesis: str
    status: str  # pass | warn | fail | assumed
    value: float | None = None
    box_values: tuple[float, ...] = ()
    note: str = ""


@dataclass(frozen=True)
class DerivativeCheck:
    quantity: str
    max_error: float
    consistent: bool


@dataclass(frozen=True)
class HypothesisReport:
    model: str
    entries: tuple[HypothesisEntry, ...]
    consistency: tuple[DerivativeCheck, ...] = ()
    provenance: dict = field(default_factory=dict)

    @property
    def warnings(self) -> list[HypothesisEntry]:
        return [entry for entry in self.entries if entry.status in ("warn", "fail")]

    @property
    def passed(self) -> bool:
        return not self.warnings and all(check.consistent for check in self.consistency)

    def by_name(self, name: str) -> HypothesisEntry:
        return next(entry for entry in self.entries if entry.name == name)

    def as_dict(self) -> dict:
        return {
            "model": self.model,
            "entries": [
                {
                    "name": e.name,
                    "hypothesis": e.hypothesis,
                    "status": e.status,
                    "value": e.value,
                    "box_values": list(e.box_values),
                    "note": e.note,
                }
                for e in self.entries
            ],
            "consistency": [{"quantity": c.quantity, "max_error": c.max_error, "consistent": c.consistent} for c in self.consistency],
            "provenance": self.provenance,
        }


def _probe_box(slab: DomainSlab) -> tuple[tuple[float, ...], tuple[float, ...]]:
    """Center and half-widths of the probing box B (unit half-width on flat axes)."""
    center = tuple((lo + hi) / 2.0 for lo, hi in zip(slab.lower, slab.upper))
    half = tuple((hi - lo) / 2.0 if hi > lo else 1.0 for lo, hi in zip(slab.lower, slab.upper))
    return center, half


def _value_axis(bound: float, points: int) -> np.ndarray:
    return np.linspace(-bound, bound, points) if bound > 0.0 else np.zeros(1)


def residual_box_integral(
    model: BalanceLawModel,
    quantity: Quantity,
    slab: DomainSlab,
    factor: int,
    cells_per_axis: int,
) -> float:
    """∫_0^T ∫_{factor·B} sup_{|u| ≤ U} |quantity| dx dt on a midpoint grid.

    B is the slab box; the spacing stays that of B at `cells_per_axis`.
    """
    if slab.t_end == 0.0:
        return 0.0
    center, half = _probe_box(slab)
    n = factor * cells_per_axis
    axes = []
    for c, w in zip(center, half):
        h = 2.0 * w / cells_per_axis
        axes.append(c - factor * w + h * (np.arange(n) + 0.5))
    volume = math.prod(2.0 * w / cells_per_axis for w in half)
    values = _value_axis(slab.value_bound, INTEGRAL_VALUE_POINTS)

    def spatial(t: float) -> float:
        mesh = np.meshgrid(*axes, values, indexing="ij", sparse=True)
        norms = quantity_norm(quantity, model.evaluate(quantity, t, tuple(mesh[:-1]), mesh[-1]))
        norms = np.broadcast_to(norms, tuple(len(a) for a in axes) + (len(values),))
        return compensated_sum(np.max(norms, axis=-1)) * volume

    if model.autonomous:
        return slab.t_end * spatial(0.0)
    times = np.linspace(0.0, slab.t_end, INTEGRAL_TIME_POINTS)
    samples = [spatial(float(t)) for t in times]
    dt = times[1] - times[0]
    return dt * (compensated_sum(samples) - 0.5 * (samples[0] + samples[-1]))


def _integral_cells(dimension: int) -> int:
    per_point = INTEGRAL_BUDGET / INTEGRAL_VALUE_POINTS
    widest = int(per_point ** (1.0 / dimension))
    cells = min(INTEGRAL_MAX_CELLS, max(2, widest // HYPOTHESIS_BOXES[-1]))
    return cells - cells % 2


def _growth_entry(model: BalanceLawModel, quantity: Quantity, slab: DomainSlab, name: str, hypothesis: str) -> HypothesisEntry:
    cells = _integral_cells(model.dimension)
    try:
        values = tuple(residual_box_integral(model, quantity, slab, k, cells) for k in HYPOTHESIS_BOXES)
    except BalanceCheckError as e:
        return HypothesisEntry(name, hypothesis, "fail", note=str(e))
    last, previous = values[-1], values[-2]
    if not all(math.isfinite(v) for v in values):
        return HypothesisEntry(name, hypothesis, "fail", box_values=values, note="non-finite integral")
    increment = abs(last - previous) / last if last > 0.0 else 0.0
    if increment > GROWTH_WARN_TOL:
        return HypothesisEntry(
            name,
            hypothesis,
            "warn",
            last,
            values,
            f"integral still grows with the probing box (last relative increment {increment:.2e})",
        )
    return HypothesisEntry(name, hypothesis, "pass", last, values)


def _sup_entry(model: BalanceLawModel, quantity: Quantity, slab: DomainSlab, sampling: Sampling, name: str) -> HypothesisEntry:
    try:
        value = sup_norm(model, quantity, slab, sampling).value
    except BalanceCheckError as e:
        return HypothesisEntry(name, HYPOTHESES[quantity], "fail", note=str(e))
    return HypothesisEntry(name, HYPOTHESES[quantity], "pass", value)


def derivative_consistency(
    model: BalanceLawModel,
    slab: DomainSlab,
    probes: int = CONSISTENCY_PROBES,
    tolerance: float = CONSISTENCY_TOL,
) -> list[DerivativeCheck]:
    """Analytic derivatives against central differences on a probe grid."""
    if slab.empty:
        return []
    ranges = _slab_ranges(model, slab)
    axes = [_axis(lo, hi, probes) for lo, hi in ranges]
    mesh = np.meshgrid(*axes, indexing="ij", sparse=True)
    t, x, u = mesh[0], tuple(mesh[1:-1]), mesh[-1]

    checks = []
    for quantity in (Quantity.FLUX_DU, Quantity.GRAD_DU_FLUX, Quantity.DU_SOURCE, Quantity.DIV_FLUX, Quantity.GRAD_RESIDUAL):
        if model._analytic(quantity) is None:
            continue
        analytic = np.asarray(model.evaluate(quantity, t, x, u), dtype=float)
        numeric = np.asarray(model.evaluate(quantity, t, x, u, numeric=True), dtype=float)
        analytic, numeric = np.broadcast_arrays(analytic, numeric)
        scale = max(1.0, float(np.max(np.abs(analytic))))
        error = float(np.max(np.abs(analytic - numeric))) / scale
        checks.append(DerivativeCheck(quantity.value, error, error <= tolerance))
    return checks


def check_hypotheses(model: BalanceLawModel, slab: DomainSlab, sampling: Sampling = Sampling()) -> HypothesisReport:
    """Sampled finiteness diagnostics for the regularity and integrability hypotheses.

    Never raises; failures and non-integrable tails are reported as fail/warn.
    """
    entries = [
        _sup_entry(model, Quantity.FLUX_DU, slab, sampling, "sup_du_flux"),
        _sup_entry(model, Quantity.GRAD_DU_FLUX, slab, sampling, "sup_grad_du_flux"),
        _sup_entry(model, Quantity.DU_SOURCE, slab, sampling, "sup_du_source"),
        HypothesisEntry("second_derivatives_flux", "flux/source regularity (∇²f continuous)", "assumed", note="assumed, not checked"),
    ]
    if not slab.empty:
        entries.append(
            _growth_entry(model, Quantity.GRAD_RESIDUAL, slab, "integral_grad_residual", HYPOTHESES[Quantity.GRAD_RESIDUAL])
        )
        entries.append(_growth_entry(model, Quantity.RESIDUAL, slab, "integral_residual", HYPOTHESES[Quantity.RESIDUAL]))

    try:
        consistency = tuple(derivative_consistency(model, slab))
    except BalanceCheckError as e:
        logger.warning("derivative consistency skipped for %s: %s", model.name, e)
        consistency = ()
    report = HypothesisReport(model.name, tuple(entries), consistency, model.provenance())
    for entry in report.warnings:
        logger.warning("%s: %s %s (%s)", model.name, entry.name, entry.status, entry.note)
    for check in consistency:
        if not check.consistent:
            logger.warning("%s: analytic %s disagrees with central differences (%.2e)", model.name, check.quantity, check.max_error)
    return report
