"""Dimensional constants and the radial mollifier family.

Wallis integrals W_N = ∫_0^{π/2} cos^N θ dθ and unit-ball volumes ω_N are
computed by their recurrences (ω_0 = 1, ω_N = 2 W_N ω_{N-1}).

Mollifier profile:
    μ₁ is constant on [0, a] (a = plateau radius) and falls to zero at r = 1
    through the C^∞ exponential smoothstep

        S(s) = ψ(1-s) / (ψ(1-s) + ψ(s)),   ψ(x) = exp(-1/x) for x > 0,

    with s = (r - a) / (1 - a). The scale is fixed by quadrature so that
    ∫_0^1 r^{N-1} μ₁(r) dr = 1 / (N ω_N), i.e. μ(x) = λ^{-N} μ₁(|x|/λ) has
    unit mass for every λ.

Derived constants:
    C₁ = ∫ |x₁| μ₁(|x|) dx and M₁ = ∫ |x| μ₁(|x|) dx both reduce to the radial
    moment ∫_0^1 r^N μ₁(r) dr times an angular factor. The angular factor of M₁
    is the sphere area N ω_N; the one of C₁ is ∫_{S^{N-1}} |θ₁| dσ, computed by
    1-D quadrature over the polar angle. Their ratio M₁/C₁ equals N W_N.
"""

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import CubicSpline

from balancecheck.common import ProfileError, QuadratureError

logger = logging.getLogger(__name__)

DEFAULT_PLATEAU_RADIUS = 0.5

# Radial tabulation density of μ₁ and μ₁′
TABULATION_POINTS = 4096

# Absolute quadrature target; a result whose error estimate exceeds
# QUAD_ACCEPT_TOL is treated as a malformed profile
QUAD_EPSABS = 1e-14
QUAD_EPSREL = 1e-13
QUAD_ACCEPT_TOL = 1e-10
QUAD_LIMIT = 200

IDENTITY_TOLERANCE = 1e-6


@lru_cache(maxsize=None)
def wallis_integral(n: int) -> float:
    """W_n = ∫_0^{π/2} cos^n θ dθ by W_n = (n-1)/n · W_{n-2}."""
    if n < 0:
        raise ValueError(f"Wallis index must be nonnegative, got {n}")
    if n == 0:
        return math.pi / 2
    if n == 1:
        return 1.0
    return (n - 1) / n * wallis_integral(n - 2)


def wallis_quadrature(n: int) -> float:
    """W_n by adaptive quadrature of its defining integral."""
    value, _ = quad(lambda theta: math.cos(theta) ** n, 0.0, math.pi / 2, epsabs=1e-15, epsrel=1e-15, limit=QUAD_LIMIT)
    return value


@lru_cache(maxsize=None)
def unit_ball_volume(n: int) -> float:
    """ω_n, volume of the unit ball of ℝ^n, with ω_0 = 1."""
    if n < 0:
        raise ValueError(f"dimension must be nonnegative, got {n}")
    if n == 0:
        return 1.0
    return 2.0 * wallis_integral(n) * unit_ball_volume(n - 1)


def sphere_area(n: int) -> float:
    """Area of the unit sphere S^{n-1} ⊂ ℝ^n (n ω_n; 2 for n = 1)."""
    return n * unit_ball_volume(n)


def abs_first_coordinate_sphere_integral(n: int) -> float:
    """∫_{S^{n-1}} |θ₁| dσ(θ) by quadrature over the polar angle.

    For n ≥ 2 the sphere is sliced along the first axis:
    |S^{n-2}| · ∫_0^π |cos φ| sin^{n-2} φ dφ.
    """
    if n == 1:
        # S^0 = {-1, +1} with counting measure
        return 2.0
    polar = _checked_quad(lambda phi: abs(math.cos(phi)) * math.sin(phi) ** (n - 2), 0.0, math.pi, points=[math.pi / 2])
    return sphere_area(n - 1) * polar


def _bump(x: np.ndarray) -> np.ndarray:
    """ψ(x) = exp(-1/x) for x > 0, else 0."""
    positive = x > 0
    safe = np.where(positive, x, 1.0)
    return np.where(positive, np.exp(-1.0 / safe), 0.0)


def smoothstep(s: np.ndarray | float) -> np.ndarray:
    """C^∞ step equal to 1 for s ≤ 0 and 0 for s ≥ 1."""
    s = np.clip(np.asarray(s, dtype=float), 0.0, 1.0)
    head = _bump(1.0 - s)
    tail = _bump(s)
    return head / (head + tail)


def smoothstep_derivative(s: np.ndarray | float) -> np.ndarray:
    """dS/ds, zero outside (0, 1)."""
    s = np.asarray(s, dtype=float)
    inside = (s > 0.0) & (s < 1.0)
    si = np.where(inside, s, 0.5)
    head = np.exp(-1.0 / (1.0 - si))
    tail = np.exp(-1.0 / si)
    # ψ(x)/x² written as exp(-1/x - 2 log x) so tiny x underflows to 0 cleanly
    head_over = np.exp(-1.0 / (1.0 - si) - 2.0 * np.log1p(-si))
    tail_over = np.exp(-1.0 / si - 2.0 * np.log(si))
    value = -(tail * head_over + head * tail_over) / (head + tail) ** 2
    return np.where(inside, value, 0.0)


def _checked_quad(fn: Callable[[float], float], a: float, b: float, points: list[float] | None = None) -> float:
    """Adaptive Gauss–Kronrod quadrature that refuses unconverged results."""
    if b <= a:
        return 0.0
    inner = [p for p in (points or []) if a < p < b]
    result = quad(
        fn,
        a,
        b,
        epsabs=QUAD_EPSABS,
        epsrel=QUAD_EPSREL,
        limit=QUAD_LIMIT,
        points=inner or None,
        full_output=1,
    )
    value, error = result[0], result[1]
    if error > max(QUAD_ACCEPT_TOL, QUAD_ACCEPT_TOL * abs(value)):
        message = result[3] if len(result) > 3 else "error estimate above tolerance"
        raise QuadratureError(f"quadrature on [{a}, {b}] did not converge (error {error:.3e}): {message}")
    return value


@dataclass(frozen=True)
class MollifierConstants:
    C1: float
    M1: float
    dimension: int

    @property
    def ratio(self) -> float:
        """M₁/C₁, equal to N·W_N."""
        return self.M1 / self.C1


@dataclass(frozen=True, eq=False)
class MollifierProfile:
    """Radial profile μ₁ with its tabulation.

    Attributes:
        plateau_radius: a in (0, 1); μ₁ is constant on [0, a]
        dimension: N, fixes the normalization ∫ r^{N-1} μ₁ = 1/(N ω_N)
        normalization: scale factor multiplying the unit-height shape
        radii: tabulation abscissae on [0, 1]
        samples: μ₁ at radii
        derivative_samples: μ₁′ at radii
    """

    plateau_radius: float
    dimension: int
    normalization: float
    radii: np.ndarray = field(repr=False)
    samples: np.ndarray = field(repr=False)
    derivative_samples: np.ndarray = field(repr=False)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def value(self, r: np.ndarray | float) -> np.ndarray:
        """μ₁(r), closed form."""
        a = self.plateau_radius
        r = np.abs(np.asarray(r, dtype=float))
        return self.normalization * smoothstep((r - a) / (1.0 - a))

    def derivative(self, r: np.ndarray | float) -> np.ndarray:
        """μ₁′(r), closed form."""
        a = self.plateau_radius
        r = np.abs(np.asarray(r, dtype=float))
        return self.normalization * smoothstep_derivative((r - a) / (1.0 - a)) / (1.0 - a)

    def interpolate(self, r: np.ndarray | float) -> np.ndarray:
        """μ₁(r) from the cubic interpolant of the tabulation, 0 for r ≥ 1."""
        spline = self._cache.get("spline")
        if spline is None:
            spline = CubicSpline(self.radii, self.samples)
            self._cache["spline"] = spline
        r = np.abs(np.asarray(r, dtype=float))
        return np.where(r < 1.0, np.maximum(spline(np.minimum(r, 1.0)), 0.0), 0.0)

    def density(self, z_norm: np.ndarray | float, scale: float) -> np.ndarray:
        """ρ_λ at |z| = z_norm: λ^{-N} μ₁(|z|/λ)."""
        return self.interpolate(np.asarray(z_norm, dtype=float) / scale) / scale**self.dimension

    def radial_moment(self, k: int) -> float:
        """∫_0^1 r^k μ₁(r) dr."""
        key = ("moment", k)
        if key not in self._cache:
            self._cache[key] = _radial_integral(lambda r: r**k * float(self.value(r)), self.plateau_radius)
        return self._cache[key]

    def derivative_moment(self, k: int) -> float:
        """∫_0^1 r^k μ₁′(r) dr (μ₁′ vanishes on the plateau)."""
        key = ("derivative_moment", k)
        if key not in self._cache:
            self._cache[key] = _checked_quad(lambda r: r**k * float(self.derivative(r)), self.plateau_radius, 1.0)
        return self._cache[key]


def _radial_integral(fn: Callable[[float], float], plateau_radius: float) -> float:
    """∫_0^1 split at the plateau edge."""
    return _checked_quad(fn, 0.0, plateau_radius) + _checked_quad(fn, plateau_radius, 1.0)


def build_mollifier(
    plateau_radius: float = DEFAULT_PLATEAU_RADIUS,
    dimension: int = 1,
    tabulation_points: int = TABULATION_POINTS,
) -> MollifierProfile:
    """Plateau-plus-smoothstep profile normalized for dimension N.

    Raises:
        ProfileError: plateau radius outside (0, 1) or dimension < 1
    """
    if not 0.0 < plateau_radius < 1.0:
        raise ProfileError(f"plateau radius must lie in (0, 1), got {plateau_radius}")
    if dimension < 1:
        raise ProfileError(f"dimension must be positive, got {dimension}")

    a = plateau_radius
    shape_moment = _radial_integral(
        lambda r: r ** (dimension - 1) * float(smoothstep((r - a) / (1.0 - a))),
        a,
    )
    normalization = 1.0 / (sphere_area(dimension) * shape_moment)

    radii = np.linspace(0.0, 1.0, tabulation_points)
    samples = normalization * smoothstep((radii - a) / (1.0 - a))
    derivative_samples = normalization * smoothstep_derivative((radii - a) / (1.0 - a)) / (1.0 - a)
    for array in (radii, samples, derivative_samples):
        array.setflags(write=False)

    logger.debug("mollifier N=%d plateau=%.3f normalization=%.12g", dimension, a, normalization)
    return MollifierProfile(
        plateau_radius=a,
        dimension=dimension,
        normalization=normalization,
        radii=radii,
        samples=samples,
        derivative_samples=derivative_samples,
    )


def mollifier_constants(profile: MollifierProfile) -> MollifierConstants:
    """C₁ and M₁ of the profile, cached on it."""
    cached = profile._cache.get("constants")
    if cached is not None:
        return cached
    n = profile.dimension
    moment = profile.radial_moment(n)
    constants = MollifierConstants(
        C1=abs_first_coordinate_sphere_integral(n) * moment,
        M1=sphere_area(n) * moment,
        dimension=n,
    )
    profile._cache["constants"] = constants
    return constants


@dataclass(frozen=True)
class IdentityCheck:
    name: str
    value: float
    expected: float
    residual: float
    passed: bool


@dataclass(frozen=True)
class IdentityReport:
    dimension: int
    plateau_radius: float
    checks: list[IdentityCheck]

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    def by_name(self, name: str) -> list[IdentityCheck]:
        return [check for check in self.checks if check.name == name]


def _check(name: str, value: float, expected: float, tolerance: float) -> IdentityCheck:
    residual = abs(value - expected)
    return IdentityCheck(name, value, expected, residual, residual < tolerance)


def scaled_mass(profile: MollifierProfile, scale: float) -> float:
    """∫ μ(x) dx for μ(x) = λ^{-N} μ₁(|x|/λ), integrated in the unscaled radius ρ."""
    n = profile.dimension
    a = profile.plateau_radius
    radial = _checked_quad(lambda rho: rho ** (n - 1) * float(profile.value(rho / scale)), 0.0, a * scale)
    radial += _checked_quad(lambda rho: rho ** (n - 1) * float(profile.value(rho / scale)), a * scale, scale)
    return sphere_area(n) * radial / scale**n


def scaled_gradient_moment(profile: MollifierProfile, scale: float) -> float:
    """∫ |x| |∇μ(x)| dx = -∫ |x| λ^{-N-1} μ₁′(|x|/λ) dx."""
    n = profile.dimension
    a = profile.plateau_radius
    radial = _checked_quad(lambda rho: rho**n * float(profile.derivative(rho / scale)), a * scale, scale)
    return -sphere_area(n) * radial / scale ** (n + 1)


def verify_mollifier_identities(
    profile: MollifierProfile,
    scales: tuple[float, ...] = (0.1, 1.0, 10.0),
    tolerance: float = IDENTITY_TOLERANCE,
) -> IdentityReport:
    """Residuals of the four mollifier identities.

    mu1: ∫ μ = 1 for each scale λ
    mu2: C₁ = (2/N)(ω_{N-1}/ω_N) M₁
    mu3: ∫ |x| |∇μ| = N for each scale λ
    mu4: ∫ |x|² μ₁′(|x|) dx / M₁ = -(N+1)
    """
    n = profile.dimension
    constants = mollifier_constants(profile)
    checks: list[IdentityCheck] = []

    for scale in scales:
        checks.append(_check("mu1", scaled_mass(profile, scale), 1.0, tolerance))

    expected_c1 = 2.0 / n * unit_ball_volume(n - 1) / unit_ball_volume(n) * constants.M1
    checks.append(_check("mu2", constants.C1, expected_c1, tolerance))

    for scale in scales:
        checks.append(_check("mu3", scaled_gradient_moment(profile, scale), float(n), tolerance))

    second_moment = sphere_area(n) * profile.derivative_moment(n + 1)
    checks.append(_check("mu4", second_moment / constants.M1, -(n + 1.0), tolerance))

    report = IdentityReport(dimension=n, plateau_radius=profile.plateau_radius, checks=checks)
    if not report.passed:
        failed = [check.name for check in checks if not check.passed]
        logger.warning("mollifier identities failed for N=%d: %s", n, ", ".join(failed))
    return report


def constants_table(max_dimension: int = 6, plateau_radius: float = DEFAULT_PLATEAU_RADIUS) -> list[dict[str, float]]:
    """Rows of N, W_N, ω_N, C₁, M₁, M₁/C₁ and N·W_N."""
    rows = []
    for n in range(1, max_dimension + 1):
        constants = mollifier_constants(build_mollifier(plateau_radius, n))
        rows.append(
            {
                "N": n,
                "W_N": wallis_integral(n),
                "omega_N": unit_ball_volume(n),
                "C1": constants.C1,
                "M1": constants.M1,
                "M1_over_C1": constants.ratio,
                "N_W_N": n * wallis_integral(n),
            }
        )
    return rows
