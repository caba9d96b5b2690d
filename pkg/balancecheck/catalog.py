"""Registry of flux terms, source terms, named models and initial data.

Scenario files refer to building blocks by identifier plus a parameter map:

    model:
      flux: {id: variable_advection, params: {base: 0.0, amplitude: 1.0}}
      source: {id: gaussian, params: {amplitude: 1.0}}

Each table entry carries its parameter defaults and a `build` lambda that turns
the merged parameters into callables. Every callable takes (t, x, u) where x
is a tuple of N coordinate arrays; all arguments broadcast against each other.
Entries whose terms read t also set `time_dependent: True`.

Flux entries return a dict with
    flux          f(t, x, u), array of shape (N, ...)
    du            ∂_u f, shape (N, ...)
    du_grad       ∇∂_u f, shape (N, N, ...), entry [i, j] = ∂_{x_j} ∂_u f_i
    div           div f, shape (...)
    div_grad      ∇(div f), shape (N, ...)
and source entries a dict with
    source        F(t, x, u)
    du            ∂_u F
    grad          ∇F, shape (N, ...)
Derivative entries may be missing; models.BalanceLawModel then falls back to
central differences.
"""

import math
from collections.abc import Callable
from typing import Any

import numpy as np

from balancecheck.common import CatalogError, ConfigError

Coordinates = tuple[np.ndarray, ...]
TermFunc = Callable[[float, Coordinates, np.ndarray], np.ndarray]


def stack(parts: list, t, x: Coordinates, u) -> np.ndarray:
    """Stack per-component expressions broadcast against (t, x, u)."""
    arrays = np.broadcast_arrays(*[np.asarray(p, dtype=float) for p in parts], np.asarray(t, dtype=float), *x, np.asarray(u, dtype=float))
    return np.stack(arrays[: len(parts)])


def zeros_like(t, x: Coordinates, u) -> np.ndarray:
    return np.zeros(np.broadcast_shapes(np.shape(t), *(np.shape(c) for c in x), np.shape(u)))


def diagonal(entries: list, t, x: Coordinates, u) -> np.ndarray:
    """N×N array with the given diagonal and zeros elsewhere."""
    n = len(entries)
    zero = zeros_like(t, x, u)
    rows = [[entries[i] if i == j else zero for j in range(n)] for i in range(n)]
    return np.stack([stack(row, t, x, u) for row in rows])


def as_vector(value: Any, dimension: int, name: str) -> tuple[float, ...]:
    """Scalar or length-N list as an N-tuple of floats."""
    if isinstance(value, (int, float)):
        return (float(value),) * dimension
    try:
        values = tuple(float(v) for v in value)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"expected a number or list of numbers, got {value!r}", field=name) from e
    if len(values) != dimension:
        raise ConfigError(f"expected {dimension} components, got {len(values)}", field=name)
    return values


def _unit(dimension: int, axis: int = 0) -> list[float]:
    return [1.0 if d == axis else 0.0 for d in range(dimension)]


# --- Flux terms ---

def _zero_flux(p: dict, n: int) -> dict:
    return {
        "flux": lambda t, x, u: stack([0.0] * n, t, x, u),
        "du": lambda t, x, u: stack([0.0] * n, t, x, u),
        "du_grad": lambda t, x, u: diagonal([0.0] * n, t, x, u),
        "div": lambda t, x, u: zeros_like(t, x, u),
        "div_grad": lambda t, x, u: stack([0.0] * n, t, x, u),
    }


def _burgers_flux(p: dict, n: int) -> dict:
    direction = as_vector(p["direction"] if p["direction"] is not None else _unit(n), n, "flux.params.direction")
    scale = float(p["scale"])
    return {
        "flux": lambda t, x, u: stack([scale * a * u**2 / 2.0 for a in direction], t, x, u),
        "du": lambda t, x, u: stack([scale * a * u for a in direction], t, x, u),
        "du_grad": lambda t, x, u: diagonal([0.0] * n, t, x, u),
        "div": lambda t, x, u: zeros_like(t, x, u),
        "div_grad": lambda t, x, u: stack([0.0] * n, t, x, u),
    }


def _linear_advection_flux(p: dict, n: int) -> dict:
    velocity = as_vector(p["velocity"], n, "flux.params.velocity")
    return {
        "flux": lambda t, x, u: stack([a * u for a in velocity], t, x, u),
        "du": lambda t, x, u: stack(list(velocity), t, x, u),
        "du_grad": lambda t, x, u: diagonal([0.0] * n, t, x, u),
        "div": lambda t, x, u: zeros_like(t, x, u),
        "div_grad": lambda t, x, u: stack([0.0] * n, t, x, u),
    }


def _variable_advection_flux(p: dict, n: int) -> dict:
    """f_i = (b_i + m_i sin(k x_i)) u."""
    base = as_vector(p["base"], n, "flux.params.base")
    amplitude = as_vector(p["amplitude"], n, "flux.params.amplitude")
    k = float(p["wavenumber"])

    def speed(x: Coordinates) -> list:
        return [b + m * np.sin(k * xi) for b, m, xi in zip(base, amplitude, x)]

    return {
        "flux": lambda t, x, u: stack([a * u for a in speed(x)], t, x, u),
        "du": lambda t, x, u: stack(speed(x), t, x, u),
        "du_grad": lambda t, x, u: diagonal([m * k * np.cos(k * xi) for m, xi in zip(amplitude, x)], t, x, u),
        "div": lambda t, x, u: stack([sum(m * k * np.cos(k * xi) for m, xi in zip(amplitude, x)) * u], t, x, u)[0],
        "div_grad": lambda t, x, u: stack([-m * k**2 * np.sin(k * xi) * u for m, xi in zip(amplitude, x)], t, x, u),
    }


FLUXES: dict[str, dict[str, Any]] = {
    "zero": {"params": {}, "build": _zero_flux},
    "burgers": {"params": {"scale": 1.0, "direction": None}, "build": _burgers_flux},
    "linear_advection": {"params": {"velocity": 1.0}, "build": _linear_advection_flux},
    "variable_advection": {
        "params": {"base": 0.0, "amplitude": 1.0, "wavenumber": 1.0},
        "build": _variable_advection_flux,
    },
}


# --- Source terms ---

def _gaussian(x: Coordinates, center: tuple[float, ...], width: float) -> np.ndarray:
    return np.exp(-sum((xi - c) ** 2 for xi, c in zip(x, center)) / width**2)


def _gaussian_grad(x: Coordinates, center: tuple[float, ...], width: float) -> list:
    g = _gaussian(x, center, width)
    return [-2.0 * (xi - c) / width**2 * g for xi, c in zip(x, center)]


def _zero_source(p: dict, n: int) -> dict:
    return {
        "source": lambda t, x, u: zeros_like(t, x, u),
        "du": lambda t, x, u: zeros_like(t, x, u),
        "grad": lambda t, x, u: stack([0.0] * n, t, x, u),
    }


def _linear_source(p: dict, n: int) -> dict:
    alpha = float(p["alpha"])
    return {
        "source": lambda t, x, u: stack([alpha * u], t, x, u)[0],
        "du": lambda t, x, u: stack([alpha], t, x, u)[0],
        "grad": lambda t, x, u: stack([0.0] * n, t, x, u),
    }


def _gaussian_source(p: dict, n: int) -> dict:
    """F = amplitude · exp(-|x - center|² / width²), independent of u."""
    amplitude = float(p["amplitude"])
    center = as_vector(p["center"], n, "source.params.center")
    width = float(p["width"])
    return {
        "source": lambda t, x, u: stack([amplitude * _gaussian(x, center, width)], t, x, u)[0],
        "du": lambda t, x, u: zeros_like(t, x, u),
        "grad": lambda t, x, u: stack([amplitude * g for g in _gaussian_grad(x, center, width)], t, x, u),
    }


def _gaussian_linear_source(p: dict, n: int) -> dict:
    """F = amplitude · u · exp(-|x - center|² / width²)."""
    amplitude = float(p["amplitude"])
    center = as_vector(p["center"], n, "source.params.center")
    width = float(p["width"])
    return {
        "source": lambda t, x, u: stack([amplitude * u * _gaussian(x, center, width)], t, x, u)[0],
        "du": lambda t, x, u: stack([amplitude * _gaussian(x, center, width)], t, x, u)[0],
        "grad": lambda t, x, u: stack([amplitude * u * g for g in _gaussian_grad(x, center, width)], t, x, u),
    }


def _oscillating_gaussian_source(p: dict, n: int) -> dict:
    """F = amplitude · sin(frequency · t) · exp(-|x - center|² / width²); the only time-dependent term."""
    amplitude = float(p["amplitude"])
    frequency = float(p["frequency"])
    center = as_vector(p["center"], n, "source.params.center")
    width = float(p["width"])

    def pulse(t):
        return amplitude * np.sin(frequency * np.asarray(t, dtype=float))

    return {
        "source": lambda t, x, u: stack([pulse(t) * _gaussian(x, center, width)], t, x, u)[0],
        "du": lambda t, x, u: zeros_like(t, x, u),
        "grad": lambda t, x, u: stack([pulse(t) * g for g in _gaussian_grad(x, center, width)], t, x, u),
    }


def _affine_source(p: dict, n: int) -> dict:
    """F = slope · x₁ + offset; unbounded, used to exercise the integrability warnings."""
    slope = float(p["slope"])
    offset = float(p["offset"])
    return {
        "source": lambda t, x, u: stack([slope * x[0] + offset], t, x, u)[0],
        "du": lambda t, x, u: zeros_like(t, x, u),
        "grad": lambda t, x, u: stack([slope * e for e in _unit(n)], t, x, u),
    }


SOURCES: dict[str, dict[str, Any]] = {
    "zero": {"params": {}, "build": _zero_source},
    "linear": {"params": {"alpha": -1.0}, "build": _linear_source},
    "gaussian": {"params": {"amplitude": 1.0, "center": 0.0, "width": 1.0}, "build": _gaussian_source},
    "gaussian_linear": {
        "params": {"amplitude": 1.0, "center": 0.0, "width": 1.0},
        "build": _gaussian_linear_source,
    },
    "affine_x": {"params": {"slope": 1.0, "offset": 0.0}, "build": _affine_source},
    "oscillating_gaussian": {
        "params": {"amplitude": 1.0, "frequency": math.pi, "center": 0.0, "width": 1.0},
        "build": _oscillating_gaussian_source,
        "time_dependent": True,
    },
}


# --- Named models ---
# Each maps its own parameters to ((flux id, flux params), (source id, source params)).

MODELS: dict[str, dict[str, Any]] = {
    "burgers": {
        "params": {"scale": 1.0},
        "parts": lambda p: (("burgers", {"scale": p["scale"]}), ("zero", {})),
    },
    "advection": {
        "params": {"velocity": 1.0},
        "parts": lambda p: (("linear_advection", {"velocity": p["velocity"]}), ("zero", {})),
    },
    "sine_flux": {
        "params": {"amplitude": 1.0, "wavenumber": 1.0},
        "parts": lambda p: (
            ("variable_advection", {"base": 0.0, "amplitude": p["amplitude"], "wavenumber": p["wavenumber"]}),
            ("zero", {}),
        ),
    },
    "source_decay": {
        "params": {"rate": 1.0},
        "parts": lambda p: (("zero", {}), ("linear", {"alpha": -float(p["rate"])})),
    },
    "burgers_decay": {
        "params": {"rate": 0.5},
        "parts": lambda p: (("burgers", {}), ("linear", {"alpha": -float(p["rate"])})),
    },
    "burgers_gaussian_source": {
        "params": {"amplitude": 1.0},
        "parts": lambda p: (("burgers", {}), ("gaussian", {"amplitude": p["amplitude"]})),
    },
    "advection_gaussian_source": {
        "params": {"velocity": 1.0, "amplitude": 1.0},
        "parts": lambda p: (
            ("linear_advection", {"velocity": p["velocity"]}),
            ("gaussian", {"amplitude": p["amplitude"]}),
        ),
    },
    "advection_oscillating_source": {
        "params": {"velocity": 1.0, "amplitude": 1.0, "frequency": math.pi},
        "parts": lambda p: (
            ("linear_advection", {"velocity": p["velocity"]}),
            ("oscillating_gaussian", {"amplitude": p["amplitude"], "frequency": p["frequency"]}),
        ),
    },
}


# --- Initial data ---

def _box_mask(x: Coordinates, lower: tuple[float, ...], upper: tuple[float, ...]) -> np.ndarray:
    mask = np.ones(np.broadcast_shapes(*(np.shape(c) for c in x)), dtype=bool)
    for xi, lo, hi in zip(x, lower, upper):
        mask = mask & (xi >= lo) & (xi <= hi)
    return mask


def _indicator(p: dict, n: int) -> Callable[..., np.ndarray]:
    lower = as_vector(p["lower"], n, "initial_data.params.lower")
    upper = as_vector(p["upper"], n, "initial_data.params.upper")
    height = float(p["height"])
    return lambda *x: np.where(_box_mask(x, lower, upper), height, 0.0)


def _cos2_bump(p: dict, n: int) -> Callable[..., np.ndarray]:
    """height · cos²(π|x - center| / (2 radius)) inside the ball, 0 outside."""
    center = as_vector(p["center"], n, "initial_data.params.center")
    radius = float(p["radius"])
    height = float(p["height"])

    def bump(*x):
        r = np.sqrt(sum((xi - c) ** 2 for xi, c in zip(x, center)))
        return np.where(r < radius, height * np.cos(np.pi * np.minimum(r, radius) / (2.0 * radius)) ** 2, 0.0)

    return bump


def _sine_lobe(p: dict, n: int) -> Callable[..., np.ndarray]:
    """height · Π_i sin(π (x_i - lower_i) / (upper_i - lower_i)) on the box."""
    lower = as_vector(p["lower"], n, "initial_data.params.lower")
    upper = as_vector(p["upper"], n, "initial_data.params.upper")
    height = float(p["height"])

    def lobe(*x):
        value = height * math.prod(np.sin(np.pi * (xi - lo) / (hi - lo)) for xi, lo, hi in zip(x, lower, upper))
        return np.where(_box_mask(x, lower, upper), value, 0.0)

    return lobe


INITIAL_DATA: dict[str, dict[str, Any]] = {
    "zero": {"params": {}, "build": lambda p, n: (lambda *x: np.zeros(np.broadcast_shapes(*(np.shape(c) for c in x))))},
    "indicator": {"params": {"lower": 0.0, "upper": 1.0, "height": 1.0}, "build": _indicator},
    "box_pulse": {"params": {"lower": 0.0, "upper": 1.0, "height": 1.0}, "build": _indicator},
    "cos2_bump": {"params": {"center": 0.0, "radius": 0.5, "height": 1.0}, "build": _cos2_bump},
    "sine_lobe": {"params": {"lower": 0.0, "upper": 1.0, "height": 1.0}, "build": _sine_lobe},
}


def _lookup(table: dict[str, dict[str, Any]], kind: str, ident: str) -> dict[str, Any]:
    entry = table.get(ident)
    if entry is None:
        known = ", ".join(sorted(table))
        raise CatalogError(f"unknown {kind} id '{ident}' (known: {known})")
    return entry


def merge_params(entry: dict[str, Any], params: dict | None, field: str) -> dict[str, Any]:
    """Entry defaults overlaid with user parameters; unknown keys are rejected."""
    params = dict(params or {})
    unknown = sorted(set(params) - set(entry["params"]))
    if unknown:
        raise ConfigError(f"unknown parameter(s) {', '.join(unknown)}", field=field)
    return {**entry["params"], **params}


def flux_term(ident: str, params: dict | None, dimension: int) -> dict[str, TermFunc]:
    entry = _lookup(FLUXES, "flux", ident)
    return entry["build"](merge_params(entry, params, "flux.params"), dimension)


def source_term(ident: str, params: dict | None, dimension: int) -> dict[str, TermFunc]:
    entry = _lookup(SOURCES, "source", ident)
    return entry["build"](merge_params(entry, params, "source.params"), dimension)


def time_dependent(flux: str, source: str) -> bool:
    """True when either term reads t; models built from autonomous terms sample t = 0 only."""
    return bool(
        _lookup(FLUXES, "flux", flux).get("time_dependent") or _lookup(SOURCES, "source", source).get("time_dependent")
    )


def model_parts(ident: str, params: dict | None) -> tuple[tuple[str, dict], tuple[str, dict]]:
    """Flux and source (id, params) pairs of a named model."""
    entry = _lookup(MODELS, "model", ident)
    return entry["parts"](merge_params(entry, params, "model.params"))


def initial_data(ident: str, params: dict | None, dimension: int) -> Callable[..., np.ndarray]:
    """Callable u₀(*x) evaluated at cell centers."""
    entry = _lookup(INITIAL_DATA, "initial data", ident)
    return entry["build"](merge_params(entry, params, "initial_data.params"), dimension)
