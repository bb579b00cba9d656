"""Ideal vapor-liquid equilibrium.

Raoult's law with three-coefficient Antoine vapor pressures
(``log10(Psat / bar) = A - B / (T + C)``, T in K). Everything here is a pure
function of its inputs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from typing import Sequence

import numpy as np

R_GAS = 8.314  # J/(mol K)
BAR = 1.0e5  # Pa
ATM = 101325.0  # Pa
EXTRAPOLATION_BAND = 20.0  # K beyond the validity range still accepted
ROOT_TOL = 1e-8
MAX_ITER = 200


class ThermoError(ValueError):
    """Base class for property-model failures."""


class ThermoRangeError(ThermoError):
    """Temperature outside a component's (extended) validity range."""


class ConvergenceError(ThermoError):
    """A phase-equilibrium root could not be bracketed or converged."""


class DegenerateStreamError(ThermoError):
    """Stream with zero total flow where a composition is required."""


@dataclass(frozen=True)
class Component:
    name: str
    antoine_a: float
    antoine_b: float
    antoine_c: float
    t_valid_min: float
    t_valid_max: float
    molar_mass: float
    latent_heat: float
    liquid_density: float

    def __post_init__(self):
        bad = []
        if not self.antoine_b > 0:
            bad.append("antoine_b")
        if not self.t_valid_min < self.t_valid_max:
            bad.append("t_valid_min/t_valid_max")
        for field in ("molar_mass", "latent_heat", "liquid_density"):
            if not getattr(self, field) > 0:
                bad.append(field)
        # Antoine is increasing only where T + C > 0.
        if self.t_valid_min - EXTRAPOLATION_BAND + self.antoine_c <= 0:
            bad.append("antoine_c")
        if bad:
            raise ValueError(f"component {self.name!r}: invalid {', '.join(bad)}")

    def normal_boiling_point(self, pressure: float = ATM) -> float:
        """Temperature where Psat equals ``pressure`` (Antoine inverted, unchecked)."""
        return self.antoine_b / (self.antoine_a - math.log10(pressure / BAR)) - self.antoine_c

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "antoine_a": self.antoine_a,
            "antoine_b": self.antoine_b,
            "antoine_c": self.antoine_c,
            "t_valid_min": self.t_valid_min,
            "t_valid_max": self.t_valid_max,
            "molar_mass": self.molar_mass,
            "latent_heat": self.latent_heat,
            "liquid_density": self.liquid_density,
        }


def load_component_library() -> dict[str, Component]:
    """Bundled property table for the nine components of the two example problems."""
    text = resources.files("distill_gym").joinpath("data/components.json").read_text()
    return {rec["name"]: Component(**rec) for rec in json.loads(text)["components"]}


@dataclass
class Stream:
    """Component molar flows (mol/s) at a temperature (K) and pressure (Pa)."""

    flows: np.ndarray
    temperature: float
    pressure: float

    def __post_init__(self):
        self.flows = np.array(self.flows, dtype=float).reshape(-1)
        self.temperature = float(self.temperature)
        self.pressure = float(self.pressure)
        if not np.all(np.isfinite(self.flows)) or np.any(self.flows < 0):
            raise ValueError(f"stream flows must be finite and >= 0, got {self.flows}")
        if not self.temperature > 0 or not self.pressure > 0:
            raise ValueError("stream temperature and pressure must be > 0")

    @property
    def total(self) -> float:
        return float(self.flows.sum())

    @property
    def composition(self) -> np.ndarray:
        total = self.total
        if total <= 0:
            raise DegenerateStreamError("stream has zero total flow")
        return self.flows / total

    def to_dict(self) -> dict:
        return {
            "flows": [float(f) for f in self.flows],
            "temperature": self.temperature,
            "pressure": self.pressure,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Stream":
        return cls(data["flows"], data["temperature"], data["pressure"])


class AntoineTable:
    """Coefficient arrays for vectorized evaluation over a component list."""

    def __init__(self, components: Sequence[Component]):
        self.components = tuple(components)
        self.a = np.array([c.antoine_a for c in components])
        self.b = np.array([c.antoine_b for c in components])
        self.c = np.array([c.antoine_c for c in components])
        self.t_lo = np.array([c.t_valid_min for c in components]) - EXTRAPOLATION_BAND
        self.t_hi = np.array([c.t_valid_max for c in components]) + EXTRAPOLATION_BAND
        self.molar_mass = np.array([c.molar_mass for c in components])
        self.latent_heat = np.array([c.latent_heat for c in components])
        self.liquid_density = np.array([c.liquid_density for c in components])

    def __len__(self):
        return len(self.components)

    def ln_psat(self, temperature) -> np.ndarray:
        """ln(Psat / Pa), shape ``T.shape + (C,)``; no range check."""
        t = np.asarray(temperature, dtype=float)[..., None]
        return math.log(10.0) * (self.a - self.b / (t + self.c)) + math.log(BAR)

    def dln_psat_dt(self, temperature) -> np.ndarray:
        t = np.asarray(temperature, dtype=float)[..., None]
        return math.log(10.0) * self.b / (t + self.c) ** 2

    def boiling_points(self, pressure: float) -> np.ndarray:
        return self.b / (self.a - math.log10(pressure / BAR)) - self.c

    def check_range(self, temperature, present=None) -> None:
        """Raise ThermoRangeError if any present component is outside its band."""
        t = np.atleast_1d(np.asarray(temperature, dtype=float))[..., None]
        bad = (t < self.t_lo) | (t > self.t_hi)
        if present is not None:
            bad &= np.asarray(present, dtype=bool)
        if np.any(bad):
            idx = np.argwhere(bad)[0]
            comp = self.components[idx[-1]]
            raise ThermoRangeError(
                f"{comp.name}: T = {float(t[tuple(idx[:-1])][0]):.2f} K outside "
                f"[{comp.t_valid_min - EXTRAPOLATION_BAND:.1f}, "
                f"{comp.t_valid_max + EXTRAPOLATION_BAND:.1f}] K"
            )


def _table(components) -> AntoineTable:
    return components if isinstance(components, AntoineTable) else AntoineTable(components)


def psat(component: Component, temperature: float) -> float:
    """Vapor pressure in Pa."""
    lo = component.t_valid_min - EXTRAPOLATION_BAND
    hi = component.t_valid_max + EXTRAPOLATION_BAND
    if not lo <= temperature <= hi:
        raise ThermoRangeError(
            f"{component.name}: T = {temperature:.2f} K outside [{lo:.1f}, {hi:.1f}] K"
        )
    exponent = component.antoine_a - component.antoine_b / (temperature + component.antoine_c)
    return 10.0**exponent * BAR


def k_values(components, temperature: float, pressure: float) -> np.ndarray:
    if not pressure > 0:
        raise ValueError("pressure must be > 0")
    table = _table(components)
    table.check_range(temperature)
    return np.exp(table.ln_psat(temperature)) / pressure


def _check_composition(z) -> np.ndarray:
    z = np.asarray(z, dtype=float).reshape(-1)
    if np.any(z < 0) or not np.all(np.isfinite(z)):
        raise ValueError("composition entries must be finite and >= 0")
    if not z.any():
        raise ConvergenceError("empty composition: no root to bracket")
    if abs(z.sum() - 1.0) > 1e-9:
        raise ValueError(f"composition must sum to 1 (got {z.sum():.12g})")
    return z


def _solve_monotone(f, lo, hi, tol=ROOT_TOL, max_iter=MAX_ITER):
    """Root of a monotone scalar function on [lo, hi] by Newton with a bisection guard.

    ``f`` returns (value, derivative). Stops when |value| < tol.
    """
    f_lo, _ = f(lo)
    f_hi, _ = f(hi)
    if f_lo * f_hi > 0:
        raise ConvergenceError(f"root not bracketed in [{lo:.4g}, {hi:.4g}]")
    increasing = f_hi > f_lo
    x = 0.5 * (lo + hi)
    for _ in range(max_iter):
        fx, dfx = f(x)
        if abs(fx) < tol:
            return x
        if (fx < 0) == increasing:
            lo = x
        else:
            hi = x
        step_ok = dfx != 0 and np.isfinite(dfx)
        x_new = x - fx / dfx if step_ok else 0.5 * (lo + hi)
        if not lo < x_new < hi:
            x_new = 0.5 * (lo + hi)
        if x_new == x:
            break
        x = x_new
    fx, _ = f(x)
    if abs(fx) < tol:
        return x
    raise ConvergenceError(f"no convergence (residual {fx:.3g})")


def _bracket(table: AntoineTable, present: np.ndarray, pressure: float) -> tuple[float, float]:
    bp = table.boiling_points(pressure)[present]
    return float(bp.min()) - 50.0, float(bp.max()) + 50.0


def bubble_point(components, x, pressure: float) -> tuple[float, np.ndarray]:
    """Bubble temperature (K) and incipient vapor composition of liquid ``x``."""
    table = _table(components)
    x = _check_composition(x)
    present = x > 0

    def residual(t):
        k = np.exp(table.ln_psat(t)) / pressure
        kx = k * x
        return kx.sum() - 1.0, float((kx * table.dln_psat_dt(t)).sum())

    lo, hi = _bracket(table, present, pressure)
    t = _solve_monotone(residual, lo, hi)
    table.check_range(t, present)
    k = np.exp(table.ln_psat(t)) / pressure
    return t, k * x


def dew_point(components, y, pressure: float) -> tuple[float, np.ndarray]:
    """Dew temperature (K) and incipient liquid composition of vapor ``y``."""
    table = _table(components)
    y = _check_composition(y)
    present = y > 0

    def residual(t):
        k = np.exp(table.ln_psat(t)) / pressure
        yk = y / k
        return yk.sum() - 1.0, float(-(yk * table.dln_psat_dt(t)).sum())

    lo, hi = _bracket(table, present, pressure)
    t = _solve_monotone(residual, lo, hi)
    table.check_range(t, present)
    k = np.exp(table.ln_psat(t)) / pressure
    return t, y / k


def rachford_rice(z, k) -> float:
    """Vapor fraction psi in (0, 1) for a two-phase feed (requires sum Kz > 1 and sum z/K > 1)."""
    z = np.asarray(z, dtype=float)
    km1 = np.asarray(k, dtype=float) - 1.0

    def residual(psi):
        denom = 1.0 + psi * km1
        return float((z * km1 / denom).sum()), float(-(z * km1**2 / denom**2).sum())

    return _solve_monotone(residual, 0.0, 1.0, tol=1e-10)


def flash_with_k(z, k) -> tuple[float, np.ndarray, np.ndarray]:
    """Isothermal flash given K-values; returns (liquid fraction q, x, y)."""
    z = np.asarray(z, dtype=float)
    k = np.asarray(k, dtype=float)
    if (k * z).sum() <= 1.0:
        return 1.0, z.copy(), k * z / (k * z).sum()
    if (z / k).sum() <= 1.0:
        return 0.0, (z / k) / (z / k).sum(), z.copy()
    psi = rachford_rice(z, k)
    x = z / (1.0 + psi * (k - 1.0))
    y = k * x
    return 1.0 - psi, x, y


def flash_feed(components, z, temperature: float, pressure: float):
    """Isothermal flash at (T, P); returns (q, x, y) with q the liquid fraction."""
    z = _check_composition(z)
    table = _table(components)
    table.check_range(temperature, z > 0)
    k = np.exp(table.ln_psat(temperature)) / pressure
    return flash_with_k(z, k)


def mixture_properties(components, stream: Stream, phase: str = "liquid"):
    """Mean molar mass (kg/mol), mass density (kg/m3), mean latent heat (J/mol)."""
    table = _table(components)
    x = stream.composition
    mw = float(x @ table.molar_mass)
    latent = float(x @ table.latent_heat)
    if phase == "liquid":
        # additive molar volumes
        density = mw / float(x @ (table.molar_mass / table.liquid_density))
    elif phase == "vapor":
        density = stream.pressure * mw / (R_GAS * stream.temperature)
    else:
        raise ValueError(f"phase must be 'liquid' or 'vapor', got {phase!r}")
    return mw, density, latent
