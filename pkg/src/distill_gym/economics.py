"""Column sizing, total annual cost, product revenue and the per-step reward."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np

from .column import ColumnResult, ColumnSpec
from .thermo import AntoineTable, Stream, mixture_properties


class SizingError(ValueError):
    """Unphysical operating point (vapor at least as dense as liquid)."""


class UtilityError(ValueError):
    """Condenser too cold for the cooling water."""


@dataclass(frozen=True)
class EconomicParams:
    annual_hours: float = 8000.0
    payback_years: float = 3.0
    heating_cost: float = 8.0  # $/GJ
    cooling_cost: float = 0.7  # $/GJ
    souders_brown_c: float = 0.065  # m/s
    tray_spacing: float = 0.6  # m
    height_allowance: float = 4.0  # m
    condenser_u: float = 800.0  # W/(m2 K)
    reboiler_u: float = 820.0  # W/(m2 K)
    cooling_water_in: float = 303.0  # K
    cooling_water_out: float = 313.0  # K
    reboiler_approach: float = 40.0  # K
    shell_coeff: float = 17640.0
    shell_diameter_exp: float = 1.066
    shell_height_exp: float = 0.802
    tray_coeff: float = 230.0
    tray_diameter_exp: float = 1.55
    hx_coeff: float = 7296.0
    hx_area_exp: float = 0.65

    def __post_init__(self):
        bad = [f.name for f in fields(self) if not getattr(self, f.name) > 0]
        if bad:
            raise ValueError(f"economic parameters must be > 0: {', '.join(bad)}")
        if not self.cooling_water_out > self.cooling_water_in:
            raise ValueError("cooling_water_out must exceed cooling_water_in")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ProductPricing:
    purity_spec: float
    prices: tuple  # $/tonne per component

    def __post_init__(self):
        object.__setattr__(self, "prices", tuple(float(p) for p in self.prices))
        if not 0 < self.purity_spec < 1:
            raise ValueError("purity_spec must lie in (0, 1)")
        if any(p < 0 for p in self.prices):
            raise ValueError("prices must be >= 0")


def size_column(components, result: ColumnResult, spec: ColumnSpec, params: EconomicParams | None = None):
    """Diameter (m) at flooding velocity of the bottom stage, and shell height (m)."""
    params = params or EconomicParams()
    table = components if isinstance(components, AntoineTable) else AntoineTable(components)
    t_bot = result.reboiler_temperature
    x_b = result.bottoms.composition
    k = np.exp(table.ln_psat(t_bot)) / spec.pressure
    y_b = k * x_b / (k * x_b).sum()
    liquid = Stream(x_b, t_bot, spec.pressure)
    vapor = Stream(y_b, t_bot, spec.pressure)
    _, rho_l, _ = mixture_properties(table, liquid, "liquid")
    mw_v, rho_v, _ = mixture_properties(table, vapor, "vapor")
    if rho_v >= rho_l:
        raise SizingError(f"vapor density {rho_v:.1f} >= liquid density {rho_l:.1f} kg/m3")
    u_flood = params.souders_brown_c * math.sqrt((rho_l - rho_v) / rho_v)
    vol_flow = result.max_vapor_flow * mw_v / rho_v
    diameter = math.sqrt(4.0 * vol_flow / (math.pi * u_flood))
    height = params.tray_spacing * spec.n_stages + params.height_allowance
    return diameter, height


def condenser_lmtd(t_condenser: float, params: EconomicParams) -> float:
    dt_in = t_condenser - params.cooling_water_in
    dt_out = t_condenser - params.cooling_water_out
    if dt_out <= 0:
        raise UtilityError(
            f"condenser at {t_condenser:.1f} K is not above cooling water outlet "
            f"{params.cooling_water_out:.1f} K"
        )
    return (dt_in - dt_out) / math.log(dt_in / dt_out)


def tac_from_sizing(
    diameter: float,
    height: float,
    n_stages: int,
    condenser_duty: float,
    reboiler_duty: float,
    t_condenser: float,
    params: EconomicParams | None = None,
) -> float:
    """Annualized capital plus utilities, $/yr."""
    p = params or EconomicParams()
    area_cond = condenser_duty / (p.condenser_u * condenser_lmtd(t_condenser, p))
    area_reb = reboiler_duty / (p.reboiler_u * p.reboiler_approach)
    capital = (
        p.shell_coeff * diameter**p.shell_diameter_exp * height**p.shell_height_exp
        + p.tray_coeff * diameter**p.tray_diameter_exp * n_stages
        + p.hx_coeff * (area_cond**p.hx_area_exp + area_reb**p.hx_area_exp)
    )
    operating = (reboiler_duty * p.heating_cost + condenser_duty * p.cooling_cost) * p.annual_hours * 3600.0 / 1e9
    return capital / p.payback_years + operating


def column_tac(components, result: ColumnResult, spec: ColumnSpec, params: EconomicParams | None = None) -> float:
    params = params or EconomicParams()
    diameter, height = size_column(components, result, spec, params)
    return tac_from_sizing(
        diameter,
        height,
        spec.n_stages,
        result.condenser_duty,
        result.reboiler_duty,
        result.condenser_temperature,
        params,
    )


def is_product(stream: Stream, pricing: ProductPricing) -> bool:
    return stream.total > 0 and float(stream.composition.max()) >= pricing.purity_spec


def stream_revenue(
    stream: Stream,
    pricing: ProductPricing,
    params: EconomicParams | None = None,
    molar_masses: Sequence[float] | None = None,
    components=None,
) -> float:
    """Annual sales value of a stream meeting the purity spec, else 0.

    The whole stream mass is sold at the majority component's price. Molar
    masses come from ``molar_masses`` or ``components``.
    """
    params = params or EconomicParams()
    if not is_product(stream, pricing):
        return 0.0
    if molar_masses is None:
        if components is None:
            raise ValueError("need molar_masses or components")
        molar_masses = [c.molar_mass for c in components]
    mass_flow = float(np.dot(stream.flows, molar_masses))  # kg/s
    tonnes_per_year = mass_flow * 3600.0 * params.annual_hours / 1000.0
    return tonnes_per_year * pricing.prices[int(np.argmax(stream.flows))]


def step_reward(column_tac: float, distillate_rev: float, bottoms_rev: float, reward_scale: float) -> float:
    if not reward_scale > 0:
        raise ValueError("reward_scale must be > 0")
    return (distillate_rev + bottoms_rev - column_tac) / reward_scale
