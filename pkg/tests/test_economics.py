import math

import numpy as np
import pytest

from distill_gym.column import ColumnSpec, solve_column
from distill_gym.economics import (
    EconomicParams,
    ProductPricing,
    SizingError,
    UtilityError,
    column_tac,
    condenser_lmtd,
    size_column,
    stream_revenue,
    step_reward,
    tac_from_sizing,
)
from distill_gym.thermo import ATM, Stream

BTX_MW = [0.07811, 0.09214, 0.10617]
BTX_PRICING = ProductPricing(0.95, [488, 488, 510])

# Frozen from a hand evaluation of the cost formulas at d = 1 m, h = 22 m,
# N = 30, Q_C = Q_R = 1 MW, condenser at 353.25 K, default parameters.
ORACLE_LMTD = 45.06523445793262
ORACLE_CAPITAL = 347851.01534668566
ORACLE_OPERATING = 250560.0
ORACLE_TAC = 366510.3384488952


@pytest.fixture(scope="module")
def btx_column(btx):
    feed = Stream([3.35, 3.35, 3.35], 298.15, ATM)
    spec = ColumnSpec(ATM, 30, 3.0, 3.0)
    res = solve_column(btx, feed, spec)
    assert res.converged
    return res, spec


def test_height_for_thirty_trays(btx, btx_column):
    res, spec = btx_column
    _, height = size_column(btx, res, spec)
    assert height == pytest.approx(22.0)


def test_diameter_in_sanity_band(btx, btx_column):
    res, spec = btx_column
    diameter, _ = size_column(btx, res, spec)
    assert 0.5 <= diameter <= 5.0


def test_diameter_scales_with_sqrt_of_vapor_flow(btx, btx_column):
    res, spec = btx_column
    d1, _ = size_column(btx, res, spec)
    res.max_vapor_flow *= 2
    try:
        d2, _ = size_column(btx, res, spec)
    finally:
        res.max_vapor_flow /= 2
    assert d2 / d1 == pytest.approx(math.sqrt(2), rel=1e-12)


def test_sizing_error_when_vapor_denser_than_liquid(btx, btx_column):
    res, spec = btx_column
    dense = ColumnSpec(1e9, spec.n_stages, spec.reflux_ratio, spec.boilup_ratio)
    with pytest.raises(SizingError):
        size_column(btx, res, dense)


def test_tac_matches_oracle():
    p = EconomicParams()
    assert condenser_lmtd(353.25, p) == pytest.approx(ORACLE_LMTD, rel=1e-12)
    assert tac_from_sizing(1.0, 22.0, 30, 1e6, 1e6, 353.25, p) == pytest.approx(ORACLE_TAC, rel=1e-12)
    assert ORACLE_CAPITAL / 3 + ORACLE_OPERATING == pytest.approx(ORACLE_TAC, rel=1e-15)


def test_zero_duty_leaves_capital_only():
    p = EconomicParams()
    tac = tac_from_sizing(1.0, 22.0, 30, 0.0, 0.0, 353.25, p)
    assert tac == pytest.approx((17640 * 22**0.802 + 230 * 30) / 3, rel=1e-12)


def test_tac_positive_and_monotone():
    base = dict(diameter=1.0, height=22.0, n_stages=30, condenser_duty=1e6, reboiler_duty=1e6, t_condenser=353.25)
    t0 = tac_from_sizing(**base)
    assert t0 > 0
    for key, bumped in (("n_stages", 31), ("diameter", 1.1), ("condenser_duty", 1.1e6), ("reboiler_duty", 1.1e6), ("height", 23.0)):
        assert tac_from_sizing(**{**base, key: bumped}) > t0, key


def test_cold_condenser_is_utility_error():
    with pytest.raises(UtilityError):
        tac_from_sizing(1.0, 22.0, 30, 1e6, 1e6, 310.0)


def test_column_tac_on_btx(btx, btx_column):
    res, spec = btx_column
    tac = column_tac(btx, res, spec)
    d, h = size_column(btx, res, spec)
    expected = tac_from_sizing(d, h, 30, res.condenser_duty, res.reboiler_duty, res.condenser_temperature)
    assert tac == expected
    assert tac > 0


def test_params_validation():
    with pytest.raises(ValueError):
        EconomicParams(annual_hours=0)
    with pytest.raises(ValueError):
        EconomicParams(cooling_water_in=320.0, cooling_water_out=313.0)


def test_pure_benzene_revenue():
    rev = stream_revenue(Stream([3.35, 0, 0], 350.0, ATM), BTX_PRICING, molar_masses=BTX_MW)
    assert rev == pytest.approx(3677593.7664, rel=1e-12)


def test_below_purity_earns_nothing():
    assert stream_revenue(Stream([0.9, 0.1, 0], 350.0, ATM), BTX_PRICING, molar_masses=BTX_MW) == 0.0


def test_revenue_linear_in_flow():
    s1 = Stream([0.97, 0.03, 0.0], 350.0, ATM)
    s2 = Stream([2.91, 0.09, 0.0], 350.0, ATM)
    r1 = stream_revenue(s1, BTX_PRICING, molar_masses=BTX_MW)
    assert stream_revenue(s2, BTX_PRICING, molar_masses=BTX_MW) == pytest.approx(3 * r1, rel=1e-12)


def test_purity_gate_toggles():
    eps = 1e-9
    on = Stream([0.95 + eps, 0.05 - eps, 0.0], 350.0, ATM)
    off = Stream([0.95 - eps, 0.05 + eps, 0.0], 350.0, ATM)
    assert stream_revenue(on, BTX_PRICING, molar_masses=BTX_MW) > 0
    assert stream_revenue(off, BTX_PRICING, molar_masses=BTX_MW) == 0.0


def test_revenue_uses_majority_price(btx):
    xylene = Stream([0.0, 0.02, 0.98], 420.0, ATM)
    rev = stream_revenue(xylene, BTX_PRICING, components=btx)
    mass = 0.02 * 0.09214 + 0.98 * 0.10617
    assert rev == pytest.approx(mass * 3600 * 8000 / 1000 * 510, rel=1e-12)


def test_revenue_needs_molar_masses():
    with pytest.raises(ValueError):
        stream_revenue(Stream([1.0, 0, 0], 350.0, ATM), BTX_PRICING)


def test_step_reward_examples():
    assert step_reward(0.45e6, 13.17e6, 0.0, 1e7) == pytest.approx(1.272, abs=1e-12)
    assert step_reward(5.0, 0.0, 0.0, 5.0) == -1.0
    k = 7.5
    assert step_reward(k * 2.0, k * 3.0, k * 4.0, k * 10.0) == pytest.approx(step_reward(2.0, 3.0, 4.0, 10.0), rel=1e-15)
    with pytest.raises(ValueError):
        step_reward(1.0, 0.0, 0.0, 0.0)


def test_pricing_validation():
    with pytest.raises(ValueError):
        ProductPricing(1.0, [1, 2])
    with pytest.raises(ValueError):
        ProductPricing(0.9, [-1, 2])
    assert ProductPricing(0.9, np.array([1, 2])).prices == (1.0, 2.0)
