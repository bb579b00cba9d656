import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from distill_gym.thermo import (
    ATM,
    Component,
    ConvergenceError,
    DegenerateStreamError,
    Stream,
    ThermoRangeError,
    bubble_point,
    dew_point,
    flash_feed,
    flash_with_k,
    k_values,
    mixture_properties,
    psat,
)

# Normal boiling points, K (standard property tables).
NBP = {
    "benzene": 353.24,
    "toluene": 383.75,
    "p-xylene": 411.51,
    "ethane": 184.55,
    "propane": 231.04,
    "isobutane": 261.40,
    "n-butane": 272.65,
    "isopentane": 300.98,
    "n-pentane": 309.21,
}


def bisect_oracle(fn, lo, hi, iters=200):
    """Plain bisection on an increasing function, independent of the package solver."""
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if fn(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def antoine_pa(comp, t):
    return 10 ** (comp.antoine_a - comp.antoine_b / (t + comp.antoine_c)) * 1e5


def test_benzene_psat_at_normal_boiling_point(library):
    assert psat(library["benzene"], 353.25) == pytest.approx(ATM, rel=0.02)


def test_pentane_psat_at_normal_boiling_point(library):
    assert psat(library["n-pentane"], 309.2) == pytest.approx(ATM, rel=0.02)


def test_psat_monotone_over_validity_range(library):
    for comp in library.values():
        temps = np.arange(comp.t_valid_min, comp.t_valid_max + 1e-9, 1.0)
        p = [psat(comp, t) for t in temps]
        assert np.all(np.diff(p) > 0), comp.name


def test_psat_range_error_names_component(library):
    comp = library["toluene"]
    with pytest.raises(ThermoRangeError, match="toluene"):
        psat(comp, comp.t_valid_max + 25.0)
    # inside the extrapolation band is accepted
    assert psat(comp, comp.t_valid_max + 19.0) > 0


def test_component_validation():
    with pytest.raises(ValueError, match="antoine_b"):
        Component("x", 4.0, -1.0, -50.0, 300.0, 400.0, 0.1, 3e4, 800.0)
    with pytest.raises(ValueError, match="molar_mass"):
        Component("x", 4.0, 1000.0, -50.0, 300.0, 400.0, 0.0, 3e4, 800.0)


@pytest.mark.parametrize("name", sorted(NBP))
def test_k_value_unity_at_normal_boiling_point(library, name):
    k = k_values([library[name]], NBP[name], ATM)
    assert k[0] == pytest.approx(1.0, rel=0.02)


def test_k_values_halve_when_pressure_doubles(btx):
    k1 = k_values(btx, 380.0, ATM)
    k2 = k_values(btx, 380.0, 2 * ATM)
    np.testing.assert_array_equal(k2, 0.5 * k1)


def test_benzene_lighter_than_toluene(btx):
    k = k_values(btx[:2], 365.0, ATM)
    assert k[0] > 1 > k[1]


@pytest.mark.parametrize("name", sorted(NBP))
def test_pure_bubble_and_dew_points(library, name):
    comp = [library[name]]
    tb, y = bubble_point(comp, [1.0], ATM)
    td, x = dew_point(comp, [1.0], ATM)
    assert tb == pytest.approx(NBP[name], abs=1.5)
    assert td == pytest.approx(tb, abs=1e-6)
    assert y[0] == pytest.approx(1.0, abs=1e-8)


def test_equimolar_benzene_toluene_bubble_dew(btx):
    pair = btx[:2]
    z = np.array([0.5, 0.5])
    tb, y = bubble_point(pair, z, ATM)
    td, x = dew_point(pair, z, ATM)
    oracle_b = bisect_oracle(lambda t: sum(zi * antoine_pa(c, t) / ATM for zi, c in zip(z, pair)) - 1, 300, 450)
    oracle_d = bisect_oracle(lambda t: 1 - sum(zi * ATM / antoine_pa(c, t) for zi, c in zip(z, pair)), 300, 450)
    assert tb == pytest.approx(oracle_b, abs=1e-6)
    assert td == pytest.approx(oracle_d, abs=1e-6)
    assert tb == pytest.approx(365.0, abs=3.0)
    assert td == pytest.approx(371.0, abs=3.0)
    assert y.sum() == pytest.approx(1.0, abs=1e-8)
    assert x.sum() == pytest.approx(1.0, abs=1e-8)


def test_bubble_point_rejects_bad_composition(btx):
    with pytest.raises(ValueError, match="sum to 1"):
        bubble_point(btx, [0.5, 0.4, 0.0], ATM)
    with pytest.raises(ConvergenceError):
        bubble_point(btx, [0.0, 0.0, 0.0], ATM)
    with pytest.raises(ConvergenceError):
        dew_point(btx, [0.0, 0.0, 0.0], ATM)


def test_bubble_temperature_between_pure_boiling_points(btx):
    t, _ = bubble_point(btx, [0.2, 0.3, 0.5], ATM)
    assert NBP["benzene"] - 1.5 < t < NBP["p-xylene"] + 1.5


compositions = st.lists(st.floats(0.0, 1.0), min_size=3, max_size=3).filter(lambda v: sum(v) > 1e-3)


@settings(max_examples=60, deadline=None)
@given(raw=compositions, p_atm=st.floats(0.3, 10.0))
def test_bubble_not_above_dew(btx, raw, p_atm):
    z = np.array(raw) / sum(raw)
    tb, _ = bubble_point(btx, z, p_atm * ATM)
    td, _ = dew_point(btx, z, p_atm * ATM)
    assert tb <= td + 1e-6
    if np.count_nonzero(z) > 1 and z.max() < 1 - 1e-6:
        assert td - tb > 1e-6


@settings(max_examples=80, deadline=None)
@given(raw=compositions, t=st.floats(330.0, 430.0), p_atm=st.floats(0.5, 3.0))
def test_flash_material_consistency(btx, raw, t, p_atm):
    z = np.array(raw) / sum(raw)
    q, x, y = flash_feed(btx, z, t, p_atm * ATM)
    assert 0.0 <= q <= 1.0
    np.testing.assert_allclose(q * x + (1 - q) * y, z, atol=1e-9)


def test_flash_branches():
    z = [0.5, 0.5]
    assert flash_with_k(z, [0.5, 0.8])[0] == 1.0
    assert flash_with_k(z, [1.5, 3.0])[0] == 0.0
    # closed form for K = [2, 1/2]: 0.5/(1+psi) = 0.25/(1-psi/2) -> psi = 0.5
    q, x, y = flash_with_k(z, [2.0, 0.5])
    assert q == pytest.approx(0.5, abs=1e-10)
    np.testing.assert_allclose(y, 2 * np.array([x[0], x[1] / 4]), rtol=1e-12)


def test_flash_feed_subcooled_btx(btx):
    q, x, _ = flash_feed(btx, [1 / 3, 1 / 3, 1 / 3], 298.15, ATM)
    assert q == 1.0
    np.testing.assert_allclose(x, 1 / 3)


def test_mixture_properties(btx, library):
    pure = Stream([1.0, 0.0, 0.0], 350.0, ATM)
    mw, rho_l, latent = mixture_properties(btx, pure, "liquid")
    assert mw == pytest.approx(0.07811)
    assert rho_l == pytest.approx(876.0)
    assert latent == pytest.approx(30720.0)
    eq = Stream([1.0, 1.0, 0.0], 350.0, ATM)
    assert mixture_properties(btx, eq)[0] == pytest.approx(0.085125, abs=1e-5)
    _, rv1, _ = mixture_properties(btx, eq, "vapor")
    _, rv2, _ = mixture_properties(btx, Stream([1.0, 1.0, 0.0], 350.0, 2 * ATM), "vapor")
    assert rv2 == pytest.approx(2 * rv1, rel=1e-12)
    assert rv1 == pytest.approx(ATM * 0.085125 / (8.314 * 350.0))


def test_mixture_properties_zero_flow(btx):
    with pytest.raises(DegenerateStreamError):
        mixture_properties(btx, Stream([0.0, 0.0, 0.0], 350.0, ATM))


def test_stream_validation():
    with pytest.raises(ValueError):
        Stream([1.0, -0.1], 300.0, ATM)
    with pytest.raises(ValueError):
        Stream([1.0, 1.0], 0.0, ATM)
    assert math.isclose(Stream([1.0, 3.0], 300.0, ATM).composition[1], 0.75)
