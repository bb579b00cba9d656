"""Single-column simulation by the constant-molal-overflow bubble-point method.

Stage numbering runs top to bottom: 0 is the total condenser, 1..N are the
trays, N+1 is the partial reboiler. The unknowns of each per-component
tridiagonal system are the liquid component flows leaving each stage (the
reflux for stage 0, the bottoms for stage N+1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .thermo import (
    AntoineTable,
    ConvergenceError,
    Stream,
    ThermoError,
    bubble_point,
    dew_point,
    _solve_monotone,
    flash_feed,
)

T_TOL = 0.01  # K, max stage temperature change for convergence
MAX_SWEEPS = 200
NEGATIVE_FLOW_TOL = -1e-9


class SingularSystemError(ArithmeticError):
    pass


@dataclass(frozen=True)
class ColumnSpec:
    pressure: float
    n_stages: int
    reflux_ratio: float
    boilup_ratio: float

    def __post_init__(self):
        if int(self.n_stages) != self.n_stages or self.n_stages < 3:
            raise ValueError(f"n_stages must be an integer >= 3, got {self.n_stages}")
        for name in ("pressure", "reflux_ratio", "boilup_ratio"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be > 0, got {value}")

    @property
    def feed_stage(self) -> int:
        return math.ceil(self.n_stages / 2)

    def to_dict(self) -> dict:
        return {
            "pressure": self.pressure,
            "n_stages": int(self.n_stages),
            "reflux_ratio": self.reflux_ratio,
            "boilup_ratio": self.boilup_ratio,
        }


@dataclass
class ColumnResult:
    distillate: Stream | None
    bottoms: Stream | None
    stage_temperatures: np.ndarray
    condenser_duty: float
    reboiler_duty: float
    max_vapor_flow: float
    converged: bool
    iterations: int
    max_delta_t: float = math.nan
    message: str = ""
    stage_liquid: np.ndarray | None = field(default=None, repr=False)

    @property
    def condenser_temperature(self) -> float:
        return float(self.stage_temperatures[0])

    @property
    def reboiler_temperature(self) -> float:
        return float(self.stage_temperatures[-1])


def derive_flows(total_feed: float, q: float, reflux_ratio: float, boilup_ratio: float):
    """Section flows (D, B, L, V, L', V') fixed by the two ratio specifications."""
    f, r, s = total_feed, reflux_ratio, boilup_ratio
    d = f * (s + 1.0 - q) / (r + s + 1.0)
    b = f - d
    liq = r * d
    vap = (r + 1.0) * d
    return d, b, liq, vap, liq + q * f, s * b


def thomas_solve(lower, diagonal, upper, rhs) -> np.ndarray:
    """Solve a tridiagonal system by forward elimination and back substitution.

    ``lower`` and ``upper`` may have length n (``lower[0]`` and ``upper[-1]``
    ignored) or n - 1. All arguments may carry leading batch axes; the system
    runs along the last axis.
    """
    d = np.array(diagonal, dtype=float)
    r = np.array(rhs, dtype=float)
    n = d.shape[-1]
    a = np.asarray(lower, dtype=float)
    c = np.asarray(upper, dtype=float)
    if a.shape[-1] == n - 1:
        a = np.concatenate([np.zeros(a.shape[:-1] + (1,)), a], axis=-1)
    if c.shape[-1] == n - 1:
        c = np.concatenate([c, np.zeros(c.shape[:-1] + (1,))], axis=-1)
    if not (a.shape[-1] == c.shape[-1] == r.shape[-1] == n):
        raise ValueError("coefficient lengths do not match")
    a, c, d, r = np.broadcast_arrays(a, c, d, r)
    d = d.copy()
    r = r.copy()

    cp = np.empty_like(d)
    for k in range(n):
        if k > 0:
            d[..., k] -= a[..., k] * cp[..., k - 1]
            r[..., k] -= a[..., k] * r[..., k - 1]
        if np.any(d[..., k] == 0):
            raise SingularSystemError(f"zero pivot at row {k}")
        cp[..., k] = c[..., k] / d[..., k]
        r[..., k] /= d[..., k]
    x = r
    for k in range(n - 2, -1, -1):
        x[..., k] -= cp[..., k] * x[..., k + 1]
    return x


def component_balances(k, l_stage, v_stage, f_comp, reflux_ratio: float) -> np.ndarray:
    """Liquid component flows leaving each stage for fixed K-values, shape (C, N + 2).

    Row j reads l[j-1] - (1 + S[j]) l[j] + S[j+1] l[j+1] = -f[j] with the
    stripping factor S = K V / L. The condenser row uses v[1] = l[0] (1 + 1/R);
    the last row is the reboiler, whose liquid is the bottoms product.
    """
    strip = np.asarray(k, dtype=float) * (v_stage / l_stage)
    lower = np.ones_like(strip)
    diag = -(1.0 + strip)
    upper = np.zeros_like(strip)
    upper[:, :-1] = strip[:, 1:]
    diag[:, 0] = -(1.0 + 1.0 / reflux_ratio)
    return thomas_solve(lower, diag, upper, -np.asarray(f_comp, dtype=float))


def _theta_factors(comp_liq: np.ndarray, feed_flows: np.ndarray, d_total: float, reflux_ratio: float) -> np.ndarray:
    """Per-component profile multipliers that make the distillate rates add up to D.

    Holland's theta correction: d_i' = f_i / (1 + theta b_i / d_i) with theta chosen
    so that sum d_i' = D. It leaves the fixed point unchanged (theta = 1 there)
    and removes the slow drift of the plain iteration at high reflux.
    """
    d = comp_liq[:, 0] / reflux_ratio
    b = comp_liq[:, -1]
    ok = (d > 0) & (b > 0) & (feed_flows > 0)
    if not ok.any():
        return np.ones(len(d))
    ratio = b[ok] / d[ok]
    fixed = float(feed_flows[~ok & (b <= 0)].sum())  # components that all go overhead

    def excess(log_theta):
        terms = feed_flows[ok] / (1.0 + np.exp(log_theta) * ratio)
        slope = -float((terms * np.exp(log_theta) * ratio / (1.0 + np.exp(log_theta) * ratio)).sum())
        return float(terms.sum()) + fixed - d_total, slope

    try:
        log_theta = _solve_monotone(excess, -50.0, 50.0, tol=1e-12 * max(d_total, 1e-300))
    except ConvergenceError:
        return np.ones(len(d))
    factors = np.ones(len(d))
    factors[ok] = (feed_flows[ok] / (1.0 + np.exp(log_theta) * ratio)) / d[ok]
    return factors


def _bubble_temperatures(table: AntoineTable, x: np.ndarray, pressure: float, t0: np.ndarray):
    """Vectorized bubble point of each row of ``x``, Newton from ``t0`` with bisection guard."""
    ln_p = math.log(pressure)
    bp = table.boiling_points(pressure)
    lo = np.full(len(x), bp.min() - 50.0)
    hi = np.full(len(x), bp.max() + 50.0)
    t = np.clip(t0, lo + 1e-6, hi - 1e-6)
    for _ in range(100):
        kx = np.exp(table.ln_psat(t) - ln_p) * x
        s = kx.sum(axis=1)
        res = s - 1.0
        if np.all(np.abs(res) < 1e-8):
            return t
        lo = np.where(res < 0, t, lo)
        hi = np.where(res > 0, t, hi)
        # Newton on ln(sum Kx): better conditioned far from the root
        slope = (kx * table.dln_psat_dt(t)).sum(axis=1) / s
        t_new = t - np.log(s) / slope
        outside = ~((t_new > lo) & (t_new < hi))
        t = np.where(outside, 0.5 * (lo + hi), t_new)
    return t


def _failure(n_total: int, iterations: int, message: str, temps=None) -> ColumnResult:
    return ColumnResult(
        distillate=None,
        bottoms=None,
        stage_temperatures=np.full(n_total, np.nan) if temps is None else temps,
        condenser_duty=math.nan,
        reboiler_duty=math.nan,
        max_vapor_flow=math.nan,
        converged=False,
        iterations=iterations,
        message=message,
    )


def solve_column(components, feed: Stream, spec: ColumnSpec) -> ColumnResult:
    """Simulate a total-condenser, partial-reboiler column fed at tray ceil(N/2).

    Failures (non-finite values, negative flows, property range errors, no
    convergence within the sweep limit) come back as ``converged=False``
    rather than raising.
    """
    table = components if isinstance(components, AntoineTable) else AntoineTable(components)
    n = spec.n_stages
    n_total = n + 2
    total = feed.total
    if not total > 0:
        raise ValueError("feed has zero total flow")
    p = spec.pressure
    z = feed.composition

    try:
        q, _, _ = flash_feed(table, z, feed.temperature, p)
        t_bub, _ = bubble_point(table, z, p)
        t_dew, _ = dew_point(table, z, p)
    except ThermoError as exc:
        return _failure(n_total, 0, f"feed: {exc}")

    d_tot, b_tot, liq, vap, liq_s, vap_s = derive_flows(total, q, spec.reflux_ratio, spec.boilup_ratio)
    fs = spec.feed_stage

    # Stage-wise molar flows leaving each stage (trays 1..N plus reboiler).
    l_stage = np.empty(n_total)
    v_stage = np.empty(n_total)
    l_stage[0] = liq  # reflux
    v_stage[0] = 0.0
    l_stage[1:fs] = liq
    v_stage[1 : fs + 1] = vap
    l_stage[fs : n + 1] = liq_s
    v_stage[fs + 1 : n + 1] = vap_s
    l_stage[n + 1] = b_tot
    v_stage[n + 1] = vap_s

    f_comp = np.zeros((len(table), n_total))
    f_comp[:, fs] = feed.flows

    temps = np.linspace(t_bub, t_dew, n_total)
    ln_p = math.log(p)
    max_dt = math.inf
    sweeps = 0
    comp_liq = None
    for sweeps in range(1, MAX_SWEEPS + 1):
        k = np.exp(table.ln_psat(temps) - ln_p).T  # (C, stages)
        try:
            comp_liq = component_balances(k, l_stage, v_stage, f_comp, spec.reflux_ratio)
        except SingularSystemError as exc:
            return _failure(n_total, sweeps, str(exc))
        if not np.all(np.isfinite(comp_liq)):
            return _failure(n_total, sweeps, "non-finite liquid flows")
        x = (np.clip(comp_liq, 0.0, None) * _theta_factors(comp_liq, feed.flows, d_tot, spec.reflux_ratio)[:, None]).T
        x_sum = x.sum(axis=1, keepdims=True)
        if np.any(x_sum <= 0):
            return _failure(n_total, sweeps, "empty stage")
        x = x / x_sum
        new_temps = _bubble_temperatures(table, x, p, temps)
        if not np.all(np.isfinite(new_temps)):
            return _failure(n_total, sweeps, "non-finite stage temperature")
        max_dt = float(np.max(np.abs(new_temps - temps)))
        temps = new_temps
        if max_dt < T_TOL:
            break
    else:
        result = _failure(n_total, sweeps, f"no convergence after {MAX_SWEEPS} sweeps", temps)
        result.max_delta_t = max_dt
        return result

    present = np.ones(len(table), dtype=bool)
    try:
        table.check_range(temps, present)
    except ThermoError as exc:
        result = _failure(n_total, sweeps, str(exc), temps)
        result.max_delta_t = max_dt
        return result

    dist = comp_liq[:, 0] / spec.reflux_ratio
    bott = comp_liq[:, -1]
    if min(dist.min(), bott.min()) < NEGATIVE_FLOW_TOL:
        return _failure(n_total, sweeps, "negative product flow", temps)
    dist = np.clip(dist, 0.0, None)
    bott = np.clip(bott, 0.0, None)

    distillate = Stream(dist, temps[0], p)
    bottoms = Stream(bott, temps[-1], p)
    latent_d = float(dist @ table.latent_heat / dist.sum()) if dist.sum() > 0 else 0.0
    latent_b = float(bott @ table.latent_heat / bott.sum()) if bott.sum() > 0 else 0.0
    return ColumnResult(
        distillate=distillate,
        bottoms=bottoms,
        stage_temperatures=temps,
        condenser_duty=vap * latent_d,
        reboiler_duty=vap_s * latent_b,
        max_vapor_flow=max(vap, vap_s),
        converged=True,
        iterations=sweeps,
        max_delta_t=max_dt,
        stage_liquid=comp_liq,
    )
