"""Reaction-diffusion fire model: coupled temperature and fuel fields, the
suppressant spray input, and the temperature-band regions the controllers
consume (deployment band, no-fly region, active-fire area)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .grid import GridSpec, ScalarField, VectorField, advect_upwind, laplacian

__all__ = [
    "FireParams",
    "FireState",
    "RegionThresholds",
    "arrhenius_rate",
    "suppression_field",
    "check_cfl",
    "fire_step",
    "caution_region",
    "deployment_region",
    "unsafe_region",
    "fire_area",
    "ignite",
]


@dataclass
class FireParams:
    """Coefficients of the temperature/fuel dynamics.

    eta        thermal diffusivity (m^2/s)
    wind       advecting wind field (None means calm)
    a_gain     maximum temperature-increase rate (K/s)
    c_cool     cooling coefficient inside the gain (1/s)
    t_ambient  ambient temperature (K)
    gamma_arr  Arrhenius activation constant (K)
    c_fuel     fuel consumption rate (1/s)
    """

    eta: float
    a_gain: float
    c_cool: float
    t_ambient: float
    gamma_arr: float
    c_fuel: float
    wind: Optional[VectorField] = None

    def __post_init__(self):
        for name in ("eta", "a_gain", "c_cool", "gamma_arr", "c_fuel"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.t_ambient <= 0:
            raise ValueError("t_ambient must be positive")


@dataclass
class FireState:
    T: ScalarField  # temperature (K), >= ambient everywhere
    S: ScalarField  # fuel fraction in [0, 1]

    def copy(self) -> "FireState":
        return FireState(self.T.copy(), self.S.copy())


@dataclass(frozen=True)
class RegionThresholds:
    """Temperature thresholds carving the domain into task regions.

    Deployment band D = [t_low, t_high]; no-fly region A = [t_high, inf);
    active fire F = [t_ignite, inf).
    """

    t_low: float
    t_high: float
    t_ignite: float

    def validate(self, t_ambient: float):
        if not (t_ambient < self.t_low < self.t_high):
            raise ValueError("need t_ambient < t_low < t_high")
        if self.t_ignite <= t_ambient:
            raise ValueError("t_ignite must exceed ambient")


def arrhenius_rate(T, params: FireParams):
    """Burn rate exp(-gamma / (T - T_a)) above ambient, exactly 0 at or below.

    Accepts scalars or arrays; returns the same shape.
    """
    T = np.asarray(T, dtype=float)
    out = np.zeros_like(T)
    hot = T > params.t_ambient
    if np.any(hot):
        out[hot] = np.exp(-params.gamma_arr / (T[hot] - params.t_ambient))
    if out.ndim == 0:
        return float(out)
    return out


def suppression_field(
    robots: Sequence[tuple], sigma_s: float, grid: GridSpec, gain: float = 1.0
) -> ScalarField:
    """Temperature forcing from spraying robots (always <= 0).

    robots is a sequence of (position, flow_rate) pairs; each contributes
    -gain * f * exp(-|r - x|^2 / (2 sigma_s^2)) evaluated at cell centers.
    gain converts flow (tank fraction per second) into cooling (K/s); it has
    to beat the net heating of a steadily burning cell, a couple of K/s, or
    spraying only grooms the rim without ever extinguishing anything.
    """
    out = np.zeros(grid.shape)
    two_s2 = 2.0 * sigma_s**2
    for pos, flow in robots:
        if flow < 0:
            raise ValueError("flow rates must be non-negative")
        if flow == 0:
            continue
        gx = np.exp(-((grid.xs - pos[0]) ** 2) / two_s2)
        gy = np.exp(-((grid.ys - pos[1]) ** 2) / two_s2)
        out -= gain * flow * np.outer(gx, gy)
    return ScalarField(grid, out)


def check_cfl(params: FireParams, h: float, dt: float):
    """Explicit-Euler stability guard, run once before a simulation starts."""
    if dt > h**2 / (4.0 * params.eta):
        raise ValueError(
            f"dt={dt} violates the diffusion stability bound h^2/(4 eta)="
            f"{h ** 2 / (4.0 * params.eta):.4g}"
        )
    if params.wind is not None and dt * params.wind.max_speed > h:
        raise ValueError("dt * max wind speed exceeds one cell; advection unstable")


def fire_step(
    state: FireState,
    params: FireParams,
    u_s: Optional[ScalarField],
    dt: float,
    clamp_stats: Optional[dict] = None,
) -> FireState:
    """One explicit Euler step of the coupled temperature/fuel dynamics.

    dT/dt = eta lap(T) - wind . grad(T) + a_gain (S r(T) - c_cool (T - T_a)) + u_s
    dS/dt = -c_fuel S r(T)

    Temperature is floored at ambient afterwards (spraying is unbounded below)
    and fuel is clipped to [0, 1]. If ``clamp_stats`` is given, the counters
    'floor_cells' and 'fuel_clip_cells' are incremented so runs can assert the
    clamps stay quiet outside heavy suppression.
    """
    T, S = state.T, state.S
    rate = arrhenius_rate(T.values, params)
    dT = params.eta * laplacian(T).values
    if params.wind is not None:
        dT -= advect_upwind(T, params.wind).values
    dT += params.a_gain * (S.values * rate - params.c_cool * (T.values - params.t_ambient))
    if u_s is not None:
        dT += u_s.values

    T_new = T.values + dt * dT
    floored = T_new < params.t_ambient
    if clamp_stats is not None:
        clamp_stats["floor_cells"] = clamp_stats.get("floor_cells", 0) + int(floored.sum())
    np.maximum(T_new, params.t_ambient, out=T_new)

    S_new = S.values - dt * params.c_fuel * S.values * rate
    clipped = (S_new < 0.0) | (S_new > 1.0)
    if clamp_stats is not None:
        clamp_stats["fuel_clip_cells"] = clamp_stats.get("fuel_clip_cells", 0) + int(
            clipped.sum()
        )
    np.clip(S_new, 0.0, 1.0, out=S_new)

    return FireState(ScalarField(T.spec, T_new), ScalarField(S.spec, S_new))


def deployment_region(T: ScalarField, th: RegionThresholds) -> np.ndarray:
    """Boolean mask of the deployment band t_low <= T <= t_high."""
    return (T.values >= th.t_low) & (T.values <= th.t_high)


def unsafe_region(T: ScalarField, th: RegionThresholds) -> np.ndarray:
    """Boolean mask of the no-fly region T >= t_high."""
    return T.values >= th.t_high


def caution_region(
    T: ScalarField,
    th: RegionThresholds,
    heating: Optional[np.ndarray] = None,
    lead: float = 0.0,
) -> np.ndarray:
    """Boolean mask of cells burning now or about to: T + lead*Ṫ >= t_ignite.

    A superset of unsafe_region whenever the fire is alive. The controllers
    and the charge planner enforce their barrier on this wider mask for two
    reasons. First, the annulus between the ignition and no-fly contours
    absorbs ordinary front growth between control updates, so a barrier held
    nonnegative here keeps the no-fly barrier nonnegative outright (the
    integral over a subset can only be smaller). Second, when two fire lobes
    merge, the saddle between them crosses threshold almost at once and no
    static margin helps; extrapolating each cell's heating rate over a short
    lead time flags those cells while they are still warming, early enough to
    move out of the way.

    heating is the elementwise temperature rate (K/s, negative entries are
    ignored); with heating=None or lead=0 the mask is just T >= t_ignite.
    """
    vals = T.values
    if heating is not None and lead > 0.0:
        vals = vals + lead * np.maximum(heating, 0.0)
    return vals >= th.t_ignite


def fire_area(T: ScalarField, th: RegionThresholds) -> float:
    """Active-fire area in m^2: cells at or above ignition times cell area."""
    return float((T.values >= th.t_ignite).sum()) * T.spec.h**2


def ignite(
    grid: GridSpec,
    t_ambient: float,
    centers: Sequence,
    peak: float,
    radius: float,
    fuel_center: Optional[Sequence] = None,
    fuel_radius: float = 0.0,
    fuel_edge: float = 0.2,
) -> FireState:
    """Initial condition: a fuel bed plus Gaussian temperature bumps at the
    given centers (peak kelvins above ambient, std-dev ``radius`` meters).

    With fuel_radius > 0 the fuel is a circular bed: density 1 inside,
    tapering smoothly to bare ground across the last ``fuel_edge`` meters
    before the rim. The reaction wave then stalls at the rim instead of
    running to the domain walls, which keeps a flyable margin along every
    wall for the whole burn. fuel_radius <= 0 lays fuel everywhere.
    """
    T = np.full(grid.shape, float(t_ambient))
    two_r2 = 2.0 * radius**2
    for c in centers:
        gx = np.exp(-((grid.xs - c[0]) ** 2) / two_r2)
        gy = np.exp(-((grid.ys - c[1]) ** 2) / two_r2)
        T += peak * np.outer(gx, gy)

    S = np.ones(grid.shape)
    if fuel_radius > 0.0:
        cx, cy = (0.0, 0.0) if fuel_center is None else fuel_center
        X, Y = grid.cell_centers
        d = np.sqrt((X - cx) ** 2 + (Y - cy) ** 2)
        t = np.clip((fuel_radius - d) / max(fuel_edge, grid.h), 0.0, 1.0)
        S = t * t * (3.0 - 2.0 * t)  # C1 smoothstep, avoids a reflective kink
    return FireState(ScalarField(grid, T), ScalarField(grid, S))
