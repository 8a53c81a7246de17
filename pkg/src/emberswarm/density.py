"""Per-robot belief densities and the density fields built from them.

Each robot is represented by a Gaussian probability density centered on its
measured position (localization noise sets the width). Densities evolve under
a transport-diffusion rate whose drift is the commanded velocity; the water
deployment density rho_w and the temperature-derived target density rho_d are
the two fields the task Lyapunov function compares.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .fire import RegionThresholds
from .grid import GridSpec, ScalarField, convolve, integrate, laplacian, transport_gradient

__all__ = [
    "DensityParams",
    "RobotDensity",
    "WaterState",
    "rasterize_density",
    "fp_rate",
    "density_step",
    "water_density",
    "target_density",
]


@dataclass(frozen=True)
class DensityParams:
    """sigma_loc: localization std-dev (m); motion_diffusion: diffusion
    coefficient of the motion noise (m^2/s); u_max: speed bound (m/s)."""

    sigma_loc: float
    motion_diffusion: float
    u_max: float

    def __post_init__(self):
        if self.sigma_loc <= 0 or self.u_max <= 0 or self.motion_diffusion < 0:
            raise ValueError("invalid density parameters")


@dataclass
class RobotDensity:
    """A robot's belief density: unit-mass non-negative field plus its center."""

    center: np.ndarray
    field: ScalarField

    def copy(self) -> "RobotDensity":
        return RobotDensity(self.center.copy(), self.field.copy())


@dataclass
class WaterState:
    """Onboard water level in [0, 1] and the maximum flow rate (1/s).

    A robot with an empty tank has its admissible flow forced to zero.
    """

    w: float
    f_max: float

    def effective_f_max(self) -> float:
        return self.f_max if self.w > 0.0 else 0.0

    def drain(self, f: float, dt: float, refill_rate: float = 0.0) -> float:
        """Apply one tick of deployment/refill; returns the new level."""
        self.w = min(max(self.w - f * dt + refill_rate * dt, 0.0), 1.0)
        return self.w


def rasterize_density(x_i, params: DensityParams, grid: GridSpec) -> RobotDensity:
    """Isotropic Gaussian with variance sigma_loc^2 at the measured position,
    renormalized on the grid so its integral is exactly 1."""
    x_i = np.asarray(x_i, dtype=float)
    if not grid.contains(x_i):
        raise ValueError(f"position {tuple(x_i)} outside the domain")
    two_s2 = 2.0 * params.sigma_loc**2
    gx = np.exp(-((grid.xs - x_i[0]) ** 2) / two_s2)
    gy = np.exp(-((grid.ys - x_i[1]) ** 2) / two_s2)
    vals = np.outer(gx, gy)
    mass = vals.sum() * grid.h**2
    vals /= mass
    return RobotDensity(x_i.copy(), ScalarField(grid, vals))


def fp_rate(rho_i: RobotDensity, u_i, params: DensityParams) -> ScalarField:
    """Time derivative of the belief density: -div(u rho) + D lap(rho).

    The transport term uses the conservative flux-form stencils from
    ``transport_gradient`` so the rate is exactly linear in u and integrates
    to zero (mass conservation under zero-flux boundaries). The same stencils
    back the control-affine coefficients in the task functions, which keeps
    coefficient reconstruction exact.
    """
    u_i = np.asarray(u_i, dtype=float)
    speed = float(np.hypot(u_i[0], u_i[1]))
    if speed > params.u_max * (1 + 1e-9):
        raise ValueError(f"|u|={speed} exceeds the speed bound {params.u_max}")
    ax, ay = transport_gradient(rho_i.field)
    rate = -(u_i[0] * ax + u_i[1] * ay)
    if params.motion_diffusion > 0:
        rate += params.motion_diffusion * laplacian(rho_i.field).values
    return ScalarField(rho_i.field.spec, rate)


def density_step(
    rho_i: RobotDensity, u_i, params: DensityParams, dt: float
) -> RobotDensity:
    """Euler-evolve a density one step and renormalize to unit mass.

    Central transport can leave tiny negative values in the far tail; they
    are clipped before renormalization.
    """
    vals = rho_i.field.values + dt * fp_rate(rho_i, u_i, params).values
    np.maximum(vals, 0.0, out=vals)
    mass = vals.sum() * rho_i.field.spec.h**2
    if mass <= 0:
        raise ValueError("density mass vanished during the Euler step")
    vals /= mass
    center = rho_i.center + dt * u_i
    return RobotDensity(np.asarray(center, dtype=float), ScalarField(rho_i.field.spec, vals))


def water_density(
    robots: Sequence[tuple[RobotDensity, float]], sigma_s: float
) -> ScalarField:
    """Water deployment density: sum of w_i * (spray kernel * rho_i)."""
    if not robots:
        raise ValueError("water_density needs at least one robot")
    spec = robots[0][0].field.spec
    out = np.zeros(spec.shape)
    for rho, w in robots:
        if not (0.0 <= w <= 1.0):
            raise ValueError("water levels must lie in [0, 1]")
        if w == 0.0:
            continue
        out += w * convolve(rho.field, sigma_s).values
    return ScalarField(spec, out)


def target_density(
    T_est: ScalarField, th: RegionThresholds, gain: float = 1.0
) -> ScalarField:
    """Desired water density: temperature band-scaled onto the deployment band.

    Cells inside [t_low, t_high] get (T - t_low) / (t_high - t_low) times the
    configurable gain; everything else is zero, so the support of the target
    is exactly the deployment band.
    """
    scaled = (T_est.values - th.t_low) / (th.t_high - th.t_low)
    mask = (T_est.values >= th.t_low) & (T_est.values <= th.t_high)
    return ScalarField(T_est.spec, np.where(mask, gain * scaled, 0.0))
