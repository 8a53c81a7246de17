"""Task encodings for the controllers: the water-coverage Lyapunov function,
the spatial-safety barrier over the no-fly region, the per-robot energy
barrier, and the worst-case relaxation that covers unknown neighbor motion in
the decentralized controller.

All derivatives are returned in control-affine coefficient form so the
controllers can drop them straight into convex-program rows. The coefficients
are built from the same flux-form transport stencils as the density rate, so
reconstructing a derivative from coefficients reproduces the direct
computation to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .density import RobotDensity
from .grid import ScalarField, convolve, laplacian, transport_gradient

__all__ = [
    "ClfEval",
    "SafetyCbfEval",
    "EnergyCbfEval",
    "clf_eval",
    "safety_cbf_eval",
    "energy_cbf_eval",
    "worst_case_delta",
    "neighbor_contribution",
]


@dataclass
class ClfEval:
    """V plus the coefficients of dV/dt = const + sum_i lin_u[i].u_i + lin_f[i] f_i."""

    V: float
    lin_u: np.ndarray  # (N, 2)
    lin_f: np.ndarray  # (N,)
    const: float

    def vdot(self, u, f) -> float:
        u = np.asarray(u, dtype=float).reshape(self.lin_u.shape)
        f = np.asarray(f, dtype=float).reshape(self.lin_f.shape)
        return float(self.const + (self.lin_u * u).sum() + (self.lin_f * f).sum())


@dataclass
class SafetyCbfEval:
    """h plus the coefficients of dh/dt = const + sum_i lin_u[i].u_i."""

    h: float
    lin_u: np.ndarray  # (N, 2)
    const: float

    def hdot(self, u) -> float:
        u = np.asarray(u, dtype=float).reshape(self.lin_u.shape)
        return float(self.const + (self.lin_u * u).sum())


@dataclass
class EnergyCbfEval:
    """h_E plus the pieces of dh_E/dt = -quad_u |u|^2 + lin_u.u + const."""

    h_e: float
    quad_u: float
    lin_u: np.ndarray  # (2,)
    const: float

    def hdot(self, u) -> float:
        u = np.asarray(u, dtype=float)
        return float(-self.quad_u * (u @ u) + self.lin_u @ u + self.const)


def _select(n: int, flags) -> np.ndarray:
    if flags is None:
        return np.ones(n, dtype=bool)
    out = np.asarray(flags, dtype=bool)
    if out.shape != (n,):
        raise ValueError("selection flags must have one entry per robot")
    return out


def clf_eval(
    rho_d: ScalarField,
    rho_w: ScalarField,
    densities: Sequence[RobotDensity],
    waters: Sequence[float],
    sigma_s: float,
    motion_diffusion: float,
    variable=None,
    fixed_u: Optional[np.ndarray] = None,
) -> ClfEval:
    """Evaluate V = 1/2 int (rho_d - rho_w)^2 and its derivative coefficients.

    Per robot i the derivative contribution is
    int (rho_d - rho_w) (-w_i K*drho_i/dt - f_i K*rho_i), with K the spray
    kernel and drho_i/dt the transport-diffusion rate. Robots not flagged in
    ``variable`` contribute with the velocity given in ``fixed_u`` and zero
    flow (the conservative choice for non-decision neighbors); their share is
    folded into the constant. The target is treated as frozen over the step.

    K is symmetric, so int (rho_d - rho_w) (K*g) = int (K*(rho_d - rho_w)) g;
    convolving the mismatch once replaces four convolutions per robot.
    """
    if rho_d.spec != rho_w.spec:
        raise ValueError("fields live on different grids")
    n = len(densities)
    if len(waters) != n:
        raise ValueError("one water level per robot required")
    var = _select(n, variable)
    if fixed_u is None:
        fixed_u = np.zeros((n, 2))
    fixed_u = np.asarray(fixed_u, dtype=float)

    cell = rho_d.spec.h**2
    mismatch = ScalarField(rho_d.spec, rho_d.values - rho_w.values)
    V = 0.5 * float((mismatch.values**2).sum()) * cell
    m_k = convolve(mismatch, sigma_s).values

    lin_u = np.zeros((n, 2))
    lin_f = np.zeros(n)
    const = 0.0
    for i, (rho, w) in enumerate(zip(densities, waters)):
        ax, ay = transport_gradient(rho.field)
        coef = w * cell * np.array([(m_k * ax).sum(), (m_k * ay).sum()])
        if motion_diffusion > 0:
            const -= (
                w * motion_diffusion * cell * (m_k * laplacian(rho.field).values).sum()
            )
        if var[i]:
            lin_u[i] = coef
            lin_f[i] = -cell * (m_k * rho.field.values).sum()
        else:
            const += float(coef @ fixed_u[i])
    return ClfEval(V, lin_u, lin_f, const)


def safety_cbf_eval(
    densities: Sequence[RobotDensity],
    unsafe_mask: np.ndarray,
    epsilon: float,
    motion_diffusion: float,
    variable=None,
    fixed_u: Optional[np.ndarray] = None,
    include_drift=None,
) -> SafetyCbfEval:
    """Spatial safety barrier h = epsilon - int_A rho^2 over the listed robots.

    dh/dt = -2 int_A rho drho/dt summed over robots. ``variable`` selects
    robots whose velocity stays symbolic; others contribute their ``fixed_u``
    advection to the constant. ``include_drift`` selects whose diffusion drift
    lands in the constant (the decentralized controller excludes neighbors
    there because the worst-case relaxation already covers them).
    """
    n = len(densities)
    var = _select(n, variable)
    drift = _select(n, include_drift)
    if fixed_u is None:
        fixed_u = np.zeros((n, 2))
    fixed_u = np.asarray(fixed_u, dtype=float)

    spec = densities[0].field.spec
    if unsafe_mask.shape != spec.shape:
        raise ValueError("unsafe mask shape does not match the grid")
    cell = spec.h**2
    rho = np.zeros(spec.shape)
    for d in densities:
        rho += d.field.values
    weight = np.where(unsafe_mask, rho, 0.0)
    h = float(epsilon - (weight * rho).sum() * cell)

    lin_u = np.zeros((n, 2))
    const = 0.0
    for i, d in enumerate(densities):
        ax, ay = transport_gradient(d.field)
        coef = 2.0 * cell * np.array([(weight * ax).sum(), (weight * ay).sum()])
        if drift[i] and motion_diffusion > 0:
            const -= (
                2.0 * motion_diffusion * cell * (weight * laplacian(d.field).values).sum()
            )
        if var[i]:
            lin_u[i] = coef
        else:
            const += float(coef @ fixed_u[i])
    return SafetyCbfEval(h, lin_u, const)


def energy_cbf_eval(
    E_i: float, path, c1: float, c2: float, e_min: float
) -> EnergyCbfEval:
    """Energy barrier h_E = E - e_min - P for a robot with a charge path.

    P is the path's energy-to-go; its rate under motion u is
    -e_rate * (dhat . u) with e_rate = (c1 u_plan^2 + c2)/u_plan and dhat the
    unit vector along the path's first segment, so riding the path at u_plan
    holds h_E constant. A robot already inside the charger has P = 0 and no
    preferred direction.
    """
    if path is None:
        raise ValueError("energy barrier requires a charge path")
    h_e = float(E_i - e_min - path.energy)
    e_rate = (c1 * path.u_plan**2 + c2) / path.u_plan
    d_hat = path.first_direction()
    lin = e_rate * d_hat if d_hat is not None else np.zeros(2)
    return EnergyCbfEval(h_e, quad_u=c1, lin_u=lin, const=-c2)


def neighbor_contribution(
    rho_n: np.ndarray,
    neighbor: RobotDensity,
    u_j,
    unsafe_mask: np.ndarray,
    motion_diffusion: float,
) -> float:
    """Realized contribution of one neighbor's motion+diffusion to dh_s/dt,
    measured against the local density sum ``rho_n`` (plain array)."""
    cell = neighbor.field.spec.h**2
    weight = np.where(unsafe_mask, rho_n, 0.0)
    ax, ay = transport_gradient(neighbor.field)
    g = cell * np.array([(weight * ax).sum(), (weight * ay).sum()])
    drift = -2.0 * motion_diffusion * cell * (weight * laplacian(neighbor.field).values).sum()
    u_j = np.asarray(u_j, dtype=float)
    return float(2.0 * g @ u_j + drift)


def worst_case_delta(
    rho_n: np.ndarray,
    neighbors: Sequence[RobotDensity],
    unsafe_mask: np.ndarray,
    u_max: float,
    motion_diffusion: float,
) -> float:
    """Upper bound on -sum_j (neighbor j's contribution to dh_s/dt) over all
    admissible neighbor velocities |u_j| <= u_max.

    Closed form per neighbor: 2 u_max |int_A rho_N grad(rho_j)| from the
    Cauchy-Schwarz bound over the velocity ball, plus the (deterministic)
    diffusion drift with its exact sign. Sound: any realized contribution
    satisfies contribution >= -delta.
    """
    if not neighbors:
        return 0.0
    spec = neighbors[0].field.spec
    cell = spec.h**2
    weight = np.where(unsafe_mask, rho_n, 0.0)
    delta = 0.0
    for d in neighbors:
        ax, ay = transport_gradient(d.field)
        g = cell * np.array([(weight * ax).sum(), (weight * ay).sum()])
        delta += 2.0 * u_max * float(np.hypot(g[0], g[1]))
        delta += 2.0 * motion_diffusion * cell * (weight * laplacian(d.field).values).sum()
    return float(delta)
