"""Centralized and decentralized suppression controllers.

Both controllers assemble the same kind of convex program each tick: a
quadratic effort objective over velocities, flows, and one slack, a soft
Lyapunov-descent row for tracking the deployment target, a hard density
barrier row keeping belief mass out of hot cells, and one hard energy barrier
row per robot guaranteeing it can still reach the charger. The centralized
variant solves one joint program on global information; the decentralized
variant solves one small program per robot on its local map and neighbor
snapshots, with a worst-case margin standing in for what the neighbors might
do.

Infeasible or unconverged solves never crash a run: the affected robots fall
back to tracking their charge path with the sprayer off, and the event is
flagged in the diagnostics so the harness can log it.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .density import RobotDensity, WaterState
from .grid import ScalarField
from .planner import ChargePath
from .solver import ConvexProgram, LinRow, QuadRow, Solution, solve
from .tasks import (
    clf_eval,
    energy_cbf_eval,
    safety_cbf_eval,
    worst_case_delta,
)

__all__ = [
    "ControllerGains",
    "ControlLimits",
    "CollisionSettings",
    "ControlCommand",
    "StepDiag",
    "RobotView",
    "centralized_step",
    "decentralized_step",
    "collision_filter",
]

ACTIVE_SLACK = 1e-6


@dataclass(frozen=True)
class ControllerGains:
    """Class-K gains and cost weights shared by both controllers.

    safety_pad and energy_pad shrink the enforced barrier values slightly so
    that discrete stepping and relocalization noise between solves cannot
    push the true barrier below zero; reported metrics use the unpadded
    values.
    """

    alpha_v: float
    alpha_h: float
    alpha_e: float
    gamma: float
    zeta: float
    epsilon: float
    safety_pad: float = 0.0
    energy_pad: float = 0.0

    def __post_init__(self):
        for name in ("alpha_v", "alpha_h", "alpha_e", "gamma", "zeta", "epsilon"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.safety_pad < 0 or self.energy_pad < 0:
            raise ValueError("barrier pads must be >= 0")


@dataclass(frozen=True)
class ControlLimits:
    """Physical bounds and model constants the rows depend on.

    e_turnback is the reserve above the bare trip cost at which a robot
    commits to the resupply ride outright instead of trusting the energy row
    alone; during infeasible stretches no row runs, so without the scripted
    commitment a besieged robot can dither until the trip is no longer
    affordable.
    """

    u_max: float
    c1: float
    c2: float
    e_min: float
    sigma_s: float
    motion_diffusion: float
    e_turnback: float = 0.0


@dataclass(frozen=True)
class CollisionSettings:
    """Optional pairwise separation rows: d/dt dist >= -alpha_c (dist - r_coll)."""

    r_coll: float
    alpha_c: float


@dataclass
class ControlCommand:
    u: np.ndarray  # (2,)
    f: float
    slack_used: float

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)


@dataclass
class StepDiag:
    """Per-solve bookkeeping for the command log and the run metrics.

    solve_time covers the interior-point call only, not row assembly, so
    timing comparisons across team sizes measure the optimization itself.
    """

    status: str
    solve_time: float
    fallback: bool
    V: float
    h_s: float
    h_e: np.ndarray
    active: List[str] = field(default_factory=list)
    delta: float = 0.0
    kkt_residual: float = np.nan
    iterations: int = 0


@dataclass
class RobotView:
    """Snapshot of one robot as the controllers see it.

    density.center is the measured position. last_u is the previous tick's
    commanded velocity, which is what neighbors assume this robot keeps
    doing (zero before first contact). returning marks a robot committed to
    a resupply trip; the harness sets it when the tank runs dry and clears
    it once tank and battery are topped up, so the robot does not ping-pong
    at the charger boundary.
    """

    density: RobotDensity
    water: WaterState
    energy: float
    path: Optional[ChargePath]
    last_u: np.ndarray = field(default_factory=lambda: np.zeros(2))
    returning: bool = False

    def __post_init__(self):
        self.last_u = np.asarray(self.last_u, dtype=float)

    @property
    def position(self) -> np.ndarray:
        return self.density.center


def _fallback_command(
    view: RobotView,
    limits: ControlLimits,
    safety_dir: Optional[np.ndarray] = None,
    retreat: bool = False,
) -> ControlCommand:
    """Scripted command used when the program is skipped or cannot be solved.

    If the spatial barrier has already been eaten into (retreat=True), steer
    straight up its gradient at full speed; that is the direction that sheds
    overlap with hot cells fastest. Otherwise ride the charge path: for an
    infeasible solve that avoids bleeding battery on pointless evasion, and
    for a dry tank it is the refill trip itself. Sprayer off in all cases.
    """
    u = np.zeros(2)
    path_dir = view.path.first_direction() if view.path is not None else None
    if retreat and safety_dir is not None:
        norm = float(np.linalg.norm(safety_dir))
        if norm > 1e-9:
            away = safety_dir / norm
            # keep making progress along the path while peeling away from
            # the front; a pure perpendicular retreat against a path ride
            # dithers in place while the battery drains
            if path_dir is not None and float(away @ path_dir) > -0.5:
                blend = away + path_dir
                away = blend / float(np.linalg.norm(blend))
            return ControlCommand(u=limits.u_max * away, f=0.0, slack_used=0.0)
    if path_dir is not None:
        u = path_dir * min(view.path.u_plan, limits.u_max)
    return ControlCommand(u=u, f=0.0, slack_used=0.0)


def _active_rows(sol: Solution) -> List[str]:
    return [name for name, gap in sol.row_slacks if gap <= ACTIVE_SLACK]


def _needs_refill(view: RobotView, limits: ControlLimits) -> bool:
    """A dry tank takes the robot out of the suppression objective entirely:
    its water weight is zero, so the Lyapunov term exerts no pull and the
    program would hover it in place. Sending it down its charge path to
    refill is the only useful action left. A battery within e_turnback of
    the bare trip cost commits to the same ride: the energy row protects it
    only on ticks where the program solves, and a few infeasible ticks near
    a moving front can otherwise spend the margin the row had preserved."""
    if view.path is None:
        return False
    if view.returning or view.water.effective_f_max() <= 0.0:
        return True
    reserve = view.energy - limits.e_min - view.path.energy
    return reserve < limits.e_turnback


def _collision_rows(
    positions: Sequence[np.ndarray], settings: CollisionSettings, n_robots: int
) -> List[LinRow]:
    """Joint-program separation rows for every pair: the relative velocity
    along the line of centers may not shrink the gap faster than the barrier
    allows."""
    rows = []
    for i in range(n_robots):
        for j in range(i + 1, n_robots):
            diff = positions[i] - positions[j]
            d = float(np.linalg.norm(diff))
            if d < 1e-9:
                continue
            e = diff / d
            coef = np.zeros((n_robots, 2))
            coef[i] = -e
            coef[j] = e
            rows.append(
                LinRow(
                    coef_u=coef,
                    coef_f=None,
                    coef_s=0.0,
                    rhs=settings.alpha_c * (d - settings.r_coll),
                    name=f"coll{i}-{j}",
                )
            )
    return rows


def centralized_step(
    views: Sequence[RobotView],
    rho_d: ScalarField,
    unsafe_mask: np.ndarray,
    gains: ControllerGains,
    limits: ControlLimits,
    collision: Optional[CollisionSettings] = None,
    tol: float = 1e-8,
) -> Tuple[List[ControlCommand], StepDiag]:
    """One joint solve over all robots on global information.

    Robots with dry tanks are pulled out of the program: their refill-trip
    velocity is decided up front and folded into the rows as a known drift,
    so the remaining robots plan around where the returning robots are
    actually headed.
    """
    n = len(views)
    densities = [v.density for v in views]
    waters = [v.water.w for v in views]

    refill = np.array([_needs_refill(v) for v in views])
    pre = safety_cbf_eval(
        densities, unsafe_mask, gains.epsilon, limits.motion_diffusion
    )
    fixed_cmds = {
        i: _fallback_command(views[i], limits, pre.lin_u[i], pre.h < gains.safety_pad)
        for i in range(n)
        if refill[i]
    }
    if refill.all():
        h_e = np.full(n, np.nan)
        diag = StepDiag(
            status="refill",
            solve_time=0.0,
            fallback=False,
            V=np.nan,
            h_s=pre.h,
            h_e=h_e,
            active=["refill"],
        )
        return [fixed_cmds[i] for i in range(n)], diag

    variable = ~refill
    fixed_u = np.vstack([
        fixed_cmds[i].u if refill[i] else np.zeros(2) for i in range(n)
    ])
    clf = clf_eval(
        rho_d,
        _water_density_field(views, limits.sigma_s),
        densities,
        waters,
        limits.sigma_s,
        limits.motion_diffusion,
        variable=variable,
        fixed_u=fixed_u,
    )
    saf = safety_cbf_eval(
        densities,
        unsafe_mask,
        gains.epsilon,
        limits.motion_diffusion,
        variable=variable,
        fixed_u=fixed_u,
    )

    rows = [
        LinRow(
            coef_u=clf.lin_u,
            coef_f=clf.lin_f,
            coef_s=-1.0,
            rhs=-gains.alpha_v * clf.V - clf.const,
            name="clf",
        ),
        LinRow(
            coef_u=-saf.lin_u,
            coef_f=None,
            coef_s=0.0,
            rhs=gains.alpha_h * (saf.h - gains.safety_pad) + saf.const,
            name="safety",
        ),
    ]
    quad_rows = []
    h_e = np.full(n, np.nan)
    for i, v in enumerate(views):
        if v.path is None:
            continue
        en = energy_cbf_eval(v.energy, v.path, limits.c1, limits.c2, limits.e_min)
        h_e[i] = en.h_e
        if refill[i]:
            # velocity fixed to the refill trip; no row over a dead variable
            continue
        quad_rows.append(
            QuadRow(
                block=i,
                quad=en.quad_u,
                lin_u=-en.lin_u,
                rhs=gains.alpha_e * (en.h_e - gains.energy_pad) + en.const,
                name=f"energy{i}",
            )
        )
    if collision is not None:
        rows.extend(_collision_rows([v.position for v in views], collision, n))

    prog = ConvexProgram(
        n_robots=n,
        zeta=gains.zeta,
        gamma=gains.gamma,
        u_max=np.full(n, limits.u_max),
        f_max=np.array([v.water.effective_f_max() for v in views]),
        lin_rows=rows,
        quad_rows=quad_rows,
    )
    t0 = time.perf_counter()
    sol = solve(prog, tol=tol)
    elapsed = time.perf_counter() - t0

    diag = StepDiag(
        status=sol.status,
        solve_time=elapsed,
        fallback=False,
        V=clf.V,
        h_s=saf.h,
        h_e=h_e,
        kkt_residual=sol.kkt_residual,
        iterations=sol.iterations,
    )
    if sol.status in ("optimal", "optimal-loose"):
        diag.active = _active_rows(sol)
        cmds = [
            fixed_cmds[i]
            if refill[i]
            else ControlCommand(u=sol.u[i], f=float(sol.f[i]), slack_used=sol.s)
            for i in range(n)
        ]
        return cmds, diag

    diag.fallback = True
    retreat = pre.h < gains.safety_pad
    return [
        fixed_cmds.get(i, _fallback_command(v, limits, pre.lin_u[i], retreat))
        for i, v in enumerate(views)
    ], diag


def _water_density_field(views: Sequence[RobotView], sigma_s: float) -> ScalarField:
    from .density import water_density

    return water_density([(v.density, v.water.w) for v in views], sigma_s)


def decentralized_step(
    own: RobotView,
    rho_d_local: ScalarField,
    neighbors: Sequence[RobotView],
    unsafe_mask: np.ndarray,
    gains: ControllerGains,
    limits: ControlLimits,
    collision: Optional[CollisionSettings] = None,
    tol: float = 1e-8,
) -> Tuple[ControlCommand, StepDiag]:
    """One robot's solve on its local map and neighbor snapshots.

    The Lyapunov row uses the local target and the local group density, with
    neighbors assumed to hold their last commanded velocity and spray
    nothing. The safety row keeps only this robot's terms on the left and
    reserves a worst-case margin delta for whatever the neighbors could do
    within their velocity bound; diffusion drift of the neighbors is part of
    that margin, not of the drift constant.
    """
    group = [own] + list(neighbors)
    densities = [v.density for v in group]
    waters = [v.water.w for v in group]
    variable = [True] + [False] * len(neighbors)
    fixed_u = np.vstack([np.zeros(2)] + [v.last_u for v in neighbors])

    saf = safety_cbf_eval(
        densities,
        unsafe_mask,
        gains.epsilon,
        limits.motion_diffusion,
        variable=variable,
        fixed_u=np.zeros_like(fixed_u),
        include_drift=variable,
    )

    if _needs_refill(own):
        h_e = np.array([np.nan])
        if own.path is not None:
            h_e[0] = energy_cbf_eval(
                own.energy, own.path, limits.c1, limits.c2, limits.e_min
            ).h_e
        diag = StepDiag(
            status="refill",
            solve_time=0.0,
            fallback=False,
            V=np.nan,
            h_s=saf.h,
            h_e=h_e,
            active=["refill"],
        )
        cmd = _fallback_command(
            own, limits, saf.lin_u[0], saf.h < gains.safety_pad
        )
        return cmd, diag

    clf = clf_eval(
        rho_d_local,
        _water_density_field(group, limits.sigma_s),
        densities,
        waters,
        limits.sigma_s,
        limits.motion_diffusion,
        variable=variable,
        fixed_u=fixed_u,
    )
    rho_group = np.zeros(own.density.field.spec.shape)
    for d in densities:
        rho_group += d.field.values
    delta = worst_case_delta(
        rho_group,
        densities[1:],
        unsafe_mask,
        limits.u_max,
        limits.motion_diffusion,
    )

    rows = [
        LinRow(
            coef_u=clf.lin_u[:1],
            coef_f=clf.lin_f[:1],
            coef_s=-1.0,
            rhs=-gains.alpha_v * clf.V - clf.const,
            name="clf",
        ),
        LinRow(
            coef_u=-saf.lin_u[:1],
            coef_f=None,
            coef_s=0.0,
            rhs=gains.alpha_h * (saf.h - gains.safety_pad) + saf.const - delta,
            name="safety",
        ),
    ]
    quad_rows = []
    h_e = np.array([np.nan])
    if own.path is not None:
        en = energy_cbf_eval(own.energy, own.path, limits.c1, limits.c2, limits.e_min)
        h_e[0] = en.h_e
        quad_rows.append(
            QuadRow(
                block=0,
                quad=en.quad_u,
                lin_u=-en.lin_u,
                rhs=gains.alpha_e * (en.h_e - gains.energy_pad) + en.const,
                name="energy",
            )
        )
    if collision is not None:
        for j, nb in enumerate(neighbors):
            diff = own.position - nb.position
            d = float(np.linalg.norm(diff))
            if d < 1e-9:
                continue
            e = diff / d
            # neighbor motion folded at its last command: e.(u_i - u_j) >= -alpha_c (d - r)
            rows.append(
                LinRow(
                    coef_u=(-e)[None, :],
                    coef_f=None,
                    coef_s=0.0,
                    rhs=collision.alpha_c * (d - collision.r_coll)
                    - float(e @ nb.last_u),
                    name=f"coll-{j}",
                )
            )

    prog = ConvexProgram(
        n_robots=1,
        zeta=gains.zeta,
        gamma=gains.gamma,
        u_max=np.array([limits.u_max]),
        f_max=np.array([own.water.effective_f_max()]),
        lin_rows=rows,
        quad_rows=quad_rows,
    )
    t0 = time.perf_counter()
    sol = solve(prog, tol=tol)
    elapsed = time.perf_counter() - t0

    diag = StepDiag(
        status=sol.status,
        solve_time=elapsed,
        fallback=False,
        V=clf.V,
        h_s=saf.h,
        h_e=h_e,
        delta=delta,
        kkt_residual=sol.kkt_residual,
        iterations=sol.iterations,
    )
    if sol.status in ("optimal", "optimal-loose"):
        diag.active = _active_rows(sol)
        return ControlCommand(u=sol.u[0], f=float(sol.f[0]), slack_used=sol.s), diag

    diag.fallback = True
    retreat = saf.h < gains.safety_pad
    return _fallback_command(own, limits, saf.lin_u[0], retreat), diag


def collision_filter(
    commands: Sequence[ControlCommand],
    positions: Sequence[np.ndarray],
    settings: CollisionSettings,
    u_max: float,
) -> List[ControlCommand]:
    """Minimally adjust a set of velocity commands to respect pairwise
    separation barriers. Flows and slacks pass through untouched. If even
    the filter program is infeasible everyone stops."""
    from .solver import Cone, solve_cone

    n = len(commands)
    if n < 2:
        return list(commands)
    targets = np.vstack([c.u for c in commands])

    nv = 2 * n
    P = 2.0 * np.eye(nv)
    q = -2.0 * targets.ravel()
    rows_G: List[np.ndarray] = []
    rows_h: List[float] = []
    for i in range(n):
        for j in range(i + 1, n):
            diff = np.asarray(positions[i]) - np.asarray(positions[j])
            d = float(np.linalg.norm(diff))
            if d < 1e-9:
                continue
            e = diff / d
            g = np.zeros(nv)
            g[2 * i : 2 * i + 2] = -e
            g[2 * j : 2 * j + 2] = e
            rows_G.append(g)
            rows_h.append(settings.alpha_c * (d - settings.r_coll))
    l = len(rows_G)
    for i in range(n):
        blk = np.zeros((3, nv))
        blk[1, 2 * i] = -1.0
        blk[2, 2 * i + 1] = -1.0
        rows_G.extend(blk)
        rows_h.extend([u_max, 0.0, 0.0])
    G = np.vstack(rows_G)
    h = np.asarray(rows_h)
    res = solve_cone(P, q, G, h, Cone(l, tuple([3] * n)))
    if res.status not in ("optimal", "optimal-loose"):
        return [ControlCommand(np.zeros(2), c.f, c.slack_used) for c in commands]
    out = []
    for i, c in enumerate(commands):
        out.append(ControlCommand(res.x[2 * i : 2 * i + 2], c.f, c.slack_used))
    return out
