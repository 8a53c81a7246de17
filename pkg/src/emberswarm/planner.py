"""Safe-path planning to the charger region.

A robot that needs to recharge cannot fly straight through hot cells, so the
route is planned against the same density barrier the controller enforces:
each candidate step is admitted only if the barrier condition would hold for
a virtual copy of the robot's belief density placed at that node. Planning is
randomized (RRT with goal bias), but every caller passes an explicit seeded
generator, so plans are reproducible.

The returned path carries its energy-to-go: the battery fraction needed to
ride the path to the charger at the planning speed. The energy barrier in the
controller consumes that number and the path's initial direction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .density import DensityParams, RobotDensity, rasterize_density
from .grid import GridSpec
from .tasks import safety_cbf_eval

__all__ = [
    "ChargerRegion",
    "ChargePath",
    "energy_rate",
    "path_energy",
    "rrt_plan",
    "path_advance",
    "make_safety_check",
]

SafetyCheck = Callable[[np.ndarray, np.ndarray, float], bool]


@dataclass(frozen=True)
class ChargerRegion:
    """Disk where batteries and tanks refill."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if self.radius <= 0:
            raise ValueError("charger radius must be positive")

    def contains(self, x) -> bool:
        return bool(np.linalg.norm(np.asarray(x, dtype=float) - self.center) <= self.radius)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        r = self.radius * math.sqrt(rng.uniform())
        th = rng.uniform(0.0, 2.0 * math.pi)
        return self.center + r * np.array([math.cos(th), math.sin(th)])

    def validate_inside(self, grid: GridSpec):
        x0, x1, y0, y1 = grid.bounds
        c = self.center
        if not (
            x0 <= c[0] - self.radius
            and c[0] + self.radius <= x1
            and y0 <= c[1] - self.radius
            and c[1] + self.radius <= y1
        ):
            raise ValueError("charger region sticks out of the domain")


@dataclass
class ChargePath:
    """Waypoint route ending inside the charger.

    energy is the battery fraction consumed by traversing the remaining
    length at u_plan. stale marks a path the owner has strayed from; the
    harness replans when it sees the flag.
    """

    waypoints: np.ndarray  # (k, 2), k >= 1
    energy: float
    u_plan: float
    e_rate: float
    stale: bool = False

    def __post_init__(self):
        self.waypoints = np.atleast_2d(np.asarray(self.waypoints, dtype=float))

    def length(self) -> float:
        if len(self.waypoints) < 2:
            return 0.0
        return float(np.linalg.norm(np.diff(self.waypoints, axis=0), axis=1).sum())

    def first_direction(self) -> Optional[np.ndarray]:
        for k in range(1, len(self.waypoints)):
            seg = self.waypoints[k] - self.waypoints[0]
            n = np.linalg.norm(seg)
            if n > 1e-12:
                return seg / n
        return None

    def goal(self) -> np.ndarray:
        return self.waypoints[-1]


def energy_rate(c1: float, c2: float, u_plan: float) -> float:
    """Battery drain per meter traveled at constant speed u_plan."""
    if u_plan <= 0:
        raise ValueError("planning speed must be positive")
    return (c1 * u_plan**2 + c2) / u_plan

def path_energy(path, c1: float, c2: float, u_plan: float) -> float:
    """Energy to traverse a waypoint sequence at u_plan: drain rate
    (c1 u^2 + c2) held for length/u seconds."""
    wps = path.waypoints if isinstance(path, ChargePath) else np.atleast_2d(path)
    if len(wps) < 2:
        return 0.0
    length = float(np.linalg.norm(np.diff(wps, axis=0), axis=1).sum())
    return energy_rate(c1, c2, u_plan) * length


def _subdivide(a: np.ndarray, b: np.ndarray, step: float) -> np.ndarray:
    """Points along [a, b] spaced at most step apart, excluding a."""
    d = float(np.linalg.norm(b - a))
    if d < 1e-12:
        return np.empty((0, 2))
    k = max(1, int(math.ceil(d / step)))
    ts = np.arange(1, k + 1) / k
    return a + ts[:, None] * (b - a)


def _segment_ok(
    a: np.ndarray,
    b: np.ndarray,
    t0: float,
    u_plan: float,
    step: float,
    check: Optional[SafetyCheck],
) -> bool:
    if check is None:
        return True
    d = float(np.linalg.norm(b - a))
    if d < 1e-12:
        return True
    u = u_plan * (b - a) / d
    t = t0
    prev = a
    for p in _subdivide(a, b, step):
        t += float(np.linalg.norm(p - prev)) / u_plan
        if not check(p, u, t):
            return False
        prev = p
    return True


def rrt_plan(
    x: np.ndarray,
    charger: ChargerRegion,
    check: Optional[SafetyCheck],
    rng: np.random.Generator,
    grid: GridSpec,
    u_plan: float,
    c1: float,
    c2: float,
    step: float = 0.25,
    max_nodes: int = 2000,
    goal_bias: float = 0.15,
    scales: Sequence[float] = (1.0, 0.5, 0.25),
) -> Optional[ChargePath]:
    """Grow a tree from x until it reaches the charger; None on failure.

    Extensions steer toward the sample for one step; if the barrier check
    rejects the arrival state, the step length is scaled down through
    ``scales`` before the extension is abandoned. Every check runs at the
    full ride speed u_plan, never at a reduced one: the path is ridden at
    u_plan, so admitting a node only a slower robot could visit would plant
    waypoints the final verification (and the vehicle) must reject. A
    straight shot to the charger is tried first, which resolves the common
    case without touching the tree. The final path is shortcut-smoothed and
    re-verified waypoint by waypoint under the same check; if smoothing
    broke it, the raw tree path is used instead.
    """
    x = np.asarray(x, dtype=float)
    rate = energy_rate(c1, c2, u_plan)
    if charger.contains(x):
        return ChargePath(x[None, :], 0.0, u_plan, rate)

    to_center = charger.center - x
    dist_c = float(np.linalg.norm(to_center))
    entry = charger.center - to_center / dist_c * (0.5 * charger.radius)
    if _segment_ok(x, entry, 0.0, u_plan, step, check):
        return _finish(np.vstack([x, _subdivide(x, entry, step)]), u_plan, rate)

    x0, x1, y0, y1 = grid.bounds
    nodes = np.empty((max_nodes, 2))
    parents = np.empty(max_nodes, dtype=np.int64)
    times = np.empty(max_nodes)
    nodes[0], parents[0], times[0] = x, -1, 0.0
    n = 1

    budget = 8 * max_nodes  # sampling attempts, so a fully blocked start cannot spin forever
    while n < max_nodes and budget > 0:
        budget -= 1
        if rng.uniform() < goal_bias:
            target = charger.sample(rng)
        else:
            target = np.array([rng.uniform(x0, x1), rng.uniform(y0, y1)])
        d2 = ((nodes[:n] - target) ** 2).sum(axis=1)
        near = int(np.argmin(d2))
        gap = math.sqrt(float(d2[near]))
        if gap < 1e-9:
            continue
        direction = (target - nodes[near]) / gap
        base = min(step, gap)
        for sc in scales:
            cand = nodes[near] + direction * base * sc
            if not (x0 <= cand[0] <= x1 and y0 <= cand[1] <= y1):
                continue
            t_cand = times[near] + base * sc / u_plan
            if check is None or check(cand, u_plan * direction, t_cand):
                nodes[n], parents[n], times[n] = cand, near, t_cand
                n += 1
                if charger.contains(cand):
                    idx = []
                    k = n - 1
                    while k >= 0:
                        idx.append(k)
                        k = parents[k]
                    raw = nodes[idx[::-1]]
                    sm = _shortcut(raw, u_plan, step, check)
                    if not _segment_chain_ok(sm, u_plan, step, check):
                        sm = raw
                        if not _segment_chain_ok(sm, u_plan, step, check):
                            return None
                    return _finish(sm, u_plan, rate)
                break
    return None


def _shortcut(
    wps: np.ndarray, u_plan: float, step: float, check: Optional[SafetyCheck]
) -> np.ndarray:
    """Greedy farthest-first shortcutting, re-densified to the step length."""
    out = [wps[0]]
    t = 0.0
    i = 0
    while i < len(wps) - 1:
        j = len(wps) - 1
        while j > i + 1 and not _segment_ok(wps[i], wps[j], t, u_plan, step, check):
            j -= 1
        pts = _subdivide(wps[i], wps[j], step)
        out.extend(pts)
        t += float(np.linalg.norm(wps[j] - wps[i])) / u_plan
        i = j
    return np.asarray(out)


def _segment_chain_ok(
    wps: np.ndarray, u_plan: float, step: float, check: Optional[SafetyCheck]
) -> bool:
    t = 0.0
    for k in range(len(wps) - 1):
        if not _segment_ok(wps[k], wps[k + 1], t, u_plan, step, check):
            return False
        t += float(np.linalg.norm(wps[k + 1] - wps[k])) / u_plan
    return True


def _finish(wps: np.ndarray, u_plan: float, rate: float) -> ChargePath:
    length = float(np.linalg.norm(np.diff(wps, axis=0), axis=1).sum()) if len(wps) > 1 else 0.0
    return ChargePath(wps, rate * length, u_plan, rate)


def path_advance(path: ChargePath, x_new, r_proj: float = 0.3) -> ChargePath:
    """Project the robot onto its path and drop what it has already covered.

    The remaining energy is recomputed from the projection point. If the
    robot has drifted more than r_proj off the polyline the returned path is
    marked stale and should be replanned.
    """
    x = np.asarray(x_new, dtype=float)
    wps = path.waypoints
    if len(wps) == 1:
        off = float(np.linalg.norm(x - wps[0]))
        return ChargePath(wps.copy(), path.energy, path.u_plan, path.e_rate,
                          stale=off > r_proj)

    best = (np.inf, 0, wps[0])
    for k in range(len(wps) - 1):
        a, b = wps[k], wps[k + 1]
        ab = b - a
        denom = float(ab @ ab)
        t = 0.0 if denom < 1e-18 else float(np.clip((x - a) @ ab / denom, 0.0, 1.0))
        p = a + t * ab
        d = float(np.linalg.norm(x - p))
        if d < best[0] - 1e-12:
            best = (d, k, p)
    off, k, proj = best
    tail = wps[k + 1 :]
    if float(np.linalg.norm(tail[0] - proj)) < 1e-12:
        new_wps = tail
    else:
        new_wps = np.vstack([proj, tail])
    length = float(np.linalg.norm(np.diff(new_wps, axis=0), axis=1).sum()) if len(new_wps) > 1 else 0.0
    return ChargePath(new_wps, path.e_rate * length, path.u_plan, path.e_rate,
                      stale=off > r_proj)


def make_safety_check(
    grid: GridSpec,
    params: DensityParams,
    unsafe_mask: np.ndarray,
    epsilon: float,
    alpha_s: float,
    others: Sequence[RobotDensity] = (),
    others_u: Optional[np.ndarray] = None,
    local: bool = False,
    horizon: float = 1.0,
    pad: float = 0.0,
) -> SafetyCheck:
    """Build the barrier check the planner runs at every candidate node.

    The robot's own belief mass is modeled as a fresh Gaussian recentered at
    the node. With ``local=False`` the other robots sit still at their
    current centers (their diffusion drift still counts). With ``local=True``
    neighbors are predicted to move at their last commanded velocity for
    ``horizon`` seconds of plan time and to hover afterwards; the prediction
    covers both where they will be (advected centers) and their share of the
    barrier rate at that instant. The norm-maximized neighbor margin stays in
    the runtime controller, which owns the formal guarantee; stacking it here
    on top of the explicit prediction would double-count neighbor motion and
    starve the planner of corridors.

    Neighbors engaged right at the hot zone can claim the entire overlap
    budget by themselves, which would fail the check at every cell of the
    domain and make planning impossible even though the robot's own mass is
    nowhere near trouble. Their claim is therefore capped: the robot always
    keeps at least a quarter of epsilon for its own (and cross) overlap.
    While the neighbors stay under their cap the check equals the true group
    barrier; beyond it the check degrades to "add no more than the reserve",
    and the runtime controller remains the authority on the full group value.

    A tree search hammers this closure, so evaluations snap to the grid cell
    under the queried position (and, in local mode, to a coarse plan-time
    bucket) and the affine barrier coefficients are cached per key. The snap
    moves the virtual Gaussian by at most half a cell; ``pad`` should cover
    that.
    """
    others = list(others)
    if others_u is None:
        others_u = np.zeros((len(others), 2))
    others_u = np.asarray(others_u, dtype=float)

    n_buckets = 4
    bucket_w = horizon / n_buckets if horizon > 0 else 1.0
    reserve = 0.25 * epsilon
    cell_area = grid.h**2
    coef_cache: dict = {}
    adv_cache: dict = {}

    def _overlap(densities) -> float:
        if not densities:
            return 0.0
        rho = np.zeros(grid.shape)
        for d in densities:
            rho += d.field.values
        return float((np.where(unsafe_mask, rho, 0.0) * rho).sum()) * cell_area

    def _advected(bucket: int):
        if bucket not in adv_cache:
            dt_adv = min(bucket * bucket_w, horizon)
            adv = [
                rasterize_density(grid.clip_point(d.center + uj * dt_adv), params, grid)
                for d, uj in zip(others, others_u)
            ]
            adv_cache[bucket] = (adv, _overlap(adv))
        return adv_cache[bucket]

    def _coeffs(key):
        cell, bucket = key
        pos = grid.index_to_world(*cell)
        virt = rasterize_density(pos, params, grid)
        if not local:
            nbrs, taken = others, _overlap(others)
            fixed = np.vstack([np.zeros(2), others_u]) if others else None
        else:
            nbrs, taken = _advected(bucket)
            still_moving = bucket * bucket_w < horizon
            fixed = np.vstack(
                [np.zeros(2), others_u if still_moving else np.zeros_like(others_u)]
            )
        ev = safety_cbf_eval(
            [virt] + nbrs,
            unsafe_mask,
            epsilon,
            params.motion_diffusion,
            variable=[True] + [False] * len(nbrs),
            fixed_u=fixed,
        )
        # own-plus-cross overlap = total minus the neighbors' own share;
        # neighbors may claim at most epsilon - reserve of the budget
        own = (epsilon - ev.h) - taken
        h_plan = max(epsilon - taken, reserve) - own
        return alpha_s * (h_plan - pad) + ev.const, ev.lin_u[0].copy()

    def check(pos: np.ndarray, u: np.ndarray, t: float) -> bool:
        cell = grid.world_to_index(grid.clip_point(pos))
        bucket = min(int(min(t, horizon) / bucket_w), n_buckets) if local else 0
        key = (cell, bucket)
        if key not in coef_cache:
            coef_cache[key] = _coeffs(key)
        const, lin = coef_cache[key]
        return const + float(lin @ u) >= 0.0

    return check
