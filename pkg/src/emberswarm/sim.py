"""Closed-loop simulation harness: configuration, the tick loop, Monte Carlo
aggregation, and all file outputs.

A tick advances the world through seven phases in a fixed order: measure,
perceive (sense/decay/share/broadcast), decide (controller solves), move,
account (battery/water), burn (fire step under the sprayed suppression), and
maintain (replan charge paths, record metrics). All randomness flows through
one seeded generator in a fixed draw order, so a (config, seed) pair is a
pure function of its outputs.

Defaults reproduce the reference scenario: a 4 m square at 0.1 m resolution,
dt 0.05 s, 50 s horizon, three fires that burn the domain down in roughly
45 s when nobody intervenes, and a charger disk in the lower-left corner
sized so that staying alive requires repeated recharge trips.
"""

from __future__ import annotations

import sys
import time as _time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
from scipy.ndimage import binary_dilation

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .control import (
    CollisionSettings,
    ControlCommand,
    ControllerGains,
    ControlLimits,
    RobotView,
    StepDiag,
    centralized_step,
    decentralized_step,
)
from .density import DensityParams, WaterState, rasterize_density, target_density
from .export import write_csv, write_field_pgm, write_json
from .fire import (
    FireParams,
    FireState,
    RegionThresholds,
    caution_region,
    check_cfl,
    fire_area,
    fire_step,
    ignite,
    suppression_field,
)
from .grid import GridSpec, ScalarField, VectorField
from .knowledge import (
    LocalMap,
    broadcast_unsafe,
    decay,
    neighbor_graph,
    sense,
    share_one_hop,
)
from .planner import (
    ChargePath,
    ChargerRegion,
    make_safety_check,
    path_advance,
    rrt_plan,
)
from .tasks import safety_cbf_eval

__all__ = [
    "FireConfig",
    "RegionConfig",
    "TeamConfig",
    "EnergyConfig",
    "ChargerConfig",
    "ControlConfig",
    "PlannerConfig",
    "SimConfig",
    "load_config",
    "RobotState",
    "World",
    "MetricsRecord",
    "RunResult",
    "MonteCarloResult",
    "init_world",
    "step",
    "run",
    "monte_carlo",
]


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class FireConfig:
    eta: float = 0.006
    a_gain: float = 6.5
    c_cool: float = 0.08
    t_ambient: float = 300.0
    gamma_arr: float = 2.0
    c_fuel: float = 0.05
    peak: float = 4.0
    radius: float = 0.2
    wind: Tuple[float, float] = (0.0, 0.0)
    centers: Tuple[Tuple[float, float], ...] = (
        (-0.3, 0.4),
        (-0.1, 0.0),
        (0.5, -0.4),
    )
    # circular fuel bed: the burn stalls at its rim, keeping every wall
    # flyable; placed away from the charger corner
    fuel_center: Tuple[float, float] = (0.3, 0.3)
    fuel_radius: float = 1.2
    fuel_edge: float = 0.2
    # cooling delivered per unit flow (K/s); a burning cell heats itself at
    # up to ~2 K/s, so one robot at full flow must comfortably exceed that
    spray_gain: float = 8.0


@dataclass
class RegionConfig:
    t_low: float = 300.8
    t_high: float = 302.4
    t_ignite: float = 301.2


@dataclass
class TeamConfig:
    n_robots: int = 4
    u_max: float = 0.5
    sigma_loc: float = 0.2
    motion_diffusion: float = 0.005
    sigma_s: float = 0.4
    f_max: float = 0.5
    detection_radius: float = 1.1
    decay_rate: float = 0.02
    spawn_margin: float = 1.0
    spawn_radius: float = 1.4
    # localization error is time-correlated: an Ornstein-Uhlenbeck walk with
    # stationary std sigma_loc. An iid redraw every 50 ms would teleport the
    # belief density by sigma_loc each tick, which no barrier controller can
    # stabilize and no real positioning system exhibits.
    meas_corr_time: float = 1.0


@dataclass
class EnergyConfig:
    c1: float = 0.02
    c2: float = 0.025
    e_min: float = 0.1
    r_charge: float = 0.25
    r_water: float = 1.0
    init_low: float = 0.7
    init_high: float = 1.0
    # a resupply trip ends only once the tank is full and the battery has at
    # least this much charge, so sorties are long instead of thrashing
    e_depart: float = 0.9


@dataclass
class ChargerConfig:
    center: Tuple[float, float] = (-1.2, -1.2)
    radius: float = 0.5


@dataclass
class ControlConfig:
    mode: str = "decentralized"  # centralized | decentralized | none
    alpha_v: float = 1.0
    alpha_h: float = 6.0
    alpha_e: float = 1.0
    gamma: float = 10.0
    zeta: float = 1.0
    epsilon: float = 1.0
    safety_pad: float = 0.3
    energy_pad: float = 0.05
    mask_lead: float = 2.0  # seconds of heating-rate lookahead in the caution mask
    mask_dilate: int = 2  # extra cell dilation of the caution mask (cushion)
    # the target peak must comfortably exceed one robot's own smoothed water
    # density (~0.45), or flow never pays off in the program's eyes
    target_gain: float = 12.0
    solver_tol: float = 1e-8
    collision_enabled: bool = False
    r_coll: float = 0.7
    alpha_c: float = 2.0


@dataclass
class PlannerConfig:
    step: float = 0.25
    max_nodes: int = 400
    goal_bias: float = 0.15
    replan_every: int = 20
    r_proj: float = 0.3
    predict_horizon: float = 1.0
    # the planner's own barrier pad; smaller than the controller's because a
    # plan only has to be verifiable (h >= 0), not hold against a worst case
    pad: float = 0.1


@dataclass
class SimConfig:
    side: float = 4.0
    h: float = 0.1
    dt: float = 0.05
    horizon: float = 50.0
    seed: int = 0
    out_dir: Optional[str] = None
    snapshot_every: int = 0
    fire: FireConfig = field(default_factory=FireConfig)
    regions: RegionConfig = field(default_factory=RegionConfig)
    team: TeamConfig = field(default_factory=TeamConfig)
    energy: EnergyConfig = field(default_factory=EnergyConfig)
    charger: ChargerConfig = field(default_factory=ChargerConfig)
    control: ControlConfig = field(default_factory=ControlConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)

    def grid(self) -> GridSpec:
        n = int(round(self.side / self.h))
        half = 0.5 * self.side - 0.5 * self.h
        return GridSpec(n, n, self.h, (-half, -half))

    def fire_params(self) -> FireParams:
        wind = None
        if any(abs(w) > 0 for w in self.fire.wind):
            wind = VectorField.constant(self.grid(), self.fire.wind)
        return FireParams(
            eta=self.fire.eta,
            a_gain=self.fire.a_gain,
            c_cool=self.fire.c_cool,
            t_ambient=self.fire.t_ambient,
            gamma_arr=self.fire.gamma_arr,
            c_fuel=self.fire.c_fuel,
            wind=wind,
        )

    def thresholds(self) -> RegionThresholds:
        return RegionThresholds(
            self.regions.t_low, self.regions.t_high, self.regions.t_ignite
        )

    def density_params(self) -> DensityParams:
        return DensityParams(
            sigma_loc=self.team.sigma_loc,
            motion_diffusion=self.team.motion_diffusion,
            u_max=self.team.u_max,
        )

    def charger_region(self) -> ChargerRegion:
        return ChargerRegion(np.asarray(self.charger.center), self.charger.radius)

    def gains(self) -> ControllerGains:
        c = self.control
        return ControllerGains(
            alpha_v=c.alpha_v,
            alpha_h=c.alpha_h,
            alpha_e=c.alpha_e,
            gamma=c.gamma,
            zeta=c.zeta,
            epsilon=c.epsilon,
            safety_pad=c.safety_pad,
            energy_pad=c.energy_pad,
        )

    def limits(self) -> ControlLimits:
        return ControlLimits(
            u_max=self.team.u_max,
            c1=self.energy.c1,
            c2=self.energy.c2,
            e_min=self.energy.e_min,
            sigma_s=self.team.sigma_s,
            motion_diffusion=self.team.motion_diffusion,
        )

    def collision(self) -> Optional[CollisionSettings]:
        if not self.control.collision_enabled:
            return None
        return CollisionSettings(self.control.r_coll, self.control.alpha_c)

    def validate(self):
        if self.team.n_robots < 0:
            raise ValueError("n_robots must be >= 0")
        if self.control.mode not in ("centralized", "decentralized", "none"):
            raise ValueError(f"unknown controller mode {self.control.mode!r}")
        grid = self.grid()
        check_cfl(self.fire_params(), self.h, self.dt)
        for c in self.fire.centers:
            if not grid.contains(c):
                raise ValueError(f"fire center {c} outside the domain")
        self.thresholds().validate(self.fire.t_ambient)
        self.charger_region().validate_inside(grid)
        if self.horizon < 0:
            raise ValueError("horizon must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


_SECTION_TYPES = {
    "fire": FireConfig,
    "regions": RegionConfig,
    "team": TeamConfig,
    "energy": EnergyConfig,
    "charger": ChargerConfig,
    "control": ControlConfig,
    "planner": PlannerConfig,
}

_TOP_KEYS = {"side", "h", "dt", "horizon", "seed", "out_dir", "snapshot_every"}


def load_config(path) -> SimConfig:
    """Read a TOML file; unknown keys are errors so typos do not silently
    fall back to defaults. Every omitted key keeps its default."""
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    cfg = SimConfig()
    top = doc.pop("sim", {})
    for key, val in top.items():
        if key not in _TOP_KEYS:
            raise KeyError(f"unknown key 'sim.{key}'")
        setattr(cfg, key, val)
    for section, payload in doc.items():
        if section not in _SECTION_TYPES:
            raise KeyError(f"unknown config section '{section}'")
        sub = getattr(cfg, section)
        for key, val in payload.items():
            if not hasattr(sub, key):
                raise KeyError(f"unknown key '{section}.{key}'")
            if key in ("centers",):
                val = tuple(tuple(c) for c in val)
            elif key in ("wind", "center") and isinstance(val, list):
                val = tuple(val)
            setattr(sub, key, val)
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# world state
# ---------------------------------------------------------------------------

@dataclass
class RobotState:
    x_true: np.ndarray
    x_meas: np.ndarray
    energy: float
    water: WaterState
    local_map: LocalMap
    meas_err: np.ndarray = field(default_factory=lambda: np.zeros(2))
    path: Optional[ChargePath] = None
    last_u: np.ndarray = field(default_factory=lambda: np.zeros(2))
    last_f: float = 0.0
    charger_visits: int = 0
    inside_charger: bool = False
    ticks_outside: int = 10_000  # large so the first entry always counts
    refilling: bool = False
    # exact energy ledger: energy == e0 - spent + gained + clamp_adjust
    e0: float = 0.0
    spent: float = 0.0
    gained: float = 0.0
    clamp_adjust: float = 0.0


@dataclass
class MetricsRecord:
    t: float
    fire_area: float
    mean_energy: float
    min_energy: float
    min_water: float
    h_s: float
    slack: float
    events: str


@dataclass
class World:
    cfg: SimConfig
    grid: GridSpec
    fire: FireState
    robots: List[RobotState]
    rng: np.random.Generator
    tick: int = 0
    t: float = 0.0
    events: List[str] = field(default_factory=list)
    fire_clamps: dict = field(default_factory=dict)
    timings: List[tuple] = field(default_factory=list)
    commands: List[tuple] = field(default_factory=list)
    snapshots: List[dict] = field(default_factory=list)
    heating: Optional[np.ndarray] = None  # elementwise dT/dt of the last step

    def densities(self, params: DensityParams):
        return [rasterize_density(r.x_meas, params, self.grid) for r in self.robots]

    def caution_mask(
        self, lead: Optional[float] = None, dilate: Optional[int] = None
    ) -> np.ndarray:
        """Burning-or-imminent mask for the control layer.

        The controller default is deliberately fat (heating lookahead plus a
        cell dilation) so hover spots keep a physical cushion against front
        bursts. The planner asks for a thin version: its job is finding
        corridors, and the runtime retreat covers transient encroachment.
        """
        cc = self.cfg.control
        lead = cc.mask_lead if lead is None else lead
        dilate = cc.mask_dilate if dilate is None else dilate
        mask = caution_region(self.fire.T, self.cfg.thresholds(), self.heating, lead)
        if dilate > 0:
            mask = binary_dilation(mask, iterations=dilate)
        return mask


def _spawn_positions(cfg: SimConfig, grid: GridSpec, fire0: FireState, rng) -> List[np.ndarray]:
    """Stage the team uniformly in a disk around the domain center, clear of
    the ignition points, mimicking a launch site next to a young fire."""
    th = cfg.thresholds()
    xmin, xmax, ymin, ymax = grid.bounds
    cx = np.array([0.5 * (xmin + xmax), 0.5 * (ymin + ymax)])
    out = []
    for _ in range(cfg.team.n_robots):
        for _attempt in range(1000):
            r = cfg.team.spawn_radius * np.sqrt(rng.uniform())
            phi = rng.uniform(0.0, 2.0 * np.pi)
            p = grid.clip_point(cx + r * np.array([np.cos(phi), np.sin(phi)]))
            near_fire = any(
                np.linalg.norm(p - np.asarray(c)) < cfg.team.spawn_margin
                for c in cfg.fire.centers
            )
            ix, iy = grid.world_to_index(p)
            if not near_fire and fire0.T.values[ix, iy] < th.t_low:
                out.append(p)
                break
        else:
            raise RuntimeError("could not place a robot outside the fire region")
    return out


def init_world(cfg: SimConfig, seed: Optional[int] = None) -> World:
    cfg.validate()
    grid = cfg.grid()
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    fire0 = ignite(
        grid,
        cfg.fire.t_ambient,
        cfg.fire.centers,
        cfg.fire.peak,
        cfg.fire.radius,
        fuel_center=cfg.fire.fuel_center,
        fuel_radius=cfg.fire.fuel_radius,
        fuel_edge=cfg.fire.fuel_edge,
    )
    positions = _spawn_positions(cfg, grid, fire0, rng)
    robots = []
    for p in positions:
        e = float(rng.uniform(cfg.energy.init_low, cfg.energy.init_high))
        err = rng.normal(0.0, cfg.team.sigma_loc, 2)
        robots.append(
            RobotState(
                x_true=p.copy(),
                x_meas=grid.clip_point(p + err),
                energy=e,
                water=WaterState(w=1.0, f_max=cfg.team.f_max),
                local_map=LocalMap.ambient(grid, cfg.fire.t_ambient),
                meas_err=err,
                e0=e,
                inside_charger=cfg.charger_region().contains(p),
            )
        )
    world = World(cfg=cfg, grid=grid, fire=fire0, robots=robots, rng=rng)
    # initial charge paths so the first controller tick has energy rows
    _replan_all(world, force=True)
    return world


# ---------------------------------------------------------------------------
# tick phases
# ---------------------------------------------------------------------------

def _controller_phase(world: World, densities, unsafe_mask) -> Tuple[List[ControlCommand], List[str]]:
    cfg = world.cfg
    mode = cfg.control.mode
    robots = world.robots
    events = []
    if mode == "none" or not robots:
        return [ControlCommand(np.zeros(2), 0.0, 0.0) for _ in robots], events

    gains, limits = cfg.gains(), cfg.limits()
    collision = cfg.collision()
    th = cfg.thresholds()
    kd = cfg.control.target_gain

    views = [
        RobotView(
            density=densities[i],
            water=r.water,
            energy=r.energy,
            path=r.path,
            last_u=r.last_u,
            returning=r.refilling,
        )
        for i, r in enumerate(robots)
    ]

    if mode == "centralized":
        rho_d = target_density(world.fire.T, th, kd)
        cmds, diag = centralized_step(
            views, rho_d, unsafe_mask, gains, limits, collision, cfg.control.solver_tol
        )
        world.timings.append((world.tick, -1, diag.solve_time, diag.status, diag.iterations))
        if diag.fallback:
            events.append("fallback:team")
        elif diag.status == "optimal-loose":
            events.append("loose:team")
        for i, c in enumerate(cmds):
            world.commands.append(
                (world.tick, i, c.u[0], c.u[1], c.f, c.slack_used,
                 "|".join(diag.active), diag.solve_time)
            )
        return cmds, events

    graph = neighbor_graph([r.x_true for r in robots], cfg.team.detection_radius)
    cmds = []
    for i, r in enumerate(robots):
        rho_d_i = target_density(r.local_map.t_est, th, kd)
        nbrs = [views[j] for j in graph.neighbors(i)]
        cmd, diag = decentralized_step(
            views[i], rho_d_i, nbrs, unsafe_mask, gains, limits, collision,
            cfg.control.solver_tol,
        )
        world.timings.append((world.tick, i, diag.solve_time, diag.status, diag.iterations))
        if diag.fallback:
            events.append(f"fallback:{i}")
        elif diag.status == "optimal-loose":
            events.append(f"loose:{i}")
        world.commands.append(
            (world.tick, i, cmd.u[0], cmd.u[1], cmd.f, cmd.slack_used,
             "|".join(diag.active), diag.solve_time)
        )
        cmds.append(cmd)
    return cmds, events


def _path_hits_unsafe(path: ChargePath, swollen_mask: np.ndarray, grid: GridSpec) -> bool:
    """True if any waypoint sits in the given mask. Callers pass a dilated
    caution mask so routes are abandoned while the front is still a couple of
    cells away, not once it is already underfoot."""
    for wp in path.waypoints:
        ix, iy = grid.world_to_index(grid.clip_point(wp))
        if swollen_mask[ix, iy]:
            return True
    return False


def _replan_all(world: World, force: bool = False, unsafe_mask=None, densities=None):
    """Replan charge paths where needed; failures keep the previous path."""
    cfg = world.cfg
    if not world.robots:
        return
    params = cfg.density_params()
    if unsafe_mask is None:
        # thin mask: no lookahead, single-cell cushion. The planner needs
        # corridors to exist; the controller's fat mask plus the retreat
        # fallback absorb front motion while a path is being ridden.
        unsafe_mask = world.caution_mask(lead=0.0, dilate=1)
    if densities is None:
        densities = world.densities(params)
    charger = cfg.charger_region()
    pc = cfg.planner
    local = cfg.control.mode == "decentralized"
    swollen = binary_dilation(unsafe_mask, iterations=1)
    graph = None
    if local:
        graph = neighbor_graph([r.x_true for r in world.robots], cfg.team.detection_radius)

    for i, r in enumerate(world.robots):
        due = (
            force
            or r.path is None
            or r.path.stale
            or (world.tick % pc.replan_every) == (i % pc.replan_every)
            or _path_hits_unsafe(r.path, swollen, world.grid)
        )
        if not due:
            continue
        if local and graph is not None:
            nbr_ids = graph.neighbors(i)
            others = [densities[j] for j in nbr_ids]
            others_u = np.array([world.robots[j].last_u for j in nbr_ids]).reshape(-1, 2)
        else:
            others = [densities[j] for j in range(len(world.robots)) if j != i]
            others_u = np.zeros((len(others), 2))
        check = make_safety_check(
            world.grid,
            params,
            unsafe_mask,
            cfg.control.epsilon,
            cfg.control.alpha_h,
            others=others,
            others_u=others_u,
            local=local,
            horizon=pc.predict_horizon,
            pad=pc.pad,
        )
        path = rrt_plan(
            r.x_meas,
            charger,
            check,
            world.rng,
            world.grid,
            u_plan=cfg.team.u_max,
            c1=cfg.energy.c1,
            c2=cfg.energy.c2,
            step=pc.step,
            max_nodes=pc.max_nodes,
            goal_bias=pc.goal_bias,
        )
        if path is None:
            world.events.append(f"t{world.tick} plan-fail:{i}")
        else:
            r.path = path


def step(world: World) -> List[str]:
    """Advance one tick; returns the tick's event strings."""
    cfg = world.cfg
    params = cfg.density_params()
    th = cfg.thresholds()
    charger = cfg.charger_region()
    events = []

    # (1) localization measurement: correlated error walk, stationary
    # std sigma_loc
    a = np.exp(-cfg.dt / cfg.team.meas_corr_time) if cfg.team.meas_corr_time > 0 else 0.0
    innov = cfg.team.sigma_loc * np.sqrt(max(1.0 - a * a, 0.0))
    for r in world.robots:
        r.meas_err = a * r.meas_err + world.rng.normal(0.0, innov, 2)
        r.x_meas = world.grid.clip_point(r.x_true + r.meas_err)

    # (2) perception: decay, sense at the true position, one-hop share,
    # global unsafe broadcast, density rasterization at the measured position
    if world.robots:
        maps = [
            sense(
                decay(r.local_map, cfg.dt, cfg.team.decay_rate),
                world.fire.T,
                r.x_true,
                cfg.team.detection_radius,
            )
            for r in world.robots
        ]
        graph = neighbor_graph([r.x_true for r in world.robots], cfg.team.detection_radius)
        maps = share_one_hop(maps, graph)
        for r, m in zip(world.robots, maps):
            r.local_map = m
    # the controllers and planner act on the wider burning-cell mask so the
    # no-fly barrier keeps a margin against front growth between ticks
    caution_mask = world.caution_mask()
    densities = world.densities(params)

    # (3) controller (paths freshened to the new position estimate first)
    for r in world.robots:
        if r.path is not None:
            r.path = path_advance(r.path, r.x_meas, cfg.planner.r_proj)
    cmds, ctrl_events = _controller_phase(world, densities, caution_mask)
    events.extend(ctrl_events)

    # (4) true motion: commanded velocity plus diffusion noise
    sig = np.sqrt(2.0 * cfg.team.motion_diffusion * cfg.dt)
    for r, c in zip(world.robots, cmds):
        r.x_true = world.grid.clip_point(
            r.x_true + c.u * cfg.dt + world.rng.normal(0.0, sig, 2)
        )

    # (5) battery and water bookkeeping with exact clamp accounting
    for r, c in zip(world.robots, cmds):
        inside = charger.contains(r.x_true)
        drain = (cfg.energy.c1 * float(c.u @ c.u) + cfg.energy.c2) * cfg.dt
        gain = cfg.energy.r_charge * cfg.dt if inside else 0.0
        raw = r.energy - drain + gain
        clamped = min(max(raw, 0.0), 1.0)
        r.spent += drain
        r.gained += gain
        r.clamp_adjust += clamped - raw
        r.energy = clamped
        r.water.drain(c.f, cfg.dt, cfg.energy.r_water if inside else 0.0)
        # resupply trip state: committed once dry, released once topped up
        if r.water.w <= 1e-12:
            r.refilling = True
        elif r.refilling and r.water.w >= 1.0 - 1e-9 and r.energy >= cfg.energy.e_depart:
            r.refilling = False
        # a visit = an entry after at least a second away, so boundary
        # jitter does not inflate the count
        if inside and not r.inside_charger and r.ticks_outside >= 20:
            r.charger_visits += 1
        r.ticks_outside = 0 if inside else r.ticks_outside + 1
        r.inside_charger = inside
        r.last_u = c.u.copy()
        r.last_f = c.f

    # (6) fire under the sprayed suppression field
    u_s = None
    sprayers = [(r.x_meas, c.f) for r, c in zip(world.robots, cmds) if c.f > 0.0]
    if sprayers:
        u_s = suppression_field(
            sprayers, cfg.team.sigma_s, world.grid, cfg.fire.spray_gain
        )
    prev_T = world.fire.T.values
    world.fire = fire_step(world.fire, cfg.fire_params(), u_s, cfg.dt, world.fire_clamps)
    world.heating = (world.fire.T.values - prev_T) / cfg.dt

    # (7) path maintenance
    world.tick += 1
    world.t = world.tick * cfg.dt
    _replan_all(world)

    for e in events:
        world.events.append(f"t{world.tick - 1} {e}")
    return events


def _metrics(world: World, slack: float, events: List[str]) -> MetricsRecord:
    """One tick's record. h_s is the barrier the active mode enforces: the
    team integral for centralized control, the minimum per-robot group
    barrier for decentralized (each robot guarantees only its own)."""
    cfg = world.cfg
    th = cfg.thresholds()
    unsafe_mask = broadcast_unsafe(world.fire.T, th)
    if world.robots:
        densities = world.densities(cfg.density_params())
        if cfg.control.mode == "decentralized":
            graph = neighbor_graph(
                [r.x_true for r in world.robots], cfg.team.detection_radius
            )
            h_s = min(
                safety_cbf_eval(
                    [densities[i]] + [densities[j] for j in graph.neighbors(i)],
                    unsafe_mask,
                    cfg.control.epsilon,
                    cfg.team.motion_diffusion,
                ).h
                for i in range(len(world.robots))
            )
        else:
            h_s = safety_cbf_eval(
                densities, unsafe_mask, cfg.control.epsilon, cfg.team.motion_diffusion
            ).h
        energies = np.array([r.energy for r in world.robots])
        waters = np.array([r.water.w for r in world.robots])
        mean_e, min_e, min_w = float(energies.mean()), float(energies.min()), float(waters.min())
    else:
        h_s = cfg.control.epsilon
        mean_e = min_e = min_w = np.nan
    return MetricsRecord(
        t=world.t,
        fire_area=fire_area(world.fire.T, th),
        mean_energy=mean_e,
        min_energy=min_e,
        min_water=min_w,
        h_s=h_s,
        slack=slack,
        events=";".join(events),
    )


# ---------------------------------------------------------------------------
# runs
# ---------------------------------------------------------------------------

@dataclass
class RunResult:
    records: List[MetricsRecord]
    world: World
    failed: bool
    fail_reason: str
    charger_visits: List[int]
    extinction_time: Optional[float]
    peak_area: float
    area_integral: float
    wall_time: float

    def metric_array(self, name: str) -> np.ndarray:
        return np.array([getattr(rec, name) for rec in self.records])


def run(cfg: SimConfig, seed: Optional[int] = None) -> RunResult:
    cfg.validate()
    t_start = _time.perf_counter()
    world = init_world(cfg, seed)
    n_ticks = int(round(cfg.horizon / cfg.dt))
    records = [_metrics(world, 0.0, [])]
    failed = False
    reason = ""

    for _ in range(n_ticks):
        try:
            events = step(world)
        except Exception:
            if cfg.out_dir is not None:
                _post_mortem(world, Path(cfg.out_dir))
            raise
        slack = _last_slack(world)
        rec = _metrics(world, slack, events)
        records.append(rec)
        if not failed and world.robots:
            if rec.h_s < 0.0:
                failed, reason = True, f"h_s {rec.h_s:.4f} < 0 at t={rec.t:.2f}"
            elif rec.min_energy < cfg.energy.e_min:
                failed, reason = True, (
                    f"battery {rec.min_energy:.4f} < e_min at t={rec.t:.2f}"
                )
        if cfg.out_dir and cfg.snapshot_every > 0 and world.tick % cfg.snapshot_every == 0:
            _write_snapshot(world, Path(cfg.out_dir))

    for r in world.robots:
        drift = abs(r.energy - (r.e0 - r.spent + r.gained + r.clamp_adjust))
        if drift > 1e-9:
            raise AssertionError(f"energy ledger drift {drift:.2e}")

    areas = np.array([rec.fire_area for rec in records])
    ext = None
    nz = np.nonzero(areas > 0.0)[0]
    if len(nz) == 0:
        ext = 0.0
    elif nz[-1] + 1 < len(areas):
        ext = float(records[nz[-1] + 1].t)
    result = RunResult(
        records=records,
        world=world,
        failed=failed,
        fail_reason=reason,
        charger_visits=[r.charger_visits for r in world.robots],
        extinction_time=ext,
        peak_area=float(areas.max()),
        area_integral=float(areas.sum() * cfg.dt),
        wall_time=_time.perf_counter() - t_start,
    )
    if cfg.out_dir is not None:
        _write_outputs(result, Path(cfg.out_dir))
    return result


def _last_slack(world: World) -> float:
    tick = world.tick - 1
    vals = [row[5] for row in world.commands if row[0] == tick]
    return max(vals) if vals else 0.0


METRICS_HEADER = [
    "t",
    "fire_area",
    "mean_energy",
    "min_energy",
    "min_water",
    "h_s",
    "slack",
    "events",
]


def _write_outputs(result: RunResult, out: Path):
    world = result.world
    cfg = world.cfg
    out.mkdir(parents=True, exist_ok=True)
    write_csv(
        out / "metrics.csv",
        METRICS_HEADER,
        [
            (
                rec.t,
                rec.fire_area,
                rec.mean_energy,
                rec.min_energy,
                rec.min_water,
                rec.h_s,
                rec.slack,
                rec.events,
            )
            for rec in result.records
        ],
    )
    write_csv(
        out / "timings.csv",
        ["tick", "robot", "solve_time", "status", "iterations"],
        world.timings,
    )
    write_csv(
        out / "commands.csv",
        ["tick", "robot", "ux", "uy", "f", "slack", "active", "solve_time"],
        world.commands,
    )
    solve_times = [row[2] for row in world.timings]
    write_json(
        out / "summary.json",
        {
            "config": cfg.to_dict(),
            "failed": result.failed,
            "fail_reason": result.fail_reason,
            "peak_fire_area": result.peak_area,
            "fire_area_integral": result.area_integral,
            "extinction_time": result.extinction_time,
            "min_h_s": float(min(rec.h_s for rec in result.records)),
            "min_energy": float(
                min(
                    (rec.min_energy for rec in result.records if not np.isnan(rec.min_energy)),
                    default=np.nan,
                )
            ),
            "charger_visits": result.charger_visits,
            "events": world.events,
            "wall_time_s": result.wall_time,
            "mean_solve_time_s": float(np.mean(solve_times)) if solve_times else None,
            "max_solve_time_s": float(np.max(solve_times)) if solve_times else None,
            "temperature_clamped_cells": world.fire_clamps,
        },
    )
    paths_doc = {
        "final": [
            {
                "robot": i,
                "waypoints": r.path.waypoints.tolist() if r.path else None,
                "energy_to_go": r.path.energy if r.path else None,
            }
            for i, r in enumerate(world.robots)
        ],
        "snapshots": world.snapshots,
    }
    write_json(out / "paths.json", paths_doc)


def _write_snapshot(world: World, out: Path):
    cfg = world.cfg
    tag = f"t{world.tick:05d}"
    lo = cfg.fire.t_ambient
    hi = cfg.fire.t_ambient + 2.0 * cfg.fire.peak
    write_field_pgm(out / "fields" / f"{tag}_T.pgm", world.fire.T, lo, hi)
    write_field_pgm(out / "fields" / f"{tag}_S.pgm", world.fire.S, 0.0, 1.0)
    if world.robots:
        params = cfg.density_params()
        dens = world.densities(params)
        total = np.zeros(world.grid.shape)
        for d in dens:
            total += d.field.values
        write_field_pgm(
            out / "fields" / f"{tag}_rho.pgm",
            ScalarField(world.grid, total),
            0.0,
            float(total.max()) or 1.0,
        )
        rho_d = target_density(world.fire.T, cfg.thresholds(), cfg.control.target_gain)
        write_field_pgm(
            out / "fields" / f"{tag}_rho_d.pgm", rho_d, 0.0, cfg.control.target_gain
        )
    world.snapshots.append(
        {
            "tick": world.tick,
            "paths": [
                {"robot": i, "waypoints": r.path.waypoints.tolist() if r.path else None}
                for i, r in enumerate(world.robots)
            ],
        }
    )


def _post_mortem(world: World, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    write_json(
        out / "post_mortem.json",
        {
            "tick": world.tick,
            "t": world.t,
            "robots": [
                {
                    "x_true": r.x_true.tolist(),
                    "x_meas": r.x_meas.tolist(),
                    "energy": r.energy,
                    "water": r.water.w,
                    "visits": r.charger_visits,
                }
                for r in world.robots
            ],
            "events": world.events,
        },
    )


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------

@dataclass
class MonteCarloResult:
    runs: List[RunResult]
    t: np.ndarray
    envelopes: dict  # metric -> {"mean": ..., "min": ..., "max": ...}
    n_failed: int

    def scalar(self, fn) -> np.ndarray:
        return np.array([fn(r) for r in self.runs])


_MC_METRICS = ("fire_area", "mean_energy", "min_energy", "min_water", "h_s", "slack")


def monte_carlo(cfg: SimConfig, runs: int, out_dir: Optional[str] = None) -> MonteCarloResult:
    """Seeded batch: run k uses seed cfg.seed + k. Per-tick envelopes
    (mean/min/max over runs) are collected for every numeric metric."""
    if runs < 1:
        raise ValueError("need at least one run")
    results = []
    for k in range(runs):
        sub = replace(cfg, out_dir=None)
        results.append(run(sub, seed=cfg.seed + k))
    t = results[0].metric_array("t")
    env = {}
    for name in _MC_METRICS:
        stack = np.vstack([r.metric_array(name) for r in results])
        env[name] = {
            "mean": stack.mean(axis=0),
            "min": stack.min(axis=0),
            "max": stack.max(axis=0),
        }
    mc = MonteCarloResult(
        runs=results,
        t=t,
        envelopes=env,
        n_failed=sum(1 for r in results if r.failed),
    )
    if out_dir is not None:
        out = Path(out_dir)
        header = ["t"]
        cols = [t]
        for name in _MC_METRICS:
            for stat in ("mean", "min", "max"):
                header.append(f"{name}_{stat}")
                cols.append(env[name][stat])
        write_csv(out / "envelopes.csv", header, zip(*cols))
        write_json(
            out / "montecarlo.json",
            {
                "runs": runs,
                "base_seed": cfg.seed,
                "n_failed": mc.n_failed,
                "peak_fire_area": [r.peak_area for r in results],
                "fire_area_integral": [r.area_integral for r in results],
                "extinction_time": [r.extinction_time for r in results],
                "charger_visits": [r.charger_visits for r in results],
                "min_h_s": [float(min(rec.h_s for rec in r.records)) for r in results],
                "wall_time_s": [r.wall_time for r in results],
            },
        )
    return mc
