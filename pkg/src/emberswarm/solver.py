"""Dense conic solver for the per-step control programs.

The controllers produce tiny convex programs (at most a few dozen variables):
quadratic objective, linear rows from the Lyapunov/safety constraints, one
convex quadratic row per energy barrier, box bounds on flows and slack, and a
Euclidean ball per velocity. Everything maps onto the cone program

    minimize    1/2 x'Px + q'x
    subject to  G x + s = h,   s in K = R+^l x Q^{m1} x ... x Q^{mk}

which is solved by a primal-dual interior-point method with Nesterov-Todd
scaling and a Mehrotra corrector. Quadratic rows enter through the rotated
cone identity 4 a b >= |y|^2  <=>  |(a - b, y)| <= a + b. The implementation
is deterministic: identical programs produce bitwise-identical solutions.

A program can be round-tripped through JSON for offline reproduction; see
``program_to_json`` for the schema.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

__all__ = [
    "LinRow",
    "QuadRow",
    "ConvexProgram",
    "Solution",
    "solve",
    "kkt_residual",
    "program_to_json",
    "program_from_json",
    "Cone",
    "solve_cone",
]

STATUS_OPTIMAL = "optimal"
STATUS_LOOSE = "optimal-loose"
STATUS_INFEASIBLE = "infeasible"
STATUS_MAXITER = "max-iter"


# ---------------------------------------------------------------------------
# program description
# ---------------------------------------------------------------------------

@dataclass
class LinRow:
    """Linear inequality  sum_i coef_u[i].u_i + sum_i coef_f[i] f_i + coef_s s <= rhs."""

    coef_u: Optional[np.ndarray]  # (N, 2) or None
    coef_f: Optional[np.ndarray]  # (N,) or None
    coef_s: float
    rhs: float
    name: str = ""


@dataclass
class QuadRow:
    """Convex quadratic inequality on one velocity block:
    quad |u_b|^2 + lin_u . u_b <= rhs, quad > 0."""

    block: int
    quad: float
    lin_u: np.ndarray  # (2,)
    rhs: float
    name: str = ""


@dataclass
class ConvexProgram:
    """Decision variables: velocities u_i (2 per robot), flows f_i (1 per
    robot), one slack s. Objective |u|^2 + zeta |f|^2 + gamma s. Flows are
    boxed to [0, f_max_i], the slack to s >= 0, velocities to |u_i| <= u_max.
    """

    n_robots: int
    zeta: float
    gamma: float
    u_max: np.ndarray  # (N,), np.inf disables a ball
    f_max: np.ndarray  # (N,)
    lin_rows: List[LinRow] = field(default_factory=list)
    quad_rows: List[QuadRow] = field(default_factory=list)

    def __post_init__(self):
        self.u_max = np.broadcast_to(
            np.asarray(self.u_max, dtype=float), (self.n_robots,)
        ).copy()
        self.f_max = np.broadcast_to(
            np.asarray(self.f_max, dtype=float), (self.n_robots,)
        ).copy()
        if self.zeta < 0 or self.gamma <= 0:
            raise ValueError("zeta must be >= 0 and gamma > 0")
        for row in self.quad_rows:
            if row.quad <= 0:
                raise ValueError("quadratic rows must be convex (quad > 0)")

    @property
    def n_vars(self) -> int:
        return 3 * self.n_robots + 1


@dataclass
class Solution:
    u: np.ndarray  # (N, 2)
    f: np.ndarray  # (N,)
    s: float
    status: str
    kkt_residual: float
    objective: float = np.nan
    iterations: int = 0
    row_slacks: List[tuple] = field(default_factory=list)
    z: Optional[np.ndarray] = None  # dual vector in the assembled cone order

    def as_x(self, n_robots: int) -> np.ndarray:
        return np.concatenate([self.u.ravel(), self.f, [self.s]])


# ---------------------------------------------------------------------------
# cone algebra
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Cone:
    """Product cone: l-dimensional nonnegative orthant then SOC blocks."""

    l: int
    socs: tuple

    @property
    def dim(self) -> int:
        return self.l + sum(self.socs)

    @property
    def degree(self) -> int:
        return self.l + len(self.socs)

    def soc_slices(self):
        start = self.l
        for m in self.socs:
            yield slice(start, start + m)
            start += m

    def identity(self) -> np.ndarray:
        e = np.zeros(self.dim)
        e[: self.l] = 1.0
        for sl in self.soc_slices():
            e[sl.start] = 1.0
        return e

    def margin(self, v: np.ndarray) -> float:
        """Distance-to-boundary measure: min over blocks of the interior margin."""
        m = np.inf
        if self.l:
            m = min(m, float(v[: self.l].min()))
        for sl in self.soc_slices():
            blk = v[sl]
            m = min(m, float(blk[0] - np.linalg.norm(blk[1:])))
        return m


class _Scaling:
    """Nesterov-Todd scaling W with W z = W^{-1} s = lambda."""

    def __init__(self, cone: Cone, s: np.ndarray, z: np.ndarray):
        self.cone = cone
        self.d = np.sqrt(s[: cone.l] / z[: cone.l]) if cone.l else np.zeros(0)
        self.soc = []
        for sl in cone.soc_slices():
            sb, zb = s[sl], z[sl]
            js = sb[0] ** 2 - sb[1:] @ sb[1:]
            jz = zb[0] ** 2 - zb[1:] @ zb[1:]
            sbar = sb / np.sqrt(js)
            zbar = zb / np.sqrt(jz)
            gamma = np.sqrt((1.0 + sbar @ zbar) / 2.0)
            # scaling point wbar solves P(beta*wbar) z = s; the Householder
            # vector is its Jordan square root, so that W = P(beta*wbar)^{1/2}
            wbar = (sbar + _jref(zbar)) / (2.0 * gamma)
            v = wbar.copy()
            v[0] += 1.0
            v /= np.sqrt(2.0 * (wbar[0] + 1.0))
            beta = (js / jz) ** 0.25
            self.soc.append((beta, v))
        self.lmbda = self.apply(z)

    def apply(self, v: np.ndarray) -> np.ndarray:
        """W v (also works on (dim, k) matrices)."""
        out = np.array(v, dtype=float, copy=True)
        l = self.cone.l
        if l:
            out[:l] = (out[:l].T * self.d).T
        for (beta, vbar), sl in zip(self.soc, self.cone.soc_slices()):
            blk = out[sl]
            proj = vbar @ blk
            out[sl] = beta * (2.0 * np.outer(vbar, proj).reshape(blk.shape) - _jref(blk))
        return out

    def apply_inv(self, v: np.ndarray) -> np.ndarray:
        """W^{-1} v."""
        out = np.array(v, dtype=float, copy=True)
        l = self.cone.l
        if l:
            out[:l] = (out[:l].T / self.d).T
        for (beta, vbar), sl in zip(self.soc, self.cone.soc_slices()):
            jv = _jref(vbar)
            blk = out[sl]
            proj = jv @ blk
            out[sl] = (2.0 * np.outer(jv, proj).reshape(blk.shape) - _jref(blk)) / beta
        return out


def _jref(v: np.ndarray) -> np.ndarray:
    """Reflection J v = (v0, -v1) applied blockwise (works on matrices)."""
    out = np.array(v, dtype=float, copy=True)
    out[1:] = -out[1:]
    return out


def _jordan_mul(cone: Cone, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.empty(cone.dim)
    l = cone.l
    out[:l] = a[:l] * b[:l]
    for sl in cone.soc_slices():
        ab, bb = a[sl], b[sl]
        out[sl.start] = ab @ bb
        out[sl.start + 1 : sl.stop] = ab[0] * bb[1:] + bb[0] * ab[1:]
    return out


def _jordan_solve(cone: Cone, lmbda: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Solve Arw(lmbda) y = r blockwise."""
    out = np.empty(cone.dim)
    l = cone.l
    out[:l] = r[:l] / lmbda[:l]
    for sl in cone.soc_slices():
        lb, rb = lmbda[sl], r[sl]
        det = lb[0] ** 2 - lb[1:] @ lb[1:]
        y0 = (lb[0] * rb[0] - lb[1:] @ rb[1:]) / det
        out[sl.start] = y0
        out[sl.start + 1 : sl.stop] = (rb[1:] - y0 * lb[1:]) / lb[0]
    return out


def _max_step(cone: Cone, v: np.ndarray, dv: np.ndarray) -> float:
    """Largest t >= 0 with v + t dv in the cone (v strictly interior)."""
    t = np.inf
    l = cone.l
    if l:
        neg = dv[:l] < 0
        if np.any(neg):
            t = min(t, float((-v[:l][neg] / dv[:l][neg]).min()))
    for sl in cone.soc_slices():
        vb, db = v[sl], dv[sl]
        a = db[0] ** 2 - db[1:] @ db[1:]
        b = 2.0 * (vb[0] * db[0] - vb[1:] @ db[1:])
        c = vb[0] ** 2 - vb[1:] @ vb[1:]
        roots = []
        if abs(a) < 1e-14:
            if b < 0:
                roots.append(-c / b)
        else:
            disc = b * b - 4.0 * a * c
            if disc >= 0:
                sq = np.sqrt(disc)
                roots.extend([(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)])
        if db[0] < 0:
            roots.append(-vb[0] / db[0])
        pos = [r for r in roots if r > 0]
        if pos:
            t = min(t, min(pos))
    return t


# ---------------------------------------------------------------------------
# core interior-point loop
# ---------------------------------------------------------------------------

@dataclass
class CoreResult:
    x: np.ndarray
    s: np.ndarray
    z: np.ndarray
    status: str
    iterations: int
    pres: float
    dres: float
    gap: float
    cert_residual: float = np.nan


def solve_cone(
    P: np.ndarray,
    q: np.ndarray,
    G: np.ndarray,
    h: np.ndarray,
    cone: Cone,
    tol: float = 1e-8,
    max_iter: int = 200,
) -> CoreResult:
    """Interior-point solve of min 1/2 x'Px + q'x s.t. Gx + s = h, s in K."""
    n = len(q)
    m = cone.dim
    if m == 0:
        x = np.linalg.lstsq(P + 1e-14 * np.eye(n), -q, rcond=None)[0]
        return CoreResult(x, np.zeros(0), np.zeros(0), STATUS_OPTIMAL, 0, 0.0, 0.0, 0.0)

    # scale each cone block of (G, h) to unit norm: cones are invariant under
    # positive row-block scaling, and this keeps residual thresholds meaningful
    G = np.array(G, dtype=float, copy=True)
    h = np.array(h, dtype=float, copy=True)
    row_scale = np.ones(m)
    for i in range(cone.l):
        nrm = max(np.linalg.norm(G[i]), abs(h[i]), 1e-12)
        row_scale[i] = 1.0 / nrm
    for sl in cone.soc_slices():
        nrm = max(np.linalg.norm(G[sl]), np.linalg.norm(h[sl]), 1e-12)
        row_scale[sl] = 1.0 / nrm
    G *= row_scale[:, None]
    h *= row_scale

    # start from a regularized least-squares point, shifted strictly inside
    x = np.linalg.solve(P + G.T @ G + 1e-12 * np.eye(n), G.T @ h - q)
    s = h - G @ x
    margin = cone.margin(s)
    if margin <= 0:
        s += (1.0 - margin) * cone.identity()
    z = cone.identity()

    nu = cone.degree
    hnorm = max(1.0, np.linalg.norm(h))
    qnorm = max(1.0, np.linalg.norm(q))
    status = STATUS_MAXITER
    pres = dres = gap = np.inf
    cert = np.nan
    it = 0

    for it in range(1, max_iter + 1):
        rx = P @ x + q + G.T @ z
        rz = G @ x + s - h
        gap = float(s @ z)
        pres = float(np.linalg.norm(rz)) / hnorm
        dres = float(np.linalg.norm(rx)) / qnorm
        obj = 0.5 * x @ P @ x + q @ x
        relgap = gap / max(1.0, abs(obj))

        if pres <= tol and dres <= tol and (gap <= tol or relgap <= tol):
            status = STATUS_OPTIMAL
            break

        # Farkas-style primal infeasibility certificate: z in K*, G'z ~ 0,
        # h'z < 0. The iterates diverge along such a ray when no feasible
        # point exists.
        hz = float(h @ z)
        znorm = float(np.linalg.norm(z))
        if hz < -1e-8 * max(znorm, 1.0):
            cert = float(np.linalg.norm(G.T @ z)) / (-hz)
            if cert <= 1e-7:
                status = STATUS_INFEASIBLE
                break
        if znorm > 1e14 or float(np.linalg.norm(s)) > 1e14:
            break

        scaling = _Scaling(cone, s, z)
        lmbda = scaling.lmbda
        mu = gap / nu

        Gn = scaling.apply_inv(G)
        A = P + Gn.T @ Gn
        rz_n = scaling.apply_inv(rz)

        def newton(d_tilde):
            rhs = -rx - Gn.T @ (d_tilde + rz_n)
            dx = np.linalg.solve(A, rhs)
            ds = -rz - G @ dx
            dz = scaling.apply_inv(scaling.apply_inv(G @ dx + rz) + d_tilde)
            return dx, ds, dz

        # predictor
        dx_a, ds_a, dz_a = newton(-lmbda)
        alpha_a = min(
            1.0, _max_step(cone, s, ds_a), _max_step(cone, z, dz_a)
        )
        gap_a = float((s + alpha_a * ds_a) @ (z + alpha_a * dz_a))
        sigma = min(1.0, max(0.0, gap_a / gap)) ** 3

        # corrector with Mehrotra second-order term
        eta = _jordan_mul(
            cone, scaling.apply_inv(ds_a), scaling.apply(dz_a)
        )
        d = sigma * mu * cone.identity() - _jordan_mul(cone, lmbda, lmbda) - eta
        d_tilde = _jordan_solve(cone, lmbda, d)
        dx, ds, dz = newton(d_tilde)

        alpha = 0.99 * min(_max_step(cone, s, ds), _max_step(cone, z, dz))
        alpha = min(1.0, alpha)
        x += alpha * dx
        s += alpha * ds
        z += alpha * dz

    if status == STATUS_MAXITER and max(pres, dres, gap) < 1e-4:
        status = STATUS_LOOSE

    # return duals in the caller's (unscaled) row convention
    z_out = z * row_scale
    s_out = s / row_scale
    return CoreResult(x, s_out, z_out, status, it, pres, dres, gap, cert)


# ---------------------------------------------------------------------------
# assembly of control programs
# ---------------------------------------------------------------------------

def _assemble(p: ConvexProgram):
    # a robot with an empty tank contributes no flow variable at all: keeping
    # the pair f >= 0, f <= 0 would leave the barrier problem without a
    # strictly feasible point
    n_rob = p.n_robots
    f_idx = [i for i in range(n_rob) if p.f_max[i] > 0.0]
    n = 2 * n_rob + len(f_idx) + 1
    iu = lambda i: slice(2 * i, 2 * i + 2)
    if_ = {i: 2 * n_rob + k for k, i in enumerate(f_idx)}
    is_ = n - 1

    P = np.zeros((n, n))
    for i in range(n_rob):
        P[2 * i, 2 * i] = 2.0
        P[2 * i + 1, 2 * i + 1] = 2.0
    for i in f_idx:
        P[if_[i], if_[i]] = 2.0 * p.zeta
    q = np.zeros(n)
    q[is_] = p.gamma

    rows_G, rows_h, names = [], [], []

    def lin_row(cu, cf, cs, rhs, name):
        g = np.zeros(n)
        if cu is not None:
            g[: 2 * n_rob] = np.asarray(cu, dtype=float).ravel()
        if cf is not None:
            cf = np.asarray(cf, dtype=float)
            for i in f_idx:
                g[if_[i]] = cf[i]
        g[is_] = cs
        rows_G.append(g)
        rows_h.append(float(rhs))
        names.append(name)

    for k, row in enumerate(p.lin_rows):
        lin_row(row.coef_u, row.coef_f, row.coef_s, row.rhs, row.name or f"lin{k}")
    for i in f_idx:
        g = np.zeros(n)
        g[if_[i]] = -1.0
        rows_G.append(g)
        rows_h.append(0.0)
        names.append(f"f{i}>=0")
        g = np.zeros(n)
        g[if_[i]] = 1.0
        rows_G.append(g)
        rows_h.append(float(p.f_max[i]))
        names.append(f"f{i}<=fmax")
    g = np.zeros(n)
    g[is_] = -1.0
    rows_G.append(g)
    rows_h.append(0.0)
    names.append("s>=0")

    l = len(rows_G)
    socs = []
    soc_names = []
    for i in range(n_rob):
        if not np.isfinite(p.u_max[i]):
            continue
        blk = np.zeros((3, n))
        blk[1, 2 * i] = -1.0
        blk[2, 2 * i + 1] = -1.0
        rows_G.extend(blk)
        rows_h.extend([float(p.u_max[i]), 0.0, 0.0])
        socs.append(3)
        soc_names.append(f"ball{i}")
    for k, row in enumerate(p.quad_rows):
        a = np.asarray(row.lin_u, dtype=float) / row.quad
        r = row.rhs / row.quad
        blk = np.zeros((4, n))
        blk[0, iu(row.block)] = a
        blk[1, iu(row.block)] = a
        blk[2, 2 * row.block] = -1.0
        blk[3, 2 * row.block + 1] = -1.0
        rows_G.extend(blk)
        rows_h.extend([r + 0.25, r - 0.25, 0.0, 0.0])
        socs.append(4)
        soc_names.append(row.name or f"quad{k}")

    G = np.vstack(rows_G) if rows_G else np.zeros((0, n))
    h = np.asarray(rows_h, dtype=float)
    return P, q, G, h, Cone(l, tuple(socs)), names, soc_names, f_idx


def solve(p: ConvexProgram, tol: float = 1e-8, max_iter: int = 200) -> Solution:
    """Solve a control program; never raises on infeasible input."""
    P, q, G, h, cone, names, soc_names, f_idx = _assemble(p)
    res = solve_cone(P, q, G, h, cone, tol=tol, max_iter=max_iter)
    n_rob = p.n_robots
    x = res.x
    u = x[: 2 * n_rob].reshape(n_rob, 2)
    f = np.zeros(n_rob)
    for k, i in enumerate(f_idx):
        f[i] = x[2 * n_rob + k]
    s = float(x[-1])

    sol = Solution(
        u=u,
        f=f,
        s=s,
        status=res.status,
        kkt_residual=np.nan,
        objective=float((u**2).sum() + p.zeta * (f**2).sum() + p.gamma * s),
        iterations=res.iterations,
        z=res.z,
    )
    if res.status == STATUS_INFEASIBLE:
        sol.kkt_residual = res.cert_residual
        return sol

    slack = h - G @ x
    lin_slacks = [(names[i], float(slack[i])) for i in range(cone.l)]
    soc_slacks = []
    for nm, sl in zip(soc_names, cone.soc_slices()):
        blk = slack[sl]
        soc_slacks.append((nm, float(blk[0] - np.linalg.norm(blk[1:]))))
    sol.row_slacks = lin_slacks + soc_slacks

    sol.kkt_residual = kkt_residual(p, sol)
    if sol.status == STATUS_OPTIMAL and sol.kkt_residual > 1e-6:
        sol.status = STATUS_LOOSE if sol.kkt_residual < 1e-4 else STATUS_MAXITER
    return sol


def kkt_residual(p: ConvexProgram, candidate: Solution) -> float:
    """Independent optimality check: the largest of primal violation, dual
    violation (stationarity + dual cone membership), and complementary
    slackness across all rows. Uses the candidate's stored duals when present;
    otherwise only primal feasibility is measurable."""
    P, q, G, h, cone, _, _, f_idx = _assemble(p)
    x = np.concatenate(
        [candidate.u.ravel(), candidate.f[f_idx], [candidate.s]]
    )
    s = h - G @ x

    viol = 0.0
    if cone.l:
        viol = max(viol, float(np.max(-s[: cone.l], initial=0.0)))
    for sl in cone.soc_slices():
        blk = s[sl]
        viol = max(viol, float(np.linalg.norm(blk[1:]) - blk[0]))

    z = candidate.z
    if z is None:
        return viol

    dual_stat = float(np.max(np.abs(P @ x + q + G.T @ z)))
    dual_cone = 0.0
    if cone.l:
        dual_cone = max(dual_cone, float(np.max(-z[: cone.l], initial=0.0)))
    comp = 0.0
    if cone.l:
        comp = float(np.max(np.abs(z[: cone.l] * s[: cone.l]), initial=0.0))
    for sl in cone.soc_slices():
        zb, sb = z[sl], s[sl]
        dual_cone = max(dual_cone, float(np.linalg.norm(zb[1:]) - zb[0]))
        comp = max(comp, abs(float(zb @ sb)))
    return max(viol, dual_stat, dual_cone, comp)


# ---------------------------------------------------------------------------
# JSON round-trip (offline reproduction of a program)
# ---------------------------------------------------------------------------

def program_to_json(p: ConvexProgram) -> str:
    """Serialize a program. Schema: an object with keys n_robots, zeta, gamma,
    u_max (list), f_max (list), lin_rows (list of {coef_u: N x 2, coef_f: N,
    coef_s, rhs, name}), quad_rows (list of {block, quad, lin_u: 2, rhs,
    name}). Null coefficient arrays mean all-zero."""
    doc = {
        "n_robots": p.n_robots,
        "zeta": p.zeta,
        "gamma": p.gamma,
        "u_max": p.u_max.tolist(),
        "f_max": p.f_max.tolist(),
        "lin_rows": [
            {
                "coef_u": None if r.coef_u is None else np.asarray(r.coef_u).tolist(),
                "coef_f": None if r.coef_f is None else np.asarray(r.coef_f).tolist(),
                "coef_s": r.coef_s,
                "rhs": r.rhs,
                "name": r.name,
            }
            for r in p.lin_rows
        ],
        "quad_rows": [
            {
                "block": r.block,
                "quad": r.quad,
                "lin_u": np.asarray(r.lin_u).tolist(),
                "rhs": r.rhs,
                "name": r.name,
            }
            for r in p.quad_rows
        ],
    }
    return json.dumps(doc)


def program_from_json(text: str) -> ConvexProgram:
    doc = json.loads(text)
    lin = [
        LinRow(
            None if r["coef_u"] is None else np.asarray(r["coef_u"], dtype=float),
            None if r["coef_f"] is None else np.asarray(r["coef_f"], dtype=float),
            float(r["coef_s"]),
            float(r["rhs"]),
            r.get("name", ""),
        )
        for r in doc["lin_rows"]
    ]
    quad = [
        QuadRow(
            int(r["block"]),
            float(r["quad"]),
            np.asarray(r["lin_u"], dtype=float),
            float(r["rhs"]),
            r.get("name", ""),
        )
        for r in doc["quad_rows"]
    ]
    return ConvexProgram(
        n_robots=int(doc["n_robots"]),
        zeta=float(doc["zeta"]),
        gamma=float(doc["gamma"]),
        u_max=np.asarray(doc["u_max"], dtype=float),
        f_max=np.asarray(doc["f_max"], dtype=float),
        lin_rows=lin,
        quad_rows=quad,
    )
