"""Decentralized sensing and communication.

Each robot keeps a private temperature map with a per-cell certainty that
decays linearly between observations; cells it has never seen (or whose
certainty has decayed to zero) read as ambient, so they contribute nothing
to that robot's deployment target. Robots within detection range exchange
maps once per tick, but only first-hand observations travel: a cell learned
from a neighbor is marked received and is not forwarded again, which keeps
information propagation strictly one-hop per exchange.

The unsafe-region mask is the exception: it is computed from the true field
and broadcast to everyone, since safety constraints cannot run on beliefs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .fire import RegionThresholds, unsafe_region
from .grid import GridSpec, ScalarField

__all__ = [
    "PROV_NONE",
    "PROV_OWN",
    "PROV_RECEIVED",
    "NeighborGraph",
    "LocalMap",
    "neighbor_graph",
    "sense",
    "decay",
    "share_one_hop",
    "broadcast_unsafe",
]

PROV_NONE = np.uint8(0)
PROV_OWN = np.uint8(1)
PROV_RECEIVED = np.uint8(2)


@dataclass(frozen=True)
class NeighborGraph:
    """Distance-based communication graph: i and j are neighbors iff their
    separation is at most the detection radius. Symmetric, no self loops."""

    radius: float
    adjacency: Tuple[Tuple[int, ...], ...]

    def neighbors(self, i: int) -> Tuple[int, ...]:
        return self.adjacency[i]

    @property
    def n_robots(self) -> int:
        return len(self.adjacency)


@dataclass
class LocalMap:
    """One robot's belief about the temperature field.

    certainty is 1 where just sensed and decays toward 0; zero-certainty
    cells report ambient temperature. provenance tracks whether each cell
    was observed first-hand (own) or merged from a neighbor (received).
    """

    t_est: ScalarField
    certainty: np.ndarray
    provenance: np.ndarray
    t_ambient: float

    @classmethod
    def ambient(cls, grid: GridSpec, t_ambient: float) -> "LocalMap":
        return cls(
            t_est=ScalarField.full(grid, t_ambient),
            certainty=np.zeros(grid.shape),
            provenance=np.full(grid.shape, PROV_NONE, dtype=np.uint8),
            t_ambient=t_ambient,
        )

    def copy(self) -> "LocalMap":
        return LocalMap(
            self.t_est.copy(), self.certainty.copy(), self.provenance.copy(),
            self.t_ambient,
        )

    def validate(self):
        if np.any(self.certainty < 0) or np.any(self.certainty > 1):
            raise ValueError("certainty out of [0, 1]")


def neighbor_graph(positions: Sequence[np.ndarray], radius: float) -> NeighborGraph:
    pts = np.asarray(positions, dtype=float)
    n = len(pts)
    adj = []
    for i in range(n):
        d = np.linalg.norm(pts - pts[i], axis=1)
        adj.append(tuple(j for j in range(n) if j != i and d[j] <= radius))
    return NeighborGraph(radius=radius, adjacency=tuple(adj))


def _disk_mask(grid: GridSpec, center: np.ndarray, radius: float) -> np.ndarray:
    cx, cy = grid.cell_centers
    return (cx - center[0]) ** 2 + (cy - center[1]) ** 2 <= radius**2


def sense(m: LocalMap, true_t: ScalarField, x: np.ndarray, radius: float) -> LocalMap:
    """Overwrite every cell within the detection radius with ground truth."""
    out = m.copy()
    mask = _disk_mask(true_t.spec, np.asarray(x, dtype=float), radius)
    out.t_est.values[mask] = true_t.values[mask]
    out.certainty[mask] = 1.0
    out.provenance[mask] = PROV_OWN
    return out


def decay(m: LocalMap, dt: float, lambda_decay: float) -> LocalMap:
    """Linear certainty decay; fully decayed cells forget their reading."""
    if lambda_decay < 0:
        raise ValueError("decay rate must be >= 0")
    out = m.copy()
    out.certainty = np.maximum(0.0, out.certainty - lambda_decay * dt)
    dead = out.certainty == 0.0
    out.t_est.values[dead] = m.t_ambient
    out.provenance[dead] = PROV_NONE
    return out


def share_one_hop(maps: List[LocalMap], graph: NeighborGraph) -> List[LocalMap]:
    """Synchronous exchange: everyone transmits the pre-exchange snapshot of
    their first-hand cells; receivers keep whichever source is more certain.
    Neighbors are merged in ascending id order, and only strictly higher
    certainty wins, so the result does not depend on arrival order."""
    if len(maps) != graph.n_robots:
        raise ValueError("one map per robot required")
    merged = []
    for i in range(graph.n_robots):
        mine = maps[i].copy()
        for j in sorted(graph.neighbors(i)):
            theirs = maps[j]
            take = (theirs.provenance == PROV_OWN) & (
                theirs.certainty > mine.certainty
            )
            mine.t_est.values[take] = theirs.t_est.values[take]
            mine.certainty[take] = theirs.certainty[take]
            mine.provenance[take] = PROV_RECEIVED
        merged.append(mine)
    return merged


def broadcast_unsafe(true_t: ScalarField, thresholds: RegionThresholds) -> np.ndarray:
    """Mask of cells too hot to overfly, computed from the true field.

    Safety cannot rest on decaying beliefs, so this one signal is global:
    the same boolean mask is handed to every robot each tick."""
    return unsafe_region(true_t, thresholds)
