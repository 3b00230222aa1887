"""Floorplans, virtual anchors and specular reflection paths in 2-D.

Virtual anchors (VAs) are mirror images of a node across one or more
walls. A VA of order ``Q`` is obtained by mirroring the node across the
walls of its ``wall_sequence`` in order; the distance from the VA to an
agent equals the length of the corresponding reflected path.

All functions accept points as array-likes of shape ``(..., 2)`` where it
makes sense, so the grid sweeps can run vectorized over many agent
positions at once.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

# Blocking/containment tolerance for reflection paths (m).
EPS = 1e-9


class GeometryError(ValueError):
    """Invalid or degenerate geometry."""


@dataclass(frozen=True)
class Wall:
    """Straight, opaque wall segment between two endpoints (m)."""

    a: tuple
    b: tuple

    def __post_init__(self):
        a = tuple(float(v) for v in self.a)
        b = tuple(float(v) for v in self.b)
        if len(a) != 2 or len(b) != 2:
            raise GeometryError("wall endpoints must be 2-vectors")
        if math.hypot(b[0] - a[0], b[1] - a[1]) < EPS:
            raise GeometryError(f"degenerate wall with coincident endpoints {a}")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def angle(self) -> float:
        """Orientation of the wall line in [0, pi)."""
        g = math.atan2(self.b[1] - self.a[1], self.b[0] - self.a[0])
        if g < 0.0:
            g += math.pi
        if g >= math.pi:
            g -= math.pi
        return g

    @property
    def length(self) -> float:
        return math.hypot(self.b[0] - self.a[0], self.b[1] - self.a[1])

    @property
    def direction(self) -> np.ndarray:
        d = np.subtract(self.b, self.a)
        return d / np.linalg.norm(d)

    @property
    def normal(self) -> np.ndarray:
        d = self.direction
        return np.array([-d[1], d[0]])


@dataclass(frozen=True)
class Floorplan:
    """Walls plus the boundary polygon used to generate evaluation grids."""

    walls: tuple
    boundary: tuple

    def __post_init__(self):
        object.__setattr__(self, "walls", tuple(self.walls))
        boundary = tuple(tuple(float(v) for v in p) for p in self.boundary)
        if len(boundary) < 3:
            raise GeometryError("boundary polygon needs at least three vertices")
        if not _polygon_is_simple(np.asarray(boundary)):
            raise GeometryError("boundary polygon is self-intersecting")
        object.__setattr__(self, "boundary", boundary)
        if self.walls:
            ends = self.wall_array.reshape(-1, 2)
            if not np.all(self.on_or_inside(ends, tol=1e-6)):
                raise GeometryError("every wall must lie on or inside the boundary polygon")

    @classmethod
    def rectangle(cls, width: float = 10.0, height: float = 7.2) -> "Floorplan":
        """Rectangular room ``[0, width] x [0, height]`` with four walls."""
        corners = [(0.0, 0.0), (width, 0.0), (width, height), (0.0, height)]
        walls = [Wall(corners[i], corners[(i + 1) % 4]) for i in range(4)]
        return cls(walls=tuple(walls), boundary=tuple(corners))

    @property
    def wall_array(self) -> np.ndarray:
        """Wall endpoints as an array of shape ``(n_walls, 2, 2)``."""
        if not self.walls:
            return np.zeros((0, 2, 2))
        return np.array([[w.a, w.b] for w in self.walls], dtype=float)

    def contains(self, points) -> np.ndarray:
        """Point-in-polygon test for the boundary (even-odd rule)."""
        pts = np.asarray(points, dtype=float)
        poly = np.asarray(self.boundary)
        x, y = pts[..., 0], pts[..., 1]
        inside = np.zeros(pts.shape[:-1], dtype=bool)
        x1, y1 = poly[:, 0], poly[:, 1]
        x2, y2 = np.roll(x1, -1), np.roll(y1, -1)
        for xa, ya, xb, yb in zip(x1, y1, x2, y2):
            crosses = (ya > y) != (yb > y)
            with np.errstate(divide="ignore", invalid="ignore"):
                xint = xa + (y - ya) * (xb - xa) / (yb - ya)
            inside ^= crosses & (x < xint)
        return inside

    def on_or_inside(self, points, tol: float = 1e-9) -> np.ndarray:
        """Like :meth:`contains` but boundary points count as inside."""
        pts = np.asarray(points, dtype=float)
        poly = np.asarray(self.boundary)
        edges = np.stack([poly, np.roll(poly, -1, axis=0)], axis=1)
        return self.contains(pts) | (distance_to_segments(pts, edges).min(axis=-1) <= tol)

    def wall_distance(self, points) -> np.ndarray:
        """Distance of each point to the nearest wall (inf without walls)."""
        pts = np.asarray(points, dtype=float)
        if not self.walls:
            return np.full(pts.shape[:-1], np.inf)
        return distance_to_segments(pts, self.wall_array).min(axis=-1)


@dataclass(frozen=True, eq=False)
class VirtualAnchor:
    """Mirror image of node ``parent`` across the walls in ``wall_sequence``.

    ``chain`` holds the intermediate images, ``chain[0]`` being the
    physical node and ``chain[-1]`` the VA itself.
    """

    position: np.ndarray
    parent: int
    wall_sequence: tuple
    effective_angle: float
    chain: tuple = field(repr=False, default=())

    @property
    def order(self) -> int:
        return len(self.wall_sequence)


def mirror_point(p, wall: Wall) -> np.ndarray:
    """Reflect ``p`` across the infinite line through ``wall``."""
    p = np.asarray(p, dtype=float)
    a = np.asarray(wall.a)
    n = wall.normal
    dist = (p - a) @ n
    return p - 2.0 * dist[..., None] * n


def effective_wall_angle(walls: Sequence) -> float:
    """Alternating sum of wall angles, ``g1 - g2 + g3 - ...``.

    Accepts :class:`Wall` objects or bare angles in radians.
    """
    total = 0.0
    for q, w in enumerate(walls):
        g = w.angle if isinstance(w, Wall) else float(w)
        total += g if q % 2 == 0 else -g
    return total


def wall_sequences(n_walls: int, q_max: int):
    """All wall index sequences up to length ``q_max`` without immediate repeats.

    The empty sequence (the node itself) comes first, then sequences
    ordered by length and lexicographically.
    """
    if q_max < 0:
        raise ValueError("q_max must be non-negative")
    seqs = [()]
    frontier = [()]
    for _ in range(q_max):
        nxt = []
        for s in frontier:
            for w in range(n_walls):
                if s and s[-1] == w:
                    continue
                nxt.append(s + (w,))
        seqs.extend(nxt)
        frontier = nxt
    return seqs


def image_chain(points, plan: Floorplan, sequence: Sequence[int]) -> list:
    """Successive mirror images of ``points`` along ``sequence`` (vectorized)."""
    chain = [np.asarray(points, dtype=float)]
    for w in sequence:
        chain.append(mirror_point(chain[-1], plan.walls[w]))
    return chain


def build_vas(node_position, plan: Floorplan, q_max: int, parent: int = 0) -> list:
    """Virtual anchors of a node up to order ``q_max``, including the node itself."""
    node = np.asarray(node_position, dtype=float)
    vas = []
    for seq in wall_sequences(len(plan.walls), q_max):
        chain = image_chain(node, plan, seq)
        nu = effective_wall_angle([plan.walls[w] for w in seq])
        vas.append(VirtualAnchor(position=chain[-1], parent=parent,
                                 wall_sequence=tuple(seq), effective_angle=nu,
                                 chain=tuple(chain)))
    return vas


def _cross(u, v):
    return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]


def _segment_hits(p, q, a, b):
    """Intersection parameters of segments ``p->q`` and ``a->b``.

    Returns ``(t, u, parallel)`` with ``p + t (q - p) = a + u (b - a)``.
    Shapes broadcast.
    """
    r = q - p
    s = b - a
    denom = _cross(r, s)
    parallel = np.abs(denom) < 1e-15
    safe = np.where(parallel, 1.0, denom)
    ap = a - p
    t = _cross(ap, s) / safe
    u = _cross(ap, r) / safe
    return t, u, parallel


def _blocked(p, q, walls: np.ndarray, skip=()):
    """Whether segment ``p->q`` crosses any wall (vectorized over points).

    Crossings within EPS of either end of the segment are ignored so that
    the wall a path reflects on does not block it. Walls listed in
    ``skip`` are ignored entirely.
    """
    blocked = np.zeros(np.broadcast_shapes(p.shape, q.shape)[:-1], dtype=bool)
    length = np.linalg.norm(q - p, axis=-1)
    for i, (a, b) in enumerate(walls):
        if i in skip:
            continue
        t, u, parallel = _segment_hits(p, q, a, b)
        wl = np.linalg.norm(b - a)
        hit = (~parallel & (t * length > EPS) & ((1.0 - t) * length > EPS)
               & (u * wl >= -EPS) & ((1.0 - u) * wl >= -EPS))
        blocked |= hit
    return blocked


def trace_paths(sources, agents, plan: Floorplan, sequence: Sequence[int]):
    """Unfold reflected paths for many source/agent pairs at once.

    Parameters
    ----------
    sources, agents : array of shape (P, 2) (or broadcastable)
    sequence : wall indices of the VA, in construction order

    Returns
    -------
    visible : bool array (P,)
    points : array (P, Q + 2, 2) with the polyline source, r_1..r_Q, agent
    va : array (P, 2) with the VA positions
    """
    sources = np.asarray(sources, dtype=float)
    agents = np.asarray(agents, dtype=float)
    shape = np.broadcast_shapes(sources.shape, agents.shape)
    sources = np.broadcast_to(sources, shape)
    agents = np.broadcast_to(agents, shape)
    walls = plan.wall_array
    chain = image_chain(sources, plan, sequence)
    q_len = len(sequence)
    pts = np.empty(shape[:-1] + (q_len + 2, 2))
    pts[..., 0, :] = sources
    pts[..., -1, :] = agents
    visible = np.ones(shape[:-1], dtype=bool)

    # walk back from the agent towards the source
    target = agents
    for q in range(q_len - 1, -1, -1):
        a, b = walls[sequence[q]]
        image = chain[q + 1]
        t, u, parallel = _segment_hits(image, target, a, b)
        span = np.linalg.norm(target - image, axis=-1)
        wl = np.linalg.norm(b - a)
        ok = (~parallel & (t * span > EPS) & ((1.0 - t) * span > EPS)
              & (u * wl > EPS) & ((1.0 - u) * wl > EPS))
        visible &= ok
        r = image + t[..., None] * (target - image)
        pts[..., q + 1, :] = r
        target = r

    for q in range(q_len + 1):
        visible &= ~_blocked(pts[..., q, :], pts[..., q + 1, :], walls)
    return visible, pts, chain[-1]


def reflection_path(agent, va: VirtualAnchor, plan: Floorplan) -> Optional[list]:
    """Physical polyline ``[anchor, r_1, ..., r_Q, agent]`` or ``None`` if not visible."""
    if not va.chain:
        raise GeometryError("virtual anchor carries no image chain")
    agent = np.asarray(agent, dtype=float)
    visible, pts, _ = trace_paths(va.chain[0][None, :], agent[None, :], plan, va.wall_sequence)
    if not visible[0]:
        return None
    return [p.copy() for p in pts[0]]


def distance_to_segments(points, segments) -> np.ndarray:
    """Distances of points ``(..., 2)`` to segments ``(S, 2, 2)`` -> ``(..., S)``."""
    pts = np.asarray(points, dtype=float)[..., None, :]
    a = segments[:, 0, :]
    d = segments[:, 1, :] - a
    t = np.clip(np.sum((pts - a) * d, axis=-1) / np.sum(d * d, axis=-1), 0.0, 1.0)
    closest = a + t[..., None] * d
    return np.linalg.norm(pts - closest, axis=-1)


def _polygon_is_simple(poly: np.ndarray) -> bool:
    n = len(poly)
    edges = [(poly[i], poly[(i + 1) % n]) for i in range(n)]
    for i, j in itertools.combinations(range(n), 2):
        if j == i + 1 or (i == 0 and j == n - 1):
            continue
        t, u, parallel = _segment_hits(edges[i][0], edges[i][1], edges[j][0], edges[j][1])
        if not parallel and 0.0 <= t <= 1.0 and 0.0 <= u <= 1.0:
            return False
    return True
