"""Scenario orchestration and grid sweeps producing PEB maps, CDFs and ellipses.

A :class:`Scenario` fixes the room, the nodes and the measurement setup.
:func:`evaluate_points` places the moving agent at each requested point,
recomputes visibility, builds the link models and reduces them to the
agent's 2x2 position EFIM. Points are processed in fixed-size chunks so
the output does not depend on the number of worker threads.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import fim
from .channel import (DmParams, LinkModel, NoiseWhitener, SignalParams, frame_pdp,
                      link_batch, link_from_batch, window_length)
from .geometry import Floorplan, GeometryError

log = logging.getLogger(__name__)

KINDS = ("toa", "tdoa", "mono", "coop")
MODELS = ("full", "no-overlap")
DECOMPOSITIONS = ("total", "mono", "coop")

CHUNK = 128
WALL_MARGIN = 0.01


@dataclass(frozen=True)
class Scenario:
    """Measurement setup evaluated for one moving agent.

    ``anchors`` are fixed nodes with known positions. ``agents`` are
    resting cooperative agents whose positions are unknown. ``coop_links``
    lists ``(tx, rx)`` node ids of cooperative bistatic measurements and
    ``mono_agents`` the agents that observe their own reflections.
    """

    plan: Floorplan
    kind: str = "toa"
    anchors: dict = field(default_factory=dict)
    agents: dict = field(default_factory=dict)
    moving: str = "agent"
    sync_groups: tuple = ()
    coop_links: tuple = ()
    mono_agents: tuple = ()
    decomposition: str = "total"
    q_max: int = 2
    signal: SignalParams = SignalParams()
    dm: DmParams = DmParams()
    model: str = "full"
    partner_prior: Optional[float] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown scenario type {self.kind!r}")
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}")
        if self.decomposition not in DECOMPOSITIONS:
            raise ValueError(f"unknown decomposition {self.decomposition!r}")
        if self.q_max < 0:
            raise ValueError("q_max must be non-negative")

    @property
    def unknowns(self) -> list:
        """Ids of nodes with unknown position, moving agent first."""
        return [self.moving] + [a for a in self.agents if a != self.moving]

    def groups(self) -> list:
        """Anchor id lists sharing one clock offset (TDoA)."""
        seen = set()
        groups = []
        for g in self.sync_groups:
            g = [a for a in g if a in self.anchors]
            if g:
                groups.append(g)
                seen.update(g)
        groups.extend([a] for a in self.anchors if a not in seen)
        return groups

    def link_specs(self) -> list:
        """``(tx, rx, mono)`` triples of all measured links."""
        if self.kind in ("toa", "tdoa"):
            return [(a, self.moving, False) for a in self.anchors]
        if self.kind == "mono":
            return [(self.moving, self.moving, True)]
        # "mono" keeps the moving agent's own reflections, "coop" the links
        # to partners plus the partners' own reflections
        specs = []
        for a in self.mono_agents:
            if a == self.moving and self.decomposition == "coop":
                continue
            if a != self.moving and self.decomposition == "mono":
                continue
            specs.append((a, a, True))
        if self.decomposition in ("total", "coop"):
            specs += [(tx, rx, False) for tx, rx in self.coop_links]
        return specs

    def position(self, node):
        if node in self.anchors:
            return np.asarray(self.anchors[node], dtype=float)
        if node in self.agents:
            return np.asarray(self.agents[node], dtype=float)
        raise KeyError(f"unknown node {node!r}")


@dataclass(frozen=True)
class GridSpec:
    """Regular grid of cell centres over the room, masked to valid points."""

    origin: tuple
    spacing: float
    nx: int
    ny: int

    @classmethod
    def for_plan(cls, plan: Floorplan, spacing: float) -> "GridSpec":
        if not spacing > 0:
            raise ValueError("grid spacing must be positive")
        b = np.asarray(plan.boundary)
        lo, hi = b.min(axis=0), b.max(axis=0)
        nx = int(math.floor((hi[0] - lo[0]) / spacing + 1e-9))
        ny = int(math.floor((hi[1] - lo[1]) / spacing + 1e-9))
        return cls(origin=(float(lo[0]), float(lo[1])), spacing=float(spacing), nx=nx, ny=ny)

    def all_points(self) -> np.ndarray:
        ix, iy = np.meshgrid(np.arange(self.nx), np.arange(self.ny), indexing="xy")
        x = self.origin[0] + (ix.ravel() + 0.5) * self.spacing
        y = self.origin[1] + (iy.ravel() + 0.5) * self.spacing
        return np.column_stack([x, y])

    def points(self, plan: Floorplan, wall_margin: float = WALL_MARGIN) -> np.ndarray:
        """Grid points inside the boundary and not closer than ``wall_margin`` to a wall."""
        pts = self.all_points()
        keep = plan.contains(pts) & (plan.wall_distance(pts) >= wall_margin - 1e-9)
        return pts[keep]


@dataclass(frozen=True, eq=False)
class PointResults:
    points: np.ndarray
    efim: np.ndarray
    peb: np.ndarray
    degenerate: np.ndarray


@dataclass(frozen=True, eq=False)
class PebMap:
    grid: GridSpec
    points: np.ndarray
    peb: np.ndarray
    degenerate: np.ndarray
    scenario: Scenario

    def __len__(self):
        return len(self.peb)


# --------------------------------------------------------------------------
# sweep

def _link_geometry(scenario: Scenario, points: np.ndarray):
    """Vectorized link geometry for all link specs; fixed links computed once."""
    out = []
    for tx, rx, mono in scenario.link_specs():
        tx_moving = tx == scenario.moving
        rx_moving = rx == scenario.moving
        tx_pos = points if tx_moving else scenario.position(tx)[None]
        rx_pos = points if rx_moving else scenario.position(rx)[None]
        batch = link_batch(tx_pos, rx_pos, scenario.plan, scenario.q_max, scenario.signal,
                           mono=mono)
        out.append({"tx": tx, "rx": rx, "mono": mono, "batch": batch,
                    "static": not (tx_moving or rx_moving)})
    return out


def _max_rel_delay(geoms) -> float:
    lead_free = 0.0
    for g in geoms:
        b = g["batch"]
        rel = np.where(b["visible"], b["delay"] - b["tau_los"][:, None], 0.0)
        if rel.size:
            lead_free = max(lead_free, float(rel.max()))
    return lead_free


def sweep_whitener(scenario: Scenario, points: np.ndarray) -> Optional[NoiseWhitener]:
    """Whitener shared by every link of a sweep over ``points``."""
    if scenario.model != "full":
        return None
    geoms = _link_geometry(scenario, points)
    return _whitener_for(scenario, geoms)


def _whitener_for(scenario, geoms):
    params = scenario.signal
    lead = (params.support_samples + 1) * params.ts
    n = window_length(_max_rel_delay(geoms) + lead, params)
    return NoiseWhitener(params, frame_pdp(params, scenario.dm, n))


def _assemble(scenario: Scenario, terms) -> np.ndarray:
    """Moving agent's 2x2 EFIM from ``(tx, rx, link, delay_efim)`` terms."""
    kind = scenario.kind
    if kind == "toa":
        return fim.efim_position_toa((E, fim.agent_rows(link)) for _, _, link, E in terms)
    if kind == "tdoa":
        groups = scenario.groups()
        index = {a: g for g, members in enumerate(groups) for a in members}
        return fim.efim_position_tdoa(
            ((E, fim.agent_rows(link), index[tx]) for tx, _, link, E in terms), len(groups))
    if kind == "mono":
        return fim.efim_position_toa((E, fim.mono_rows(link)) for _, _, link, E in terms)

    unknowns = scenario.unknowns
    col = {a: i for i, a in enumerate(unknowns)}
    n = len(unknowns)

    def jac(tx, rx, link):
        H = np.zeros((link.k, 2 * n))
        if rx in col:
            H[:, 2 * col[rx]:2 * col[rx] + 2] += fim.agent_rows(link)
        if tx in col:
            H[:, 2 * col[tx]:2 * col[tx] + 2] += fim.anchor_rows(link)
        return H

    prior = None
    if scenario.partner_prior:
        prior = {i: scenario.partner_prior for i in range(1, n)}
    out = fim.efim_position_coop(((E, jac(tx, rx, link)) for tx, rx, link, E in terms), n,
                                 agents=[0], prior=prior)
    return out[0]


def _evaluate_chunk(scenario, geoms, static_terms, whitener, rows):
    n_pts = len(rows)
    links_per_point = []
    bad = np.zeros(n_pts, dtype=bool)
    for i, r in enumerate(rows):
        entries = []
        for g in geoms:
            if g["static"]:
                continue
            b = g["batch"]
            if b["degenerate"][r]:
                bad[i] = True
            entries.append((g["tx"], g["rx"], link_from_batch(b, r)))
        links_per_point.append(entries)

    if scenario.model == "full":
        flat = [link for entries in links_per_point for _, _, link in entries]
        efims = iter(fim.delay_efims_batch(flat, scenario.signal, scenario.dm, whitener))
    else:
        efims = iter([fim.delay_efim(link, scenario.signal, scenario.dm, "no-overlap")
                      for entries in links_per_point for _, _, link in entries])

    J = np.zeros((n_pts, 2, 2))
    peb = np.full(n_pts, math.inf)
    flags = bad.copy()
    for i, entries in enumerate(links_per_point):
        terms = []
        for tx, rx, link in entries:
            E, deg = next(efims)
            flags[i] |= deg
            terms.append((tx, rx, link, E))
        terms.extend(static_terms)
        if bad[i]:
            J[i] = np.nan
            continue
        J[i] = _assemble(scenario, terms)
        peb[i] = fim.peb(J[i])
    return J, peb, flags


def evaluate_points(scenario: Scenario, points, threads: int = 1,
                    progress: Optional[Callable[[int, int], None]] = None,
                    whitener: Optional[NoiseWhitener] = None) -> PointResults:
    """Position EFIM and PEB of the moving agent at every point.

    ``progress(done, total)`` is called after each finished chunk, in order.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    geoms = _link_geometry(scenario, points)
    if scenario.model == "full" and whitener is None:
        whitener = _whitener_for(scenario, geoms)

    static_terms = []
    for g in geoms:
        if not g["static"]:
            continue
        if g["batch"]["degenerate"][0]:
            raise GeometryError(f"link {g['tx']} -> {g['rx']} is degenerate")
        link = link_from_batch(g["batch"], 0)
        E, _ = fim.delay_efim(link, scenario.signal, scenario.dm, scenario.model, whitener)
        static_terms.append((g["tx"], g["rx"], link, E))

    chunks = [np.arange(s, min(s + CHUNK, len(points))) for s in range(0, len(points), CHUNK)]

    def work(rows):
        return _evaluate_chunk(scenario, geoms, static_terms, whitener, rows)

    J = np.zeros((len(points), 2, 2))
    peb = np.full(len(points), math.inf)
    flags = np.zeros(len(points), dtype=bool)
    done = 0
    threads = max(1, int(threads))
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        results = pool.map(work, chunks) if pool else map(work, chunks)
        for rows, (Jc, pc, fc) in zip(chunks, results):
            J[rows], peb[rows], flags[rows] = Jc, pc, fc
            done += len(rows)
            if progress is not None:
                progress(done, len(points))
    finally:
        if pool:
            pool.shutdown()
    return PointResults(points=points, efim=J, peb=peb, degenerate=flags)


def peb_map(scenario: Scenario, grid: GridSpec, model: Optional[str] = None, threads: int = 1,
            progress=None) -> PebMap:
    """PEB of the moving agent over all masked grid points."""
    if model is not None and model != scenario.model:
        from dataclasses import replace
        scenario = replace(scenario, model=model)
    pts = grid.points(scenario.plan)
    res = evaluate_points(scenario, pts, threads=threads, progress=progress)
    return PebMap(grid=grid, points=pts, peb=res.peb, degenerate=res.degenerate,
                  scenario=scenario)


def peb_cdf(values) -> tuple:
    """Empirical CDF over finite PEB values.

    Returns ``(cdf, unresolved)`` where ``cdf`` is a list of
    ``(value, fraction)`` with fractions relative to all points and
    ``unresolved`` is the fraction of infinite values.
    """
    if isinstance(values, PebMap):
        values = values.peb
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("empty PEB map")
    finite = np.sort(v[np.isfinite(v)])
    total = v.size
    cdf = [(float(x), (i + 1) / total) for i, x in enumerate(finite)]
    return cdf, 1.0 - finite.size / total


def ellipse_samples(scenario: Scenario, points, scale: float = 20.0, threads: int = 1):
    """Scaled error ellipses at sample points.

    Returns ``(ellipses, warnings)``; ``ellipses`` holds
    ``(x, y, Ellipse)`` for resolvable points and ``warnings`` the points
    that were skipped because their EFIM is singular.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    res = evaluate_points(scenario, pts, threads=threads)
    out, warnings = [], []
    for p, J in zip(pts, res.efim):
        e = fim.error_ellipse(J, scale) if np.all(np.isfinite(J)) else None
        if e is None:
            warnings.append((float(p[0]), float(p[1]), "singular position EFIM"))
            log.warning("no ellipse at (%.3f, %.3f): singular position EFIM", p[0], p[1])
            continue
        out.append((float(p[0]), float(p[1]), e))
    return out, warnings
