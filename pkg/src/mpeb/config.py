"""Scenario configuration files (TOML).

Parsing problems (bad syntax, missing sections, wrong value types) raise
:class:`ConfigParseError`; a well-formed file that describes an invalid
scenario raises :class:`ConfigConstraintError` listing every violation.
"""

from __future__ import annotations

import re
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .channel import DmParams, SignalParams
from .evaluate import DECOMPOSITIONS, KINDS, MODELS, GridSpec, Scenario
from .geometry import Floorplan, GeometryError, Wall


class ConfigParseError(ValueError):
    pass


class ConfigConstraintError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


_TIME_UNITS = {"s": 1.0, "ms": 1e-3, "us": 1e-6, "ns": 1e-9, "ps": 1e-12}
_LENGTH_UNITS = {"m": 1.0, "cm": 1e-2, "mm": 1e-3}
_QUANTITY = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*([a-z]*)\s*$")


def _quantity(value, units: dict, default: str, what: str) -> float:
    if isinstance(value, bool):
        raise ConfigParseError(f"{what}: expected a number, got {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        m = _QUANTITY.match(value)
        if m:
            unit = m.group(2) or default
            if unit in units:
                return float(m.group(1)) * units[unit]
    raise ConfigParseError(f"{what}: cannot interpret {value!r}")


def parse_duration(value, what: str = "duration") -> float:
    """Seconds from a number (seconds) or a string such as ``"0.5ns"``."""
    return _quantity(value, _TIME_UNITS, "s", what)


def parse_length(value, what: str = "length") -> float:
    """Meters from a number or a string such as ``"2cm"``."""
    return _quantity(value, _LENGTH_UNITS, "m", what)


@dataclass(frozen=True)
class Node:
    id: str
    x: float
    y: float
    roles: tuple = ()

    @property
    def position(self):
        return (self.x, self.y)


@dataclass(frozen=True)
class OutputSpec:
    map: str = "map.csv"
    cdf: str = "cdf.csv"
    ellipses: str = "ellipses.csv"
    vas: str = "vas.csv"
    raster: Optional[str] = None
    log_min: float = -3.0
    log_max: float = 1.0
    ellipse_points: tuple = ()
    ellipse_spacing: float = 1.0
    ellipse_scale: float = 20.0


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything needed to run one study, as read from a config file."""

    plan: Floorplan
    kind: str
    anchors: tuple
    agents: tuple
    moving: Node
    sync_groups: tuple = ()
    coop_links: tuple = ()
    decomposition: str = "total"
    q_max: int = 2
    signal: SignalParams = SignalParams()
    dm: DmParams = DmParams()
    model: str = "full"
    spacing: float = 0.1
    wall_margin: float = 0.01
    output: OutputSpec = OutputSpec()
    source: Optional[str] = None

    def scenario(self) -> Scenario:
        mono = [self.moving.id] if "mono" in self.moving.roles or self.kind == "mono" else []
        mono += [a.id for a in self.agents if "mono" in a.roles]
        return Scenario(
            plan=self.plan, kind=self.kind,
            anchors={a.id: a.position for a in self.anchors},
            agents={a.id: a.position for a in self.agents},
            moving=self.moving.id,
            sync_groups=tuple(tuple(g) for g in self.sync_groups),
            coop_links=tuple(tuple(link) for link in self.coop_links),
            mono_agents=tuple(mono), decomposition=self.decomposition,
            q_max=self.q_max, signal=self.signal, dm=self.dm, model=self.model)

    def grid(self) -> GridSpec:
        return GridSpec.for_plan(self.plan, self.spacing)

    def grid_points(self) -> np.ndarray:
        return self.grid().points(self.plan, self.wall_margin)

    def with_overrides(self, pulse=None, spacing=None, q_max=None, model=None) -> "ScenarioConfig":
        cfg = self
        if pulse is not None:
            cfg = replace(cfg, signal=cfg.signal.with_pulse(parse_duration(pulse, "pulse")))
        if spacing is not None:
            cfg = replace(cfg, spacing=parse_length(spacing, "spacing"))
        if q_max is not None:
            cfg = replace(cfg, q_max=int(q_max))
        if model is not None:
            cfg = replace(cfg, model=model)
        problems = cfg.problems()
        if problems:
            raise ConfigConstraintError(problems)
        return cfg

    def problems(self) -> list:
        """All constraint violations (empty when valid)."""
        out = []
        nodes = list(self.anchors) + list(self.agents) + [self.moving]
        ids = [n.id for n in nodes]
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        if dupes:
            out.append(f"duplicate node ids: {', '.join(dupes)}")
        pts = np.array([n.position for n in nodes[:-1]]).reshape(-1, 2)
        if len(pts):
            # nodes may sit on the boundary (the reference anchor does)
            inside = self.plan.on_or_inside(pts)
            for n, ok in zip(nodes, inside):
                if not ok:
                    out.append(f"node {n.id!r} at ({n.x}, {n.y}) is not inside the floorplan")
        known = set(ids)
        if self.kind not in KINDS:
            out.append(f"scenario type must be one of {', '.join(KINDS)}")
        if self.model not in MODELS:
            out.append(f"model must be one of {', '.join(MODELS)}")
        if self.decomposition not in DECOMPOSITIONS:
            out.append(f"decomposition must be one of {', '.join(DECOMPOSITIONS)}")
        if self.q_max < 0:
            out.append("q_max must be non-negative")
        if not self.spacing > 0:
            out.append("grid spacing must be positive")
        if self.kind in ("toa", "tdoa") and not self.anchors:
            out.append(f"{self.kind} scenario needs at least one anchor")
        if self.kind != "coop" and self.agents:
            out.append(f"{self.kind} scenario cannot have resting agents")
        if self.kind == "mono" and self.q_max < 1:
            out.append("mono scenario needs q_max >= 1")
        if self.kind != "tdoa" and self.sync_groups:
            out.append("sync groups are only valid for tdoa scenarios")
        seen = set()
        for g in self.sync_groups:
            for a in g:
                if a not in {x.id for x in self.anchors}:
                    out.append(f"sync group member {a!r} is not an anchor")
                elif a in seen:
                    out.append(f"anchor {a!r} appears in more than one sync group")
                seen.add(a)
        if self.kind == "coop":
            if not self.coop_links and "mono" not in self.moving.roles:
                out.append("coop scenario has no measurement involving the moving agent")
            coop_ids = {n.id for n in nodes if "coop" in n.roles} | {a.id for a in self.anchors}
            for tx, rx in self.coop_links:
                for end in (tx, rx):
                    if end not in known:
                        out.append(f"coop link endpoint {end!r} is not a known node")
                    elif end not in coop_ids:
                        out.append(f"coop link endpoint {end!r} lacks the 'coop' role")
                if tx == rx:
                    out.append(f"coop link {tx!r} -> {rx!r} connects a node to itself")
        elif self.coop_links:
            out.append("coop links are only valid for coop scenarios")
        o = self.output
        if not o.log_max > o.log_min:
            out.append("output log_max must exceed log_min")
        if not o.ellipse_scale > 0:
            out.append("ellipse scale must be positive")
        if o.ellipse_points:
            ep = np.asarray(o.ellipse_points, dtype=float)
            if not np.all(self.plan.contains(ep)):
                out.append("ellipse points must lie inside the floorplan")
        elif not o.ellipse_spacing > 0:
            out.append("ellipse spacing must be positive")
        return out

    def validate(self) -> "ScenarioConfig":
        problems = self.problems()
        if problems:
            raise ConfigConstraintError(problems)
        return self


# --------------------------------------------------------------------------
# parsing

def _table(doc, key, required=False) -> dict:
    val = doc.get(key)
    if val is None:
        if required:
            raise ConfigParseError(f"missing section [{key}]")
        return {}
    if not isinstance(val, dict):
        raise ConfigParseError(f"[{key}] must be a table")
    return val


def _number(tbl, key, default, what=None):
    val = tbl.get(key, default)
    if val is None:
        return None
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigParseError(f"{what or key}: expected a number, got {val!r}")
    return float(val)


def _point(val, what):
    if (not isinstance(val, (list, tuple)) or len(val) != 2
            or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in val)):
        raise ConfigParseError(f"{what}: expected [x, y], got {val!r}")
    return (float(val[0]), float(val[1]))


def _nodes(doc, key) -> tuple:
    items = doc.get(key, [])
    if not isinstance(items, list):
        raise ConfigParseError(f"[[{key}]] must be an array of tables")
    out = []
    for i, item in enumerate(items):
        if not isinstance(item, dict):
            raise ConfigParseError(f"{key}[{i}] must be a table")
        out.append(_node(item, f"{key}[{i}]"))
    return tuple(out)


def _node(item, what) -> Node:
    if "id" not in item:
        raise ConfigParseError(f"{what}: missing id")
    roles = item.get("roles", [])
    if not isinstance(roles, list) or not all(isinstance(r, str) for r in roles):
        raise ConfigParseError(f"{what}: roles must be a list of strings")
    for k in ("x", "y"):
        if k not in item:
            raise ConfigParseError(f"{what}: missing {k}")
    return Node(id=str(item["id"]), x=_number(item, "x", None, f"{what}.x"),
                y=_number(item, "y", None, f"{what}.y"), roles=tuple(roles))


def _floorplan(doc) -> Floorplan:
    fp = _table(doc, "floorplan", required=True)
    if fp.get("rectangle") is not None:
        size = _point(fp["rectangle"], "floorplan.rectangle")
        if "boundary" in fp or "walls" in fp:
            raise ConfigParseError("floorplan: give either rectangle or boundary/walls")
        try:
            return Floorplan.rectangle(*size)
        except GeometryError as exc:
            raise ConfigConstraintError([f"floorplan: {exc}"]) from exc
    if "boundary" not in fp:
        raise ConfigParseError("floorplan: missing boundary (or rectangle)")
    if not isinstance(fp["boundary"], list):
        raise ConfigParseError("floorplan.boundary must be a list of points")
    boundary = [_point(p, "floorplan.boundary") for p in fp["boundary"]]
    walls_raw = fp.get("walls")
    try:
        if walls_raw is None:
            n = len(boundary)
            walls = [Wall(boundary[i], boundary[(i + 1) % n]) for i in range(n)]
        else:
            if not isinstance(walls_raw, list):
                raise ConfigParseError("floorplan.walls must be a list of [[x, y], [x, y]]")
            walls = []
            for w in walls_raw:
                if not isinstance(w, list) or len(w) != 2:
                    raise ConfigParseError(f"floorplan.walls: bad wall {w!r}")
                walls.append(Wall(_point(w[0], "wall"), _point(w[1], "wall")))
        return Floorplan(walls=tuple(walls), boundary=tuple(boundary))
    except GeometryError as exc:
        raise ConfigConstraintError([f"floorplan: {exc}"]) from exc


def _id_lists(val, what, pair=False) -> tuple:
    if val is None:
        return ()
    if not isinstance(val, list) or not all(
            isinstance(g, list) and all(isinstance(x, str) for x in g) for g in val):
        raise ConfigParseError(f"{what} must be a list of lists of ids")
    if pair and any(len(g) != 2 for g in val):
        raise ConfigParseError(f"{what} entries must be [tx, rx] pairs")
    return tuple(tuple(g) for g in val)


def config_from_dict(doc: dict, source: Optional[str] = None) -> ScenarioConfig:
    sc = _table(doc, "scenario", required=True)
    kind = sc.get("type")
    if not isinstance(kind, str):
        raise ConfigParseError("scenario.type must be a string")
    q_max = sc.get("q_max", 2)
    if isinstance(q_max, bool) or not isinstance(q_max, int):
        raise ConfigParseError("scenario.q_max must be an integer")
    model = sc.get("model", "full")
    decomposition = sc.get("decomposition", "total")
    for k, v in (("model", model), ("decomposition", decomposition)):
        if not isinstance(v, str):
            raise ConfigParseError(f"scenario.{k} must be a string")

    moving_raw = sc.get("moving_agent", {"id": "agent", "x": 0.0, "y": 0.0})
    if not isinstance(moving_raw, dict):
        raise ConfigParseError("scenario.moving_agent must be a table")
    moving_raw = {"x": 0.0, "y": 0.0, **moving_raw}
    moving = _node(moving_raw, "scenario.moving_agent")

    sig = _table(doc, "signal")
    try:
        signal = SignalParams(
            carrier=_number(sig, "carrier_hz", 7e9),
            pulse_duration=parse_duration(sig.get("pulse_duration", 1e-9), "signal.pulse_duration"),
            rolloff=_number(sig, "rolloff", 0.6),
            noise_psd=_number(sig, "noise_psd", 1e-8),
            sample_period=(parse_duration(sig["sample_period"], "signal.sample_period")
                           if "sample_period" in sig else None),
            nyquist_period=(parse_duration(sig["nyquist_period"], "signal.nyquist_period")
                            if "nyquist_period" in sig else None),
            reflection_loss_db=_number(sig, "reflection_loss_db", 3.0),
        )
        d = _table(doc, "dm")
        dm = DmParams(
            omega1=_number(d, "omega1", 1.16e-6),
            gamma1=parse_duration(d.get("gamma1", 20e-9), "dm.gamma1"),
            gamma_rise=parse_duration(d.get("gamma_rise", 5e-9), "dm.gamma_rise"),
            chi=_number(d, "chi", 0.98),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigParseError):
            raise
        raise ConfigConstraintError([str(exc)]) from exc

    grid = _table(doc, "grid")
    out = _table(doc, "output")
    ep = out.get("ellipse_points", [])
    if not isinstance(ep, list):
        raise ConfigParseError("output.ellipse_points must be a list of points")
    strings = {}
    for k in ("map", "cdf", "ellipses", "vas", "raster"):
        if k in out and not isinstance(out[k], str):
            raise ConfigParseError(f"output.{k} must be a path string")
        if k in out:
            strings[k] = out[k]
    output = OutputSpec(
        **strings,
        log_min=_number(out, "log_min", -3.0), log_max=_number(out, "log_max", 1.0),
        ellipse_points=tuple(_point(p, "output.ellipse_points") for p in ep),
        ellipse_spacing=parse_length(out.get("ellipse_spacing", 1.0), "output.ellipse_spacing"),
        ellipse_scale=_number(out, "ellipse_scale", 20.0),
    )

    return ScenarioConfig(
        plan=_floorplan(doc), kind=kind, anchors=_nodes(doc, "anchors"),
        agents=_nodes(doc, "agents"), moving=moving,
        sync_groups=_id_lists(sc.get("sync_groups"), "scenario.sync_groups"),
        coop_links=_id_lists(sc.get("coop_links"), "scenario.coop_links", pair=True),
        decomposition=decomposition, q_max=q_max, signal=signal, dm=dm, model=model,
        spacing=parse_length(grid.get("spacing", 0.1), "grid.spacing"),
        wall_margin=parse_length(grid.get("wall_margin", 0.01), "grid.wall_margin"),
        output=output, source=source,
    )


def load_config(path) -> ScenarioConfig:
    """Read and validate a scenario config file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigParseError(f"cannot read {path}: {exc}") from exc
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigParseError(f"{path}: {exc}") from exc
    return config_from_dict(doc, source=str(path)).validate()


def ellipse_points(cfg: ScenarioConfig) -> np.ndarray:
    """Ellipse sample points: explicit list or a coarse grid over the room."""
    if cfg.output.ellipse_points:
        return np.asarray(cfg.output.ellipse_points, dtype=float)
    grid = GridSpec.for_plan(cfg.plan, cfg.output.ellipse_spacing)
    return grid.points(cfg.plan, cfg.wall_margin)
