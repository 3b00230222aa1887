"""Command line interface: validate configs, dump VAs, compute maps, CDFs and ellipses.

Exit codes: 0 success, 2 parse error, 3 constraint violation, 4 write failure.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import evaluate
from .config import ConfigConstraintError, ConfigParseError, ellipse_points, load_config
from .geometry import GeometryError, build_vas

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_CONSTRAINT = 3
EXIT_WRITE = 4

THREADS_ENV = "MPEB_THREADS"
PROGRESS_EVERY = 1000


class WriteError(OSError):
    pass


def fmt(x) -> str:
    """Float with 17 significant digits; infinities as ``inf``."""
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def write_csv(path, header, rows) -> None:
    path = Path(path)
    try:
        if path.parent and not path.parent.exists():
            path.parent.mkdir(parents=True)
        with path.open("w", newline="", encoding="ascii") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    except OSError as exc:
        raise WriteError(f"cannot write {path}: {exc}") from exc


def write_pgm(path, grid, points, peb, log_min: float, log_max: float) -> None:
    """8-bit portable graymap of ``log10(PEB)``, top row = largest y.

    Values are scaled linearly from ``log_min`` (black) to ``log_max``
    (white); infinite PEB is white and masked cells are black.
    """
    img = np.zeros((grid.ny, grid.nx), dtype=np.uint8)
    ix = np.rint((points[:, 0] - grid.origin[0]) / grid.spacing - 0.5).astype(int)
    iy = np.rint((points[:, 1] - grid.origin[1]) / grid.spacing - 0.5).astype(int)
    with np.errstate(divide="ignore"):
        lv = np.log10(peb)
    lv = np.where(np.isfinite(lv), lv, log_max)
    scaled = np.clip((lv - log_min) / (log_max - log_min), 0.0, 1.0)
    img[grid.ny - 1 - iy, ix] = np.rint(scaled * 255).astype(np.uint8)
    path = Path(path)
    try:
        if path.parent and not path.parent.exists():
            path.parent.mkdir(parents=True)
        with path.open("wb") as fh:
            fh.write(f"P5\n{grid.nx} {grid.ny}\n255\n".encode("ascii"))
            fh.write(img.tobytes())
    except OSError as exc:
        raise WriteError(f"cannot write {path}: {exc}") from exc


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


# --------------------------------------------------------------------------
# commands

def cmd_validate(args) -> int:
    cfg = load_config(args.config)
    n = len(cfg.grid_points())
    print(f"{args.config}: valid ({cfg.kind}, {len(cfg.anchors)} anchors, "
          f"{len(cfg.agents)} resting agents, {n} grid points)")
    return EXIT_OK


def cmd_vas(args) -> int:
    cfg = _load(args)
    rows = []
    nodes = list(cfg.anchors) + list(cfg.agents)
    for node in nodes:
        for i, va in enumerate(build_vas(node.position, cfg.plan, cfg.q_max)):
            rows.append([node.id, i, fmt(va.position[0]), fmt(va.position[1]), va.order,
                         fmt(va.effective_angle), "-".join(str(w) for w in va.wall_sequence)])
    out = args.output or cfg.output.vas
    write_csv(out, ["anchor_id", "va_index", "x", "y", "Q", "nu_rad", "wall_sequence"], rows)
    _say(args, f"wrote {len(rows)} virtual anchors to {out}")
    return EXIT_OK


def _compute_map(cfg, args):
    pts = cfg.grid_points()
    reporter = _progress(args)
    res = evaluate.evaluate_points(cfg.scenario(), pts, threads=args.threads, progress=reporter)
    return pts, res


def cmd_map(args) -> int:
    cfg = _load(args)
    pts, res = _compute_map(cfg, args)
    out = args.output or cfg.output.map
    rows = [[fmt(p[0]), fmt(p[1]), fmt(v), int(d)]
            for p, v, d in zip(pts, res.peb, res.degenerate)]
    write_csv(out, ["x", "y", "peb", "degenerate"], rows)
    raster = args.raster or cfg.output.raster
    if raster:
        write_pgm(raster, cfg.grid(), pts, res.peb, cfg.output.log_min, cfg.output.log_max)
    finite = res.peb[np.isfinite(res.peb)]
    med = fmt(np.median(finite)) if finite.size else "inf"
    _say(args, f"wrote {len(rows)} points to {out} (median PEB {med} m)")
    return EXIT_OK


def cmd_cdf(args) -> int:
    cfg = _load(args)
    _, res = _compute_map(cfg, args)
    cdf, unresolved = evaluate.peb_cdf(res.peb)
    out = args.output or cfg.output.cdf
    write_csv(out, ["peb", "fraction"], [[fmt(v), fmt(f)] for v, f in cdf])
    print(f"unresolved fraction {fmt(unresolved)}")
    _say(args, f"wrote {len(cdf)} CDF points to {out}")
    return EXIT_OK


def cmd_ellipses(args) -> int:
    cfg = _load(args)
    pts = ellipse_points(cfg)
    scale = args.scale if args.scale is not None else cfg.output.ellipse_scale
    ells, warnings = evaluate.ellipse_samples(cfg.scenario(), pts, scale=scale,
                                              threads=args.threads)
    out = args.output or cfg.output.ellipses
    write_csv(out, ["x", "y", "a", "b", "theta"],
              [[fmt(x), fmt(y), fmt(e.a), fmt(e.b), fmt(e.theta)] for x, y, e in ells])
    for x, y, why in warnings:
        print(f"warning: no ellipse at ({fmt(x)}, {fmt(y)}): {why}", file=sys.stderr)
    _say(args, f"wrote {len(ells)} ellipses to {out}")
    return EXIT_OK


def _load(args):
    cfg = load_config(args.config)
    return cfg.with_overrides(pulse=getattr(args, "pulse", None),
                              spacing=getattr(args, "spacing", None),
                              q_max=getattr(args, "q_max", None),
                              model=getattr(args, "model", None))


def _say(args, msg):
    if not getattr(args, "quiet", False):
        print(msg)


def _progress(args):
    if args.quiet:
        return None
    state = {"next": PROGRESS_EVERY}

    def report(done, total):
        while done >= state["next"]:
            print(f"progress {state['next']}/{total}", flush=True)
            state["next"] += PROGRESS_EVERY

    return report


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mpeb", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="check a scenario config")
    v.add_argument("config")
    v.set_defaults(func=cmd_validate)

    va = sub.add_parser("vas", help="dump virtual anchors as CSV")
    va.add_argument("config")
    va.add_argument("-o", "--output")
    va.add_argument("--q-max", type=int)
    va.add_argument("--quiet", action="store_true")
    va.set_defaults(func=cmd_vas)

    for name, func, help_ in (("map", cmd_map, "PEB over the grid"),
                              ("cdf", cmd_cdf, "empirical CDF of the PEB map"),
                              ("ellipses", cmd_ellipses, "error ellipses at sample points")):
        c = sub.add_parser(name, help=help_)
        c.add_argument("config")
        c.add_argument("-o", "--output")
        c.add_argument("--pulse", help="pulse duration, e.g. 0.5ns")
        c.add_argument("--spacing", help="grid spacing, e.g. 0.02 or 2cm")
        c.add_argument("--q-max", type=int)
        c.add_argument("--model", choices=evaluate.MODELS)
        c.add_argument("--threads", type=int, default=default_threads(),
                       help=f"worker threads (default ${THREADS_ENV} or 1)")
        c.add_argument("--quiet", action="store_true", help="suppress progress lines")
        if name == "map":
            c.add_argument("--raster", help="also write a PGM of log10 PEB")
        if name == "ellipses":
            c.add_argument("--scale", type=float)
        c.set_defaults(func=func)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_PARSE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except ConfigParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (ConfigConstraintError, GeometryError) as exc:
        problems = getattr(exc, "problems", [str(exc)])
        for msg in problems:
            print(f"error: {msg}", file=sys.stderr)
        return EXIT_CONSTRAINT
    except WriteError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_WRITE


if __name__ == "__main__":
    sys.exit(main())
