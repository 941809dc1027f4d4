"""Pipeline driver: subcommands over the tessellation, fence, partition,
shape-maximization, and perimeter-sweep stages.

Configuration comes from an optional flat JSON file plus command-line
flags; flags win. All floats in CSV output are written with repr so a
repeated run with the same seed produces byte-identical files.
Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import fem, phase_field, shape_opt, voronoi_cap
from .errors import NotConverged, PerimaxError
from .geom2d import Polygon, regular_polygon
from .phase_field import GAMMA, MMParams
from .shape_opt import FlowConfig, RadialShape

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

PHASE_COLORS = [
    "#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860",
    "#da8bc3", "#8c8c8c", "#ccb974", "#64b5cd", "#4878d0", "#ee854a",
]


class ConfigError(Exception):
    pass


def _fmt(x) -> str:
    return repr(float(x))


def _write_csv(path: Path, header: str, rows) -> None:
    lines = [header]
    for row in rows:
        lines.append(",".join(str(c) if isinstance(c, (int, str)) else _fmt(c) for c in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# configuration


_KEYS = {
    "voronoi-init": {"out", "seed", "n", "fractions", "equal", "polygon", "restarts", "allow_partial"},
    "fence": {"out", "seed", "epsilon", "h", "fractions", "polygon", "allow_partial"},
    "partition": {"out", "seed", "epsilon", "h", "n", "fractions", "polygon", "restarts", "allow_partial"},
    "maximize": {"out", "seed", "epsilon", "niter", "alpha", "nmod", "n", "fractions",
                 "restarts", "modes", "perturb", "allow_partial"},
    "perimtrack": {"out", "seed", "tmin", "tmax", "tstep"},
}


def _load_config(args, command: str) -> dict:
    allowed = _KEYS[command]
    cfg = {}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = sorted(set(data) - allowed)
        if unknown:
            raise ConfigError(f"unknown config keys for {command}: {', '.join(unknown)}")
        cfg.update(data)
    for key in allowed:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return cfg


def _fractions(cfg, n_default=None):
    """Resolve (n, fractions) from the n / fractions / equal settings."""
    raw = cfg.get("fractions")
    n = cfg.get("n")
    if raw is not None:
        if isinstance(raw, str):
            try:
                fr = tuple(float(s) for s in raw.split(","))
            except ValueError as exc:
                raise ConfigError(f"bad fractions {raw!r}") from exc
        else:
            fr = tuple(float(s) for s in raw)
        if n is not None and n != len(fr):
            raise ConfigError(f"n = {n} but {len(fr)} fractions given")
        return len(fr), fr
    if n is None:
        n = n_default
    if n is None:
        raise ConfigError("need --n or --fractions")
    if n < 1:
        raise ConfigError("n must be at least 1")
    return n, (1.0 / n,) * n


def _positive(cfg, key, default):
    val = float(cfg.get(key, default))
    if not (val > 0 and math.isfinite(val)):
        raise ConfigError(f"{key} must be positive, got {val}")
    return val


def _out_dir(cfg) -> Path:
    out = Path(cfg.get("out", "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _domain_polygon(spec: str) -> Polygon:
    if spec == "square":
        return Polygon([(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)])
    if spec == "disk":
        return regular_polygon(64)
    if spec.startswith("csv:"):
        path = spec[4:]
        try:
            pts = np.loadtxt(path, delimiter=",", ndmin=2)
        except OSError as exc:
            raise ConfigError(f"cannot read polygon file {path}: {exc}") from exc
        return Polygon(pts)
    raise ConfigError(f"polygon must be square, disk, or csv:PATH, got {spec!r}")


def _domain_mesh(spec: str, h: float) -> fem.TriMesh:
    if spec == "square":
        return fem.structured_rectangle_mesh(0.0, 0.0, 1.0, 1.0, h)
    if spec == "disk":
        return fem.mesh_from_radial(lambda t: np.ones_like(t), h)
    raise ConfigError(f"meshed domains support square and disk, got {spec!r}")


# ---------------------------------------------------------------------------
# SVG output


def _svg_open(lines, xmin, ymin, xmax, ymax, size=640):
    w = xmax - xmin
    h = ymax - ymin
    pad = 0.03 * max(w, h)
    lines.append(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" '
        f'viewBox="{_fmt(xmin - pad)} {_fmt(-ymax - pad)} {_fmt(w + 2 * pad)} {_fmt(h + 2 * pad)}">'
    )


def _pts(vertices) -> str:
    return " ".join(f"{_fmt(x)},{_fmt(-y)}" for x, y in vertices)


def _write_cells_svg(path: Path, omega: Polygon, cells) -> None:
    lo = omega.vertices.min(axis=0)
    hi = omega.vertices.max(axis=0)
    lines = []
    _svg_open(lines, lo[0], lo[1], hi[0], hi[1])
    sw = _fmt(0.004 * max(hi - lo))
    for cell in cells:
        if cell.polygon is None:
            continue
        color = PHASE_COLORS[cell.index % len(PHASE_COLORS)]
        lines.append(
            f'<polygon points="{_pts(cell.polygon.vertices)}" fill="{color}" '
            f'fill-opacity="0.35" stroke="black" stroke-width="{sw}"/>'
        )
    lines.append(
        f'<polygon points="{_pts(omega.vertices)}" fill="none" stroke="black" stroke-width="{sw}"/>'
    )
    lines.append("</svg>")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _write_density_svg(path: Path, mesh: fem.TriMesh, us: np.ndarray) -> None:
    """Triangles filled per phase: hue by dominant phase, darkness by value."""
    lo = mesh.nodes.min(axis=0)
    hi = mesh.nodes.max(axis=0)
    lines = []
    _svg_open(lines, lo[0], lo[1], hi[0], hi[1])
    tri_vals = us[:, mesh.triangles].mean(axis=2)
    dominant = tri_vals.argmax(axis=0)
    strength = tri_vals.max(axis=0)
    for t, tri in enumerate(mesh.triangles):
        if us.shape[0] == 1:
            g = int(round(255 * (1.0 - tri_vals[0, t])))
            color = f"rgb({g},{g},{g})"
        else:
            color = PHASE_COLORS[dominant[t] % len(PHASE_COLORS)]
        lines.append(
            f'<polygon points="{_pts(mesh.nodes[tri])}" fill="{color}" '
            f'fill-opacity="{_fmt(min(1.0, strength[t]))}" stroke="none"/>'
        )
    lines.append("</svg>")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _write_curve_svg(path: Path, xs, ys, label: str) -> None:
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    yspan = ys.max() - ys.min() or 1.0
    scale = (xs.max() - xs.min()) / yspan
    pts = np.column_stack([xs, (ys - ys.min()) * scale])
    lines = []
    _svg_open(lines, xs.min(), 0.0, xs.max(), (ys.max() - ys.min()) * scale)
    sw = _fmt(0.004 * (xs.max() - xs.min()))
    lines.append(f'<polyline points="{_pts(pts)}" fill="none" stroke="#4c72b0" stroke-width="{sw}"/>')
    lines.append(f"<!-- {label}: y from {_fmt(ys.min())} to {_fmt(ys.max())} -->")
    lines.append("</svg>")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _write_shape_svg(path: Path, shape: RadialShape) -> None:
    t = np.linspace(0.0, 2.0 * math.pi, 512, endpoint=False)
    rho, _ = shape_opt.radial_eval(shape, t)
    xy = np.column_stack([rho * np.cos(t), rho * np.sin(t)])
    r = rho.max()
    lines = []
    _svg_open(lines, -r, -r, r, r)
    lines.append(
        f'<polygon points="{_pts(xy)}" fill="#4c72b0" fill-opacity="0.25" '
        f'stroke="black" stroke-width="{_fmt(0.008 * r)}"/>'
    )
    lines.append("</svg>")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# subcommands


def cmd_voronoi_init(args) -> int:
    cfg = _load_config(args, "voronoi-init")
    out = _out_dir(cfg)
    omega = _domain_polygon(cfg.get("polygon", "square"))
    n, fractions = _fractions(cfg)
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"fractions sum to {sum(fractions)!r}, expected 1")
    seed = int(cfg.get("seed", 0))
    restarts = int(cfg.get("restarts", 5))
    targets = np.asarray(fractions) * omega.area

    if n == 1:
        pts = omega.vertices.mean(axis=0)[None, :]
        areas = np.array([omega.area])
        tags = [("O", k) for k in range(len(omega.vertices))]
        cells = [voronoi_cap.ClippedCell(index=0, polygon=omega, edge_tags=tags)]
        converged = True
    else:
        best = None
        for r in range(restarts):
            rng = np.random.default_rng(seed + r)
            pts0 = voronoi_cap.sample_points_in_polygon(omega, n, rng)
            for _ in range(5):
                pts0 = voronoi_cap.lloyd_step(pts0, omega)
            try:
                res = voronoi_cap.solve_capacity_constrained(pts0, omega, targets, mode="areas-only", seed=seed + r)
            except (PerimaxError, NotConverged):
                continue
            if best is None or res.residual < best.residual:
                best = res
        if best is None:
            print("capacity solve failed on every restart", file=sys.stderr)
            return EXIT_NUMERIC
        pts, areas, converged = best.points, best.areas, best.converged
        cells = [c for c in voronoi_cap.clip_cells(pts, omega)]

    _write_csv(out / "points.csv", "x,y", ((p[0], p[1]) for p in pts))
    _write_csv(
        out / "areas.csv",
        "cell,area,target,deviation",
        ((i, areas[i], targets[i], areas[i] - targets[i]) for i in range(n)),
    )
    _write_cells_svg(out / "cells.svg", omega, cells)
    dev = np.abs(areas - targets).max()
    print(f"{n} cells, max area deviation {dev:.3e}")
    if not converged and not cfg.get("allow_partial"):
        print("capacity solve did not reach tolerance", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def _run_fence(cfg):
    epsilon = _positive(cfg, "epsilon", 0.05)
    h = _positive(cfg, "h", epsilon / 2.0)
    mesh = _domain_mesh(cfg.get("polygon", "square"), h)
    if cfg.get("fractions") is None:
        fractions = (0.5,)
    else:
        _, fractions = _fractions(cfg)
    if len(fractions) != 1:
        raise ConfigError("fence takes a single volume fraction")
    c = fractions[0]
    if not 0.0 < c < 1.0:
        raise ConfigError(f"fraction must lie in (0, 1), got {c}")
    m = fem.lumped_mass_vector(mesh)
    x = mesh.nodes[:, 0]
    u0 = (x - x.min()) / (x.max() - x.min())
    field, energy, report = phase_field.minimize_single(
        u0, mesh, MMParams(epsilon), target=c * m.sum(), full_output=True
    )
    return mesh, field.values[None, :], energy, report


def cmd_fence(args) -> int:
    cfg = _load_config(args, "fence")
    out = _out_dir(cfg)
    mesh, us, energy, report = _run_fence(cfg)
    _write_csv(
        out / "density.csv",
        "node,x,y,u",
        ((i, mesh.nodes[i, 0], mesh.nodes[i, 1], us[0, i]) for i in range(mesh.n_nodes)),
    )
    _write_csv(out / "energy_history.csv", "iteration,energy",
               ((i, e) for i, e in enumerate(report.history)))
    _write_density_svg(out / "density.svg", mesh, us)
    print(f"energy {energy!r}")
    print(f"energy/gamma {energy / GAMMA!r}")
    if not report.converged and not cfg.get("allow_partial"):
        print("inner minimization did not converge", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_partition(args) -> int:
    cfg = _load_config(args, "partition")
    out = _out_dir(cfg)
    epsilon = _positive(cfg, "epsilon", 0.05)
    h = _positive(cfg, "h", epsilon / 2.0)
    spec = cfg.get("polygon", "square")
    mesh = _domain_mesh(spec, h)
    n, fractions = _fractions(cfg)
    if n < 2:
        raise ConfigError("partition needs at least 2 phases")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"fractions sum to {sum(fractions)!r}, expected 1")
    seed = int(cfg.get("seed", 0))
    restarts = int(cfg.get("restarts", 5))
    omega = Polygon(mesh.nodes[mesh.boundary_nodes])
    init = voronoi_cap.generate_initialization(
        omega, mesh, np.asarray(fractions) * omega.area, restarts=restarts, seed=seed
    )
    m = fem.lumped_mass_vector(mesh)
    fields, energy, report = phase_field.minimize_multi(
        init.fields, mesh, MMParams(epsilon), np.asarray(fractions) * m.sum(), full_output=True
    )
    us = np.stack([f.values for f in fields])
    header = "node,x,y," + ",".join(f"u{i}" for i in range(n))
    _write_csv(
        out / "density.csv",
        header,
        (
            (i, mesh.nodes[i, 0], mesh.nodes[i, 1], *us[:, i])
            for i in range(mesh.n_nodes)
        ),
    )
    _write_csv(out / "energy_history.csv", "iteration,energy",
               ((i, e) for i, e in enumerate(report.history)))
    _write_density_svg(out / "density.svg", mesh, us)
    print(f"energy {energy!r}")
    print(f"energy/gamma {energy / GAMMA!r}")
    if not report.converged and not cfg.get("allow_partial"):
        print("inner minimization did not converge", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_maximize(args) -> int:
    cfg = _load_config(args, "maximize")
    out = _out_dir(cfg)
    if "fractions" not in cfg and int(cfg.get("n", 1)) == 1:
        cfg["fractions"] = [0.5]
    n, fractions = _fractions(cfg, n_default=1)
    n_modes = int(cfg.get("modes", 8))
    if n_modes < 1:
        raise ConfigError("modes must be at least 1")
    perturb = float(cfg.get("perturb", 0.0))
    a = [0.0] * n_modes
    if perturb:
        a[min(1, n_modes - 1)] = perturb
    try:
        flow_cfg = FlowConfig(
            n_phases=n,
            fractions=fractions,
            n_iter=int(cfg.get("niter", 150)),
            alpha0=float(cfg.get("alpha", 0.5)),
            n_mod=int(cfg.get("nmod", 30)),
            epsilon=float(cfg.get("epsilon", 0.05)),
            seed=int(cfg.get("seed", 0)),
            restarts=int(cfg.get("restarts", 5)),
        )
        shape0 = RadialShape(1.0, tuple(a), (0.0,) * n_modes)
    except (ValueError, PerimaxError) as exc:
        raise ConfigError(str(exc)) from exc

    def snapshot(record, shape):
        if record.iteration % flow_cfg.n_mod == 0:
            _write_shape_svg(out / f"shape_{record.iteration:04d}.svg", shape)

    shape, trace = shape_opt.gradient_flow(flow_cfg, shape0, callback=snapshot)
    _write_csv(
        out / "trace.csv",
        "iteration,cost,energy,energy_over_gamma,alpha,inner_iters,converged",
        trace.rows(),
    )
    (out / "shape.json").write_text(
        json.dumps({"a0": shape.a0, "a": list(shape.a), "b": list(shape.b)}, indent=2) + "\n",
        encoding="utf-8",
    )
    _write_shape_svg(out / "shape_final.svg", shape)
    if trace.records:
        last = trace.records[-1]
        print(f"final cost {last.cost!r}")
        print(f"isoperimetric ratio {shape_opt.isoperimetric_ratio(shape)!r}")
    if trace.aborted:
        print(f"flow aborted: {trace.aborted}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_perimtrack(args) -> int:
    cfg = _load_config(args, "perimtrack")
    out = _out_dir(cfg)
    tmin = float(cfg.get("tmin", 1.5))
    tmax = float(cfg.get("tmax", 2.5))
    tstep = _positive(cfg, "tstep", 0.01)
    if tmax <= tmin:
        raise ConfigError("tmax must exceed tmin")
    omega = Polygon([(-3.0, -3.0), (3.0, -3.0), (3.0, 3.0), (-3.0, 3.0)])
    steps = int(round((tmax - tmin) / tstep))
    ts = tmin + tstep * np.arange(steps + 1)
    perims = np.empty(len(ts))
    for k, t in enumerate(ts):
        pts = np.array([[-t, 0.0], [0.0, -2.0], [t, 0.0], [0.0, 2.0]])
        cells = voronoi_cap.clip_cells(pts, omega)
        total = 0.0
        for cell in cells:
            for j, p, q in cell.ridge_segments():
                if j > cell.index:
                    total += math.hypot(q[0] - p[0], q[1] - p[1])
        perims[k] = total
    _write_csv(out / "perimeter_vs_t.csv", "t,perimeter", zip(ts, perims))
    _write_curve_svg(out / "curve.svg", ts, perims, "total ridge length")
    d2 = np.abs(perims[2:] - 2.0 * perims[1:-1] + perims[:-2])
    kink = float(ts[1 + int(np.argmax(d2))])
    print(f"kink at t = {kink!r}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat JSON config file; flags override it")
    p.add_argument("--out", help="output directory (default: out)")
    p.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="perimax",
        description="least-perimeter sets and partitions, and domain-shape maximization",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("voronoi-init", help="capacity-constrained tessellation of a polygon")
    _add_common(p)
    p.add_argument("--n", type=int)
    p.add_argument("--fractions")
    p.add_argument("--equal", action="store_true", default=None)
    p.add_argument("--polygon")
    p.add_argument("--restarts", type=int)
    p.add_argument("--allow-partial", dest="allow_partial", action="store_true", default=None)
    p.set_defaults(func=cmd_voronoi_init)

    p = sub.add_parser("fence", help="least-perimeter set of prescribed volume fraction")
    _add_common(p)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--h", type=float)
    p.add_argument("--fractions")
    p.add_argument("--polygon")
    p.add_argument("--allow-partial", dest="allow_partial", action="store_true", default=None)
    p.set_defaults(func=cmd_fence)

    p = sub.add_parser("partition", help="least-perimeter partition into prescribed fractions")
    _add_common(p)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--h", type=float)
    p.add_argument("--n", type=int)
    p.add_argument("--fractions")
    p.add_argument("--polygon")
    p.add_argument("--restarts", type=int)
    p.add_argument("--allow-partial", dest="allow_partial", action="store_true", default=None)
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("maximize", help="gradient flow on the domain shape")
    _add_common(p)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--niter", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--nmod", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--fractions")
    p.add_argument("--restarts", type=int)
    p.add_argument("--modes", type=int)
    p.add_argument("--perturb", type=float)
    p.add_argument("--allow-partial", dest="allow_partial", action="store_true", default=None)
    p.set_defaults(func=cmd_maximize)

    p = sub.add_parser("perimtrack", help="ridge-length sweep of the four-point family")
    _add_common(p)
    p.add_argument("--tmin", type=float)
    p.add_argument("--tmax", type=float)
    p.add_argument("--tstep", type=float)
    p.set_defaults(func=cmd_perimtrack)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NotConverged as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except PerimaxError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
