"""Command-line front end.

Subcommands
-----------
``segment``
    Evolve an initial curve network over a painted surface and write
    final curves, region map, piecewise-constant image and logs.
``restore``
    Denoise a per-face image region by region at a given data weight.
``make-surface``
    Emit synthetic test meshes (plane grid, icosphere, torus).
``paint``
    Paint a synthetic pattern (discs, stripes, hemispheres, constant,
    noise) onto a mesh as a per-face image.
``flow-test``
    Zero-forcing validation flows checked against closed-form laws:
    the planar circle radius law with its spatial and temporal
    convergence orders, equator stationarity on the sphere, and the
    shrinking geodesic circle against its polar-angle ODE.

Run settings may come from a flat ``key = value`` config file
(``--config``); explicit flags override file values. Commands exit 0
on success; on failure they print one machine-readable JSON line
(``{"error": ..., "message": ...}``) to stderr and exit nonzero.
"""

import argparse
import json
import os
import sys

import numpy as np

from .config import RunConfig, load_config, parse_lambda
from .curves import Curve, CurveNetwork, compute_frames
from .errors import ConfigError, SurfSegError
from .evolution import advance, evolve_step
from .generators import icosphere, paint_image, plane_grid, torus
from .mesh import FaceImage, SurfaceMesh, load_mesh, save_mesh
from .pipeline import SegmentationPipeline
from .regions import RegionMap
from .restoration import restore

__all__ = ["main"]


# ----------------------------------------------------------------------
# shared flag plumbing

_CONFIG_ATTRS = ("sigma", "mu", "dt", "steps", "n_sub", "n0", "l_min",
                 "l_max", "grid_a", "delta0", "delete_tol", "color_space",
                 "solver", "tol", "seed", "stop_on_energy_rise")


def _add_run_flags(parser):
    g = parser.add_argument_group("run settings (override --config values)")
    g.add_argument("--config", metavar="FILE",
                   help="flat key = value config file")
    g.add_argument("--sigma", type=float, help="curvature weight")
    g.add_argument("--lambda", dest="lam", metavar="L[,L...]",
                   help="data weight, one value or comma-separated "
                        "per channel (chroma,brightness in cb mode)")
    g.add_argument("--mu", type=float, help="balloon weight (default 0)")
    g.add_argument("--dt", type=float, help="time-step length")
    g.add_argument("--steps", type=int, help="number of steps")
    g.add_argument("--n-sub", type=int,
                   help="substeps used to localize a topology event")
    g.add_argument("--n0", type=int, help="region band half-width in faces")
    g.add_argument("--l-min", type=float, help="coarsening spacing bound")
    g.add_argument("--l-max", type=float, help="refinement spacing bound")
    g.add_argument("--grid-a", type=float,
                   help="background grid cell size (detection scale)")
    g.add_argument("--delta0", type=float,
                   help="tubular radius separating surface sheets")
    g.add_argument("--delete-tol", type=float,
                   help="closed curves shorter than this are deleted")
    g.add_argument("--color-space", choices=("gray", "rgb", "cb"))
    g.add_argument("--solver", choices=("direct", "cg"))
    g.add_argument("--tol", type=float, help="linear-solver residual bound")
    g.add_argument("--seed", type=int, help="seed for randomized generators")
    g.add_argument("--stop-on-energy-rise", action="store_true",
                   default=None,
                   help="stop and roll back the step when the energy rises "
                        "without a topology event")


def _build_config(args) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        cfg = load_config(args.config, cfg)
    for attr in _CONFIG_ATTRS:
        val = getattr(args, attr, None)
        if val is not None:
            setattr(cfg, attr, val)
    if getattr(args, "lam", None) is not None:
        cfg.lam = parse_lambda(args.lam)
    return cfg


def _check_image_config(cfg: RunConfig, image: FaceImage):
    """Reconcile channel counts; expand a single lambda when needed."""
    need = {"gray": 1, "rgb": 3, "cb": 2}[cfg.color_space]
    if cfg.color_space == "gray" and image.channels != 1:
        raise ConfigError("color_space gray needs a single-channel image "
                          f"(got {image.channels} channels)")
    if cfg.color_space in ("rgb", "cb") and image.channels != 3:
        raise ConfigError(f"color_space {cfg.color_space} needs an RGB "
                          f"image (got {image.channels} channels)")
    if len(cfg.lam) == 1 and need > 1:
        cfg.lam = cfg.lam * need
    if len(cfg.lam) != need:
        raise ConfigError(f"color_space {cfg.color_space} takes {need} "
                          f"lambda value(s), got {len(cfg.lam)}")


def _emit(payload: dict):
    print(json.dumps(payload, sort_keys=True))


# ----------------------------------------------------------------------
# curve seeding helpers

def _snap_network(mesh, points, region_plus=0, region_minus=1):
    """Closed single-curve network from raw points, snapped to the mesh."""
    curve = Curve(0, np.asarray(points, dtype=np.float64), True,
                  region_plus, region_minus)
    for i in range(curve.num_nodes):
        loc = mesh.project_to_surface(curve.nodes[i])
        curve.nodes[i] = loc.point
        curve.hints[i] = loc.face
    return CurveNetwork([curve], [])


def _latitude_points(mesh, theta: float, n: int):
    """Circle of constant polar angle at the mesh's outer radius."""
    r = float(np.linalg.norm(mesh.vertices, axis=1).max())
    t = 2.0 * np.pi * np.arange(n) / n
    return r * np.stack([np.sin(theta) * np.cos(t),
                         np.sin(theta) * np.sin(t),
                         np.full(n, np.cos(theta))], axis=1)


def _initial_network(args, mesh) -> CurveNetwork:
    if args.curves is not None:
        return CurveNetwork.load_json(args.curves, mesh=mesh)
    spec = args.init
    if spec is None:
        raise ConfigError("segment needs --curves FILE or --init SPEC")
    if spec == "equator":
        theta = np.pi / 2.0
    elif spec.startswith("latitude:"):
        try:
            theta = float(spec.split(":", 1)[1])
        except ValueError as exc:
            raise ConfigError(f"bad --init value: {spec!r}") from exc
    else:
        raise ConfigError(f"unknown --init spec: {spec!r} "
                          "(use equator or latitude:THETA)")
    return _snap_network(mesh, _latitude_points(mesh, theta, args.init_nodes))


# ----------------------------------------------------------------------
# segment

def cmd_segment(args) -> int:
    cfg = _build_config(args)
    channels = 3 if cfg.color_space in ("rgb", "cb") else 1
    mesh, image = load_mesh(args.mesh, allow_open=args.allow_open,
                            default_channels=channels)
    _check_image_config(cfg, image)
    network = _initial_network(args, mesh)
    cfg.resolve(mesh, network)

    pipe = SegmentationPipeline(mesh, image, network, cfg,
                                out_dir=args.out, save_every=args.save_every)
    callback = (lambda p: p.validate_state()) if args.debug else None
    taken = pipe.run(callback=callback)

    for w in pipe.warnings:
        print(f"warning: {w}", file=sys.stderr)
    _emit({
        "command": "segment",
        "steps": taken,
        "curves": len(pipe.network.curves),
        "events": pipe.events_executed,
        "energy": pipe.energy,
        "stop_reason": pipe.stop_reason or "steps",
        "out": args.out,
    })
    return 0


# ----------------------------------------------------------------------
# restore

def cmd_restore(args) -> int:
    mesh, image = load_mesh(args.mesh, allow_open=args.allow_open)
    if image is None:
        raise ConfigError(f"{args.mesh} carries no per-face image to restore")
    if args.lam <= 0:
        raise ConfigError("restore needs a positive lambda")

    if args.regions is not None:
        labels = np.loadtxt(args.regions, dtype=np.int64, ndmin=1)
        if len(labels) != mesh.num_faces:
            raise ConfigError(
                f"{args.regions}: {len(labels)} labels for "
                f"{mesh.num_faces} faces")
        if labels.min() < 0:
            raise ConfigError(f"{args.regions}: negative region label")
    else:
        labels = np.zeros(mesh.num_faces, dtype=np.int64)
    region_map = RegionMap(mesh.num_faces)
    region_map.labels[:] = labels
    region_map.recompute_stats(mesh, image)

    restored = restore(mesh, image, region_map, args.lam,
                       method=args.solver, tol=args.tol)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, f"denoised_{args.lam:g}.ply")
    save_mesh(path, mesh, restored)
    _emit({
        "command": "restore",
        "lambda": args.lam,
        "regions": len(region_map.region_ids()),
        "out": path,
    })
    return 0


# ----------------------------------------------------------------------
# make-surface / paint

def cmd_make_surface(args) -> int:
    if args.kind == "sphere":
        mesh = icosphere(args.subdiv)
        if args.scale != 1.0:
            mesh = SurfaceMesh(mesh.vertices * args.scale, mesh.faces)
    elif args.kind == "torus":
        mesh = torus(args.major_radius, args.minor_radius,
                     args.n_major, args.n_minor)
    else:
        mesh = plane_grid(args.nx, args.ny, args.extent)
    save_mesh(args.out, mesh)
    _emit({
        "command": "make-surface",
        "kind": args.kind,
        "vertices": mesh.num_vertices,
        "faces": mesh.num_faces,
        "out": args.out,
    })
    return 0


def _parse_centers(text):
    if text is None:
        return None
    try:
        return [[float(x) for x in chunk.split(",")]
                for chunk in text.split(";") if chunk.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --centers value: {text!r}") from exc


def cmd_paint(args) -> int:
    mesh, _ = load_mesh(args.mesh, allow_open=args.allow_open)
    image = paint_image(mesh, args.pattern, inside=args.inside,
                        outside=args.outside,
                        centers=_parse_centers(args.centers),
                        radius=args.radius, count=args.count,
                        channels=args.channels, noise=args.noise,
                        seed=args.seed)
    save_mesh(args.out, mesh, image)
    _emit({
        "command": "paint",
        "pattern": args.pattern,
        "faces": mesh.num_faces,
        "channels": image.channels,
        "out": args.out,
    })
    return 0


# ----------------------------------------------------------------------
# flow-test

def _run_flow(mesh, network, sigma, dt, steps):
    for _ in range(steps):
        frames = {c.id: compute_frames(c, mesh) for c in network.curves}
        result = evolve_step(network, frames, dt, sigma)
        advance(network, mesh, result.deltas)
    return network


def _circle_points(n, radius):
    t = 2.0 * np.pi * np.arange(n) / n
    return np.stack([radius * np.cos(t), radius * np.sin(t),
                     np.zeros(n)], axis=1)


def _fit_order(sizes, errors):
    """Least-squares slope of log error against log size."""
    slope = np.polyfit(np.log(np.asarray(sizes, dtype=float)),
                       np.log(np.maximum(errors, 1e-300)), 1)[0]
    return -slope


def _report(lines, name, value, threshold, ok, extra=""):
    status = "PASS" if ok else "FAIL"
    tail = f" {extra}" if extra else ""
    lines.append(f"flow-test {name}: {value:.6g} "
                 f"(threshold {threshold:g}){tail} {status}")
    return ok


def _flow_plane_circle(lines, quick):
    nx = 64 if quick else 128
    mesh = plane_grid(nx, nx, extent=1.2)
    sigma, r0 = 1.0, 0.5

    dt = 1e-3 if quick else 1e-4
    steps = 40 if quick else 400
    t_end = dt * steps
    r_law = np.sqrt(r0 * r0 - 2.0 * sigma * t_end)
    node_counts = (32, 64) if quick else (64, 128, 256)
    errors = []
    for n in node_counts:
        net = _snap_network(mesh, _circle_points(n, r0))
        _run_flow(mesh, net, sigma, dt, steps)
        r_meas = float(np.linalg.norm(net.curves[0].nodes[:, :2],
                                      axis=1).mean())
        errors.append(abs(r_meas - r_law) / r_law)
        lines.append(f"flow-test plane-circle N={n}: "
                     f"radius rel err {errors[-1]:.3e}")
    order = _fit_order(node_counts, errors)
    ok = _report(lines, "plane-circle spatial order", order,
                 1.5 if quick else 1.8, order >= (1.5 if quick else 1.8))

    n_fix = 64 if quick else 192
    taus = (4e-3, 2e-3) if quick else (2e-3, 1e-3, 5e-4)
    t_end = 0.02 if quick else 0.1
    r_law = np.sqrt(r0 * r0 - 2.0 * sigma * t_end)
    errors = []
    for tau in taus:
        net = _snap_network(mesh, _circle_points(n_fix, r0))
        _run_flow(mesh, net, sigma, tau, int(round(t_end / tau)))
        r_meas = float(np.linalg.norm(net.curves[0].nodes[:, :2],
                                      axis=1).mean())
        errors.append(abs(r_meas - r_law) / r_law)
        lines.append(f"flow-test plane-circle tau={tau:g}: "
                     f"radius rel err {errors[-1]:.3e}")
    t_order = _fit_order([1.0 / tau for tau in taus], errors)
    ok &= _report(lines, "plane-circle temporal order", t_order, 0.7,
                  t_order >= 0.7)
    return ok


def _flow_sphere_equator(lines, quick):
    mesh = icosphere(3 if quick else 4)
    n = 64 if quick else 128
    dt = 1e-3
    steps = 100 if quick else 1000
    net = _snap_network(mesh, _circle_points(n, 1.0))
    _run_flow(mesh, net, 1.0, dt, steps)
    drift = float(np.abs(net.curves[0].nodes[:, 2]).max()) / (dt * steps)
    threshold = 1e-4 if quick else 1e-5
    return _report(lines, "sphere-equator drift rate", drift, threshold,
                   drift < threshold)


def _flow_sphere_circle(lines, quick):
    from scipy.integrate import solve_ivp

    mesh = icosphere(4 if quick else 5)
    n = 96 if quick else 192
    sigma, theta0 = 1.0, np.pi / 4.0
    dt = 1e-3 if quick else 2e-4
    steps = 50 if quick else 500
    t_end = dt * steps

    points = _circle_points(n, np.sin(theta0))
    points[:, 2] = np.cos(theta0)
    net = _snap_network(mesh, points)
    _run_flow(mesh, net, sigma, dt, steps)
    nodes = net.curves[0].nodes
    theta_meas = float(np.arccos(np.clip(
        nodes[:, 2] / np.linalg.norm(nodes, axis=1), -1.0, 1.0)).mean())

    sol = solve_ivp(lambda t, th: -sigma * np.cos(th) / np.sin(th),
                    (0.0, t_end), [theta0], rtol=1e-12, atol=1e-14)
    theta_ode = float(sol.y[0, -1])
    rel = abs(theta_meas - theta_ode) / theta_ode
    threshold = 0.05 if quick else 0.02
    return _report(lines, "sphere-circle ODE rel err", rel, threshold,
                   rel < threshold)


_FLOW_CASES = {
    "plane-circle": _flow_plane_circle,
    "sphere-equator": _flow_sphere_equator,
    "sphere-circle": _flow_sphere_circle,
}


def cmd_flow_test(args) -> int:
    cases = list(_FLOW_CASES) if args.case == "all" else [args.case]
    lines = []
    failed = 0
    for case in cases:
        if not _FLOW_CASES[case](lines, args.quick):
            failed += 1
    for line in lines:
        print(line)
    print(f"flow-test: {len(cases)} case(s), {failed} failed")
    return 1 if failed else 0


# ----------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="surfseg",
        description="Curve-driven segmentation and restoration of "
                    "images on triangulated surfaces.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser(
        "segment", help="evolve a curve network to a segmentation",
        description="Evolve an initial curve network over a painted "
                    "surface; writes curves_{step}.json, regions_final.ply, "
                    "piecewise_const_{step}.ply, log.csv and events.jsonl "
                    "into --out.")
    p.add_argument("--mesh", required=True, help="surface with per-face image")
    p.add_argument("--curves", help="initial curve network JSON")
    p.add_argument("--init", metavar="SPEC",
                   help="synthesize the initial curve instead of --curves: "
                        "equator or latitude:THETA (polar angle, radians)")
    p.add_argument("--init-nodes", type=int, default=200,
                   help="node count for --init (default 200)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--save-every", type=int, default=0,
                   help="also snapshot curves every N steps (0: final only)")
    p.add_argument("--allow-open", action="store_true",
                   help="accept open meshes (flat test domains)")
    p.add_argument("--debug", action="store_true",
                   help="assert all state invariants after every step")
    _add_run_flags(p)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser(
        "restore", help="denoise an image region by region",
        description="Solve the surface denoising problem per region and "
                    "write denoised_{lambda}.ply into --out. Without "
                    "--regions the whole surface is one region.")
    p.add_argument("--mesh", required=True, help="surface with per-face image")
    p.add_argument("--regions", help="per-face region labels, one per line")
    p.add_argument("--lambda", dest="lam", type=float, required=True,
                   help="data weight (larger keeps the output closer "
                        "to the input)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--solver", choices=("direct", "cg"), default="direct")
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--allow-open", action="store_true",
                   help="accept open meshes (flat test domains)")
    p.set_defaults(func=cmd_restore)

    p = sub.add_parser(
        "make-surface", help="emit a synthetic test mesh",
        description="Write a plane grid, icosphere or torus as .off/.ply. "
                    "Plane grids are open; load them with --allow-open.")
    p.add_argument("kind", choices=("plane", "sphere", "torus"))
    p.add_argument("--out", required=True, help="output mesh (.off or .ply)")
    p.add_argument("--subdiv", type=int, default=3,
                   help="sphere subdivisions (faces = 20*4**n)")
    p.add_argument("--scale", type=float, default=1.0,
                   help="sphere radius (scales the unit icosphere)")
    p.add_argument("--major-radius", type=float, default=1.0)
    p.add_argument("--minor-radius", type=float, default=0.4)
    p.add_argument("--n-major", type=int, default=64)
    p.add_argument("--n-minor", type=int, default=32)
    p.add_argument("--nx", type=int, default=32)
    p.add_argument("--ny", type=int, default=32)
    p.add_argument("--extent", type=float, default=1.0,
                   help="plane half-width: grid covers [-extent, extent]^2")
    p.set_defaults(func=cmd_make_surface)

    p = sub.add_parser(
        "paint", help="paint a synthetic per-face image onto a mesh",
        description="Patterns: discs (geodesic on spheres, angle in "
                    "radians; Euclidean elsewhere), stripes (azimuthal "
                    "bands), hemispheres (z > 0), constant, noise. "
                    "OFF output stores exact float values; PLY is 8-bit.")
    p.add_argument("--mesh", required=True)
    p.add_argument("--pattern", required=True,
                   choices=("discs", "stripes", "hemispheres", "constant",
                            "noise"))
    p.add_argument("--out", required=True, help="output mesh with image")
    p.add_argument("--inside", type=float, default=0.1)
    p.add_argument("--outside", type=float, default=0.9)
    p.add_argument("--centers", metavar="X,Y,Z;X,Y,Z;...",
                   help="disc centers (discs pattern)")
    p.add_argument("--radius", type=float, default=0.4,
                   help="disc radius: great-circle angle in radians on "
                        "spheres, Euclidean distance otherwise")
    p.add_argument("--count", type=int, default=4,
                   help="stripe band count (stripes pattern)")
    p.add_argument("--channels", type=int, choices=(1, 3), default=1)
    p.add_argument("--noise", type=float, default=0.0,
                   help="Gaussian noise standard deviation")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--allow-open", action="store_true",
                   help="accept open meshes (flat test domains)")
    p.set_defaults(func=cmd_paint)

    p = sub.add_parser(
        "flow-test", help="validate zero-forcing flows against exact laws",
        description="Runs curvature-only flows and checks the planar "
                    "circle law (with spatial and temporal convergence "
                    "orders), equator stationarity, and the geodesic "
                    "circle ODE. Exits nonzero when a check fails.")
    p.add_argument("--case", default="all",
                   choices=("all",) + tuple(_FLOW_CASES))
    p.add_argument("--quick", action="store_true",
                   help="smaller meshes and looser thresholds")
    p.set_defaults(func=cmd_flow_test)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "func", None) is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        return args.func(args)
    except SurfSegError as exc:
        print(json.dumps({"error": type(exc).__name__,
                          "message": str(exc)}), file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(json.dumps({"error": type(exc).__name__,
                          "message": str(exc)}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
