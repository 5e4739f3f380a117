"""volsample command line: render, sweep, simulate-updates, dump-samples."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
from scipy import stats
from sklearn.model_selection import ParameterGrid, ParameterSampler

from .._validation import FormatError
from ..estimator import CombinedEstimator, OccupancyGrid, PdfEstimator, UniformEstimator, binarize
from ..field import load_field
from ..geometry import RayBundle, intersect_aabb
from ..pipeline import render_rays
from ..render import RenderOutput, oracle_render_bundle, psnr
from ..sampler import SamplerConfig, filter_by_transmittance, sample
from .camera import PinholeCamera, write_image

log = logging.getLogger("volsample")

ORACLE_QUAD = 4096
UNBOUNDED_FAR = 1.0e4
KINDS = ("uniform", "occupancy", "pdf", "combined")

# estimator-side settings a sweep may vary; scene and camera stay fixed per run
SWEEPABLE = ("estimator", "samples", "stratified", "filter_threshold", "seed", "threshold", "ema_decay",
             "march_step", "grid_resolution", "warmup", "jitter", "n_coarse", "coarse_resolution")


class UsageError(Exception):
    pass


class _Formatter(logging.Formatter):
    COLORS = {logging.WARNING: "\033[33m", logging.ERROR: "\033[31m", logging.INFO: "\033[36m"}

    def __init__(self, color):
        super().__init__("%(levelname)s %(message)s")
        self.color = color

    def format(self, record):
        text = super().format(record)
        if self.color and record.levelno in self.COLORS:
            return f"{self.COLORS[record.levelno]}{text}\033[0m"
        return text


def _setup_logging(verbose):
    handler = logging.StreamHandler(sys.stderr)
    color = "NO_COLOR" not in os.environ and sys.stderr.isatty()
    handler.setFormatter(_Formatter(color))
    log.handlers[:] = [handler]
    log.setLevel(logging.INFO if verbose else logging.WARNING)
    log.propagate = False


# ---------------------------------------------------------------- arguments


def _vec3(text):
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected x,y,z but got {text!r}")
    return tuple(float(p) for p in parts)


def _add_scene_args(p):
    g = p.add_argument_group("scene and camera")
    g.add_argument("--config", type=Path, help="JSON file whose keys override these flags")
    g.add_argument("--scene", type=Path, help="analytic scene .json or voxel .vox3")
    g.add_argument("--width", type=int, default=64)
    g.add_argument("--height", type=int, default=64)
    g.add_argument("--fov", type=float, default=40.0, help="vertical field of view in degrees")
    g.add_argument("--position", type=_vec3, default=(0.0, 0.0, 4.0), metavar="X,Y,Z")
    g.add_argument("--look-at", type=_vec3, default=(0.0, 0.0, 0.0), metavar="X,Y,Z")
    g.add_argument("--up", type=_vec3, default=(0.0, 1.0, 0.0), metavar="X,Y,Z")
    g.add_argument("--t-near", type=float, default=2.0)
    g.add_argument("--t-far", type=float, default=6.0)
    g.add_argument("--unbounded", action="store_true",
                   help=f"t_far becomes {UNBOUNDED_FAR:g} with reciprocal-depth breakpoints")
    g.add_argument("--background", type=_vec3, default=(0.0, 0.0, 0.0), metavar="R,G,B")
    g.add_argument("--threads", type=int, default=1)
    g.add_argument("--chunk-size", type=int, default=4096)
    g.add_argument("-v", "--verbose", action="store_true")


def _add_estimator_args(p):
    g = p.add_argument_group("estimator and sampler")
    g.add_argument("--estimator", choices=KINDS, default="uniform")
    g.add_argument("--samples", type=int, default=64, help="N, samples per ray")
    g.add_argument("--no-stratified", dest="stratified", action="store_false")
    g.add_argument("--filter-threshold", type=float, default=1e-4)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--threshold", type=float, default=0.01, help="occupancy tau")
    g.add_argument("--ema-decay", type=float, default=0.95, help="occupancy gamma")
    g.add_argument("--march-step", type=float, default=None, help="occupancy delta t")
    g.add_argument("--grid-resolution", type=int, default=64, help="occupancy L")
    g.add_argument("--warmup", type=int, default=16, help="EMA updates before rendering")
    g.add_argument("--jitter", type=float, default=1.0)
    g.add_argument("--n-coarse", type=int, default=64)
    g.add_argument("--coarse-resolution", type=int, default=32)


def build_parser():
    parser = argparse.ArgumentParser(prog="volsample", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("render", help="render an image and print JSON stats")
    _add_scene_args(p)
    _add_estimator_args(p)
    p.add_argument("--output", "-o", type=Path, default=Path("render.ppm"))
    p.add_argument("--no-timing", action="store_true", help="report wall_time_ms as null")

    p = sub.add_parser("sweep", help="evaluate a grid or random set of estimator settings")
    _add_scene_args(p)
    _add_estimator_args(p)
    p.add_argument("--spec", type=Path, help="sweep JSON: {'grid': {...}} or {'random': {...}, 'n': k}")
    p.add_argument("--output", "-o", type=Path, default=Path("sweep.csv"))
    p.add_argument("--jobs", type=int, default=1, help="rows evaluated in parallel")
    p.add_argument("--no-timing", action="store_true", help="leave wall_time_ms empty")

    p = sub.add_parser("simulate-updates", help="log EMA convergence of an occupancy grid")
    _add_scene_args(p)
    _add_estimator_args(p)
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--output", "-o", type=Path, default=Path("updates.csv"))

    p = sub.add_parser("dump-samples", help="write packed samples as ray_id,t0,t1")
    _add_scene_args(p)
    _add_estimator_args(p)
    p.add_argument("--unfiltered", action="store_true", help="dump before transmittance filtering")
    p.add_argument("--output", "-o", type=Path, default=Path("samples.csv"))
    return parser


def _apply_config(args, parser):
    """Overlay `--config` JSON onto parsed flags; keys use flag names with - or _."""
    if args.config is None:
        return args
    try:
        overrides = json.loads(args.config.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {args.config}: {exc}") from None
    if not isinstance(overrides, dict):
        raise UsageError(f"config {args.config} must hold a JSON object")
    known = vars(args)
    base = args.config.parent
    for key, value in overrides.items():
        dest = key.replace("-", "_")
        if dest in ("command", "config") or dest not in known:
            raise UsageError(f"config key {key!r} does not match any flag of '{args.command}'")
        if dest in ("position", "look_at", "up", "background"):
            if not isinstance(value, (list, tuple)) or len(value) != 3:
                raise UsageError(f"config key {key!r} needs 3 numbers")
            value = tuple(float(v) for v in value)
        elif dest in ("scene", "output", "spec"):
            value = base / value
        setattr(args, dest, value)
    return args


# ---------------------------------------------------------------- building blocks


def make_camera(cfg):
    return PinholeCamera(position=tuple(cfg.position), look_at=tuple(cfg.look_at), up=tuple(cfg.up),
                         fov_deg=cfg.fov, width=cfg.width, height=cfg.height)


def make_rays(cfg) -> RayBundle:
    t_far = UNBOUNDED_FAR if cfg.unbounded else cfg.t_far
    return make_camera(cfg).rays(cfg.t_near, t_far)


def make_estimator(cfg):
    if cfg.estimator not in KINDS:
        raise UsageError(f"unknown estimator {cfg.estimator!r}; choose from {', '.join(KINDS)}")
    if cfg.estimator == "uniform":
        return UniformEstimator()
    grid = OccupancyGrid(resolution=cfg.grid_resolution, threshold=cfg.threshold, ema_decay=cfg.ema_decay,
                         march_step=cfg.march_step, warmup_steps=cfg.warmup, jitter=cfg.jitter, seed=cfg.seed)
    pdf = PdfEstimator(n_coarse=cfg.n_coarse, coarse_resolution=cfg.coarse_resolution,
                       mapping="reciprocal_depth" if cfg.unbounded else "identity")
    return {"occupancy": grid, "pdf": pdf, "combined": CombinedEstimator(grid, pdf)}[cfg.estimator]


def sampler_config(cfg) -> SamplerConfig:
    return SamplerConfig(n_samples=cfg.samples, stratified=cfg.stratified,
                         filter_threshold=cfg.filter_threshold, seed=cfg.seed)


def oracle_image(rays: RayBundle, field) -> RenderOutput:
    """Quadrature reference, restricted to the field's bounds where it has any."""
    if field.bounds is None:
        return oracle_render_bundle(rays, field, ORACLE_QUAD)
    t0, t1, hit = intersect_aabb(rays, field.bounds)
    hit &= t1 > t0
    n = len(rays)
    out = RenderOutput(np.zeros((n, 3)), np.zeros(n), np.zeros(n), np.zeros(0))
    if hit.any():
        sub = RayBundle(rays.origins[hit], rays.directions[hit], t0[hit], t1[hit])
        ref = oracle_render_bundle(sub, field, ORACLE_QUAD)
        out.color[hit], out.opacity[hit], out.depth[hit] = ref.color, ref.opacity, ref.depth
    return out


def evaluate(cfg, field, rays, reference, timing=True):
    """Fit, sample, filter and render; returns (stats dict, composited pixels)."""
    estimator = make_estimator(cfg)
    config = sampler_config(cfg)
    start = time.perf_counter()
    estimator.fit(field)
    result = render_rays(rays, estimator, field, config, threads=cfg.threads, chunk_size=cfg.chunk_size)
    wall_ms = (time.perf_counter() - start) * 1e3
    image = result.output.composite(cfg.background)
    stats_ = {
        "psnr": psnr(image, reference.composite(cfg.background)),
        "mean_samples_before_filter": result.mean_samples_before,
        "mean_samples_per_ray": result.mean_samples_after,
        "wall_time_ms": wall_ms if timing else None,
    }
    return stats_, image


def _load(cfg):
    if cfg.scene is None:
        raise UsageError("no scene given; pass --scene or set 'scene' in --config")
    return load_field(cfg.scene)


# ---------------------------------------------------------------- commands


def cmd_render(cfg):
    field = _load(cfg)
    rays = make_rays(cfg)
    reference = oracle_image(rays, field)
    stats_, image = evaluate(cfg, field, rays, reference, timing=not cfg.no_timing)
    write_image(cfg.output, image.reshape(cfg.height, cfg.width, 3))
    log.info("wrote %s", cfg.output)
    stats_ = {"estimator": cfg.estimator, "samples": cfg.samples, **stats_, "output": str(cfg.output)}
    print(json.dumps(stats_))
    return 0


def _distribution(key, spec):
    """Turn a sweep range spec into something ParameterSampler can draw from."""
    if isinstance(spec, list):
        if not spec:
            raise UsageError(f"sweep parameter {key!r} has no values")
        return spec
    if isinstance(spec, dict) and len(spec) == 1:
        (kind, bounds), = spec.items()
        lo, hi = bounds
        if kind == "uniform":
            return stats.uniform(lo, hi - lo)
        if kind == "log_uniform":
            return stats.loguniform(lo, hi)
        if kind == "int":
            return stats.randint(lo, hi + 1)
    raise UsageError(f"sweep parameter {key!r}: use a list, or one of "
                     "{'uniform': [lo, hi]}, {'log_uniform': [lo, hi]}, {'int': [lo, hi]}")


def sweep_points(spec, master_seed):
    if not isinstance(spec, dict):
        raise UsageError("sweep spec must be a JSON object")
    if ("grid" in spec) == ("random" in spec):
        raise UsageError("sweep spec needs exactly one of 'grid' or 'random'")
    params = spec.get("grid", spec.get("random"))
    if not isinstance(params, dict) or not params:
        raise UsageError("empty sweep: no parameters listed")
    for key in params:
        if key.replace("-", "_") not in SWEEPABLE:
            raise UsageError(f"cannot sweep {key!r}; sweepable: {', '.join(SWEEPABLE)}")
    params = {k.replace("-", "_"): v for k, v in params.items()}
    if "grid" in spec:
        for key, values in params.items():
            if not isinstance(values, list) or not values:
                raise UsageError(f"empty sweep: grid parameter {key!r} needs a non-empty list")
        points = list(ParameterGrid(params))
    else:
        n = spec.get("n", 0)
        if not isinstance(n, int) or n < 1:
            raise UsageError("empty sweep: random sweeps need 'n' >= 1")
        dists = {k: _distribution(k, v) for k, v in params.items()}
        points = list(ParameterSampler(dists, n, random_state=master_seed))
    keys = [k for k in SWEEPABLE if k in params]
    return keys, [{k: _plain(p[k]) for k in keys} for p in points]


def _plain(value):
    return value.item() if isinstance(value, np.generic) else value


def cmd_sweep(cfg):
    if cfg.spec is None:
        raise UsageError("sweep needs --spec")
    try:
        spec = json.loads(Path(cfg.spec).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read sweep spec {cfg.spec}: {exc}") from None
    keys, points = sweep_points(spec, cfg.seed)
    field = _load(cfg)
    rays = make_rays(cfg)
    reference = oracle_image(rays, field)

    def run(point):
        row_cfg = argparse.Namespace(**{**vars(cfg), **point})
        return evaluate(row_cfg, field, rays, reference, timing=not cfg.no_timing)[0]

    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(run, points))
    else:
        results = [run(p) for p in points]
    with open(cfg.output, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(keys + ["psnr_vs_oracle", "mean_samples_before_filter", "mean_samples_per_ray",
                                "wall_time_ms"])
        for point, res in zip(points, results):
            wall = "" if res["wall_time_ms"] is None else repr(res["wall_time_ms"])
            writer.writerow([point[k] for k in keys] + [repr(res["psnr"]), repr(res["mean_samples_before_filter"]),
                                                        repr(res["mean_samples_per_ray"]), wall])
    log.info("wrote %d rows to %s", len(points), cfg.output)
    return 0


def cmd_simulate_updates(cfg):
    if cfg.estimator != "occupancy":
        raise UsageError(f"simulate-updates needs --estimator occupancy, got {cfg.estimator!r}")
    if cfg.steps < 0:
        raise UsageError("--steps must be >= 0")
    field = _load(cfg)
    grid = make_estimator(cfg)
    grid.reset(field.bounds)
    target = field._density(grid.cell_centers())
    rng = np.random.default_rng(cfg.seed)
    with open(cfg.output, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "max_cell_error", "occupied_fraction"])
        binarize(grid)
        for k in range(cfg.steps + 1):
            if k > 0:
                grid.partial_fit(field, rng)
            err = float(np.max(np.abs(grid.cached_density_ - target)))
            writer.writerow([k, repr(err), repr(grid.occupied_fraction)])
    return 0


def cmd_dump_samples(cfg):
    field = _load(cfg)
    rays = make_rays(cfg)
    estimator = make_estimator(cfg).fit(field)
    config = sampler_config(cfg)
    with open(cfg.output, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["ray_id", "t0", "t1"])
        for lo in range(0, len(rays), cfg.chunk_size):
            sub = rays[lo:lo + cfg.chunk_size]
            packed = sample(sub, estimator, config, first_ray=lo)
            if not cfg.unfiltered:
                packed = filter_by_transmittance(packed, sub, field, config.filter_threshold)
            for ray_id, t0, t1 in packed.to_csv_rows():
                writer.writerow([ray_id + lo, t0, t1])
    return 0


COMMANDS = {"render": cmd_render, "sweep": cmd_sweep, "simulate-updates": cmd_simulate_updates,
            "dump-samples": cmd_dump_samples}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(args.verbose)
    try:
        cfg = _apply_config(args, parser)
        return COMMANDS[cfg.command](cfg)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"volsample {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (FormatError, ValueError, OSError, KeyError, TypeError) as exc:
        print(f"volsample {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
