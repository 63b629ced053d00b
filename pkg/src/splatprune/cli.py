"""Command line entry point: ``splatprune <command> ...``.

Flag values take precedence over ``SPLATPRUNE_*`` environment variables,
which take precedence over built-in defaults. Exit codes: 0 success,
2 usage or validation error, 3 I/O failure while writing outputs.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import List, Optional

from . import io
from .experiments import SweepSpec, run_sweep
from .metrics import evaluate
from .pruning import (
    apply_mask,
    prune_cross_ratio,
    prune_cross_stochastic,
    prune_cross_threshold,
    prune_pixelwise,
)
from .rasterizer import ContributionStream, RenderOptions, render, render_views
from .scoring import (
    RankedRays,
    ScoreFunction,
    ScoreTable,
    aggregate_cross_view,
    gamma_volume,
    rank_per_ray,
    score_records,
)
from .synthetic import SynthSpec, gen_camera_ring, gen_ground_truth, gen_scene

log = logging.getLogger("splatprune")

ENV_PREFIX = "SPLATPRUNE_"
EXIT_USAGE = 2
EXIT_IO = 3


class UsageError(Exception):
    pass


def env_default(name: str, fallback, cast=str):
    raw = os.environ.get(ENV_PREFIX + name)
    if raw is None or raw == "":
        return fallback
    try:
        return cast(raw)
    except ValueError:
        raise UsageError(f"environment variable {ENV_PREFIX + name}={raw!r} is invalid") from None


def _parse_background(text: str):
    parts = [float(p) for p in str(text).split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("background must be three comma-separated numbers")
    return tuple(parts)


def _require_file(path: str, what: str) -> str:
    if not os.path.isfile(path):
        raise UsageError(f"{what} not found: {path}")
    return path


def _require_dir(path: str, what: str) -> str:
    if not os.path.isdir(path):
        raise UsageError(f"{what} not found: {path}")
    return path


def _makedirs(path: str):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create output directory {path}: {e}") from e


def _render_options(args, **kw) -> RenderOptions:
    return RenderOptions(tile_size=args.tile_size, background=args.background, **kw)


def _load_inputs(args, images: Optional[str] = None):
    scene = io.read_ply(_require_file(args.scene, "scene file"))
    if images is not None:
        _require_dir(images, "image directory")
    cams = io.read_cameras(_require_file(args.cameras, "camera file"), images)
    return scene, cams


def cmd_render(args) -> int:
    scene, cams = _load_inputs(args)
    opts = _render_options(args, record_contributions=args.record)
    _makedirs(args.out)
    manifest = {"scene": os.path.basename(args.scene), "primitives": len(scene), "tile_size": opts.tile_size,
                "background": list(opts.background), "views": []}
    streams = []
    for k, cam in enumerate(cams):
        out = render(scene, cam, opts, n_jobs=args.threads)
        fname = f"{cam.name or f'view_{k:03d}'}.png"
        io.write_image(out.image, os.path.join(args.out, fname))
        manifest["views"].append({"name": cam.name, "image": fname, "width": cam.width, "height": cam.height,
                                  "rays_with_hits": int((out.per_ray_hit_count > 0).sum())})
        if args.record:
            streams.append(out.contributions)
    if args.record:
        ContributionStream.concatenate(streams).save(os.path.join(args.out, "contributions.npz"))
        manifest["contributions"] = "contributions.npz"
    with open(os.path.join(args.out, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2)
    return 0


def cmd_score(args) -> int:
    fn = ScoreFunction.parse(args.fn)
    if fn.needs_ground_truth and args.images is None:
        raise UsageError(f"--fn {fn.value} compares against ground truth; pass --images")
    agg = args.agg or fn.default_aggregation
    scene, cams = _load_inputs(args, args.images)
    opts = _render_options(args, record_contributions=True)
    _, stream = render_views(scene, cams, opts, n_jobs=args.threads)
    gamma = gamma_volume(scene) if fn.needs_gamma and len(scene) else None
    rec = score_records(fn, stream, views=cams, gamma=gamma, dist_scale=args.dist_scale)
    parent = os.path.dirname(os.path.abspath(args.out))
    _makedirs(parent)
    if agg == "perray":
        rank_per_ray(fn, stream, len(scene), scores=rec).save(args.out)
    else:
        aggregate_cross_view(fn, stream, len(scene), agg, scores=rec).to_csv(args.out)
    return 0


def cmd_prune(args) -> int:
    if (args.scores is None) == (args.ranked is None):
        raise UsageError("pass exactly one of --scores or --ranked")
    if args.technique == "pixelwise_topk" and args.ranked is None:
        raise UsageError("pixelwise_topk needs a per-ray ranking (--ranked)")
    if args.technique != "pixelwise_topk" and args.scores is None:
        raise UsageError(f"{args.technique} needs a cross-view score table (--scores)")
    if args.technique == "cross_stochastic" and args.seed is None:
        raise UsageError("cross_stochastic requires --seed")
    scene = io.read_ply(_require_file(args.scene, "scene file"))
    if args.ranked is not None:
        ranked = RankedRays.load(_require_file(args.ranked, "ranking archive"))
        if ranked.n_primitives != len(scene):
            raise UsageError(f"ranking covers {ranked.n_primitives} primitives, scene has {len(scene)}")
        mask = prune_pixelwise(ranked, _int_value(args.value), len(scene))
    else:
        table = ScoreTable.from_csv(_require_file(args.scores, "score table"))
        if len(table) != len(scene):
            raise UsageError(f"score table has {len(table)} rows, scene has {len(scene)}")
        if args.technique == "cross_ratio":
            mask = prune_cross_ratio(table, args.value)
        elif args.technique == "cross_threshold":
            mask = prune_cross_threshold(table, args.value)
        else:
            mask = prune_cross_stochastic(table, args.value, args.seed)
    pruned, _ = apply_mask(scene, mask)
    _makedirs(args.out)
    io.write_ply(pruned, os.path.join(args.out, "pruned.ply"))
    mask.to_csv(os.path.join(args.out, "mask.csv"))
    log.info("retained %d of %d primitives", mask.retained_count, len(scene))
    return 0


def _int_value(v: float) -> int:
    if v != int(v):
        raise UsageError(f"ranking threshold must be an integer, got {v}")
    return int(v)


def cmd_eval(args) -> int:
    scene, cams = _load_inputs(args, args.gt_images)
    report = evaluate(scene, cams, _render_options(args), fps_repeats=args.fps_repeats, quantize=True,
                      n_jobs=args.threads)
    _makedirs(args.out)
    io.write_report(report, os.path.join(args.out, "report.json"), "json")
    io.write_report(report, os.path.join(args.out, "report.csv"), "csv")
    return 0


def cmd_sweep(args) -> int:
    spec = SweepSpec.from_json(_require_file(args.sweep_spec, "sweep spec"))
    scene = io.read_ply(_require_file(spec.scene, "scene file"))
    if spec.images is not None:
        _require_dir(spec.images, "image directory")
    cams = io.read_cameras(_require_file(spec.cameras, "camera file"), spec.images)
    fn = ScoreFunction.parse(spec.score_function)
    if fn.needs_ground_truth and spec.images is None:
        raise UsageError(f"score {fn.value} needs ground-truth images in the sweep spec")
    if any(c.ground_truth is None for c in cams):
        raise UsageError("sweeps evaluate PSNR against ground truth; set 'images' in the sweep spec")
    _makedirs(args.out)
    with open(os.path.join(args.out, "sweep_spec.json"), "w") as f:
        json.dump(spec.to_dict(), f, indent=2)
    run_sweep(scene, cams, spec, os.path.join(args.out, "curve.csv"), quantize=True, n_jobs=args.threads)
    return 0


def cmd_gen(args) -> int:
    with open(_require_file(args.synth_spec, "synth spec"), encoding="utf-8") as f:
        d = json.load(f)
    rig = {k: d.pop(k) for k in ("views", "radius", "resolution", "look_at", "focal", "elevation") if k in d}
    spec = SynthSpec(**d)
    scene = gen_scene(spec)
    cams = gen_camera_ring(
        int(rig.get("views", 4)), float(rig.get("radius", 4.0)), rig.get("look_at", (0.0, 0.0, 0.0)),
        tuple(rig.get("resolution", (64, 64))), rig.get("focal"), float(rig.get("elevation", 0.0)),
    )
    cams = gen_ground_truth(scene, cams, _render_options(args), n_jobs=args.threads)
    img_dir = os.path.join(args.out, "images")
    _makedirs(img_dir)
    io.write_ply(scene, os.path.join(args.out, "scene.ply"))
    io.write_cameras(cams, os.path.join(args.out, "cameras.json"))
    for cam in cams:
        io.write_image(cam.ground_truth, os.path.join(img_dir, cam.name + ".png"))
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--tile-size", type=int, default=env_default("TILE_SIZE", 16, int),
                        help="rasterizer tile size in pixels (env SPLATPRUNE_TILE_SIZE, default 16)")
    common.add_argument("--background", type=_parse_background,
                        default=env_default("BACKGROUND", (0.0, 0.0, 0.0), _parse_background),
                        help="background colour r,g,b in [0,1] (env SPLATPRUNE_BACKGROUND, default 0,0,0)")
    common.add_argument("--threads", type=int, default=env_default("THREADS", 1, int),
                        help="tile workers, 0 = all cores (env SPLATPRUNE_THREADS, default 1)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="splatprune", description="Gaussian splatting pruning laboratory")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("render", parents=[common], help="render a scene from every camera")
    r.add_argument("--scene", required=True)
    r.add_argument("--cameras", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--record", action="store_true", help="also write contributions.npz")
    r.set_defaults(func=cmd_render)

    s = sub.add_parser("score", parents=[common], help="score primitives over all training views")
    s.add_argument("--scene", required=True)
    s.add_argument("--cameras", required=True)
    s.add_argument("--images", help="directory of ground-truth PNGs named <img_name>.png")
    s.add_argument("--fn", required=True, choices=[f.value for f in ScoreFunction])
    s.add_argument("--agg", choices=["sum", "max", "perray"])
    s.add_argument("--dist-scale", type=float, default=env_default("DIST_SCALE", 1.0, float),
                   help="pixel distance divisor (env SPLATPRUNE_DIST_SCALE, default 1.0)")
    s.add_argument("--out", required=True, help="score CSV (cross-view) or ranking .npz (per-ray)")
    s.set_defaults(func=cmd_score)

    q = sub.add_parser("prune", parents=[common], help="build a mask and write the pruned scene")
    q.add_argument("--scores")
    q.add_argument("--ranked")
    q.add_argument("--technique", required=True,
                   choices=["cross_ratio", "cross_threshold", "cross_stochastic", "pixelwise_topk"])
    q.add_argument("--value", type=float, required=True)
    q.add_argument("--seed", type=int)
    q.add_argument("--scene", required=True)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_prune)

    e = sub.add_parser("eval", parents=[common], help="PSNR/SSIM/FPS against ground-truth images")
    e.add_argument("--scene", required=True)
    e.add_argument("--cameras", required=True)
    e.add_argument("--gt-images", required=True)
    e.add_argument("--fps-repeats", type=int, default=env_default("FPS_REPEATS", 3, int),
                   help="timed passes for FPS (env SPLATPRUNE_FPS_REPEATS, default 3)")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    w = sub.add_parser("sweep", parents=[common], help="score, prune and evaluate over a grid of settings")
    w.add_argument("--sweep-spec", required=True)
    w.add_argument("--out", required=True)
    w.set_defaults(func=cmd_sweep)

    g = sub.add_parser("gen", parents=[common], help="synthetic scene, camera ring and ground truth")
    g.add_argument("--synth-spec", required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    try:
        parser = build_parser()
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (UsageError, ValueError, TypeError, KeyError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
