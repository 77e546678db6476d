"""Command-line entry point.

Exit codes: 0 success, 1 internal error, 2 constraint or usage violation
(e.g. K < K_min), 3 infeasible coverage, 4 I/O or format error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import dataset_io as dio
from .entropy_sampling import local_entropy_map, rgb_to_gray
from .errors import InputError, KeyviewError
from .metrics import evaluate_images
from .scene_geometry import make_grid
from .trainer import TrainConfig, train
from .view_selection import schedule_views
from .volume_renderer import RenderConfig, render_image

EXIT_OK, EXIT_INTERNAL, EXIT_CONSTRAINT, EXIT_INFEASIBLE, EXIT_IO = 0, 1, 2, 3, 4


def _render_config(scene, overrides=None, n_samples=None) -> RenderConfig:
    opts = {"background": scene.background, "t_near": scene.t_near, "t_far": scene.t_far}
    opts.update(overrides or {})
    if n_samples is not None:
        opts["n_samples"] = n_samples
    return RenderConfig(**opts)


def cmd_synth(args):
    if args.views < 1:
        raise InputError("--views must be >= 1")
    if args.size < 1:
        raise InputError("--size must be >= 1")
    dio.generate_synthetic_scene(args.out, args.views, args.size, args.seed, args.test_views)
    print(f"wrote {args.views} training views to {args.out}")


def cmd_select_views(args):
    scene = dio.load_blender_scene(args.scene, args.split)
    if args.k > len(scene.cameras):
        raise InputError(f"K={args.k} exceeds the number of cameras ({len(scene.cameras)})")
    grid = make_grid(scene.bounds[0], scene.bounds[1], args.grid_res)
    schedule, cover = schedule_views(scene.cameras, grid, scene.t_near, scene.t_far, args.exact_threshold)
    print(f"K_min = {cover.k_min}" + ("" if cover.optimal else " (greedy, not proven optimal)"))
    prefix = schedule.prefix(args.k)
    Path(args.out).write_text(schedule.to_json(args.k))
    print(f"selected {len(prefix)} views: {prefix}")


def cmd_entropy(args):
    scene = dio.load_blender_scene(args.scene, args.split)
    if not 0 <= args.view < len(scene.images):
        raise InputError(f"--view {args.view} out of range (0..{len(scene.images) - 1})")
    em = local_entropy_map(rgb_to_gray(scene.images[args.view]), args.window, args.bins)
    out = Path(args.out)
    dio.write_pfm(out, em.values)
    dio.write_pgm_preview(out.with_suffix(".pgm"), em.values)
    print(f"entropy map {em.width}x{em.height}, max {em.values.max():.4f} bits -> {out}")


def cmd_train(args):
    try:
        cfg_doc = json.loads(Path(args.config).read_text())
    except json.JSONDecodeError as err:
        raise InputError(f"malformed config {args.config}: {err}") from err
    if not isinstance(cfg_doc, dict) or "scene" not in cfg_doc:
        raise InputError("config must be an object with a 'scene' entry")
    scene = dio.load_blender_scene(cfg_doc["scene"], "train")
    tcfg = TrainConfig.from_dict(cfg_doc.get("train", {}))
    rcfg = _render_config(scene, cfg_doc.get("render"))
    eval_scene = None
    split = cfg_doc.get("eval_split")
    if split:
        eval_scene = dio.load_blender_scene(cfg_doc["scene"], split)
    out = Path(cfg_doc.get("out", "run"))
    state, rows = train(scene, tcfg, rcfg, eval_scene=eval_scene, out_dir=out)
    last = rows[-1][1] if rows else float("nan")
    print(f"trained {state.iteration} iterations, last logged loss {last:.6f} -> {out}")


def cmd_render(args):
    params = dio.read_checkpoint(args.ckpt)
    scene = dio.load_blender_scene(args.scene, args.split)
    if not 0 <= args.pose < len(scene.cameras):
        raise InputError(f"--pose {args.pose} out of range (0..{len(scene.cameras) - 1})")
    img = render_image(params, scene.cameras[args.pose], _render_config(scene, n_samples=args.samples))
    dio.write_png(args.out, img)
    print(f"rendered pose {args.pose} -> {args.out}")


def cmd_eval(args):
    params = dio.read_checkpoint(args.ckpt)
    scene = dio.load_blender_scene(args.scene, args.split)
    if args.views:
        views = [int(v) for v in args.views.split(",")]
    else:
        views = list(range(len(scene.cameras)))
    if any(not 0 <= v < len(scene.cameras) for v in views):
        raise InputError(f"--views {args.views} out of range")
    rcfg = _render_config(scene, n_samples=args.samples)
    preds = [render_image(params, scene.cameras[v], rcfg) for v in views]
    report = evaluate_images(preds, [scene.images[v] for v in views], args.lpips)
    if args.out_json:
        Path(args.out_json).write_text(report.to_json())
    if args.out_csv:
        Path(args.out_csv).write_text(report.to_csv_row())
    print(report.to_json())


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="keyview", description="informative view and ray selection for radiance fields")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render the analytic synthetic scene")
    p.add_argument("--out", required=True)
    p.add_argument("--views", type=int, default=100)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--test-views", type=int, default=8)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("select-views", help="coverage set + greedy baseline schedule")
    p.add_argument("--scene", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--grid-res", type=int, default=16)
    p.add_argument("--exact-threshold", type=int, default=64)
    p.add_argument("--split", default="train")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_select_views)

    p = sub.add_parser("entropy", help="local entropy map of one view")
    p.add_argument("--scene", required=True)
    p.add_argument("--view", type=int, required=True)
    p.add_argument("--window", type=int, default=9)
    p.add_argument("--bins", type=int, default=256)
    p.add_argument("--split", default="train")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_entropy)

    p = sub.add_parser("train", help="train a field from a JSON config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("render", help="render one pose from a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--pose", type=int, required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--samples", type=int, default=64)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("eval", help="PSNR/SSIM (and Avg. given LPIPS) on held-out views")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--views", default="", help="comma-separated view indices (default: all)")
    p.add_argument("--split", default="test")
    p.add_argument("--samples", type=int, default=64)
    p.add_argument("--lpips", type=float, default=None)
    p.add_argument("--out-json")
    p.add_argument("--out-csv")
    p.set_defaults(func=cmd_eval)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        args.func(args)
    except KeyviewError as err:
        print(f"error: {err}", file=sys.stderr)
        return err.exit_code
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_IO
    except Exception as err:  # noqa: BLE001
        print(f"internal error: {err!r}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
