"""Paired training runs on the synthetic scene: view selection versus a
random-selection control across K, and entropy versus uniform pixel draws.

Run as ``python -m keyview.study OUT_DIR``; writes per-run artifacts plus
``summary.json`` and ``psnr_vs_k.csv``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .dataset_io import generate_synthetic_scene, load_blender_scene
from .trainer import TrainConfig, train
from .volume_renderer import RenderConfig

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class StudyConfig:
    seeds: tuple = (0, 1, 2)
    ks: tuple = (8, 48)
    n_views: int = 100
    size: int = 64
    n_test: int = 8
    scene_seed: int = 0
    early_iter: int = 2000
    n_samples: int = 32
    train: TrainConfig = TrainConfig(
        batch_size=1024, n_iter=5000, eval_every=1000,
        depth=2, width=64, head_width=32, l_pos=6, l_dir=2,
    )


def run_name(selection: str, k: int, seed: int, entropy: bool = True) -> str:
    return f"{selection}_k{k}_s{seed}" + ("" if entropy else "_noent")


def run_one(scene, test, cfg: TrainConfig, rcfg: RenderConfig, out: Path) -> dict:
    t0 = time.perf_counter()
    _, rows = train(scene, cfg, rcfg, eval_scene=test, out_dir=out)
    evals = {it: p for it, _, p in rows if p is not None}
    return {"psnr": evals, "seconds": time.perf_counter() - t0}


def directional_study(root, study: StudyConfig = StudyConfig()) -> dict:
    t_start = time.perf_counter()
    root = Path(root)
    scene_dir = root / "scene"
    if not (scene_dir / "transforms_train.json").exists():
        generate_synthetic_scene(scene_dir, study.n_views, study.size, study.scene_seed, study.n_test)
    scene = load_blender_scene(scene_dir, "train")
    test = load_blender_scene(scene_dir, "test")
    rcfg = RenderConfig(study.n_samples, True, scene.background, scene.t_near, scene.t_far)

    runs = {}
    for seed in study.seeds:
        for k in study.ks:
            for selection in ("keynerf", "random"):
                cfg = replace(study.train, k=k, seed=seed, selection=selection)
                name = run_name(selection, k, seed)
                log.info("run %s", name)
                runs[name] = run_one(scene, test, cfg, rcfg, root / "runs" / name)
        cfg = replace(study.train, k=study.ks[0], seed=seed, entropy=False, stop_after=study.early_iter)
        name = run_name("keynerf", study.ks[0], seed, entropy=False)
        log.info("run %s", name)
        runs[name] = run_one(scene, test, cfg, rcfg, root / "runs" / name)

    final = study.train.n_iter
    summary = {"runs": runs, "margin": {}, "mean_psnr": {}}
    for k in study.ks:
        for selection in ("keynerf", "random"):
            summary["mean_psnr"][f"{selection}_k{k}"] = float(np.mean(
                [runs[run_name(selection, k, s)]["psnr"][final] for s in study.seeds]))
        summary["margin"][k] = summary["mean_psnr"][f"keynerf_k{k}"] - summary["mean_psnr"][f"random_k{k}"]
    k0 = study.ks[0]
    early_on = np.mean([runs[run_name("keynerf", k0, s)]["psnr"][study.early_iter] for s in study.seeds])
    early_off = np.mean([runs[run_name("keynerf", k0, s, False)]["psnr"][study.early_iter]
                         for s in study.seeds])
    summary["early"] = {"entropy": float(early_on), "uniform": float(early_off),
                        "gap": float(early_on - early_off)}
    summary["seconds"] = time.perf_counter() - t_start

    (root / "summary.json").write_text(json.dumps(summary, indent=2))
    with open(root / "psnr_vs_k.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "keynerf_psnr", "random_psnr", "margin"])
        for k in study.ks:
            w.writerow([k, repr(summary["mean_psnr"][f"keynerf_k{k}"]),
                        repr(summary["mean_psnr"][f"random_k{k}"]), repr(summary["margin"][k])])
    return summary


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--ks", type=int, nargs="+", default=[8, 48])
    ap.add_argument("--n-iter", type=int, default=5000)
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    base = StudyConfig()
    study = replace(base, seeds=tuple(args.seeds), ks=tuple(args.ks),
                    train=replace(base.train, n_iter=args.n_iter))
    summary = directional_study(args.out, study)
    print(json.dumps({"margin": summary["margin"], "early": summary["early"]}, indent=2))


if __name__ == "__main__":
    main()
