"""Optimization loop: one pose per iteration drawn from the selected views,
pixels drawn from that view's entropy distribution (half) and uniformly (half).
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .dataset_io import SceneBundle, write_checkpoint, write_metrics_csv, write_schedule
from .entropy_sampling import local_entropy_map, rgb_to_gray, sample_rays, to_distribution
from .errors import InputError, NumericError
from .field_model import FieldArch, FieldParams, init_params
from .metrics import psnr
from .scene_geometry import make_grid, pixel_rays
from .view_selection import schedule_views
from .volume_renderer import RenderConfig, render_image, render_rays, render_rays_backward, sample_depths

log = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    k: int = 16
    batch_size: int = 1024
    n_iter: int = 5000
    lr: float = 5e-4
    lr_decay: float = 0.1  # total decay factor reached at n_iter
    seed: int = 0
    log_every: int = 100
    eval_every: int = 1000
    entropy: bool = True
    selection: str = "keynerf"  # "keynerf" | "random"
    stop_after: int | None = None  # truncate the run without changing the lr schedule
    grid_res: int = 16
    exact_threshold: int = 64
    entropy_window: int = 9
    entropy_bins: int = 256
    entropy_floor: float = 0.0
    depth: int = 4
    width: int = 128
    head_width: int = 64
    l_pos: int = 10
    l_dir: int = 4
    dtype: str = "float32"

    def __post_init__(self):
        if self.batch_size < 2 or self.batch_size % 2:
            raise InputError(f"batch_size must be even and >= 2, got {self.batch_size}")
        if self.n_iter < 0:
            raise InputError("n_iter must be >= 0")
        if self.k < 1:
            raise InputError("K must be >= 1")
        if self.selection not in ("keynerf", "random"):
            raise InputError(f"unknown selection {self.selection!r}")

    @property
    def arch(self) -> FieldArch:
        return FieldArch(self.depth, self.width, self.head_width, self.l_pos, self.l_dir)

    @property
    def steps(self) -> int:
        return self.n_iter if self.stop_after is None else min(self.n_iter, self.stop_after)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InputError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainState:
    iteration: int
    params: FieldParams
    m: FieldParams
    v: FieldParams
    rng: np.random.Generator
    loss_history: list = field(default_factory=list)


def init_state(cfg: TrainConfig) -> TrainState:
    params = init_params(cfg.arch, cfg.seed, np.dtype(cfg.dtype))
    return TrainState(0, params, params.zeros_like(), params.zeros_like(),
                      np.random.default_rng(cfg.seed))


def mse_loss(pred, gt):
    pred = np.asarray(pred)
    gt = np.asarray(gt, dtype=pred.dtype)
    if pred.shape != gt.shape:
        raise InputError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    diff = pred - gt
    return float(np.mean(diff * diff)), (2.0 / diff.size) * diff


def adam_update(state: TrainState, grads: FieldParams, lr: float) -> None:
    t = state.iteration + 1
    c1 = 1.0 - ADAM_BETA1 ** t
    c2 = 1.0 - ADAM_BETA2 ** t
    for k, g in grads.arrays.items():
        m = state.m.arrays[k]
        v = state.v.arrays[k]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * (g * g)
        step = (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
        state.params.arrays[k] -= (lr * step).astype(m.dtype)


def learning_rate(cfg: TrainConfig, iteration: int) -> float:
    if cfg.n_iter == 0:
        return cfg.lr
    return cfg.lr * cfg.lr_decay ** (iteration / cfg.n_iter)


def iterations_per_epoch(k: int, pixels_per_view: int, batch_size: int) -> float:
    """Iterations needed to draw as many rays as the K selected views hold."""
    return k * pixels_per_view / batch_size


def make_batch(n_views: int, dists, batch_size: int, rng: np.random.Generator, entropy: bool = True):
    """Pick one of ``n_views`` selected views uniformly and ``batch_size`` of its pixels.

    Returns ``(view_position, pixel_ids)``; ``view_position`` indexes the
    selection list, not the full camera set.
    """
    if n_views < 1:
        raise InputError("cannot build a batch from an empty view selection")
    view = int(rng.integers(n_views))
    dist = dists[view]
    if entropy:
        pixels = sample_rays(dist, batch_size, rng)
    else:
        pixels = rng.integers(0, len(dist), size=batch_size)
    return view, pixels


def train_step(state: TrainState, origins, dirs, gt, cfg: TrainConfig, rcfg: RenderConfig) -> float:
    """One Adam step on a ray batch; mutates ``state`` and returns the loss."""
    dt = state.params.dtype
    t = sample_depths(rcfg.t_near, rcfg.t_far, len(origins), rcfg.n_samples, True, state.rng, dt)
    pred, _, _, ctx = render_rays(state.params, origins, dirs, t, rcfg)
    loss, d_pred = mse_loss(pred, gt)
    if not np.isfinite(loss):
        snapshot = {"iteration": state.iteration, "loss": loss,
                    "param_norm": float(np.linalg.norm(state.params.flat()))}
        raise NumericError(f"non-finite loss at iteration {state.iteration}", snapshot=snapshot)
    grads = render_rays_backward(state.params, ctx, d_pred)
    adam_update(state, grads, learning_rate(cfg, state.iteration))
    state.iteration += 1
    state.loss_history.append(loss)
    return loss


def choose_views(scene: SceneBundle, cfg: TrainConfig):
    """Selected camera indices and, for keynerf selection, the full schedule."""
    n = len(scene.cameras)
    if cfg.k > n:
        raise InputError(f"K={cfg.k} exceeds the number of cameras ({n})")
    if cfg.selection == "random":
        rng = np.random.default_rng([cfg.seed, 7])
        return sorted(int(i) for i in rng.choice(n, cfg.k, replace=False)), None
    grid = make_grid(scene.bounds[0], scene.bounds[1], cfg.grid_res)
    schedule, _ = schedule_views(scene.cameras, grid, scene.t_near, scene.t_far, cfg.exact_threshold)
    return schedule.prefix(cfg.k), schedule


def entropy_distributions(scene: SceneBundle, views, cfg: TrainConfig) -> list:
    return [to_distribution(local_entropy_map(rgb_to_gray(scene.images[i]), cfg.entropy_window,
                                              cfg.entropy_bins), cfg.entropy_floor)
            for i in views]


def evaluate_psnr(params: FieldParams, scene: SceneBundle, rcfg: RenderConfig, views=None) -> float:
    views = range(len(scene.cameras)) if views is None else views
    det = RenderConfig(rcfg.n_samples, False, rcfg.background, rcfg.t_near, rcfg.t_far)
    return float(np.mean([psnr(render_image(params, scene.cameras[i], det), scene.images[i])
                          for i in views]))


def train(scene: SceneBundle, cfg: TrainConfig, rcfg: RenderConfig | None = None,
          eval_scene: SceneBundle | None = None, out_dir=None, eval_views=None):
    """Run the training loop.

    Returns ``(state, rows)`` where rows are ``(iteration, loss, psnr)``
    metric records. With ``out_dir`` set, writes ``checkpoint.bin``,
    ``metrics.csv`` and ``schedule.json`` there.
    """
    if rcfg is None:
        rcfg = RenderConfig(background=scene.background, t_near=scene.t_near, t_far=scene.t_far)
    views, schedule = choose_views(scene, cfg)
    dists = entropy_distributions(scene, views, cfg)
    dt = np.dtype(cfg.dtype)
    rays = [tuple(a.astype(dt) for a in pixel_rays(scene.cameras[i])) for i in views]
    colors = [scene.images[i].reshape(-1, 3).astype(dt) for i in views]

    state = init_state(cfg)
    rows = []
    window = []
    while state.iteration < cfg.steps:
        view, pix = make_batch(len(views), dists, cfg.batch_size, state.rng, cfg.entropy)
        o, d = rays[view]
        loss = train_step(state, o[pix], d[pix], colors[view][pix], cfg, rcfg)
        window.append(loss)
        it = state.iteration
        p = None
        if eval_scene is not None and cfg.eval_every and it % cfg.eval_every == 0:
            p = evaluate_psnr(state.params, eval_scene, rcfg, eval_views)
        if it % cfg.log_every == 0 or p is not None:
            rows.append((it, float(np.mean(window)), p))
            log.info("iter %d loss %.6f%s", it, rows[-1][1], "" if p is None else f" psnr {p:.3f}")
            window = []

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_checkpoint(out / "checkpoint.bin", state.params)
        write_metrics_csv(out / "metrics.csv", rows)
        if schedule is not None:
            write_schedule(out / "schedule.json", schedule, cfg.k)
        else:
            (out / "schedule.json").write_text(json.dumps({"selected": views}))
    return state, rows


def config_to_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
