"""Alpha-compositing quadrature along camera rays, with its reverse pass."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError, NumericError
from .field_model import FieldParams, field_backward, field_forward
from .scene_geometry import DEFAULT_FAR, DEFAULT_NEAR, Camera, Ray, pixel_rays

DEPTH_EPS = 1e-8


@dataclass(frozen=True)
class RenderConfig:
    n_samples: int = 64
    stratified: bool = True
    background: tuple = (1.0, 1.0, 1.0)
    t_near: float = DEFAULT_NEAR
    t_far: float = DEFAULT_FAR

    def __post_init__(self):
        if self.n_samples < 2:
            raise InputError("n_samples must be >= 2")
        bg = tuple(float(c) for c in self.background)
        if len(bg) != 3 or not all(0.0 <= c <= 1.0 for c in bg):
            raise InputError(f"background must be an RGB triple in [0, 1], got {self.background}")
        object.__setattr__(self, "background", bg)
        if not 0 <= self.t_near < self.t_far:
            raise InputError(f"invalid depth bounds [{self.t_near}, {self.t_far}]")


@dataclass(frozen=True)
class RenderResult:
    rgb: np.ndarray
    acc: float
    depth: float


def sample_depths(t_near, t_far, n_rays, n, stratified=False, rng=None, dtype=np.float64):
    """``(n_rays, n)`` sample depths: bin midpoints, or one uniform draw per bin."""
    edges = np.linspace(t_near, t_far, n + 1)
    lo, width = edges[:-1], edges[1:] - edges[:-1]
    if stratified:
        if rng is None:
            raise InputError("stratified sampling needs a random generator")
        u = rng.random((n_rays, n))
    else:
        u = np.full((n_rays, n), 0.5)
    return (lo + u * width).astype(dtype)


def sample_along_ray(ray: Ray, n: int, stratified: bool = False, rng=None) -> np.ndarray:
    if n < 2:
        raise InputError("need at least two samples per ray")
    return sample_depths(ray.t_near, ray.t_far, 1, n, stratified, rng)[0]


def composite(sigma, rgb, t, t_far, background):
    """Composite per-sample density/color into pixel color, opacity, depth."""
    delta = np.empty_like(t)
    delta[:, :-1] = t[:, 1:] - t[:, :-1]
    delta[:, -1] = t_far - t[:, -1]
    tau = sigma * delta
    alpha = 1.0 - np.exp(-tau)
    # transmittance after each sample; trans_before[k] = prod_{j<k} (1 - alpha_j)
    trans_after = np.exp(-np.cumsum(tau, axis=1))
    trans_before = np.concatenate([np.ones_like(t[:, :1]), trans_after[:, :-1]], axis=1)
    w = trans_before * alpha
    acc = w.sum(1)
    bg = np.asarray(background, dtype=t.dtype)
    out = (w[..., None] * rgb).sum(1) + (1.0 - acc)[:, None] * bg
    depth = (w * t).sum(1) / np.maximum(acc, DEPTH_EPS)
    aux = (w, trans_after, delta, rgb, bg)
    return out, acc, depth, aux


def composite_backward(aux, d_out):
    """Gradients of ``sum(d_out * rgb_out)`` w.r.t. per-sample sigma and rgb."""
    w, trans_after, delta, rgb, bg = aux
    d_rgb = w[..., None] * d_out[:, None, :]
    s = ((rgb - bg) * d_out[:, None, :]).sum(-1)
    ws = w * s
    # sum over samples strictly behind k
    behind = np.cumsum(ws[:, ::-1], axis=1)[:, ::-1] - ws
    d_sigma = delta * (trans_after * s - behind)
    return d_sigma, d_rgb


def _eval_field(field, x, d, n):
    """``x``: (R*n, 3) sample points; ``d``: (R, 3) ray directions."""
    if isinstance(field, FieldParams):
        return field_forward(field, x, d)
    sigma, rgb = field(x, np.repeat(d, n, axis=0))
    return np.asarray(sigma, dtype=np.float64), np.asarray(rgb, dtype=np.float64), None


def render_rays(field, origins, dirs, t, cfg: RenderConfig, ray_ids=None):
    """Render a batch of rays at given sample depths.

    ``field`` is FieldParams or a callable ``(x, d) -> (sigma, rgb)``.
    Returns ``(rgb, acc, depth, ctx)``; ``ctx`` feeds :func:`render_rays_backward`.
    """
    n_rays, n = t.shape
    dt = field.dtype if isinstance(field, FieldParams) else np.float64
    o = np.asarray(origins, dtype=dt)
    dvec = np.asarray(dirs, dtype=dt)
    t = np.asarray(t, dtype=dt)
    x = o[:, None, :] + t[..., None] * dvec[:, None, :]
    sigma, rgb, cache = _eval_field(field, x.reshape(-1, 3), dvec, n)
    bad = ~(np.isfinite(sigma).reshape(n_rays, n).all(1) & np.isfinite(rgb).reshape(n_rays, -1).all(1))
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        rid = i if ray_ids is None else ray_ids[i]
        raise NumericError(f"non-finite field output on ray {rid}", ray_id=rid)
    out, acc, depth, aux = composite(sigma.reshape(n_rays, n), rgb.reshape(n_rays, n, 3),
                                     t, cfg.t_far, cfg.background)
    return out, acc, depth, (cache, aux)


def render_rays_backward(params: FieldParams, ctx, d_out) -> FieldParams:
    cache, aux = ctx
    d_sigma, d_rgb = composite_backward(aux, np.asarray(d_out, dtype=params.dtype))
    return field_backward(params, cache, d_sigma.ravel(), d_rgb.reshape(-1, 3))


def render_ray(field, ray: Ray, cfg: RenderConfig, rng=None) -> RenderResult:
    t = sample_along_ray(ray, cfg.n_samples, cfg.stratified, rng)[None, :]
    cfg_ray = RenderConfig(cfg.n_samples, cfg.stratified, cfg.background, ray.t_near, ray.t_far)
    rgb, acc, depth, _ = render_rays(field, ray.origin[None], ray.direction[None], t, cfg_ray)
    return RenderResult(rgb[0], float(acc[0]), float(depth[0]))


def render_image(field, cam: Camera, cfg: RenderConfig, chunk: int = 4096) -> np.ndarray:
    """Full ``(H, W, 3)`` frame with deterministic midpoint sampling."""
    n_pix = cam.num_pixels
    out = np.empty((n_pix, 3))
    for start in range(0, n_pix, chunk):
        ids = np.arange(start, min(start + chunk, n_pix))
        o, d = pixel_rays(cam, ids)
        t = sample_depths(cfg.t_near, cfg.t_far, len(ids), cfg.n_samples)
        try:
            rgb, _, _, _ = render_rays(field, o, d, t, cfg, ray_ids=ids)
        except NumericError as err:
            v, u = divmod(int(err.ray_id), cam.width)
            raise NumericError(f"{err} at pixel ({u}, {v})", ray_id=err.ray_id, pixel=(u, v)) from err
        out[ids] = rgb
    return out.reshape(cam.height, cam.width, 3)
