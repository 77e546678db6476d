"""Radiance field MLP with a hand-written reverse pass.

Layout: a ReLU trunk over the encoded position emits a softplus density
and a linear feature vector; a one-layer ReLU head over (feature, encoded
direction) emits a sigmoid color.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import InputError


@dataclass(frozen=True)
class FieldArch:
    depth: int = 4
    width: int = 128
    head_width: int = 64
    l_pos: int = 10
    l_dir: int = 4

    @property
    def pos_dim(self) -> int:
        return 3 + 6 * self.l_pos

    @property
    def dir_dim(self) -> int:
        return 3 + 6 * self.l_dir

    def shapes(self) -> dict:
        s = {}
        fan_in = self.pos_dim
        for i in range(self.depth):
            s[f"trunk{i}.w"] = (fan_in, self.width)
            s[f"trunk{i}.b"] = (self.width,)
            fan_in = self.width
        s["sigma.w"] = (self.width, 1)
        s["sigma.b"] = (1,)
        s["feature.w"] = (self.width, self.width)
        s["feature.b"] = (self.width,)
        s["head.w"] = (self.width + self.dir_dim, self.head_width)
        s["head.b"] = (self.head_width,)
        s["rgb.w"] = (self.head_width, 3)
        s["rgb.b"] = (3,)
        return s


@dataclass
class FieldParams:
    arch: FieldArch
    arrays: dict = field(repr=False)

    @property
    def dtype(self):
        return next(iter(self.arrays.values())).dtype

    def copy(self) -> "FieldParams":
        return FieldParams(self.arch, {k: v.copy() for k, v in self.arrays.items()})

    def astype(self, dtype) -> "FieldParams":
        return FieldParams(self.arch, {k: v.astype(dtype) for k, v in self.arrays.items()})

    def zeros_like(self) -> "FieldParams":
        return FieldParams(self.arch, {k: np.zeros_like(v) for k, v in self.arrays.items()})

    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.arrays.values()])

    def with_flat(self, vec) -> "FieldParams":
        out, i = {}, 0
        for k, v in self.arrays.items():
            out[k] = np.asarray(vec[i:i + v.size], dtype=v.dtype).reshape(v.shape)
            i += v.size
        return FieldParams(self.arch, out)


def init_params(arch: FieldArch, seed: int = 0, dtype=np.float32) -> FieldParams:
    """He-uniform weights (bound sqrt(6 / fan_in)), zero biases."""
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in arch.shapes().items():
        if name.endswith(".b"):
            arrays[name] = np.zeros(shape, dtype=dtype)
        else:
            bound = np.sqrt(6.0 / shape[0])
            arrays[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return FieldParams(arch, arrays)


def zero_params(arch: FieldArch, dtype=np.float64) -> FieldParams:
    return FieldParams(arch, {k: np.zeros(s, dtype=dtype) for k, s in arch.shapes().items()})


def positional_encoding(v, order: int) -> np.ndarray:
    """``[v, sin(pi v), cos(pi v), ..., sin(2^(L-1) pi v), cos(2^(L-1) pi v)]``."""
    v = np.asarray(v)
    if order == 0:
        return v.copy()
    scales = (2.0 ** np.arange(order) * np.pi).astype(v.dtype)
    out = np.empty(v.shape[:-1] + (3 + 6 * order,), dtype=v.dtype)
    out[..., :3] = v
    enc = out[..., 3:].reshape(v.shape[:-1] + (order, 2, 3))
    a = v[..., None, :] * scales[:, None]
    np.sin(a, out=enc[..., 0, :])
    np.cos(a, out=enc[..., 1, :])
    return out


def _softplus(z):
    return np.logaddexp(0, z)


_sigmoid = expit


def field_forward(params: FieldParams, x, d):
    """Batched forward pass. Returns ``(sigma (P,), rgb (P, 3), cache)``.

    ``d`` holds one direction per point, or one per group of consecutive
    points (e.g. per ray) when ``P`` is a multiple of ``len(d)``.
    """
    p = params.arrays
    arch = params.arch
    dt = params.dtype
    x = np.asarray(x, dtype=dt).reshape(-1, 3)
    d = np.asarray(d, dtype=dt).reshape(-1, 3)
    if len(d) == 0 or len(x) % len(d):
        raise InputError(f"{len(x)} points cannot share {len(d)} directions")
    group = len(x) // len(d)
    h = positional_encoding(x, arch.l_pos)
    acts = [h]
    for i in range(arch.depth):
        h = h @ p[f"trunk{i}.w"]
        h += p[f"trunk{i}.b"]
        np.maximum(h, 0, out=h)
        acts.append(h)
    s_pre = (h @ p["sigma.w"])[:, 0] + p["sigma.b"][0]
    sigma = _softplus(s_pre)
    feat = h @ p["feature.w"]
    feat += p["feature.b"]
    enc_d = positional_encoding(d, arch.l_dir)
    w_head = p["head.w"]
    g = feat @ w_head[:arch.width]
    g_dir = enc_d @ w_head[arch.width:]
    g_dir += p["head.b"]
    g.reshape(len(d), group, -1)[...] += g_dir[:, None, :]
    np.maximum(g, 0, out=g)
    rgb = _sigmoid(g @ p["rgb.w"] + p["rgb.b"])
    cache = (acts, s_pre, feat, enc_d, g, rgb)
    return sigma, rgb, cache


def field_eval(params: FieldParams, x, d):
    """Density and color for points ``x`` seen along unit directions ``d``."""
    x = np.asarray(x, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(d))):
        raise InputError("field_eval received non-finite input")
    norms = np.linalg.norm(d.reshape(-1, 3), axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-6):
        raise InputError("viewing directions must be unit length")
    sigma, rgb, _ = field_forward(params, x, d)
    if x.ndim == 1:
        return sigma[0], rgb[0]
    return sigma, rgb


def field_backward(params: FieldParams, cache, d_sigma, d_rgb) -> FieldParams:
    """Gradient of ``sum(d_sigma * sigma) + sum(d_rgb * rgb)`` w.r.t. params."""
    p = params.arrays
    arch = params.arch
    acts, s_pre, feat, enc_d, g, rgb = cache
    n = len(s_pre)
    d_sigma = np.asarray(d_sigma, dtype=params.dtype)
    d_rgb = np.asarray(d_rgb, dtype=params.dtype)
    if d_sigma.shape != (n,) or d_rgb.shape != (n, 3):
        raise InputError(
            f"upstream gradient shapes {d_sigma.shape}, {d_rgb.shape} do not match batch of {n}")
    grads = {}
    # column sums through BLAS; much faster than a strided reduction
    ones = np.ones(n, dtype=params.dtype)
    dzc = d_rgb * rgb * (1 - rgb)
    grads["rgb.w"] = g.T @ dzc
    grads["rgb.b"] = ones @ dzc
    dzg = dzc @ p["rgb.w"].T
    dzg *= g > 0
    dzg_dir = dzg.reshape(len(enc_d), -1, dzg.shape[1]).sum(1)
    grads["head.w"] = np.concatenate([feat.T @ dzg, enc_d.T @ dzg_dir], axis=0)
    grads["head.b"] = ones @ dzg
    dfeat = dzg @ p["head.w"][:arch.width].T
    h = acts[-1]
    grads["feature.w"] = h.T @ dfeat
    grads["feature.b"] = ones @ dfeat
    ds = (d_sigma * _sigmoid(s_pre))[:, None]
    grads["sigma.w"] = h.T @ ds
    grads["sigma.b"] = ones @ ds
    dh = dfeat @ p["feature.w"].T
    dh += ds * p["sigma.w"][:, 0]
    for i in reversed(range(arch.depth)):
        dh *= acts[i + 1] > 0
        grads[f"trunk{i}.w"] = acts[i].T @ dh
        grads[f"trunk{i}.b"] = ones @ dh
        if i:
            dh = dh @ p[f"trunk{i}.w"].T
    return FieldParams(arch, {k: grads[k] for k in p})
