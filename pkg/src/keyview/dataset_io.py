"""Scene loading, the analytic synthetic scene, and artifact file formats.

On-disk formats:

* scenes: ``transforms_<split>.json`` (``camera_angle_x``, ``frames[].file_path``,
  ``frames[].transform_matrix``) plus 8-bit PNGs, and an optional
  ``scene.json`` sidecar with depth bounds, grid bounds and background.
* checkpoints: ``KVFIELD\\0`` magic, u32 version, u32 architecture header
  ``(depth, width, head_width, l_pos, l_dir)``, then little-endian float32
  arrays in :meth:`FieldArch.shapes` order.
* entropy maps: PFM (little-endian, scale -1.0) with an 8-bit PGM preview.
* schedules: JSON; training metrics: CSV ``iteration,loss,psnr``.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import FormatError, InputError, SceneLoadError
from .field_model import FieldArch, FieldParams
from .scene_geometry import Camera, focal_from_fov, look_at, pixel_rays
from .view_selection import ViewSchedule

DEFAULT_BOUNDS = ((-1.2, -1.2, -1.2), (1.2, 1.2, 1.2))
BLENDER_FOV_X = 0.6911112070083618
CKPT_MAGIC = b"KVFIELD\x00"
CKPT_VERSION = 1


@dataclass
class SceneBundle:
    cameras: list
    images: list
    bounds: tuple = DEFAULT_BOUNDS
    t_near: float = 2.0
    t_far: float = 6.0
    background: tuple = (1.0, 1.0, 1.0)
    names: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.cameras) != len(self.images):
            raise InputError(f"{len(self.cameras)} cameras but {len(self.images)} images")
        shapes = {im.shape for im in self.images}
        if len(shapes) > 1:
            raise InputError(f"images differ in size: {sorted(shapes)}")
        if not np.all(np.isfinite(np.asarray(self.bounds, dtype=float))):
            raise InputError("scene bounds must be finite")


# ----------------------------------------------------------------------------
# Blender-format scenes


def rgba_to_rgb(pixels: np.ndarray, background) -> np.ndarray:
    """8-bit RGB(A) array to float RGB, alpha-composited onto ``background``."""
    px = pixels.astype(np.float64) / 255.0
    if px.ndim == 2:
        px = np.repeat(px[..., None], 3, axis=-1)
    if px.shape[-1] == 4:
        a = px[..., 3:]
        return px[..., :3] * a + np.asarray(background, dtype=np.float64) * (1.0 - a)
    return px[..., :3]


def _read_sidecar(root: Path) -> dict:
    side = root / "scene.json"
    if not side.exists():
        return {}
    try:
        return json.loads(side.read_text())
    except json.JSONDecodeError as err:
        raise SceneLoadError(f"malformed {side}: {err}") from err


def _rigid(matrix, where: str) -> np.ndarray:
    m = np.asarray(matrix, dtype=np.float64)
    if m.shape != (4, 4) or not np.all(np.isfinite(m)):
        raise SceneLoadError(f"{where}: transform_matrix must be a finite 4x4 matrix")
    r = m[:3, :3]
    if np.abs(r @ r.T - np.eye(3)).max() > 1e-3 or np.linalg.det(r) <= 0:
        raise SceneLoadError(f"{where}: transform is not rigid (rotation not orthonormal)")
    u, _, vt = np.linalg.svd(r)
    m = m.copy()
    m[:3, :3] = u @ vt
    return m


def load_blender_scene(path, split: str = "train", background=None) -> SceneBundle:
    root = Path(path)
    tf = root / f"transforms_{split}.json"
    if not tf.exists():
        tf = root / "transforms.json"
    if not tf.exists():
        raise SceneLoadError(f"no transforms_{split}.json or transforms.json in {root}")
    try:
        meta = json.loads(tf.read_text())
        fov = float(meta["camera_angle_x"])
        frames = meta["frames"]
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as err:
        raise SceneLoadError(f"malformed {tf}: {err}") from err

    side = _read_sidecar(root)
    if background is None:
        background = side.get("background", (1.0, 1.0, 1.0))
    background = tuple(float(c) for c in background)

    cameras, images, names = [], [], []
    for i, frame in enumerate(frames):
        try:
            rel = frame["file_path"]
            mat = frame["transform_matrix"]
        except (KeyError, TypeError) as err:
            raise SceneLoadError(f"{tf}: frame {i} missing {err}") from err
        img_path = root / rel
        if img_path.suffix == "":
            img_path = img_path.with_suffix(".png")
        if not img_path.exists():
            raise SceneLoadError(f"missing image {img_path}")
        with Image.open(img_path) as im:
            px = np.asarray(im)
        if px.dtype != np.uint8:
            raise SceneLoadError(f"{img_path}: expected 8-bit image, got {px.dtype}")
        img = rgba_to_rgb(px, background)
        h, w = img.shape[:2]
        cameras.append(Camera(_rigid(mat, f"frame {i}"), focal_from_fov(fov, w), w, h))
        images.append(img)
        names.append(rel)
    if not cameras:
        raise SceneLoadError(f"{tf} lists no frames")
    return SceneBundle(
        cameras, images,
        bounds=tuple(tuple(b) for b in side.get("bounds", DEFAULT_BOUNDS)),
        t_near=float(side.get("t_near", 2.0)),
        t_far=float(side.get("t_far", 6.0)),
        background=background,
        names=names,
    )


# ----------------------------------------------------------------------------
# Synthetic oracle scene


@dataclass(frozen=True)
class SyntheticSpec:
    sphere_radius: float = 1.0
    checks: int = 8  # squares per half-turn in azimuth and per pole-to-pole in polar angle
    color_a: tuple = (0.9, 0.25, 0.2)
    color_b: tuple = (0.95, 0.9, 0.8)
    disc_height: float = -1.0
    disc_radius: float = 1.2
    disc_color: tuple = (0.35, 0.55, 0.8)
    light_dir: tuple = (0.4, 0.3, 0.866)
    cam_radius: float = 4.0
    fov_x: float = BLENDER_FOV_X

    @property
    def light(self) -> np.ndarray:
        l = np.asarray(self.light_dir, dtype=np.float64)
        return l / np.linalg.norm(l)


def sphere_albedo(points, spec: SyntheticSpec) -> np.ndarray:
    """Checkerboard in (azimuth, polar angle) on the sphere surface."""
    p = np.asarray(points, dtype=np.float64)
    az = np.arctan2(p[..., 1], p[..., 0]) + np.pi
    polar = np.arccos(np.clip(p[..., 2] / spec.sphere_radius, -1.0, 1.0))
    i = np.floor(az / np.pi * spec.checks).astype(np.int64)
    j = np.floor(polar / np.pi * spec.checks).astype(np.int64)
    odd = ((i + j) % 2 == 1)[..., None]
    return np.where(odd, np.asarray(spec.color_a), np.asarray(spec.color_b))


def trace_synthetic(origins, dirs, spec: SyntheticSpec, background=(0.0, 0.0, 0.0)):
    """Closed-form colors and hit mask for rays against sphere + ground disc."""
    o = np.asarray(origins, dtype=np.float64)
    d = np.asarray(dirs, dtype=np.float64)
    b = np.einsum("...i,...i->...", o, d)
    c = np.einsum("...i,...i->...", o, o) - spec.sphere_radius ** 2
    disc = b * b - c
    root = np.sqrt(np.maximum(disc, 0.0))
    t_s = -b - root
    t_s = np.where(t_s > 0, t_s, -b + root)
    t_s = np.where((disc >= 0) & (t_s > 0), t_s, np.inf)

    with np.errstate(divide="ignore", invalid="ignore"):
        t_d = (spec.disc_height - o[..., 2]) / d[..., 2]
        hit_d = o[..., :2] + t_d[..., None] * d[..., :2]
    on_disc = np.isfinite(t_d) & (t_d > 0) & (np.einsum("...i,...i->...", hit_d, hit_d) <= spec.disc_radius ** 2)
    t_d = np.where(on_disc, t_d, np.inf)

    light = spec.light
    p_s = o + np.where(np.isfinite(t_s), t_s, 0.0)[..., None] * d
    n_s = p_s / spec.sphere_radius
    shade_s = np.maximum(0.0, n_s @ light)[..., None] * sphere_albedo(p_s, spec)
    shade_d = max(0.0, light[2]) * np.asarray(spec.disc_color)
    bg = np.asarray(background, dtype=np.float64)

    sphere_first = t_s <= t_d
    hit = np.isfinite(t_s) | np.isfinite(t_d)
    color = np.where(sphere_first[..., None], shade_s, shade_d)
    color = np.where(hit[..., None], color, bg)
    return color, hit


def synthetic_poses(n_views: int, seed: int = 0, radius: float = 4.0) -> list:
    """Two elevation rings plus Fibonacci points on the upper hemisphere."""
    rng = np.random.default_rng(seed)
    n_ring = n_views // 4
    n_fib = n_views - 2 * n_ring
    eyes = []
    for elev in (np.deg2rad(15.0), np.deg2rad(40.0)):
        offset = rng.uniform(0, 2 * np.pi)
        for k in range(n_ring):
            az = offset + 2 * np.pi * k / n_ring
            eyes.append((np.cos(elev) * np.cos(az), np.cos(elev) * np.sin(az), np.sin(elev)))
    golden = np.pi * (3.0 - math.sqrt(5.0))
    for i in range(n_fib):
        z = 1.0 - (i + 0.5) / n_fib
        r = math.sqrt(max(0.0, 1.0 - z * z))
        eyes.append((r * math.cos(golden * i), r * math.sin(golden * i), z))
    return [look_at(radius * np.asarray(e)) for e in eyes]


def holdout_poses(n_views: int, seed: int = 0, radius: float = 4.0) -> list:
    rng = np.random.default_rng([seed, 1])
    az = rng.uniform(0, 2 * np.pi, n_views)
    elev = rng.uniform(np.deg2rad(10.0), np.deg2rad(60.0), n_views)
    eyes = np.stack([np.cos(elev) * np.cos(az), np.cos(elev) * np.sin(az), np.sin(elev)], axis=1)
    return [look_at(radius * e) for e in eyes]


def render_synthetic_view(cam: Camera, spec: SyntheticSpec) -> np.ndarray:
    """8-bit RGBA frame: shaded geometry, alpha 0 where rays miss."""
    o, d = pixel_rays(cam)
    color, hit = trace_synthetic(o, d, spec)
    rgb = np.round(np.clip(color, 0.0, 1.0) * 255.0).astype(np.uint8)
    alpha = np.where(hit, 255, 0).astype(np.uint8)
    return np.concatenate([rgb, alpha[:, None]], axis=1).reshape(cam.height, cam.width, 4)


def _write_split(root: Path, split: str, poses, size, spec):
    (root / split).mkdir(parents=True, exist_ok=True)
    focal = focal_from_fov(spec.fov_x, size)
    frames, cams, rgba = [], [], []
    for i, pose in enumerate(poses):
        cam = Camera(pose, focal, size, size)
        px = render_synthetic_view(cam, spec)
        rel = f"./{split}/r_{i:03d}"
        Image.fromarray(px).save(root / f"{rel}.png")
        frames.append({"file_path": rel, "transform_matrix": np.asarray(pose).tolist()})
        cams.append(cam)
        rgba.append(px)
    meta = {"camera_angle_x": spec.fov_x, "frames": frames}
    (root / f"transforms_{split}.json").write_text(json.dumps(meta, indent=2))
    return cams, rgba


def generate_synthetic_scene(out, n_views: int = 100, size: int = 64, seed: int = 0,
                             n_test: int = 8, spec: SyntheticSpec | None = None,
                             background=(0.0, 0.0, 0.0)) -> SceneBundle:
    """Render the analytic scene from ``n_views`` training poses (and ``n_test``
    held-out poses) to Blender-format files under ``out``.

    Returns the training split exactly as :func:`load_blender_scene` reads it.
    """
    if n_views < 1:
        raise InputError("need at least one view")
    spec = spec or SyntheticSpec()
    root = Path(out)
    root.mkdir(parents=True, exist_ok=True)
    cams, rgba = _write_split(root, "train", synthetic_poses(n_views, seed, spec.cam_radius), size, spec)
    if n_test:
        _write_split(root, "test", holdout_poses(n_test, seed, spec.cam_radius), size, spec)
    side = {"t_near": 2.0, "t_far": 6.0, "bounds": [list(b) for b in DEFAULT_BOUNDS],
            "background": list(background)}
    (root / "scene.json").write_text(json.dumps(side, indent=2))
    images = [rgba_to_rgb(px, background) for px in rgba]
    return SceneBundle(cams, images, DEFAULT_BOUNDS, 2.0, 6.0, tuple(background),
                       [f"./train/r_{i:03d}" for i in range(n_views)])


# ----------------------------------------------------------------------------
# Artifacts


def write_png(path, image) -> None:
    img = np.round(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(img).save(path)


def write_checkpoint(path, params: FieldParams) -> None:
    a = params.arch
    header = CKPT_MAGIC + struct.pack("<6I", CKPT_VERSION, a.depth, a.width, a.head_width, a.l_pos, a.l_dir)
    body = b"".join(params.arrays[k].astype("<f4").tobytes() for k in a.shapes())
    Path(path).write_bytes(header + body)


def read_checkpoint(path) -> FieldParams:
    data = Path(path).read_bytes()
    head = len(CKPT_MAGIC) + 24
    if len(data) < head or data[:len(CKPT_MAGIC)] != CKPT_MAGIC:
        raise FormatError(f"{path}: not a field checkpoint (bad magic or truncated header)")
    version, depth, width, head_width, l_pos, l_dir = struct.unpack("<6I", data[len(CKPT_MAGIC):head])
    if version != CKPT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    arch = FieldArch(depth, width, head_width, l_pos, l_dir)
    arrays, offset = {}, head
    for name, shape in arch.shapes().items():
        nbytes = 4 * int(np.prod(shape))
        if offset + nbytes > len(data):
            raise FormatError(f"{path}: truncated while reading {name}")
        arrays[name] = np.frombuffer(data, dtype="<f4", count=nbytes // 4, offset=offset).reshape(shape).astype(np.float32)
        offset += nbytes
    if offset != len(data):
        raise FormatError(f"{path}: {len(data) - offset} trailing bytes")
    return FieldParams(arch, arrays)


def write_pfm(path, image) -> None:
    img = np.asarray(image, dtype="<f4")
    color = img.ndim == 3
    h, w = img.shape[:2]
    header = f"{'PF' if color else 'Pf'}\n{w} {h}\n-1.0\n".encode("ascii")
    Path(path).write_bytes(header + np.ascontiguousarray(img[::-1]).tobytes())


def read_pfm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    try:
        kind, dims, scale, rest = data.split(b"\n", 3)
        w, h = (int(v) for v in dims.split())
        scale = float(scale)
    except ValueError as err:
        raise FormatError(f"{path}: malformed PFM header") from err
    if kind not in (b"PF", b"Pf"):
        raise FormatError(f"{path}: bad PFM magic {kind!r}")
    channels = 3 if kind == b"PF" else 1
    dtype = "<f4" if scale < 0 else ">f4"
    count = w * h * channels
    if len(rest) != 4 * count:
        raise FormatError(f"{path}: expected {4 * count} data bytes, found {len(rest)}")
    img = np.frombuffer(rest, dtype=dtype).astype(np.float32)
    shape = (h, w, 3) if channels == 3 else (h, w)
    return img.reshape(shape)[::-1].copy()


def write_pgm_preview(path, values) -> None:
    v = np.asarray(values, dtype=np.float64)
    top = v.max()
    scaled = np.zeros(v.shape) if top <= 0 else v / top * 255.0
    px = np.round(scaled).astype(np.uint8)
    h, w = px.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + px.tobytes())


def write_schedule(path, schedule: ViewSchedule, k=None) -> None:
    Path(path).write_text(schedule.to_json(k))


def read_schedule(path) -> ViewSchedule:
    try:
        return ViewSchedule.from_json(Path(path).read_text())
    except (json.JSONDecodeError, KeyError, TypeError) as err:
        raise FormatError(f"{path}: malformed schedule: {err}") from err


METRIC_FIELDS = ("iteration", "loss", "psnr")


def write_metrics_csv(path, rows) -> None:
    """``rows``: iterable of ``(iteration, loss, psnr_or_None)``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_FIELDS)
        for it, loss, p in rows:
            w.writerow([int(it), "" if loss is None else repr(float(loss)),
                        "" if p is None else repr(float(p))])


def read_metrics_csv(path) -> list:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != METRIC_FIELDS:
            raise FormatError(f"{path}: unexpected metrics header {header}")
        rows = []
        for rec in reader:
            if len(rec) != 3:
                raise FormatError(f"{path}: malformed row {rec}")
            rows.append((int(rec[0]), float(rec[1]) if rec[1] else None,
                         float(rec[2]) if rec[2] else None))
    return rows
