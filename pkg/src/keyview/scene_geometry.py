"""Pinhole cameras, rays, the proxy grid and frustum visibility.

Cameras follow the camera-to-world, -z forward, y up convention used by
Blender-style ``transforms_*.json`` files. Pixel ``(u, v)`` has its center
at ``(u + 0.5, v + 0.5)`` in image-plane coordinates; ``v`` grows downward.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError

DEFAULT_NEAR = 2.0
DEFAULT_FAR = 6.0


@dataclass(frozen=True)
class Camera:
    cam_to_world: np.ndarray
    focal: float
    width: int
    height: int
    cx: float | None = None
    cy: float | None = None

    def __post_init__(self):
        m = np.asarray(self.cam_to_world, dtype=np.float64)
        if m.shape != (4, 4):
            raise InputError(f"cam_to_world must be 4x4, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise InputError("cam_to_world has non-finite entries")
        r = m[:3, :3]
        if np.abs(r @ r.T - np.eye(3)).max() >= 1e-6 or np.linalg.det(r) <= 0:
            raise InputError("rotation block is not a proper orthonormal matrix")
        if not self.focal > 0:
            raise InputError(f"focal must be positive, got {self.focal}")
        if self.width < 1 or self.height < 1:
            raise InputError("image size must be at least 1x1")
        m = m.copy()
        m.setflags(write=False)
        object.__setattr__(self, "cam_to_world", m)
        if self.cx is None:
            object.__setattr__(self, "cx", self.width / 2.0)
        if self.cy is None:
            object.__setattr__(self, "cy", self.height / 2.0)

    @property
    def rotation(self) -> np.ndarray:
        return self.cam_to_world[:3, :3]

    @property
    def center(self) -> np.ndarray:
        return self.cam_to_world[:3, 3]

    @property
    def forward(self) -> np.ndarray:
        """World-space optical axis (unit length)."""
        return -self.rotation[:, 2]

    @property
    def num_pixels(self) -> int:
        return self.width * self.height

    def with_pose(self, cam_to_world) -> "Camera":
        return Camera(cam_to_world, self.focal, self.width, self.height, self.cx, self.cy)


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    t_near: float = DEFAULT_NEAR
    t_far: float = DEFAULT_FAR

    def __post_init__(self):
        if abs(np.linalg.norm(self.direction) - 1.0) > 1e-9:
            raise InputError("ray direction must be unit length")
        if not 0 <= self.t_near < self.t_far:
            raise InputError(f"invalid ray bounds [{self.t_near}, {self.t_far}]")

    def at(self, t):
        return self.origin + np.multiply.outer(t, self.direction)


@dataclass(frozen=True)
class ProxyGrid:
    p_min: np.ndarray
    p_max: np.ndarray
    resolution: int
    points: np.ndarray = field(repr=False)

    def __len__(self):
        return len(self.points)


def look_at(eye, target=(0.0, 0.0, 0.0), up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Camera-to-world matrix placing the camera at ``eye`` facing ``target``."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd /= np.linalg.norm(fwd)
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(fwd, up)
    if np.linalg.norm(right) < 1e-9:
        # looking straight along the up vector
        right = np.cross(fwd, np.array([0.0, 1.0, 0.0]))
    right /= np.linalg.norm(right)
    true_up = np.cross(right, fwd)
    m = np.eye(4)
    m[:3, 0] = right
    m[:3, 1] = true_up
    m[:3, 2] = -fwd
    m[:3, 3] = eye
    return m


def focal_from_fov(fov_x: float, width: int) -> float:
    return width / (2.0 * np.tan(fov_x / 2.0))


def _local_directions(cam: Camera, u, v):
    x = (np.asarray(u, dtype=np.float64) + 0.5 - cam.cx) / cam.focal
    y = -(np.asarray(v, dtype=np.float64) + 0.5 - cam.cy) / cam.focal
    return np.stack([x, y, -np.ones_like(x)], axis=-1)


def camera_ray(cam: Camera, pixel, t_near=DEFAULT_NEAR, t_far=DEFAULT_FAR) -> Ray:
    u, v = pixel
    if not (0 <= u < cam.width and 0 <= v < cam.height):
        raise InputError(f"pixel ({u}, {v}) outside {cam.width}x{cam.height} image")
    d = cam.rotation @ _local_directions(cam, u, v)
    return Ray(cam.center.copy(), d / np.linalg.norm(d), t_near, t_far)


def pixel_rays(cam: Camera, pixel_ids=None):
    """Origins and unit directions for flat row-major pixel indices.

    Returns two ``(n, 3)`` arrays; all pixels when ``pixel_ids`` is None.
    """
    if pixel_ids is None:
        pixel_ids = np.arange(cam.num_pixels)
    pixel_ids = np.asarray(pixel_ids)
    v, u = np.divmod(pixel_ids, cam.width)
    d = _local_directions(cam, u, v) @ cam.rotation.T
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    o = np.broadcast_to(cam.center, d.shape).copy()
    return o, d


def make_grid(p_min, p_max, resolution: int = 16) -> ProxyGrid:
    p_min = np.asarray(p_min, dtype=np.float64).reshape(3)
    p_max = np.asarray(p_max, dtype=np.float64).reshape(3)
    if resolution < 2:
        raise InputError(f"grid resolution must be >= 2, got {resolution}")
    if not np.all(p_min < p_max):
        raise InputError("grid bounds are degenerate: need p_min < p_max on every axis")
    axes = [np.linspace(p_min[k], p_max[k], resolution) for k in range(3)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    return ProxyGrid(p_min, p_max, resolution, pts)


def project(cam: Camera, points):
    """Image-plane coordinates and camera-frame depth of world points.

    Depth is the distance along the optical axis; points behind the camera
    get non-positive depth and meaningless image coordinates.
    """
    pts = np.asarray(points, dtype=np.float64)
    local = (pts - cam.center) @ cam.rotation
    depth = -local[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        x = cam.focal * local[..., 0] / depth + cam.cx
        y = -cam.focal * local[..., 1] / depth + cam.cy
    return np.stack([x, y], axis=-1), depth


def _visible_mask(cam: Camera, points, t_near, t_far):
    xy, depth = project(cam, points)
    in_depth = (depth >= t_near) & (depth < t_far)
    x, y = xy[..., 0], xy[..., 1]
    with np.errstate(invalid="ignore"):
        in_img = (x >= 0) & (x < cam.width) & (y >= 0) & (y < cam.height)
    return in_depth & in_img


def is_visible(cam: Camera, point, t_near=DEFAULT_NEAR, t_far=DEFAULT_FAR) -> bool:
    return bool(_visible_mask(cam, np.asarray(point, dtype=np.float64).reshape(1, 3), t_near, t_far)[0])


def visibility_matrix(cams, grid, t_near=DEFAULT_NEAR, t_far=DEFAULT_FAR) -> np.ndarray:
    """Boolean ``(N cameras, M points)`` matrix; column j is point j's visibility vector."""
    cams = list(cams)
    if not cams:
        raise InputError("visibility_matrix needs at least one camera")
    pts = grid.points if isinstance(grid, ProxyGrid) else np.asarray(grid, dtype=np.float64)
    if len(pts) == 0:
        raise InputError("visibility_matrix needs at least one grid point")
    return np.stack([_visible_mask(c, pts, t_near, t_far) for c in cams])
