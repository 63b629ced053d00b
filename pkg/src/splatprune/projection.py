"""World-space Gaussians to screen-space 2D Gaussians (EWA splatting)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import CameraView, GaussianPrimitive, Scene, activate_opacity, covariance_from_params, evaluate_sh

NEAR_PLANE = 0.01
LOW_PASS = 0.3
EXTENT_SIGMAS = 3.0


class BehindCameraError(ValueError):
    pass


@dataclass(frozen=True)
class Projected2DGaussian:
    """Screen-space footprint of one primitive for one camera.

    Pixel centres sit at integer coordinates: pixel (row, col) is at (col, row).
    ``pixel_rect`` is the inclusive (col_min, col_max, row_min, row_max) range
    of pixels inside the 3-sigma extent, clipped to the image.
    """

    primitive_id: int
    mean2d: np.ndarray
    cov2d: np.ndarray
    depth: float
    color: np.ndarray
    sigma: float
    radius: float
    pixel_rect: tuple


@dataclass
class ProjectedBatch:
    """Column-wise projection of a whole scene; culled rows have ``visible`` False."""

    mean2d: np.ndarray  # (N, 2)
    cov2d: np.ndarray  # (N, 2, 2)
    conic: np.ndarray  # (N, 3) inverse covariance entries (a, b, c)
    depth: np.ndarray  # (N,)
    color: np.ndarray  # (N, 3)
    sigma: np.ndarray  # (N,)
    radius: np.ndarray  # (N,)
    rect: np.ndarray  # (N, 4) int64 col_min, col_max, row_min, row_max
    visible: np.ndarray  # (N,) bool

    def __len__(self):
        return self.depth.shape[0]

    def item(self, i: int) -> Optional[Projected2DGaussian]:
        if not self.visible[i]:
            return None
        return Projected2DGaussian(
            primitive_id=int(i),
            mean2d=self.mean2d[i].copy(),
            cov2d=self.cov2d[i].copy(),
            depth=float(self.depth[i]),
            color=self.color[i].copy(),
            sigma=float(self.sigma[i]),
            radius=float(self.radius[i]),
            pixel_rect=tuple(int(v) for v in self.rect[i]),
        )


def perspective_jacobian(point_cam, fx: float, fy: float, near: float = NEAR_PLANE) -> np.ndarray:
    """Jacobian of the pinhole projection linearised at ``point_cam``."""
    x, y, z = np.asarray(point_cam, dtype=np.float64)
    if z <= near:
        raise BehindCameraError(f"point depth {z} is not in front of the near plane {near}")
    return np.array([[fx / z, 0.0, -fx * x / (z * z)], [0.0, fy / z, -fy * y / (z * z)]])


def project_scene(scene: Scene, cam: CameraView, near: float = NEAR_PLANE) -> ProjectedBatch:
    n = len(scene)
    R, t = cam.rotation, cam.translation
    p_cam = scene.positions @ R.T + t
    x, y, z = p_cam[:, 0], p_cam[:, 1], p_cam[:, 2]
    in_front = z > near
    zs = np.where(in_front, z, 1.0)

    J = np.zeros((n, 2, 3))
    J[:, 0, 0] = cam.fx / zs
    J[:, 0, 2] = -cam.fx * x / (zs * zs)
    J[:, 1, 1] = cam.fy / zs
    J[:, 1, 2] = -cam.fy * y / (zs * zs)

    cov3 = covariance_from_params(scene.log_scales, scene.rotations) if n else np.zeros((0, 3, 3))
    T = J @ R
    cov2 = T @ cov3 @ np.swapaxes(T, 1, 2)
    cov2 = 0.5 * (cov2 + np.swapaxes(cov2, 1, 2))
    cov2[:, 0, 0] += LOW_PASS
    cov2[:, 1, 1] += LOW_PASS

    a, b, c = cov2[:, 0, 0], cov2[:, 0, 1], cov2[:, 1, 1]
    det = a * c - b * b
    conic = np.stack([c / det, -b / det, a / det], axis=1)
    mid = 0.5 * (a + c)
    lam_max = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
    radius = EXTENT_SIGMAS * np.sqrt(lam_max)

    mean2d = np.stack([cam.fx * x / zs + cam.cx, cam.fy * y / zs + cam.cy], axis=1)
    with np.errstate(invalid="ignore"):
        col_min = np.maximum(np.ceil(mean2d[:, 0] - radius), 0)
        col_max = np.minimum(np.floor(mean2d[:, 0] + radius), cam.width - 1)
        row_min = np.maximum(np.ceil(mean2d[:, 1] - radius), 0)
        row_max = np.minimum(np.floor(mean2d[:, 1] + radius), cam.height - 1)
    visible = in_front & (col_min <= col_max) & (row_min <= row_max) & np.isfinite(radius)
    rect = np.zeros((n, 4), dtype=np.int64)
    rect[visible] = np.stack([col_min, col_max, row_min, row_max], axis=1)[visible].astype(np.int64)

    view_dirs = scene.positions - cam.center
    view_dirs = view_dirs / np.maximum(np.linalg.norm(view_dirs, axis=1, keepdims=True), 1e-12)
    color = evaluate_sh(scene.sh_coeffs, view_dirs) if n else np.zeros((0, 3))

    return ProjectedBatch(
        mean2d=mean2d,
        cov2d=cov2,
        conic=conic,
        depth=z.copy(),
        color=color,
        sigma=np.atleast_1d(activate_opacity(scene.opacity_logits)),
        radius=radius,
        rect=rect,
        visible=visible,
    )


def project_gaussian(prim: GaussianPrimitive, cam: CameraView, primitive_id: int = 0):
    """Project one primitive; returns ``None`` when it is culled."""
    batch = project_scene(Scene.from_primitives([prim]), cam)
    out = batch.item(0)
    if out is None:
        return None
    return Projected2DGaussian(
        primitive_id, out.mean2d, out.cov2d, out.depth, out.color, out.sigma, out.radius, out.pixel_rect
    )


def evaluate_2d_gaussian(g: Projected2DGaussian, pixel) -> float:
    d = np.asarray(pixel, dtype=np.float64) - g.mean2d
    return float(np.exp(-0.5 * d @ np.linalg.solve(g.cov2d, d)))
