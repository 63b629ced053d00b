"""Seedable synthetic scenes and camera rigs."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import List, Optional, Sequence

import numpy as np

from .model import SH_COEFFS, CameraView, Scene
from .rasterizer import RenderOptions, render

WORLD_UP = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class SynthSpec:
    seed: int = 0
    n_primitives: int = 256
    bounds: tuple = ((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0))
    scale_range: tuple = (np.log(0.02), np.log(0.12))
    opacity_range: tuple = (-2.0, 3.0)
    sh_mode: str = "band0"
    sh_rest_std: float = 0.2

    def __post_init__(self):
        if self.n_primitives < 0:
            raise ValueError("n_primitives must be >= 0")
        lo, hi = (np.asarray(b, dtype=np.float64) for b in self.bounds)
        if lo.shape != (3,) or hi.shape != (3,) or np.any(hi <= lo):
            raise ValueError("bounds must be a non-empty axis-aligned box")
        if self.scale_range[0] > self.scale_range[1] or self.opacity_range[0] > self.opacity_range[1]:
            raise ValueError("ranges must be ordered (low, high)")
        if self.sh_mode not in ("band0", "full"):
            raise ValueError("sh_mode must be 'band0' or 'full'")
        object.__setattr__(self, "bounds", (tuple(map(float, lo)), tuple(map(float, hi))))
        object.__setattr__(self, "scale_range", tuple(map(float, self.scale_range)))
        object.__setattr__(self, "opacity_range", tuple(map(float, self.opacity_range)))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bounds"] = [list(b) for b in self.bounds]
        return d


def gen_scene(spec: SynthSpec) -> Scene:
    rng = np.random.default_rng(spec.seed)
    n = spec.n_primitives
    lo, hi = (np.asarray(b) for b in spec.bounds)
    positions = lo + (hi - lo) * rng.random((n, 3))
    log_scales = rng.uniform(*spec.scale_range, size=(n, 3))
    # normalized Gaussian 4-vectors are uniform on the unit 3-sphere
    quats = rng.standard_normal((n, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    opacity = rng.uniform(*spec.opacity_range, size=n)
    sh = np.zeros((n, SH_COEFFS, 3))
    # band-0 value giving colours in [0.05, 0.95] after the 0.5 offset
    sh[:, 0, :] = rng.uniform(-0.45, 0.45, size=(n, 3)) / 0.28209479177387814
    if spec.sh_mode == "full":
        sh[:, 1:, :] = spec.sh_rest_std * rng.standard_normal((n, SH_COEFFS - 1, 3))
    return Scene(positions, log_scales, quats, opacity, sh, source_tag=f"synthetic:seed={spec.seed}")


def look_at(position, target, up=WORLD_UP) -> np.ndarray:
    """Camera-to-world rotation with columns (right, down, forward)."""
    forward = np.asarray(target, dtype=np.float64) - np.asarray(position, dtype=np.float64)
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, up)
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(forward, [1.0, 0.0, 0.0])
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    return np.stack([right, down, forward], axis=1)


def gen_camera_ring(k: int, radius: float, look_at_point=(0.0, 0.0, 0.0), resolution=(64, 64),
                    focal: Optional[float] = None, elevation: float = 0.0) -> List[CameraView]:
    """``k`` cameras evenly spaced on a horizontal circle, all aimed at ``look_at_point``.

    ``resolution`` is (width, height); the focal length defaults to the width.
    """
    if k < 1 or radius <= 0:
        raise ValueError("need k >= 1 and radius > 0")
    width, height = (resolution, resolution) if np.isscalar(resolution) else resolution
    f = float(width) if focal is None else float(focal)
    target = np.asarray(look_at_point, dtype=np.float64)
    cams = []
    for i in range(k):
        theta = 2.0 * np.pi * i / k
        pos = target + np.array([radius * np.cos(theta), radius * np.sin(theta), elevation])
        cams.append(CameraView.from_camera_pose(width, height, f, f, pos, look_at(pos, target), name=f"view_{i:03d}"))
    return cams


def gen_ground_truth(scene: Scene, cams: Sequence[CameraView], opts: Optional[RenderOptions] = None,
                     *, n_jobs: Optional[int] = None) -> List[CameraView]:
    """Cameras carrying the render of ``scene`` as their ground-truth image."""
    opts = (opts or RenderOptions()).replace(record_contributions=False)
    return [cam.with_ground_truth(render(scene, cam, opts, n_jobs=n_jobs).image) for cam in cams]
