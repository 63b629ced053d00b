"""Image quality and throughput metrics."""

from __future__ import annotations

import csv
import json
import statistics
import time
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy.ndimage import correlate1d

from .model import CameraView, Scene
from .rasterizer import RenderOptions, render

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


class ImageTooSmallError(ValueError):
    pass


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def mse(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio for [0, 1] images, capped at 100 dB."""
    err = mse(a, b)
    if err == 0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(1.0 / err)))


def _gaussian_window():
    x = np.arange(SSIM_WINDOW) - SSIM_WINDOW // 2
    g = np.exp(-(x ** 2) / (2 * SSIM_SIGMA ** 2))
    return g / g.sum()


def _filter_valid(img, g):
    out = correlate1d(correlate1d(img, g, axis=0, mode="constant"), g, axis=1, mode="constant")
    r = SSIM_WINDOW // 2
    return out[r:-r, r:-r]


def ssim(a, b) -> float:
    """Single-scale SSIM with an 11x11 Gaussian window (sigma 1.5), averaged over channels.

    Only windows fully inside the image are used.
    """
    a, b = _pair(a, b)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if min(a.shape[:2]) < SSIM_WINDOW:
        raise ImageTooSmallError(f"SSIM needs both sides >= {SSIM_WINDOW}, got {a.shape[:2]}")
    g = _gaussian_window()
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2
    vals = []
    for ch in range(a.shape[2]):
        x, y = a[..., ch], b[..., ch]
        mu_x, mu_y = _filter_valid(x, g), _filter_valid(y, g)
        var_x = _filter_valid(x * x, g) - mu_x * mu_x
        var_y = _filter_valid(y * y, g) - mu_y * mu_y
        cov = _filter_valid(x * y, g) - mu_x * mu_y
        num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
        den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))


def benchmark_fps(scene: Scene, cams: Sequence[CameraView], opts: Optional[RenderOptions] = None,
                  repeats: int = 3, *, n_jobs: Optional[int] = None) -> float:
    """Frames per second: median over ``repeats`` timed passes after one warm-up frame."""
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    if not cams:
        raise ValueError("need at least one camera")
    opts = (opts or RenderOptions()).replace(record_contributions=False)
    render(scene, cams[0], opts, n_jobs=n_jobs)
    rates = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        for cam in cams:
            render(scene, cam, opts, n_jobs=n_jobs)
        rates.append(len(cams) / max(time.perf_counter() - t0, 1e-12))
    return float(statistics.median(rates))


@dataclass
class ViewMetrics:
    name: str
    psnr: float
    ssim: float


@dataclass
class MetricsReport:
    psnr: float
    ssim: float
    fps: float
    primitive_count: int
    render_wall_time: float
    per_view: List[ViewMetrics] = field(default_factory=list)
    scene: str = ""

    SUMMARY_FIELDS = ("scene", "psnr", "ssim", "fps", "primitive_count", "render_wall_time")

    def to_dict(self) -> dict:
        return asdict(self)

    def summary_row(self) -> dict:
        return {k: getattr(self, k) for k in self.SUMMARY_FIELDS}

    def write_json(self, path):
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2, ensure_ascii=False)

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.DictWriter(f, fieldnames=self.SUMMARY_FIELDS)
            w.writeheader()
            w.writerow(self.summary_row())

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        d = dict(d)
        d["per_view"] = [ViewMetrics(**v) for v in d.get("per_view", [])]
        return cls(**d)


def evaluate(scene: Scene, cams: Sequence[CameraView], opts: Optional[RenderOptions] = None, *,
             fps_repeats: int = 1, quantize: bool = False, n_jobs: Optional[int] = None) -> MetricsReport:
    """Render every camera and compare to its ground truth.

    With ``quantize`` the render is rounded to 8 bits first, matching ground
    truth loaded from PNG files.
    """
    opts = (opts or RenderOptions()).replace(record_contributions=False)
    per_view = []
    t0 = time.perf_counter()
    for k, cam in enumerate(cams):
        if cam.ground_truth is None:
            raise ValueError(f"camera {cam.name or k} has no ground-truth image")
        img = render(scene, cam, opts, n_jobs=n_jobs).image
        if quantize:
            img = np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5) / 255.0
        s = ssim(img, cam.ground_truth) if min(cam.width, cam.height) >= SSIM_WINDOW else float("nan")
        per_view.append(ViewMetrics(cam.name or str(k), psnr(img, cam.ground_truth), s))
    wall = time.perf_counter() - t0
    fps = benchmark_fps(scene, cams, opts, fps_repeats, n_jobs=n_jobs) if fps_repeats > 0 else float("nan")
    return MetricsReport(
        psnr=float(np.mean([v.psnr for v in per_view])) if per_view else float("nan"),
        ssim=float(np.mean([v.ssim for v in per_view])) if per_view else float("nan"),
        fps=fps,
        primitive_count=len(scene),
        render_wall_time=wall,
        per_view=per_view,
        scene=scene.source_tag,
    )
