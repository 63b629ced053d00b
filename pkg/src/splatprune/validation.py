"""Input checks shared by the estimator API and the CLI."""

from __future__ import annotations

from typing import List

import numpy as np

from .model import CameraView, Scene
from .scoring import MissingGroundTruthError


def check_scene(X, *, allow_empty: bool = True) -> Scene:
    if not isinstance(X, Scene):
        raise TypeError(f"expected a Scene, got {type(X).__name__}")
    if not allow_empty and len(X) == 0:
        raise ValueError("scene has no primitives")
    return X


def check_views(y, *, require_ground_truth: bool = False) -> List[CameraView]:
    if y is None:
        raise ValueError("training views are required")
    if isinstance(y, CameraView):
        y = [y]
    views = list(y)
    if not views:
        raise ValueError("need at least one training view")
    for k, v in enumerate(views):
        if not isinstance(v, CameraView):
            raise TypeError(f"view {k} is a {type(v).__name__}, not a CameraView")
        if require_ground_truth and v.ground_truth is None:
            raise MissingGroundTruthError(f"view {v.name or k} has no ground-truth image")
    return views


def check_image(a, name: str = "image") -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 3 or a.shape[2] != 3:
        raise ValueError(f"{name} must be HxWx3, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite values")
    return a


def check_fraction(value, name: str) -> float:
    v = float(value)
    if not 0.0 <= v <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value}")
    return v

