"""Score -> prune -> evaluate sweeps over a grid of pruning settings."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass
from typing import List, Optional, Sequence

from .metrics import evaluate
from .model import CameraView, Scene
from .pruning import (
    PruneSpec,
    apply_mask,
    prune_cross_ratio,
    prune_cross_stochastic,
    prune_cross_threshold,
    prune_pixelwise,
)
from .rasterizer import RenderOptions, render_views
from .scoring import ScoreFunction, aggregate_cross_view, gamma_volume, rank_per_ray, score_records

CURVE_FIELDS = ("setting", "retained_count", "psnr", "ssim", "fps")


@dataclass
class SweepSpec:
    score_function: str
    technique: str
    values: List[float]
    scene: str = ""
    cameras: str = ""
    images: Optional[str] = None
    aggregation: Optional[str] = None
    seed: Optional[int] = None
    fps_repeats: int = 1
    dist_scale: float = 1.0
    tile_size: int = 16

    def __post_init__(self):
        ScoreFunction.parse(self.score_function)
        if not self.values:
            raise ValueError("sweep needs at least one setting value")
        for v in self.values:
            PruneSpec(self.technique, v, seed=self.seed, score_function=self.score_function)

    @classmethod
    def from_json(cls, path) -> "SweepSpec":
        with open(path, encoding="utf-8") as f:
            d = json.load(f)
        base = os.path.dirname(os.path.abspath(path))
        for key in ("scene", "cameras", "images"):
            if d.get(key) and not os.path.isabs(d[key]):
                d[key] = os.path.join(base, d[key])
        unknown = sorted(set(d) - set(cls.__dataclass_fields__))
        if unknown:
            raise ValueError(f"{path}: unknown sweep-spec keys {unknown}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def _done_settings(path) -> set:
    if not os.path.exists(path):
        return set()
    with open(path, newline="") as f:
        return {float(r["setting"]) for r in csv.DictReader(f)}


def run_sweep(scene: Scene, views: Sequence[CameraView], spec: SweepSpec, out_csv, *,
              quantize: bool = False, n_jobs: Optional[int] = None) -> List[dict]:
    """Append one curve row per setting to ``out_csv``; settings already present are skipped.

    Scores are computed once on the unpruned scene. Every row is flushed before
    the next setting starts, so an interrupted sweep loses at most one point.
    """
    fn = ScoreFunction.parse(spec.score_function)
    opts = RenderOptions(tile_size=spec.tile_size, record_contributions=True)
    _, stream = render_views(scene, views, opts, n_jobs=n_jobs)
    gamma = gamma_volume(scene) if fn.needs_gamma and len(scene) else None
    rec = score_records(fn, stream, views=views, gamma=gamma, dist_scale=spec.dist_scale)

    if spec.technique == "pixelwise_topk":
        ranked = rank_per_ray(fn, stream, len(scene), scores=rec)
    else:
        agg = spec.aggregation or fn.default_aggregation
        table = aggregate_cross_view(fn, stream, len(scene), "sum" if agg == "perray" else agg, scores=rec)

    done = _done_settings(out_csv)
    new_file = not os.path.exists(out_csv)
    rows = []
    eval_opts = RenderOptions(tile_size=spec.tile_size)
    with open(out_csv, "a", newline="") as f:
        w = csv.DictWriter(f, fieldnames=CURVE_FIELDS)
        if new_file:
            w.writeheader()
            f.flush()
        for value in spec.values:
            if float(value) in done:
                continue
            if spec.technique == "pixelwise_topk":
                mask = prune_pixelwise(ranked, int(value), len(scene))
            elif spec.technique == "cross_ratio":
                mask = prune_cross_ratio(table, value)
            elif spec.technique == "cross_threshold":
                mask = prune_cross_threshold(table, value)
            else:
                mask = prune_cross_stochastic(table, value, spec.seed)
            pruned, _ = apply_mask(scene, mask)
            report = evaluate(pruned, views, eval_opts, fps_repeats=spec.fps_repeats,
                              quantize=quantize, n_jobs=n_jobs)
            row = {
                "setting": float(value),
                "retained_count": mask.retained_count,
                "psnr": report.psnr,
                "ssim": report.ssim,
                "fps": report.fps,
            }
            w.writerow(row)
            f.flush()
            rows.append(row)
    return rows
