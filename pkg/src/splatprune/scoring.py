"""Importance scores for Gaussian primitives.

Every score is a per-(ray, primitive) kernel evaluated on contribution
records. Cross-view scores reduce the kernel over all records of a primitive
with a sum or a max; per-ray scores rank primitives along each ray.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .model import CameraView, Scene
from .rasterizer import ContributionRecord, ContributionStream

VOLUME_PERCENTILE = 0.9
VOLUME_POWER = 0.1


class MissingGroundTruthError(ValueError):
    """A colour-aware score was requested for a view without a ground-truth image."""


class ScoreFunction(str, enum.Enum):
    LG = "lg"
    MS = "ms"
    RS = "rs"
    EG = "eg"
    V1 = "v1"
    V2 = "v2"
    V3 = "v3"
    V4 = "v4"
    V5 = "v5"
    V6 = "v6"
    V7 = "v7"
    V8 = "v8"
    V9 = "v9"
    V10 = "v10"
    V11 = "v11"
    V12 = "v12"
    V13 = "v13"
    V14 = "v14"
    V15 = "v15"
    V16 = "v16"
    V17 = "v17"
    V18 = "v18"

    @classmethod
    def parse(cls, value) -> "ScoreFunction":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown score function {value!r}") from None

    @property
    def default_aggregation(self) -> str:
        return {"lg": "sum", "ms": "sum", "rs": "max"}.get(self.value, "perray")

    @property
    def needs_ground_truth(self) -> bool:
        return self.value in _COLOR_FUNCTIONS

    @property
    def needs_gamma(self) -> bool:
        return self is ScoreFunction.LG


_COLOR_FUNCTIONS = {f"v{k}" for k in range(8, 19)}
_DISTANCE_FUNCTIONS = {"v4", "v5", "v6", "v7", "v15", "v16", "v17", "v18"}
AGGREGATIONS = ("sum", "max")


@dataclass(frozen=True)
class ScoreContext:
    """Per-record inputs that do not live on the contribution record itself."""

    gt_color: Optional[np.ndarray] = None
    pixel_center: Optional[np.ndarray] = None
    projected_mean: Optional[np.ndarray] = None
    dist_scale: float = 1.0
    gamma: float = 1.0
    delta_T: Optional[float] = None


@dataclass
class ScoreTable:
    per_primitive: np.ndarray
    aggregation: str
    function: ScoreFunction
    views_used: int

    def __len__(self):
        return len(self.per_primitive)

    def metadata(self) -> dict:
        return {"function": self.function.value, "aggregation": self.aggregation, "views_used": int(self.views_used)}

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            f.write("primitive_id,score\n")
            for i, s in enumerate(self.per_primitive):
                f.write(f"{i},{float(s)!r}\n")
        with open(_sidecar(path), "w") as f:
            json.dump(self.metadata(), f, indent=2, sort_keys=True)

    @classmethod
    def from_csv(cls, path) -> "ScoreTable":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        ids = data[:, 0].astype(np.int64) if data.size else np.zeros(0, dtype=np.int64)
        if not np.array_equal(ids, np.arange(len(ids))):
            raise ValueError(f"{path}: primitive_id column must be 0..N-1 in order")
        scores = data[:, 1] if data.size else np.zeros(0)
        with open(_sidecar(path)) as f:
            meta = json.load(f)
        return cls(scores, meta["aggregation"], ScoreFunction.parse(meta["function"]), int(meta["views_used"]))


def _sidecar(path) -> str:
    path = str(path)
    return (path[:-4] if path.endswith(".csv") else path) + ".json"


def normalized_volume(volumes) -> np.ndarray:
    """Volumes divided by their 90th percentile (nearest rank), clamped to [0, 1], to the power 0.1."""
    v = np.asarray(volumes, dtype=np.float64)
    if v.size == 0:
        raise ValueError("need at least one primitive")
    rank = int(np.ceil(VOLUME_PERCENTILE * v.size))
    ref = np.sort(v)[max(rank, 1) - 1]
    ratio = v / ref if ref > 0 else np.where(v > 0, 1.0, 0.0)
    return np.clip(ratio, 0.0, 1.0) ** VOLUME_POWER


def gamma_volume(scene: Scene) -> np.ndarray:
    return normalized_volume(np.prod(scene.scales, axis=1))


def gather_ground_truth(stream: ContributionStream, views: Sequence[CameraView]) -> np.ndarray:
    out = np.empty((len(stream), 3))
    for v in np.unique(stream.view):
        gt = views[v].ground_truth
        if gt is None:
            name = views[v].name or f"#{v}"
            raise MissingGroundTruthError(f"view {name} has no ground-truth image")
        sel = stream.view == v
        out[sel] = gt[stream.row[sel], stream.col[sel]]
    return out


def score_records(fn, stream: ContributionStream, *, views: Optional[Sequence[CameraView]] = None,
                  gt_color=None, gamma=None, dist_scale: float = 1.0) -> np.ndarray:
    """Per-record kernel values for the whole stream.

    ``gt_color`` (M, 3) overrides lookup through ``views``. ``gamma`` is the
    per-primitive normalized volume, required only for LG.
    """
    fn = ScoreFunction.parse(fn)
    name = fn.value
    alpha, trans = stream.alpha, stream.transmittance
    weight = alpha * trans
    # transmittance drop caused by the primitive: T_i - T_{i+1} = alpha_i * T_i
    delta_t = weight

    if name in ("ms", "rs", "eg", "v3"):
        return weight.copy()
    if name == "lg":
        if gamma is None:
            raise ValueError("LG scoring needs per-primitive gamma values")
        return stream.opacity * np.asarray(gamma, dtype=np.float64)[stream.primitive_id]
    if name == "v1":
        return stream.opacity.copy()
    if name == "v2":
        return alpha.copy()

    dist_term = None
    if name in _DISTANCE_FUNCTIONS:
        if dist_scale <= 0:
            raise ValueError("dist_scale must be positive")
        pix = np.stack([stream.col, stream.row], axis=1).astype(np.float64)
        dist_term = np.exp(-np.linalg.norm(pix - stream.mean2d, axis=1) / dist_scale)
    if name == "v4":
        return dist_term
    if name == "v5":
        return dist_term * alpha
    if name == "v6":
        return dist_term * alpha * trans
    if name == "v7":
        return dist_term * alpha * delta_t

    if gt_color is None:
        if views is None:
            raise MissingGroundTruthError(f"score {name} needs ground-truth colours")
        gt_color = gather_ground_truth(stream, views)
    gt = np.asarray(gt_color, dtype=np.float64).reshape(-1, 3)
    c = np.clip(stream.color, 0.0, 1.0)
    if name == "v8":
        denom = np.linalg.norm(gt, axis=1) * np.linalg.norm(c, axis=1)
        dot = np.einsum("ij,ij->i", gt, c)
        cos = np.divide(dot, denom, out=np.zeros_like(dot), where=denom > 0)
        return np.clip(cos, 0.0, 1.0)
    l1 = np.abs(gt - c).mean(axis=1)
    agree = 1.0 - l1
    kernels = {
        "v9": lambda: agree,
        "v10": lambda: np.exp(-l1),
        "v11": lambda: np.exp(-l1) * alpha,
        "v12": lambda: agree * alpha,
        "v13": lambda: agree * alpha * trans,
        "v14": lambda: agree * delta_t,
        "v15": lambda: agree * dist_term,
        "v16": lambda: agree * dist_term * alpha,
        "v17": lambda: agree * dist_term * alpha * trans,
        "v18": lambda: agree * dist_term * delta_t,
    }
    return kernels[name]()


def per_ray_score(fn, rec: ContributionRecord, ctx: ScoreContext = ScoreContext()) -> float:
    """Kernel value for a single record.

    ``ctx.pixel_center`` and ``ctx.projected_mean`` default to the record's
    pixel and stored mean; ``ctx.delta_T`` if given must equal the record weight.
    """
    fn = ScoreFunction.parse(fn)
    view, row, col = rec.ray_id
    mean = rec.mean2d if ctx.projected_mean is None else ctx.projected_mean
    if ctx.pixel_center is not None:
        # shift the mean so the pixel/mean offset matches the context
        offset = np.asarray(ctx.pixel_center, dtype=np.float64) - np.array([col, row], dtype=np.float64)
        mean = np.asarray(mean, dtype=np.float64) - offset
    if ctx.delta_T is not None and not np.isclose(ctx.delta_T, rec.weight, rtol=0, atol=1e-12):
        raise ValueError("delta_T must equal alpha * transmittance of the record")
    stream = ContributionStream(
        [view], [row], [col], [0], [rec.alpha], [rec.transmittance_before], [rec.opacity],
        [rec.color], [mean],
    )
    if fn.needs_ground_truth and ctx.gt_color is None:
        raise MissingGroundTruthError(f"score {fn.value} needs a ground-truth colour")
    gt = None if ctx.gt_color is None else np.asarray(ctx.gt_color, dtype=np.float64).reshape(1, 3)
    return float(score_records(fn, stream, gt_color=gt, gamma=[ctx.gamma], dist_scale=ctx.dist_scale)[0])


def aggregate_cross_view(fn, stream: ContributionStream, n_primitives: int, mode: Optional[str] = None, *,
                         views: Optional[Sequence[CameraView]] = None, gamma=None,
                         dist_scale: float = 1.0, scores=None) -> ScoreTable:
    """Sum or max of per-record scores for every primitive; unrecorded primitives score 0.

    The sum is accumulated in stream order, so tables are reproducible bit for bit.
    """
    fn = ScoreFunction.parse(fn)
    mode = mode or fn.default_aggregation
    if mode not in AGGREGATIONS:
        raise ValueError(f"cross-view aggregation must be one of {AGGREGATIONS}, got {mode!r}")
    if scores is None:
        scores = score_records(fn, stream, views=views, gamma=gamma, dist_scale=dist_scale)
    if len(stream) and stream.primitive_id.max() >= n_primitives:
        raise ValueError("stream names a primitive id outside the scene")
    if mode == "sum":
        table = np.bincount(stream.primitive_id, weights=scores, minlength=n_primitives).astype(np.float64)
    else:
        table = np.zeros(n_primitives)
        np.maximum.at(table, stream.primitive_id, scores)
    n_views = len(stream.view_shapes) if stream.view_shapes else len(np.unique(stream.view))
    return ScoreTable(table, mode, fn, n_views)


@dataclass
class RankedRays:
    """Records reordered so each ray's entries run from highest to lowest score.

    ``ray_starts[k]:ray_starts[k + 1]`` slices the k-th ray (stream ray order).
    """

    ray_view: np.ndarray
    ray_row: np.ndarray
    ray_col: np.ndarray
    ray_starts: np.ndarray
    primitive_id: np.ndarray
    score: np.ndarray
    function: ScoreFunction
    n_primitives: int

    @property
    def n_rays(self) -> int:
        return len(self.ray_starts) - 1

    def rank(self) -> np.ndarray:
        """0-based position of every entry within its ray."""
        lengths = np.diff(self.ray_starts)
        return np.arange(len(self.primitive_id)) - np.repeat(self.ray_starts[:-1], lengths)

    def ray(self, k: int):
        s, e = self.ray_starts[k], self.ray_starts[k + 1]
        return self.primitive_id[s:e], self.score[s:e]

    def save(self, path):
        np.savez_compressed(
            path, ray_view=self.ray_view, ray_row=self.ray_row, ray_col=self.ray_col,
            ray_starts=self.ray_starts, primitive_id=self.primitive_id, score=self.score,
            function=np.array(self.function.value), n_primitives=np.array(self.n_primitives),
        )

    @classmethod
    def load(cls, path) -> "RankedRays":
        with np.load(path) as d:
            return cls(d["ray_view"], d["ray_row"], d["ray_col"], d["ray_starts"], d["primitive_id"],
                       d["score"], ScoreFunction.parse(str(d["function"])), int(d["n_primitives"]))

    @classmethod
    def from_lists(cls, rays, n_primitives: int, function="eg") -> "RankedRays":
        """Build from already-ranked ``[(ids, scores), ...]`` per ray."""
        lengths = [len(ids) for ids, _ in rays]
        starts = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
        ids = np.concatenate([np.asarray(i, dtype=np.int64) for i, _ in rays]) if rays else np.zeros(0, np.int64)
        sc = np.concatenate([np.asarray(s, dtype=np.float64) for _, s in rays]) if rays else np.zeros(0)
        k = np.arange(len(rays))
        return cls(np.zeros(len(rays), np.int64), k, np.zeros(len(rays), np.int64), starts, ids, sc,
                   ScoreFunction.parse(function), n_primitives)


def rank_per_ray(fn, stream: ContributionStream, n_primitives: Optional[int] = None, *,
                 views: Optional[Sequence[CameraView]] = None, gamma=None, dist_scale: float = 1.0,
                 scores=None) -> RankedRays:
    """Sort every ray's records by score (descending), then id, then front-to-back position."""
    fn = ScoreFunction.parse(fn)
    if scores is None:
        scores = score_records(fn, stream, views=views, gamma=gamma, dist_scale=dist_scale)
    if n_primitives is None:
        n_primitives = int(stream.primitive_id.max()) + 1 if len(stream) else 0
    starts = stream.ray_starts()
    ray_of = np.repeat(np.arange(len(starts) - 1), np.diff(starts))
    position = np.arange(len(stream))
    order = np.lexsort((position, stream.primitive_id, -scores, ray_of))
    first = starts[:-1]
    return RankedRays(
        ray_view=stream.view[first], ray_row=stream.row[first], ray_col=stream.col[first],
        ray_starts=starts, primitive_id=stream.primitive_id[order], score=np.asarray(scores)[order],
        function=fn, n_primitives=int(n_primitives),
    )
