"""Tile-based front-to-back alpha blending with optional contribution recording.

Pixel (row, col) is blended from the primitives assigned to its tile, sorted by
camera-space depth with ties broken by primitive id. A primitive contributes to
a pixel only when the pixel lies inside its 3-sigma rectangle, its alpha
reaches ``alpha_threshold``, and compositing it would not push transmittance
below ``transmittance_floor`` (the ray terminates instead).
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .model import CameraView, Scene
from .projection import ProjectedBatch, Projected2DGaussian, project_scene

THREADS_ENV = "SPLATPRUNE_THREADS"


def resolve_n_jobs(n_jobs: Optional[int] = None) -> int:
    """Worker count: explicit value, else ``SPLATPRUNE_THREADS``, else 1. Zero means all cores."""
    if n_jobs is None:
        n_jobs = int(os.environ.get(THREADS_ENV, "1") or 1)
    if n_jobs <= 0:
        n_jobs = os.cpu_count() or 1
    return int(n_jobs)


@dataclass(frozen=True)
class RenderOptions:
    alpha_threshold: float = 1.0 / 255.0
    alpha_cap: float = 0.99
    transmittance_floor: float = 1e-4
    background: tuple = (0.0, 0.0, 0.0)
    record_contributions: bool = False
    tile_size: int = 16

    def __post_init__(self):
        if not 0 < self.alpha_threshold < self.alpha_cap <= 1:
            raise ValueError("need 0 < alpha_threshold < alpha_cap <= 1")
        if not 0 <= self.transmittance_floor < 1:
            raise ValueError("need 0 <= transmittance_floor < 1")
        if int(self.tile_size) < 1:
            raise ValueError("tile_size must be >= 1")
        bg = tuple(float(v) for v in self.background)
        if len(bg) != 3:
            raise ValueError("background must have 3 channels")
        object.__setattr__(self, "background", bg)
        object.__setattr__(self, "tile_size", int(self.tile_size))

    def replace(self, **changes) -> "RenderOptions":
        values = {f: getattr(self, f) for f in self.__dataclass_fields__}
        values.update(changes)
        return RenderOptions(**values)


@dataclass(frozen=True)
class ContributionRecord:
    """One (ray, primitive) blending event."""

    ray_id: tuple
    primitive_id: int
    alpha: float
    transmittance_before: float
    weight: float
    color: np.ndarray
    opacity: float
    mean2d: np.ndarray


_STREAM_FIELDS = ("view", "row", "col", "primitive_id", "alpha", "transmittance", "opacity", "color", "mean2d")


@dataclass
class ContributionStream:
    """Column-wise contribution records, grouped by ray and front-to-back within a ray.

    Rays appear in canonical order: view, then tile row-major, then pixel
    row-major inside the tile. ``view_shapes`` holds (height, width) per view.
    """

    view: np.ndarray
    row: np.ndarray
    col: np.ndarray
    primitive_id: np.ndarray
    alpha: np.ndarray
    transmittance: np.ndarray
    opacity: np.ndarray
    color: np.ndarray
    mean2d: np.ndarray
    view_shapes: tuple = ()
    weight: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.view = np.asarray(self.view, dtype=np.int64)
        self.row = np.asarray(self.row, dtype=np.int64)
        self.col = np.asarray(self.col, dtype=np.int64)
        self.primitive_id = np.asarray(self.primitive_id, dtype=np.int64)
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        self.transmittance = np.asarray(self.transmittance, dtype=np.float64)
        self.opacity = np.asarray(self.opacity, dtype=np.float64)
        self.color = np.asarray(self.color, dtype=np.float64).reshape(-1, 3)
        self.mean2d = np.asarray(self.mean2d, dtype=np.float64).reshape(-1, 2)
        self.view_shapes = tuple(tuple(int(v) for v in s) for s in self.view_shapes)
        self.weight = self.alpha * self.transmittance
        m = len(self.primitive_id)
        for name in _STREAM_FIELDS:
            if len(getattr(self, name)) != m:
                raise ValueError(f"stream field {name!r} has inconsistent length")

    def __len__(self):
        return len(self.primitive_id)

    @classmethod
    def empty(cls, view_shapes=()) -> "ContributionStream":
        z = np.zeros(0)
        return cls(z, z, z, z, z, z, z, np.zeros((0, 3)), np.zeros((0, 2)), view_shapes)

    @classmethod
    def from_records(cls, records: Sequence[ContributionRecord], view_shapes=()) -> "ContributionStream":
        """Build a stream from records already in canonical ray order."""
        if not records:
            return cls.empty(view_shapes)
        return cls(
            view=[r.ray_id[0] for r in records],
            row=[r.ray_id[1] for r in records],
            col=[r.ray_id[2] for r in records],
            primitive_id=[r.primitive_id for r in records],
            alpha=[r.alpha for r in records],
            transmittance=[r.transmittance_before for r in records],
            opacity=[r.opacity for r in records],
            color=[r.color for r in records],
            mean2d=[r.mean2d for r in records],
            view_shapes=view_shapes,
        )

    @classmethod
    def concatenate(cls, streams: Sequence["ContributionStream"]) -> "ContributionStream":
        """Join per-view streams, renumbering views in the given order."""
        if not streams:
            return cls.empty()
        views, shapes = [], []
        for s in streams:
            views.append(s.view + len(shapes))
            shapes.extend(s.view_shapes or [(0, 0)])
        cat = {name: np.concatenate([getattr(s, name) for s in streams]) for name in _STREAM_FIELDS[1:]}
        return cls(view=np.concatenate(views), view_shapes=tuple(shapes), **cat)

    def record(self, i: int) -> ContributionRecord:
        return ContributionRecord(
            ray_id=(int(self.view[i]), int(self.row[i]), int(self.col[i])),
            primitive_id=int(self.primitive_id[i]),
            alpha=float(self.alpha[i]),
            transmittance_before=float(self.transmittance[i]),
            weight=float(self.weight[i]),
            color=self.color[i].copy(),
            opacity=float(self.opacity[i]),
            mean2d=self.mean2d[i].copy(),
        )

    def __iter__(self):
        return (self.record(i) for i in range(len(self)))

    def ray_starts(self) -> np.ndarray:
        """Index of the first record of every ray, plus a trailing ``len(self)``."""
        m = len(self)
        if m == 0:
            return np.zeros(1, dtype=np.int64)
        change = (np.diff(self.view) != 0) | (np.diff(self.row) != 0) | (np.diff(self.col) != 0)
        return np.concatenate([[0], np.flatnonzero(change) + 1, [m]]).astype(np.int64)

    def ray_index(self) -> np.ndarray:
        """Per-record 0-based ray number in stream order."""
        starts = self.ray_starts()
        return np.repeat(np.arange(len(starts) - 1), np.diff(starts))

    @property
    def n_rays_with_hits(self) -> int:
        return len(self.ray_starts()) - 1

    def hit_counts(self, view: int) -> np.ndarray:
        h, w = self.view_shapes[view]
        sel = self.view == view
        counts = np.zeros((h, w), dtype=np.int64)
        np.add.at(counts, (self.row[sel], self.col[sel]), 1)
        return counts

    def save(self, path):
        np.savez_compressed(
            path,
            view_shapes=np.asarray(self.view_shapes, dtype=np.int64).reshape(-1, 2),
            **{name: getattr(self, name) for name in _STREAM_FIELDS},
        )

    @classmethod
    def load(cls, path) -> "ContributionStream":
        with np.load(path) as data:
            kw = {name: data[name] for name in _STREAM_FIELDS}
            shapes = tuple(map(tuple, data["view_shapes"].tolist()))
        return cls(view_shapes=shapes, **kw)


@dataclass
class RenderOutput:
    image: np.ndarray
    per_ray_hit_count: np.ndarray
    contributions: Optional[ContributionStream] = None
    projected: Optional[ProjectedBatch] = None


def _as_batch(projected) -> ProjectedBatch:
    if isinstance(projected, ProjectedBatch):
        return projected
    items: List[Projected2DGaussian] = [p for p in projected if p is not None]
    n = 1 + max((p.primitive_id for p in items), default=-1)
    rect = np.zeros((n, 4), dtype=np.int64)
    depth = np.zeros(n)
    visible = np.zeros(n, dtype=bool)
    for p in items:
        rect[p.primitive_id] = p.pixel_rect
        depth[p.primitive_id] = p.depth
        visible[p.primitive_id] = True
    empty = np.zeros((n, 2))
    return ProjectedBatch(empty, np.zeros((n, 2, 2)), np.zeros((n, 3)), depth, np.zeros((n, 3)),
                          np.zeros(n), np.zeros(n), rect, visible)


def tile_grid(cam: CameraView, tile_size: int):
    return -(-cam.height // tile_size), -(-cam.width // tile_size)


def assign_tiles(projected, cam: CameraView, tile_size: int = 16) -> List[np.ndarray]:
    """Per-tile primitive ids (tile row-major), each sorted by (depth, id).

    ``projected`` is a :class:`ProjectedBatch` or a sequence of
    :class:`Projected2DGaussian` (``None`` entries are culled primitives).
    """
    batch = _as_batch(projected)
    n_ty, n_tx = tile_grid(cam, tile_size)
    ids = np.flatnonzero(batch.visible)
    if len(ids) == 0:
        return [np.zeros(0, dtype=np.int64) for _ in range(n_ty * n_tx)]
    rect = batch.rect[ids] // tile_size
    tx0, tx1, ty0, ty1 = rect[:, 0], rect[:, 1], rect[:, 2], rect[:, 3]
    nx, ny = tx1 - tx0 + 1, ty1 - ty0 + 1
    counts = nx * ny
    owner = np.repeat(np.arange(len(ids)), counts)
    local = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    tile_x = tx0[owner] + local % nx[owner]
    tile_y = ty0[owner] + local // nx[owner]
    tile = tile_y * n_tx + tile_x
    prim = ids[owner]
    order = np.lexsort((prim, batch.depth[prim], tile))
    tile, prim = tile[order], prim[order]
    bounds = np.searchsorted(tile, np.arange(n_ty * n_tx + 1))
    return [prim[bounds[k]:bounds[k + 1]] for k in range(n_ty * n_tx)]


def _blend_tile(batch: ProjectedBatch, ids: np.ndarray, r0: int, r1: int, c0: int, c1: int,
                opts: RenderOptions, record: bool):
    rows, cols = np.mgrid[r0:r1, c0:c1]
    rows, cols = rows.ravel(), cols.ravel()
    n_pix = rows.size
    if len(ids) == 0:
        return np.zeros((n_pix, 3)), np.ones(n_pix), np.zeros(n_pix, dtype=np.int64), None

    mean = batch.mean2d[ids]
    conic = batch.conic[ids]
    rect = batch.rect[ids]
    dx = cols[None, :] - mean[:, 0:1]
    dy = rows[None, :] - mean[:, 1:2]
    power = -0.5 * (conic[:, 0:1] * dx * dx + conic[:, 2:3] * dy * dy) - conic[:, 1:2] * dx * dy
    alpha = np.minimum(opts.alpha_cap, batch.sigma[ids][:, None] * np.exp(power))
    inside = (
        (cols[None, :] >= rect[:, 0:1]) & (cols[None, :] <= rect[:, 1:2])
        & (rows[None, :] >= rect[:, 2:3]) & (rows[None, :] <= rect[:, 3:4])
    )
    alpha = np.where(inside & (alpha >= opts.alpha_threshold), alpha, 0.0)
    trans_after = np.cumprod(1.0 - alpha, axis=0)
    # trans_after is non-increasing down each column, so `live` is a prefix per ray
    live = (alpha > 0) & (trans_after >= opts.transmittance_floor)
    alpha = np.where(live, alpha, 0.0)
    trans_before = np.empty_like(trans_after)
    trans_before[0] = 1.0
    trans_before[1:] = trans_after[:-1]
    weight = alpha * trans_before
    rgb = (weight[:, :, None] * batch.color[ids][:, None, :]).sum(axis=0)
    final_t = np.cumprod(1.0 - alpha, axis=0)[-1]
    hits = live.sum(axis=0)

    rec = None
    if record:
        pix, k = np.nonzero(live.T)
        pid = ids[k]
        rec = (rows[pix], cols[pix], pid, alpha[k, pix], trans_before[k, pix])
    return rgb, final_t, hits, rec


def render(scene: Scene, cam: CameraView, opts: Optional[RenderOptions] = None, *,
           n_jobs: Optional[int] = None, view_index: int = 0) -> RenderOutput:
    """Render one view with the tiled rasterizer."""
    opts = opts or RenderOptions()
    batch = project_scene(scene, cam)
    ts = opts.tile_size
    n_ty, n_tx = tile_grid(cam, ts)
    tiles = assign_tiles(batch, cam, ts)
    record = opts.record_contributions

    def work(k):
        ty, tx = divmod(k, n_tx)
        r0, c0 = ty * ts, tx * ts
        r1, c1 = min(r0 + ts, cam.height), min(c0 + ts, cam.width)
        return (r0, r1, c0, c1), _blend_tile(batch, tiles[k], r0, r1, c0, c1, opts, record)

    workers = resolve_n_jobs(n_jobs)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, range(n_ty * n_tx)))
    else:
        results = [work(k) for k in range(n_ty * n_tx)]

    image = np.zeros((cam.height, cam.width, 3))
    hits = np.zeros((cam.height, cam.width), dtype=np.int64)
    bg = np.asarray(opts.background)
    parts = []
    for (r0, r1, c0, c1), (rgb, final_t, tile_hits, rec) in results:
        shape = (r1 - r0, c1 - c0)
        image[r0:r1, c0:c1] = (rgb + final_t[:, None] * bg).reshape(shape + (3,))
        hits[r0:r1, c0:c1] = tile_hits.reshape(shape)
        if rec is not None:
            parts.append(rec)
    np.clip(image, 0.0, 1.0, out=image)

    stream = None
    if record:
        stream = _stream_from_parts(parts, batch, view_index, (cam.height, cam.width))
    return RenderOutput(image=image, per_ray_hit_count=hits, contributions=stream, projected=batch)


def _stream_from_parts(parts, batch: ProjectedBatch, view_index: int, shape) -> ContributionStream:
    if not parts:
        s = ContributionStream.empty((shape,))
        return s
    rows, cols, pid, alpha, trans = (np.concatenate(x) for x in zip(*parts))
    return ContributionStream(
        view=np.full(len(pid), view_index, dtype=np.int64),
        row=rows,
        col=cols,
        primitive_id=pid,
        alpha=alpha,
        transmittance=trans,
        opacity=batch.sigma[pid],
        color=batch.color[pid],
        mean2d=batch.mean2d[pid],
        view_shapes=(shape,),
    )


def render_views(scene: Scene, cams: Sequence[CameraView], opts: Optional[RenderOptions] = None, *,
                 n_jobs: Optional[int] = None):
    """Render every camera; returns (outputs, combined stream or None)."""
    opts = opts or RenderOptions()
    outs = [render(scene, cam, opts, n_jobs=n_jobs, view_index=0) for cam in cams]
    stream = None
    if opts.record_contributions:
        stream = ContributionStream.concatenate([o.contributions for o in outs])
    return outs, stream


def render_oracle(scene: Scene, cam: CameraView, opts: Optional[RenderOptions] = None) -> RenderOutput:
    """Brute-force reference: every pixel scans every primitive, no tiling.

    Blends with the sequential transmittance recurrence one primitive at a time.
    Meant for small scenes only.
    """
    opts = opts or RenderOptions()
    batch = project_scene(scene, cam)
    h, w = cam.height, cam.width
    rows, cols = np.mgrid[0:h, 0:w]
    rows, cols = rows.ravel(), cols.ravel()
    n_pix = rows.size
    color = np.zeros((n_pix, 3))
    T = np.ones(n_pix)
    done = np.zeros(n_pix, dtype=bool)
    hits = np.zeros(n_pix, dtype=np.int64)
    rec_rows, rec_pid, rec_alpha, rec_t = [], [], [], []

    ids = np.arange(len(scene))
    ids = ids[batch.visible]
    ids = ids[np.lexsort((ids, batch.depth[ids]))]
    for i in ids:
        c_lo, c_hi, r_lo, r_hi = batch.rect[i]
        a, b, c = batch.conic[i]
        dx = cols - batch.mean2d[i, 0]
        dy = rows - batch.mean2d[i, 1]
        g = np.exp(-0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy)
        alpha = np.minimum(opts.alpha_cap, batch.sigma[i] * g)
        inside = (cols >= c_lo) & (cols <= c_hi) & (rows >= r_lo) & (rows <= r_hi)
        candidate = inside & ~done & (alpha >= opts.alpha_threshold)
        test_t = T * (1.0 - alpha)
        terminate = candidate & (test_t < opts.transmittance_floor)
        done |= terminate
        take = candidate & ~terminate
        color[take] += batch.color[i] * (alpha[take] * T[take])[:, None]
        if opts.record_contributions:
            idx = np.flatnonzero(take)
            rec_rows.append(idx)
            rec_pid.append(np.full(idx.size, i))
            rec_alpha.append(alpha[idx])
            rec_t.append(T[idx])
        T = np.where(take, test_t, T)
        hits += take

    image = color + T[:, None] * np.asarray(opts.background)
    image = np.clip(image, 0.0, 1.0).reshape(h, w, 3)
    stream = None
    if opts.record_contributions:
        if rec_rows:
            pix = np.concatenate(rec_rows)
            pid = np.concatenate(rec_pid)
            alpha = np.concatenate(rec_alpha)
            trans = np.concatenate(rec_t)
            # group by pixel in plain row-major order, keeping blend order inside a ray
            order = np.argsort(pix, kind="stable")
            pix, pid, alpha, trans = pix[order], pid[order], alpha[order], trans[order]
            stream = ContributionStream(
                view=np.zeros(len(pid), dtype=np.int64), row=rows[pix], col=cols[pix], primitive_id=pid,
                alpha=alpha, transmittance=trans, opacity=batch.sigma[pid], color=batch.color[pid],
                mean2d=batch.mean2d[pid], view_shapes=((h, w),),
            )
        else:
            stream = ContributionStream.empty(((h, w),))
    return RenderOutput(image=image, per_ray_hit_count=hits.reshape(h, w), contributions=stream, projected=batch)
