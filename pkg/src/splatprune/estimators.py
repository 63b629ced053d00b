"""scikit-learn style front end: score and prune a scene against its training views.

``X`` is a :class:`~splatprune.model.Scene` and ``y`` the list of training
:class:`~splatprune.model.CameraView` objects (carrying ground truth when a
colour-aware score is used)::

    pruner = PixelwisePruner(score_function="v13", n=1).fit(scene, views)
    pruned = pruner.transform(scene)
"""

from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .model import Scene
from .pruning import (
    PruneMask,
    apply_mask,
    prune_cross_ratio,
    prune_cross_stochastic,
    prune_cross_threshold,
    prune_pixelwise,
)
from .rasterizer import RenderOptions, render_views
from .scoring import ScoreFunction, aggregate_cross_view, gamma_volume, rank_per_ray, score_records
from .validation import check_fraction, check_scene, check_views


class ImportanceScorer(BaseEstimator):
    """Render every training view with recording on and score each primitive.

    Parameters
    ----------
    score_function : str, default="ms"
        One of ``lg, ms, rs, eg, v1 ... v18``.
    aggregation : {"sum", "max", "perray"} or None
        ``None`` picks the function's default (sum for LG/MS, max for RS,
        per-ray otherwise).
    dist_scale : float, default=1.0
        Divisor applied to the pixel distance in the distance-aware variants.
    tile_size, alpha_threshold, alpha_cap, transmittance_floor :
        Rasterizer settings used while recording.
    n_jobs : int or None
        Tile workers; ``None`` reads ``SPLATPRUNE_THREADS``.

    Attributes
    ----------
    stream_ : ContributionStream
    record_scores_ : ndarray of shape (n_records,)
    scores_ : ScoreTable
        Set for cross-view aggregation.
    ranked_ : RankedRays
        Set for per-ray aggregation.
    n_primitives_ : int
    """

    def __init__(self, score_function="ms", aggregation=None, dist_scale=1.0, tile_size=16,
                 alpha_threshold=1.0 / 255.0, alpha_cap=0.99, transmittance_floor=1e-4, n_jobs=None):
        self.score_function = score_function
        self.aggregation = aggregation
        self.dist_scale = dist_scale
        self.tile_size = tile_size
        self.alpha_threshold = alpha_threshold
        self.alpha_cap = alpha_cap
        self.transmittance_floor = transmittance_floor
        self.n_jobs = n_jobs

    def _render_options(self) -> RenderOptions:
        return RenderOptions(
            alpha_threshold=self.alpha_threshold,
            alpha_cap=self.alpha_cap,
            transmittance_floor=self.transmittance_floor,
            tile_size=self.tile_size,
            record_contributions=True,
        )

    def fit(self, X, y=None):
        scene = check_scene(X)
        fn = ScoreFunction.parse(self.score_function)
        views = check_views(y, require_ground_truth=fn.needs_ground_truth)
        agg = self.aggregation or fn.default_aggregation
        if agg not in ("sum", "max", "perray"):
            raise ValueError(f"aggregation must be sum, max or perray, got {agg!r}")

        _, stream = render_views(scene, views, self._render_options(), n_jobs=self.n_jobs)
        gamma = gamma_volume(scene) if fn.needs_gamma and len(scene) else None
        rec = score_records(fn, stream, views=views, gamma=gamma, dist_scale=self.dist_scale)

        self.stream_ = stream
        self.record_scores_ = rec
        self.n_primitives_ = len(scene)
        self.aggregation_ = agg
        if agg == "perray":
            self.ranked_ = rank_per_ray(fn, stream, len(scene), scores=rec)
        else:
            self.scores_ = aggregate_cross_view(fn, stream, len(scene), agg, scores=rec)
        return self

    def score_primitives(self) -> np.ndarray:
        """Per-primitive scores; per-ray scorers report each primitive's best score."""
        check_is_fitted(self, "stream_")
        if self.aggregation_ == "perray":
            out = np.zeros(self.n_primitives_)
            np.maximum.at(out, self.stream_.primitive_id, self.record_scores_)
            return out
        return self.scores_.per_primitive.copy()


class _BasePruner(TransformerMixin, BaseEstimator):
    """Shared transform for pruners: drop primitives outside ``mask_``."""

    def get_support(self) -> np.ndarray:
        check_is_fitted(self, "mask_")
        return self.mask_.retain.copy()

    def transform(self, X) -> Scene:
        check_is_fitted(self, "mask_")
        scene = check_scene(X)
        pruned, self.id_map_ = apply_mask(scene, self.mask_)
        return pruned

    def fit_transform(self, X, y=None, **fit_params) -> Scene:
        return self.fit(X, y, **fit_params).transform(X)

    def _scorer(self, aggregation):
        return ImportanceScorer(
            score_function=self.score_function,
            aggregation=aggregation,
            dist_scale=self.dist_scale,
            tile_size=self.tile_size,
            n_jobs=self.n_jobs,
        )


class CrossViewPruner(_BasePruner):
    """Prune on one aggregated score per primitive.

    ``technique`` is ``"ratio"`` (``value`` = fraction pruned), ``"threshold"``
    (``value`` = minimum score kept) or ``"stochastic"`` (``value`` = fraction
    pruned, survivors sampled proportionally to score with ``random_state``).
    """

    def __init__(self, score_function="rs", technique="threshold", value=0.0, aggregation=None,
                 random_state=None, dist_scale=1.0, tile_size=16, n_jobs=None):
        self.score_function = score_function
        self.technique = technique
        self.value = value
        self.aggregation = aggregation
        self.random_state = random_state
        self.dist_scale = dist_scale
        self.tile_size = tile_size
        self.n_jobs = n_jobs

    def fit(self, X, y=None):
        fn = ScoreFunction.parse(self.score_function)
        agg = self.aggregation or fn.default_aggregation
        if agg == "perray":
            agg = "sum"
        scorer = self._scorer(agg).fit(X, y)
        self.scores_ = scorer.scores_
        if self.technique == "ratio":
            self.mask_ = prune_cross_ratio(self.scores_, check_fraction(self.value, "value"))
        elif self.technique == "threshold":
            self.mask_ = prune_cross_threshold(self.scores_, self.value)
        elif self.technique == "stochastic":
            if self.random_state is None or not isinstance(self.random_state, (int, np.integer)):
                raise ValueError("stochastic pruning needs an integer random_state")
            self.mask_ = prune_cross_stochastic(self.scores_, check_fraction(self.value, "value"), self.random_state)
        else:
            raise ValueError(f"unknown technique {self.technique!r}")
        return self


class PixelwisePruner(_BasePruner):
    """Keep every primitive that ranks in the top ``n`` of at least one training ray."""

    def __init__(self, score_function="v13", n=1, dist_scale=1.0, tile_size=16, n_jobs=None):
        self.score_function = score_function
        self.n = n
        self.dist_scale = dist_scale
        self.tile_size = tile_size
        self.n_jobs = n_jobs

    def fit(self, X, y=None):
        scorer = self._scorer("perray").fit(X, y)
        self.ranked_ = scorer.ranked_
        self.stream_ = scorer.stream_
        self.mask_ = prune_pixelwise(self.ranked_, self.n, len(X))
        return self


def make_pruner(technique: str, value, score_function, seed: Optional[int] = None, **kw) -> _BasePruner:
    """Pruner for a CLI-style technique name (``cross_ratio`` ... ``pixelwise_topk``)."""
    if technique == "pixelwise_topk":
        return PixelwisePruner(score_function=score_function, n=int(value), **kw)
    if technique.startswith("cross_"):
        return CrossViewPruner(score_function=score_function, technique=technique[len("cross_"):],
                               value=value, random_state=seed, **kw)
    raise ValueError(f"unknown technique {technique!r}")


__all__ = ["ImportanceScorer", "CrossViewPruner", "PixelwisePruner", "PruneMask", "make_pruner"]
