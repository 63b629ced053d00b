"""Retain/discard masks from importance scores.

Cross-view techniques act on one aggregated score per primitive and have no
retention floor. Pixel-wise pruning keeps the union of every ray's top-n
primitives, so each ray that was hit keeps at least one of its primitives.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Optional, Tuple

import numpy as np

from .model import Scene
from .scoring import RankedRays, ScoreFunction, ScoreTable

TECHNIQUES = ("cross_ratio", "cross_threshold", "cross_stochastic", "pixelwise_topk")


@dataclass(frozen=True)
class PruneSpec:
    technique: str
    value: float
    seed: Optional[int] = None
    score_function: str = "eg"

    def __post_init__(self):
        if self.technique not in TECHNIQUES:
            raise ValueError(f"unknown technique {self.technique!r}; expected one of {TECHNIQUES}")
        object.__setattr__(self, "score_function", ScoreFunction.parse(self.score_function).value)
        v = float(self.value)
        if self.technique in ("cross_ratio", "cross_stochastic") and not 0.0 <= v <= 1.0:
            raise ValueError(f"pruning ratio must lie in [0, 1], got {v}")
        if self.technique == "cross_threshold" and not v >= 0.0:
            raise ValueError(f"score threshold must be >= 0, got {v}")
        if self.technique == "pixelwise_topk":
            if v < 1 or v != int(v):
                raise ValueError(f"ranking threshold must be an integer >= 1, got {self.value}")
            v = int(v)
        if self.technique == "cross_stochastic" and self.seed is None:
            raise ValueError("stochastic pruning needs a seed")
        object.__setattr__(self, "value", v)


@dataclass
class PruneMask:
    retain: np.ndarray
    spec: PruneSpec

    def __post_init__(self):
        self.retain = np.asarray(self.retain, dtype=bool)

    @property
    def retained_count(self) -> int:
        return int(self.retain.sum())

    def __len__(self):
        return len(self.retain)

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            f.write("primitive_id,retained\n")
            for i, r in enumerate(self.retain):
                f.write(f"{i},{int(r)}\n")
        with open(_sidecar(path), "w") as f:
            json.dump(asdict(self.spec), f, indent=2, sort_keys=True)

    @classmethod
    def from_csv(cls, path) -> "PruneMask":
        data = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.int64, ndmin=2)
        with open(_sidecar(path)) as f:
            spec = PruneSpec(**json.load(f))
        retain = data[:, 1].astype(bool) if data.size else np.zeros(0, dtype=bool)
        return cls(retain, spec)


def _sidecar(path) -> str:
    path = str(path)
    return (path[:-4] if path.endswith(".csv") else path) + ".json"


def _scores(table) -> np.ndarray:
    return np.asarray(table.per_primitive if isinstance(table, ScoreTable) else table, dtype=np.float64)


def _fn_of(table, default="eg") -> str:
    return table.function.value if isinstance(table, ScoreTable) else default


def n_pruned(n: int, ratio: float) -> int:
    # tolerate representation error such as 0.15 * 20 = 3.0000000000000004
    return min(n, int(math.floor(ratio * n + 1e-9)))


def prune_cross_ratio(table, ratio: float) -> PruneMask:
    """Prune the floor(ratio * N) lowest-scoring primitives; among ties the higher id goes first."""
    spec = PruneSpec("cross_ratio", ratio, score_function=_fn_of(table))
    s = _scores(table)
    k = n_pruned(len(s), spec.value)
    # ascending score, then descending id: the first k entries are pruned
    order = np.lexsort((-np.arange(len(s)), s))
    retain = np.ones(len(s), dtype=bool)
    retain[order[:k]] = False
    return PruneMask(retain, spec)


def prune_cross_threshold(table, tau: float) -> PruneMask:
    spec = PruneSpec("cross_threshold", tau, score_function=_fn_of(table))
    return PruneMask(_scores(table) >= spec.value, spec)


def weighted_sample_without_replacement(weights, k: int, rng: np.random.Generator) -> np.ndarray:
    """Indices of ``k`` items drawn without replacement with probability proportional to ``weights``.

    Uses exponential keys log(u) / w and keeps the k largest. Zero-weight items
    are only taken once positive weights are exhausted, lowest id first.
    """
    w = np.asarray(weights, dtype=np.float64)
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("sampling weights must be finite and non-negative")
    n = len(w)
    k = int(k)
    if not 0 <= k <= n:
        raise ValueError(f"cannot draw {k} of {n} items")
    u = 1.0 - rng.random(n)  # (0, 1]
    positive = w > 0
    keys = np.full(n, -np.inf)
    keys[positive] = np.log(u[positive]) / w[positive]
    pos_ids = np.flatnonzero(positive)
    if k <= len(pos_ids):
        order = pos_ids[np.lexsort((pos_ids, -keys[pos_ids]))]
        return np.sort(order[:k])
    zero_ids = np.flatnonzero(~positive)
    return np.sort(np.concatenate([pos_ids, zero_ids[: k - len(pos_ids)]]))


def prune_cross_stochastic(table, ratio: float, seed: int) -> PruneMask:
    """Keep N - floor(ratio * N) primitives sampled with probability proportional to score."""
    spec = PruneSpec("cross_stochastic", ratio, seed=int(seed), score_function=_fn_of(table))
    s = _scores(table)
    keep = len(s) - n_pruned(len(s), spec.value)
    retain = np.zeros(len(s), dtype=bool)
    retain[weighted_sample_without_replacement(s, keep, np.random.default_rng(spec.seed))] = True
    return PruneMask(retain, spec)


def prune_pixelwise(ranked: RankedRays, n: int, n_primitives: Optional[int] = None) -> PruneMask:
    """Retain every primitive that ranks within the top ``n`` of at least one ray."""
    spec = PruneSpec("pixelwise_topk", n, score_function=ranked.function.value)
    total = ranked.n_primitives if n_primitives is None else int(n_primitives)
    retain = np.zeros(total, dtype=bool)
    retain[ranked.primitive_id[ranked.rank() < spec.value]] = True
    return PruneMask(retain, spec)


def apply_mask(scene: Scene, mask: PruneMask) -> Tuple[Scene, np.ndarray]:
    """Pruned scene plus an old-id to new-id map (-1 for pruned primitives)."""
    if len(mask) != len(scene):
        raise ValueError(f"mask length {len(mask)} does not match scene size {len(scene)}")
    keep = np.flatnonzero(mask.retain)
    mapping = np.full(len(scene), -1, dtype=np.int64)
    mapping[keep] = np.arange(len(keep))
    return scene.subset(keep), mapping
