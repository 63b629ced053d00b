import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from splatprune.estimators import CrossViewPruner, ImportanceScorer, PixelwisePruner, make_pruner
from splatprune.scoring import MissingGroundTruthError


def test_scorer_params_and_clone():
    s = ImportanceScorer(score_function="rs", dist_scale=2.0)
    assert s.get_params()["dist_scale"] == 2.0
    c = clone(s)
    assert c.get_params() == s.get_params() and c is not s


def test_scorer_cross_view(scene_with_gt):
    scene, views = scene_with_gt
    ms = ImportanceScorer("ms").fit(scene, views)
    rs = ImportanceScorer("rs").fit(scene, views)
    assert ms.aggregation_ == "sum" and rs.aggregation_ == "max"
    assert np.all(rs.score_primitives() <= ms.score_primitives())
    assert ms.scores_.views_used == len(views)


def test_scorer_perray(scene_with_gt):
    scene, views = scene_with_gt
    sc = ImportanceScorer("v13").fit(scene, views)
    assert sc.aggregation_ == "perray"
    assert sc.ranked_.n_primitives == len(scene)
    assert np.all(sc.score_primitives() >= 0)


def test_missing_ground_truth(small_scene, ring):
    with pytest.raises(MissingGroundTruthError):
        ImportanceScorer("v13").fit(small_scene, ring)
    with pytest.raises(ValueError):
        ImportanceScorer("ms", aggregation="mean").fit(small_scene, ring)
    with pytest.raises(TypeError):
        ImportanceScorer().fit("scene.ply", ring)


def test_not_fitted(small_scene):
    with pytest.raises(NotFittedError):
        PixelwisePruner().transform(small_scene)


def test_pixelwise_pruner(scene_with_gt):
    scene, views = scene_with_gt
    pruner = PixelwisePruner(n=1)
    pruned = pruner.fit_transform(scene, views)
    support = pruner.get_support()
    assert len(pruned) == support.sum() < len(scene)
    assert np.all(pruner.id_map_[support] == np.arange(len(pruned)))
    wider = PixelwisePruner(n=5).fit(scene, views).get_support()
    assert np.all(support <= wider)


def test_cross_view_pruners(scene_with_gt):
    scene, views = scene_with_gt
    ratio = CrossViewPruner("ms", "ratio", 0.6).fit(scene, views)
    assert ratio.get_support().sum() == len(scene) - int(0.6 * len(scene))
    assert len(CrossViewPruner("rs", "threshold", 1.0).fit_transform(scene, views)) == 0
    a = CrossViewPruner("ms", "stochastic", 0.5, random_state=3).fit(scene, views).get_support()
    b = CrossViewPruner("ms", "stochastic", 0.5, random_state=3).fit(scene, views).get_support()
    np.testing.assert_array_equal(a, b)
    with pytest.raises(ValueError):
        CrossViewPruner("ms", "stochastic", 0.5).fit(scene, views)
    with pytest.raises(ValueError):
        CrossViewPruner("ms", "bogus", 0.5).fit(scene, views)


def test_make_pruner():
    p = make_pruner("pixelwise_topk", 5.0, "v13")
    assert isinstance(p, PixelwisePruner) and p.n == 5
    q = make_pruner("cross_stochastic", 0.3, "ms", seed=4, n_jobs=1)
    assert (q.technique, q.random_state, q.n_jobs) == ("stochastic", 4, 1)
    with pytest.raises(ValueError):
        make_pruner("random", 0.3, "ms")
