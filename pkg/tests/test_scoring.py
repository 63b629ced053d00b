import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from splatprune.model import Scene
from splatprune.rasterizer import ContributionRecord, RenderOptions, render_views
from splatprune.scoring import (
    MissingGroundTruthError,
    RankedRays,
    ScoreContext,
    ScoreFunction,
    ScoreTable,
    aggregate_cross_view,
    gamma_volume,
    normalized_volume,
    per_ray_score,
    rank_per_ray,
    score_records,
)

from conftest import make_primitive, ray_stream

V_FUNCTIONS = [f"v{k}" for k in range(1, 19)]


def record(alpha=0.5, trans=1.0, color=(0.5, 0.5, 0.5), opacity=0.5, mean=(3.0, 4.0), pixel=(4, 3)):
    row, col = pixel
    return ContributionRecord((0, row, col), 0, alpha, trans, alpha * trans, np.asarray(color, float),
                              opacity, np.asarray(mean, float))


class TestPerRayKernels:
    def test_v13_matching_colour_leaves_weight(self):
        rec = record(alpha=0.8, trans=0.5, color=(0.2, 0.4, 0.6))
        assert per_ray_score("v13", rec, ScoreContext(gt_color=(0.2, 0.4, 0.6))) == pytest.approx(0.4, abs=1e-12)

    def test_v9_maximal_disparity(self):
        rec = record(color=(0, 0, 0))
        assert per_ray_score("v9", rec, ScoreContext(gt_color=(1, 1, 1))) == 0.0

    def test_v4_zero_distance(self):
        assert per_ray_score("v4", record(mean=(4.0, 3.0), pixel=(3, 4))) == 1.0

    def test_v4_uses_context_positions(self):
        ctx = ScoreContext(pixel_center=(10.0, 10.0), projected_mean=(13.0, 14.0), dist_scale=5.0)
        assert per_ray_score("v4", record(), ctx) == pytest.approx(math.exp(-1.0), abs=1e-12)

    def test_v10_half_disparity(self):
        rec = record(color=(0.0, 0.5, 1.0))
        got = per_ray_score("v10", rec, ScoreContext(gt_color=(0.5, 1.0, 0.5)))
        assert got == pytest.approx(0.60653, abs=1e-5)

    def test_colour_clamped_before_disparity(self):
        # SH colour above 1 counts as 1 when compared with ground truth
        rec = record(color=(1.7, 1.0, 1.0))
        assert per_ray_score("v9", rec, ScoreContext(gt_color=(1, 1, 1))) == 1.0

    def test_v8_cosine(self):
        rec = record(color=(1, 0, 0))
        assert per_ray_score("v8", rec, ScoreContext(gt_color=(1, 1, 0))) == pytest.approx(1 / math.sqrt(2))
        assert per_ray_score("v8", record(color=(0, 0, 0)), ScoreContext(gt_color=(1, 1, 0))) == 0.0

    @pytest.mark.parametrize("fn", ["eg", "ms", "rs", "v3"])
    def test_weight_kernels(self, fn):
        assert per_ray_score(fn, record(alpha=0.3, trans=0.5)) == pytest.approx(0.15)

    def test_remaining_formulas(self):
        a, t, op = 0.6, 0.7, 0.9
        rec = record(alpha=a, trans=t, opacity=op, color=(0.2, 0.2, 0.2), mean=(0.0, 0.0), pixel=(0, 2))
        ctx = ScoreContext(gt_color=(0.5, 0.5, 0.5), dist_scale=2.0)
        e, agree, w = math.exp(-1.0), 0.7, a * t
        expected = {
            "v1": op, "v2": a, "v3": w, "v4": e, "v5": e * a, "v6": e * a * t, "v7": e * a * w,
            "v9": agree, "v10": math.exp(-0.3), "v11": math.exp(-0.3) * a, "v12": agree * a,
            "v13": agree * a * t, "v14": agree * w, "v15": agree * e, "v16": agree * e * a,
            "v17": agree * e * a * t, "v18": agree * e * w, "lg": op * 0.5,
        }
        for fn, want in expected.items():
            got = per_ray_score(fn, rec, ScoreContext(gt_color=ctx.gt_color, dist_scale=2.0, gamma=0.5))
            assert got == pytest.approx(want, abs=1e-12), fn

    def test_missing_ground_truth(self):
        with pytest.raises(MissingGroundTruthError):
            per_ray_score("v13", record())

    def test_delta_t_must_match_weight(self):
        with pytest.raises(ValueError):
            per_ray_score("v3", record(alpha=0.5), ScoreContext(delta_T=0.2))


class TestGamma:
    def test_reference_volume_is_one(self):
        vols = np.arange(1, 11, dtype=float)
        g = normalized_volume(vols)
        assert g[8] == 1.0 and g[9] == 1.0

    def test_zero_volume(self):
        assert normalized_volume([0.0, 1.0, 2.0])[0] == 0.0

    def test_half_reference(self):
        vols = np.array([0.5] + [1.0] * 9)
        assert normalized_volume(vols)[0] == pytest.approx(0.93303, abs=1e-5)

    def test_nearest_rank_oracle(self):
        rng = np.random.default_rng(0)
        for n in (1, 2, 7, 10, 11, 99):
            v = rng.random(n)
            ref = sorted(v)[math.ceil(0.9 * n) - 1]
            np.testing.assert_allclose(normalized_volume(v), np.minimum(v / ref, 1) ** 0.1)

    def test_from_scene(self):
        scene = Scene.from_primitives([make_primitive((0, 0, 1), scale=s) for s in (0.1, 0.2)])
        np.testing.assert_allclose(gamma_volume(scene), [(1 / 8) ** 0.1, 1.0])

    def test_empty(self):
        with pytest.raises(ValueError):
            normalized_volume([])


class TestAggregation:
    def test_sum_and_max(self):
        s = ray_stream([[(0, 0.2)], [(0, 0.7)]])
        assert aggregate_cross_view("ms", s, 2).per_primitive[0] == pytest.approx(0.9)
        assert aggregate_cross_view("rs", s, 2).per_primitive[0] == 0.7
        # never recorded
        assert aggregate_cross_view("ms", s, 2).per_primitive[1] == 0.0

    def test_lg(self):
        s = ray_stream([[(0, 0.3)], [(0, 0.6)], [(0, 0.9)]], opacity=[0.8] * 3)
        table = aggregate_cross_view("lg", s, 1, gamma=[1.0])
        assert table.per_primitive[0] == pytest.approx(2.4)
        assert table.aggregation == "sum"

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            aggregate_cross_view("ms", ray_stream([[(0, 0.5)]]), 1, "perray")

    def test_out_of_range_id(self):
        with pytest.raises(ValueError):
            aggregate_cross_view("ms", ray_stream([[(3, 0.5)]]), 2)

    def test_csv_roundtrip(self, tmp_path):
        table = ScoreTable(np.array([0.1, 1 / 3, 0.0]), "max", ScoreFunction.RS, 4)
        table.to_csv(tmp_path / "t.csv")
        back = ScoreTable.from_csv(tmp_path / "t.csv")
        np.testing.assert_array_equal(back.per_primitive, table.per_primitive)
        assert (back.aggregation, back.function, back.views_used) == ("max", ScoreFunction.RS, 4)
        assert (tmp_path / "t.csv").read_text().startswith("primitive_id,score\n")


class TestRanking:
    def test_sorted_by_weight(self):
        # G2, G1, G4 have ids 1, 0, 3
        s = ray_stream([[(1, 0.5), (0, 0.6), (3, 0.5)]])
        ids, sc = rank_per_ray("eg", s).ray(0)
        np.testing.assert_allclose(sc, [0.5, 0.3, 0.1])
        assert list(ids) == [1, 0, 3]

    def test_ties_by_id(self):
        s = ray_stream([[(7, 0.5), (3, 1.0)]])
        ranked = rank_per_ray("v1", s)
        assert list(ranked.ray(0)[0]) == [3, 7]

    def test_ties_by_position_for_repeated_id(self):
        s = ray_stream([[(2, 0.5), (2, 1.0)]])
        ranked = rank_per_ray("v1", s)
        assert list(ranked.rank()) == [0, 1]

    def test_empty_stream(self):
        ranked = rank_per_ray("eg", ray_stream([]))
        assert ranked.n_rays == 0 and len(ranked.primitive_id) == 0

    def test_from_lists_with_empty_ray(self):
        ranked = RankedRays.from_lists([([1, 0], [0.5, 0.3]), ([], [])], 2)
        assert list(ranked.ray(1)[0]) == []
        assert list(ranked.rank()) == [0, 1]

    def test_save_load(self, tmp_path):
        ranked = rank_per_ray("eg", ray_stream([[(0, 0.5), (1, 0.5)], [(1, 0.2)]]))
        ranked.save(tmp_path / "r.npz")
        back = RankedRays.load(tmp_path / "r.npz")
        np.testing.assert_array_equal(back.primitive_id, ranked.primitive_id)
        assert back.function == ScoreFunction.EG and back.n_primitives == 2


@st.composite
def random_streams(draw):
    n_prims = draw(st.integers(1, 8))
    n_rays = draw(st.integers(1, 6))
    rays = []
    for _ in range(n_rays):
        k = draw(st.integers(0, 5))
        rays.append([(draw(st.integers(0, n_prims - 1)), draw(st.floats(1 / 255, 0.99))) for _ in range(k)])
    m = sum(len(r) for r in rays)
    unit = st.floats(0.0, 1.0)
    opac = [draw(st.floats(0.004, 1.0)) for _ in range(m)]
    colors = [[draw(st.floats(0.0, 3.0)) for _ in range(3)] for _ in range(m)]
    stream = ray_stream(rays, opacity=opac, colors=colors)
    stream.mean2d[:] = np.array([[draw(st.floats(-5, 5)), draw(st.floats(-5, 5))] for _ in range(m)]).reshape(-1, 2)
    gt = np.array([[draw(unit) for _ in range(3)] for _ in range(m)]).reshape(-1, 3)
    return stream, gt, n_prims


@settings(max_examples=60, deadline=None)
@given(random_streams(), st.floats(0.1, 10.0))
def test_kernel_properties(data, lam):
    stream, gt, n = data
    eg = score_records("eg", stream)
    for fn in V_FUNCTIONS:
        v = score_records(fn, stream, gt_color=gt, dist_scale=lam)
        assert np.all((v >= 0) & (v <= 1)), fn
    assert np.all(score_records("v13", stream, gt_color=gt) <= eg)
    np.testing.assert_allclose(score_records("v3", stream), eg, rtol=0, atol=1e-9)
    lg = score_records("lg", stream, gamma=np.random.default_rng(0).random(n))
    assert np.all((lg >= 0) & (lg <= 1))
    ms = aggregate_cross_view("ms", stream, n).per_primitive
    rs = aggregate_cross_view("rs", stream, n).per_primitive
    assert np.all(rs <= ms)


@settings(max_examples=40, deadline=None)
@given(random_streams())
def test_ranking_is_sorted_permutation(data):
    stream, _, n = data
    ranked = rank_per_ray("eg", stream)
    starts = stream.ray_starts()
    np.testing.assert_array_equal(ranked.ray_starts, starts)
    for k in range(ranked.n_rays):
        ids, sc = ranked.ray(k)
        s, e = starts[k], starts[k + 1]
        assert sorted(ids) == sorted(stream.primitive_id[s:e])
        assert np.all(np.diff(sc) <= 0)


def test_colour_scores_read_views(scene_with_gt):
    scene, views = scene_with_gt
    _, stream = render_views(scene, views, RenderOptions(record_contributions=True))
    v13 = score_records("v13", stream, views=views)
    assert np.all(v13 <= stream.weight)
    bare = [v.with_ground_truth(None) for v in views]
    with pytest.raises(MissingGroundTruthError):
        score_records("v13", stream, views=bare)
    with pytest.raises(MissingGroundTruthError):
        score_records("v13", stream)


def test_parse():
    assert ScoreFunction.parse("V13") is ScoreFunction.V13
    assert ScoreFunction.RS.default_aggregation == "max"
    assert ScoreFunction.V13.needs_ground_truth and not ScoreFunction.V7.needs_ground_truth
    with pytest.raises(ValueError):
        ScoreFunction.parse("v19")
