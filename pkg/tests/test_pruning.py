from fractions import Fraction

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from splatprune.pruning import (
    PruneMask,
    PruneSpec,
    apply_mask,
    n_pruned,
    prune_cross_ratio,
    prune_cross_stochastic,
    prune_cross_threshold,
    prune_pixelwise,
    weighted_sample_without_replacement,
)
from splatprune.scoring import RankedRays, ScoreFunction, ScoreTable, aggregate_cross_view, rank_per_ray
from splatprune.synthetic import SynthSpec, gen_scene

from conftest import four_primitive_stream

scores_st = st.lists(st.floats(0.0, 10.0), min_size=0, max_size=40).map(np.array)


def table(scores, fn=ScoreFunction.MS):
    return ScoreTable(np.asarray(scores, dtype=float), "sum", fn, 1)


class TestRatio:
    def test_keeps_highest(self):
        s = np.random.default_rng(0).permutation(10) / 10
        mask = prune_cross_ratio(table(s), 0.6)
        assert mask.retained_count == 4
        assert set(np.flatnonzero(mask.retain)) == set(np.argsort(s)[-4:])

    def test_bounds(self):
        s = np.linspace(0, 1, 7)
        assert prune_cross_ratio(table(s), 0.0).retain.all()
        assert not prune_cross_ratio(table(s), 1.0).retain.any()

    def test_ties_prune_higher_id(self):
        mask = prune_cross_ratio(table([1.0, 1.0, 1.0, 2.0]), 0.5)
        assert list(mask.retain) == [True, False, False, True]

    @pytest.mark.parametrize("n", [1, 7, 20, 333, 1000])
    def test_count_exact_on_grid(self, n):
        s = np.random.default_rng(n).random(n)
        for k in range(21):
            p = k * 0.05
            expected = n - int(Fraction(k, 20) * n)
            assert prune_cross_ratio(table(s), p).retained_count == expected

    def test_invalid_ratio(self):
        with pytest.raises(ValueError):
            prune_cross_ratio(table([1.0]), 1.5)

    @settings(max_examples=50, deadline=None)
    @given(scores_st, st.floats(0, 1), st.floats(0, 1))
    def test_nesting(self, s, p, q):
        lo, hi = sorted((p, q))
        a = prune_cross_ratio(table(s), lo).retain
        b = prune_cross_ratio(table(s), hi).retain
        assert np.all(b <= a)

    @settings(max_examples=50, deadline=None)
    @given(scores_st, st.floats(0, 1))
    def test_monotone_transform_invariance(self, s, p):
        t = np.sqrt(s) * 3 + 1
        # the transform must stay strictly increasing after float rounding
        assume(np.array_equal(np.sign(np.subtract.outer(s, s)), np.sign(np.subtract.outer(t, t))))
        a = prune_cross_ratio(table(s), p).retain
        b = prune_cross_ratio(table(t), p).retain
        np.testing.assert_array_equal(a, b)


class TestThreshold:
    def test_example(self):
        assert list(prune_cross_threshold(table([0.2, 0.7]), 0.5).retain) == [False, True]

    def test_bounds(self):
        s = np.array([0.0, 0.3, 0.9])
        assert prune_cross_threshold(table(s), 0.0).retain.all()
        assert not prune_cross_threshold(table(s), 0.91).retain.any()

    def test_negative_threshold_rejected(self):
        with pytest.raises(ValueError):
            prune_cross_threshold(table([1.0]), -0.1)

    @settings(max_examples=50, deadline=None)
    @given(scores_st, st.floats(0, 10), st.floats(0, 10))
    def test_nesting(self, s, t1, t2):
        lo, hi = sorted((t1, t2))
        assert np.all(prune_cross_threshold(table(s), hi).retain <= prune_cross_threshold(table(s), lo).retain)


class TestStochastic:
    def test_zero_ratio_keeps_all(self):
        s = np.random.default_rng(1).random(30)
        for seed in range(5):
            assert prune_cross_stochastic(table(s), 0.0, seed).retain.all()

    def test_seed_required(self):
        with pytest.raises(ValueError):
            PruneSpec("cross_stochastic", 0.5)

    def test_deterministic_in_seed(self):
        s = np.random.default_rng(2).random(100)
        a = prune_cross_stochastic(table(s), 0.4, 11).retain
        b = prune_cross_stochastic(table(s), 0.4, 11).retain
        np.testing.assert_array_equal(a, b)
        assert a.sum() == 60

    def test_uniform_when_scores_equal(self):
        n, keep_frac, trials = 10, 0.5, 10_000
        counts = np.zeros(n)
        for seed in range(trials):
            counts += prune_cross_stochastic(table(np.ones(n)), keep_frac, seed).retain
        sigma = np.sqrt(trials * 0.5 * 0.5)
        assert np.all(np.abs(counts - trials * 0.5) <= 3 * sigma)

    def test_single_draw_proportional_to_weight(self):
        w = np.array([1.0, 2.0, 3.0, 4.0])
        trials = 10_000
        counts = np.zeros(4)
        rng = np.random.default_rng(123)
        for _ in range(trials):
            counts[weighted_sample_without_replacement(w, 1, rng)] += 1
        p = w / w.sum()
        assert np.all(np.abs(counts - trials * p) <= 3 * np.sqrt(trials * p * (1 - p)))

    def test_dominant_primitive_always_kept(self):
        n = 12
        s = np.zeros(n)
        s[5] = 4.0
        for seed in range(50):
            mask = prune_cross_stochastic(table(s), (n - 1) / n, seed)
            assert list(np.flatnonzero(mask.retain)) == [5]

    def test_zero_weights_filled_lowest_id_first(self):
        w = np.array([0.0, 1.0, 0.0, 0.0, 2.0])
        got = weighted_sample_without_replacement(w, 3, np.random.default_rng(0))
        assert list(got) == [0, 1, 4]

    def test_bad_inputs(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError):
            weighted_sample_without_replacement([1.0, -1.0], 1, rng)
        with pytest.raises(ValueError):
            weighted_sample_without_replacement([1.0], 2, rng)


class TestPixelwise:
    def test_four_primitive_configuration(self):
        ranked = rank_per_ray("eg", four_primitive_stream(), 4)
        mask = prune_pixelwise(ranked, 1)
        assert list(mask.retain) == [False, True, True, True]
        assert mask.retained_count / 4 == 0.75

    def test_four_primitive_cross_view_threshold(self):
        t = aggregate_cross_view("ms", four_primitive_stream(), 4)
        np.testing.assert_allclose(t.per_primitive, [0.1, 0.5, 0.35, 1.0])
        assert list(np.flatnonzero(prune_cross_threshold(t, 0.6).retain)) == [3]

    def test_large_n_keeps_every_recorded(self):
        ranked = rank_per_ray("eg", four_primitive_stream(), 6)
        mask = prune_pixelwise(ranked, 3)
        assert list(mask.retain) == [True, True, True, True, False, False]

    def test_n_must_be_positive_integer(self):
        ranked = rank_per_ray("eg", four_primitive_stream(), 4)
        for bad in (0, 1.5):
            with pytest.raises(ValueError):
                prune_pixelwise(ranked, bad)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.lists(st.tuples(st.integers(0, 9), st.floats(0.0, 1.0)), max_size=6), max_size=8))
    def test_floor_and_nesting(self, rays):
        ranked = RankedRays.from_lists(
            [([i for i, _ in sorted(r, key=lambda e: (-e[1], e[0]))],
              [s for _, s in sorted(r, key=lambda e: (-e[1], e[0]))]) for r in rays], 10)
        masks = [prune_pixelwise(ranked, n).retain for n in (1, 2, 5, 30)]
        for a, b in zip(masks, masks[1:]):
            assert np.all(a <= b)
        hit_rays = sum(1 for r in rays if r)
        assert masks[0].sum() <= hit_rays
        for r in rays:
            if r:
                assert any(masks[0][i] for i, _ in r)


class TestApplyMask:
    def test_all_true_and_false(self):
        scene = gen_scene(SynthSpec(seed=1, n_primitives=20))
        full, ids = apply_mask(scene, PruneMask(np.ones(20, bool), PruneSpec("cross_ratio", 0.0)))
        np.testing.assert_array_equal(full.positions, scene.positions)
        np.testing.assert_array_equal(ids, np.arange(20))
        empty, ids = apply_mask(scene, PruneMask(np.zeros(20, bool), PruneSpec("cross_ratio", 1.0)))
        assert len(empty) == 0 and np.all(ids == -1)

    def test_four_primitive_order(self):
        scene = gen_scene(SynthSpec(seed=3, n_primitives=4))
        mask = prune_pixelwise(rank_per_ray("eg", four_primitive_stream(), 4), 1)
        pruned, ids = apply_mask(scene, mask)
        np.testing.assert_array_equal(pruned.positions, scene.positions[[1, 2, 3]])
        assert list(ids) == [-1, 0, 1, 2]

    def test_length_mismatch(self):
        scene = gen_scene(SynthSpec(seed=3, n_primitives=4))
        with pytest.raises(ValueError):
            apply_mask(scene, PruneMask(np.ones(3, bool), PruneSpec("cross_ratio", 0.0)))


def test_mask_csv_roundtrip(tmp_path):
    mask = PruneMask(np.array([True, False, True]), PruneSpec("cross_stochastic", 0.25, seed=9, score_function="MS"))
    mask.to_csv(tmp_path / "m.csv")
    back = PruneMask.from_csv(tmp_path / "m.csv")
    np.testing.assert_array_equal(back.retain, mask.retain)
    assert back.spec == mask.spec
    assert (tmp_path / "m.csv").read_text().splitlines()[:2] == ["primitive_id,retained", "0,1"]


def test_n_pruned_handles_float_representation():
    assert n_pruned(20, 0.15) == 3
    assert n_pruned(90, 0.7) == 63
    assert n_pruned(50, 0.58) == 29
    assert n_pruned(3, 1.0) == 3
