"""Pairwise augmentation arithmetic: replacement, cutmix, mixup, flip."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import cxrscore as cx
from cxrscore.augment import CutMixParams
from cxrscore.errors import ArgumentError, AugmentationError
from cxrscore.seeding import ROLE_CUTMIX, rng_for
from conftest import make_sample


def bright_mask_lambda(mixed, a):
    """Retained fraction of image a, recomputed by brute-force pixel count."""
    same = (mixed.image == a.image).all(axis=2)
    h, w = same.shape
    return same.sum() / float(h * w)


class TestLungScoreReplace:
    def test_exact_arithmetic(self):
        a = make_sample(2, 0, "x")
        b = make_sample(1, 3, "y")
        u, v = cx.lung_score_replace(a, b)
        assert (u.score_left, u.score_right, u.score_total) == (2.0, 3.0, 5.0)
        assert (v.score_left, v.score_right, v.score_total) == (1.0, 0.0, 1.0)
        assert u.source_id == "x-l-y-r"
        assert v.source_id == "y-l-x-r"

    def test_pixels_spliced_at_midline(self):
        a = make_sample(2, 0, "x", fill=0.2)
        b = make_sample(1, 3, "y", fill=0.8)
        u, _ = cx.lung_score_replace(a, b)
        mid = a.image.shape[1] // 2
        assert (u.image[:, :mid] == a.image[:, :mid]).all()
        assert (u.image[:, mid:] == b.image[:, mid:]).all()

    def test_self_swap_is_identity_on_scores(self):
        a = make_sample(3, 1, "x")
        u, v = cx.lung_score_replace(a, a)
        assert u.score_total == v.score_total == 4.0
        assert (u.image == a.image).all()

    def test_zero_scores(self):
        u, v = cx.lung_score_replace(make_sample(0, 0, "x"), make_sample(0, 0, "y"))
        assert u.score_total == 0.0 and v.score_total == 0.0

    def test_missing_lung_scores_rejected(self):
        a = make_sample(1, 1, "x")
        b = cx.CxrSample(
            image=a.image.copy(), score_total=2.0, score_kind="synthetic", source_id="y"
        )
        with pytest.raises(AugmentationError):
            cx.lung_score_replace(a, b)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(AugmentationError):
            cx.lung_score_replace(make_sample(1, 1, "x"), make_sample(1, 1, "y", size=(8, 10)))

    def test_kind_mismatch_rejected(self):
        with pytest.raises(AugmentationError):
            cx.lung_score_replace(make_sample(1, 1, "x"), make_sample(1, 1, "y", kind="GE"))


class TestExpandDataset:
    def test_two_samples_give_six(self):
        out = cx.expand_dataset([make_sample(1, 0, "a"), make_sample(0, 2, "b")], seed=0)
        assert len(out) == 6
        assert len({s.source_id for s in out}) == 6

    def test_odd_count(self):
        samples = [make_sample(i % 5, 0, f"s{i}") for i in range(5)]
        assert len(cx.expand_dataset(samples, seed=0)) == 13

    def test_originals_come_first(self):
        samples = [make_sample(1, 1, f"s{i}") for i in range(4)]
        out = cx.expand_dataset(samples, seed=3)
        assert [s.source_id for s in out[:4]] == [s.source_id for s in samples]

    def test_deterministic(self):
        samples = [make_sample(i % 5, (i * 2) % 5, f"s{i}") for i in range(7)]
        a = cx.expand_dataset(samples, seed=9)
        b = cx.expand_dataset(samples, seed=9)
        assert [s.source_id for s in a] == [s.source_id for s in b]
        assert all((x.image == y.image).all() for x, y in zip(a, b))

    def test_seed_changes_pairing(self):
        samples = [make_sample(i % 5, (i * 2) % 5, f"s{i}") for i in range(8)]
        a = cx.expand_dataset(samples, seed=1)
        b = cx.expand_dataset(samples, seed=2)
        assert [s.source_id for s in a[8:]] != [s.source_id for s in b[8:]]

    def test_lung_scores_conserved(self):
        # every synthetic's y is the sum of two parent-lung scores, so the
        # multiset of (left, right) values drawn from parents must balance
        samples = [make_sample(i % 5, (i * 3) % 5, f"s{i}") for i in range(10)]
        out = cx.expand_dataset(samples, seed=4)
        for s in out:
            assert s.score_total == s.score_left + s.score_right
        synth = out[10:]
        left_counts = sorted(s.score_left for s in synth)
        parent_lefts = sorted(list(s.score_left for s in samples) * 2)
        assert left_counts == parent_lefts

    def test_small_inputs_pass_through(self):
        assert cx.expand_dataset([], seed=0) == []
        one = [make_sample(1, 2, "only")]
        assert [s.source_id for s in cx.expand_dataset(one, seed=0)] == ["only"]

    def test_missing_lung_scores_rejected(self):
        bad = cx.CxrSample(
            image=make_sample(0, 0, "t").image, score_total=3.0,
            score_kind="GE", source_id="g",
        )
        with pytest.raises(AugmentationError):
            cx.expand_dataset([make_sample(1, 1, "a"), bad], seed=0)


class TestCutMixParams:
    def test_bounds_validated(self):
        with pytest.raises(ArgumentError):
            CutMixParams(lambda_min=0.9, lambda_max=0.5)
        with pytest.raises(ArgumentError):
            CutMixParams(lambda_min=-0.1, lambda_max=0.5)
        with pytest.raises(ArgumentError):
            CutMixParams(lambda_min=0.5, lambda_max=1.1)


class TestScoreCutMix:
    def test_lambda_matches_pixel_count(self):
        params = CutMixParams(0.5, 0.9)
        rng = rng_for(0, ROLE_CUTMIX)
        a = make_sample(4, 2, "a", size=(16, 16), fill=0.25)
        b = make_sample(0, 1, "b", size=(16, 16), fill=0.75)
        for _ in range(300):
            mixed = cx.score_cutmix(a, b, params, rng)
            lam = bright_mask_lambda(mixed, a)
            expected = lam * a.score_total + (1.0 - lam) * b.score_total
            assert mixed.score_total == expected

    def test_mixed_label_between_parents(self):
        params = CutMixParams(0.5, 0.9)
        rng = rng_for(7, ROLE_CUTMIX)
        a = make_sample(4, 3, "a", size=(12, 12), fill=0.2)
        b = make_sample(1, 0, "b", size=(12, 12), fill=0.9)
        for _ in range(300):
            mixed = cx.score_cutmix(a, b, params, rng)
            assert min(a.score_total, b.score_total) <= mixed.score_total
            assert mixed.score_total <= max(a.score_total, b.score_total)

    def test_box_is_rectangular(self):
        params = CutMixParams(0.5, 0.9)
        rng = rng_for(3, ROLE_CUTMIX)
        a = make_sample(2, 2, "a", size=(16, 16), fill=0.25)
        b = make_sample(1, 1, "b", size=(16, 16), fill=0.75)
        mixed = cx.score_cutmix(a, b, params, rng)
        replaced = (mixed.image != a.image).any(axis=2)
        rows = np.where(replaced.any(axis=1))[0]
        cols = np.where(replaced.any(axis=0))[0]
        if rows.size:
            assert replaced[rows[0] : rows[-1] + 1, cols[0] : cols[-1] + 1].all()

    def test_per_lung_scores_dropped(self):
        params = CutMixParams(0.5, 0.9)
        rng = rng_for(1, ROLE_CUTMIX)
        mixed = cx.score_cutmix(make_sample(2, 2, "a"), make_sample(1, 1, "b"), params, rng)
        assert not mixed.has_lung_scores
        assert "-cm-" in mixed.source_id

    def test_pair_mismatch_rejected(self):
        params = CutMixParams(0.5, 0.9)
        rng = rng_for(1, ROLE_CUTMIX)
        with pytest.raises(AugmentationError):
            cx.score_cutmix(make_sample(1, 1, "a"), make_sample(1, 1, "b", size=(8, 10)), params, rng)


class TestScoreMixUp:
    def test_endpoint_lambda_one(self):
        a, b = make_sample(3, 1, "a", fill=0.3), make_sample(0, 2, "b", fill=0.6)
        mixed = cx.score_mixup(a, b, 1.0)
        assert (mixed.image == a.image).all()
        assert mixed.score_total == a.score_total

    def test_endpoint_lambda_zero(self):
        a, b = make_sample(3, 1, "a", fill=0.3), make_sample(0, 2, "b", fill=0.6)
        mixed = cx.score_mixup(a, b, 0.0)
        assert (mixed.image == b.image).all()
        assert mixed.score_total == b.score_total

    def test_blend_linear(self):
        a, b = make_sample(4, 0, "a", fill=0.2), make_sample(0, 2, "b", fill=0.8)
        mixed = cx.score_mixup(a, b, 0.25)
        assert np.allclose(mixed.image, 0.25 * 0.2 + 0.75 * 0.8, atol=1e-6)
        assert mixed.score_total == pytest.approx(0.25 * 4.0 + 0.75 * 2.0, abs=1e-12)
        assert "-mx-" in mixed.source_id

    def test_lambda_out_of_range(self):
        a, b = make_sample(1, 1, "a"), make_sample(1, 1, "b")
        for lam in (-0.01, 1.01):
            with pytest.raises(ArgumentError):
                cx.score_mixup(a, b, lam)


class TestHFlip:
    def test_involution(self):
        a = make_sample(3, 1, "a", size=(8, 10))
        assert (cx.hflip(cx.hflip(a)).image == a.image).all()

    def test_column_mapping(self):
        a = make_sample(2, 1, "a", size=(6, 9))
        f = cx.hflip(a)
        w = a.image.shape[1]
        for j in range(w):
            assert (f.image[:, j] == a.image[:, w - 1 - j]).all()

    def test_lung_scores_swap(self):
        f = cx.hflip(make_sample(3, 1, "a"))
        assert (f.score_left, f.score_right) == (1.0, 3.0)
        assert f.score_total == 4.0
        assert f.source_id.endswith("-hf")

    def test_total_preserved_without_lung_scores(self):
        a = cx.CxrSample(
            image=make_sample(0, 0, "t").image, score_total=5.0,
            score_kind="GE", source_id="t",
        )
        f = cx.hflip(a)
        assert f.score_total == 5.0
        assert not f.has_lung_scores


@settings(max_examples=60, deadline=None)
@given(
    la=st.integers(0, 4), ra=st.integers(0, 4),
    lb=st.integers(0, 4), rb=st.integers(0, 4),
    lam=st.floats(0.0, 1.0),
    seed=st.integers(0, 2**20),
)
def test_mixed_scores_stay_in_score_range(la, ra, lb, rb, lam, seed):
    """Neither mixing op can leave the parents' score interval."""
    a = make_sample(la, ra, "a", size=(10, 10), fill=0.3)
    b = make_sample(lb, rb, "b", size=(10, 10), fill=0.7)
    lo = min(a.score_total, b.score_total)
    hi = max(a.score_total, b.score_total)
    mixed = cx.score_mixup(a, b, lam)
    assert lo - 1e-9 <= mixed.score_total <= hi + 1e-9
    cut = cx.score_cutmix(a, b, CutMixParams(0.5, 0.9), rng_for(seed, ROLE_CUTMIX))
    assert lo <= cut.score_total <= hi
