import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import boxes
from ottrack.agreement import (
    EmptyAgreementWarning,
    View,
    _agreeing_pairs,
    agree,
    agreement_loss,
    agreement_matrix,
    recover_proposals,
)
from ottrack.geometry import AffineTransform, BoundingBox, Detection, apply_affine, giou, invert, nms


def det(x, y, s, w=40.0, h=80.0):
    return Detection(BoundingBox(x, y, w, h), s)


class TestMatrix:
    def test_identical_views(self):
        v = [det(0, 0, 0.9), det(200, 0, 0.8), det(400, 50, 0.7)]
        assert np.allclose(np.diag(agreement_matrix(v, v)), 1.0)

    def test_translated_view_with_inverse(self):
        v = [det(10, 20, 0.9), det(300, 40, 0.5)]
        t = AffineTransform.translation(17.0, -9.0)
        vb = View([Detection(apply_affine(t, d.box), d.score) for d in v], transformed=True, inverse=invert(t))
        assert np.allclose(np.diag(agreement_matrix(v, vb)), 1.0, atol=1e-12)

    def test_missing_inverse(self):
        with pytest.raises(ValueError, match="inverse"):
            agreement_matrix([det(0, 0, 0.5)], View([det(0, 0, 0.5)], transformed=True))

    def test_disjoint_single_boxes(self):
        a, b = det(0, 0, 0.9), det(500, 500, 0.9)
        m = agreement_matrix([a], [b])
        assert m.shape == (1, 1)
        assert m[0, 0] < 0
        assert m[0, 0] == pytest.approx(giou(a.box, b.box), abs=1e-12)


class TestLoss:
    def test_perfect_rows(self):
        assert agreement_loss(np.array([[0.2, 1.0], [1.0, -0.3]])) == 0.0

    def test_far_apart_approaches_two(self):
        a = BoundingBox(0, 0, 1, 1)
        b = BoundingBox(1e6, 1e6, 1, 1)
        loss = agreement_loss(agreement_matrix([Detection(a, 1)], [Detection(b, 1)]))
        assert loss == pytest.approx(2.0, abs=1e-5)

    def test_half(self):
        assert agreement_loss(np.array([[0.5, 0.1], [-0.2, 0.5]])) == pytest.approx(0.5, abs=1e-15)

    def test_empty_warns_and_is_zero(self):
        with pytest.warns(EmptyAgreementWarning):
            assert agreement_loss(np.zeros((0, 3))) == 0.0

    def test_agree_result(self):
        v = [det(0, 0, 0.9), det(200, 0, 0.8)]
        res = agree(v, [det(2, 0, 0.7)])
        assert not res.empty
        assert [(i, j) for i, j, _ in res.matched_pairs] == [(0, 0)]
        assert all(g >= 0.4 for _, _, g in res.matched_pairs)
        expected = np.mean(1 - res.matrix.max(axis=1))
        assert res.loss == pytest.approx(expected, abs=1e-15)

    def test_agree_empty(self):
        res = agree([], [det(0, 0, 0.5)])
        assert res.empty and res.loss == 0.0


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(boxes(), st.floats(0, 1)), min_size=1, max_size=8))
def test_self_agreement_is_exactly_zero(items):
    v = [Detection(b, s) for b, s in items]
    assert agreement_loss(agreement_matrix(v, v)) == 0.0


matrices = st.integers(1, 5).flatmap(
    lambda n: st.integers(1, 5).flatmap(
        lambda m: st.lists(st.lists(st.floats(-1, 1), min_size=m, max_size=m), min_size=n, max_size=n)
    )
)


@settings(max_examples=100, deadline=None)
@given(matrices, st.randoms(use_true_random=False), st.floats(0, 1))
def test_loss_permutation_and_monotone(rows, rnd, bump):
    mat = np.array(rows)
    perm = list(range(mat.shape[1]))
    rnd.shuffle(perm)
    base = agreement_loss(mat)
    assert agreement_loss(mat[:, perm]) == pytest.approx(base, abs=1e-12)
    i, j = rnd.randrange(mat.shape[0]), rnd.randrange(mat.shape[1])
    up = mat.copy()
    up[i, j] = min(1.0, up[i, j] + bump)
    assert agreement_loss(up) <= base + 1e-15
    assert 0.0 <= base <= 2.0


class TestRecovery:
    def test_low_score_pair_recovered(self):
        out = recover_proposals([det(100, 100, 0.35)], [det(101, 100, 0.33)])
        assert len(out) == 1
        assert out[0].box == BoundingBox(100, 100, 40, 80)
        assert out[0].score == pytest.approx(0.34)

    def test_single_view_not_recovered(self):
        assert recover_proposals([det(100, 100, 0.9)], [det(700, 100, 0.9)]) == []
        assert recover_proposals([det(100, 100, 0.9)], []) == []

    def test_low_agreement_rejected(self):
        a, b = det(0, 0, 0.9), det(25, 0, 0.9)
        assert giou(a.box, b.box) < 0.4
        assert recover_proposals([a], [b]) == []

    def test_below_low_threshold_dropped(self):
        assert recover_proposals([det(0, 0, 0.29)], [det(0, 0, 0.9)]) == []

    def test_pair_threshold_inclusive(self):
        # GIoU exactly 0.5: shifted by a third of the width
        a, b = BoundingBox(0, 0, 3, 1), BoundingBox(1, 0, 3, 1)
        g = giou(a, b)
        out = recover_proposals([Detection(a, 0.5)], [Detection(b, 0.5)], pair_threshold=g)
        assert len(out) == 1

    def test_duplicates_collapse_under_nms(self):
        va = [det(0, 0, 0.5), det(1, 0, 0.4)]
        vb = [det(0, 0, 0.5)]
        out = recover_proposals(va, vb)
        assert len(out) == 1 and out[0].score == pytest.approx(0.5)

    def test_transformed_view_b(self):
        va = [det(50, 60, 0.35)]
        t = AffineTransform.from_array([[1.1, 0.0, 8.0], [0.0, 1.1, -5.0]])
        vb = View([Detection(apply_affine(t, va[0].box), 0.34)], transformed=True, inverse=invert(t))
        out = recover_proposals(va, vb)
        assert len(out) == 1 and out[0].box == va[0].box

    def test_bad_threshold(self):
        with pytest.raises(ValueError):
            recover_proposals([], [], low_threshold=1.5)


view_items = st.lists(
    st.tuples(st.integers(0, 12), st.integers(-3, 3), st.floats(0, 1)), min_size=0, max_size=8
)


def _build(items, spacing):
    return [Detection(BoundingBox(k * spacing + dx, 0, 40, 80), s) for k, dx, s in items]


@settings(max_examples=150, deadline=None)
@given(view_items, view_items)
def test_recovery_never_invents_boxes(items_a, items_b):
    va, vb = _build(items_a, 30.0), _build(items_b, 30.0)
    out = recover_proposals(va, vb)
    allowed = {d.box for d in nms([d for d in va if d.score >= 0.3], 1.0)}
    assert all(d.box in allowed for d in out)
    assert len(nms(out)) == len(out)


@settings(max_examples=150, deadline=None)
@given(view_items, view_items, st.floats(0, 1), st.floats(0, 1))
def test_lowering_threshold_grows_agreeing_rows(items_a, items_b, t1, t2):
    lo, hi = sorted((t1, t2))
    va, vb = View(_build(items_a, 30.0)), View(_build(items_b, 30.0))
    rows_hi = {i for i, _ in _agreeing_pairs(va, vb, hi, 0.4)}
    rows_lo = {i for i, _ in _agreeing_pairs(va, vb, lo, 0.4)}
    assert rows_hi <= rows_lo


separated_items = st.lists(
    st.tuples(st.integers(0, 12), st.integers(-3, 3), st.floats(0, 1)), max_size=8, unique_by=lambda t: t[0]
)


@settings(max_examples=150, deadline=None)
@given(separated_items, separated_items, st.floats(0, 1), st.floats(0, 1))
def test_lowering_threshold_grows_recovery_for_separated_objects(items_a, items_b, t1, t2):
    # objects 200 px apart never interact through NMS
    lo, hi = sorted((t1, t2))
    va, vb = _build(items_a, 200.0), _build(items_b, 200.0)
    got_hi = {d.box for d in recover_proposals(va, vb, hi)}
    got_lo = {d.box for d in recover_proposals(va, vb, lo)}
    assert got_hi <= got_lo
