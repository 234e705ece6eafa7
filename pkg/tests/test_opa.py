import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ottrack.geometry import BoundingBox
from ottrack.opa import (
    SampledProposals,
    auxiliary_loss,
    marginals_one_to_many,
    marginals_one_to_one,
    select_soft_labels,
)
from ottrack.transport import TransportPlan, sinkhorn_solve


def box(k):
    return BoundingBox(10.0 * k, 0.0, 5.0, 5.0)


def sample(owners, n_neg):
    pos = [(box(k), o) for k, o in enumerate(owners)]
    neg = [box(100 + k) for k in range(n_neg)]
    return SampledProposals(pos, neg)


class TestOneToOne:
    def test_square(self):
        m = marginals_one_to_one(3, 3)
        assert list(m.p) == [1, 1, 1] and list(m.q) == [1, 1, 1]
        assert (m.slack_rows, m.slack_cols) == (0, 0)

    def test_single(self):
        m = marginals_one_to_one(1, 1)
        assert list(m.p) == [1] and list(m.q) == [1]

    def test_more_columns_gets_slack_row(self):
        m = marginals_one_to_one(2, 3)
        assert list(m.p) == [1, 1, 1] and m.slack_rows == 1
        assert list(m.q) == [1, 1, 1]

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            marginals_one_to_one(0, 2)


class TestOneToMany:
    def test_single_track(self):
        m = marginals_one_to_many(1, sample([0, 0, 0, 0], 3))
        assert list(m.p) == [4]
        assert list(m.q) == [1, 1, 1, 1, 0, 0, 0]

    def test_two_tracks(self):
        m = marginals_one_to_many(2, sample([0, 1], 0))
        assert list(m.p) == [1, 1] and list(m.q) == [1, 1]

    def test_empty_row(self):
        m = marginals_one_to_many(3, sample([0, 2, 2], 1))
        assert list(m.p) == [1, 0, 2]
        plan = sinkhorn_solve(np.zeros((3, 4)), m)
        assert np.all(plan.plan[1] == 0)

    def test_bad_owner(self):
        with pytest.raises(ValueError, match="owner"):
            marginals_one_to_many(1, sample([0, 1], 0))

    def test_overlapping_sets(self):
        s = SampledProposals([(box(0), 0)], [box(0)])
        with pytest.raises(ValueError):
            marginals_one_to_many(1, s)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 6).flatmap(lambda n: st.tuples(st.just(n), st.lists(st.integers(0, n - 1), max_size=15))),
       st.integers(0, 6))
def test_one_to_many_always_feasible(rows_owners, n_neg):
    n, owners = rows_owners
    m = marginals_one_to_many(n, sample(owners, n_neg))
    assert m.is_feasible()
    assert m.p.sum() == len(owners)


class TestSoftLabels:
    def test_clear_row(self):
        s = select_soft_labels(TransportPlan(np.array([[0.9, 0.1]])))
        assert s.positive_cols == [0] and s.negative_cols == [1]

    def test_tie(self):
        s = select_soft_labels(TransportPlan(np.array([[0.5, 0.5]])))
        assert s.positive_cols == [0] and s.negative_cols == [1]

    def test_from_solver(self):
        # one track against three unit-mass columns; the slack row takes the surplus
        plan = sinkhorn_solve(np.array([[0.0, 1.0, 2.0]]), marginals_one_to_one(1, 3))
        real = plan.real[0]
        assert real[0] > real[1] > real[2]
        s = select_soft_labels(plan)
        assert s.positive_cols == [0] and s.negative_cols == [2]

    def test_slack_columns_ignored(self):
        plan = TransportPlan(np.array([[0.2, 0.1, 5.0], [0.0, 0.3, 0.0]]), slack_cols=1)
        s = select_soft_labels(plan)
        assert s.positive_cols == [0, 1] and s.negative_cols == [1, 0]

    def test_single_column(self):
        with pytest.raises(ValueError):
            select_soft_labels(TransportPlan(np.ones((2, 1))))

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.floats(1e-3, 1e3))
    def test_scale_invariance(self, seed, k):
        plan = np.random.default_rng(seed).uniform(0, 1, (4, 5))
        a = select_soft_labels(TransportPlan(plan))
        b = select_soft_labels(TransportPlan(plan * k))
        assert a == b
        assert all(p != n for p, n in zip(a.positive_cols, a.negative_cols))


class TestAuxiliaryLoss:
    def test_exact_plan(self):
        s = sample([0, 1, 1], 2)
        assert auxiliary_loss(TransportPlan(s.targets(2)), s) == 0.0

    def test_zero_plan(self):
        s = sample([0, 1, 1], 2)
        # 3 ones among 2 x 5 entries
        assert auxiliary_loss(np.zeros((2, 5)), s) == pytest.approx(3 / 10, abs=1e-15)

    def test_half_plan(self):
        s = sample([0, 0], 2)
        assert auxiliary_loss(np.full((1, 4), 0.5), s) == pytest.approx(0.25, abs=1e-15)

    def test_other_rows_positive_is_zero_target(self):
        s = sample([0, 1], 0)
        t = s.targets(2)
        assert t.tolist() == [[1, 0], [0, 1]]

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            auxiliary_loss(np.zeros((1, 3)), sample([0], 1))

    def test_ignores_slack(self):
        s = sample([0], 1)
        plan = TransportPlan(np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 7.0]]), slack_rows=1, slack_cols=1)
        assert auxiliary_loss(plan, s) == 0.0

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_nonnegative_and_permutation_invariant(self, seed):
        rng = np.random.default_rng(seed)
        n_rows, n_pos, n_neg = 3, 5, 4
        s = sample(list(rng.integers(0, n_rows, n_pos)), n_neg)
        plan = rng.uniform(0, 1, (n_rows, n_pos + n_neg))
        base = auxiliary_loss(plan, s)
        assert base >= 0
        assert base > 0 or np.array_equal(plan, s.targets(n_rows))
        # shuffle positives and negatives independently, keeping columns aligned
        pp = rng.permutation(n_pos)
        nn = rng.permutation(n_neg)
        s2 = SampledProposals([s.positives[k] for k in pp], [s.negatives[k] for k in nn])
        cols = np.concatenate([pp, n_pos + nn])
        assert auxiliary_loss(plan[:, cols], s2) == pytest.approx(base, abs=1e-15)
