import itertools
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.optimize import linear_sum_assignment

from ottrack.transport import (
    CostMatrix,
    Marginals,
    SinkhornConfig,
    SinkhornUnderflowError,
    TransportPlan,
    cosine_cost,
    exact_assignment_oracle,
    extract_hard_assignment,
    sinkhorn_solve,
    with_slack,
)

FIXTURES = Path(__file__).parent / "fixtures"


def lsa_cost(c):
    r, k = linear_sum_assignment(c)
    return float(c[r, k].sum())


class TestCosineCost:
    def test_reference_values(self):
        v = np.array([1.0, 2.0, -0.5])
        ortho = np.array([2.0, -1.0, 0.0])
        c = cosine_cost([v], [v, ortho, -v]).values
        assert np.allclose(c, [[0.0, 1.0, 2.0]], atol=1e-12)

    def test_zero_norm_rejected(self):
        with pytest.raises(ValueError, match="zero-norm"):
            cosine_cost([[0.0, 0.0]], [[1.0, 0.0]])

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            cosine_cost([[1.0, 0.0]], [[1.0, 0.0, 0.0]])


class TestValidation:
    def test_cost_must_be_finite(self):
        with pytest.raises(ValueError):
            CostMatrix([[0.0, np.inf]])

    def test_negative_marginals(self):
        with pytest.raises(ValueError):
            Marginals([1.0, -1.0], [0.0])

    @pytest.mark.parametrize("kw", [{"reg_strength": 0.0}, {"max_iterations": 0}, {"convergence_tol": -1.0}])
    def test_config(self, kw):
        with pytest.raises(ValueError):
            SinkhornConfig(**kw)

    def test_infeasible_marginals(self):
        with pytest.raises(ValueError, match="infeasible"):
            sinkhorn_solve(np.zeros((2, 2)), Marginals([1.0, 1.0], [1.0, 0.5]))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            sinkhorn_solve(np.zeros((2, 2)), Marginals([1.0, 1.0, 1.0], [1.5, 1.5]))


class TestSlack:
    def test_balanced_untouched(self):
        m = with_slack([1, 1], [0.5, 1.5])
        assert (m.slack_rows, m.slack_cols) == (0, 0)

    def test_more_rows(self):
        m = with_slack([1, 1, 1], [1, 1])
        assert m.slack_cols == 1 and m.q[-1] == 1.0 and m.is_feasible()

    def test_more_cols(self):
        m = with_slack([1, 1], [1, 1, 1, 1])
        assert m.slack_rows == 1 and m.p[-1] == 2.0 and m.is_feasible()

    def test_unbalanced_problem_solves(self):
        plan = sinkhorn_solve(np.array([[0.0, 1.0, 1.0], [1.0, 0.0, 1.0]]))
        assert plan.converged
        assert plan.plan.shape == (3, 3)
        assert plan.real.shape == (2, 3)


class TestSolverExamples:
    def test_one_by_one(self):
        plan = sinkhorn_solve([[0.3]], Marginals([1.0], [1.0]))
        assert plan.plan == pytest.approx(np.ones((1, 1)))

    def test_two_by_two_sharp(self):
        plan = sinkhorn_solve([[0.0, 1.0], [1.0, 0.0]], Marginals([1, 1], [1, 1]), SinkhornConfig(reg_strength=0.05))
        assert np.abs(plan.plan - np.eye(2)).max() < 1e-3

    def test_fixture_within_two_percent(self):
        cost = np.loadtxt(FIXTURES / "cost_4x4.csv", delimiter=",")
        lines = dict(l.split(": ") for l in (FIXTURES / "cost_4x4_oracle.txt").read_text().splitlines() if ": " in l)
        best = float(lines["cost"])
        perm = tuple(int(v) for v in lines["permutation"].split(","))
        plan = sinkhorn_solve(cost, Marginals.uniform(4, 4), SinkhornConfig(reg_strength=0.01))
        assert plan.transported_cost(cost) <= best * 1.02
        assert exact_assignment_oracle(cost) == (perm, pytest.approx(best, abs=1e-9))

    def test_plain_domain_underflow(self):
        cost = np.array([[0.0, 1000.0], [1000.0, 1000.0]])
        cfg = SinkhornConfig(reg_strength=0.1, log_domain=False)
        with pytest.raises(SinkhornUnderflowError, match="log-domain"):
            sinkhorn_solve(cost, Marginals([1, 1], [1, 1]), cfg)
        # the same problem in the log domain is fine
        plan = sinkhorn_solve(cost, Marginals([1, 1], [1, 1]), SinkhornConfig(reg_strength=0.1, log_domain=True))
        assert np.all(np.isfinite(plan.plan))

    def test_log_domain_auto(self):
        assert SinkhornConfig(reg_strength=0.01).use_log_domain
        assert not SinkhornConfig().use_log_domain

    def test_log_and_plain_agree(self, rng):
        c = rng.uniform(0, 1, (5, 7))
        m = Marginals(np.full(5, 7.0), np.full(7, 5.0))
        a = sinkhorn_solve(c, m, SinkhornConfig(reg_strength=0.2, log_domain=False, convergence_tol=1e-10, max_iterations=5000))
        b = sinkhorn_solve(c, m, SinkhornConfig(reg_strength=0.2, log_domain=True, convergence_tol=1e-10, max_iterations=5000))
        assert np.allclose(a.plan, b.plan, atol=1e-9)

    def test_zero_mass_rows(self):
        m = Marginals([2.0, 0.0], [1.0, 1.0])
        for log in (False, True):
            plan = sinkhorn_solve([[0.1, 0.2], [0.3, 0.4]], m, SinkhornConfig(log_domain=log))
            assert np.all(plan.plan[1] == 0)
            assert plan.converged


def _feasible_problem(rng, n, m):
    p = rng.uniform(0.1, 1.0, n)
    q = rng.uniform(0.1, 1.0, m)
    return rng.uniform(0, 1, (n, m)), Marginals(p / p.sum(), q / q.sum())


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_feasibility_property(n, m, seed):
    rng = np.random.default_rng(seed)
    cost, marg = _feasible_problem(rng, n, m)
    plan = sinkhorn_solve(cost, marg)
    assert np.all(plan.plan >= 0)
    if plan.converged:
        assert np.abs(plan.plan.sum(1) - marg.p).max() < 1e-3
        assert np.abs(plan.plan.sum(0) - marg.q).max() < 1e-3


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-3, 3))
def test_constant_shift_invariance(seed, k):
    rng = np.random.default_rng(seed)
    cost, marg = _feasible_problem(rng, 4, 5)
    cfg = SinkhornConfig(convergence_tol=1e-12, max_iterations=20)
    a = sinkhorn_solve(cost, marg, cfg).plan
    b = sinkhorn_solve(cost + k, marg, cfg).plan
    assert np.allclose(a, b, atol=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.permutations(range(4)))
def test_row_permutation_equivariance(seed, perm):
    rng = np.random.default_rng(seed)
    cost, marg = _feasible_problem(rng, 4, 3)
    perm = list(perm)
    cfg = SinkhornConfig(convergence_tol=1e-12, max_iterations=200)
    a = sinkhorn_solve(cost, marg, cfg).plan
    b = sinkhorn_solve(cost[perm], Marginals(marg.p[perm], marg.q), cfg).plan
    assert np.allclose(a[perm], b, atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_cost_monotone_in_regularization(seed):
    rng = np.random.default_rng(seed)
    cost = rng.uniform(0, 1, (5, 5))
    m = Marginals.uniform(5, 5)
    costs = []
    for reg in (0.05, 0.2, 1.0):
        plan = sinkhorn_solve(cost, m, SinkhornConfig(reg_strength=reg, convergence_tol=1e-9, max_iterations=20000))
        costs.append(plan.transported_cost(cost))
    assert costs[0] <= costs[1] + 1e-6
    assert costs[1] <= costs[2] + 1e-6


class TestOracle:
    def test_trivial(self):
        assert exact_assignment_oracle([[0.0]]) == ((0,), 0.0)
        assert exact_assignment_oracle([[0.0, 1.0], [1.0, 0.0]]) == ((0, 1), 0.0)

    def test_tie_break_lexicographic(self):
        assert exact_assignment_oracle(np.zeros((3, 3)))[0] == (0, 1, 2)

    def test_refuses_large(self):
        with pytest.raises(ValueError):
            exact_assignment_oracle(np.zeros((9, 9)))

    def test_non_square(self):
        with pytest.raises(ValueError):
            exact_assignment_oracle(np.zeros((2, 3)))

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(1, 6), st.just(0)).map(lambda t: (t[0], t[0])),
                  elements=st.floats(0, 10, allow_nan=False)))
    def test_matches_lsa(self, c):
        perm, best = exact_assignment_oracle(c)
        assert best == pytest.approx(lsa_cost(c), abs=1e-9)
        assert best == pytest.approx(float(c[np.arange(len(c)), list(perm)].sum()))

    def test_random_5x5_against_sinkhorn(self, rng):
        c = rng.uniform(0, 1, (5, 5))
        perm, best = exact_assignment_oracle(c)
        totals = sorted(c[np.arange(5), list(p)].sum() for p in itertools.permutations(range(5)))
        assert totals[1] - totals[0] > 1e-3  # the argmin is unique
        hard = extract_hard_assignment(sinkhorn_solve(c, Marginals.uniform(5, 5), SinkhornConfig(reg_strength=0.01, max_iterations=1000)))
        got = dict(hard.pairs)
        assert tuple(got[i] for i in range(5)) == perm
        assert sum(c[i, j] for i, j in hard.pairs) == pytest.approx(best)


class TestHardAssignment:
    def test_diagonal(self):
        h = extract_hard_assignment(TransportPlan(np.array([[0.9, 0.1], [0.2, 0.8]])))
        assert h.pairs == [(0, 0), (1, 1)]
        assert h.unmatched_rows == [] and h.unmatched_cols == []

    def test_slack_row_unmatched(self):
        # one real column plus a slack column; row 1 sends its mass to slack
        plan = TransportPlan(np.array([[0.9, 0.1], [0.1, 0.9]]), slack_cols=1)
        h = extract_hard_assignment(plan)
        assert h.pairs == [(0, 0)]
        assert h.unmatched_rows == [1]

    def test_no_real_columns(self):
        plan = TransportPlan(np.ones((3, 1)), slack_cols=1)
        h = extract_hard_assignment(plan)
        assert h.pairs == [] and h.unmatched_rows == [0, 1, 2]

    def test_conflict_higher_mass_wins(self):
        h = extract_hard_assignment(TransportPlan(np.array([[0.6, 0.4], [0.7, 0.3]])))
        assert h.pairs == [(1, 0)]
        assert h.unmatched_rows == [0] and h.unmatched_cols == [1]
