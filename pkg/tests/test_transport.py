import itertools

import numpy as np
import pytest
from numpy.testing import assert_allclose

from snapflow.exceptions import DegeneratePlanError
from snapflow.transport import (
    CouplingPlan,
    conditional_plan,
    cost_matrix,
    exact_plan,
    sample_aligned_window,
    sample_conditional_indices,
    sample_joint_indices,
)


def northwest_corner(p, q):
    # monotone coupling; optimal for sorted 1-d atoms under convex costs
    plan = np.zeros((len(p), len(q)))
    p, q = p.copy(), q.copy()
    i = j = 0
    while i < len(p) and j < len(q):
        m = min(p[i], q[j])
        plan[i, j] = m
        p[i] -= m
        q[j] -= m
        if p[i] <= 1e-15:
            i += 1
        if j < len(q) and q[j] <= 1e-15:
            j += 1
    return plan


class TestCostMatrix:
    def test_matches_double_loop(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
        c = cost_matrix(a, b)
        for i in range(5):
            for j in range(5):
                assert abs(c[i, j] - np.sum((a[i] - b[j]) ** 2)) <= 1e-12

    def test_transpose_symmetry_and_zero_diagonal(self):
        rng = np.random.default_rng(1)
        a, b = rng.normal(size=(4, 2)), rng.normal(size=(6, 2))
        assert_allclose(cost_matrix(a, b), cost_matrix(b, a).T, rtol=1e-15)
        assert_allclose(np.diag(cost_matrix(a, a)), 0.0, atol=0.0)

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            cost_matrix(np.ones((0, 2)), np.ones((3, 2)))
        with pytest.raises(ValueError):
            cost_matrix(np.ones((3, 2)), np.ones((3, 3)))
        with pytest.raises(ValueError):
            cost_matrix([[np.nan, 0.0]], [[0.0, 0.0]])
        with pytest.raises(ValueError):
            cost_matrix([[2e6, 0.0]], [[0.0, 0.0]])


class TestExactPlan:
    def test_uniform_square_matches_permutation_brute_force(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            n = int(rng.integers(2, 7))
            cost = rng.uniform(0.0, 10.0, (n, n))
            plan = exact_plan(cost)
            got = float((plan.matrix * cost).sum())
            best = min(
                sum(cost[i, p[i]] for i in range(n))
                for p in itertools.permutations(range(n))
            ) / n
            assert abs(got - best) <= 1e-12
            assert_allclose(plan.matrix.sum(axis=1), 1.0 / n, atol=1e-12)
            assert_allclose(plan.matrix.sum(axis=0), 1.0 / n, atol=1e-12)

    def test_weighted_square_matches_monotone_coupling(self):
        x = np.array([[0.0], [1.0], [3.0]])
        y = np.array([[0.5], [2.0], [4.0]])
        p = np.array([0.5, 0.3, 0.2])
        q = np.array([0.2, 0.5, 0.3])
        plan = exact_plan(cost_matrix(x, y), p, q)
        ref = northwest_corner(p, q)
        assert_allclose(plan.matrix, ref, atol=1e-9)

    def test_rectangular_uniform(self):
        rng = np.random.default_rng(3)
        x = np.sort(rng.normal(size=5))[:, None]
        y = np.sort(rng.normal(size=3))[:, None]
        plan = exact_plan(cost_matrix(x, y))
        assert plan.shape == (5, 3)
        assert_allclose(plan.matrix.sum(axis=1), 0.2, atol=1e-9)
        assert_allclose(plan.matrix.sum(axis=0), 1.0 / 3.0, atol=1e-9)
        ref = northwest_corner(np.full(5, 0.2), np.full(3, 1.0 / 3.0))
        cost = cost_matrix(x, y)
        assert abs((plan.matrix * cost).sum() - (ref * cost).sum()) <= 1e-9

    def test_permuting_rows_permutes_plan(self):
        rng = np.random.default_rng(4)
        cost = rng.uniform(size=(6, 6))
        perm = rng.permutation(6)
        base = exact_plan(cost).matrix
        shuffled = exact_plan(cost[perm]).matrix
        assert_allclose(shuffled, base[perm], atol=1e-12)

    def test_identical_batches_give_identity_plan(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(7, 2))
        plan = exact_plan(cost_matrix(x, x))
        assert_allclose(plan.matrix, np.eye(7) / 7, atol=1e-12)

    def test_weight_validation(self):
        cost = np.ones((2, 2))
        with pytest.raises(ValueError):
            exact_plan(cost, row_weights=[0.5, 0.6])
        with pytest.raises(ValueError):
            exact_plan(cost, row_weights=[1.1, -0.1])
        with pytest.raises(ValueError):
            exact_plan(cost, row_weights=[0.5, 0.25, 0.25])
        with pytest.raises(ValueError):
            exact_plan(np.ones((2, 2)) * np.nan)


class TestCouplingPlan:
    def test_rejects_marginal_violation(self):
        with pytest.raises(ValueError):
            CouplingPlan([[0.5, 0.0], [0.0, 0.4]], [0.5, 0.5], [0.5, 0.5])
        with pytest.raises(ValueError):
            CouplingPlan([[0.6, -0.1], [0.0, 0.5]], [0.5, 0.5], [0.5, 0.5])


class TestConditionalPlan:
    def test_row_normalisation(self):
        plan = CouplingPlan(
            [[0.5, 0.0], [0.25, 0.25]], [0.5, 0.5], [0.75, 0.25]
        )
        cond = conditional_plan(plan)
        assert_allclose(cond, [[1.0, 0.0], [0.5, 0.5]], atol=1e-15)
        assert_allclose(cond.sum(axis=1), 1.0, atol=1e-15)

    def test_zero_row_raises(self):
        plan = CouplingPlan([[0.0, 0.0], [0.5, 0.5]], [0.0, 1.0], [0.5, 0.5])
        with pytest.raises(DegeneratePlanError):
            conditional_plan(plan)


class TestSampling:
    def test_joint_frequencies_match_plan(self):
        matrix = np.array(
            [[0.10, 0.05, 0.05], [0.05, 0.20, 0.05], [0.05, 0.05, 0.40]]
        )
        plan = CouplingPlan(matrix, matrix.sum(1), matrix.sum(0))
        rng = np.random.default_rng(6)
        n = 100_000
        i_idx, j_idx = sample_joint_indices(plan, n, rng)
        counts = np.zeros((3, 3))
        np.add.at(counts, (i_idx, j_idx), 1.0)
        freq = counts / n
        bound = 3.0 * np.sqrt(matrix * (1.0 - matrix) / n)
        assert np.all(np.abs(freq - matrix) <= bound)

    def test_conditional_rows_sampled_correctly(self):
        cond = np.array([[1.0, 0.0, 0.0], [0.0, 0.3, 0.7]])
        rng = np.random.default_rng(7)
        rows = np.repeat([0, 1], 20_000)
        cols = sample_conditional_indices(cond, rows, rng)
        assert np.all(cols[:20_000] == 0)
        frac = (cols[20_000:] == 2).mean()
        assert abs(frac - 0.7) <= 3.0 * np.sqrt(0.3 * 0.7 / 20_000)


class TestAlignedWindow:
    def test_shape_and_membership(self):
        rng = np.random.default_rng(8)
        batches = [rng.normal(size=(15, 2)) for _ in range(4)]
        aligned = sample_aligned_window(batches, np.random.default_rng(9))
        assert aligned.shape == (4, 15, 2)
        for ell in range(4):
            for row in aligned[ell]:
                assert np.any(np.all(row == batches[ell], axis=1))

    def test_well_separated_clusters_stay_mostly_aligned(self):
        # three far-apart cluster tracks: plans couple like with like, so
        # tuples follow one track except for the multinomial excess that the
        # marginal constraint forces across clusters
        rng = np.random.default_rng(10)
        centers = np.array([[0.0, 0.0], [100.0, 0.0], [0.0, 100.0]])
        batches = []
        for shift in range(3):
            pts = np.repeat(centers + shift, 4, axis=0)
            pts = pts + rng.normal(0.0, 1e-3, pts.shape)
            batches.append(pts)
        aligned = sample_aligned_window(batches, rng, n_samples=60)
        ok = 0
        for i in range(60):
            labels = [np.argmin(np.sum((aligned[ell, i] - centers) ** 2, axis=1)) for ell in range(3)]
            ok += labels[0] == labels[1] == labels[2]
        assert ok >= 48

    def test_matches_independent_reference_chain(self):
        # straight-through reimplementation of the chained sampler: joint
        # draw from the first plan, then row-conditional draws from fresh
        # plans against the previous aligned points, same rng stream
        rng = np.random.default_rng(13)
        batches = [rng.normal(size=(8, 2)) for _ in range(4)]
        got = sample_aligned_window(batches, np.random.default_rng(99))

        ref_rng = np.random.default_rng(99)
        plan = exact_plan(cost_matrix(batches[0], batches[1]))
        flat = plan.matrix.ravel()
        picks = ref_rng.choice(flat.size, size=8, p=flat / flat.sum())
        idx = [picks // 8, picks % 8]
        for ell in range(2, 4):
            prev = batches[ell - 1][idx[-1]]
            cond = conditional_plan(exact_plan(cost_matrix(prev, batches[ell])))
            cdf = np.cumsum(cond, axis=1)
            u = ref_rng.random(8)
            idx.append(np.minimum((cdf < u[:, None]).sum(axis=1), 7))
        ref = np.stack([b[i] for b, i in zip(batches, idx)])
        assert np.array_equal(got, ref)

    def test_deterministic_under_seed(self):
        rng = np.random.default_rng(11)
        batches = [rng.normal(size=(10, 3)) for _ in range(3)]
        a = sample_aligned_window(batches, np.random.default_rng(42))
        b = sample_aligned_window(batches, np.random.default_rng(42))
        assert np.array_equal(a, b)

    def test_custom_sample_count_and_validation(self):
        rng = np.random.default_rng(12)
        batches = [rng.normal(size=(6, 2)), rng.normal(size=(9, 2))]
        aligned = sample_aligned_window(batches, rng, n_samples=30)
        assert aligned.shape == (2, 30, 2)
        with pytest.raises(ValueError):
            sample_aligned_window([batches[0]], rng)
        with pytest.raises(ValueError):
            sample_aligned_window(batches, rng, n_samples=0)
        with pytest.raises(ValueError):
            sample_aligned_window([batches[0], rng.normal(size=(4, 3))], rng)
