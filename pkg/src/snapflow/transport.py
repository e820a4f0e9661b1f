"""Exact optimal transport plans and plan-based sample alignment.

Plans couple empirical batches. ``sample_aligned_window`` chains pairwise
plans across consecutive batches Markov-style: the first pair of coordinates
is drawn jointly from the exact plan, every later coordinate is drawn from
the conditional row of a fresh plan given the previous draw. All draws are
with replacement.
"""

import numpy as np
from scipy.optimize import linear_sum_assignment, linprog
from scipy.sparse import csr_matrix

from .exceptions import DegeneratePlanError

MAX_COORDINATE = 1e6
MARGINAL_ATOL = 1e-8


def _check_points(x, name="points"):
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
        raise ValueError(f"{name} must be a non-empty 2-d array, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} must be finite")
    if np.abs(x).max() > MAX_COORDINATE:
        raise ValueError(f"{name} has coordinates larger than {MAX_COORDINATE:g}")
    return x


def cost_matrix(a, b):
    """Pairwise squared Euclidean distances, shape ``(len(a), len(b))``."""
    a = _check_points(a, "a")
    b = _check_points(b, "b")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


class CouplingPlan:
    """A joint distribution over index pairs with fixed marginals."""

    def __init__(self, matrix, row_marginal, col_marginal):
        matrix = np.asarray(matrix, dtype=float)
        row_marginal = np.asarray(row_marginal, dtype=float)
        col_marginal = np.asarray(col_marginal, dtype=float)
        if matrix.ndim != 2:
            raise ValueError("plan matrix must be 2-d")
        if np.any(matrix < -MARGINAL_ATOL):
            raise ValueError("plan matrix has negative entries")
        if not np.allclose(matrix.sum(axis=1), row_marginal, rtol=0, atol=MARGINAL_ATOL):
            raise ValueError("plan rows do not sum to the row marginal")
        if not np.allclose(matrix.sum(axis=0), col_marginal, rtol=0, atol=MARGINAL_ATOL):
            raise ValueError("plan columns do not sum to the column marginal")
        self.matrix = np.maximum(matrix, 0.0)
        self.row_marginal = row_marginal
        self.col_marginal = col_marginal

    @property
    def shape(self):
        return self.matrix.shape


def _check_weights(w, n, name):
    if w is None:
        return np.full(n, 1.0 / n)
    w = np.asarray(w, dtype=float)
    if w.shape != (n,):
        raise ValueError(f"{name} must have shape ({n},), got {w.shape}")
    if np.any(w < 0):
        raise ValueError(f"{name} has negative entries")
    if abs(w.sum() - 1.0) > 1e-9:
        raise ValueError(f"{name} must sum to 1 (got {w.sum()!r})")
    return w


def exact_plan(cost, row_weights=None, col_weights=None):
    """Solve the discrete OT problem exactly for the given cost matrix.

    Uniform square problems reduce to an assignment (the optimal plan is a
    permutation scaled by 1/n); anything else is solved as a transportation
    LP with a simplex method, so the result is an exact vertex solution.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2 or 0 in cost.shape:
        raise ValueError(f"cost must be a non-empty 2-d array, got shape {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost must be finite")
    n, m = cost.shape
    p = _check_weights(row_weights, n, "row_weights")
    q = _check_weights(col_weights, m, "col_weights")

    uniform = n == m and np.ptp(p) == 0.0 and np.ptp(q) == 0.0
    if uniform:
        rows, cols = linear_sum_assignment(cost)
        matrix = np.zeros((n, m))
        matrix[rows, cols] = 1.0 / n
    else:
        matrix = _transportation_lp(cost, p, q)
    return CouplingPlan(matrix, p, q)


def _transportation_lp(cost, p, q):
    n, m = cost.shape
    # equality constraints: n row sums then m column sums; the last column
    # constraint is redundant (mass balance) and dropped for full row rank
    row_idx = np.repeat(np.arange(n), m)
    col_idx = n + np.tile(np.arange(m), n)
    var = np.arange(n * m)
    a_eq = csr_matrix(
        (np.ones(2 * n * m), (np.concatenate([row_idx, col_idx]), np.concatenate([var, var]))),
        shape=(n + m, n * m),
    )[: n + m - 1]
    b_eq = np.concatenate([p, q])[: n + m - 1]
    res = linprog(
        cost.ravel(),
        A_eq=a_eq,
        b_eq=b_eq,
        bounds=(0, None),
        method="highs-ds",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if not res.success:
        raise ValueError(f"transportation LP failed: {res.message}")
    return res.x.reshape(n, m)


def conditional_plan(plan):
    """Row-normalise a plan into a row-stochastic conditional matrix."""
    rows = plan.matrix.sum(axis=1)
    if np.any(rows <= 0.0):
        raise DegeneratePlanError(
            f"plan has {int((rows <= 0).sum())} zero rows; conditional undefined"
        )
    return plan.matrix / rows[:, None]


def sample_joint_indices(plan, n_draws, rng):
    """Draw ``n_draws`` index pairs (i, j) with replacement from a plan."""
    flat = plan.matrix.ravel()
    total = flat.sum()
    if total <= 0.0:
        raise DegeneratePlanError("plan has no mass to sample from")
    picks = rng.choice(flat.size, size=n_draws, p=flat / total)
    return np.unravel_index(picks, plan.shape)


def sample_conditional_indices(cond, rows, rng):
    """For each listed row of a row-stochastic matrix, draw one column."""
    # inverse-CDF per row; one uniform each; clip absorbs cdf roundoff at 1
    cdf = np.cumsum(cond[rows], axis=1)
    u = rng.random(len(rows))
    return np.minimum((cdf < u[:, None]).sum(axis=1), cond.shape[1] - 1)


def sample_aligned_window(batches, rng, n_samples=None):
    """Align consecutive batches into joint tuples via chained exact plans.

    Returns an array of shape ``(len(batches), n_samples, d)`` whose slice
    ``[ell, i]`` is a point of ``batches[ell]``; tuple ``[:, i]`` is one
    aligned trajectory skeleton. Defaults to ``n_samples = len(batches[0])``.
    """
    if len(batches) < 2:
        raise ValueError("need at least 2 batches to align")
    batches = [_check_points(b, f"batches[{k}]") for k, b in enumerate(batches)]
    d = batches[0].shape[1]
    for k, b in enumerate(batches[1:], 1):
        if b.shape[1] != d:
            raise ValueError(f"batches[{k}] has dimension {b.shape[1]}, expected {d}")
    if n_samples is None:
        n_samples = len(batches[0])
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")

    plan = exact_plan(cost_matrix(batches[0], batches[1]))
    i_idx, j_idx = sample_joint_indices(plan, n_samples, rng)
    aligned_idx = [i_idx, j_idx]
    for ell in range(2, len(batches)):
        prev_points = batches[ell - 1][aligned_idx[-1]]
        plan = exact_plan(cost_matrix(prev_points, batches[ell]))
        cond = conditional_plan(plan)
        aligned_idx.append(sample_conditional_indices(cond, np.arange(n_samples), rng))
    return np.stack([b[idx] for b, idx in zip(batches, aligned_idx)])
