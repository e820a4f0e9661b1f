"""Distribution distances between sample batches.

Wasserstein distances are computed from exact OT plans (no entropic
smoothing): W1 uses Euclidean costs, W2 is reported squared. MMD is the
biased V-statistic with a Gaussian kernel; the mixture variant averages the
kernel over a geometric ladder of bandwidth scales around the median
heuristic.
"""

import numpy as np

from .transport import cost_matrix, exact_plan

DEFAULT_GAMMA_SCALES = (0.25, 0.5, 1.0, 2.0, 4.0)


def wasserstein(x, y, p=1):
    """Exact W1 (``p=1``) or squared W2 (``p=2``) between empirical batches."""
    if p not in (1, 2):
        raise ValueError(f"p must be 1 or 2, got {p!r}")
    sq = cost_matrix(x, y)
    cost = np.sqrt(sq) if p == 1 else sq
    plan = exact_plan(cost)
    return float((plan.matrix * cost).sum())


def gaussian_kernel(x, y, gamma):
    """exp(-gamma * ||x - y||^2) for all pairs."""
    if gamma <= 0 or not np.isfinite(gamma):
        raise ValueError(f"gamma must be positive, got {gamma!r}")
    return np.exp(-gamma * cost_matrix(x, y))


def median_heuristic_gamma(x, y):
    """1 / median squared pairwise distance of the pooled sample."""
    pooled = np.concatenate([np.asarray(x, dtype=float), np.asarray(y, dtype=float)])
    sq = cost_matrix(pooled, pooled)
    upper = sq[np.triu_indices(len(pooled), k=1)]
    med = float(np.median(upper)) if upper.size else 0.0
    return 1.0 / med if med > 0 else 1.0


def mmd(x, y, gamma):
    """Biased (V-statistic) squared MMD under a Gaussian kernel.

    ``gamma`` may be a scalar bandwidth or a sequence; a sequence means the
    unweighted-average mixture kernel, equivalently the average of the
    per-bandwidth V-statistics.
    """
    gammas = np.atleast_1d(np.asarray(gamma, dtype=float))
    if gammas.ndim != 1 or gammas.size == 0:
        raise ValueError("gamma must be a scalar or a non-empty sequence")
    sq_xx = cost_matrix(x, x)
    sq_yy = cost_matrix(y, y)
    sq_xy = cost_matrix(x, y)
    total = 0.0
    for g in gammas:
        if g <= 0 or not np.isfinite(g):
            raise ValueError(f"gamma must be positive, got {g!r}")
        total += (
            np.exp(-g * sq_xx).mean()
            + np.exp(-g * sq_yy).mean()
            - 2.0 * np.exp(-g * sq_xy).mean()
        )
    return float(total / gammas.size)


class MetricReport:
    """All batch-comparison metrics plus the kernel parameters used."""

    def __init__(self, w1, w2_squared, mmd_gaussian_raw, mmd_mixture_raw, gamma, mixture_gammas, n_x, n_y):
        self.w1 = w1
        self.w2_squared = w2_squared
        self.mmd_gaussian_raw = mmd_gaussian_raw
        self.mmd_mixture_raw = mmd_mixture_raw
        # V-statistics are >= 0 up to roundoff; report clamped, keep raw
        self.mmd_gaussian = max(mmd_gaussian_raw, 0.0)
        self.mmd_mixture = max(mmd_mixture_raw, 0.0)
        self.gamma = gamma
        self.mixture_gammas = tuple(mixture_gammas)
        self.n_x = n_x
        self.n_y = n_y

    def to_dict(self):
        return {
            "w1": self.w1,
            "w2_squared": self.w2_squared,
            "mmd_gaussian": self.mmd_gaussian,
            "mmd_mixture": self.mmd_mixture,
            "mmd_gaussian_raw": self.mmd_gaussian_raw,
            "mmd_mixture_raw": self.mmd_mixture_raw,
            "gamma": self.gamma,
            "mixture_gammas": list(self.mixture_gammas),
            "n_x": self.n_x,
            "n_y": self.n_y,
        }


def evaluate_batches(x, y, gamma=None, mixture_scales=DEFAULT_GAMMA_SCALES):
    """Compute every supported metric between two batches in one report.

    ``gamma=None`` selects the median-heuristic bandwidth from the pooled
    sample; the mixture kernel scales that bandwidth by ``mixture_scales``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if gamma is None:
        gamma = median_heuristic_gamma(x, y)
    mixture = tuple(float(s) * gamma for s in mixture_scales)
    return MetricReport(
        w1=wasserstein(x, y, p=1),
        w2_squared=wasserstein(x, y, p=2),
        mmd_gaussian_raw=mmd(x, y, gamma),
        mmd_mixture_raw=mmd(x, y, mixture),
        gamma=float(gamma),
        mixture_gammas=mixture,
        n_x=len(x),
        n_y=len(y),
    )
