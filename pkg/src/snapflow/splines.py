"""Vector-valued piecewise-cubic interpolation over irregular knots.

Two fitters share one evaluation container:

* ``fit_monotone_hermite`` -- C1 shape-preserving cubic Hermite with weighted
  harmonic-mean tangents; never overshoots the data on any interval.
* ``fit_natural_cubic`` -- C2 natural cubic (zero second derivative at both
  ends); smoother but free to overshoot.

Each dimension of the knot values is interpolated independently, so a fit
through ``(n_knots, d)`` values is d scalar splines sharing one knot vector.
"""

import numpy as np

MIN_KNOT_GAP = 1e-9


def _check_knots(times, values):
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    if t.ndim != 1:
        raise ValueError(f"knot times must be 1-d, got shape {t.shape}")
    if t.size < 2:
        raise ValueError("need at least 2 knots")
    if not np.all(np.isfinite(t)):
        raise ValueError("knot times must be finite")
    gaps = np.diff(t)
    if np.any(gaps < MIN_KNOT_GAP):
        raise ValueError(
            f"knot times must be strictly increasing with gaps >= {MIN_KNOT_GAP}"
        )
    if y.ndim == 1:
        y = y[:, None]
    if y.ndim != 2:
        raise ValueError(f"knot values must be 1-d or 2-d, got shape {np.shape(values)}")
    if y.shape[0] != t.size:
        raise ValueError(
            f"got {t.size} knot times but {y.shape[0]} value rows"
        )
    if not np.all(np.isfinite(y)):
        raise ValueError("knot values must be finite")
    return t, y


class PiecewiseCubic:
    """Piecewise cubic curve on ``[times[0], times[-1]]``; no extrapolation.

    ``coeffs`` has shape ``(n_intervals, d, 4)``; row ``(i, j)`` holds
    ``(a, b, c, d)`` of the local cubic
    ``a*(t - t_i)**3 + b*(t - t_i)**2 + c*(t - t_i) + d``.
    """

    def __init__(self, times, values, coeffs):
        self.times = times
        self.values = values
        self.coeffs = coeffs

    @property
    def n_dims(self):
        return self.values.shape[1]

    @property
    def n_intervals(self):
        return self.times.size - 1

    def _locate(self, t):
        tq = np.atleast_1d(np.asarray(t, dtype=float))
        if tq.ndim != 1:
            raise ValueError(f"query times must be scalar or 1-d, got shape {tq.shape}")
        if tq.size and (tq.min() < self.times[0] or tq.max() > self.times[-1]):
            raise ValueError(
                f"query time outside knot range [{self.times[0]}, {self.times[-1]}]"
            )
        idx = np.searchsorted(self.times, tq, side="right") - 1
        np.clip(idx, 0, self.n_intervals - 1, out=idx)
        tau = tq - self.times[idx]
        return idx, tau

    def __call__(self, t):
        idx, tau = self._locate(t)
        a, b, c, d = np.moveaxis(self.coeffs[idx], -1, 0)
        out = ((a * tau[:, None] + b) * tau[:, None] + c) * tau[:, None] + d
        return out[0] if np.ndim(t) == 0 else out

    def derivative(self, t):
        idx, tau = self._locate(t)
        a, b, c, _ = np.moveaxis(self.coeffs[idx], -1, 0)
        out = (3.0 * a * tau[:, None] + 2.0 * b) * tau[:, None] + c
        return out[0] if np.ndim(t) == 0 else out


def _hermite_to_power(times, y, m):
    # local cubic from endpoint values/tangents of each interval
    h = np.diff(times)[:, None]
    delta = np.diff(y, axis=0) / h
    m0, m1 = m[:-1], m[1:]
    a = (m0 + m1 - 2.0 * delta) / h**2
    b = (3.0 * delta - 2.0 * m0 - m1) / h
    return np.stack([a, b, m0, y[:-1]], axis=-1)


def fit_monotone_hermite(times, values):
    """Fit a C1 monotonicity-preserving cubic through the knots.

    Interior tangents are the weighted harmonic mean of neighbouring secant
    slopes and are zeroed wherever the secants disagree in sign or vanish,
    which keeps every interval inside the hull of its two endpoint values.
    Endpoint tangents are the one-sided secant slopes.
    """
    t, y = _check_knots(times, values)
    n = t.size
    h = np.diff(t)
    delta = np.diff(y, axis=0) / h[:, None]

    m = np.empty_like(y)
    m[0] = delta[0]
    m[-1] = delta[-1]
    if n > 2:
        d0, d1 = delta[:-1], delta[1:]
        w1 = (2.0 * h[1:] + h[:-1])[:, None]
        w2 = (h[1:] + 2.0 * h[:-1])[:, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            harmonic = (w1 + w2) / (w1 / d0 + w2 / d1)
        m[1:-1] = np.where(d0 * d1 > 0.0, harmonic, 0.0)

    return PiecewiseCubic(t, y, _hermite_to_power(t, y, m))


def fit_natural_cubic(times, values):
    """Fit a C2 cubic with zero second derivative at both boundary knots."""
    t, y = _check_knots(times, values)
    n = t.size
    h = np.diff(t)
    delta = np.diff(y, axis=0) / h[:, None]

    # second-derivative knot values (moments); natural ends are zero
    mom = np.zeros_like(y)
    if n > 2:
        sub = h[:-1]
        diag = 2.0 * (h[:-1] + h[1:])
        sup = h[1:]
        rhs = 6.0 * (delta[1:] - delta[:-1])
        mom[1:-1] = _solve_tridiagonal(sub, diag, sup, rhs)

    hc = h[:, None]
    m0, m1 = mom[:-1], mom[1:]
    a = (m1 - m0) / (6.0 * hc)
    b = m0 / 2.0
    c = delta - hc * (2.0 * m0 + m1) / 6.0
    return PiecewiseCubic(t, y, np.stack([a, b, c, y[:-1]], axis=-1))


def _solve_tridiagonal(sub, diag, sup, rhs):
    # Thomas algorithm; one forward and one backward pass over the knots,
    # vectorised across value dimensions.
    n = diag.size
    cp = np.empty(n)
    dp = np.empty((n, rhs.shape[1]))
    cp[0] = sup[0] / diag[0]
    dp[0] = rhs[0] / diag[0]
    for i in range(1, n):
        denom = diag[i] - sub[i] * cp[i - 1]
        cp[i] = sup[i] / denom
        dp[i] = (rhs[i] - sub[i] * dp[i - 1]) / denom
    x = np.empty_like(dp)
    x[-1] = dp[-1]
    for i in range(n - 2, -1, -1):
        x[i] = dp[i] - cp[i] * x[i + 1]
    return x
