"""Gaussian probability paths around spline means.

A conditional path is N(mu_t, sigma_t^2 I) where mu_t interpolates aligned
snapshot points and sigma_t is a Brownian-bridge-shaped schedule that pinches
to (almost) zero at the path's endpoints. Both regression targets are closed
form:

* flow target   (sigma_t' / sigma_t) (x - mu_t) + mu_t'
* score target  (mu_t - x) / sigma_t^2

Schedules come in two modes. ``global`` shapes the bridge over [0, 1];
``window`` rescales it to one training window [a, b] so every window pinches
at its own ends. A small floor keeps sigma_t positive at the pinch points;
where the floor binds, the reported derivative is zero.
"""

import numpy as np

from .exceptions import SingularVarianceError

DEFAULT_SIGMA_FLOOR = 1e-4


class SigmaSchedule:
    """Bridge-shaped noise scale sigma_t with its time derivative.

    :param sigma: overall noise level (also the constant SDE diffusion g).
    :param mode: ``"window"`` (default) or ``"global"``.
    :param window: (a, b) time window; required when ``mode="window"``.
    :param sigma_min: floor applied to sigma_t; 0 disables the floor.
    """

    def __init__(self, sigma, mode="window", window=None, sigma_min=DEFAULT_SIGMA_FLOOR):
        if not np.isfinite(sigma) or sigma <= 0:
            raise ValueError(f"sigma must be positive, got {sigma!r}")
        if mode not in ("window", "global"):
            raise ValueError(f"mode must be 'window' or 'global', got {mode!r}")
        if sigma_min < 0 or not np.isfinite(sigma_min):
            raise ValueError(f"sigma_min must be >= 0, got {sigma_min!r}")
        if mode == "window":
            if window is None:
                raise ValueError("window mode requires a (start, end) window")
            a, b = float(window[0]), float(window[1])
            if not a < b:
                raise ValueError(f"window start must precede end, got ({a}, {b})")
            self.window = (a, b)
        else:
            if window is not None:
                raise ValueError("window is only meaningful in window mode")
            self.window = (0.0, 1.0)
        self.sigma = float(sigma)
        self.mode = mode
        self.sigma_min = float(sigma_min)

    def __call__(self, t):
        """Return ``(sigma_t, dsigma_t)`` with the floor applied."""
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        a, b = self.window
        if t_arr.size and (t_arr.min() < a or t_arr.max() > b):
            raise ValueError(f"time outside schedule domain [{a}, {b}]")
        span = b - a
        r = (t_arr - a) / span
        pinch = r * (1.0 - r)
        raw = self.sigma * np.sqrt(pinch)
        with np.errstate(divide="ignore", invalid="ignore"):
            drv = self.sigma * (1.0 - 2.0 * r) / (2.0 * np.sqrt(pinch) * span)
        floored = raw <= self.sigma_min
        value = np.where(floored, self.sigma_min, raw)
        drv = np.where(floored, 0.0, drv)
        if np.ndim(t) == 0:
            return float(value[0]), float(drv[0])
        return value, drv

    def lambda_weight(self, t):
        """Score-loss weight 2 sigma_t / g^2 for constant diffusion g = sigma."""
        value, _ = self(t)
        return 2.0 * value / self.sigma**2


def _broadcast_sigma(sigma_t, x):
    s = np.asarray(sigma_t, dtype=float)
    if s.ndim == 0:
        return s
    return s[:, None] if np.ndim(x) == 2 else s


def conditional_flow(x, mean, mean_rate, sigma_t, dsigma_t):
    """Flow regression target of the Gaussian path at state ``x``."""
    s = _broadcast_sigma(sigma_t, x)
    if np.any(np.asarray(sigma_t) <= 0.0):
        raise SingularVarianceError("flow target undefined at sigma_t = 0")
    ds = _broadcast_sigma(dsigma_t, x)
    return (ds / s) * (np.asarray(x) - np.asarray(mean)) + np.asarray(mean_rate)


def conditional_score(x, mean, sigma_t):
    """Score of N(mean, sigma_t^2 I) at ``x``."""
    s = _broadcast_sigma(sigma_t, x)
    if np.any(np.asarray(sigma_t) <= 0.0):
        raise SingularVarianceError("score undefined at sigma_t = 0")
    return (np.asarray(mean) - np.asarray(x)) / s**2


class GaussianPath:
    """Spline-mean Gaussian path: sampling plus both regression targets."""

    def __init__(self, mean, schedule):
        self.mean = mean
        self.schedule = schedule

    def mean_at(self, t):
        return self.mean(t), self.mean.derivative(t)

    def sample(self, t, eps):
        mu = self.mean(t)
        sigma_t, _ = self.schedule(t)
        return mu + _broadcast_sigma(sigma_t, mu) * np.asarray(eps)

    def flow_target(self, t, x):
        mu, dmu = self.mean_at(t)
        sigma_t, dsigma_t = self.schedule(t)
        return conditional_flow(x, mu, dmu, sigma_t, dsigma_t)

    def score_target(self, t, x):
        mu = self.mean(t)
        sigma_t, _ = self.schedule(t)
        return conditional_score(x, mu, sigma_t)
