"""Scikit-learn style front end over training and simulation.

``SnapshotFlowMatcher`` consumes long-format snapshot data: a state matrix
``X`` whose rows carry a time label each, with times normalized to [0, 1].
Fitting groups the rows into per-time marginals, optionally withholds one
interior marginal, and trains the drift and score fields. The fitted model
pushes initial states forward either deterministically (RK4 on the flow
field alone) or as an SDE ensemble.
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .datasets import MarginalDataset
from .integrate import SdeSpec, integrate_ode, integrate_sde
from .training import train


class SnapshotFlowMatcher(BaseEstimator):
    """Learn continuous stochastic dynamics from unpaired snapshots.

    Parameters
    ----------
    window_size : int, default=2
        Number of consecutive intervals each training window spans. 1 trains
        on marginal pairs, 2 on triplets, and so on.
    sigma : float, default=0.15
        Diffusion level; also sets the bridge noise scale during training.
    batch_size : int, default=120
        Minibatch size per window visit. Must be divisible by window_size.
    n_steps : int, default=2500
        Total number of gradient steps. Windows are visited round-robin, one
        optimizer update per visit.
    learning_rate : float, default=1e-4
        AdamW step size for both networks.
    weight_decay : float, default=1e-2
        AdamW decoupled weight decay.
    schedule : {"window", "global"}, default="window"
        Bridge-variance profile: renormalized per window or on global time.
    spline : {"hermite", "natural"}, default="hermite"
        Interpolant family for the conditional mean path.
    hidden_sizes : tuple of int, default=(64, 64)
        Hidden-layer widths shared by the flow and score networks.
    sigma_min : float or None, default=None
        Floor on the bridge standard deviation; None keeps the library
        default, 0 disables the floor.
    hold_out : int or None, default=None
        Index of one interior marginal to exclude from training.
    random_state : int, sequence of int, or None, default=None
        Seed for network init, batching, alignment, and noise draws.

    Attributes
    ----------
    flow_net_ : Mlp
        Trained velocity field v(x, t).
    score_net_ : Mlp
        Trained scaled score field; ``flow_net_ + score_net_`` is the SDE
        drift.
    loss_history_ : ndarray of shape (n_steps, 4)
        Rows (step, window index, flow loss, score loss).
    grid_ : TimeGrid
        Full grid recovered from the fitted time labels, hold-out included.
    train_times_ : ndarray
        Times actually trained on (hold-out removed).
    hold_out_time_ : float or None
        Grid time of the withheld marginal.
    n_features_in_ : int
        State dimension d.
    """

    def __init__(self, window_size=2, sigma=0.15, batch_size=120, n_steps=2500,
                 learning_rate=1e-4, weight_decay=1e-2, schedule="window",
                 spline="hermite", hidden_sizes=(64, 64), sigma_min=None,
                 hold_out=None, random_state=None):
        self.window_size = window_size
        self.sigma = sigma
        self.batch_size = batch_size
        self.n_steps = n_steps
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.schedule = schedule
        self.spline = spline
        self.hidden_sizes = hidden_sizes
        self.sigma_min = sigma_min
        self.hold_out = hold_out
        self.random_state = random_state

    def fit(self, X, t):
        """Group rows of ``X`` by their time labels ``t`` and train.

        Every distinct value in ``t`` becomes one marginal; the distinct
        times must start at 0 and end at 1.
        """
        dataset = MarginalDataset.from_long(X, t)
        times = dataset.grid.times
        marginals = dataset.marginals
        if self.hold_out is not None:
            idx = int(self.hold_out)
            if not 1 <= idx <= len(times) - 2:
                raise ValueError(
                    f"hold_out must be an interior index in [1, {len(times) - 2}], "
                    f"got {self.hold_out!r}"
                )
            self.hold_out_time_ = float(times[idx])
            marginals = [m for j, m in enumerate(marginals) if j != idx]
            times = np.delete(times, idx)
        else:
            self.hold_out_time_ = None
        rng = np.random.default_rng(self.random_state)
        self.flow_net_, self.score_net_, self.loss_history_ = train(
            marginals,
            times,
            window_size=self.window_size,
            sigma=self.sigma,
            batch_size=self.batch_size,
            n_steps=self.n_steps,
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
            schedule=self.schedule,
            spline=self.spline,
            hidden=tuple(self.hidden_sizes),
            sigma_min=self.sigma_min,
            rng=rng,
        )
        self.grid_ = dataset.grid
        self.train_times_ = times
        self.n_features_in_ = dataset.n_dims
        return self

    def drift(self, X, t):
        """SDE drift u(X, t) = flow + scaled score at one time ``t``."""
        check_is_fitted(self, "flow_net_")
        X = self._check_states(X)
        return self.flow_net_(X, t) + self.score_net_(X, t)

    def predict(self, X, t=1.0):
        """Deterministic terminal states: integrate the flow field to ``t``.

        Uses RK4 on the velocity field alone, which transports points along
        the learned mean dynamics with no diffusion.
        """
        check_is_fitted(self, "flow_net_")
        X = self._check_states(X)
        t = float(t)
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"t must lie in [0, 1], got {t!r}")
        if t == 0.0:
            return X.copy()
        grid = np.linspace(0.0, t, max(1, int(round(100 * t))) + 1)
        return integrate_ode(self.flow_net_, X, grid).states[:, -1]

    def sample_trajectories(self, X0, *, steps_per_unit=100, sigma=None,
                            deterministic=False, random_state=None):
        """Push initial states across [0, 1]; returns a ``Trajectory``.

        ``sigma=None`` reuses the training diffusion. ``deterministic``
        switches to the RK4 flow-only ODE and ignores the noise entirely;
        ``sigma=0`` keeps the Euler-Maruyama stepper with the drift's score
        correction but no injected noise.
        """
        check_is_fitted(self, "flow_net_")
        X0 = self._check_states(X0)
        if steps_per_unit < 1:
            raise ValueError(f"steps_per_unit must be >= 1, got {steps_per_unit!r}")
        grid = np.linspace(0.0, 1.0, int(steps_per_unit) + 1)
        if deterministic:
            return integrate_ode(self.flow_net_, X0, grid)
        sigma = self.sigma if sigma is None else float(sigma)
        spec = SdeSpec(self.flow_net_, self.score_net_, sigma=sigma)
        rng = np.random.default_rng(random_state) if sigma > 0 else None
        return integrate_sde(spec, X0, grid, rng=rng)

    def _check_states(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"expected states of shape (n, {self.n_features_in_}), got {X.shape}"
            )
        return X
