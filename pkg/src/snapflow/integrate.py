"""Time-grid integrators for the learned dynamics plus trajectory I/O.

``integrate_sde`` is Euler-Maruyama with constant diffusion; with ``sigma=0``
it reduces exactly to the Euler method on the drift ODE. ``integrate_ode``
is classic RK4 for deterministic probes of the flow field alone.
"""

import csv

import numpy as np

from .exceptions import IntegrationDivergedError


class SdeSpec:
    """Learned dynamics dX = u dt + sigma dW.

    The drift is ``flow + score`` when the score field is trained against the
    pre-scaled residual (``score_is_scaled``), else ``flow + sigma^2/2 *
    score``. ``score=None`` drops the correction entirely.
    """

    def __init__(self, flow, score=None, sigma=0.0, score_is_scaled=True):
        if sigma < 0 or not np.isfinite(sigma):
            raise ValueError(f"sigma must be >= 0, got {sigma!r}")
        self.flow = flow
        self.score = score
        self.sigma = float(sigma)
        self.score_is_scaled = bool(score_is_scaled)

    def drift(self, x, t):
        u = np.asarray(self.flow(x, t), dtype=float)
        if self.score is not None:
            s = np.asarray(self.score(x, t), dtype=float)
            u = u + (s if self.score_is_scaled else 0.5 * self.sigma**2 * s)
        return u


class Trajectory:
    """States of ``n_particles`` particles sampled on a shared time grid."""

    def __init__(self, times, states):
        times = np.asarray(times, dtype=float)
        states = np.asarray(states, dtype=float)
        if times.ndim != 1 or times.size < 1:
            raise ValueError("times must be a non-empty 1-d array")
        if np.any(np.diff(times) <= 0):
            raise ValueError("times must be strictly increasing")
        if states.ndim != 3 or states.shape[1] != times.size:
            raise ValueError(
                f"states must have shape (n_particles, {times.size}, d), got {states.shape}"
            )
        self.times = times
        self.states = states

    @property
    def n_particles(self):
        return self.states.shape[0]

    @property
    def n_dims(self):
        return self.states.shape[2]

    def at_time(self, t):
        """States at the grid point nearest to ``t`` (and that grid time)."""
        t = float(t)
        if t < self.times[0] or t > self.times[-1]:
            raise ValueError(
                f"time {t} outside trajectory range [{self.times[0]}, {self.times[-1]}]"
            )
        idx = int(np.argmin(np.abs(self.times - t)))
        return self.states[:, idx], self.times[idx]


def _check_integration_args(x0, t_grid):
    x0 = np.asarray(x0, dtype=float)
    t_grid = np.asarray(t_grid, dtype=float)
    if x0.ndim != 2 or x0.shape[0] < 1:
        raise ValueError(f"x0 must be a non-empty (n, d) array, got shape {x0.shape}")
    if not np.all(np.isfinite(x0)):
        raise ValueError("x0 must be finite")
    if t_grid.ndim != 1 or t_grid.size < 2:
        raise ValueError("t_grid must contain at least 2 times")
    if np.any(np.diff(t_grid) <= 0):
        raise ValueError("t_grid must be strictly increasing")
    return x0, t_grid


def integrate_sde(spec, x0, t_grid, rng=None):
    """Euler-Maruyama on the drift of ``spec`` with diffusion ``spec.sigma``."""
    x0, t_grid = _check_integration_args(x0, t_grid)
    if spec.sigma > 0 and rng is None:
        raise ValueError("rng is required when sigma > 0")
    n, d = x0.shape
    states = np.empty((n, t_grid.size, d))
    states[:, 0] = x = x0
    for k in range(t_grid.size - 1):
        dt = t_grid[k + 1] - t_grid[k]
        x = x + spec.drift(x, t_grid[k]) * dt
        if spec.sigma > 0:
            x = x + spec.sigma * np.sqrt(dt) * rng.standard_normal((n, d))
        if not np.all(np.isfinite(x)):
            raise IntegrationDivergedError(k + 1)
        states[:, k + 1] = x
    return Trajectory(t_grid, states)


def integrate_ode(flow, x0, t_grid):
    """RK4 on dx/dt = flow(x, t) over the given grid."""
    x0, t_grid = _check_integration_args(x0, t_grid)
    states = np.empty((x0.shape[0], t_grid.size, x0.shape[1]))
    states[:, 0] = x = x0
    for k in range(t_grid.size - 1):
        t = t_grid[k]
        h = t_grid[k + 1] - t
        k1 = np.asarray(flow(x, t), dtype=float)
        k2 = np.asarray(flow(x + 0.5 * h * k1, t + 0.5 * h), dtype=float)
        k3 = np.asarray(flow(x + 0.5 * h * k2, t + 0.5 * h), dtype=float)
        k4 = np.asarray(flow(x + h * k3, t + h), dtype=float)
        x = x + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
        if not np.all(np.isfinite(x)):
            raise IntegrationDivergedError(k + 1)
        states[:, k + 1] = x
    return Trajectory(t_grid, states)


def write_trajectory_csv(path, traj):
    """Particle-major CSV: ``particle_id,t,x_0,...,x_{d-1}``; floats use repr."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["particle_id", "t"] + [f"x_{j}" for j in range(traj.n_dims)])
        for i in range(traj.n_particles):
            for k, t in enumerate(traj.times):
                writer.writerow([i, repr(float(t))] + [repr(float(v)) for v in traj.states[i, k]])


def read_trajectory_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError("trajectory file is empty") from None
        d = len(header) - 2
        if d < 1 or header[:2] != ["particle_id", "t"] or header[2:] != [f"x_{j}" for j in range(d)]:
            raise ValueError(f"unexpected trajectory header {header!r}")
        rows = {}
        for lineno, row in enumerate(reader, start=2):
            if len(row) != d + 2:
                raise ValueError(f"line {lineno}: expected {d + 2} fields, got {len(row)}")
            try:
                pid = int(row[0])
                vals = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise ValueError(f"line {lineno}: {exc}") from None
            rows.setdefault(pid, []).append(vals)
    if not rows:
        raise ValueError("trajectory file has no data rows")
    pids = sorted(rows)
    if pids != list(range(len(pids))):
        raise ValueError("particle ids must be 0..n-1")
    blocks = [np.asarray(rows[p]) for p in pids]
    times = blocks[0][:, 0]
    for p, blk in enumerate(blocks):
        if blk.shape != blocks[0].shape or not np.array_equal(blk[:, 0], times):
            raise ValueError(f"particle {p} disagrees with the shared time grid")
    return Trajectory(times, np.stack([blk[:, 1:] for blk in blocks]))
