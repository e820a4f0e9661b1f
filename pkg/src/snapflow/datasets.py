"""Synthetic snapshot datasets and the on-disk marginal format.

A snapshot dataset is a list of per-time sample batches ("marginals") tied
to a normalised time grid on [0, 1]. The canonical CSV layout is one row per
sample with columns ``t,x_0,...,x_{d-1}``; times are written in a canonical
decimal form (at most 6 fractional digits, no trailing zeros) and data
values use shortest-repr floats, so save/load round-trips are byte-exact.
"""

import csv
import json
from dataclasses import dataclass

import numpy as np

from .exceptions import MarginalParseError


def format_time(t):
    """Canonical decimal form of a grid time: '0', '0.17', '0.166667'."""
    if not np.isfinite(t) or t < 0:
        raise ValueError(f"cannot format time {t!r}")
    return f"{float(t):.6f}".rstrip("0").rstrip(".")


class TimeGrid:
    """Strictly increasing snapshot times spanning exactly [0, 1]."""

    def __init__(self, times, name=None):
        times = np.asarray(times, dtype=float)
        if times.ndim != 1 or times.size < 2:
            raise ValueError("a grid needs at least 2 times")
        if not np.all(np.isfinite(times)):
            raise ValueError("grid times must be finite")
        if times[0] != 0.0 or times[-1] != 1.0:
            raise ValueError("grid must start at 0 and end at 1")
        if np.any(np.diff(times) <= 0):
            raise ValueError("grid times must be strictly increasing")
        labels = [format_time(t) for t in times]
        if len(set(labels)) != times.size:
            raise ValueError("grid times collide in canonical 6-digit form")
        self.times = times
        self.labels = labels
        self.name = name

    @classmethod
    def uniform(cls, n_times):
        if n_times < 2:
            raise ValueError("need at least 2 times")
        return cls(np.linspace(0.0, 1.0, n_times), name=f"uniform{n_times}")

    @property
    def n_intervals(self):
        return self.times.size - 1

    def __len__(self):
        return self.times.size

    def index_of(self, t):
        """Grid index whose canonical label matches ``t``; raises if none."""
        label = t if isinstance(t, str) else format_time(t)
        try:
            return self.labels.index(label)
        except ValueError:
            raise ValueError(f"time {label!r} is not on the grid {self.labels}") from None


BUILTIN_GRIDS = {
    "T1": (0.0, 0.17, 0.33, 0.5, 0.67, 0.83, 1.0),
    "T2": (0.0, 0.08, 0.38, 0.42, 0.54, 0.85, 1.0),
    "T3": (0.0, 0.2, 0.27, 0.3, 0.88, 0.98, 1.0),
}


def builtin_grid(name):
    if name not in BUILTIN_GRIDS:
        raise ValueError(f"unknown grid {name!r}; choose from {sorted(BUILTIN_GRIDS)}")
    return TimeGrid(BUILTIN_GRIDS[name], name=name)


# seven 2-d cluster centres each; the S track bends twice, the alpha track
# crosses itself exactly once (between the first and last segments)
S_SHAPE_MEANS = np.array(
    [[0.0, 0.0], [5.0, 5.0], [10.0, 7.0], [15.0, 0.0], [20.0, -7.0], [25.0, -5.0], [30.0, 0.0]]
)
ALPHA_SHAPE_MEANS = np.array(
    [[16.0, 14.0], [6.0, 4.0], [0.0, 6.0], [2.0, 12.0], [8.0, 14.0], [11.0, 11.0], [16.0, 2.0]]
)

MEAN_SEQUENCES = {"s-shape": S_SHAPE_MEANS, "alpha-shape": ALPHA_SHAPE_MEANS}


@dataclass
class GaussianSequenceSpec:
    """Recipe for a sequence of isotropic Gaussian snapshots."""

    means: np.ndarray
    std: float = 1.0
    n_samples: int = 200
    seed: int = 0
    n_initial: int | None = None


class MarginalDataset:
    """Per-time sample batches aligned with a time grid."""

    def __init__(self, marginals, grid):
        marginals = [np.asarray(m, dtype=float) for m in marginals]
        if len(marginals) != len(grid):
            raise ValueError(
                f"got {len(marginals)} marginals for a grid of {len(grid)} times"
            )
        dims = {m.shape[1] for m in marginals if m.size}
        if len(dims) > 1:
            raise ValueError(f"marginals disagree on dimension: {sorted(dims)}")
        for i, m in enumerate(marginals):
            if m.ndim != 2:
                raise ValueError(f"marginal {i} must be 2-d, got shape {m.shape}")
            if not np.all(np.isfinite(m)):
                raise ValueError(f"marginal {i} has non-finite values")
        self.marginals = marginals
        self.grid = grid

    @property
    def n_dims(self):
        for m in self.marginals:
            if m.size:
                return m.shape[1]
        raise ValueError("dataset is empty")

    @property
    def sizes(self):
        return [len(m) for m in self.marginals]

    def to_long(self):
        """Flatten to (X, t) rows, grouped by grid time in grid order."""
        X = np.concatenate([m for m in self.marginals])
        t = np.concatenate(
            [np.full(len(m), ti) for m, ti in zip(self.marginals, self.grid.times)]
        )
        return X, t

    @classmethod
    def from_long(cls, X, t, grid=None):
        """Group long-format rows by time; the grid defaults to the sorted
        unique times found in ``t``."""
        X = np.asarray(X, dtype=float)
        t = np.asarray(t, dtype=float)
        if X.ndim != 2 or t.ndim != 1 or len(X) != len(t):
            raise ValueError("X must be (n, d) and t (n,) of matching length")
        if grid is None:
            grid = TimeGrid(np.unique(t))
        buckets = {label: [] for label in grid.labels}
        for i, ti in enumerate(t):
            label = format_time(ti)
            if label not in buckets:
                raise ValueError(f"row {i} has time {label!r} not on the grid")
            buckets[label].append(X[i])
        marginals = [
            np.asarray(buckets[label], dtype=float).reshape(len(buckets[label]), X.shape[1])
            for label in grid.labels
        ]
        return cls(marginals, grid)


def gen_gaussian_sequence(spec, grid):
    """Draw the snapshot sequence plus an initial-time held-out pool.

    Marginal ``i`` is N(means[i], std^2 I) with ``n_samples`` points. The
    pool is drawn at the first grid time from an independent child stream of
    the same seed, so it never overlaps the training draws.
    """
    means = np.asarray(spec.means, dtype=float)
    if means.ndim != 2 or means.shape[0] != len(grid):
        raise ValueError(
            f"means must have shape ({len(grid)}, d), got {means.shape}"
        )
    if not np.all(np.isfinite(means)):
        raise ValueError("means must be finite")
    if spec.std < 0 or not np.isfinite(spec.std):
        raise ValueError(f"std must be >= 0, got {spec.std!r}")
    if spec.n_samples < 0:
        raise ValueError("n_samples must be >= 0")
    n_initial = spec.n_samples if spec.n_initial is None else spec.n_initial
    if n_initial < 0:
        raise ValueError("n_initial must be >= 0")

    seq_train, seq_pool = np.random.SeedSequence(spec.seed).spawn(2)
    rng = np.random.default_rng(seq_train)
    d = means.shape[1]
    marginals = [
        mean + spec.std * rng.standard_normal((spec.n_samples, d)) for mean in means
    ]
    pool_rng = np.random.default_rng(seq_pool)
    pool = means[0] + spec.std * pool_rng.standard_normal((n_initial, d))
    return MarginalDataset(marginals, grid), pool


def save_marginals(path, dataset):
    d = dataset.n_dims
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t"] + [f"x_{j}" for j in range(d)])
        for label, m in zip(dataset.grid.labels, dataset.marginals):
            for row in m:
                writer.writerow([label] + [repr(float(v)) for v in row])


def load_marginals(path, grid):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MarginalParseError("file is empty", line=1) from None
        d = len(header) - 1
        if d < 1 or header != ["t"] + [f"x_{j}" for j in range(d)]:
            raise MarginalParseError(f"unexpected header {header!r}", line=1)
        buckets = {label: [] for label in grid.labels}
        n_rows = 0
        for lineno, row in enumerate(reader, start=2):
            if len(row) != d + 1:
                raise MarginalParseError(
                    f"expected {d + 1} fields, got {len(row)}", line=lineno
                )
            if row[0] not in buckets:
                raise MarginalParseError(
                    f"time {row[0]!r} is not on the grid", line=lineno
                )
            try:
                vals = [float(v) for v in row[1:]]
            except ValueError:
                raise MarginalParseError(f"bad value in {row[1:]!r}", line=lineno) from None
            if not all(np.isfinite(v) for v in vals):
                raise MarginalParseError("non-finite value", line=lineno)
            buckets[row[0]].append(vals)
            n_rows += 1
    if n_rows == 0:
        raise MarginalParseError("no data rows")
    marginals = [
        np.asarray(buckets[label], dtype=float).reshape(len(buckets[label]), d)
        for label in grid.labels
    ]
    return MarginalDataset(marginals, grid)


def save_points(path, points):
    points = np.asarray(points, dtype=float)
    if points.ndim != 2:
        raise ValueError(f"points must be 2-d, got shape {points.shape}")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"x_{j}" for j in range(points.shape[1])])
        for row in points:
            writer.writerow([repr(float(v)) for v in row])


def load_points(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MarginalParseError("file is empty", line=1) from None
        d = len(header)
        if d < 1 or header != [f"x_{j}" for j in range(d)]:
            raise MarginalParseError(f"unexpected header {header!r}", line=1)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != d:
                raise MarginalParseError(f"expected {d} fields, got {len(row)}", line=lineno)
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise MarginalParseError(f"bad value in {row!r}", line=lineno) from None
    if not rows:
        raise MarginalParseError("no data rows")
    return np.asarray(rows, dtype=float)


def save_grid(path, grid):
    with open(path, "w") as fh:
        json.dump({"name": grid.name, "times": [float(t) for t in grid.times]}, fh)


def load_grid(path):
    with open(path) as fh:
        payload = json.load(fh)
    if not isinstance(payload, dict) or "times" not in payload:
        raise ValueError("grid file must be a JSON object with a 'times' field")
    return TimeGrid(payload["times"], name=payload.get("name"))
