"""Stochastic flow matching across snapshot marginals at irregular times.

The package learns continuous dynamics from unpaired samples observed at a
handful of time points: consecutive snapshots are aligned with exact
optimal-transport plans chained Markov-style, per-sample spline paths give
closed-form regression targets for a drift and a score network, and the
fitted pair integrates as an SDE (or its deterministic flow) to reconstruct
held-out marginals.

Most workflows go through :class:`SnapshotFlowMatcher` or the ``snapflow``
command-line tool; the submodules expose the pieces (splines, transport,
probability paths, networks, training, simulation, metrics, datasets)
individually.
"""

from .datasets import (
    GaussianSequenceSpec,
    MarginalDataset,
    TimeGrid,
    builtin_grid,
    gen_gaussian_sequence,
    load_grid,
    load_marginals,
    load_points,
    save_grid,
    save_marginals,
    save_points,
)
from .estimator import SnapshotFlowMatcher
from .exceptions import (
    CheckpointFormatError,
    CheckpointVersionError,
    DegeneratePlanError,
    IntegrationDivergedError,
    MarginalParseError,
    SingularVarianceError,
    SnapflowError,
    TrainingDivergedError,
)
from .integrate import (
    SdeSpec,
    Trajectory,
    integrate_ode,
    integrate_sde,
    read_trajectory_csv,
    write_trajectory_csv,
)
from .metrics import (
    MetricReport,
    evaluate_batches,
    median_heuristic_gamma,
    mmd,
    wasserstein,
)
from .network import AdamW, Mlp, load_checkpoint, save_checkpoint
from .paths import GaussianPath, SigmaSchedule, conditional_flow, conditional_score
from .splines import PiecewiseCubic, fit_monotone_hermite, fit_natural_cubic
from .training import stratified_times, train, window_loss
from .transport import (
    CouplingPlan,
    conditional_plan,
    cost_matrix,
    exact_plan,
    sample_aligned_window,
)

__version__ = "0.1.0"

__all__ = [
    "AdamW",
    "CheckpointFormatError",
    "CheckpointVersionError",
    "CouplingPlan",
    "DegeneratePlanError",
    "GaussianPath",
    "GaussianSequenceSpec",
    "IntegrationDivergedError",
    "MarginalDataset",
    "MarginalParseError",
    "MetricReport",
    "Mlp",
    "PiecewiseCubic",
    "SdeSpec",
    "SigmaSchedule",
    "SingularVarianceError",
    "SnapflowError",
    "SnapshotFlowMatcher",
    "TimeGrid",
    "Trajectory",
    "TrainingDivergedError",
    "builtin_grid",
    "conditional_flow",
    "conditional_plan",
    "conditional_score",
    "cost_matrix",
    "evaluate_batches",
    "exact_plan",
    "fit_monotone_hermite",
    "fit_natural_cubic",
    "gen_gaussian_sequence",
    "integrate_ode",
    "integrate_sde",
    "load_checkpoint",
    "load_grid",
    "load_marginals",
    "load_points",
    "median_heuristic_gamma",
    "mmd",
    "read_trajectory_csv",
    "save_checkpoint",
    "save_grid",
    "save_marginals",
    "save_points",
    "stratified_times",
    "train",
    "wasserstein",
    "window_loss",
    "write_trajectory_csv",
]
