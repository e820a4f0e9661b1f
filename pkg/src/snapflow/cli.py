"""Command-line pipeline: synthesize, train, generate, evaluate, splines.

Each subcommand accepts ``--config FILE`` (JSON); explicit flags override
config values, which override built-in defaults. The resolved settings are
written next to the outputs as ``<command>_config.json`` so every artifact
records how it was produced. Exit codes: 0 success, 2 usage or bad input,
3 diverged, 4 checkpoint version mismatch, 5 evaluation time outside the
trajectory range. ``MMSFM_THREADS`` caps BLAS-level parallelism.
"""

import argparse
import contextlib
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np
import threadpoolctl

from .datasets import (
    BUILTIN_GRIDS,
    GaussianSequenceSpec,
    MEAN_SEQUENCES,
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
    IntegrationDivergedError,
    MarginalParseError,
    TrainingDivergedError,
)
from .integrate import read_trajectory_csv, write_trajectory_csv
from .metrics import evaluate_batches
from .network import load_checkpoint, save_checkpoint
from .splines import fit_monotone_hermite, fit_natural_cubic

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DIVERGED = 3
EXIT_CHECKPOINT = 4
EXIT_EVAL_RANGE = 5


class UsageError(Exception):
    """Bad flags, names, or input files; reported on stderr, exit 2."""


DEFAULTS = {
    "synth": {
        "dataset": "s-shape",
        "grid": "T1",
        "seed": 0,
        "samples": 200,
        "initial": None,
        "std": 1.0,
        "out": None,
    },
    "train": {
        "marginals": None,
        "grid": None,
        "k": 2,
        "sigma": 0.15,
        "batch_size": 120,
        "steps": 2500,
        "lr": 1e-4,
        "weight_decay": 1e-2,
        "schedule": "window",
        "spline": "hermite",
        "seed": 0,
        "hold_out": None,
        "sigma_min": None,
        "out": None,
    },
    "generate": {
        "model": None,
        "initial": None,
        "steps_per_unit": 100,
        "particles": None,
        "seed": 0,
        "sigma": None,
        "deterministic": False,
        "out": None,
    },
    "evaluate": {
        "trajectories": None,
        "marginals": None,
        "grid": None,
        "time": None,
        "gamma": None,
        "out": None,
    },
    "splines": {
        "points": None,
        "grid": None,
        "k": 2,
        "dense": 200,
        "out": None,
    },
}


def _resolve(args, command):
    """Merge flags over config-file values over defaults for one command."""
    resolved = dict(DEFAULTS[command])
    if args.config is not None:
        try:
            with open(args.config) as fh:
                loaded = json.load(fh)
        except OSError as exc:
            raise UsageError(f"cannot read config file: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(loaded, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = sorted(set(loaded) - set(resolved))
        if unknown:
            raise UsageError(
                f"unknown config keys for {command!r}: {', '.join(unknown)}"
            )
        resolved.update(loaded)
    for key in resolved:
        value = getattr(args, key, None)
        if value is not None:
            resolved[key] = value
    return resolved


def _require(resolved, names):
    for name in names:
        if resolved.get(name) is None:
            raise UsageError(f"--{name.replace('_', '-')} is required")


def _out_dir(resolved):
    _require(resolved, ["out"])
    out = Path(resolved["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_sidecar(out, command, resolved):
    payload = {"command": command}
    payload.update(
        {k: (list(v) if isinstance(v, tuple) else v) for k, v in sorted(resolved.items())}
    )
    with open(out / f"{command}_config.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _grid_from(value):
    """A builtin grid name or a path to a grid JSON file."""
    if value in BUILTIN_GRIDS:
        return builtin_grid(value)
    if os.path.exists(value):
        try:
            return load_grid(value)
        except (ValueError, json.JSONDecodeError) as exc:
            raise UsageError(f"bad grid file {value!r}: {exc}") from exc
    names = ", ".join(sorted(BUILTIN_GRIDS))
    raise UsageError(f"unknown grid {value!r}; builtin grids are {names}")


def cmd_synth(args):
    resolved = _resolve(args, "synth")
    out = _out_dir(resolved)
    name = resolved["dataset"]
    if name not in MEAN_SEQUENCES:
        names = ", ".join(sorted(MEAN_SEQUENCES))
        raise UsageError(f"unknown dataset {name!r}; builtin datasets are {names}")
    if resolved["grid"] not in BUILTIN_GRIDS:
        names = ", ".join(sorted(BUILTIN_GRIDS))
        raise UsageError(f"unknown grid {resolved['grid']!r}; builtin grids are {names}")
    grid = builtin_grid(resolved["grid"])
    spec = GaussianSequenceSpec(
        means=MEAN_SEQUENCES[name],
        std=float(resolved["std"]),
        n_samples=int(resolved["samples"]),
        seed=int(resolved["seed"]),
        n_initial=resolved["initial"],
    )
    dataset, pool = gen_gaussian_sequence(spec, grid)
    save_marginals(out / "marginals.csv", dataset)
    save_grid(out / "grid.json", grid)
    save_points(out / "initial.csv", pool)
    _write_sidecar(out, "synth", resolved)
    return EXIT_OK


def cmd_train(args):
    resolved = _resolve(args, "train")
    _require(resolved, ["marginals", "grid"])
    out = _out_dir(resolved)
    grid = _grid_from(resolved["grid"])
    dataset = load_marginals(resolved["marginals"], grid)
    X, t = dataset.to_long()
    model = SnapshotFlowMatcher(
        window_size=int(resolved["k"]),
        sigma=float(resolved["sigma"]),
        batch_size=int(resolved["batch_size"]),
        n_steps=int(resolved["steps"]),
        learning_rate=float(resolved["lr"]),
        weight_decay=float(resolved["weight_decay"]),
        schedule=resolved["schedule"],
        spline=resolved["spline"],
        sigma_min=resolved["sigma_min"],
        hold_out=resolved["hold_out"],
        random_state=int(resolved["seed"]),
    )
    try:
        model.fit(X, t)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    save_checkpoint(out / "flow.json", model.flow_net_)
    save_checkpoint(out / "score.json", model.score_net_)
    with open(out / "loss.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", "window", "flow_loss", "score_loss"])
        for step, window, flow_loss, score_loss in model.loss_history_:
            writer.writerow(
                [int(step), int(window), repr(float(flow_loss)), repr(float(score_loss))]
            )
    resolved["hold_out_time"] = model.hold_out_time_
    _write_sidecar(out, "train", resolved)
    return EXIT_OK


def _training_sigma(model_dir):
    sidecar = Path(model_dir) / "train_config.json"
    if not sidecar.exists():
        return None
    try:
        with open(sidecar) as fh:
            return float(json.load(fh)["sigma"])
    except (OSError, ValueError, KeyError, json.JSONDecodeError):
        return None


def cmd_generate(args):
    resolved = _resolve(args, "generate")
    _require(resolved, ["model", "initial"])
    out = _out_dir(resolved)
    model_dir = Path(resolved["model"])
    flow_net, _ = load_checkpoint(model_dir / "flow.json")
    score_net, _ = load_checkpoint(model_dir / "score.json")
    pool = load_points(resolved["initial"])
    n = resolved["particles"]
    if n is not None:
        n = int(n)
        if not 1 <= n <= len(pool):
            raise UsageError(
                f"--particles must be in [1, {len(pool)}], got {n}"
            )
        pool = pool[:n]
    sigma = resolved["sigma"]
    if sigma is None:
        sigma = _training_sigma(model_dir)
        if sigma is None:
            raise UsageError(
                "--sigma is required when the model directory has no train_config.json"
            )
    resolved["sigma"] = float(sigma)
    resolved["particles"] = len(pool)

    # Reuse the fitted-model integration paths without refitting.
    model = SnapshotFlowMatcher.__new__(SnapshotFlowMatcher)
    model.flow_net_ = flow_net
    model.score_net_ = score_net
    model.n_features_in_ = flow_net.n_state
    traj = model.sample_trajectories(
        pool,
        steps_per_unit=int(resolved["steps_per_unit"]),
        sigma=float(sigma),
        deterministic=bool(resolved["deterministic"]),
        random_state=int(resolved["seed"]),
    )
    write_trajectory_csv(out / "trajectories.csv", traj)
    _write_sidecar(out, "generate", resolved)
    return EXIT_OK


def cmd_evaluate(args):
    resolved = _resolve(args, "evaluate")
    _require(resolved, ["trajectories", "marginals", "grid", "time"])
    out = _out_dir(resolved)
    grid = _grid_from(resolved["grid"])
    dataset = load_marginals(resolved["marginals"], grid)
    t_eval = float(resolved["time"])
    try:
        idx = grid.index_of(t_eval)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    truth = dataset.marginals[idx]
    if len(truth) == 0:
        raise UsageError(f"marginal file holds no rows at time {t_eval}")
    traj = read_trajectory_csv(resolved["trajectories"])
    if t_eval < traj.times[0] or t_eval > traj.times[-1]:
        print(
            f"error: evaluation time {t_eval} outside trajectory range "
            f"[{traj.times[0]}, {traj.times[-1]}]",
            file=sys.stderr,
        )
        return EXIT_EVAL_RANGE
    generated, t_near = traj.at_time(t_eval)
    report = evaluate_batches(generated, truth, gamma=resolved["gamma"])
    payload = report.to_dict()
    payload["time"] = t_eval
    payload["grid_time"] = t_near
    with open(out / "report.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_sidecar(out, "evaluate", resolved)
    return EXIT_OK


def cmd_splines(args):
    resolved = _resolve(args, "splines")
    _require(resolved, ["points", "grid"])
    out = _out_dir(resolved)
    grid = _grid_from(resolved["grid"])
    points = load_points(resolved["points"])
    if len(points) != len(grid):
        raise UsageError(
            f"need one point per grid time ({len(grid)}), got {len(points)}"
        )
    k = int(resolved["k"])
    if not 1 <= k <= len(grid) - 1:
        raise UsageError(f"--k must be in [1, {len(grid) - 1}], got {k}")
    dense = int(resolved["dense"])
    if dense < 2:
        raise UsageError(f"--dense must be >= 2, got {dense}")
    times = grid.times
    d = points.shape[1]
    n_windows = len(grid) - 1 - k + 1
    with open(out / "splines.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "window", "family"] + [f"x_{j}" for j in range(d)])
        for family, fitter in (
            ("hermite", fit_monotone_hermite),
            ("natural", fit_natural_cubic),
        ):
            for i in range(n_windows):
                curve = fitter(times[i : i + k + 1], points[i : i + k + 1])
                ts = np.linspace(times[i], times[i + k], dense)
                values = curve(ts)
                for t_val, row in zip(ts, values):
                    writer.writerow(
                        [repr(float(t_val)), i, family]
                        + [repr(float(v)) for v in row]
                    )
    _write_sidecar(out, "splines", resolved)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="snapflow",
        description="Learn and simulate stochastic dynamics from snapshot data.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a builtin synthetic dataset")
    p.add_argument("--dataset", help="builtin dataset name")
    p.add_argument("--grid", help="builtin grid name")
    p.add_argument("--seed", type=int)
    p.add_argument("--samples", type=int, help="points per marginal")
    p.add_argument("--initial", type=int, help="size of the held-out initial pool")
    p.add_argument("--std", type=float, help="isotropic noise level")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="fit flow and score networks")
    p.add_argument("--marginals", help="marginal CSV path")
    p.add_argument("--grid", help="builtin grid name or grid JSON path")
    p.add_argument("--k", type=int, help="window size in intervals")
    p.add_argument("--sigma", type=float)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--steps", type=int, help="total gradient steps")
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", type=float, dest="weight_decay")
    p.add_argument("--schedule", choices=["window", "global"])
    p.add_argument("--spline", choices=["hermite", "natural"])
    p.add_argument("--seed", type=int)
    p.add_argument("--hold-out", type=int, dest="hold_out",
                   help="interior marginal index to withhold")
    p.add_argument("--sigma-min", type=float, dest="sigma_min")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="integrate trajectories from a model")
    p.add_argument("--model", help="directory with flow.json and score.json")
    p.add_argument("--initial", help="initial-condition CSV path")
    p.add_argument("--steps-per-unit", type=int, dest="steps_per_unit")
    p.add_argument("--particles", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--sigma", type=float,
                   help="diffusion level; defaults to the training sigma")
    p.add_argument("--deterministic", action=argparse.BooleanOptionalAction,
                   help="integrate the flow field alone with RK4")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="score generated states against a marginal")
    p.add_argument("--trajectories", help="trajectory CSV path")
    p.add_argument("--marginals", help="ground-truth marginal CSV path")
    p.add_argument("--grid", help="builtin grid name or grid JSON path")
    p.add_argument("--time", type=float, help="held-out grid time")
    p.add_argument("--gamma", type=float, help="kernel bandwidth override")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("splines", help="dump dense window-spline curves")
    p.add_argument("--points", help="knot CSV path, one row per grid time")
    p.add_argument("--grid", help="builtin grid name or grid JSON path")
    p.add_argument("--k", type=int, help="window size in intervals")
    p.add_argument("--dense", type=int, help="samples per window")
    p.set_defaults(func=cmd_splines)

    for sp in sub.choices.values():
        sp.add_argument("--config", help="JSON config file; flags override it")
        sp.add_argument("--out", help="output directory")
    return parser


def _thread_cap():
    raw = os.environ.get("MMSFM_THREADS")
    if raw is None:
        return contextlib.nullcontext()
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"MMSFM_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"MMSFM_THREADS must be >= 1, got {n}")
    return threadpoolctl.threadpool_limits(limits=n)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        with _thread_cap():
            return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MarginalParseError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CheckpointVersionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except CheckpointFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDivergedError, IntegrationDivergedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
