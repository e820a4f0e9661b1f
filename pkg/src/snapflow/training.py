"""Window-wise training of drift and score fields against spline targets.

One training step processes one window of ``k + 1`` consecutive marginals:
draw minibatches with replacement, align them through chained OT plans, fit
one interpolating spline per aligned tuple, then regress the flow net onto
the conditional flow target and the score net onto the noise that generated
the perturbed state. Windows roll left to right across the grid
(``M - k + 1`` of them) and the sweep repeats until the step budget is
spent; every visit redraws batches and plans.

The score residual is pre-scaled: with weight lambda(t) = 2 sigma_t / g^2
the regression ``||lambda * s_hat + eps||^2`` makes the learned field
``s_hat`` approximate (g^2 / 2) * grad log p, so the SDE drift is simply
``flow + s_hat``.
"""

import numpy as np

from .exceptions import TrainingDivergedError
from .network import AdamW, Mlp
from .paths import SigmaSchedule, conditional_flow
from .splines import fit_monotone_hermite, fit_natural_cubic
from .transport import sample_aligned_window

SPLINE_FITTERS = {"hermite": fit_monotone_hermite, "natural": fit_natural_cubic}

TIME_MARGIN_FRAC = 1e-6


def stratified_times(window_times, n, rng, margin_frac=TIME_MARGIN_FRAC):
    """Draw ``n`` times uniformly, ``n / k`` from each subinterval in order.

    A relative margin keeps draws away from the knots, where the bridge
    variance pinches and the flow target stiffens.
    """
    wt = np.asarray(window_times, dtype=float)
    k = wt.size - 1
    if k < 1:
        raise ValueError("need at least one subinterval")
    if n < 1 or n % k != 0:
        raise ValueError(f"sample count {n} must be a positive multiple of {k} subintervals")
    per = n // k
    u = rng.random((k, per))
    lo = wt[:-1, None]
    span = np.diff(wt)[:, None]
    return (lo + span * (margin_frac + u * (1.0 - 2.0 * margin_frac))).reshape(n)


def window_loss(aligned, window_times, ts, eps, flow_net, score_net, *, sigma,
                schedule="window", spline="hermite", sigma_min=None):
    """Both regression losses and parameter gradients for one window batch.

    ``aligned`` has shape ``(k + 1, b, d)``; sample ``i`` follows its own
    spline through ``aligned[:, i]``, is evaluated at ``ts[i]`` and perturbed
    by ``eps[i]``. Deterministic given its inputs.
    """
    aligned = np.asarray(aligned, dtype=float)
    ts = np.asarray(ts, dtype=float)
    eps = np.asarray(eps, dtype=float)
    kp1, b, d = aligned.shape
    if ts.shape != (b,) or eps.shape != (b, d):
        raise ValueError("ts must be (b,) and eps (b, d) for an aligned (k+1, b, d) batch")
    if spline not in SPLINE_FITTERS:
        raise ValueError(f"spline must be one of {sorted(SPLINE_FITTERS)}, got {spline!r}")

    # one spline per sample, all sharing the window knots: pack the b
    # tuples into b*d curve dimensions and fit once
    fit = SPLINE_FITTERS[spline](window_times, aligned.reshape(kp1, b * d))
    diag = np.arange(b)
    mu = fit(ts).reshape(b, b, d)[diag, diag]
    dmu = fit.derivative(ts).reshape(b, b, d)[diag, diag]

    kwargs = {} if sigma_min is None else {"sigma_min": sigma_min}
    if schedule == "window":
        sched = SigmaSchedule(sigma, mode="window", window=(window_times[0], window_times[-1]), **kwargs)
    elif schedule == "global":
        sched = SigmaSchedule(sigma, mode="global", **kwargs)
    else:
        raise ValueError(f"schedule must be 'window' or 'global', got {schedule!r}")
    sigma_t, dsigma_t = sched(ts)
    lam = sched.lambda_weight(ts)[:, None]

    x = mu + sigma_t[:, None] * eps
    u_target = conditional_flow(x, mu, dmu, sigma_t, dsigma_t)

    v = flow_net.forward(x, ts)
    flow_resid = v - u_target
    flow_loss = float(np.mean(np.sum(flow_resid**2, axis=1)))
    flow_grads = flow_net.backward(2.0 * flow_resid / b)

    s_hat = score_net.forward(x, ts)
    score_resid = lam * s_hat + eps
    score_loss = float(np.mean(np.sum(score_resid**2, axis=1)))
    score_grads = score_net.backward(2.0 * lam * score_resid / b)

    return flow_loss, score_loss, flow_grads, score_grads


def _check_training_inputs(marginals, times, window_size, batch_size):
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size < 2:
        raise ValueError("need at least 2 snapshot times")
    if np.any(np.diff(times) <= 0):
        raise ValueError("snapshot times must be strictly increasing")
    n_intervals = times.size - 1
    if not 1 <= window_size <= n_intervals:
        raise ValueError(
            f"window_size must be in [1, {n_intervals}] for {times.size} snapshots"
        )
    if batch_size < 1 or batch_size % window_size != 0:
        raise ValueError(
            f"batch_size {batch_size} must be a positive multiple of window_size {window_size}"
        )
    if len(marginals) != times.size:
        raise ValueError(f"got {len(marginals)} marginals for {times.size} times")
    marginals = [np.asarray(m, dtype=float) for m in marginals]
    dims = {m.shape[1] for m in marginals}
    if len(dims) != 1:
        raise ValueError(f"marginals disagree on dimension: {sorted(dims)}")
    for i, m in enumerate(marginals):
        if m.ndim != 2 or len(m) < 1:
            raise ValueError(f"marginal {i} must be a non-empty (n, d) array")
        if not np.all(np.isfinite(m)):
            raise ValueError(f"marginal {i} has non-finite values")
    return marginals, times


def _params_finite(net):
    return all(np.all(np.isfinite(w)) for w in net.weights) and all(
        np.all(np.isfinite(b)) for b in net.biases
    )


def train(marginals, times, *, window_size=2, sigma=0.15, batch_size=120, n_steps=2500,
          learning_rate=1e-4, weight_decay=1e-2, schedule="window", spline="hermite",
          hidden=(64, 64), sigma_min=None, rng=None):
    """Fit flow and score networks across rolling windows of the snapshots.

    Returns ``(flow_net, score_net, history)`` where ``history`` has one row
    ``(step, window_index, flow_loss, score_loss)`` per optimizer step.
    """
    marginals, times = _check_training_inputs(marginals, times, window_size, batch_size)
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if rng is None:
        rng = np.random.default_rng()
    d = marginals[0].shape[1]
    k = window_size

    flow_net = Mlp(d, hidden=hidden, rng=rng)
    score_net = Mlp(d, hidden=hidden, rng=rng)
    opt_flow = AdamW(learning_rate=learning_rate, weight_decay=weight_decay)
    opt_score = AdamW(learning_rate=learning_rate, weight_decay=weight_decay)

    n_windows = times.size - 1 - k + 1
    history = np.empty((n_steps, 4))
    step = 0
    while step < n_steps:
        for i in range(n_windows):
            if step == n_steps:
                break
            window_times = times[i : i + k + 1]
            batches = [
                m[rng.integers(0, len(m), batch_size)] for m in marginals[i : i + k + 1]
            ]
            aligned = sample_aligned_window(batches, rng)
            ts = stratified_times(window_times, batch_size, rng)
            eps = rng.standard_normal((batch_size, d))
            # Overflow on the way to a non-finite loss is the divergence
            # signal itself, not a warning-worthy surprise.
            with np.errstate(over="ignore", invalid="ignore"):
                flow_loss, score_loss, flow_grads, score_grads = window_loss(
                    aligned, window_times, ts, eps, flow_net, score_net,
                    sigma=sigma, schedule=schedule, spline=spline, sigma_min=sigma_min,
                )
            if not np.isfinite(flow_loss + score_loss):
                raise TrainingDivergedError(step)
            opt_flow.step(flow_net, flow_grads)
            opt_score.step(score_net, score_grads)
            if not (_params_finite(flow_net) and _params_finite(score_net)):
                raise TrainingDivergedError(step)
            history[step] = (step, i, flow_loss, score_loss)
            step += 1
    return flow_net, score_net, history
