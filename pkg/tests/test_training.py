"""Trainer tests: stratified times, the window loss, gradient identities,
and the training loop."""

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy.stats import chisquare

from snapflow.exceptions import TrainingDivergedError
from snapflow.network import Mlp
from snapflow.paths import SigmaSchedule, conditional_flow
from snapflow.splines import fit_monotone_hermite
from snapflow.training import stratified_times, train, window_loss
from snapflow.transport import sample_aligned_window


def _zeroed(net):
    for w in net.weights:
        w[...] = 0.0
    for b in net.biases:
        b[...] = 0.0
    return net


def _add_grads(a, b):
    return [(dw1 + dw2, db1 + db2) for (dw1, db1), (dw2, db2) in zip(a, b)]


def _flat(grads):
    return np.concatenate([np.r_[dw.ravel(), db.ravel()] for dw, db in grads])


class TestStratifiedTimes:
    def test_counts_per_subinterval_in_block_order(self):
        window = (0.0, 0.5, 1.0)
        ts = stratified_times(window, 6, np.random.default_rng(0))
        assert ts.shape == (6,)
        assert np.all((ts[:3] > 0.0) & (ts[:3] < 0.5))
        assert np.all((ts[3:] > 0.5) & (ts[3:] < 1.0))

    def test_unbalanced_intervals_still_split_evenly(self):
        # the 0.03-long and 0.58-long neighbours from the T3 grid
        window = (0.27, 0.3, 0.88)
        ts = stratified_times(window, 6, np.random.default_rng(1))
        assert np.sum((ts > 0.27) & (ts < 0.3)) == 3
        assert np.sum((ts > 0.3) & (ts < 0.88)) == 3

    def test_margin_keeps_draws_off_the_knots(self):
        window = (0.0, 1e-3)
        margin = 1e-6 * 1e-3
        ts = np.concatenate(
            [stratified_times(window, 1, np.random.default_rng(s)) for s in range(200)]
        )
        assert ts.min() >= window[0] + margin
        assert ts.max() <= window[1] - margin

    def test_uniform_within_subinterval(self):
        # chi-square on 10 equal bins of one subinterval, 1e5 draws
        rng = np.random.default_rng(7)
        ts = stratified_times((0.2, 0.4, 1.0), 100_000, rng)
        first = ts[:50_000]
        counts, _ = np.histogram(first, bins=10, range=(0.2, 0.4))
        _, p = chisquare(counts)
        assert p > 0.001

    def test_count_not_divisible_rejected(self):
        with pytest.raises(ValueError, match="multiple"):
            stratified_times((0.0, 0.5, 1.0), 7, np.random.default_rng(0))


class TestWindowLoss:
    def test_zero_nets_straight_line_no_noise(self):
        # v = 0 and s = 0 reduce the losses to mean ||mu'||^2 and 0; a
        # straight line with slope (4, -2) per unit time makes that 20.
        b = 12
        rng = np.random.default_rng(3)
        start = rng.normal(size=(b, 2))
        step = np.array([2.0, -1.0])
        aligned = np.stack([start, start + step, start + 2 * step])
        window_times = np.array([0.0, 0.5, 1.0])
        ts = np.linspace(0.1, 0.9, b)
        eps = np.zeros((b, 2))
        flow_net = _zeroed(Mlp(2, rng=np.random.default_rng(0)))
        score_net = _zeroed(Mlp(2, rng=np.random.default_rng(1)))
        flow_loss, score_loss, _, _ = window_loss(
            aligned, window_times, ts, eps, flow_net, score_net, sigma=0.15
        )
        assert flow_loss == pytest.approx(20.0, abs=1e-12)
        assert score_loss == 0.0

    def test_matches_straight_through_recomputation(self):
        # Independent recomputation: per-sample loops, tangents rebuilt from
        # the harmonic-mean rule, and Hermite-basis evaluation instead of
        # power coefficients.
        rng = np.random.default_rng(11)
        k, b, d = 2, 8, 3
        window_times = np.array([0.2, 0.35, 0.9])
        aligned = rng.normal(scale=2.0, size=(k + 1, b, d))
        ts = stratified_times(window_times, b, rng)
        eps = rng.standard_normal((b, d))
        sigma = 0.15
        flow_net = Mlp(d, rng=np.random.default_rng(5))
        score_net = Mlp(d, rng=np.random.default_rng(6))

        flow_loss, score_loss, _, _ = window_loss(
            aligned, window_times, ts, eps, flow_net, score_net,
            sigma=sigma, schedule="window",
        )

        def tangents(t, y):
            h = np.diff(t)
            delta = np.diff(y) / h
            m = np.zeros(len(t))
            m[0], m[-1] = delta[0], delta[-1]
            for j in range(1, len(t) - 1):
                if delta[j - 1] * delta[j] > 0:
                    w1 = 2 * h[j] + h[j - 1]
                    w2 = h[j] + 2 * h[j - 1]
                    m[j] = (w1 + w2) / (w1 / delta[j - 1] + w2 / delta[j])
            return m

        def hermite_eval(t, y, m, at):
            j = np.searchsorted(t, at, side="right") - 1
            j = min(j, len(t) - 2)
            h = t[j + 1] - t[j]
            s = (at - t[j]) / h
            h00 = 2 * s**3 - 3 * s**2 + 1
            h10 = s**3 - 2 * s**2 + s
            h01 = -2 * s**3 + 3 * s**2
            h11 = s**3 - s**2
            value = h00 * y[j] + h10 * h * m[j] + h01 * y[j + 1] + h11 * h * m[j + 1]
            d00 = (6 * s**2 - 6 * s) / h
            d10 = 3 * s**2 - 4 * s + 1
            d01 = (-6 * s**2 + 6 * s) / h
            d11 = 3 * s**2 - 2 * s
            deriv = d00 * y[j] + d10 * m[j] + d01 * y[j + 1] + d11 * m[j + 1]
            return value, deriv

        a, c = window_times[0], window_times[-1]
        span = c - a
        exp_flow, exp_score = 0.0, 0.0
        for i in range(b):
            mu = np.empty(d)
            dmu = np.empty(d)
            for dim in range(d):
                y = aligned[:, i, dim]
                m = tangents(window_times, y)
                mu[dim], dmu[dim] = hermite_eval(window_times, y, m, ts[i])
            r = (ts[i] - a) / span
            sig = sigma * np.sqrt(r * (1 - r))
            if sig < 1e-4:
                sig, dsig = 1e-4, 0.0
            else:
                dsig = sigma * (1 - 2 * r) / (2 * np.sqrt(r * (1 - r))) / span
            lam = 2 * sig / sigma**2
            x = mu + sig * eps[i]
            u = dsig / sig * (x - mu) + dmu
            v = flow_net(x, ts[i])
            s_hat = score_net(x, ts[i])
            exp_flow += np.sum((v - u) ** 2)
            exp_score += np.sum((lam * s_hat + eps[i]) ** 2)
        assert_allclose(flow_loss, exp_flow / b, rtol=1e-10)
        assert_allclose(score_loss, exp_score / b, rtol=1e-10)

    def test_shape_validation(self):
        net = Mlp(2, rng=np.random.default_rng(0))
        aligned = np.zeros((3, 4, 2))
        with pytest.raises(ValueError, match="ts must be"):
            window_loss(aligned, (0.0, 0.5, 1.0), np.zeros(3), np.zeros((4, 2)),
                        net, net, sigma=0.15)
        with pytest.raises(ValueError, match="spline"):
            window_loss(aligned, (0.0, 0.5, 1.0), np.full(4, 0.5), np.zeros((4, 2)),
                        net, net, sigma=0.15, spline="bezier")


class TestGradientIdentities:
    def test_summed_targets_decomposition(self):
        # For targets u_1, u_2 at shared points, the parameter gradient of
        # sum_j ||v - u_j||^2 equals that of ||v - (u_1 + u_2)||^2 +
        # (k - 1) ||v||^2. Targets come from two real overlapping windows
        # sharing their middle interval.
        rng = np.random.default_rng(42)
        b, d = 24, 2
        times = np.array([0.0, 0.3, 0.6, 1.0])
        means = np.array([[0.0, 0.0], [2.0, 1.0], [3.0, -1.0], [5.0, 0.0]])
        marginals = [m + 0.5 * rng.standard_normal((40, d)) for m in means]

        flow_net = Mlp(d, rng=np.random.default_rng(8))
        ts = np.linspace(0.32, 0.58, b)
        eps = rng.standard_normal((b, d))

        targets = []
        x_ref = None
        for i in (0, 1):
            window_times = times[i : i + 3]
            batches = [m[rng.integers(0, 40, b)] for m in marginals[i : i + 3]]
            aligned = sample_aligned_window(batches, rng)
            sched = SigmaSchedule(
                0.15, mode="window", window=(window_times[0], window_times[-1])
            )
            sigma_t, dsigma_t = sched(ts)
            mu = np.empty((b, d))
            dmu = np.empty((b, d))
            for j in range(b):
                curve = fit_monotone_hermite(window_times, aligned[:, j])
                mu[j] = curve(ts[j])
                dmu[j] = curve.derivative(ts[j])
            if x_ref is None:
                x_ref = mu + sigma_t[:, None] * eps
            targets.append(conditional_flow(x_ref, mu, dmu, sigma_t, dsigma_t))
        u1, u2 = targets

        def grads_of(target, scale=1.0):
            v = flow_net.forward(x_ref, ts)
            resid = v - target
            return flow_net.backward(scale * 2.0 * resid / b)

        lhs = _add_grads(grads_of(u1), grads_of(u2))
        rhs = _add_grads(grads_of(u1 + u2), grads_of(np.zeros_like(u1)))

        flat_l, flat_r = _flat(lhs), _flat(rhs)
        err = np.linalg.norm(flat_l - flat_r) / np.linalg.norm(flat_l)
        assert err < 1e-8

    def test_overlapping_windows_recover_pairwise_gradient(self):
        # Collinear marginals at equal speed and spacing make every window
        # spline the same straight line; with the global noise schedule the
        # two k=2 windows covering the middle interval then produce the same
        # regression target as the k=1 pair, so their summed gradient is
        # exactly twice the pairwise one.
        rng = np.random.default_rng(9)
        b, d = 30, 2
        times = np.array([0.2, 0.4, 0.6, 0.8])
        direction = np.array([3.0, -1.5])
        marginals = [
            np.tile(np.array([1.0, 0.5]) + t * direction, (20, 1)) for t in times
        ]
        flow_net = Mlp(d, rng=np.random.default_rng(10))
        score_net = Mlp(d, rng=np.random.default_rng(11))
        ts = np.linspace(0.42, 0.58, b)
        eps = rng.standard_normal((b, d))

        def flow_grads(idx):
            batches = [marginals[i][rng.integers(0, 20, b)] for i in idx]
            aligned = sample_aligned_window(batches, rng)
            window_times = times[list(idx)]
            _, _, fg, _ = window_loss(
                aligned, window_times, ts, eps, flow_net, score_net,
                sigma=0.15, schedule="global",
            )
            return fg

        left = flow_grads((0, 1, 2))
        right = flow_grads((1, 2, 3))
        pairwise = flow_grads((1, 2))

        summed = _flat(_add_grads(left, right))
        doubled = 2.0 * _flat(pairwise)
        err = np.linalg.norm(summed - doubled) / np.linalg.norm(doubled)
        assert err < 1e-6


class TestTrain:
    def _dataset(self, rng, n_times=4, n=30, d=2):
        times = np.linspace(0.0, 1.0, n_times)
        means = np.linspace([0.0] * d, [4.0] * d, n_times)
        marginals = [m + 0.3 * rng.standard_normal((n, d)) for m in means]
        return marginals, times

    def test_history_shape_and_window_cycling(self):
        rng = np.random.default_rng(0)
        marginals, times = self._dataset(rng)
        _, _, history = train(
            marginals, times, window_size=2, batch_size=8, n_steps=7,
            rng=np.random.default_rng(1),
        )
        assert history.shape == (7, 4)
        assert_array_equal(history[:, 0], np.arange(7))
        # M=3 intervals, k=2 -> windows 0,1 visited round-robin
        assert_array_equal(history[:, 1], [0, 1, 0, 1, 0, 1, 0])

    def test_single_window_when_k_equals_m(self):
        rng = np.random.default_rng(2)
        marginals, times = self._dataset(rng)
        _, _, history = train(
            marginals, times, window_size=3, batch_size=9, n_steps=4,
            rng=np.random.default_rng(3),
        )
        assert_array_equal(history[:, 1], np.zeros(4))

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(4)
        marginals, times = self._dataset(rng)
        runs = []
        for _ in range(2):
            flow_net, score_net, history = train(
                marginals, times, window_size=2, batch_size=8, n_steps=12,
                rng=np.random.default_rng(99),
            )
            runs.append((flow_net, score_net, history))
        assert_array_equal(runs[0][2], runs[1][2])
        for w0, w1 in zip(runs[0][0].weights, runs[1][0].weights):
            assert_array_equal(w0, w1)
        for w0, w1 in zip(runs[0][1].weights, runs[1][1].weights):
            assert_array_equal(w0, w1)

    def test_loss_decreases_on_s_shaped_data(self):
        # averaged over 3 seeds, the mean combined loss over the last 30
        # steps falls below the first 30
        from snapflow.datasets import (
            MEAN_SEQUENCES,
            GaussianSequenceSpec,
            builtin_grid,
            gen_gaussian_sequence,
        )

        grid = builtin_grid("T1")
        first, last = [], []
        for seed in range(3):
            spec = GaussianSequenceSpec(
                means=MEAN_SEQUENCES["s-shape"], n_samples=60, seed=seed
            )
            dataset, _ = gen_gaussian_sequence(spec, grid)
            _, _, history = train(
                dataset.marginals, grid.times, window_size=2, batch_size=30,
                n_steps=300, rng=np.random.default_rng(seed),
            )
            combined = history[:, 2] + history[:, 3]
            first.append(combined[:30].mean())
            last.append(combined[-30:].mean())
        assert np.mean(last) < np.mean(first)

    def test_divergence_raises_with_step_index(self):
        rng = np.random.default_rng(5)
        marginals, times = self._dataset(rng)
        with pytest.raises(TrainingDivergedError) as info:
            train(
                marginals, times, window_size=2, batch_size=8, n_steps=50,
                learning_rate=1e60, rng=np.random.default_rng(6),
            )
        assert info.value.step < 50

    def test_input_validation(self):
        rng = np.random.default_rng(7)
        marginals, times = self._dataset(rng)
        with pytest.raises(ValueError, match="window"):
            train(marginals, times, window_size=4, batch_size=8, n_steps=1)
        with pytest.raises(ValueError, match="multiple"):
            train(marginals, times, window_size=2, batch_size=9, n_steps=1)
        with pytest.raises(ValueError, match="n_steps"):
            train(marginals, times, window_size=2, batch_size=8, n_steps=0)
