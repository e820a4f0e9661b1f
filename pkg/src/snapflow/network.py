"""Small dense networks for drift and score fields, trained without autodiff.

The reverse-mode gradients are written out by hand; a finite-difference
cross-check lives in the test suite. Checkpoints are JSON so they stay
readable and round-trip floats exactly (shortest-repr serialisation).
"""

import json

import numpy as np

from .exceptions import CheckpointFormatError, CheckpointVersionError

SELU_ALPHA = 1.6732632423543772
SELU_SCALE = 1.0507009873554805

CHECKPOINT_VERSION = 1


def selu(z):
    return SELU_SCALE * np.where(z > 0.0, z, SELU_ALPHA * (np.exp(np.minimum(z, 0.0)) - 1.0))


def selu_grad(z):
    return SELU_SCALE * np.where(z > 0.0, 1.0, SELU_ALPHA * np.exp(np.minimum(z, 0.0)))


class Mlp:
    """Fully connected net mapping (state, time) -> state-sized output.

    Input width is ``n_state + 1``: the scalar time is appended as an extra
    feature. Hidden layers use SELU, the output layer is linear, weights are
    LeCun-normal, biases start at zero.
    """

    def __init__(self, n_state, hidden=(64, 64), n_out=None, rng=None):
        if n_state < 1:
            raise ValueError("n_state must be >= 1")
        if any(h < 1 for h in hidden):
            raise ValueError("hidden widths must be >= 1")
        if rng is None:
            rng = np.random.default_rng()
        self.n_state = int(n_state)
        self.n_out = int(n_out) if n_out is not None else int(n_state)
        self.hidden = tuple(int(h) for h in hidden)
        widths = self.widths
        self.weights = [
            rng.normal(0.0, 1.0 / np.sqrt(widths[i]), (widths[i], widths[i + 1]))
            for i in range(len(widths) - 1)
        ]
        self.biases = [np.zeros(w) for w in widths[1:]]
        self._cache = None

    @property
    def widths(self):
        return (self.n_state + 1, *self.hidden, self.n_out)

    def parameter_count(self):
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def _assemble(self, x, t):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        x2 = x[None, :] if single else x
        if x2.ndim != 2 or x2.shape[1] != self.n_state:
            raise ValueError(f"expected state of width {self.n_state}, got shape {x.shape}")
        t2 = np.broadcast_to(np.asarray(t, dtype=float), (x2.shape[0],))
        return np.concatenate([x2, t2[:, None]], axis=1), single

    def _apply(self, inp, keep_cache=False):
        cache = [inp]
        z = inp
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            pre = z @ w + b
            z = pre if i == last else selu(pre)
            if keep_cache and i < last:
                cache.extend([pre, z])
        if keep_cache:
            self._cache = cache
        return z

    def __call__(self, x, t):
        """Pure forward pass; leaves no state behind."""
        inp, single = self._assemble(x, t)
        out = self._apply(inp, keep_cache=False)
        return out[0] if single else out

    def forward(self, x, t):
        """Forward pass that records activations for a later ``backward``."""
        inp, single = self._assemble(x, t)
        out = self._apply(inp, keep_cache=True)
        return out[0] if single else out

    def backward(self, grad_out):
        """Parameter gradients for the loss whose dL/d(output) is given.

        Requires a preceding ``forward``; returns ``[(dW, db), ...]`` in
        layer order.
        """
        if self._cache is None:
            raise RuntimeError("backward called without a cached forward pass")
        grad_out = np.asarray(grad_out, dtype=float)
        if grad_out.ndim == 1:
            grad_out = grad_out[None, :]
        cache = self._cache
        if grad_out.shape != (cache[0].shape[0], self.n_out):
            raise ValueError(
                f"grad_out shape {grad_out.shape} does not match cached batch"
            )
        grads = [None] * len(self.weights)
        delta = grad_out
        for i in range(len(self.weights) - 1, -1, -1):
            act_in = cache[2 * i]
            grads[i] = (act_in.T @ delta, delta.sum(axis=0))
            if i > 0:
                delta = (delta @ self.weights[i].T) * selu_grad(cache[2 * i - 1])
        return grads

    def copy(self):
        dup = Mlp.__new__(Mlp)
        dup.n_state = self.n_state
        dup.n_out = self.n_out
        dup.hidden = self.hidden
        dup.weights = [w.copy() for w in self.weights]
        dup.biases = [b.copy() for b in self.biases]
        dup._cache = None
        return dup


class AdamW:
    """Adam with decoupled weight decay (update and decay applied separately)."""

    def __init__(self, learning_rate=1e-4, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=1e-2):
        if learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ValueError("betas must lie in [0, 1)")
        if weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        self.learning_rate = float(learning_rate)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.step_count = 0
        self._m = None
        self._v = None

    def _params(self, net):
        return [p for pair in zip(net.weights, net.biases) for p in pair]

    def step(self, net, grads):
        """Apply one update in place from ``backward``-style gradients."""
        params = self._params(net)
        flat_grads = [g for pair in grads for g in pair]
        if len(flat_grads) != len(params):
            raise ValueError("gradient structure does not match the network")
        if self._m is None:
            self._m = [np.zeros_like(p) for p in params]
            self._v = [np.zeros_like(p) for p in params]
        self.step_count += 1
        b1c = 1.0 - self.beta1**self.step_count
        b2c = 1.0 - self.beta2**self.step_count
        for p, g, m, v in zip(params, flat_grads, self._m, self._v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.learning_rate * ((m / b1c) / (np.sqrt(v / b2c) + self.eps) + self.weight_decay * p)

    def state_dict(self):
        state = {
            "learning_rate": self.learning_rate,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "weight_decay": self.weight_decay,
            "step_count": self.step_count,
        }
        if self._m is not None:
            state["m"] = [m.tolist() for m in self._m]
            state["v"] = [v.tolist() for v in self._v]
        return state

    @classmethod
    def from_state_dict(cls, state):
        opt = cls(
            learning_rate=state["learning_rate"],
            beta1=state["beta1"],
            beta2=state["beta2"],
            eps=state["eps"],
            weight_decay=state["weight_decay"],
        )
        opt.step_count = int(state["step_count"])
        if "m" in state:
            opt._m = [np.asarray(m, dtype=float) for m in state["m"]]
            opt._v = [np.asarray(v, dtype=float) for v in state["v"]]
        return opt


def save_checkpoint(path, net, optimizer=None):
    """Write net (and optionally optimizer) state as version-tagged JSON."""
    payload = {
        "version": CHECKPOINT_VERSION,
        "n_state": net.n_state,
        "n_out": net.n_out,
        "hidden": list(net.hidden),
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_checkpoint(path):
    """Read a checkpoint; returns ``(net, optimizer_or_None)``."""
    with open(path) as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CheckpointFormatError(f"checkpoint is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict) or "version" not in payload:
        raise CheckpointFormatError("checkpoint lacks a version field")
    if payload["version"] != CHECKPOINT_VERSION:
        raise CheckpointVersionError(payload["version"], CHECKPOINT_VERSION)
    try:
        net = Mlp.__new__(Mlp)
        net.n_state = int(payload["n_state"])
        net.n_out = int(payload["n_out"])
        net.hidden = tuple(int(h) for h in payload["hidden"])
        net.weights = [np.asarray(w, dtype=float) for w in payload["weights"]]
        net.biases = [np.asarray(b, dtype=float) for b in payload["biases"]]
        net._cache = None
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointFormatError(f"malformed checkpoint: {exc}") from exc
    widths = net.widths
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        if w.shape != (widths[i], widths[i + 1]) or b.shape != (widths[i + 1],):
            raise CheckpointFormatError(f"layer {i} has inconsistent shapes")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise CheckpointFormatError(f"layer {i} has non-finite parameters")
    opt = None
    if payload.get("optimizer") is not None:
        try:
            opt = AdamW.from_state_dict(payload["optimizer"])
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointFormatError(f"malformed optimizer state: {exc}") from exc
    return net, opt
