"""Fusion network: a 4-layer feedforward net from the 2n concatenated
posteriors (visual first) to n class probabilities.

Hidden layers use tanh, the output layer a softmax, and training minimises
the mean cross-entropy against one-hot targets with Moller's scaled
conjugate gradient (SCG), a full-batch second-order method.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import stratified_holdout

EPS = 1e-12


@dataclass(frozen=True)
class FusionNet:
    """Layer sizes ``[2n, h1, h2, n]`` and a flat parameter vector laid out as
    ``W1, b1, W2, b2, W3, b3`` with ``W`` of shape ``(fan_in, fan_out)``."""

    layer_dims: tuple
    params: np.ndarray
    seed: int = 0
    activations: tuple = ("tanh", "tanh", "softmax")

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        if len(dims) != 4 or min(dims) < 1:
            raise ValueError(f"layer_dims must be 4 positive sizes, got {dims}")
        if dims[0] != 2 * dims[3]:
            raise ValueError("input width must be twice the class count")
        params = np.asarray(self.params, dtype=float)
        if params.shape != (n_params(dims),):
            raise ValueError(f"expected {n_params(dims)} parameters, got {params.shape}")
        if not np.all(np.isfinite(params)):
            raise ValueError("non-finite network parameters")
        object.__setattr__(self, "layer_dims", dims)
        object.__setattr__(self, "params", params)

    @property
    def n_classes(self) -> int:
        return self.layer_dims[3]

    def layers(self):
        return unpack(self.params, self.layer_dims)

    def with_params(self, params) -> "FusionNet":
        return FusionNet(self.layer_dims, params, self.seed, self.activations)

    def to_dict(self) -> dict:
        return {
            "kind": "fusion_net",
            "layer_dims": list(self.layer_dims),
            "activations": list(self.activations),
            "seed": self.seed,
            "params": [float(v) for v in self.params],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FusionNet":
        if tuple(d.get("activations", ("tanh", "tanh", "softmax"))) != ("tanh", "tanh", "softmax"):
            raise ValueError(f"unsupported activations {d['activations']}")
        return cls(tuple(d["layer_dims"]), np.asarray(d["params"], dtype=float), int(d.get("seed", 0)))


def n_params(dims) -> int:
    return sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))


def unpack(flat, dims):
    out = []
    pos = 0
    for a, b in zip(dims[:-1], dims[1:]):
        W = flat[pos:pos + a * b].reshape(a, b)
        pos += a * b
        out.append((W, flat[pos:pos + b]))
        pos += b
    return out


def init_net(n_classes: int, hidden=(None, None), seed: int = 0) -> FusionNet:
    """Weights uniform in ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]``; hidden sizes
    default to ``2n`` and ``n``."""
    h1 = hidden[0] or 2 * n_classes
    h2 = hidden[1] or n_classes
    dims = (2 * n_classes, h1, h2, n_classes)
    rng = np.random.default_rng(seed)
    parts = []
    for a, b in zip(dims[:-1], dims[1:]):
        bound = 1.0 / math.sqrt(a)
        parts.append(rng.uniform(-bound, bound, size=a * b))
        parts.append(rng.uniform(-bound, bound, size=b))
    return FusionNet(dims, np.concatenate(parts), int(seed))


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _forward_cache(flat, dims, X):
    (W1, b1), (W2, b2), (W3, b3) = unpack(flat, dims)
    a1 = np.tanh(X @ W1 + b1)
    a2 = np.tanh(a1 @ W2 + b2)
    return a1, a2, _softmax(a2 @ W3 + b3)


def forward(net: FusionNet, inputs) -> np.ndarray:
    """Class probabilities for one input vector of length 2n or a batch."""
    X = np.asarray(inputs, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != net.layer_dims[0]:
        raise ValueError(f"input has width {X.shape[1]}, network expects {net.layer_dims[0]}")
    out = _forward_cache(net.params, net.layer_dims, X)[2]
    return out[0] if single else out


def encode_targets(labels, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    Y = np.zeros((labels.size, n_classes))
    Y[np.arange(labels.size), labels] = 1.0
    return Y


def cross_entropy(targets, outputs) -> float:
    """Mean over rows of ``-sum_c C(i,c) log C_hat(i,c)``, outputs clamped at 1e-12."""
    targets = np.asarray(targets, dtype=float)
    outputs = np.asarray(outputs, dtype=float)
    if targets.shape != outputs.shape:
        raise ValueError(f"shape mismatch: {targets.shape} vs {outputs.shape}")
    targets = np.atleast_2d(targets)
    outputs = np.atleast_2d(outputs)
    return float(-(targets * np.log(np.maximum(outputs, EPS))).sum() / targets.shape[0])


def loss_and_gradient(flat, dims, X, Y):
    """Cross-entropy and its gradient with respect to the flat parameters."""
    (W1, b1), (W2, b2), (W3, b3) = unpack(flat, dims)
    a1, a2, P = _forward_cache(flat, dims, X)
    N = X.shape[0]
    loss = float(-(Y * np.log(np.maximum(P, EPS))).sum() / N)
    # softmax + cross-entropy: output error is (P - Y)
    d3 = (P - Y) / N
    d2 = (d3 @ W3.T) * (1.0 - a2 * a2)
    d1 = (d2 @ W2.T) * (1.0 - a1 * a1)
    grad = np.concatenate([
        (X.T @ d1).ravel(), d1.sum(axis=0),
        (a1.T @ d2).ravel(), d2.sum(axis=0),
        (a2.T @ d3).ravel(), d3.sum(axis=0),
    ])
    return loss, grad


def gradient(net: FusionNet, inputs, targets) -> np.ndarray:
    X = np.atleast_2d(np.asarray(inputs, dtype=float))
    Y = np.atleast_2d(np.asarray(targets, dtype=float))
    return loss_and_gradient(net.params, net.layer_dims, X, Y)[1]


@dataclass
class TrainConfig:
    """``validation_fraction = 0`` trains on every row with no early stopping."""

    max_epochs: int = 1000
    validation_fraction: float = 0.2
    patience: int = 50
    grad_tol: float = 1e-6
    seed: int = 0
    sigma: float = 1e-4
    lambda_init: float = 1e-6

    def __post_init__(self):
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in [0, 1)")
        if self.sigma <= 0 or self.lambda_init < 0:
            raise ValueError("sigma must be > 0 and lambda_init >= 0")


@dataclass
class ScgState:
    """Mutable SCG bookkeeping between iterations."""

    sigma: float
    lam: float
    lam_bar: float = 0.0
    direction: np.ndarray | None = None
    steepness: np.ndarray | None = None
    success: bool = True
    iteration: int = 0
    delta: float = 0.0


@dataclass
class TraceRow:
    iteration: int
    train_loss: float
    val_loss: float
    accepted: bool


@dataclass
class TrainResult:
    net: FusionNet
    trace: list = field(default_factory=list)
    stop_reason: str = ""


def train_scg(net: FusionNet, inputs, targets, config: TrainConfig | None = None) -> TrainResult:
    """Train ``net`` by scaled conjugate gradient.

    A trial step is accepted only when the comparison ratio (actual over
    predicted reduction) is positive, so the training loss over accepted
    steps never increases. Training stops at ``max_epochs`` iterations (one
    iteration per accepted or rejected step), when the gradient norm drops
    below ``grad_tol``, or after ``patience`` iterations without improvement
    of the validation loss; in the last case the best-validation parameters
    are returned.
    """
    config = config or TrainConfig()
    X = np.atleast_2d(np.asarray(inputs, dtype=float))
    Y = np.atleast_2d(np.asarray(targets, dtype=float))
    if X.shape[0] == 0:
        raise ValueError("empty training set")
    if X.shape[0] != Y.shape[0] or X.shape[1] != net.layer_dims[0] or Y.shape[1] != net.layer_dims[3]:
        raise ValueError("inputs/targets do not match the network dimensions")

    X_val = Y_val = None
    if config.validation_fraction > 0:
        kept, held = stratified_holdout(Y.argmax(axis=1), config.validation_fraction, config.seed)
        if held.size:
            X_val, Y_val = X[held], Y[held]
            X, Y = X[kept], Y[kept]

    dims = net.layer_dims

    def f(w):
        return loss_and_gradient(w, dims, X, Y)

    def val_loss(w):
        if X_val is None:
            return float("nan")
        return cross_entropy(Y_val, _forward_cache(w, dims, X_val)[2])

    w = net.params.copy()
    E, g = f(w)
    if not np.isfinite(E):
        raise FloatingPointError("non-finite loss at iteration 0")
    state = ScgState(sigma=config.sigma, lam=config.lambda_init)
    r = -g
    p = r.copy()
    n_w = w.size
    best_val = val_loss(w)
    best_w = w.copy()
    since_best = 0
    trace = []
    stop = "max_epochs"

    for k in range(1, config.max_epochs + 1):
        state.iteration = k
        if np.linalg.norm(r) < config.grad_tol:
            stop = "grad_tol"
            break
        p2 = float(p @ p)
        if state.success:
            sig_k = state.sigma / math.sqrt(p2)
            _, g_s = f(w + sig_k * p)
            s = (g_s + r) / sig_k  # r = -E'(w)
            state.delta = float(p @ s)
        state.delta += (state.lam - state.lam_bar) * p2
        if state.delta <= 0:
            state.lam_bar = 2.0 * (state.lam - state.delta / p2)
            state.delta = -state.delta + state.lam * p2
            state.lam = state.lam_bar
        mu = float(p @ r)
        if mu <= 0:
            # not a descent direction: restart along steepest descent
            p = r.copy()
            state.success = True
            state.lam_bar = 0.0
            trace.append(TraceRow(k, E, val_loss(w), False))
            continue
        alpha = mu / state.delta
        w_new = w + alpha * p
        E_new, g_new = f(w_new)
        if not np.isfinite(E_new):
            raise FloatingPointError(f"non-finite loss at iteration {k}")
        Delta = 2.0 * state.delta * (E - E_new) / (mu * mu)
        accepted = Delta > 0
        if accepted:
            w = w_new
            E = E_new
            r_old = r
            r = -g_new
            state.lam_bar = 0.0
            state.success = True
            if k % n_w == 0:
                p = r.copy()
            else:
                beta = (float(r @ r) - float(r @ r_old)) / mu
                p = r + beta * p
            if Delta >= 0.75:
                state.lam = 0.25 * state.lam
        else:
            state.lam_bar = state.lam
            state.success = False
        if Delta < 0.25:
            state.lam = state.lam + state.delta * (1.0 - Delta) / p2
        state.direction, state.steepness = p, r

        v = val_loss(w)
        trace.append(TraceRow(k, E, v, bool(accepted)))
        if X_val is not None:
            if v < best_val:
                best_val, best_w, since_best = v, w.copy(), 0
            else:
                since_best += 1
                if since_best >= config.patience:
                    stop = "early_stop"
                    break

    final = best_w if X_val is not None else w
    return TrainResult(net.with_params(final), trace, stop)


def nn_fuse_decision(net: FusionNet, p_x, p_s):
    """Predicted class(es): argmax of the net output, ties to the lowest index."""
    p_x = np.asarray(p_x, dtype=float)
    p_s = np.asarray(p_s, dtype=float)
    if p_x.shape != p_s.shape:
        raise ValueError("posterior lengths differ")
    out = forward(net, np.concatenate([p_x, p_s], axis=-1))
    return out.argmax(axis=-1) if out.ndim == 2 else int(out.argmax())


def nn_fuse(net: FusionNet, p_x, p_s) -> np.ndarray:
    return forward(net, np.concatenate([np.atleast_2d(p_x), np.atleast_2d(p_s)], axis=1))


def write_trace(path: str, trace) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "train_loss", "val_loss", "accepted"])
        for row in trace:
            w.writerow([row.iteration, repr(row.train_loss), repr(row.val_loss), int(row.accepted)])


def save_net(path: str, net: FusionNet) -> None:
    with open(path, "w") as fh:
        json.dump(net.to_dict(), fh)
        fh.write("\n")


def load_net(path: str) -> FusionNet:
    with open(path) as fh:
        return FusionNet.from_dict(json.load(fh))
