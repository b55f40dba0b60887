"""Multilayer perceptron classifier trained by scaled conjugate gradient.

tanh hidden layers, softmax output, mean cross-entropy loss, full-batch
training with Moller's scaled conjugate gradient (SCG): conjugate search
directions, a finite-difference Hessian-vector estimate along the
direction, and a Levenberg-Marquardt style scale ``lambda`` that keeps the
local quadratic model positive definite.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

CHANNEL_HIDDEN = (50, 40, 40)
ECU_HIDDEN = (20,)

_LAMBDA_MAX = 1e100


class TrainingError(ArithmeticError):
    """Loss or gradient became non-finite during training."""


@dataclass
class MlpModel:
    layer_sizes: list
    weights: list  # weights[l] has shape (layer_sizes[l], layer_sizes[l+1])
    biases: list
    norm_mean: np.ndarray
    norm_std: np.ndarray
    hidden_activation: str = "tanh"
    output_activation: str = "softmax"
    training: dict = field(default_factory=dict)

    def __post_init__(self):
        sizes = list(self.layer_sizes)
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise ValueError("weights/biases do not match layer_sizes")
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (sizes[l], sizes[l + 1]) or b.shape != (sizes[l + 1],):
                raise ValueError(f"layer {l}: shapes {W.shape}, {b.shape} do not chain")
        if self.norm_mean.shape != (sizes[0],) or self.norm_std.shape != (sizes[0],):
            raise ValueError("norm_params must have one entry per input")
        if np.any(self.norm_std <= 0):
            raise ValueError("norm_std entries must be positive")
        if self.hidden_activation != "tanh" or self.output_activation != "softmax":
            raise ValueError("only tanh hidden / softmax output activations are supported")

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_classes(self) -> int:
        return self.layer_sizes[-1]

    @property
    def n_params(self) -> int:
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def get_flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([W.ravel(), b]) for W, b in zip(self.weights, self.biases)])

    def set_flat(self, theta: np.ndarray) -> None:
        i = 0
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[l] = theta[i : i + W.size].reshape(W.shape).copy()
            i += W.size
            self.biases[l] = theta[i : i + b.size].copy()
            i += b.size

    def copy(self) -> "MlpModel":
        return MlpModel(
            list(self.layer_sizes),
            [W.copy() for W in self.weights],
            [b.copy() for b in self.biases],
            self.norm_mean.copy(),
            self.norm_std.copy(),
            self.hidden_activation,
            self.output_activation,
            dict(self.training),
        )

    # serialization

    def to_dict(self) -> dict:
        return {
            "schema": 1,
            "layer_sizes": list(map(int, self.layer_sizes)),
            "hidden_activation": self.hidden_activation,
            "output_activation": self.output_activation,
            "weights": [W.tolist() for W in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "norm_params": {"mean": self.norm_mean.tolist(), "std": self.norm_std.tolist()},
            "training": self.training,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpModel":
        if d.get("schema") != 1:
            raise ValueError(f"unsupported model schema {d.get('schema')!r}")
        return cls(
            list(d["layer_sizes"]),
            [np.asarray(W, dtype=np.float64).reshape(len(W), -1) for W in d["weights"]],
            [np.asarray(b, dtype=np.float64) for b in d["biases"]],
            np.asarray(d["norm_params"]["mean"], dtype=np.float64),
            np.asarray(d["norm_params"]["std"], dtype=np.float64),
            d.get("hidden_activation", "tanh"),
            d.get("output_activation", "softmax"),
            dict(d.get("training", {})),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MlpModel":
        return cls.from_dict(json.loads(text))


@dataclass
class TrainConfig:
    max_epochs: int = 2000
    grad_tol: float = 1e-7
    rng_seed: int = 0
    sigma0: float = 1e-4
    lambda0: float = 1e-6

    def __post_init__(self):
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if not self.grad_tol > 0:
            raise ValueError("grad_tol must be positive")
        if not (self.sigma0 > 0 and self.lambda0 > 0):
            raise ValueError("sigma0 and lambda0 must be positive")


@dataclass
class TrainTrace:
    epochs: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)
    lam: list = field(default_factory=list)
    stop_reason: str = ""

    def record(self, epoch, loss, gnorm, lam):
        self.epochs.append(epoch)
        self.loss.append(float(loss))
        self.grad_norm.append(float(gnorm))
        self.lam.append(float(lam))

    @property
    def epochs_run(self) -> int:
        return self.epochs[-1] if self.epochs else 0


def init_model(layer_sizes, seed=0) -> MlpModel:
    """Uniform weights in ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]``, zero biases."""
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2 or any(s < 1 for s in sizes):
        raise ValueError(f"need at least two layers of size >= 1, got {layer_sizes!r}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        lim = 1.0 / math.sqrt(fan_in)
        weights.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpModel(sizes, weights, biases, np.zeros(sizes[0]), np.ones(sizes[0]))


def _inputs(model: MlpModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != model.n_inputs:
        raise ValueError(f"expected inputs of width {model.n_inputs}, got shape {X.shape}")
    return (X - model.norm_mean) / model.norm_std


def _logits(model: MlpModel, Z) -> tuple[np.ndarray, list]:
    acts = [Z]
    h = Z
    last = len(model.weights) - 1
    for l, (W, b) in enumerate(zip(model.weights, model.biases)):
        a = h @ W + b
        if l < last:
            h = np.tanh(a)
            acts.append(h)
        else:
            return a, acts


def softmax(a: np.ndarray) -> np.ndarray:
    e = np.exp(a - a.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def forward(model: MlpModel, X) -> np.ndarray:
    """Class probabilities for raw (unstandardized) inputs.

    A 1-D input returns a 1-D probability vector.
    """
    one = np.ndim(X) == 1
    logits, _ = _logits(model, _inputs(model, X))
    P = softmax(logits)
    return P[0] if one else P


def _check_targets(model: MlpModel, y, n) -> np.ndarray:
    y = np.asarray(y)
    if y.shape != (n,):
        raise ValueError(f"{y.size} labels for {n} rows")
    y = y.astype(np.int64)
    if y.size and (y.min() < 0 or y.max() >= model.n_classes):
        raise ValueError(f"labels must lie in [0, {model.n_classes})")
    return y


def loss_and_gradient(model: MlpModel, X, y) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient w.r.t. the flat parameter vector.

    The flat layout matches :meth:`MlpModel.get_flat` (per layer: weights
    row-major, then biases).
    """
    Z = _inputs(model, X)
    m = Z.shape[0]
    if m == 0:
        raise ValueError("empty dataset")
    y = _check_targets(model, y, m)
    logits, acts = _logits(model, Z)
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    logp_true = shifted[np.arange(m), y] - lse
    loss = -logp_true.mean()

    delta = np.exp(shifted - lse[:, None])
    delta[np.arange(m), y] -= 1.0
    delta /= m
    grads = []
    for l in range(len(model.weights) - 1, -1, -1):
        h = acts[l]
        grads.append((model.biases[l].size, delta.sum(axis=0), h.T @ delta))
        if l:
            delta = (delta @ model.weights[l].T) * (1.0 - h * h)
    flat = [np.concatenate([gW.ravel(), gb]) for _, gb, gW in reversed(grads)]
    return float(loss), np.concatenate(flat)


def _loss_grad_at(model, theta, X, y):
    model.set_flat(theta)
    return loss_and_gradient(model, X, y)


def train_scg(model: MlpModel, X, y, cfg: TrainConfig | None = None) -> tuple[MlpModel, TrainTrace]:
    """Full-batch scaled conjugate gradient.

    One epoch is one SCG iteration. Training stops after ``max_epochs``
    epochs or once the gradient's infinity norm drops below ``grad_tol``,
    checked at the end of each epoch. Only steps that lower the loss are
    accepted, so the final loss never exceeds the initial one. Returns a
    trained copy of ``model`` and the per-epoch trace.
    """
    cfg = cfg or TrainConfig()
    model = model.copy()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.shape[0] == 0:
        raise ValueError("empty dataset")
    trace = TrainTrace()

    w = model.get_flat()
    n_params = w.size
    E, g = _loss_grad_at(model, w, X, y)
    _require_finite(E, g, 0)
    r = -g
    p = r.copy()
    lam, lam_bar = cfg.lambda0, 0.0
    success = True
    n_success = 0
    delta = 0.0
    trace.record(0, E, np.abs(g).max(), lam)

    for epoch in range(1, cfg.max_epochs + 1):
        pp = p @ p
        if pp == 0.0:
            trace.stop_reason = "zero search direction"
            trace.record(epoch, E, np.abs(g).max(), lam)
            break
        if success:
            if p @ r <= 0:  # lost descent; restart along steepest descent
                p = r.copy()
                pp = p @ p
            sig = cfg.sigma0 / math.sqrt(pp)
            _, g_plus = _loss_grad_at(model, w + sig * p, X, y)
            delta = p @ (g_plus - g) / sig
        delta += (lam - lam_bar) * pp
        if delta <= 0:
            lam_bar = 2.0 * (lam - delta / pp)
            delta = -delta + lam * pp
            lam = lam_bar
        mu = p @ r
        alpha = mu / delta
        w_new = w + alpha * p
        E_new, g_new = _loss_grad_at(model, w_new, X, y)
        _require_finite(E_new, g_new, epoch)
        comparison = 2.0 * delta * (E - E_new) / (mu * mu)

        if comparison >= 0:
            n_success += 1
            r_new = -g_new
            if n_success % n_params == 0:
                p = r_new.copy()
            else:
                beta = (r_new @ r_new - r_new @ r) / mu
                p = r_new + beta * p
            w, E, g, r = w_new, E_new, g_new, r_new
            lam_bar = 0.0
            success = True
            if comparison >= 0.75:
                lam *= 0.25
        else:
            lam_bar = lam
            success = False
        if comparison < 0.25:
            lam = min(lam + delta * (1.0 - comparison) / pp, _LAMBDA_MAX)

        gnorm = np.abs(g).max()
        trace.record(epoch, E, gnorm, lam)
        if gnorm < cfg.grad_tol:
            trace.stop_reason = "gradient below tolerance"
            break
    else:
        trace.stop_reason = "maximum epochs reached"

    model.set_flat(w)
    model.training = {
        "algorithm": "scg",
        "seed": cfg.rng_seed,
        "max_epochs": cfg.max_epochs,
        "grad_tol": cfg.grad_tol,
        "sigma0": cfg.sigma0,
        "lambda0": cfg.lambda0,
        "epochs_run": trace.epochs_run,
        "final_loss": trace.loss[-1],
        "final_grad_norm": trace.grad_norm[-1],
        "stop_reason": trace.stop_reason,
    }
    return model, trace


def _require_finite(E, g, epoch):
    if not (math.isfinite(E) and np.all(np.isfinite(g))):
        raise TrainingError(f"non-finite loss or gradient at epoch {epoch} (loss={E!r})")


def predict(model: MlpModel, X) -> tuple[np.ndarray, np.ndarray]:
    """Arg-max class (lowest index on ties) and its probability, per row."""
    P = np.atleast_2d(forward(model, X))
    labels = P.argmax(axis=1)
    return labels, P[np.arange(P.shape[0]), labels]


def standardization(X) -> tuple[np.ndarray, np.ndarray]:
    """Per-column mean and std; zero-spread columns get std 1."""
    X = np.asarray(X, dtype=np.float64)
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std[std <= 1e-12 * np.maximum(np.abs(mean), 1.0)] = 1.0
    return mean, std


class SCGClassifier(ClassifierMixin, BaseEstimator):
    """MLP classifier trained with scaled conjugate gradient.

    Parameters
    ----------
    hidden_layer_sizes : tuple of int
        Widths of the tanh hidden layers, e.g. ``(50, 40, 40)`` for the
        channel task or ``(20,)`` for the ECU task.
    max_epochs, grad_tol : int, float
        Stopping criteria; training ends at whichever comes first.
    sigma0, lambda0 : float
        SCG finite-difference step constant and initial scale.
    standardize : bool
        Z-score inputs with statistics of the training data. The statistics
        are stored in the model and reused at prediction time.
    random_state : int
        Seed for weight initialization.
    """

    def __init__(
        self,
        hidden_layer_sizes=ECU_HIDDEN,
        max_epochs=2000,
        grad_tol=1e-7,
        sigma0=1e-4,
        lambda0=1e-6,
        standardize=True,
        random_state=0,
    ):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.max_epochs = max_epochs
        self.grad_tol = grad_tol
        self.sigma0 = sigma0
        self.lambda0 = lambda0
        self.standardize = standardize
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        sizes = [X.shape[1], *self.hidden_layer_sizes, len(self.classes_)]
        model = init_model(sizes, self.random_state)
        if self.standardize:
            model.norm_mean, model.norm_std = standardization(X)
        cfg = TrainConfig(self.max_epochs, self.grad_tol, self.random_state, self.sigma0, self.lambda0)
        self.model_, self.trace_ = train_scg(model, X, y_idx, cfg)
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        return np.atleast_2d(forward(self.model_, X))

    def predict(self, X):
        P = self.predict_proba(X)
        return self.classes_[P.argmax(axis=1)]

    @classmethod
    def from_model(cls, model: MlpModel, classes=None) -> "SCGClassifier":
        """Wrap an already-trained model (e.g. loaded from JSON)."""
        est = cls(hidden_layer_sizes=tuple(model.layer_sizes[1:-1]))
        est.model_ = model
        est.classes_ = np.arange(model.n_classes) if classes is None else np.asarray(classes)
        est.n_features_in_ = model.n_inputs
        return est
