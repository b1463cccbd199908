"""Shallow MLP with hand-written backpropagation.

Architecture: input N -> hidden layers (LeakyReLU, slope 0.1) -> linear
output. Three loss heads share the same backward pass: cosine distance for
coefficient regression, softmax cross-entropy for joint sign classification,
and per-coordinate logistic loss for the factorized sign head.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .errors import NumericError, ParseError

HIDDEN_SLOPE = 0.1
NORM_EPS = 1e-12
ACTIVATION_TAG = "leaky_relu_0.1"
CHECKPOINT_VERSION = 1


@dataclass
class MLPParams:
    """Network weights plus the input standardization fitted on the training
    distribution (``shift``/``scale`` are applied to inputs before layer 1;
    they are constants, not trained)."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    hidden_slope: float = HIDDEN_SLOPE
    input_shift: np.ndarray | None = None
    input_scale: np.ndarray | None = None

    @property
    def layer_dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def copy(self) -> "MLPParams":
        return MLPParams(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            hidden_slope=self.hidden_slope,
            input_shift=None if self.input_shift is None else self.input_shift.copy(),
            input_scale=None if self.input_scale is None else self.input_scale.copy(),
        )


def init_params(layer_dims: list[int], rng: np.random.Generator) -> MLPParams:
    """He-style uniform init scaled for the LeakyReLU gain; zero biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        limit = np.sqrt(6.0 / ((1.0 + HIDDEN_SLOPE**2) * fan_in))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MLPParams(weights=weights, biases=biases)


def leaky_relu(z: np.ndarray, slope: float = HIDDEN_SLOPE) -> np.ndarray:
    return np.maximum(slope * z, z)


def forward(params: MLPParams, x: np.ndarray) -> np.ndarray:
    """Network output for a single input vector or a (B, N) batch."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    out = _forward_cached(params, np.atleast_2d(x))[0][-1]
    return out[0] if single else out


def _forward_cached(params: MLPParams, x: np.ndarray):
    if params.input_shift is not None:
        x = (x - params.input_shift) / params.input_scale
    acts = [x]
    preacts = []
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        if h.shape[1] != w.shape[0]:
            raise ValueError(f"layer {i}: input dim {h.shape[1]} != {w.shape[0]}")
        z = h @ w + b
        preacts.append(z)
        h = z if i == last else leaky_relu(z, params.hidden_slope)
        acts.append(h)
    return acts, preacts


def cosine_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean of ``1 - cos(pred, target)`` over a batch; in [0, 2].

    The prediction norm in the denominator is clamped at 1e-12 so a
    pathological zero prediction yields a finite loss instead of NaN.
    """
    loss, _ = _cosine_loss_grad(np.atleast_2d(pred), np.atleast_2d(target))
    return loss


def _cosine_loss_grad(pred: np.ndarray, target: np.ndarray):
    tnorm = np.linalg.norm(target, axis=1, keepdims=True)
    if np.any(tnorm == 0):
        raise ValueError("cosine loss target must be nonzero")
    v = target / tnorm
    pnorm = np.linalg.norm(pred, axis=1, keepdims=True)
    denom = np.maximum(pnorm, NORM_EPS)
    dot = np.sum(pred * v, axis=1, keepdims=True)
    losses = 1.0 - dot / denom
    # d/dpred of -dot/denom; the pnorm factor vanishes in the clamped branch
    safe = pnorm > NORM_EPS
    dpred = -v / denom + np.where(safe, dot / denom**2 * pred / np.where(safe, pnorm, 1.0), 0.0)
    return float(losses.mean()), dpred / pred.shape[0]


def _softmax_ce_grad(logits: np.ndarray, labels: np.ndarray):
    z = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logz
    rows = np.arange(logits.shape[0])
    loss = float(-logp[rows, labels].mean())
    p = np.exp(logp)
    p[rows, labels] -= 1.0
    return loss, p / logits.shape[0]


def _sigmoid_bce_grad(logits: np.ndarray, targets: np.ndarray):
    z, t = logits, targets
    elem = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))
    sig = 1.0 / (1.0 + np.exp(-z))
    return float(elem.mean()), (sig - t) / z.size


_LOSSES = {
    "cosine": _cosine_loss_grad,
    "softmax_ce": _softmax_ce_grad,
    "sigmoid_bce": _sigmoid_bce_grad,
}


def loss_and_grads(params: MLPParams, x: np.ndarray, y: np.ndarray, loss: str = "cosine"):
    """Mean loss over the batch and exact gradients for every weight/bias."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    acts, preacts = _forward_cached(params, x)
    value, dz = _LOSSES[loss](acts[-1], y)
    grads_w = [None] * len(params.weights)
    grads_b = [None] * len(params.biases)
    for layer in range(len(params.weights) - 1, -1, -1):
        grads_w[layer] = acts[layer].T @ dz
        grads_b[layer] = dz.sum(axis=0)
        if layer > 0:
            da = dz @ params.weights[layer].T
            dz = da * np.where(preacts[layer - 1] > 0, 1.0, params.hidden_slope)
    return value, grads_w, grads_b


def batch_loss(params: MLPParams, x: np.ndarray, y: np.ndarray, loss: str = "cosine") -> float:
    out = _forward_cached(params, np.atleast_2d(np.asarray(x, dtype=float)))[0][-1]
    return _LOSSES[loss](out, y)[0]


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 500
    patience: int = 50
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if min(self.learning_rate, self.batch_size, self.max_epochs, self.patience) <= 0:
            raise ValueError("learning_rate, batch_size, max_epochs, patience must be positive")
        if self.patience > self.max_epochs:
            raise ValueError("patience cannot exceed max_epochs")


@dataclass
class TrainReport:
    train_curve: list[float] = field(default_factory=list)
    val_curve: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = np.inf
    seconds: float = 0.0

    @property
    def epochs_run(self) -> int:
        return len(self.val_curve)


def train(
    x_train: np.ndarray,
    y_train: np.ndarray,
    x_val: np.ndarray,
    y_val: np.ndarray,
    cfg: TrainConfig,
    *,
    loss: str = "cosine",
    init: MLPParams | None = None,
    hidden_dims: tuple[int, ...] = (64, 32),
    output_dim: int | None = None,
) -> tuple[MLPParams, TrainReport]:
    """Adam training with shuffled mini-batches and early stopping.

    Keeps the parameters of the best validation epoch; stops after
    ``cfg.patience`` epochs without improvement. Fully deterministic for a
    fixed config seed (and fixed ``init``, when transferring weights).
    """
    x_train = np.asarray(x_train, dtype=float)
    x_val = np.asarray(x_val, dtype=float)
    if x_train.ndim != 2 or x_val.ndim != 2:
        raise ValueError("training inputs must be 2-D (samples x features)")
    rng = np.random.default_rng(cfg.seed)
    if init is not None:
        # transfer keeps the source network's input standardization
        params = init.copy()
    else:
        if output_dim is None:
            y_arr = np.asarray(y_train)
            output_dim = y_arr.shape[1] if y_arr.ndim == 2 else int(y_arr.max()) + 1
        dims = [x_train.shape[1], *hidden_dims, output_dim]
        params = init_params(dims, rng)
        params.input_shift = x_train.mean(axis=0)
        params.input_scale = np.maximum(x_train.std(axis=0), 1e-8)

    m_w = [np.zeros_like(w) for w in params.weights]
    v_w = [np.zeros_like(w) for w in params.weights]
    m_b = [np.zeros_like(b) for b in params.biases]
    v_b = [np.zeros_like(b) for b in params.biases]
    step = 0

    report = TrainReport()
    best_params = params.copy()
    since_best = 0
    t0 = time.perf_counter()
    n = x_train.shape[0]
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            value, gw, gb = loss_and_grads(params, x_train[idx], _take(y_train, idx), loss)
            epoch_loss += value * idx.size
            step += 1
            bc1 = 1.0 - cfg.adam_beta1**step
            bc2 = 1.0 - cfg.adam_beta2**step
            for i in range(len(params.weights)):
                for g, p, m, v in ((gw[i], params.weights[i], m_w[i], v_w[i]),
                                   (gb[i], params.biases[i], m_b[i], v_b[i])):
                    m *= cfg.adam_beta1
                    m += (1 - cfg.adam_beta1) * g
                    v *= cfg.adam_beta2
                    v += (1 - cfg.adam_beta2) * g * g
                    p -= cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + cfg.adam_eps)
        train_loss = epoch_loss / n
        val_loss = batch_loss(params, x_val, y_val, loss)
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise NumericError(
                f"training diverged at epoch {epoch}: train={train_loss!r} val={val_loss!r}"
            )
        report.train_curve.append(train_loss)
        report.val_curve.append(val_loss)
        if val_loss < report.best_val_loss:
            report.best_val_loss = val_loss
            report.best_epoch = epoch
            best_params = params.copy()
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break
    report.seconds = time.perf_counter() - t0
    return best_params, report


def _take(y, idx):
    y = np.asarray(y)
    return y[idx]


def predict_coefficients(params: MLPParams, a: np.ndarray) -> np.ndarray:
    """Unit-normalized coefficient prediction; rows or a single vector."""
    out = forward(params, a)
    single = out.ndim == 1
    out2 = np.atleast_2d(out)
    norms = np.linalg.norm(out2, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise NumericError("prediction has zero norm; cannot normalize")
    out2 = out2 / norms
    return out2[0] if single else out2


def predict_hamiltonian(params: MLPParams, a: np.ndarray, ops) -> tuple[np.ndarray, np.ndarray]:
    """Unit-normalized coefficients and the assembled reconstruction."""
    from .spectral import assemble

    c_hat = predict_coefficients(params, np.asarray(a, dtype=float))
    return c_hat, assemble(c_hat, ops)


def save_checkpoint(
    params: MLPParams,
    path: str | Path,
    *,
    train_config: TrainConfig | None = None,
    operator_set_hash: str | None = None,
    extra: dict | None = None,
) -> None:
    doc = {
        "version": CHECKPOINT_VERSION,
        "layer_dims": params.layer_dims,
        "activation": ACTIVATION_TAG,
        "weights": [w.tolist() for w in params.weights],
        "biases": [b.tolist() for b in params.biases],
        "input_shift": None if params.input_shift is None else params.input_shift.tolist(),
        "input_scale": None if params.input_scale is None else params.input_scale.tolist(),
        "train_config": asdict(train_config) if train_config else None,
        "operator_set_hash": operator_set_hash,
    }
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path: str | Path) -> tuple[MLPParams, dict]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON: {exc.msg}") from exc
    for key in ("version", "layer_dims", "activation", "weights", "biases"):
        if key not in doc:
            raise ParseError(f"{path}: checkpoint missing {key!r}")
    if doc["version"] != CHECKPOINT_VERSION or doc["activation"] != ACTIVATION_TAG:
        raise ParseError(f"{path}: unsupported checkpoint version/activation")
    weights = [np.asarray(w, dtype=float) for w in doc["weights"]]
    biases = [np.asarray(b, dtype=float) for b in doc["biases"]]
    shift = doc.get("input_shift")
    scale = doc.get("input_scale")
    params = MLPParams(
        weights=weights,
        biases=biases,
        input_shift=None if shift is None else np.asarray(shift, dtype=float),
        input_scale=None if scale is None else np.asarray(scale, dtype=float),
    )
    if params.layer_dims != list(doc["layer_dims"]):
        raise ParseError(f"{path}: layer_dims disagree with stored weight shapes")
    for w, b in zip(weights, biases):
        if w.ndim != 2 or b.shape != (w.shape[1],):
            raise ParseError(f"{path}: inconsistent weight/bias shapes")
    meta = {k: v for k, v in doc.items() if k not in ("weights", "biases")}
    return params, meta
