"""
Compact 1-D convolutional network for stiffness estimation, written on numpy.

Layout: [conv -> ReLU -> max-pool] blocks, a dense ReLU layer and either a scalar
regression head or a softmax classification head. The scalar head also reads the
pooled features through a linear skip path, fitted by ridge regression before the
first epoch, so predictions keep following the response amplitude past the stiffest
training label. Training uses Adam with a step learning-rate schedule.
"""

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .config import ConvSpec, TrainSchedule
from .kernel_machine import Preprocessor

logger = logging.getLogger(__name__)

MAX_PARAMETERS = 100_000

Params = Dict[str, np.ndarray]


def feature_length(spec: ConvSpec) -> int:
    """Length of each channel after the last pooling stage."""
    length = spec.input_len
    for k in spec.kernel_lens:
        length = (length - k + 1) // spec.pool
        if length < 1:
            raise ValueError(f"Input of {spec.input_len} samples is too short for kernels {spec.kernel_lens}")
    return length


@dataclass
class ConvModel:
    """Network weights plus the scaling needed to map windows in and predictions out."""

    spec: ConvSpec
    params: Params
    preprocessor: Preprocessor = field(default_factory=Preprocessor)
    target_mean: float = 0.0
    target_scale: float = 1.0
    classes: Optional[List[float]] = None

    @property
    def n_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    @property
    def dtype(self) -> np.dtype:
        return self.params["head.w"].dtype

    def as_float32(self) -> "ConvModel":
        return replace(self, params={k: v.astype(np.float32) for k, v in self.params.items()})


def build_conv_model(spec: ConvSpec, classes: Optional[Sequence[float]] = None) -> ConvModel:
    """
    Initialise a network with He-normal weights and zero biases.

    Scalar heads start with zero output weights, so an untrained network predicts
    the target mean.

    Args:
        spec: Architecture
        classes: Class labels for a softmax head (length must equal spec.n_classes)

    Raises:
        ValueError: If the architecture exceeds the parameter budget or the classes
            do not match the head
    """
    rng = np.random.default_rng(spec.seed)
    params: Params = {}
    in_channels = 1
    for i, (out_channels, k) in enumerate(zip(spec.channels, spec.kernel_lens)):
        fan_in = in_channels * k
        params[f"conv{i}.w"] = rng.normal(0.0, np.sqrt(2.0 / fan_in), (out_channels, in_channels, k))
        params[f"conv{i}.b"] = np.zeros(out_channels)
        in_channels = out_channels
    width = pooled_width = in_channels * feature_length(spec)
    if spec.hidden:
        params["dense.w"] = rng.normal(0.0, np.sqrt(2.0 / width), (width, spec.hidden))
        params["dense.b"] = np.zeros(spec.hidden)
        width = spec.hidden
    if spec.head == "scalar":
        params["head.w"] = np.zeros((width, 1))
        params["head.b"] = np.zeros(1)
        if spec.linear_skip and spec.hidden:
            params["skip.w"] = np.zeros((pooled_width, 1))
    else:
        params["head.w"] = rng.normal(0.0, np.sqrt(1.0 / width), (width, spec.n_classes))
        params["head.b"] = np.zeros(spec.n_classes)

    if spec.head == "softmax":
        if classes is None or len(classes) != spec.n_classes:
            raise ValueError(f"Softmax head needs {spec.n_classes} class labels, got {classes}")
        classes = [float(c) for c in classes]
    model = ConvModel(spec=spec, params=params, classes=classes)
    if model.n_parameters > MAX_PARAMETERS:
        raise ValueError(f"Network has {model.n_parameters} parameters, limit is {MAX_PARAMETERS}")
    logger.debug(f"Built {spec.head} network with {model.n_parameters} parameters")
    return model


def _conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    cols = sliding_window_view(x, w.shape[2], axis=2)
    return np.einsum("nclk,ock->nol", cols, w) + b[None, :, None], cols


def _conv_backward(
    dout: np.ndarray, cols: np.ndarray, w: np.ndarray, in_len: int
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    dw = np.einsum("nclk,nol->ock", cols, dout)
    db = dout.sum(axis=(0, 2))
    dx = np.zeros((dout.shape[0], w.shape[1], in_len), dtype=dout.dtype)
    out_len = dout.shape[2]
    for k in range(w.shape[2]):
        dx[:, :, k : k + out_len] += np.einsum("nol,oc->ncl", dout, w[:, :, k])
    return dx, dw, db


def _pool_forward(x: np.ndarray, pool: int) -> Tuple[np.ndarray, np.ndarray]:
    n, c, length = x.shape
    pooled_len = length // pool
    grouped = x[:, :, : pooled_len * pool].reshape(n, c, pooled_len, pool)
    index = grouped.argmax(axis=-1)
    return np.take_along_axis(grouped, index[..., None], axis=-1)[..., 0], index


def _pool_backward(dout: np.ndarray, index: np.ndarray, pool: int, in_len: int) -> np.ndarray:
    n, c, pooled_len = dout.shape
    grouped = np.zeros((n, c, pooled_len, pool), dtype=dout.dtype)
    np.put_along_axis(grouped, index[..., None], dout[..., None], axis=-1)
    dx = np.zeros((n, c, in_len), dtype=dout.dtype)
    dx[:, :, : pooled_len * pool] = grouped.reshape(n, c, pooled_len * pool)
    return dx


def forward(model: ConvModel, x: np.ndarray) -> Tuple[np.ndarray, Dict[str, object]]:
    """
    Run the network on a batch of preprocessed windows.

    Args:
        model: Network
        x: Array of shape (batch, input_len)

    Returns:
        (head outputs of shape (batch, outputs), cache for backward)
    """
    p = model.params
    spec = model.spec
    h = np.asarray(x, dtype=model.dtype)[:, None, :]
    cache: Dict[str, object] = {"blocks": []}
    for i in range(len(spec.channels)):
        in_len = h.shape[2]
        z, cols = _conv_forward(h, p[f"conv{i}.w"], p[f"conv{i}.b"])
        a = np.maximum(z, 0)
        h, index = _pool_forward(a, spec.pool)
        cache["blocks"].append((cols, in_len, z, index))
    cache["pooled_shape"] = h.shape
    flat = h.reshape(h.shape[0], -1)
    cache["flat"] = flat
    if spec.hidden:
        z = flat @ p["dense.w"] + p["dense.b"]
        cache["dense_z"] = z
        flat = np.maximum(z, 0)
    cache["head_in"] = flat
    out = flat @ p["head.w"] + p["head.b"]
    if "skip.w" in p:
        out = out + cache["flat"] @ p["skip.w"]
    return out, cache


def backward(model: ConvModel, cache: Dict[str, object], grad_out: np.ndarray) -> Params:
    """Gradients of the loss with respect to every parameter, given dLoss/dOutput."""
    p = model.params
    spec = model.spec
    grads: Params = {
        "head.w": cache["head_in"].T @ grad_out,
        "head.b": grad_out.sum(axis=0),
    }
    d = grad_out @ p["head.w"].T
    if spec.hidden:
        d = d * (cache["dense_z"] > 0)
        grads["dense.w"] = cache["flat"].T @ d
        grads["dense.b"] = d.sum(axis=0)
        d = d @ p["dense.w"].T
    if "skip.w" in p:
        grads["skip.w"] = cache["flat"].T @ grad_out
        d = d + grad_out @ p["skip.w"].T
    d = d.reshape(cache["pooled_shape"])
    for i in reversed(range(len(spec.channels))):
        cols, in_len, z, index = cache["blocks"][i]
        d = _pool_backward(d, index, spec.pool, z.shape[2]) * (z > 0)
        d, grads[f"conv{i}.w"], grads[f"conv{i}.b"] = _conv_backward(d, cols, p[f"conv{i}.w"], in_len)
    return grads


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def loss_and_grad(model: ConvModel, x: np.ndarray, targets: np.ndarray) -> Tuple[float, Params]:
    """
    Batch loss and parameter gradients.

    Scalar heads use mean squared error on standardized targets; softmax heads use
    mean cross-entropy on integer class indices.
    """
    out, cache = forward(model, x)
    n = out.shape[0]
    if model.spec.head == "scalar":
        diff = out[:, 0] - np.asarray(targets, dtype=out.dtype)
        loss = float(np.mean(diff**2))
        grad_out = (2.0 / n) * diff[:, None]
    else:
        index = np.asarray(targets, dtype=np.int64)
        probs = _softmax(out)
        loss = float(-np.mean(np.log(probs[np.arange(n), index] + 1e-12)))
        grad_out = probs
        grad_out[np.arange(n), index] -= 1.0
        grad_out /= n
    return loss, backward(model, cache, grad_out)


class Adam:
    """Adam optimizer over a parameter dictionary, updated in place."""

    def __init__(self, params: Params, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: Params, grads: Params, lr: float):
        self.t += 1
        for k in params:
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * grads[k]
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * grads[k] ** 2
            m_hat = self.m[k] / (1 - self.beta1**self.t)
            v_hat = self.v[k] / (1 - self.beta2**self.t)
            params[k] -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class TrainHistory:
    train_loss: List[float] = field(default_factory=list)
    val_loss: List[float] = field(default_factory=list)
    learning_rate: List[float] = field(default_factory=list)


def fit_linear_skip(model: ConvModel, x: np.ndarray, y: np.ndarray, ridge: float = 1e-3) -> float:
    """
    Fit the skip path and output bias by ridge regression on the pooled features.

    The dense path is left as it is and its current output is treated as an offset.

    Args:
        model: Scalar-head network with a skip path
        x: Preprocessed windows
        y: Standardized targets
        ridge: Penalty relative to the mean feature variance

    Returns:
        Training MSE of the fitted model (standardized units)
    """
    p = model.params
    if "skip.w" not in p:
        raise ValueError("Network has no linear skip path")
    p["skip.w"][...] = 0.0
    p["head.b"][...] = 0.0
    out, cache = forward(model, x)
    residual = y - out[:, 0]
    features = cache["flat"]
    mean = features.mean(axis=0)
    centred = features - mean
    gram = centred.T @ centred
    penalty = max(ridge * np.trace(gram) / len(gram), 1e-12)
    w = np.linalg.solve(gram + penalty * np.eye(len(gram)), centred.T @ (residual - residual.mean()))
    p["skip.w"][:, 0] = w
    p["head.b"][0] = residual.mean() - mean @ w
    fitted = features @ w + p["head.b"][0]
    return float(np.mean((residual - fitted) ** 2))


def _encode_targets(model: ConvModel, targets: np.ndarray) -> np.ndarray:
    if model.spec.head == "scalar":
        return (targets - model.target_mean) / model.target_scale
    lookup = {c: i for i, c in enumerate(model.classes)}
    try:
        return np.array([lookup[float(t)] for t in targets], dtype=np.int64)
    except KeyError as e:
        raise ValueError(f"Target {e.args[0]} is not one of the classes {model.classes}")


def train_conv(
    windows: np.ndarray,
    targets: Sequence[float],
    spec: ConvSpec = ConvSpec(),
    schedule: TrainSchedule = TrainSchedule(),
) -> Tuple[ConvModel, TrainHistory]:
    """
    Train the network with Adam and a step learning-rate schedule.

    Args:
        windows: Stiffness windows, one per row
        targets: Shore A per window (class labels for a softmax head)
        spec: Architecture
        schedule: Optimizer, schedule and split settings

    Returns:
        (trained model, per-epoch loss and learning-rate history)
    """
    raw = np.atleast_2d(np.asarray(windows, dtype=np.float64))
    targets = np.asarray(targets, dtype=np.float64)
    if raw.shape[1] != spec.input_len:
        raise ValueError(f"Windows have {raw.shape[1]} samples, network expects {spec.input_len}")
    classes = sorted(set(targets.tolist())) if spec.head == "softmax" else None
    if classes is not None and len(classes) != spec.n_classes:
        spec = spec.model_copy(update={"n_classes": len(classes)})
    model = build_conv_model(spec, classes)
    model.preprocessor = Preprocessor.fit(raw)
    if spec.head == "scalar":
        model.target_mean = float(targets.mean())
        model.target_scale = float(targets.std()) or 1.0

    x = model.preprocessor.transform(raw)
    y = _encode_targets(model, targets)
    rng = np.random.default_rng(schedule.seed)
    order = rng.permutation(len(x))
    n_val = int(round(schedule.validation_fraction * len(x)))
    val_idx, train_idx = order[:n_val], order[n_val:]
    if "skip.w" in model.params:
        mse = fit_linear_skip(model, x[train_idx], y[train_idx], schedule.skip_ridge)
        logger.debug(f"Linear skip path fitted: training loss {mse:.4f}")

    optimizer = Adam(model.params, schedule.beta1, schedule.beta2, schedule.adam_eps)
    history = TrainHistory()
    for epoch in range(schedule.epochs):
        lr = schedule.lr_at(epoch)
        epoch_idx = rng.permutation(train_idx)
        losses = []
        for start in range(0, len(epoch_idx), schedule.batch_size):
            batch = epoch_idx[start : start + schedule.batch_size]
            loss, grads = loss_and_grad(model, x[batch], y[batch])
            optimizer.step(model.params, grads, lr)
            losses.append(loss * len(batch))
        history.train_loss.append(float(np.sum(losses) / len(epoch_idx)))
        history.learning_rate.append(lr)
        if n_val:
            val_loss, _ = loss_and_grad(model, x[val_idx], y[val_idx])
            history.val_loss.append(val_loss)
        logger.debug(f"Epoch {epoch + 1}/{schedule.epochs}: lr={lr:.2e} loss={history.train_loss[-1]:.4f}")
    logger.info(f"Trained {spec.head} network: final training loss {history.train_loss[-1]:.4f}")
    return model, history


def _decode(model: ConvModel, out: np.ndarray) -> np.ndarray:
    if model.spec.head == "scalar":
        return np.clip(out[:, 0] * model.target_scale + model.target_mean, 0.0, 100.0)
    return np.array([model.classes[i] for i in np.argmax(out, axis=1)])


def predict_conv(model: ConvModel, window: np.ndarray) -> Tuple[float, float]:
    """
    Predict one window.

    Returns:
        (Shore A estimate or class label, elapsed milliseconds)
    """
    start = time.perf_counter()
    out, _ = forward(model, model.preprocessor.transform(window))
    value = float(_decode(model, out)[0])
    return value, (time.perf_counter() - start) * 1000.0


def predict_conv_batch(model: ConvModel, windows: np.ndarray) -> np.ndarray:
    out, _ = forward(model, model.preprocessor.transform(windows))
    return _decode(model, out)
