"""Stacked LSTM regressor written directly against numpy.

All arrays carry a leading "model" axis of size K so that several
independent series can be trained in lock-step with the same Python
overhead as one. A single model is simply K == 1; every model in a stack
sees exactly the arithmetic it would see if trained alone.

Parameter layout (per model):
    W{l}  (in_l + H, 4H)   input and recurrent kernel, gate order i, f, o, g
    b{l}  (4H,)
    Wd    (H, horizon)     dense head on the last hidden state
    bd    (horizon,)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, ContractError, DivergenceError, TrainingError


@dataclass(frozen=True)
class LstmConfig:
    layers: int = 2
    units: int = 150
    activation: str = "relu"
    batch_size: int = 24
    epochs: int = 120
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    input_window: int = 24
    horizon: int = 1
    seed: int = 0
    precision: str = "float64"

    def __post_init__(self):
        for name in ("layers", "units", "batch_size", "epochs", "input_window", "horizon"):
            if getattr(self, name) < 1:
                raise ConfigError(f"LstmConfig.{name} must be >= 1")
        if self.activation not in ("relu", "tanh"):
            raise ConfigError(f"unsupported activation {self.activation!r}")
        if self.precision not in ("float64", "float32"):
            raise ConfigError(f"unsupported precision {self.precision!r}")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _act(name):
    # derivatives are written in terms of the activation's output
    if name == "relu":
        return lambda x: np.maximum(x, 0.0), lambda y: (y > 0).astype(y.dtype)
    return np.tanh, lambda y: 1.0 - y * y


def param_names(layers):
    names = []
    for layer in range(layers):
        names += [f"W{layer}", f"b{layer}"]
    return names + ["Wd", "bd"]


def init_params(config: LstmConfig, n_features: int = 1) -> dict[str, np.ndarray]:
    """Glorot-uniform kernels, unit forget-gate bias, zero elsewhere."""
    rng = np.random.default_rng(config.seed)
    H = config.units
    params = {}
    fan_in = n_features
    for layer in range(config.layers):
        rows = fan_in + H
        limit = np.sqrt(6.0 / (rows + 4 * H))
        params[f"W{layer}"] = rng.uniform(-limit, limit, size=(rows, 4 * H))
        bias = np.zeros(4 * H)
        bias[H : 2 * H] = 1.0
        params[f"b{layer}"] = bias
        fan_in = H
    limit = np.sqrt(6.0 / (H + config.horizon))
    params["Wd"] = rng.uniform(-limit, limit, size=(H, config.horizon))
    params["bd"] = np.zeros(config.horizon)
    return params


def stack(param_list):
    return {k: np.stack([p[k] for p in param_list]) for k in param_list[0]}


def unstack(params, k):
    return {name: np.array(v[k]) for name, v in params.items()}


def _n_layers(params):
    return sum(1 for k in params if k.startswith("W") and k != "Wd")


def forward(params, X, activation="relu"):
    """Run the stack over ``X`` of shape (K, B, T, F).

    Returns predictions (K, B, horizon) and the cache needed by ``backward``.
    """
    act, _ = _act(activation)
    K, B, T, _F = X.shape
    # time-major internally so per-step slices are contiguous
    inp = np.ascontiguousarray(X.transpose(2, 0, 1, 3))
    caches = []
    for layer in range(_n_layers(params)):
        W = params[f"W{layer}"]
        b = params[f"b{layer}"]
        n_in = inp.shape[-1]
        H = W.shape[-1] // 4
        if W.shape[-2] != n_in + H:
            raise ContractError(f"layer {layer} expects {W.shape[-2] - H} inputs, got {n_in}")
        Wh = W[:, n_in:]
        zx = np.matmul(inp, W[:, :n_in]) + b[:, None, :]
        hs = np.empty((T + 1, K, B, H), dtype=X.dtype)
        cs = np.empty((T + 1, K, B, H), dtype=X.dtype)
        hs[0] = 0.0
        cs[0] = 0.0
        gates = np.empty((T, K, B, 4 * H), dtype=X.dtype)
        acs = np.empty((T, K, B, H), dtype=X.dtype)
        for t in range(T):
            z = zx[t] + np.matmul(hs[t], Wh)
            gt = gates[t]
            gt[..., : 3 * H] = _sigmoid(z[..., : 3 * H])
            gt[..., 3 * H :] = act(z[..., 3 * H :])
            np.multiply(gt[..., H : 2 * H], cs[t], out=cs[t + 1])
            cs[t + 1] += gt[..., :H] * gt[..., 3 * H :]
            acs[t] = act(cs[t + 1])
            np.multiply(gt[..., 2 * H : 3 * H], acs[t], out=hs[t + 1])
        caches.append((inp, hs, cs, gates, acs))
        inp = hs[1:]
    h_last = inp[-1]
    y = np.matmul(h_last, params["Wd"]) + params["bd"][:, None, :]
    return y, (caches, h_last)


def backward(params, cache, dy, activation="relu"):
    """Backpropagation through time. ``dy`` is dLoss/dprediction, (K, B, horizon)."""
    _, dact = _act(activation)
    caches, h_last = cache
    grads = {}
    grads["Wd"] = np.matmul(h_last.transpose(0, 2, 1), dy)
    grads["bd"] = dy.sum(axis=1)
    d_out = np.matmul(dy, params["Wd"].transpose(0, 2, 1))
    dseq = None
    for layer in reversed(range(len(caches))):
        inp, hs, cs, gates, acs = caches[layer]
        W = params[f"W{layer}"]
        T, K, B, n_in = inp.shape
        H = W.shape[-1] // 4
        Wh_T = W[:, n_in:].transpose(0, 2, 1)
        dz_all = np.empty((T, K, B, 4 * H), dtype=dy.dtype)
        dh = d_out if dseq is None else dseq[T - 1]
        dc_next = np.zeros((K, B, H), dtype=dy.dtype)
        for t in reversed(range(T)):
            gt = gates[t]
            i, f, o, g = gt[..., :H], gt[..., H : 2 * H], gt[..., 2 * H : 3 * H], gt[..., 3 * H :]
            a = acs[t]
            dc = dc_next + dh * o * dact(a)
            dz = dz_all[t]
            dz[..., :H] = dc * g * i * (1.0 - i)
            dz[..., H : 2 * H] = dc * cs[t] * f * (1.0 - f)
            dz[..., 2 * H : 3 * H] = dh * a * o * (1.0 - o)
            dz[..., 3 * H :] = dc * i * dact(g)
            dc_next = dc * f
            if t:
                dh = np.matmul(dz, Wh_T)
                if dseq is not None:
                    dh += dseq[t - 1]
        flat_dz = dz_all.transpose(1, 0, 2, 3).reshape(K, T * B, 4 * H)
        flat_in = inp.transpose(1, 0, 2, 3).reshape(K, T * B, n_in)
        flat_h = hs[:-1].transpose(1, 0, 2, 3).reshape(K, T * B, H)
        dWx = np.matmul(flat_in.transpose(0, 2, 1), flat_dz)
        dWh = np.matmul(flat_h.transpose(0, 2, 1), flat_dz)
        grads[f"W{layer}"] = np.concatenate([dWx, dWh], axis=1)
        grads[f"b{layer}"] = flat_dz.sum(axis=1)
        if layer > 0:
            dseq = np.matmul(dz_all, W[:, :n_in].transpose(0, 2, 1))
    return grads


def mse_loss(params, X, Y, activation="relu"):
    """Per-model mean squared error, shape (K,)."""
    y, _ = forward(params, X, activation)
    return ((y - Y) ** 2).mean(axis=(1, 2))


def loss_and_gradients(params, X, Y, activation="relu"):
    if X.ndim != 4 or Y.ndim != 3 or X.shape[:2] != Y.shape[:2]:
        raise ContractError(f"batch shapes do not line up: X{X.shape} Y{Y.shape}")
    if Y.shape[2] != params["bd"].shape[-1]:
        raise ContractError(f"targets have horizon {Y.shape[2]}, model has {params['bd'].shape[-1]}")
    y, cache = forward(params, X, activation)
    diff = y - Y
    n = Y.shape[1] * Y.shape[2]
    loss = (diff**2).sum(axis=(1, 2)) / n
    grads = backward(params, cache, 2.0 * diff / n, activation)
    return loss, grads


def lstm_gradients(params, X, Y, activation="relu"):
    """Gradients of the per-model batch MSE with respect to every parameter."""
    return loss_and_gradients(params, X, Y, activation)[1]


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_windows(series, window, horizon):
    """Sliding (window -> horizon) pairs over a 1-D array."""
    series = np.asarray(series, dtype=float)
    n = series.shape[0] - window - horizon + 1
    if n < 1:
        raise TrainingError(f"series of length {series.shape[0]} too short for window {window}")
    idx = np.arange(n)[:, None]
    X = series[idx + np.arange(window)][..., None]
    Y = series[idx + window + np.arange(horizon)]
    return X, Y


def fit_stack(normalized, config: LstmConfig):
    """Train one model per row of ``normalized`` (K, N). Returns (params, losses)."""
    normalized = np.asarray(normalized, dtype=float)
    K, N = normalized.shape
    if N < config.input_window + config.horizon + 1:
        raise TrainingError(
            f"series length {N} < input_window + horizon + 1 = "
            f"{config.input_window + config.horizon + 1}"
        )
    pairs = [make_windows(row, config.input_window, config.horizon) for row in normalized]
    dtype = np.dtype(config.precision)
    X = np.stack([p[0] for p in pairs]).astype(dtype)
    Y = np.stack([p[1] for p in pairs]).astype(dtype)
    base = init_params(config)
    params = {k: np.repeat(v[None], K, axis=0).astype(dtype) for k, v in base.items()}
    opt = Adam(params, config.learning_rate, config.beta1, config.beta2, config.eps)
    order_rng = np.random.default_rng([config.seed, 1])
    n_win = X.shape[1]
    history = []
    for epoch in range(config.epochs):
        perm = order_rng.permutation(n_win)
        total = np.zeros(K)
        for start in range(0, n_win, config.batch_size):
            idx = perm[start : start + config.batch_size]
            # overflow shows up as a non-finite loss, reported below
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grads = loss_and_gradients(params, X[:, idx], Y[:, idx], config.activation)
                if not np.all(np.isfinite(loss)):
                    raise DivergenceError(epoch, float(loss[~np.isfinite(loss)][0]))
                opt.step(params, grads)
            total += loss * len(idx)
        history.append(total / n_win)
    for v in params.values():
        if not np.all(np.isfinite(v)):
            raise DivergenceError(config.epochs - 1, float("nan"))
    return params, np.array(history)


def predict(params, windows, activation="relu"):
    """Predict from windows of shape (K, B, T) or (K, B, T, F)."""
    windows = np.asarray(windows, dtype=float)
    if windows.ndim == 3:
        windows = windows[..., None]
    y, _ = forward(params, windows, activation)
    return y
