"""Trained-model container, prediction, tolerance accuracy and persistence."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..atomic import atomic_write_text
from ..errors import ConfigError, ContractError, TrainingError
from . import arima, lstm
from .arima import ArimaOrder
from .lstm import LstmConfig

KINDS = ("lstm", "arima", "seasonal_naive")


@dataclass(frozen=True)
class Normalization:
    min: float
    max: float

    @classmethod
    def fit(cls, series) -> "Normalization":
        series = np.asarray(series, dtype=float)
        return cls(float(series.min()), float(series.max()))

    @property
    def scale(self) -> float:
        span = self.max - self.min
        if span > 0:
            return span
        return abs(self.max) or 1.0

    def normalize(self, x):
        return (np.asarray(x, dtype=float) - self.min) / self.scale

    def denormalize(self, y):
        return np.asarray(y, dtype=float) * self.scale + self.min


@dataclass(eq=False)
class ForecastModel:
    kind: str
    parameters: dict[str, np.ndarray]
    normalization: Normalization
    trained_on: str = ""
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ContractError(f"unknown model kind {self.kind!r}")
        if self.normalization.max < self.normalization.min:
            raise ContractError("normalization max < min")
        for name, arr in self.parameters.items():
            if not np.all(np.isfinite(arr)):
                raise ContractError(f"parameter {name} is not finite")

    @property
    def lstm_config(self) -> LstmConfig:
        return LstmConfig(**self.config)

    @property
    def arima_order(self) -> ArimaOrder:
        return ArimaOrder(**self.config["order"])

    @property
    def horizon(self) -> int:
        if self.kind == "lstm":
            return self.lstm_config.horizon
        return int(self.config.get("horizon", 1))

    @property
    def required_window(self) -> int:
        """Minimum number of trailing observations ``predict_next`` needs."""
        if self.kind == "lstm":
            return self.lstm_config.input_window
        if self.kind == "seasonal_naive":
            return int(self.config["season"])
        return self.arima_order.ar_lags + 1

    def __eq__(self, other):
        if not isinstance(other, ForecastModel):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.normalization == other.normalization
            and self.trained_on == other.trained_on
            and self.config == other.config
            and self.parameters.keys() == other.parameters.keys()
            and all(np.array_equal(v, other.parameters[k]) for k, v in self.parameters.items())
        )


# -- training -----------------------------------------------------------------


def _check_series(series, minimum):
    series = np.asarray(series, dtype=float)
    if series.ndim != 1:
        raise ContractError("expected a one-dimensional series")
    if not np.all(np.isfinite(series)):
        raise TrainingError("series contains non-finite values")
    if len(series) < minimum:
        raise TrainingError(f"series length {len(series)} < required {minimum}")
    return series


def train_lstm_many(series_list, config: LstmConfig, names=None) -> list[ForecastModel]:
    """Train one LSTM per series, in lock-step. Series must share a length."""
    if not series_list:
        return []
    need = config.input_window + config.horizon + 1
    arrays = [_check_series(s, need) for s in series_list]
    if len({len(a) for a in arrays}) != 1:
        raise ContractError("series trained together must have equal length")
    norms = [Normalization.fit(a) for a in arrays]
    stacked = np.stack([n.normalize(a) for n, a in zip(norms, arrays)])
    params, _ = lstm.fit_stack(stacked, config)
    names = names or [""] * len(arrays)
    models = []
    for k, (norm, name) in enumerate(zip(norms, names)):
        p = {key: value.astype(np.float64) for key, value in lstm.unstack(params, k).items()}
        models.append(ForecastModel("lstm", p, norm, name, asdict(config)))
    return models


def train_lstm(series, config: LstmConfig, name: str = "") -> ForecastModel:
    return train_lstm_many([series], config, [name])[0]


def fit_arima(series, candidate_orders=None, name: str = "") -> ForecastModel:
    candidates = list(candidate_orders) if candidate_orders else arima.default_grid()
    series = _check_series(series, 3 * max(o.s for o in candidates))
    best, _ = arima.select_order(series, candidates)
    params = {"coef": np.array(best.coef, dtype=float)}
    config = {"order": best.order.as_dict(), "aic": best.aic, "horizon": 1}
    return ForecastModel("arima", params, Normalization.fit(series), name, config)


def seasonal_naive(series=None, season: int = 24, name: str = "", horizon: int = 1) -> ForecastModel:
    norm = Normalization.fit(series) if series is not None and len(series) else Normalization(0.0, 0.0)
    return ForecastModel("seasonal_naive", {}, norm, name, {"season": season, "horizon": horizon})


# -- prediction ---------------------------------------------------------------


def _check_window(model: ForecastModel, window):
    window = np.asarray(window, dtype=float)
    if window.ndim != 1:
        raise ContractError("window must be one-dimensional")
    if not np.all(np.isfinite(window)):
        raise ContractError("window contains NaN or infinite values")
    need = model.required_window
    if model.kind == "lstm" and len(window) != need:
        raise ContractError(f"LSTM window must have exactly {need} values, got {len(window)}")
    if len(window) < need:
        raise ContractError(f"{model.kind} window needs at least {need} values, got {len(window)}")
    return window


def predict_next(model: ForecastModel, recent_window) -> np.ndarray:
    """Forecast the next ``horizon`` hours after ``recent_window``; never negative."""
    window = _check_window(model, recent_window)
    if model.kind == "seasonal_naive":
        s = int(model.config["season"])
        out = np.array([window[len(window) - s + (k % s)] for k in range(model.horizon)])
    elif model.kind == "lstm":
        cfg = model.lstm_config
        x = model.normalization.normalize(window)[None, None, :, None]
        params = {k: v[None] for k, v in model.parameters.items()}
        out = model.normalization.denormalize(lstm.predict(params, x, cfg.activation)[0, 0])
    else:
        out = arima.forecast(model.arima_order, model.parameters["coef"], window, model.horizon)
    return np.maximum(out, 0.0)


def predict_lstm_batch(models: list[ForecastModel], windows) -> np.ndarray:
    """One-step forecasts for several LSTMs at once.

    ``windows`` is (K, B, input_window), one block of windows per model; returns
    (K, B, horizon) de-normalised and clamped.
    """
    windows = np.asarray(windows, dtype=float)
    if not models:
        return np.zeros((0,) + windows.shape[1:2] + (1,))
    cfg = models[0].lstm_config
    if windows.shape[0] != len(models) or windows.shape[2] != cfg.input_window:
        raise ContractError(f"windows {windows.shape} do not match {len(models)} models of window {cfg.input_window}")
    if not np.all(np.isfinite(windows)):
        raise ContractError("window contains NaN or infinite values")
    for m in models:
        if m.kind != "lstm" or m.lstm_config != cfg:
            raise ContractError("batched prediction needs LSTMs sharing one configuration")
    lows = np.array([m.normalization.min for m in models])[:, None, None]
    scales = np.array([m.normalization.scale for m in models])[:, None, None]
    params = lstm.stack([m.parameters for m in models])
    y = lstm.predict(params, (windows - lows) / scales, cfg.activation)
    return np.maximum(y * scales + lows, 0.0)


def one_step_predictions(model: ForecastModel, series, start: int) -> np.ndarray:
    """Forecast series[t] from series[:t] for every t >= start, without refitting."""
    series = np.asarray(series, dtype=float)
    if model.kind == "seasonal_naive":
        s = int(model.config["season"])
        if start < s:
            raise ContractError(f"start {start} < season {s}")
        return np.maximum(series[start - s : len(series) - s], 0.0)
    if model.kind == "lstm":
        w = model.lstm_config.input_window
        if start < w:
            raise ContractError(f"start {start} < input window {w}")
        idx = np.arange(start, len(series))[:, None] - w + np.arange(w)
        return predict_lstm_batch([model], series[idx][None])[0, :, 0]
    order = model.arima_order
    if start < order.ar_lags:
        raise ContractError(f"start {start} < {order.ar_lags} AR lags")
    preds = arima.one_step(order, model.parameters["coef"], series, order.ar_lags)
    return np.maximum(preds[start - order.ar_lags :], 0.0)


# -- accuracy -----------------------------------------------------------------


@dataclass(frozen=True)
class AccuracyReport:
    tolerance_abs: float
    n_points: int
    n_within: int

    @property
    def accuracy_pct(self) -> float:
        return 100.0 * self.n_within / self.n_points

    def as_dict(self):
        return {
            "tolerance_abs": self.tolerance_abs,
            "n_points": self.n_points,
            "n_within": self.n_within,
            "accuracy_pct": self.accuracy_pct,
        }


def accuracy(predictions, actuals, reference=None, tolerance_frac: float = 0.01, tolerance_abs: float | None = None):
    """Share of predictions within a band of ``tolerance_frac`` x max(reference).

    ``reference`` defaults to ``actuals``; pass the whole series so the band
    does not shrink when only a test slice is scored.
    """
    predictions = np.asarray(predictions, dtype=float).ravel()
    actuals = np.asarray(actuals, dtype=float).ravel()
    if predictions.size == 0 or actuals.size == 0:
        raise ContractError("accuracy needs at least one point")
    if predictions.shape != actuals.shape:
        raise ContractError(f"length mismatch: {predictions.size} predictions vs {actuals.size} actuals")
    if tolerance_abs is None:
        ref = actuals if reference is None else np.asarray(reference, dtype=float)
        tolerance_abs = tolerance_frac * float(np.max(ref))
    if tolerance_abs < 0 or math.isnan(tolerance_abs):
        raise ContractError("tolerance must be non-negative")
    within = int(np.count_nonzero(np.abs(predictions - actuals) <= tolerance_abs))
    return AccuracyReport(float(tolerance_abs), int(predictions.size), within)


# -- persistence --------------------------------------------------------------


def model_to_json(model: ForecastModel) -> dict:
    return {
        "kind": model.kind,
        "config": model.config,
        "normalization": [model.normalization.min, model.normalization.max],
        "trained_on": model.trained_on,
        "parameters": {
            name: {"shape": list(arr.shape), "data": [float(v) for v in arr.ravel()]}
            for name, arr in sorted(model.parameters.items())
        },
    }


def model_from_json(doc: dict) -> ForecastModel:
    try:
        params = {
            name: np.array(entry["data"], dtype=float).reshape(entry["shape"])
            for name, entry in doc["parameters"].items()
        }
        lo, hi = doc["normalization"]
        return ForecastModel(doc["kind"], params, Normalization(float(lo), float(hi)), doc.get("trained_on", ""), doc["config"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed model file: {exc}") from None


def dumps_model(model: ForecastModel) -> str:
    # repr-based float output keeps 17 significant digits where needed, so reloads are bit-exact
    return json.dumps(model_to_json(model), sort_keys=True, separators=(",", ":"))


def save_model(model: ForecastModel, path) -> None:
    atomic_write_text(Path(path), dumps_model(model) + "\n")


def load_model(path) -> ForecastModel:
    return model_from_json(json.loads(Path(path).read_text(encoding="utf-8")))
