"""Next-hour demand forecasters: LSTM, seasonal ARIMA and seasonal-naive."""

from .arima import ArimaOrder, default_grid
from .lstm import LstmConfig
from .model import (
    AccuracyReport,
    ForecastModel,
    Normalization,
    accuracy,
    fit_arima,
    load_model,
    one_step_predictions,
    predict_lstm_batch,
    predict_next,
    save_model,
    seasonal_naive,
    train_lstm,
    train_lstm_many,
)

__all__ = [
    "AccuracyReport",
    "ArimaOrder",
    "ForecastModel",
    "LstmConfig",
    "Normalization",
    "accuracy",
    "default_grid",
    "fit_arima",
    "load_model",
    "one_step_predictions",
    "predict_lstm_batch",
    "predict_next",
    "save_model",
    "seasonal_naive",
    "train_lstm",
    "train_lstm_many",
]
