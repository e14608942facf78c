"""scikit-learn style wrappers around the forecaster and the cycle estimator."""

from __future__ import annotations

from collections import Counter

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .analysis import estimate_cycle_length, mse
from .config import RunConfig
from .data import SplitSpec, TimeSeriesDataset
from .model import model_forward
from .training import build_model, train


def check_series(X, min_steps: int = 2) -> np.ndarray:
    """Validate a (time x channels) series; a 1-D input becomes one channel."""
    X = check_array(X, dtype=np.float64, ensure_2d=False)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ValueError(f"expected a (time x channels) array, got shape {X.shape}")
    if X.shape[0] < min_steps:
        raise ValueError(f"need at least {min_steps} time steps, got {X.shape[0]}")
    return X


def check_windows(X, lookback: int, n_channels: int) -> tuple[np.ndarray, bool]:
    """Validate lookback windows; returns a (B, T, N) array and whether the
    input was a single (T, N) window."""
    X = check_array(X, dtype=np.float64, allow_nd=True, ensure_2d=False)
    single = X.ndim == 2
    if single:
        X = X[None]
    if X.ndim != 3 or X.shape[1:] != (lookback, n_channels):
        raise ValueError(f"expected windows of shape (B, {lookback}, {n_channels}), got {X.shape}")
    return X, single


def check_starts(t0, n: int) -> np.ndarray:
    t0 = np.atleast_1d(np.asarray(t0))
    if not np.issubdtype(t0.dtype, np.integer):
        if not np.all(np.equal(np.mod(t0, 1), 0)):
            raise ValueError("t0 must hold integer positions")
        t0 = t0.astype(np.int64)
    if t0.size == 1 and n > 1:
        t0 = np.full(n, int(t0[0]))
    if t0.shape != (n,):
        raise ValueError(f"expected {n} start positions, got {t0.shape[0]}")
    if np.any(t0 < 0):
        raise ValueError("start positions must be non-negative")
    return t0


class GTRForecaster(BaseEstimator):
    """MLP forecaster with an optional global temporal retriever.

    ``fit`` takes a raw (time x channels) series, standardizes it with the
    train-split statistics and trains with best-validation selection.
    ``predict`` maps raw lookback windows starting at absolute positions
    ``t0`` to raw-scale forecasts of shape (B, horizon, channels).
    """

    def __init__(
        self,
        lookback=96,
        horizon=96,
        cycle_len=24,
        period=24,
        d_model=512,
        use_revin=True,
        use_gtr=True,
        variant="conv2d",
        gta=False,
        dropout=0.1,
        lr=1e-3,
        batch_size=256,
        epochs=30,
        patience=None,
        train_ratio=0.7,
        val_ratio=0.1,
        random_state=2025,
    ):
        self.lookback = lookback
        self.horizon = horizon
        self.cycle_len = cycle_len
        self.period = period
        self.d_model = d_model
        self.use_revin = use_revin
        self.use_gtr = use_gtr
        self.variant = variant
        self.gta = gta
        self.dropout = dropout
        self.lr = lr
        self.batch_size = batch_size
        self.epochs = epochs
        self.patience = patience
        self.train_ratio = train_ratio
        self.val_ratio = val_ratio
        self.random_state = random_state

    def _config(self, n_channels: int) -> RunConfig:
        return RunConfig(
            T=self.lookback,
            S=self.horizon,
            N=n_channels,
            L=self.cycle_len,
            P=self.period,
            D=self.d_model,
            use_revin=self.use_revin,
            use_gtr=self.use_gtr,
            variant=self.variant,
            gta_enabled=self.gta,
            dropout_rate=self.dropout,
            lr=self.lr,
            batch_size=self.batch_size,
            epochs=self.epochs,
            patience=self.patience,
            train_ratio=self.train_ratio,
            val_ratio=self.val_ratio,
            seed=self.random_state,
        )

    def fit(self, X, y=None):
        X = check_series(X)
        cfg = self._config(X.shape[1])
        ds = TimeSeriesDataset.from_array(X, SplitSpec(cfg.T, cfg.S, ratios=(cfg.train_ratio, cfg.val_ratio)))
        model = build_model(cfg, ds.num_channels)
        self.report_ = train(model, ds, cfg)
        self.model_ = model
        self.config_ = cfg
        self.standardizer_ = ds.standardizer
        self.n_features_in_ = X.shape[1]
        self.splits_ = (ds.train_len, ds.val_len, ds.test_len)
        return self

    def _forward(self, X, t0) -> tuple[np.ndarray, bool]:
        check_is_fitted(self, "model_")
        X, single = check_windows(X, self.lookback, self.n_features_in_)
        t0 = check_starts(t0, X.shape[0])
        scaled = self.standardizer_.transform(X)
        return model_forward(self.model_, scaled, t0).data, single

    def predict(self, X, t0):
        pred, single = self._forward(X, t0)
        pred = self.standardizer_.inverse(pred)
        return pred[0] if single else pred

    def score(self, X, y, t0):
        """Negative MSE in standardized space, higher is better."""
        pred, single = self._forward(X, t0)
        y = np.asarray(y, dtype=np.float64)
        if single and y.ndim == 2:
            y = y[None]
        return -mse(pred, self.standardizer_.transform(y))


class CycleLengthEstimator(BaseEstimator):
    """ACF-based global cycle length, one estimate per channel.

    ``cycle_length_`` is the most common per-channel estimate (smaller lag on
    ties); channels without an ACF peak in range are recorded as 0.
    """

    def __init__(self, max_lag=400, min_lag=2):
        self.max_lag = max_lag
        self.min_lag = min_lag

    def fit(self, X, y=None):
        X = check_series(X, min_steps=self.max_lag + 2)
        lags = []
        for col in X.T:
            try:
                lags.append(estimate_cycle_length(col, self.max_lag, self.min_lag))
            except ValueError:
                lags.append(0)
        self.cycle_lengths_ = np.array(lags, dtype=np.int64)
        found = [k for k in lags if k > 0]
        if not found:
            raise ValueError(f"no ACF peak in lags [{self.min_lag}, {self.max_lag}] for any channel")
        counts = Counter(found)
        top = max(counts.values())
        self.cycle_length_ = min(k for k, c in counts.items() if c == top)
        self.n_features_in_ = X.shape[1]
        return self
