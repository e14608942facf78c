"""Forecast metrics, correlation diagnostics, ACF cycle estimation and the
Monte-Carlo check of the correlation-error reduction result for the
posterior-mean fusion of an observation with a global embedding.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np


def _pair(pred, truth) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    if pred.size == 0:
        raise ValueError("empty input")
    return pred, truth


def mse(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    return float(np.mean((pred - truth) ** 2))


def mae(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    return float(np.mean(np.abs(pred - truth)))


def pearson(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape or a.size < 2:
        raise ValueError("pearson needs two vectors of equal length >= 2")
    da = a - a.mean()
    db = b - b.mean()
    sa = math.sqrt(float(da @ da))
    sb = math.sqrt(float(db @ db))
    if sa == 0 or sb == 0:
        raise ValueError("correlation undefined for a constant vector")
    return float(np.clip((da @ db) / (sa * sb), -1.0, 1.0))


def correlation_matrix(columns: np.ndarray) -> np.ndarray:
    """Pairwise Pearson matrix of the columns of a 2-D array."""
    cols = np.asarray(columns, dtype=np.float64)
    if cols.ndim != 2 or cols.shape[1] < 1:
        raise ValueError(f"expected a 2-D array, got shape {cols.shape}")
    k = cols.shape[1]
    out = np.eye(k)
    for i in range(k):
        for j in range(i + 1, k):
            out[i, j] = out[j, i] = pearson(cols[:, i], cols[:, j])
    return out


def segment_correlation(series, segment_len: int) -> np.ndarray:
    """Correlations between consecutive length-``segment_len`` pieces of a series."""
    series = np.asarray(series, dtype=np.float64).ravel()
    if segment_len < 2:
        raise ValueError("segment_len must be >= 2")
    n_seg = len(series) // segment_len
    if n_seg < 2:
        raise ValueError(f"series of length {len(series)} gives fewer than 2 segments of {segment_len}")
    segs = series[: n_seg * segment_len].reshape(n_seg, segment_len)
    return correlation_matrix(segs.T)


def channel_correlation(values) -> np.ndarray:
    """Correlation matrix between the channels of a (time x channels) array."""
    return correlation_matrix(values)


def acf(series, max_lag: int) -> np.ndarray:
    """Sample autocorrelation ``r_0 .. r_max_lag``.

    ``r_k = sum_{t<n-k} (y_t - m)(y_{t+k} - m) / sum_t (y_t - m)^2``; the
    numerator is not rescaled for the shrinking overlap.
    """
    y = np.asarray(series, dtype=np.float64).ravel()
    if max_lag < 0 or len(y) <= max_lag:
        raise ValueError(f"series length {len(y)} must exceed max_lag {max_lag}")
    d = y - y.mean()
    denom = float(d @ d)
    if denom == 0:
        raise ValueError("ACF undefined for a constant series")
    n = len(d)
    return np.array([float(d[: n - k] @ d[k:]) / denom for k in range(max_lag + 1)])


def estimate_cycle_length(series, max_lag: int, min_lag: int = 2) -> int:
    """Lag of the highest strict local ACF maximum within ``[min_lag, max_lag]``.

    Ties go to the smaller lag. ``r_{max_lag + 1}`` is computed so the upper
    bound itself can qualify when the series is long enough.
    """
    if min_lag < 2:
        raise ValueError("min_lag must be >= 2")
    if max_lag < min_lag:
        raise ValueError(f"max_lag {max_lag} < min_lag {min_lag}")
    n = len(np.ravel(series))
    top = min(max_lag + 1, n - 1)
    r = acf(series, top)
    best, best_val = None, -np.inf
    for k in range(min_lag, min(max_lag, top - 1) + 1):
        if r[k - 1] < r[k] > r[k + 1] and r[k] > best_val:
            best, best_val = k, r[k]
    if best is None:
        raise ValueError(f"no local ACF maximum in lags [{min_lag}, {max_lag}]")
    return best


# --- correlation-error reduction -------------------------------------------


@dataclass(frozen=True)
class TheoremParams:
    """Setting of the pairwise posterior-mean fusion experiment.

    ``coupling`` selects how the error terms relate across the two
    variables: ``"shared"`` (one error draw common to both, which is the
    moment structure the closed forms below are derived under) or
    ``"independent"`` (separate draws per variable).
    """

    var_y: float = 1.0
    var_eta: float = 1.0
    var_eps: float = 0.25
    rho: float = 0.5
    samples: int = 1_000_000
    seed: int = 0
    coupling: str = "shared"

    def __post_init__(self):
        if min(self.var_y, self.var_eta, self.var_eps) <= 0:
            raise ValueError("all variances must be positive")
        if not -1.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must be in [-1, 1], got {self.rho}")
        if self.samples < 1000:
            raise ValueError("need at least 1000 samples")
        if self.coupling not in ("shared", "independent"):
            raise ValueError(f"unknown coupling {self.coupling!r}")

    @property
    def hypothesis(self) -> bool:
        return self.var_eps < self.var_eta


def box_muller(rng: np.random.Generator, n: int) -> np.ndarray:
    """``n`` standard normals from a uniform stream (Box-Muller)."""
    m = (n + 1) // 2
    u1 = 1.0 - rng.random(m)  # (0, 1]
    u2 = rng.random(m)
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])
    return z[:n]


def closed_form(p: TheoremParams) -> dict[str, float]:
    s = p.var_eps * p.var_eta / (p.var_eta + p.var_eps)
    if p.coupling == "shared":
        corr_raw = (p.rho * p.var_y + p.var_eta) / (p.var_y + p.var_eta)
        corr_fused = (p.rho * p.var_y + s) / (p.var_y + s)
    else:
        corr_raw = p.rho * p.var_y / (p.var_y + p.var_eta)
        corr_fused = p.rho * p.var_y / (p.var_y + s)
    err_raw = abs(corr_raw - p.rho)
    err_fused = abs(corr_fused - p.rho)
    ratio = p.var_eps * (p.var_y + p.var_eta) / (p.var_y * (p.var_eta + p.var_eps) + p.var_eps * p.var_eta)
    return {
        "corr_raw": corr_raw,
        "corr_fused": corr_fused,
        "err_raw": err_raw,
        "err_fused": err_fused,
        "ratio": ratio,
    }


def verify_theorem1(p: TheoremParams) -> dict:
    """Sample the fusion experiment and compare with the closed forms."""
    rng = np.random.default_rng(p.seed)
    n = p.samples
    z1, z2 = box_muller(rng, n), box_muller(rng, n)
    sy = math.sqrt(p.var_y)
    y_n = sy * z1
    y_m = sy * (p.rho * z1 + math.sqrt(max(0.0, 1.0 - p.rho**2)) * z2)
    se, sq = math.sqrt(p.var_eta), math.sqrt(p.var_eps)
    if p.coupling == "shared":
        eta = se * box_muller(rng, n)
        eps = sq * box_muller(rng, n)
        eta_n = eta_m = eta
        eps_n = eps_m = eps
    else:
        eta_n, eta_m = se * box_muller(rng, n), se * box_muller(rng, n)
        eps_n, eps_m = sq * box_muller(rng, n), sq * box_muller(rng, n)
    x_n, x_m = y_n + eta_n, y_m + eta_m
    q_n, q_m = y_n + eps_n, y_m + eps_m
    w = p.var_eta + p.var_eps
    f_n = (p.var_eps * x_n + p.var_eta * q_n) / w
    f_m = (p.var_eps * x_m + p.var_eta * q_m) / w

    def corr(a, b):
        if np.ptp(a) == 0 or np.ptp(b) == 0:
            return 1.0 if np.array_equal(a, b) else float("nan")
        return pearson(a, b)

    corr_raw = corr(x_n, x_m)
    corr_fused = corr(f_n, f_m)
    cf = closed_form(p)
    err_raw = abs(corr_raw - p.rho)
    err_fused = abs(corr_fused - p.rho)
    return {
        "params": asdict(p),
        "hypothesis": p.hypothesis,
        "corr_raw": corr_raw,
        "corr_fused": corr_fused,
        "err_raw": err_raw,
        "err_fused": err_fused,
        "mc_ratio": err_fused / err_raw if err_raw > 0 else float("nan"),
        "closed_form_corr_raw": cf["corr_raw"],
        "closed_form_corr_fused": cf["corr_fused"],
        "closed_form_err_raw": cf["err_raw"],
        "closed_form_err_fused": cf["err_fused"],
        "closed_form_ratio": cf["ratio"],
        "inequality_holds": bool(err_fused < err_raw),
    }


def theorem_grid(samples: int = 1_000_000, seed: int = 0) -> list[TheoremParams]:
    """Default sweep: rho x var_eta x var_eps with var_y = 1."""
    out = []
    for rho in (0.0, 0.3, 0.5, 0.9):
        for var_eta in (0.5, 1.0, 2.0):
            for var_eps in (0.1, 0.25, 0.5 * var_eta):
                out.append(TheoremParams(1.0, var_eta, var_eps, rho, samples, seed))
    return out
