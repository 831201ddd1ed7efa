"""Evaluation metrics and naive imputation baselines."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .data import MaskedSeries

log = logging.getLogger(__name__)

MASKED_IMPUTATION = "masked_imputation"
COMPLETE_FORECAST = "complete_forecast"


@dataclass(frozen=True)
class MetricReport:
    mae: float
    rmse: float
    mre: float
    mse: float
    scope: str
    n_evaluated: int

    @property
    def defined(self) -> bool:
        return self.n_evaluated > 0

    def as_dict(self) -> dict:
        def clean(x):
            return None if x is None or (isinstance(x, float) and math.isnan(x)) else x
        return {"mae": clean(self.mae), "rmse": clean(self.rmse), "mre": clean(self.mre),
                "mse": clean(self.mse), "scope": self.scope, "n_evaluated": self.n_evaluated}


def _arrays(P, V, M):
    P, V = np.asarray(P, dtype=np.float64), np.asarray(V, dtype=np.float64)
    M = np.ones_like(V) if M is None else np.asarray(M, dtype=np.float64)
    if not (P.shape == V.shape == M.shape):
        raise ValueError(f"shapes differ: P {P.shape}, V {V.shape}, M {M.shape}")
    return P, V, M


def _abs_err(P, V, M):
    # masked-out entries contribute an exact zero whatever P and V hold there
    return np.where(M != 0.0, np.abs(P - V), 0.0) * M


def masked_mae(P, V, M=None) -> float:
    P, V, M = _arrays(P, V, M)
    n = M.sum()
    return float(_abs_err(P, V, M).sum() / n) if n > 0 else math.nan


def masked_mse(P, V, M=None) -> float:
    P, V, M = _arrays(P, V, M)
    n = M.sum()
    r = np.where(M != 0.0, P - V, 0.0)
    return float((r * r * M).sum() / n) if n > 0 else math.nan


def masked_rmse(P, V, M=None) -> float:
    return math.sqrt(masked_mse(P, V, M))


def masked_mre(P, V, M=None) -> float:
    P, V, M = _arrays(P, V, M)
    denom = (np.where(M != 0.0, np.abs(V), 0.0) * M).sum()
    return float(_abs_err(P, V, M).sum() / denom) if denom > 0 else math.nan


def imputation_report(P, V, M) -> MetricReport:
    """MAE/RMSE/MRE pooled over every entry with M = 1."""
    P, V, M = _arrays(P, V, M)
    n = int(M.sum())
    if n == 0:
        nan = math.nan
        return MetricReport(nan, nan, nan, nan, MASKED_IMPUTATION, 0)
    mse = masked_mse(P, V, M)
    return MetricReport(masked_mae(P, V, M), math.sqrt(mse), masked_mre(P, V, M), mse,
                        MASKED_IMPUTATION, n)


def forecast_report(P, V, M=None) -> MetricReport:
    """MAE/MSE per window (mean over D*O entries), then averaged over windows.

    ``P`` and ``V`` are (N, O, D); a 2-D pair is one window. ``M`` restricts to
    entries with ground truth and is all ones for complete data.
    """
    P, V, M = _arrays(P, V, M)
    if P.ndim == 2:
        P, V, M = P[None], V[None], M[None]
    if P.shape[1] == 0:
        raise ValueError("forecast metrics need O >= 1")
    n = M.sum(axis=(1, 2))
    keep = n > 0
    if not keep.any():
        nan = math.nan
        return MetricReport(nan, nan, nan, nan, COMPLETE_FORECAST, 0)
    r = np.where(M != 0.0, P - V, 0.0)
    mae = (np.abs(r) * M).sum(axis=(1, 2))[keep] / n[keep]
    mse = (r * r * M).sum(axis=(1, 2))[keep] / n[keep]
    mse_mean = float(mse.mean())
    return MetricReport(float(mae.mean()), math.sqrt(mse_mean), math.nan, mse_mean,
                        COMPLETE_FORECAST, int(n.sum()))


# ---------------------------------------------------------------- baselines


def _fill_arrays(values: np.ndarray, mask: np.ndarray, kind: str) -> np.ndarray:
    T, d = values.shape
    out = values.copy()
    obs = mask == 1.0
    medians = np.zeros(d)
    for j in range(d):
        col = values[obs[:, j], j]
        if col.size:
            medians[j] = np.median(col)
    if kind == "median":
        return np.where(obs, values, medians[None, :])
    if kind != "last":
        raise ValueError(f"unknown baseline {kind!r}")
    idx = np.where(obs, np.arange(T)[:, None], -1)
    last = np.maximum.accumulate(idx, axis=0)
    filled = values[np.clip(last, 0, None), np.arange(d)[None, :]]
    filled = np.where(last >= 0, filled, medians[None, :])
    out = np.where(obs, values, filled)
    return out


def baseline_impute(series: MaskedSeries, kind: str) -> MaskedSeries:
    """Fill missing entries by carrying the last observation forward or with the feature median."""
    kind = kind.lower()
    empty = [n for n, c in zip(series.feature_names, series.mask.sum(axis=0)) if c == 0]
    if empty:
        log.warning("features with no observed entries filled with 0: %s", ", ".join(empty))
    filled = _fill_arrays(series.values, series.mask, kind)
    return MaskedSeries(filled, np.ones_like(series.mask), series.feature_names)


def baseline_windows(values: np.ndarray, mask: np.ndarray, kind: str) -> np.ndarray:
    """Apply a baseline independently inside each (N, L, d) window."""
    return np.stack([_fill_arrays(v, m, kind.lower()) for v, m in zip(values, mask)])
