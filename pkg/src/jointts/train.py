"""Mini-batch Adam training with best-validation selection, and model evaluation."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .data import input_mask_batch, substream
from .errors import ConfigError, NumericError
from .loss import LossConfig, loss_and_grad, make_batch
from .metrics import MetricReport, baseline_windows, forecast_report, imputation_report
from .model import ModelState
from .numerics import AdamState, adam_step

log = logging.getLogger(__name__)

IMPUTATION = "imputation"
FORECASTING = "forecasting"


@dataclass
class WindowSet:
    """Stacked windows of one split.

    ``values``/``mask`` are what the model may see (after artificial masking);
    ``truth``/``truth_mask`` hold the data before artificial masking.
    """

    values: np.ndarray  # (N, I+O, d)
    mask: np.ndarray
    truth: np.ndarray
    truth_mask: np.ndarray
    origins: np.ndarray
    I: int

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def O(self) -> int:
        return self.values.shape[1] - self.I

    def subset(self, idx) -> "WindowSet":
        return WindowSet(self.values[idx], self.mask[idx], self.truth[idx],
                         self.truth_mask[idx], self.origins[idx], self.I)

    @property
    def eval_mask(self) -> np.ndarray:
        """Entries hidden by artificial masking but present in the ground truth (first I rows)."""
        I = self.I
        return self.truth_mask[:, :I] * (1.0 - self.mask[:, :I])


@dataclass(frozen=True)
class TrainSchedule:
    epochs: int = 10
    batch_size: int = 32
    task: str = FORECASTING
    r_input_mask: float = 0.0
    y_source: str = "f_hat"
    eval_y_source: str = "observed_fill"
    shuffle_seed: int = 0
    selection: str = "best_validation"

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.task not in (IMPUTATION, FORECASTING):
            raise ConfigError(f"unknown task {self.task!r}")
        if not 0.0 <= self.r_input_mask < 1.0:
            raise ConfigError(f"r_input_mask must lie in [0, 1), got {self.r_input_mask}")


@dataclass
class TrainResult:
    model: ModelState
    log: list[dict]
    timings: list[float]
    best_epoch: int
    best_val_metric: float
    aborted: str | None = None
    extra: dict = field(default_factory=dict)


def predict(model: ModelState, values: np.ndarray, mask: np.ndarray,
            y_source: str = "f_hat", chunk: int = 512):
    """Run the model on the first I rows of stacked windows. Returns (Yhat, Zhat)."""
    I, d_x = model.I, model.d_x
    Ys, Zs = [], []
    for s in range(0, values.shape[0], chunk):
        v, m = values[s:s + chunk, :I], mask[s:s + chunk, :I]
        obs = v * m
        Yhat, Zhat, _ = model.forward(obs[:, :, :d_x], obs[:, :, d_x:], m[:, :, d_x:], y_source)
        Ys.append(Yhat)
        Zs.append(Zhat)
    return np.concatenate(Ys), np.concatenate(Zs)


def evaluate_imputation(model: ModelState, ws: WindowSet, y_source: str = "observed_fill",
                        eval_mask: np.ndarray | None = None) -> MetricReport:
    """Masked MAE/RMSE/MRE of the reconstructed first I rows at the evaluation entries."""
    if model.forecast_only:
        raise ConfigError("the forecast-only model does not reconstruct the input window")
    _, Zhat = predict(model, ws.values, ws.mask, y_source)
    M = ws.eval_mask if eval_mask is None else eval_mask
    return imputation_report(Zhat[:, :ws.I], ws.truth[:, :ws.I], M)


def evaluate_forecast(model: ModelState, ws: WindowSet,
                      y_source: str = "observed_fill") -> MetricReport:
    """MAE/MSE of the last O predicted rows against the ground truth."""
    if ws.O == 0:
        raise ConfigError("forecast evaluation needs O >= 1")
    _, Zhat = predict(model, ws.values, ws.mask, y_source)
    P = Zhat if model.forecast_only else Zhat[:, ws.I:]
    return forecast_report(P, ws.truth[:, ws.I:], ws.truth_mask[:, ws.I:])


def evaluate_baseline(ws: WindowSet, kind: str) -> MetricReport:
    filled = baseline_windows(ws.values[:, :ws.I], ws.mask[:, :ws.I], kind)
    return imputation_report(filled, ws.truth[:, :ws.I], ws.eval_mask)


def validation_metric(model: ModelState, ws: WindowSet, schedule: TrainSchedule) -> float:
    """Masked MAE for imputation, MSE for forecasting.

    Imputation without artificially hidden entries falls back to the
    reconstruction MAE over observed input entries.
    """
    if schedule.task == FORECASTING:
        return evaluate_forecast(model, ws, schedule.eval_y_source).mse
    M = ws.eval_mask
    if M.sum() == 0:
        M = ws.mask[:, :ws.I]
    return evaluate_imputation(model, ws, schedule.eval_y_source, M).mae


def train(model: ModelState, train_set: WindowSet, val_set: WindowSet,
          schedule: TrainSchedule, loss_cfg: LossConfig, seed: int | None = None) -> TrainResult:
    """Train in place and leave the model at its best-validation parameters."""
    if len(train_set) == 0 or len(val_set) == 0:
        raise ConfigError("training and validation splits must contain at least one window")
    seed = model.seed if seed is None else seed
    I, d_x = model.I, model.d_x
    records, timings = [], []
    best = (math.inf, -1, model.copy_parameters(), model.adam)
    aborted = None
    for epoch in range(schedule.epochs):
        t0 = time.perf_counter()
        order = substream(seed, "shuffle", epoch).permutation(len(train_set))
        rng_in = substream(seed, "input_mask", epoch)
        sums = np.zeros(4)
        for s in range(0, len(order), schedule.batch_size):
            idx = order[s:s + schedule.batch_size]
            vals, msk = train_set.values[idx], train_set.mask[idx]
            held = None
            if schedule.r_input_mask > 0:
                held = input_mask_batch(msk[:, :I], schedule.r_input_mask, rng_in)
            batch = make_batch(vals, msk, I, d_x, held, loss_cfg.use_input_mask_targets)
            breakdown, tape = loss_and_grad(model, batch, loss_cfg, schedule.y_source)
            if not math.isfinite(breakdown.total):
                aborted = f"non-finite loss at epoch {epoch}, batch starting {s}"
                break
            try:
                params, adam = adam_step(model.adam, model.parameters(), tape.grads)
            except NumericError as exc:
                aborted = f"epoch {epoch}: {exc}"
                break
            model.set_parameters(params)
            model.adam = adam
            sums += len(idx) * np.array([breakdown.spatial_term, breakdown.temporal_term,
                                         breakdown.l2_term, breakdown.smooth_term])
        if aborted:
            log.error("training aborted: %s", aborted)
            break
        sums /= len(order)
        val = validation_metric(model, val_set, schedule)
        if not math.isfinite(val):
            aborted = f"non-finite validation metric at epoch {epoch}"
            log.error("training aborted: %s", aborted)
            break
        records.append({
            "epoch": epoch,
            "spatial_term": float(sums[0]),
            "temporal_term": float(sums[1]),
            "l2": float(sums[2]),
            "smooth": float(sums[3]),
            "total": float(sums.sum()),
            "val_metric": float(val),
        })
        timings.append(time.perf_counter() - t0)
        log.info("epoch %d total %.6g val %.6g", epoch, sums.sum(), val)
        if val < best[0]:
            best = (val, epoch, model.copy_parameters(), model.adam)
    val, epoch, params, adam = best
    model.set_parameters(params)
    model.adam = adam if isinstance(adam, AdamState) else model.adam
    return TrainResult(model, records, timings, epoch, val, aborted)
