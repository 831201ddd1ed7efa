"""Masked joint loss, its ablation variants, and the weight/smoothness regularizer.

All data terms are sums over entries; a batch loss is the mean over windows
of the per-window totals.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .model import ModelState
from .numerics import GradientTape

LOSS_VARIANTS = ("joint", "no_spatial_term", "forecast_only")


@dataclass(frozen=True)
class LossConfig:
    lambda_l2: float = 1e-4
    lambda_smooth: float = 0.0
    variant: str = "joint"
    use_input_mask_targets: bool = True

    def __post_init__(self):
        if self.variant not in LOSS_VARIANTS:
            raise ConfigError(f"unknown loss variant {self.variant!r}")
        if self.lambda_l2 < 0 or self.lambda_smooth < 0:
            raise ConfigError("regularization weights must be non-negative")


@dataclass(frozen=True)
class LossBreakdown:
    spatial_term: float
    temporal_term: float
    l2_term: float
    smooth_term: float

    @property
    def total(self) -> float:
        return self.spatial_term + self.temporal_term + self.l2_term + self.smooth_term

    def as_dict(self) -> dict:
        return {**asdict(self), "total": self.total}


@dataclass
class Batch:
    """Model inputs and loss targets for B windows.

    ``X``/``Y_obs`` are zero-filled inputs with ``M_in`` their (input-masked)
    observation mask; ``Z``/``M_Z`` are the (I+O)-step targets.
    """

    X: np.ndarray  # (B, I, d_x)
    Y_obs: np.ndarray  # (B, I, d_y)
    M_in: np.ndarray  # (B, I, d)
    Z: np.ndarray  # (B, I+O, d)
    M_Z: np.ndarray  # (B, I+O, d)

    @property
    def d_x(self) -> int:
        return self.X.shape[2]

    @property
    def I(self) -> int:
        return self.X.shape[1]

    @property
    def M_Y_in(self) -> np.ndarray:
        return self.M_in[:, :, self.d_x:]


def make_batch(values: np.ndarray, mask: np.ndarray, I: int, d_x: int,
               held_out: np.ndarray | None = None, use_input_mask_targets: bool = True) -> Batch:
    """Assemble a batch from stacked (B, I+O, d) windows and an optional held-out mask."""
    M_in = mask[:, :I, :].copy()
    M_Z = mask.copy()
    if held_out is not None:
        M_in[held_out] = 0.0
        if not use_input_mask_targets:
            M_Z[:, :I, :][held_out] = 0.0
    obs = values[:, :I, :] * M_in
    return Batch(obs[:, :, :d_x], obs[:, :, d_x:], M_in, values * mask, M_Z)


def masked_frobenius_sq(P, V, M) -> float:
    """Sum of M * (P - V)**2."""
    P, V, M = (np.asarray(a, dtype=np.float64) for a in (P, V, M))
    if not (P.shape == V.shape == M.shape):
        raise ShapeError(f"shapes differ: P {P.shape}, V {V.shape}, M {M.shape}")
    r = np.where(M != 0.0, P - V, 0.0)
    return float(np.sum(M * r * r))


def _temporal_targets(Zhat: np.ndarray, Z: np.ndarray, M_Z: np.ndarray, I: int,
                      variant: str):
    if variant == "forecast_only":
        V, M = Z[:, I:, :], M_Z[:, I:, :]
    else:
        V, M = Z, M_Z
    if Zhat.shape != V.shape:
        raise ConfigError(f"{variant} loss expects predictions of shape {V.shape[1:]}, "
                          f"got {Zhat.shape[1:]}")
    return V, M


def _smooth(Zhat: np.ndarray) -> tuple[float, np.ndarray]:
    """Per-batch sum of squared first differences along time, and its gradient."""
    diff = np.diff(Zhat, axis=1)
    grad = np.zeros_like(Zhat)
    grad[:, 1:, :] += 2.0 * diff
    grad[:, :-1, :] -= 2.0 * diff
    return float(np.sum(diff * diff)), grad


def weight_l2(model: ModelState) -> float:
    return float(sum(np.sum(p * p) for k, p in model.parameters().items() if k.endswith("weight")))


def regularizer(model: ModelState, Zhat: np.ndarray, cfg: LossConfig) -> tuple[float, float]:
    """(L2 over weights, smoothness of the predicted window); smoothness is averaged over windows."""
    Zb = Zhat[None] if Zhat.ndim == 2 else Zhat
    l2 = cfg.lambda_l2 * weight_l2(model) if cfg.lambda_l2 else 0.0
    smooth = cfg.lambda_smooth * _smooth(Zb)[0] / Zb.shape[0] if cfg.lambda_smooth else 0.0
    return l2, smooth


def joint_loss(Yhat: np.ndarray, Zhat: np.ndarray, batch: Batch, cfg: LossConfig,
               model: ModelState | None = None) -> LossBreakdown:
    """Loss breakdown averaged over the windows of ``batch``.

    The regularizer is included only when ``model`` is given.
    """
    lb, _, _ = _data_terms(Yhat, Zhat, batch, cfg, need_grad=False)
    l2 = smooth = 0.0
    if model is not None:
        l2, smooth = regularizer(model, Zhat, cfg)
    return LossBreakdown(lb[0], lb[1], l2, smooth)


def _data_terms(Yhat, Zhat, batch: Batch, cfg: LossConfig, need_grad: bool):
    B = batch.X.shape[0]
    I, d_x = batch.I, batch.d_x
    if cfg.variant == "no_spatial_term" or Yhat.shape[2] == 0:
        spatial, dY = 0.0, np.zeros_like(Yhat)
    else:
        Ystar, MY = batch.Z[:, :I, d_x:], batch.M_Z[:, :I, d_x:]
        spatial = masked_frobenius_sq(Yhat, Ystar, MY) / B
        dY = 2.0 * MY * (Yhat - Ystar) / B if need_grad else None
    V, M = _temporal_targets(Zhat, batch.Z, batch.M_Z, I, cfg.variant)
    temporal = masked_frobenius_sq(Zhat, V, M) / B
    dZ = 2.0 * M * (Zhat - V) / B if need_grad else None
    return (spatial, temporal), dY, dZ


def loss_and_grad(model: ModelState, batch: Batch, cfg: LossConfig,
                  y_source: str = "f_hat") -> tuple[LossBreakdown, GradientTape]:
    """Forward pass, loss breakdown and parameter gradients of the batch-mean total."""
    if (cfg.variant == "forecast_only") != model.forecast_only:
        raise ConfigError("forecast-only loss requires the forecast-only temporal learner "
                          "and vice versa")
    Yhat, Zhat, cache = model.forward(batch.X, batch.Y_obs, batch.M_Y_in, y_source)
    (spatial, temporal), dY, dZ = _data_terms(Yhat, Zhat, batch, cfg, need_grad=True)
    smooth = 0.0
    if cfg.lambda_smooth:
        s, ds = _smooth(Zhat)
        B = Zhat.shape[0]
        smooth = cfg.lambda_smooth * s / B
        dZ = dZ + cfg.lambda_smooth * ds / B
    tape = model.backward(cache, dY, dZ)
    l2 = 0.0
    if cfg.lambda_l2:
        for name, p in model.parameters().items():
            if name.endswith("weight"):
                l2 += float(np.sum(p * p))
                tape.accumulate(name, 2.0 * cfg.lambda_l2 * p)
        l2 *= cfg.lambda_l2
    return LossBreakdown(spatial, temporal, l2, smooth), tape
