"""End-to-end runs: data preparation, training, evaluation, ablation and imputation of files."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, validate
from .data import (
    MaskedSeries, Standardizer, apply_artificial_mask, fit_standardizer, load_csv,
    split_chronological, stack_windows, substream, substream_seed, write_csv, SUBSTREAMS,
)
from .errors import ConfigError, DataError
from .loss import LossConfig
from .metrics import MetricReport
from .model import (
    VARIANTS, ModelState, build_model, load_checkpoint, parameters_digest, save_checkpoint,
)
from .synth import generate
from .train import (
    TrainResult, TrainSchedule, WindowSet, evaluate_forecast, evaluate_imputation, predict, train,
)

log = logging.getLogger(__name__)

DEVIATIONS = [
    "smoothing regularizer: lambda_smooth * sum of squared first differences along time of "
    "the predicted window",
    "L2 regularizer on weights only (biases excluded)",
    "artificial and input masks remove an exact count round(rate * observed) of entries",
]

ABLATION_ROWS = ("joint", "no_y_data", "no_broadcast", "no_fcns", "no_spatial_term",
                 "forecast_only")


def code_hash() -> str:
    h = hashlib.sha256()
    for p in sorted(Path(__file__).parent.glob("*.py")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()


def _seed_from(seed: int, name: str, key: int) -> int:
    return int(substream(seed, name, key).integers(2**63))


@dataclass
class Prepared:
    train: WindowSet
    val: WindowSet
    test: WindowSet
    standardizer: Standardizer
    split_lengths: tuple[int, int, int]
    shape: tuple[int, int]
    feature_names: list[str]
    test_offset: int


def load_series(cfg: RunConfig) -> tuple[MaskedSeries, dict | None]:
    if cfg.synthetic is not None:
        return generate(cfg.synthetic)
    return load_csv(cfg.dataset, cfg.missing_token), None


def _windows(truth: MaskedSeries, seen: MaskedSeries, I: int, O: int, stride: int) -> WindowSet:
    tv, tm, origins = stack_windows(truth, I, O, stride)
    v, m, _ = stack_windows(seen, I, O, stride)
    return WindowSet(v, m, tv, tm, origins, I)


def prepare(cfg: RunConfig, series: MaskedSeries) -> Prepared:
    """Split, artificially mask each split, standardize on train, and window."""
    if not 0 <= cfg.d_y < series.d:
        raise ConfigError(f"d_y: {cfg.d_y} is not below the number of features {series.d}")
    splits = split_chronological(series, cfg.split_ratios)
    lengths = tuple(s.T for s in splits)
    seen = [apply_artificial_mask(s, float(cfg.r_arti), _seed_from(cfg.seed, "arti_mask", k))
            for k, s in enumerate(splits)]
    std = fit_standardizer(seen[0]) if cfg.standardize else Standardizer.identity(series.d)
    truth = [std.transform(s) for s in splits]
    seen = [std.transform(s) for s in seen]
    O = int(cfg.O)
    try:
        tr = _windows(truth[0], seen[0], cfg.I, O, cfg.train_stride)
        va = _windows(truth[1], seen[1], cfg.I, O, cfg.eval_stride)
        te = _windows(truth[2], seen[2], cfg.I, O, cfg.eval_stride)
    except ConfigError as exc:
        raise ConfigError(f"split lengths {lengths}: {exc}") from None
    return Prepared(tr, va, te, std, lengths, (series.T, series.d), series.feature_names,
                    lengths[0] + lengths[1])


def schedule_for(cfg: RunConfig) -> TrainSchedule:
    return TrainSchedule(epochs=cfg.schedule.epochs, batch_size=cfg.schedule.batch_size,
                         task=cfg.task, r_input_mask=cfg.r_input_mask,
                         y_source=cfg.y_source_train, eval_y_source=cfg.eval_y_source,
                         shuffle_seed=cfg.seed)


def loss_config_for(cfg: RunConfig) -> LossConfig:
    return LossConfig(cfg.loss.lambda_l2, cfg.loss.lambda_smooth, VARIANTS[cfg.variant][2],
                      cfg.loss.use_input_mask_targets)


def evaluate_model(model: ModelState, ws: WindowSet, cfg: RunConfig,
                   y_source: str | None = None) -> dict[str, MetricReport]:
    y_source = y_source or cfg.eval_y_source
    reports = {}
    if ws.O > 0:
        reports["forecast"] = evaluate_forecast(model, ws, y_source)
    if not model.forecast_only and (cfg.task == "imputation" or ws.eval_mask.sum() > 0):
        reports["imputation"] = evaluate_imputation(model, ws, y_source)
    return reports


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _write_metrics(out: Path, reports: dict[str, MetricReport], stem: str = "metrics") -> None:
    _write_json(out / f"{stem}.json", {k: r.as_dict() for k, r in reports.items()})
    cols = ["report", "mae", "rmse", "mre", "mse", "n_evaluated"]
    with (out / f"{stem}.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for name, r in reports.items():
            d = r.as_dict()
            w.writerow([name] + ["" if d[c] is None else repr(d[c]) for c in cols[1:]])


def manifest_for(cfg: RunConfig, prep: Prepared, result: TrainResult | None,
                 model: ModelState, reports: dict[str, MetricReport],
                 synth_truth: dict | None = None) -> dict:
    return {
        "config": cfg.to_dict(),
        "config_hash": cfg.hash(),
        "package_version": __version__,
        "code_hash": code_hash(),
        "substream_seeds": {name: substream_seed(cfg.seed, name) for name in SUBSTREAMS},
        "data_shape": list(prep.shape),
        "split_lengths": list(prep.split_lengths),
        "n_windows": {"train": len(prep.train), "val": len(prep.val), "test": len(prep.test)},
        "n_parameters": model.n_parameters(),
        "parameters_sha256": parameters_digest(model),
        "y_source_train": cfg.y_source_train,
        "eval_y_source": cfg.eval_y_source,
        "declared_deviations": DEVIATIONS,
        "best_epoch": None if result is None else result.best_epoch,
        "aborted": None if result is None else result.aborted,
        "metrics": {k: r.as_dict() for k, r in reports.items()},
        "synthetic_truth": synth_truth,
    }


def run_training(cfg: RunConfig) -> dict:
    """Train and evaluate one (non-grid) config; write all artifacts to ``cfg.output_dir``."""
    series, synth_manifest = load_series(cfg)
    prep = prepare(cfg, series)
    model = build_model(cfg, series.d)
    result = train(model, prep.train, prep.val, schedule_for(cfg), loss_config_for(cfg), cfg.seed)
    reports = evaluate_model(model, prep.test, cfg)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "checkpoint.ckpt", model, prep.standardizer, cfg.hash())
    with (out / "epoch_log.jsonl").open("w") as fh:
        for rec in result.log:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    with (out / "timings.jsonl").open("w") as fh:
        for i, t in enumerate(result.timings):
            fh.write(json.dumps({"epoch": i, "wall_time": t}) + "\n")
    _write_metrics(out, reports)
    truth = synth_manifest["truth"] if synth_manifest else None
    manifest = manifest_for(cfg, prep, result, model, reports, truth)
    _write_json(out / "manifest.json", manifest)
    _write_json(out / "config.json", cfg.to_dict())
    return {"result": result, "reports": reports, "manifest": manifest, "prepared": prep,
            "model": model}


def check_compatible(model: ModelState, cfg: RunConfig, d: int) -> None:
    if (model.I, model.O, model.d_x + model.d_y, model.d_y) != (cfg.I, int(cfg.O), d, cfg.d_y):
        raise ConfigError(
            f"checkpoint dims I={model.I}, O={model.O}, d={model.d}, d_y={model.d_y} do not match "
            f"config I={cfg.I}, O={cfg.O}, d={d}, d_y={cfg.d_y}")


def write_predictions(path, model: ModelState, prep: Prepared, cfg: RunConfig,
                      y_source: str) -> int:
    """Plot-ready CSV in original units: one row per window, feature and predicted step.

    Forecasts cover the O future steps; with O = 0 the reconstructed I steps are written.
    """
    ws = prep.test
    _, Zhat = predict(model, ws.values, ws.mask, y_source)
    if ws.O > 0:
        P = Zhat if model.forecast_only else Zhat[:, ws.I:]
        V, M, S = ws.truth[:, ws.I:], ws.truth_mask[:, ws.I:], ws.I
    else:
        P, V, M, S = Zhat[:, :ws.I], ws.truth[:, :ws.I], ws.truth_mask[:, :ws.I], 0
    std = prep.standardizer
    P, V = std.inverse_values(P), std.inverse_values(V)
    n = 0
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["window", "feature", "time", "step", "truth", "prediction", "mask"])
        for k, origin in enumerate(ws.origins):
            for j, name in enumerate(prep.feature_names):
                for t in range(P.shape[1]):
                    m = int(M[k, t, j])
                    w.writerow([k, name, int(prep.test_offset + origin + S + t), t,
                                repr(float(V[k, t, j])) if m else "",
                                repr(float(P[k, t, j])), m])
                    n += 1
    return n


def run_evaluation(checkpoint, cfg: RunConfig, no_y_data: bool = False,
                   predictions: str | None = None, out_dir: str | None = None) -> dict:
    model, std, _ = load_checkpoint(checkpoint)
    series, _ = load_series(cfg)
    check_compatible(model, cfg, series.d)
    prep = prepare(cfg, series)
    if std is not None:
        # statistics travel with the checkpoint
        prep = _restandardize(cfg, series, prep, std)
    y_source = "f_hat" if no_y_data else cfg.eval_y_source
    reports = evaluate_model(model, prep.test, cfg, y_source)
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = "metrics_no_y" if no_y_data else "metrics_eval"
    _write_metrics(out, reports, stem)
    n_rows = None
    if predictions:
        n_rows = write_predictions(predictions, model, prep, cfg, y_source)
    return {"reports": reports, "prediction_rows": n_rows}


def _restandardize(cfg, series, prep, std: Standardizer) -> Prepared:
    cfg_nostd = dataclasses.replace(cfg, standardize=False)
    raw = prepare(cfg_nostd, series)

    def rescale(ws: WindowSet) -> WindowSet:
        return WindowSet((ws.values - std.mean) / std.std * ws.mask, ws.mask,
                         (ws.truth - std.mean) / std.std * ws.truth_mask, ws.truth_mask,
                         ws.origins, ws.I)

    return dataclasses.replace(raw, train=rescale(raw.train), val=rescale(raw.val),
                               test=rescale(raw.test), standardizer=std)


def run_ablation(cfg: RunConfig) -> list[dict]:
    """Train every variant on identical data/seed/schedule; one metrics row per variant."""
    base = Path(cfg.output_dir)
    rows = []
    joint = None
    for name in ABLATION_ROWS:
        if name == "no_y_data":
            model, prep, sub = joint
            reports = evaluate_model(model, prep.test, sub, "f_hat")
            out = base / name
            out.mkdir(parents=True, exist_ok=True)
            _write_metrics(out, reports)
            _write_json(out / "manifest.json",
                        {**manifest_for(sub, prep, None, model, reports),
                         "eval_y_source": "f_hat"})
        else:
            if name == "forecast_only" and int(cfg.O) < 1:
                raise ConfigError("ablation needs O >= 1 for the forecast_only variant")
            sub = validate(dataclasses.replace(cfg, variant=name, output_dir=str(base / name)))
            res = run_training(sub)
            reports, model, prep = res["reports"], res["model"], res["prepared"]
            if name == "joint":
                joint = (model, prep, sub)
        rep = reports.get("forecast") or reports.get("imputation")
        rows.append({"variant": name, "mse": rep.mse, "mae": rep.mae,
                     "n_parameters": model.n_parameters()})
    with (base / "ablation.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variant", "mse", "mae", "n_parameters"])
        for r in rows:
            w.writerow([r["variant"], repr(r["mse"]), repr(r["mae"]), r["n_parameters"]])
    return rows


def impute_file(checkpoint, input_csv, output_csv, missing_token: str | None = None,
                y_source: str = "observed_fill") -> int:
    """Fill the missing cells of a CSV with the model's reconstruction. Returns #cells filled."""
    model, std, _ = load_checkpoint(checkpoint)
    if model.forecast_only:
        raise ConfigError("the forecast-only model cannot impute")
    series = load_csv(input_csv, missing_token)
    if series.d != model.d:
        raise ConfigError(f"file has {series.d} columns, model expects {model.d}")
    I = model.I
    if series.T < I:
        raise DataError(f"file has {series.T} rows, fewer than the model window I={I}")
    std = std or Standardizer.identity(series.d)
    z = std.transform(series)
    starts = list(range(0, series.T - I + 1, I))
    if starts[-1] + I < series.T:
        starts.append(series.T - I)
    idx = np.array(starts)[:, None] + np.arange(I)[None, :]
    _, Zhat = predict(model, z.values[idx], z.mask[idx], y_source)
    recon = np.zeros_like(z.values)
    for k, s in enumerate(starts):
        recon[s:s + I] = Zhat[k, :I]
    recon = std.inverse_values(recon)
    filled = np.where(series.mask == 1.0, series.values, recon)
    write_csv(output_csv, MaskedSeries(filled, np.ones_like(filled), series.feature_names))
    return int((series.mask == 0.0).sum())
