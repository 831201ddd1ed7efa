import csv
import json

import numpy as np
import pytest
import yaml

from jointts.cli import main, parse_overrides
from jointts.config import (RUN_PRESETS, apply_overrides, config_from_dict, expand_grid,
                            load_config)
from jointts.errors import ConfigError


def _cfg(tmp_path, **over):
    raw = {"synthetic": {"generator": "linear_map", "T": 200, "d": 6, "d_y": 2, "sigma": 0.01},
           "I": 12, "O": 4, "d_y": 2, "r_arti": 0.1, "f_hidden": [8], "g_hidden": [16],
           "schedule": {"epochs": 2, "batch_size": 16}, "output_dir": str(tmp_path / "run")}
    raw.update(over)
    p = tmp_path / "cfg.yaml"
    p.write_text(yaml.safe_dump(raw))
    return p


# ---------------------------------------------------------------- config


def test_parse_overrides():
    assert parse_overrides(["--schedule.epochs", "5", "--synthetic.T=50", "--O", "[1, 2]"]) == {
        "schedule.epochs": 5, "synthetic.T": 50, "O": [1, 2]}
    with pytest.raises(ConfigError):
        parse_overrides(["--x"])


def test_exponent_floats_without_dot_parse_as_numbers(tmp_path):
    assert parse_overrides(["--optim.lr", "3e-3", "--loss.lambda_l2=1E-5"]) == {
        "optim.lr": 0.003, "loss.lambda_l2": 1e-5}
    path = tmp_path / "c.yaml"
    path.write_text("synthetic: {T: 100}\noptim: {lr: 5e-4}\nI: 8\nO: 2\n")
    cfg = load_config(path, {})
    assert cfg.optim.lr == 5e-4


def test_missing_checkpoint_is_data_error(tmp_path, capsys):
    assert main(["impute", str(tmp_path / "nope.ckpt"), "a.csv", "b.csv"]) == 3
    (tmp_path / "bad.ckpt").write_bytes(b"not a zip")
    assert main(["impute", str(tmp_path / "bad.ckpt"), "a.csv", "b.csv"]) == 3
    assert "cannot read checkpoint" in capsys.readouterr().err


def test_apply_overrides_nested():
    raw = apply_overrides({}, {"schedule.epochs": 3, "optim.lr": 0.5, "I": 8})
    assert raw == {"schedule": {"epochs": 3}, "optim": {"lr": 0.5}, "I": 8}
    with pytest.raises(ConfigError, match="schedule.bogus"):
        apply_overrides({}, {"schedule.bogus": 1})
    with pytest.raises(ConfigError):
        apply_overrides({}, {"I.x": 1})


def test_validation_reports_field_path():
    with pytest.raises(ConfigError, match="schedule.epochs"):
        config_from_dict({"synthetic": {}, "schedule": {"epochs": "ten"}})
    with pytest.raises(ConfigError, match="r_arti"):
        config_from_dict({"synthetic": {}, "r_arti": 1.5})
    with pytest.raises(ConfigError, match="unknown"):
        config_from_dict({"synthetic": {}, "nonsense": 1})


def test_ili_preset_grid():
    cfg = config_from_dict({"synthetic": {"d": 7, "d_y": 1}, "preset": "ili"})
    runs = expand_grid(cfg)
    assert [(c.I, c.O) for _, c in runs] == [(36, 24), (36, 36), (36, 48), (36, 60)]
    assert len({c.output_dir for _, c in runs}) == 4


def test_forecasting_presets_grid():
    for name in ("electricity", "traffic", "weather", "exchange"):
        assert RUN_PRESETS[name]["I"] == 96
        assert RUN_PRESETS[name]["O"] == [96, 192, 336, 720]


def test_config_hash_stable(tmp_path):
    p = _cfg(tmp_path)
    assert load_config(p).hash() == load_config(p).hash()
    assert load_config(p).hash() != load_config(p, {"seed": 1}).hash()


# ---------------------------------------------------------------- synth


def test_synth_bytes_identical(tmp_path, capsys):
    for name in ("a", "b"):
        assert main(["synth", "--generator", "sinusoid", "--T", "50", "--d", "4",
                     "--seed", "3", "--output", str(tmp_path / f"{name}.csv")]) == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_synth_sigma_zero_exact_linear(tmp_path):
    out = tmp_path / "lin.csv"
    assert main(["synth", "--generator", "linear_map", "--T", "60", "--d", "5", "--d-y", "2",
                 "--sigma", "0", "--output", str(out)]) == 0
    A = np.array(json.loads(out.with_suffix(".json").read_text())["truth"]["A"])
    from jointts.data import load_csv
    s = load_csv(out)
    assert s.feature_names == ["x0", "x1", "x2", "y0", "y1"]
    np.testing.assert_array_equal(s.values[:, 3:], s.values[:, :3] @ A.T)


def test_synth_bad_dims_exit_2(tmp_path):
    assert main(["synth", "--d", "2", "--d-y", "2", "--output", str(tmp_path / "x.csv")]) == 2


# ---------------------------------------------------------------- train / evaluate / impute


def test_exit_codes(tmp_path, capsys):
    assert main(["train", str(_cfg(tmp_path, variant="nope"))]) == 2
    assert main(["train", str(tmp_path / "missing.yaml")]) == 2
    assert main(["train", str(_cfg(tmp_path)), "--schedule.epochs", "0"]) == 2
    csvp = tmp_path / "bad.csv"
    csvp.write_text("a,b\n1,x\n")
    raw = {"dataset": str(csvp), "I": 2, "O": 1, "d_y": 1}
    (tmp_path / "d.yaml").write_text(yaml.safe_dump(raw))
    assert main(["train", str(tmp_path / "d.yaml")]) == 3
    err = capsys.readouterr().err
    assert "row 2" in err and "column 2" in err


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numeric_failure_exit_4(tmp_path, capsys):
    rows = ["a,b"] + [f"{1e300 * (i % 3 + 1)!r},{(-1) ** i * 1e300!r}" for i in range(60)]
    (tmp_path / "big.csv").write_text("\n".join(rows) + "\n")
    raw = {"dataset": str(tmp_path / "big.csv"), "I": 4, "O": 2, "d_y": 1, "standardize": False,
           "f_hidden": [2], "g_hidden": [2], "schedule": {"epochs": 1, "batch_size": 4},
           "output_dir": str(tmp_path / "run")}
    (tmp_path / "n.yaml").write_text(yaml.safe_dump(raw))
    assert main(["train", str(tmp_path / "n.yaml")]) == 4


def test_train_evaluate_roundtrip(tmp_path, capsys):
    p = _cfg(tmp_path)
    assert main(["train", str(p), "--schedule.epochs", "3"]) == 0
    run = tmp_path / "run"
    for name in ("checkpoint.ckpt", "epoch_log.jsonl", "timings.jsonl", "metrics.json",
                 "metrics.csv", "manifest.json", "config.json"):
        assert (run / name).exists(), name
    log = [json.loads(l) for l in (run / "epoch_log.jsonl").read_text().splitlines()]
    assert len(log) == 3 and "wall_time" not in log[0]
    man = json.loads((run / "manifest.json").read_text())
    assert set(man["substream_seeds"]) == {"arti_mask", "input_mask", "init", "shuffle"}
    assert man["config"]["schedule"]["epochs"] == 3 and man["declared_deviations"]

    pred = tmp_path / "pred.csv"
    assert main(["evaluate", str(run / "checkpoint.ckpt"), str(p), "--schedule.epochs", "3",
                 "--predictions", str(pred)]) == 0
    with pred.open() as fh:
        rows = list(csv.DictReader(fh))
    n_windows = man["n_windows"]["test"]
    assert len(rows) == n_windows * 6 * 4  # O rows per feature per window
    assert set(rows[0]) == {"window", "feature", "time", "step", "truth", "prediction", "mask"}
    with_y = json.loads((run / "metrics_eval.json").read_text())
    # trained metrics and re-evaluated metrics agree
    assert with_y == json.loads((run / "metrics.json").read_text())

    assert main(["evaluate", str(run / "checkpoint.ckpt"), str(p), "--no-y-data"]) == 0
    no_y = json.loads((run / "metrics_no_y.json").read_text())
    assert no_y["forecast"]["n_evaluated"] == with_y["forecast"]["n_evaluated"]


def test_evaluate_dim_mismatch(tmp_path, capsys):
    p = _cfg(tmp_path)
    assert main(["train", str(p)]) == 0
    assert main(["evaluate", str(tmp_path / "run" / "checkpoint.ckpt"), str(p), "--O", "5"]) == 2


def test_grid_subruns(tmp_path, capsys):
    p = _cfg(tmp_path, O=[2, 4], r_arti=[0.1, 0.2], schedule={"epochs": 1, "batch_size": 32})
    assert main(["train", str(p)]) == 0
    subs = sorted(d.name for d in (tmp_path / "run").iterdir())
    assert subs == ["O2_r0.1", "O2_r0.2", "O4_r0.1", "O4_r0.2"]
    man = json.loads((tmp_path / "run" / "O4_r0.2" / "manifest.json").read_text())
    assert man["config"]["O"] == 4 and man["config"]["r_arti"] == 0.2


def test_impute(tmp_path, capsys):
    p = _cfg(tmp_path, task="imputation", O=0, r_input_mask=0.3)
    assert main(["train", str(p)]) == 0
    capsys.readouterr()
    rng = np.random.default_rng(0)
    vals = rng.normal(size=(30, 6))
    lines = ["a,b,c,d,e,f"]
    n_missing = 0
    for row in vals:
        cells = []
        for v in row:
            if rng.random() < 0.2:
                cells.append("")
                n_missing += 1
            else:
                cells.append(repr(float(v)))
        lines.append(",".join(cells))
    (tmp_path / "in.csv").write_text("\n".join(lines) + "\n")
    assert main(["impute", str(tmp_path / "run" / "checkpoint.ckpt"), str(tmp_path / "in.csv"),
                 str(tmp_path / "out.csv")]) == 0
    from jointts.data import load_csv
    src, out = load_csv(tmp_path / "in.csv"), load_csv(tmp_path / "out.csv")
    assert out.n_observed == out.T * out.d
    assert np.array_equal(out.values[src.mask == 1], src.values[src.mask == 1])
    assert json.loads(capsys.readouterr().out)["filled_cells"] == n_missing


def test_same_config_same_manifest(tmp_path, capsys):
    p = _cfg(tmp_path)
    hashes = []
    for _ in range(2):
        assert main(["train", str(p)]) == 0
        hashes.append((tmp_path / "run" / "manifest.json").read_bytes())
    assert hashes[0] == hashes[1]


def test_ablate_smoke(tmp_path, capsys):
    p = _cfg(tmp_path, schedule={"epochs": 1, "batch_size": 32})
    assert main(["ablate", str(p)]) == 0
    with (tmp_path / "run" / "ablation.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert [r["variant"] for r in rows] == ["joint", "no_y_data", "no_broadcast", "no_fcns",
                                           "no_spatial_term", "forecast_only"]
    assert all(np.isfinite(float(r["mse"])) for r in rows)
    counts = {r["variant"]: int(r["n_parameters"]) for r in rows}
    assert counts["no_broadcast"] > counts["joint"]
    # manifests differ only in the variant (and the output directory it implies)
    base = json.loads((tmp_path / "run" / "joint" / "manifest.json").read_text())["config"]
    for v in ("no_broadcast", "no_fcns", "no_spatial_term", "forecast_only"):
        other = json.loads((tmp_path / "run" / v / "manifest.json").read_text())["config"]
        diff = {k for k in base if base[k] != other[k]}
        assert diff == {"variant", "output_dir"}, (v, diff)
