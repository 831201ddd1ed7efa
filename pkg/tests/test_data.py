import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from jointts.data import (MaskedSeries, Standardizer, WindowPair, apply_artificial_mask,
                          apply_input_mask, exact_count, fit_standardizer, input_mask_batch,
                          load_csv, make_windows, split_chronological, split_lengths,
                          stack_windows, substream, window_origins, write_csv, write_mask_csv)
from jointts.errors import ConfigError, DataError, ParseError

from conftest import random_series


# ---------------------------------------------------------------- CSV


def test_load_csv_empty_cell_is_missing(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("a,b\n1,\n2,3\n")
    s = load_csv(p)
    np.testing.assert_array_equal(s.values, [[1, 0], [2, 3]])
    np.testing.assert_array_equal(s.mask, [[1, 0], [1, 1]])
    assert s.feature_names == ["a", "b"]


@pytest.mark.parametrize("tok", ["nan", "NaN", "NAN"])
def test_load_csv_nan_token(tmp_path, tok):
    p = tmp_path / "a.csv"
    p.write_text(f"a,b\n1,{tok}\n")
    assert load_csv(p).mask.tolist() == [[1.0, 0.0]]


def test_load_csv_custom_token(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("a,b\n1,?\n")
    assert load_csv(p, missing_token="?").mask.tolist() == [[1.0, 0.0]]


def test_load_csv_370_features(tmp_path, rng):
    p = tmp_path / "elec.csv"
    vals = rng.random((20, 370))
    p.write_text(",".join(f"MT_{j:03d}" for j in range(370)) + "\n"
                 + "\n".join(",".join(repr(float(v)) for v in row) for row in vals) + "\n")
    s = load_csv(p)
    assert s.d == 370 and s.T == 20
    np.testing.assert_array_equal(s.values, vals)


def test_load_csv_parse_error_location(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("a,b\n1,2\n3,oops\n")
    with pytest.raises(ParseError) as ei:
        load_csv(p)
    assert (ei.value.row, ei.value.col) == (3, 2)


def test_load_csv_ragged(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("a,b\n1,2\n3\n")
    with pytest.raises(ParseError):
        load_csv(p)


def test_csv_roundtrip(tmp_path, rng):
    s = random_series(rng, 15, 4, 0.3)
    write_csv(tmp_path / "s.csv", s)
    back = load_csv(tmp_path / "s.csv")
    assert back.values.tobytes() == s.values.tobytes()
    assert back.mask.tobytes() == s.mask.tobytes()
    write_mask_csv(tmp_path / "m.csv", s)
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert len(lines) == 16 and set(lines[1].split(",")) <= {"0", "1"}


def test_masked_series_zeroes_missing():
    s = MaskedSeries(np.array([[5.0, 6.0]]), np.array([[1.0, 0.0]]))
    assert s.values.tolist() == [[5.0, 0.0]]
    with pytest.raises(ValueError):
        s.values[0, 0] = 1.0


def test_masked_series_rejects_bad_mask():
    with pytest.raises(DataError):
        MaskedSeries(np.zeros((2, 2)), np.full((2, 2), 0.5))


# ---------------------------------------------------------------- splits & windows


@pytest.mark.parametrize("T,ratios,expected", [
    (10, (7, 1, 2), (7, 1, 2)),
    (10, (8, 1, 1), (8, 1, 1)),
    (26304, (7, 1, 2), (18413, 2630, 5261)),
])
def test_split_lengths(T, ratios, expected):
    assert split_lengths(T, ratios) == expected


def test_split_empty_segment():
    with pytest.raises(ConfigError):
        split_lengths(3, (7, 1, 2))


def test_split_chronological_disjoint_ordered(rng):
    s = random_series(rng, 50, 3)
    tr, va, te = split_chronological(s)
    assert (tr.T, va.T, te.T) == (35, 5, 10)
    np.testing.assert_array_equal(np.vstack([tr.values, va.values, te.values]), s.values)


def test_windows_small():
    s = MaskedSeries.complete(np.arange(5.0)[:, None])
    w = make_windows(s, 2, 1, 1)
    assert [p.origin_index for p in w] == [0, 1, 2]
    assert w[1].observed.values.ravel().tolist() == [1, 2]
    assert w[1].target.values.ravel().tolist() == [1, 2, 3]


def test_single_imputation_window():
    s = MaskedSeries.complete(np.zeros((100, 2)))
    w = make_windows(s, 100, 0, 100)
    assert len(w) == 1 and w[0].O == 0
    assert w[0].target.values.tobytes() == w[0].observed.values.tobytes()


def test_window_too_long():
    with pytest.raises(ConfigError):
        window_origins(5, 4, 2, 1)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 60), st.integers(1, 10), st.integers(0, 10), st.integers(1, 7))
def test_window_origins_formula(T, I, O, stride):
    if I + O > T:
        with pytest.raises(ConfigError):
            window_origins(T, I, O, stride)
        return
    o = window_origins(T, I, O, stride)
    assert len(o) == (T - I - O) // stride + 1
    assert o[0] == 0 and o[-1] + I + O <= T
    assert np.all(np.diff(o) == stride)


def test_stack_windows_matches_pairs(rng):
    s = random_series(rng, 20, 3, 0.2)
    vals, mask, origins = stack_windows(s, 4, 2, 3)
    pairs = make_windows(s, 4, 2, 3)
    for k, p in enumerate(pairs):
        np.testing.assert_array_equal(vals[k], p.target.values)
        np.testing.assert_array_equal(mask[k], p.target.mask)
        assert origins[k] == p.origin_index


# ---------------------------------------------------------------- masking


def test_exact_count_rounds_half_up():
    assert [exact_count(r, 10) for r in (0.0, 0.25, 0.3, 0.35, 1.0)] == [0, 3, 3, 4, 10]


def test_artificial_mask_rate_zero_and_one(rng):
    s = random_series(rng, 10, 3, 0.2)
    assert apply_artificial_mask(s, 0.0, 1).mask.tobytes() == s.mask.tobytes()
    assert apply_artificial_mask(s, 1.0, 1).n_observed == 0


def test_artificial_mask_ten_entries():
    s = MaskedSeries.complete(np.arange(10.0).reshape(5, 2))
    out = apply_artificial_mask(s, 0.3, 0)
    assert s.n_observed - out.n_observed == 3


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31), st.floats(0, 1), st.floats(0, 0.9))
def test_artificial_mask_count_and_subset(seed, rate, p_missing):
    s = random_series(np.random.default_rng(seed), 12, 5, p_missing)
    out = apply_artificial_mask(s, rate, seed)
    assert out.n_observed == s.n_observed - exact_count(rate, s.n_observed)
    assert np.all(out.mask <= s.mask)
    assert np.all(out.values[out.mask == 0] == 0)


def test_artificial_mask_seeds(rng):
    s = random_series(rng, 20, 6)
    a = apply_artificial_mask(s, 0.4, 7).mask
    assert a.tobytes() == apply_artificial_mask(s, 0.4, 7).mask.tobytes()
    others = [apply_artificial_mask(s, 0.4, k).mask for k in range(5)]
    assert not all(np.array_equal(others[0], o) for o in others[1:])


def test_input_mask_zero_rate(rng):
    s = random_series(rng, 6, 3, 0.2)
    w = WindowPair(s.rows(0, 4), s, 0)
    masked, held = apply_input_mask(w, 0.0, 3)
    assert masked.mask.tobytes() == w.observed.mask.tobytes() and not held.any()


def test_input_mask_half():
    s = MaskedSeries.complete(np.ones((10, 4)))
    w = WindowPair(s, s, 0)
    masked, held = apply_input_mask(w, 0.5, 3)
    assert held.sum() == 20 and masked.n_observed == 20
    assert w.target.n_observed == 40
    with pytest.raises(ConfigError):
        apply_input_mask(w, 1.0, 3)


def test_input_mask_batch_counts(rng):
    mask = (rng.random((7, 8, 3)) < 0.6).astype(float)
    held = input_mask_batch(mask, 0.5, substream(0, "input_mask", 1))
    for m, h in zip(mask, held):
        assert h.sum() == exact_count(0.5, int(m.sum()))
        assert np.all(m[h] == 1.0)


def test_substreams_independent():
    a = substream(0, "arti_mask").random(4)
    b = substream(0, "shuffle").random(4)
    assert not np.array_equal(a, b)
    np.testing.assert_array_equal(a, substream(0, "arti_mask").random(4))
    with pytest.raises(ValueError):
        substream(0, "bogus")


# ---------------------------------------------------------------- standardizer


def test_constant_feature_std_clamped():
    s = MaskedSeries.complete(np.column_stack([np.full(5, 3.0), np.arange(5.0)]))
    st_ = fit_standardizer(s)
    assert st_.std[0] == 1.0
    assert np.all(st_.transform(s).values[:, 0] == 0.0)


def test_standardizer_roundtrip(rng):
    s = random_series(rng, 30, 4, 0.2)
    st_ = fit_standardizer(s)
    back = st_.inverse_transform(st_.transform(s))
    np.testing.assert_allclose(back.values, s.values, atol=1e-12)


def test_standardized_train_moments(rng):
    s = random_series(rng, 40, 3, 0.3)
    z = fit_standardizer(s).transform(s)
    for j in range(3):
        col = z.values[z.mask[:, j] == 1, j]
        assert abs(col.mean()) < 1e-10 and abs(col.std() - 1) < 1e-10


def test_standardizer_ignores_other_splits(rng):
    s = random_series(rng, 50, 3, 0.1)
    tr, _, _ = split_chronological(s)
    noisy = s.values.copy()
    noisy[35:] += rng.normal(size=noisy[35:].shape) * 100
    tr2, _, _ = split_chronological(MaskedSeries(noisy, s.mask))
    a, b = fit_standardizer(tr), fit_standardizer(tr2)
    assert a.mean.tobytes() == b.mean.tobytes() and a.std.tobytes() == b.std.tobytes()


def test_standardizer_empty_feature():
    s = MaskedSeries(np.zeros((3, 2)), np.array([[1, 0], [1, 0], [1, 0.0]]), ["a", "b"])
    with pytest.raises(DataError, match="b"):
        fit_standardizer(s)


def test_identity_standardizer():
    st_ = Standardizer.identity(3)
    np.testing.assert_array_equal(st_.inverse_values(np.ones((2, 3))), np.ones((2, 3)))
