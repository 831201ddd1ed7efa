"""Dataset ingestion, standardization, splitting, windowing and masking."""

from __future__ import annotations

import csv
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, ParseError

MISSING_TOKENS = ("", "nan")
STD_FLOOR = 1e-8

SUBSTREAMS = ("arti_mask", "input_mask", "init", "shuffle")


def substream(seed: int, name: str, *keys: int) -> np.random.Generator:
    """Named, independent random stream derived from the single run seed."""
    if name not in SUBSTREAMS:
        raise ValueError(f"unknown substream {name!r}")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(zlib.crc32(name.encode()), *keys))
    return np.random.default_rng(ss)


def substream_seed(seed: int, name: str) -> int:
    """A stable integer fingerprint of a substream, recorded in run manifests."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(zlib.crc32(name.encode()),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def exact_count(rate: float, n: int) -> int:
    """round(rate * n) with halves rounded up."""
    return int(math.floor(rate * n + 0.5))


@dataclass(frozen=True)
class MaskedSeries:
    values: np.ndarray  # (T, d); missing stored as 0
    mask: np.ndarray  # (T, d); 1 = observed
    feature_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        mask = np.array(self.mask, dtype=np.float64)
        if values.ndim != 2 or values.shape != mask.shape:
            raise DataError(f"values shape {values.shape} and mask shape {mask.shape} differ")
        if not np.all((mask == 0.0) | (mask == 1.0)):
            raise DataError("mask entries must be 0 or 1")
        values[mask == 0.0] = 0.0
        values.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)
        names = list(self.feature_names) or [f"f{j}" for j in range(values.shape[1])]
        if len(names) != values.shape[1]:
            raise DataError(f"{len(names)} feature names for {values.shape[1]} columns")
        object.__setattr__(self, "feature_names", names)

    @classmethod
    def complete(cls, values, feature_names=None) -> "MaskedSeries":
        values = np.asarray(values, dtype=np.float64)
        return cls(values, np.ones_like(values), feature_names or [])

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def n_observed(self) -> int:
        return int(self.mask.sum())

    def rows(self, start: int, stop: int) -> "MaskedSeries":
        return MaskedSeries(self.values[start:stop], self.mask[start:stop], self.feature_names)

    def with_mask(self, mask: np.ndarray) -> "MaskedSeries":
        return MaskedSeries(self.values, mask, self.feature_names)


@dataclass(frozen=True)
class WindowPair:
    observed: MaskedSeries  # I x d
    target: MaskedSeries  # (I+O) x d
    origin_index: int

    @property
    def I(self) -> int:
        return self.observed.T

    @property
    def O(self) -> int:
        return self.target.T - self.observed.T


# ---------------------------------------------------------------- CSV I/O


def _is_missing(cell: str, missing_token: str | None) -> bool:
    s = cell.strip()
    if missing_token is not None and s == missing_token:
        return True
    return s.lower() in MISSING_TOKENS


def load_csv(path, missing_token: str | None = None) -> MaskedSeries:
    """Read a header + one-row-per-timestep CSV. Missing cells become mask 0, value 0."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        d = len(header)
        values, mask = [], []
        for r, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d:
                raise ParseError(f"{path}: row {r} has {len(row)} cells, header has {d}", row=r)
            vrow, mrow = [], []
            for c, cell in enumerate(row):
                if _is_missing(cell, missing_token):
                    vrow.append(0.0)
                    mrow.append(0.0)
                    continue
                try:
                    v = float(cell)
                except ValueError:
                    raise ParseError(
                        f"{path}: cannot parse {cell!r} at row {r}, column {c + 1} ({header[c]})",
                        row=r, col=c + 1) from None
                if not math.isfinite(v):
                    raise ParseError(f"{path}: non-finite value {cell!r} at row {r}, column {c + 1}",
                                     row=r, col=c + 1)
                vrow.append(v)
                mrow.append(1.0)
            values.append(vrow)
            mask.append(mrow)
    if not values:
        return MaskedSeries(np.zeros((0, d)), np.zeros((0, d)), header)
    return MaskedSeries(np.array(values), np.array(mask), header)


def write_csv(path, series: MaskedSeries, fill_missing: bool = False) -> None:
    """Write values; masked cells are left empty unless ``fill_missing``."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(series.feature_names)
        for vrow, mrow in zip(series.values, series.mask):
            w.writerow([repr(float(v)) if (m or fill_missing) else "" for v, m in zip(vrow, mrow)])


def write_mask_csv(path, series: MaskedSeries) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(series.feature_names)
        for mrow in series.mask:
            w.writerow([int(m) for m in mrow])


# ---------------------------------------------------------------- splitting & windows


def split_lengths(T: int, ratios) -> tuple[int, int, int]:
    """Validation and test lengths are round(T * share); training gets the remainder."""
    ratios = [float(r) for r in ratios]
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ConfigError(f"split ratios must be three positive numbers, got {ratios}")
    total = sum(ratios)
    n_val = exact_count(ratios[1] / total, T)
    n_test = exact_count(ratios[2] / total, T)
    n_train = T - n_val - n_test
    if min(n_train, n_val, n_test) <= 0:
        raise ConfigError(
            f"split of T={T} by {ratios} gives an empty segment ({n_train}, {n_val}, {n_test})")
    return n_train, n_val, n_test


def split_chronological(series: MaskedSeries, ratios=(7, 1, 2)):
    n_train, n_val, _ = split_lengths(series.T, ratios)
    return (series.rows(0, n_train),
            series.rows(n_train, n_train + n_val),
            series.rows(n_train + n_val, series.T))


def window_origins(T: int, I: int, O: int, stride: int) -> np.ndarray:
    if I < 1 or O < 0:
        raise ConfigError(f"need I >= 1 and O >= 0, got I={I}, O={O}")
    if stride < 1:
        raise ConfigError(f"stride must be >= 1, got {stride}")
    if I + O > T:
        raise ConfigError(f"window length I+O={I + O} exceeds series length T={T}")
    return np.arange(0, T - (I + O) + 1, stride)


def make_windows(series: MaskedSeries, I: int, O: int, stride: int = 1) -> list[WindowPair]:
    return [WindowPair(series.rows(o, o + I), series.rows(o, o + I + O), int(o))
            for o in window_origins(series.T, I, O, stride)]


def stack_windows(series: MaskedSeries, I: int, O: int, stride: int = 1):
    """Windows as arrays: values and masks of shape (N, I+O, d), plus origins."""
    origins = window_origins(series.T, I, O, stride)
    idx = origins[:, None] + np.arange(I + O)[None, :]
    return series.values[idx], series.mask[idx], origins


# ---------------------------------------------------------------- masking


def select_observed(mask: np.ndarray, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Boolean array marking exactly round(rate * #observed) observed entries."""
    flat = np.flatnonzero(mask.reshape(-1) == 1.0)
    k = exact_count(rate, flat.size)
    chosen = np.zeros(mask.size, dtype=bool)
    if k:
        chosen[rng.permutation(flat)[:k]] = True
    return chosen.reshape(mask.shape)


def apply_artificial_mask(series: MaskedSeries, rate: float, seed: int) -> MaskedSeries:
    """Hide round(rate * #observed) observed entries chosen by a seeded permutation."""
    if not 0.0 <= rate <= 1.0:
        raise ConfigError(f"masking rate must lie in [0, 1], got {rate}")
    hide = select_observed(series.mask, rate, np.random.default_rng(seed))
    return series.with_mask(np.where(hide, 0.0, series.mask))


def apply_input_mask(window: WindowPair, r_input_mask: float, seed: int):
    """Hide a further fraction of the observed input entries.

    Returns the masked input series and the boolean held-out mask (I x d). The
    target side is left untouched.
    """
    if not 0.0 <= r_input_mask < 1.0:
        raise ConfigError(f"input mask rate must lie in [0, 1), got {r_input_mask}")
    held = select_observed(window.observed.mask, r_input_mask, np.random.default_rng(seed))
    return window.observed.with_mask(np.where(held, 0.0, window.observed.mask)), held


def input_mask_batch(mask: np.ndarray, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Vectorized per-window input masking for a (B, I, d) observation mask.

    Each window independently loses exactly round(rate * its observed count)
    observed entries. Returns the boolean held-out array.
    """
    B = mask.shape[0]
    flat = mask.reshape(B, -1)
    keys = rng.random(flat.shape)
    keys[flat == 0.0] = np.inf
    order = np.argsort(keys, axis=1, kind="stable")
    ranks = np.empty_like(order)
    np.put_along_axis(ranks, order, np.arange(flat.shape[1])[None, :].repeat(B, 0), axis=1)
    k = np.floor(rate * flat.sum(axis=1) + 0.5).astype(int)
    return (ranks < k[:, None]).reshape(mask.shape)


# ---------------------------------------------------------------- standardization


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray
    fitted_on: str = "train"

    def transform(self, series: MaskedSeries) -> MaskedSeries:
        vals = (series.values - self.mean) / self.std
        return MaskedSeries(np.where(series.mask == 1.0, vals, 0.0), series.mask,
                            series.feature_names)

    def inverse_transform(self, series: MaskedSeries) -> MaskedSeries:
        vals = series.values * self.std + self.mean
        return MaskedSeries(np.where(series.mask == 1.0, vals, 0.0), series.mask,
                            series.feature_names)

    def inverse_values(self, values: np.ndarray) -> np.ndarray:
        """Unscale a raw array whose last axis is the feature axis."""
        return values * self.std + self.mean

    @classmethod
    def identity(cls, d: int) -> "Standardizer":
        return cls(np.zeros(d), np.ones(d), "none")


def fit_standardizer(train: MaskedSeries, fitted_on: str = "train") -> Standardizer:
    counts = train.mask.sum(axis=0)
    empty = [train.feature_names[j] for j in np.flatnonzero(counts == 0)]
    if empty:
        raise DataError(f"features with no observed training entries: {', '.join(empty)}")
    mean = (train.values * train.mask).sum(axis=0) / counts
    var = (((train.values - mean) * train.mask) ** 2).sum(axis=0) / counts
    std = np.sqrt(var)
    std = np.where(std < STD_FLOOR, 1.0, std)
    return Standardizer(mean, std, fitted_on)
