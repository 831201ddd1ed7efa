"""Synthetic multivariate series with known structure, for desk-scale checks."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .config import GENERATORS, SynthConfig
from .data import MaskedSeries, write_csv
from .errors import ConfigError


def _names(d_x: int, d_y: int) -> list[str]:
    return [f"x{j}" for j in range(d_x)] + [f"y{j}" for j in range(d_y)]


def linear_map(T: int, d: int, d_y: int, sigma: float, seed: int, phi: float = 0.95):
    """Stationary AR(1) auxiliary columns; targets y_t = A x_t + sigma * noise."""
    rng = np.random.default_rng(seed)
    d_x = d - d_y
    A = rng.normal(size=(d_y, d_x)) / np.sqrt(d_x)
    X = np.empty((T, d_x))
    X[0] = rng.normal(size=d_x)
    scale = np.sqrt(1.0 - phi * phi)
    for t in range(1, T):
        X[t] = phi * X[t - 1] + scale * rng.normal(size=d_x)
    Y = X @ A.T + sigma * rng.normal(size=(T, d_y))
    return np.hstack([X, Y]), {"A": A.tolist(), "phi": phi}


def sinusoid(T: int, d: int, d_y: int, sigma: float, seed: int, n_components: int = 3):
    """Every column mixes the same few sinusoids with its own amplitudes and phases."""
    rng = np.random.default_rng(seed)
    periods = rng.uniform(12.0, 96.0, size=n_components)
    amps = rng.normal(size=(d, n_components))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=(d, n_components))
    t = np.arange(T)[:, None, None]
    Z = (amps[None] * np.sin(2.0 * np.pi * t / periods[None, None, :] + phases[None])).sum(axis=2)
    Z = Z + sigma * rng.normal(size=(T, d))
    truth = {"periods": periods.tolist(), "amplitudes": amps.tolist(), "phases": phases.tolist()}
    return Z, truth


def random_walk(T: int, d: int, d_y: int, sigma: float, seed: int):
    rng = np.random.default_rng(seed)
    Z = np.cumsum(rng.normal(size=(T, d)), axis=0) + sigma * rng.normal(size=(T, d))
    return Z, {}


def generate(spec: SynthConfig) -> tuple[MaskedSeries, dict]:
    if spec.generator not in GENERATORS:
        raise ConfigError(f"unknown generator {spec.generator!r}; choose from {GENERATORS}")
    if spec.T < 3 or spec.d < 1 or not 0 <= spec.d_y < spec.d:
        raise ConfigError(f"invalid dims T={spec.T}, d={spec.d}, d_y={spec.d_y}")
    if spec.generator == "linear_map":
        Z, truth = linear_map(spec.T, spec.d, spec.d_y, spec.sigma, spec.seed, spec.phi)
    elif spec.generator == "sinusoid":
        Z, truth = sinusoid(spec.T, spec.d, spec.d_y, spec.sigma, spec.seed, spec.n_components)
    else:
        Z, truth = random_walk(spec.T, spec.d, spec.d_y, spec.sigma, spec.seed)
    manifest = {"generator": spec.generator, "T": spec.T, "d": spec.d, "d_y": spec.d_y,
                "sigma": spec.sigma, "seed": spec.seed, "truth": truth}
    return MaskedSeries.complete(Z, _names(spec.d - spec.d_y, spec.d_y)), manifest


def write_synthetic(spec: SynthConfig, csv_path, manifest_path=None) -> dict:
    series, manifest = generate(spec)
    csv_path = Path(csv_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    write_csv(csv_path, series)
    manifest_path = Path(manifest_path) if manifest_path else csv_path.with_suffix(".json")
    manifest_path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return manifest
