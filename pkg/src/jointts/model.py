"""Spatial and temporal learners, their ablation variants, and the composite model.

Shapes follow a (batch, time, feature) convention. The spatial learner maps
auxiliary columns to target columns; the temporal learner maps the I observed
steps to I+O completed-and-forecast steps (or just O steps for the
forecast-only variant).
"""

from __future__ import annotations

import hashlib
import io
import json
import zipfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, ShapeError
from .numerics import MLP, AdamState, GradientTape

BROADCAST_FCN = "broadcast_fcn"
NO_BROADCAST_FCN = "no_broadcast_fcn"
BROADCAST_LINEAR = "broadcast_linear"
FORECAST_ONLY = "forecast_only"
KINDS = (BROADCAST_FCN, NO_BROADCAST_FCN, BROADCAST_LINEAR, FORECAST_ONLY)

# training variants -> (spatial kind, temporal kind, loss variant)
VARIANTS = {
    "joint": (BROADCAST_FCN, BROADCAST_FCN, "joint"),
    "no_broadcast": (NO_BROADCAST_FCN, NO_BROADCAST_FCN, "joint"),
    "no_fcns": (BROADCAST_LINEAR, BROADCAST_LINEAR, "joint"),
    "no_spatial_term": (BROADCAST_FCN, BROADCAST_FCN, "no_spatial_term"),
    "forecast_only": (BROADCAST_FCN, FORECAST_ONLY, "forecast_only"),
}

Y_SOURCES = ("f_hat", "observed", "observed_fill")

# Architecture tables: hidden widths of f-hat and g-hat, plus the in/out widths
# printed alongside them (for the reference dataset shapes).
ARCHITECTURE_PRESETS = {
    "electricity_imputation": {
        "f": {"in": 320, "hidden": [960, 800], "out": 50},
        "g": {"in": 100, "hidden": [1110, 800], "out": 200},
        "kind": BROADCAST_FCN,
    },
    "electricity": {
        "f": {"in": 270, "hidden": [1200, 800], "out": 51},
        "g": {"in": 96, "hidden": [1200, 800], "out": 192},
        "kind": BROADCAST_FCN,
    },
    "traffic": {
        "f": {"in": 720, "hidden": [1200, 800], "out": 142},
        "g": {"in": 96, "hidden": [1200, 800], "out": 192},
        "kind": BROADCAST_FCN,
    },
    "weather": {
        "f": {"in": 18, "hidden": [288, 288], "out": 3},
        "g": {"in": 96, "hidden": [336, 336], "out": 192},
        "kind": BROADCAST_FCN,
    },
    "ili": {
        "f": {"in": 6, "hidden": [96, 96], "out": 1},
        "g": {"in": 36, "hidden": [112, 112], "out": 60},
        "kind": BROADCAST_FCN,
    },
    "exchange": {
        "f": {"in": 7, "hidden": [], "out": 1},
        "g": {"in": 96, "hidden": [], "out": 192},
        "kind": BROADCAST_LINEAR,
    },
}


def heuristic_hidden(in_width: int, out_width: int) -> list[int]:
    w = min(1200, max(4 * in_width, 4 * out_width))
    return [w, w]


@dataclass(frozen=True)
class LearnerSpec:
    kind: str
    hidden: tuple[int, ...]
    in_width: int  # per-slice width, or the flattened width for NO_BROADCAST_FCN
    out_width: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown learner kind {self.kind!r}")
        if self.kind == BROADCAST_LINEAR and self.hidden:
            raise ConfigError("a linear learner has no hidden layers")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    @property
    def broadcast(self) -> bool:
        return self.kind != NO_BROADCAST_FCN


class SpatialLearner:
    """f: (B, I, d_x) -> (B, I, d_y)."""

    prefix = "f."

    def __init__(self, spec: LearnerSpec, net: MLP, I: int, d_x: int, d_y: int):
        if spec.kind == FORECAST_ONLY:
            raise ConfigError("the forecast-only kind applies to the temporal learner only")
        want = (d_x, d_y) if spec.broadcast else (I * d_x, I * d_y)
        if (net.in_width, net.out_width) != want or (spec.in_width, spec.out_width) != want:
            raise ShapeError(f"spatial learner widths {net.in_width}->{net.out_width}, expected "
                             f"{want[0]}->{want[1]}")
        self.spec, self.net, self.I, self.d_x, self.d_y = spec, net, I, d_x, d_y

    def forward(self, X: np.ndarray):
        # the broadcast kinds accept any number of time steps
        B, I, dx = X.shape
        if dx != self.d_x or (not self.spec.broadcast and I != self.I):
            raise ShapeError(f"spatial input shape {X.shape[1:]} != ({self.I}, {self.d_x})")
        flat = X.reshape(B * I, dx) if self.spec.broadcast else X.reshape(B, I * dx)
        out, cache = self.net.forward(flat)
        return out.reshape(B, I, self.d_y), cache

    def backward(self, cache, dY: np.ndarray, tape: GradientTape) -> None:
        B = dY.shape[0]
        flat = dY.reshape(-1, self.d_y) if self.spec.broadcast else dY.reshape(B, -1)
        self.net.backward(cache, flat, tape, self.prefix)


class TemporalLearner:
    """g: (B, I, d) -> (B, I+O, d), or (B, O, d) for the forecast-only kind."""

    prefix = "g."

    def __init__(self, spec: LearnerSpec, net: MLP, I: int, O: int, d: int):
        self.out_steps = O if spec.kind == FORECAST_ONLY else I + O
        want = (I, self.out_steps) if spec.broadcast else (I * d, self.out_steps * d)
        if (net.in_width, net.out_width) != want or (spec.in_width, spec.out_width) != want:
            raise ShapeError(f"temporal learner widths {net.in_width}->{net.out_width}, expected "
                             f"{want[0]}->{want[1]}")
        self.spec, self.net, self.I, self.O, self.d = spec, net, I, O, d

    def forward(self, Z: np.ndarray):
        B, I, d = Z.shape
        if (I, d) != (self.I, self.d):
            raise ShapeError(f"temporal input shape {Z.shape[1:]} != ({self.I}, {self.d})")
        if self.spec.broadcast:
            out, cache = self.net.forward(Z.transpose(0, 2, 1).reshape(B * d, I))
            return out.reshape(B, d, self.out_steps).transpose(0, 2, 1), cache
        out, cache = self.net.forward(Z.reshape(B, I * d))
        return out.reshape(B, self.out_steps, d), cache

    def backward(self, cache, dZ: np.ndarray, tape: GradientTape) -> np.ndarray:
        B = dZ.shape[0]
        if self.spec.broadcast:
            g = dZ.transpose(0, 2, 1).reshape(B * self.d, self.out_steps)
            dx = self.net.backward(cache, g, tape, self.prefix)
            return dx.reshape(B, self.d, self.I).transpose(0, 2, 1)
        dx = self.net.backward(cache, dZ.reshape(B, -1), tape, self.prefix)
        return dx.reshape(B, self.I, self.d)


@dataclass
class ForwardCache:
    f_cache: list | None
    g_cache: list
    y_source: str
    y_mask: np.ndarray | None


@dataclass
class ModelState:
    f: SpatialLearner | None  # None when d_y == 0
    g: TemporalLearner
    d_x: int
    d_y: int
    I: int
    O: int
    adam: AdamState = field(default_factory=AdamState)
    seed: int = 0
    variant: str = "joint"

    @property
    def d(self) -> int:
        return self.d_x + self.d_y

    @property
    def forecast_only(self) -> bool:
        return self.g.spec.kind == FORECAST_ONLY

    def parameters(self) -> dict[str, np.ndarray]:
        params = {}
        if self.f is not None:
            params.update(self.f.net.parameters(SpatialLearner.prefix))
        params.update(self.g.net.parameters(TemporalLearner.prefix))
        return params

    def set_parameters(self, params: dict[str, np.ndarray]) -> None:
        for learner in (self.f, self.g):
            if learner is None:
                continue
            for i, layer in enumerate(learner.net.layers):
                w = params[f"{learner.prefix}{i}.weight"]
                b = params[f"{learner.prefix}{i}.bias"]
                if w.shape != layer.weight.shape or b.shape != layer.bias.shape:
                    raise ShapeError(f"parameter shapes for {learner.prefix}{i} do not match")
                layer.weight = np.array(w, dtype=np.float64)
                layer.bias = np.array(b, dtype=np.float64)

    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def copy_parameters(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.parameters().items()}

    # -------------------------------------------------------------- forward / backward

    def forward(self, X: np.ndarray, Y_obs: np.ndarray | None = None,
                M_Y: np.ndarray | None = None, y_source: str = "f_hat"):
        """Batched composite forward. Returns (Yhat, Zhat_plus, cache)."""
        if y_source not in Y_SOURCES:
            raise ConfigError(f"unknown y_source {y_source!r}")
        B, I, _ = X.shape
        if self.f is not None:
            Yhat, f_cache = self.f.forward(X)
        else:
            Yhat, f_cache = np.zeros((B, I, 0)), None
        if y_source == "f_hat":
            Y_in = Yhat
        else:
            if Y_obs is None:
                raise ConfigError(f"y_source {y_source!r} needs the observed target columns")
            if Y_obs.shape != Yhat.shape:
                raise ShapeError(f"observed Y shape {Y_obs.shape} != predicted {Yhat.shape}")
            M = np.ones_like(Y_obs) if M_Y is None else M_Y
            Y_obs = Y_obs * M
            Y_in = Y_obs if y_source == "observed" else Y_obs + (1.0 - M) * Yhat
        Z_in = np.concatenate([X, Y_in], axis=2)
        Zhat, g_cache = self.g.forward(Z_in)
        return Yhat, Zhat, ForwardCache(f_cache, g_cache, y_source, M_Y)

    def backward(self, cache: ForwardCache, dYhat: np.ndarray,
                 dZhat: np.ndarray) -> GradientTape:
        tape = GradientTape()
        dZ_in = self.g.backward(cache.g_cache, dZhat, tape)
        if self.f is not None:
            dY = dYhat.copy()
            dY_in = dZ_in[:, :, self.d_x:]
            if cache.y_source == "f_hat":
                dY += dY_in
            elif cache.y_source == "observed_fill":
                M = np.ones_like(dY_in) if cache.y_mask is None else cache.y_mask
                dY += (1.0 - M) * dY_in
            self.f.backward(cache.f_cache, dY, tape)
        return tape


def _as_batch(a: np.ndarray) -> tuple[np.ndarray, bool]:
    a = np.asarray(a, dtype=np.float64)
    return (a[None], True) if a.ndim == 2 else (a, False)


def spatial_forward(model: ModelState, X_star: np.ndarray) -> np.ndarray:
    X, single = _as_batch(X_star)
    if model.f is None:
        Y = np.zeros(X.shape[:2] + (0,))
    else:
        Y = model.f.forward(X)[0]
    return Y[0] if single else Y


def temporal_forward(model: ModelState, Z_star: np.ndarray) -> np.ndarray:
    Z, single = _as_batch(Z_star)
    out = model.g.forward(Z)[0]
    return out[0] if single else out


def composite_forward(model: ModelState, X_star: np.ndarray, Y_source: str = "f_hat",
                      Y_star: np.ndarray | None = None, M_Y: np.ndarray | None = None):
    """Yhat = f(X*), Zhat_plus = g([X*, Y_in]) with Y_in chosen by ``Y_source``."""
    X, single = _as_batch(X_star)
    Yb = None if Y_star is None else _as_batch(Y_star)[0]
    Mb = None if M_Y is None else _as_batch(M_Y)[0]
    if Yb is not None and Yb.shape[1] != X.shape[1]:
        raise ShapeError(f"X has {X.shape[1]} steps but Y has {Yb.shape[1]}")
    Yhat, Zhat, _ = model.forward(X, Yb, Mb, Y_source)
    return (Yhat[0], Zhat[0]) if single else (Yhat, Zhat)


def predict_no_y(model: ModelState, X_star: np.ndarray) -> np.ndarray:
    """Forecast/impute using only auxiliary columns: targets come from f."""
    return composite_forward(model, X_star, "f_hat")[1]


# ---------------------------------------------------------------- construction


def learner_specs(kind_f: str, kind_g: str, I: int, O: int, d_x: int, d_y: int,
                  f_hidden=None, g_hidden=None) -> tuple[LearnerSpec | None, LearnerSpec]:
    d = d_x + d_y
    if kind_g == FORECAST_ONLY and O < 1:
        raise ConfigError("the forecast-only variant needs O >= 1")
    if kind_f == FORECAST_ONLY:
        raise ConfigError("the forecast-only kind applies to the temporal learner only")
    g_out = O if kind_g == FORECAST_ONLY else I + O
    if f_hidden is None:
        f_hidden = heuristic_hidden(d_x, d_y)
    if g_hidden is None:
        g_hidden = heuristic_hidden(I, g_out)
    if kind_f == BROADCAST_LINEAR:
        f_hidden = []
    if kind_g == BROADCAST_LINEAR:
        g_hidden = []
    f_spec = None
    if d_y > 0:
        fi, fo = (I * d_x, I * d_y) if kind_f == NO_BROADCAST_FCN else (d_x, d_y)
        f_spec = LearnerSpec(kind_f, tuple(f_hidden), fi, fo)
    gi, go = (I * d, g_out * d) if kind_g == NO_BROADCAST_FCN else (I, g_out)
    return f_spec, LearnerSpec(kind_g, tuple(g_hidden), gi, go)


def new_model(variant: str, I: int, O: int, d_x: int, d_y: int, seed: int = 0,
              f_hidden=None, g_hidden=None, adam: AdamState | None = None,
              rng: np.random.Generator | None = None) -> ModelState:
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; choose from {sorted(VARIANTS)}")
    if d_x < 1 or d_y < 0:
        raise ConfigError(f"need d_x >= 1 and d_y >= 0, got d_x={d_x}, d_y={d_y}")
    kind_f, kind_g, _ = VARIANTS[variant]
    f_spec, g_spec = learner_specs(kind_f, kind_g, I, O, d_x, d_y, f_hidden, g_hidden)
    if rng is None:
        from .data import substream
        rng = substream(seed, "init")
    f = None
    if f_spec is not None:
        f = SpatialLearner(f_spec, MLP.init(f_spec.in_width, list(f_spec.hidden),
                                            f_spec.out_width, rng), I, d_x, d_y)
    g = TemporalLearner(g_spec, MLP.init(g_spec.in_width, list(g_spec.hidden),
                                         g_spec.out_width, rng), I, O, d_x + d_y)
    return ModelState(f, g, d_x, d_y, I, O, adam or AdamState(), seed, variant)


def resolve_hidden(preset: str | None, f_hidden, g_hidden):
    """Hidden widths from explicit config, else the named architecture preset, else None."""
    if preset is not None:
        if preset not in ARCHITECTURE_PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(ARCHITECTURE_PRESETS)}")
        table = ARCHITECTURE_PRESETS[preset]
        f_hidden = table["f"]["hidden"] if f_hidden is None else f_hidden
        g_hidden = table["g"]["hidden"] if g_hidden is None else g_hidden
    return f_hidden, g_hidden


def build_model(config, d: int, I: int | None = None, O: int | None = None) -> ModelState:
    """Initialize the model a RunConfig describes, for a dataset with ``d`` columns."""
    I = config.I if I is None else I
    O = config.O if O is None else O
    d_y = config.d_y
    if not 0 <= d_y < d:
        raise ConfigError(f"d_y={d_y} must satisfy 0 <= d_y < d={d}")
    f_hidden, g_hidden = resolve_hidden(config.preset, config.f_hidden, config.g_hidden)
    variant = config.variant
    if config.preset and ARCHITECTURE_PRESETS[config.preset]["kind"] == BROADCAST_LINEAR \
            and variant == "joint":
        variant = "no_fcns"
    adam = AdamState(lr=config.optim.lr, beta1=config.optim.beta1, beta2=config.optim.beta2,
                     eps=config.optim.eps)
    model = new_model(variant, I, O, d - d_y, d_y, config.seed, f_hidden, g_hidden, adam)
    model.variant = config.variant
    return model


def broadcast_param_count(d_x: int, d_y: int, I: int, O: int, f_hidden, g_hidden) -> int:
    """Closed-form parameter count of the broadcast model."""
    def mlp(widths):
        return sum((a + 1) * b for a, b in zip(widths, widths[1:]))
    f = mlp([d_x, *f_hidden, d_y]) if d_y else 0
    return f + mlp([I, *g_hidden, I + O])


# ---------------------------------------------------------------- checkpoints

CHECKPOINT_VERSION = 1
_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


def _npy_bytes(a: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(a, dtype=np.float64), allow_pickle=False)
    return buf.getvalue()


def _write_member(zf: zipfile.ZipFile, name: str, data: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_ZIP_DATE)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def save_checkpoint(path, model: ModelState, standardizer=None, config_hash: str = "",
                    extra: dict | None = None) -> None:
    """Zip container: meta.json plus one .npy per weight / optimizer buffer.

    Member timestamps are fixed so identical states give identical bytes.
    """
    def spec_dict(learner):
        return None if learner is None else asdict(learner.spec)

    meta = {
        "format": "jointts-checkpoint",
        "version": CHECKPOINT_VERSION,
        "d_x": model.d_x, "d_y": model.d_y, "I": model.I, "O": model.O,
        "seed": model.seed, "variant": model.variant,
        "f_spec": spec_dict(model.f), "g_spec": spec_dict(model.g),
        "adam": {k: getattr(model.adam, k) for k in ("lr", "beta1", "beta2", "eps", "step")},
        "config_hash": config_hash,
        "standardizer": None if standardizer is None else {"fitted_on": standardizer.fitted_on},
        "extra": extra or {},
    }
    with zipfile.ZipFile(path, "w") as zf:
        _write_member(zf, "meta.json", json.dumps(meta, sort_keys=True, indent=1).encode())
        for name, p in sorted(model.parameters().items()):
            _write_member(zf, f"params/{name}.npy", _npy_bytes(p))
        for name in sorted(model.adam.m):
            _write_member(zf, f"adam_m/{name}.npy", _npy_bytes(model.adam.m[name]))
            _write_member(zf, f"adam_v/{name}.npy", _npy_bytes(model.adam.v[name]))
        if standardizer is not None:
            _write_member(zf, "standardizer/mean.npy", _npy_bytes(standardizer.mean))
            _write_member(zf, "standardizer/std.npy", _npy_bytes(standardizer.std))


def load_checkpoint(path):
    """Returns (model, standardizer or None, meta)."""
    from .data import Standardizer

    try:
        zf = zipfile.ZipFile(path)
        meta = json.loads(zf.read("meta.json"))
    except (OSError, zipfile.BadZipFile, KeyError, ValueError) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from None
    with zf:
        if meta.get("format") != "jointts-checkpoint":
            raise ConfigError(f"{path} is not a checkpoint")
        if meta["version"] > CHECKPOINT_VERSION:
            raise ConfigError(f"checkpoint version {meta['version']} is newer than supported")

        def arr(name):
            return np.lib.format.read_array(io.BytesIO(zf.read(name)), allow_pickle=False)

        arrays = {n: arr(n) for n in zf.namelist() if n.endswith(".npy")}

    def learner_from(spec_d, prefix):
        spec = LearnerSpec(**spec_d)
        n_layers = len(spec.hidden) + 1
        from .numerics import DenseLayer, IDENTITY, RELU
        layers = [DenseLayer(arrays[f"params/{prefix}{i}.weight.npy"],
                             arrays[f"params/{prefix}{i}.bias.npy"],
                             IDENTITY if i == n_layers - 1 else RELU) for i in range(n_layers)]
        return spec, MLP(layers)

    d_x, d_y, I, O = meta["d_x"], meta["d_y"], meta["I"], meta["O"]
    f = None
    if meta["f_spec"] is not None:
        spec, net = learner_from(meta["f_spec"], "f.")
        f = SpatialLearner(spec, net, I, d_x, d_y)
    spec, net = learner_from(meta["g_spec"], "g.")
    g = TemporalLearner(spec, net, I, O, d_x + d_y)
    a = meta["adam"]
    m = {k[len("adam_m/"):-4]: v for k, v in arrays.items() if k.startswith("adam_m/")}
    v = {k[len("adam_v/"):-4]: v for k, v in arrays.items() if k.startswith("adam_v/")}
    adam = AdamState(a["lr"], a["beta1"], a["beta2"], a["eps"], a["step"], m, v)
    model = ModelState(f, g, d_x, d_y, I, O, adam, meta["seed"], meta["variant"])
    std = None
    if meta["standardizer"] is not None:
        std = Standardizer(arrays["standardizer/mean.npy"], arrays["standardizer/std.npy"],
                           meta["standardizer"]["fitted_on"])
    return model, std, meta


def parameters_digest(model: ModelState) -> str:
    h = hashlib.sha256()
    for name, p in sorted(model.parameters().items()):
        h.update(name.encode())
        h.update(np.ascontiguousarray(p, dtype=np.float64).tobytes())
    return h.hexdigest()
