"""Forecaster interface, simple baselines, and a toy encoder transformer
whose attention exposes additive score-bias hooks.

Trainable models learn in normalized target space with mini-batch Adam and
early stopping on validation MSE; predictions are de-normalized to mm/h and
clamped at zero. Training is bit-deterministic per seed: initialization and
batch order both derive from the seed, never from global state.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import bfpf as bfpf_mod
from .autodiff import (
    Adam,
    Tensor,
    linear,
    no_grad,
    residual_layer_norm,
    scaled_attention,
    softmax,
)
from .bfpf import BfpfParams
from .core import TP_INDEX, VARIABLES, Seed, SplitIndices, StationSeries, rng_for

CHECKPOINT_MAGIC = b"NWB1"


class TrainingDiverged(RuntimeError):
    """Raised when the training loss stops being finite."""

    def __init__(self, epoch: int):
        super().__init__(f"diverged at epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class WindowConfig:
    """Sliding-window geometry: l_in input hours, l_out output steps of
    ``resolution`` hours each (the horizon spans l_out * resolution hours)."""

    l_in: int
    l_out: int
    resolution: int = 1
    stride: int = 1

    def __post_init__(self) -> None:
        if self.l_in < 2:
            raise ValueError("l_in must be at least 2")
        if self.l_out < 1 or self.resolution < 1:
            raise ValueError("l_out and resolution must be positive")
        if self.stride != 1:
            raise ValueError("only stride 1 is supported")

    @property
    def horizon_hours(self) -> int:
        return self.l_out * self.resolution


@dataclass(frozen=True)
class WindowedSample:
    X: np.ndarray          # l_in x 6, normalized
    X_raw_tp: np.ndarray   # l_in, raw mm/h (exact zeros preserved)
    y: np.ndarray          # l_out, raw mm/h at the window resolution


class WindowSet:
    """Stacked windowed samples for one split."""

    def __init__(self, X: np.ndarray, X_raw_tp: np.ndarray, y: np.ndarray):
        self.X = X
        self.X_raw_tp = X_raw_tp
        self.y = y

    def __len__(self) -> int:
        return self.X.shape[0]

    def __getitem__(self, i: int) -> WindowedSample:
        return WindowedSample(self.X[i], self.X_raw_tp[i], self.y[i])


@dataclass(frozen=True)
class Normalizer:
    """Per-variable z-scoring fitted on the training rows only.

    Variables with zero spread are flagged constant and their std clamped
    to 1 so the transform stays invertible.
    """

    mean: np.ndarray
    std: np.ndarray
    constant_flags: np.ndarray

    @classmethod
    def fit(cls, data: np.ndarray, rows: range | None = None) -> "Normalizer":
        block = np.asarray(data, dtype=np.float64)
        if rows is not None:
            block = block[rows.start : rows.stop]
        mean = block.mean(axis=0)
        std = block.std(axis=0)
        constant = std <= 1e-12
        std = np.where(constant, 1.0, std)
        return cls(mean=mean, std=std, constant_flags=constant)

    @classmethod
    def identity(cls, n_vars: int = len(VARIABLES)) -> "Normalizer":
        return cls(np.zeros(n_vars), np.ones(n_vars), np.zeros(n_vars, dtype=bool))

    def transform(self, data: np.ndarray) -> np.ndarray:
        return (data - self.mean) / self.std

    def inverse_transform(self, data: np.ndarray) -> np.ndarray:
        return data * self.std + self.mean

    def transform_target(self, y: np.ndarray) -> np.ndarray:
        return (y - self.mean[TP_INDEX]) / self.std[TP_INDEX]

    def inverse_target(self, y: np.ndarray) -> np.ndarray:
        return y * self.std[TP_INDEX] + self.mean[TP_INDEX]


def make_windows(series: StationSeries, cfg: WindowConfig) -> tuple[np.ndarray, np.ndarray]:
    """All sliding windows: start indices and aggregated raw targets.

    Target step j (1-based) is the mean raw tp over hours
    [start + l_in + (j-1)*R, start + l_in + j*R), keeping mm/h units at any
    resolution.
    """
    span = cfg.l_in + cfg.horizon_hours
    if series.n_hours < span:
        raise ValueError("insufficient length")
    n = series.n_hours - span + 1
    starts = np.arange(n)
    tp = series.tp
    target_windows = sliding_window_view(tp, cfg.horizon_hours)[cfg.l_in : cfg.l_in + n]
    targets = target_windows.reshape(n, cfg.l_out, cfg.resolution).mean(axis=2)
    return starts, targets


def window_dataset(series: StationSeries, cfg: WindowConfig, split: SplitIndices,
                   normalizer: Normalizer) -> dict[str, WindowSet]:
    """Split-assigned windowed samples with normalized inputs.

    A window belongs to the split containing its last target hour; windows
    whose targets straddle a boundary are dropped so no split ever trains or
    scores on another split's ground truth. Inputs may reach back into the
    previous split's raw history.
    """
    if not series.qc_applied:
        raise ValueError("window_dataset requires a qc_applied series")
    if split.total != series.n_hours:
        raise ValueError("split does not cover the series")
    starts, targets = make_windows(series, cfg)
    norm_data = normalizer.transform(series.data)
    x_view = sliding_window_view(norm_data, cfg.l_in, axis=0)  # (T-l_in+1, 6, l_in)
    raw_view = sliding_window_view(series.tp, cfg.l_in)

    first_target = starts + cfg.l_in
    last_target = first_target + cfg.horizon_hours - 1
    out: dict[str, WindowSet] = {}
    for name in ("train", "val", "test"):
        rng = getattr(split, name)
        mask = (first_target >= rng.start) & (last_target < rng.stop)
        sel = starts[mask]
        out[name] = WindowSet(
            X=np.ascontiguousarray(x_view[sel].transpose(0, 2, 1)),
            X_raw_tp=np.ascontiguousarray(raw_view[sel]),
            y=np.ascontiguousarray(targets[mask]),
        )
    return out


# ---------------------------------------------------------------------------
# attention


def attention_forward(q: Tensor, k: Tensor, v: Tensor, bias_hooks=()) -> Tensor:
    """Scaled dot-product attention with ordered additive score modifiers.

    q, k, v: B x H x L x d_head tensors. Each hook maps the score tensor
    S (B x H x L_Q x L_K) to S + bias; softmax runs over the key axis.
    """
    d_head = q.shape[-1]
    scores = (q @ k.transpose((0, 1, 3, 2))) * (1.0 / np.sqrt(d_head))
    for hook in bias_hooks:
        scores = hook(scores)
    return softmax(scores) @ v


def _sinusoidal_encoding(length: int, dim: int) -> np.ndarray:
    pos = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(dim, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * np.floor(i / 2.0) / dim)
    enc = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return enc


# ---------------------------------------------------------------------------
# configs


@dataclass(frozen=True)
class TransformerConfig:
    d_model: int = 32
    n_heads: int = 4
    n_layers: int = 2
    ff_dim: int = 64
    dropout: float = 0.0
    bfpf: BfpfParams | None = None

    def __post_init__(self) -> None:
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        if self.dropout != 0.0:
            raise ValueError("nonzero dropout breaks the determinism contract")
        if min(self.d_model, self.n_heads, self.n_layers, self.ff_dim) < 1:
            raise ValueError("model dimensions must be positive")

    @property
    def bfpf_enabled(self) -> bool:
        return self.bfpf is not None


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 50
    patience: int = 3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self) -> None:
        if min(self.learning_rate, self.eps) <= 0:
            raise ValueError("learning_rate and eps must be positive")
        if min(self.batch_size, self.max_epochs, self.patience) < 1:
            raise ValueError("batch_size, max_epochs and patience must be positive")


# ---------------------------------------------------------------------------
# forecasters


class Forecaster:
    """Common surface: fit on windowed splits, predict de-normalized mm/h."""

    name: str = "forecaster"
    is_trainable: bool = False

    def __init__(self, window: WindowConfig, normalizer: Normalizer):
        self.window = window
        self.normalizer = normalizer
        self.params: dict[str, Tensor] = {}
        self.trace: list[dict] = []

    def fit(self, train: WindowSet, val: WindowSet, tc: TrainConfig, seed: Seed | int):
        return self

    def predict_batch(self, X: np.ndarray, X_raw_tp: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def config_dict(self) -> dict:
        return {}


class ZeroForecaster(Forecaster):
    name = "zero"

    def predict_batch(self, X, X_raw_tp):
        return np.zeros((X.shape[0], self.window.l_out))


class PersistenceForecaster(Forecaster):
    """Repeats the last observed raw rainfall value across the horizon."""

    name = "persistence"

    def predict_batch(self, X, X_raw_tp):
        last = np.asarray(X_raw_tp)[:, -1:]
        return np.maximum(np.repeat(last, self.window.l_out, axis=1), 0.0)


class MovingAverageForecaster(Forecaster):
    """Mean of the last ``window_hours`` raw rainfall values, repeated."""

    name = "moving_average"

    def __init__(self, window, normalizer, window_hours: int = 6):
        super().__init__(window, normalizer)
        self.window_hours = min(window_hours, window.l_in)

    def predict_batch(self, X, X_raw_tp):
        tail = np.asarray(X_raw_tp)[:, -self.window_hours :]
        mean = tail.mean(axis=1, keepdims=True)
        return np.maximum(np.repeat(mean, self.window.l_out, axis=1), 0.0)


class _TrainableForecaster(Forecaster):
    is_trainable = True

    def __init__(self, window, normalizer):
        super().__init__(window, normalizer)
        self.best_epoch: int | None = None
        self.best_val: float | None = None

    # subclasses fill self.params in declaration order
    def initialize(self, seed: Seed | int) -> None:
        raise NotImplementedError

    def _forward(self, X: np.ndarray, X_raw_tp: np.ndarray | None) -> Tensor:
        raise NotImplementedError

    def _loss(self, X: np.ndarray, X_raw_tp: np.ndarray | None, y_norm: np.ndarray) -> Tensor:
        out = self._forward(X, X_raw_tp)
        err = out - Tensor(y_norm)
        return (err * err).mean()

    def _val_mse(self, X, X_raw_tp, y_norm, chunk: int = 1024) -> float:
        total = 0.0
        n = X.shape[0]
        with no_grad():
            for lo in range(0, n, chunk):
                hi = min(lo + chunk, n)
                out = self._forward(X[lo:hi], None if X_raw_tp is None else X_raw_tp[lo:hi])
                total += float(((out.data - y_norm[lo:hi]) ** 2).sum())
        return total / (n * y_norm.shape[1])

    def fit(self, train: WindowSet, val: WindowSet, tc: TrainConfig, seed: Seed | int):
        if len(train) == 0 or len(val) == 0:
            raise ValueError("empty training or validation set")
        self.initialize(seed)
        y_train = self.normalizer.transform_target(train.y)
        y_val = self.normalizer.transform_target(val.y)
        optimizer = Adam(list(self.params.values()), lr=tc.learning_rate,
                         beta1=tc.beta1, beta2=tc.beta2, eps=tc.eps)
        order_rng = rng_for(seed, "batch-order", self.name)
        best_val = np.inf
        best_state = [p.data.copy() for p in self.params.values()]
        stale = 0
        self.trace = []
        n = len(train)
        for epoch in range(tc.max_epochs):
            perm = order_rng.permutation(n)
            epoch_loss = 0.0
            for lo in range(0, n, tc.batch_size):
                idx = perm[lo : lo + tc.batch_size]
                loss = self._loss(train.X[idx], train.X_raw_tp[idx], y_train[idx])
                value = loss.item()
                if not np.isfinite(value):
                    raise TrainingDiverged(epoch)
                epoch_loss += value * len(idx)
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
            val_mse = self._val_mse(val.X, val.X_raw_tp, y_val)
            if not np.isfinite(val_mse):
                raise TrainingDiverged(epoch)
            self.trace.append({"epoch": epoch, "train_loss": epoch_loss / n, "val_mse": val_mse})
            if val_mse < best_val:
                best_val = val_mse
                best_state = [p.data.copy() for p in self.params.values()]
                self.best_epoch = epoch
                stale = 0
            else:
                stale += 1
                if stale >= tc.patience:
                    break
        for p, data in zip(self.params.values(), best_state):
            p.data = data
        self.best_val = float(best_val)
        return self

    def predict_batch(self, X, X_raw_tp, chunk: int = 1024):
        n = X.shape[0]
        parts = []
        with no_grad():
            for lo in range(0, n, chunk):
                hi = min(lo + chunk, n)
                out = self._forward(X[lo:hi], None if X_raw_tp is None else X_raw_tp[lo:hi])
                parts.append(out.data)
        raw = self.normalizer.inverse_target(np.concatenate(parts, axis=0))
        return np.maximum(raw, 0.0)

    def _new_param(self, name: str, data: np.ndarray) -> Tensor:
        t = Tensor(data, requires_grad=True)
        self.params[name] = t
        return t

    def _init_linear(self, rng, name: str, fan_in: int, fan_out: int):
        bound = 1.0 / np.sqrt(fan_in)
        w = self._new_param(f"{name}.weight", rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        b = self._new_param(f"{name}.bias", rng.uniform(-bound, bound, size=(fan_out,)))
        return w, b


class LinearForecaster(_TrainableForecaster):
    """Flattened linear map from the normalized input window to the horizon."""

    name = "linear"

    def initialize(self, seed):
        self.params = {}
        rng = rng_for(seed, "init", self.name)
        self._init_linear(rng, "out", self.window.l_in * len(VARIABLES), self.window.l_out)

    def _forward(self, X, X_raw_tp):
        flat = np.asarray(X, dtype=np.float64).reshape(X.shape[0], -1)
        return linear(Tensor(flat), self.params["out.weight"], self.params["out.bias"])


class TransformerForecaster(_TrainableForecaster):
    """Toy encoder transformer over hourly tokens with a flatten head.

    Tokens are individual hours so the zero-distance bias keeps its per-step
    meaning. When bias hooks are configured, the proximity weights come from
    the raw rainfall channel of each window and are reused at every layer.
    """

    name = "transformer"

    def __init__(self, window, normalizer, cfg: TransformerConfig | None = None):
        super().__init__(window, normalizer)
        self.cfg = cfg or TransformerConfig()
        self._posenc = _sinusoidal_encoding(window.l_in, self.cfg.d_model)

    def initialize(self, seed):
        self.params = {}
        cfg = self.cfg
        rng = rng_for(seed, "init", "transformer")
        self._init_linear(rng, "embed", len(VARIABLES), cfg.d_model)
        bound = 1.0 / np.sqrt(cfg.d_model)
        for i in range(cfg.n_layers):
            self._init_linear(rng, f"layer{i}.attn.wq", cfg.d_model, cfg.d_model)
            # no key bias: softmax is invariant to per-query constant score
            # shifts, so a key bias would be a dead (zero-gradient) direction
            self._new_param(f"layer{i}.attn.wk.weight",
                            rng.uniform(-bound, bound, size=(cfg.d_model, cfg.d_model)))
            self._init_linear(rng, f"layer{i}.attn.wv", cfg.d_model, cfg.d_model)
            self._init_linear(rng, f"layer{i}.attn.wo", cfg.d_model, cfg.d_model)
            self._new_param(f"layer{i}.ln1.gain", np.ones(cfg.d_model))
            self._new_param(f"layer{i}.ln1.bias", np.zeros(cfg.d_model))
            self._init_linear(rng, f"layer{i}.ff.w1", cfg.d_model, cfg.ff_dim)
            self._init_linear(rng, f"layer{i}.ff.w2", cfg.ff_dim, cfg.d_model)
            self._new_param(f"layer{i}.ln2.gain", np.ones(cfg.d_model))
            self._new_param(f"layer{i}.ln2.bias", np.zeros(cfg.d_model))
        self._init_linear(rng, "head", self.window.l_in * cfg.d_model, self.window.l_out)
        if cfg.bfpf_enabled:
            # learnable bias scales start at configured constants, not RNG
            # draws, so enabling them never shifts the shared init stream
            self._new_param("bfpf.lambda", np.float64(cfg.bfpf.lambda_scale))
            self._new_param("bfpf.alpha", np.float64(cfg.bfpf.alpha_scale))

    def _bias_terms(self, X_raw_tp: np.ndarray | None):
        """(learnable scalar, constant score bias) pairs for the fused
        attention kernel; equivalent to the hook composition."""
        cfg = self.cfg
        if not cfg.bfpf_enabled:
            return ()
        terms = []
        if cfg.bfpf.nonzero_focus:
            if X_raw_tp is None:
                raise ValueError("non-zero focus requires the raw rainfall channel")
            distances = bfpf_mod.zero_distance(X_raw_tp, cfg.bfpf.sentinel)
            proximity = bfpf_mod.proximity_weights(distances, cfg.bfpf.tau)
            terms.append((self.params["bfpf.lambda"], proximity[:, None, None, :]))
        if cfg.bfpf.temporal_focus:
            l_k = self.window.l_in
            ramp = np.arange(l_k, dtype=np.float64) / l_k
            terms.append((self.params["bfpf.alpha"], ramp))
        return terms

    def _forward(self, X, X_raw_tp):
        cfg = self.cfg
        batch, l_in, _ = X.shape
        d_head = cfg.d_model // cfg.n_heads
        bias_terms = self._bias_terms(X_raw_tp)
        scale = 1.0 / np.sqrt(d_head)
        h = linear(Tensor(X), self.params["embed.weight"], self.params["embed.bias"])
        h = h + Tensor(self._posenc)
        for i in range(cfg.n_layers):
            def split_heads(t):
                return t.reshape(batch, l_in, cfg.n_heads, d_head).transpose((0, 2, 1, 3))

            q = split_heads(linear(h, self.params[f"layer{i}.attn.wq.weight"],
                                   self.params[f"layer{i}.attn.wq.bias"]))
            k = split_heads(linear(h, self.params[f"layer{i}.attn.wk.weight"]))
            v = split_heads(linear(h, self.params[f"layer{i}.attn.wv.weight"],
                                   self.params[f"layer{i}.attn.wv.bias"]))
            ctx = scaled_attention(q, k, v, scale, bias_terms)
            ctx = ctx.transpose((0, 2, 1, 3)).reshape(batch, l_in, cfg.d_model)
            ctx = linear(ctx, self.params[f"layer{i}.attn.wo.weight"],
                         self.params[f"layer{i}.attn.wo.bias"])
            h = residual_layer_norm(h, ctx, self.params[f"layer{i}.ln1.gain"],
                                    self.params[f"layer{i}.ln1.bias"])
            ff = linear(h, self.params[f"layer{i}.ff.w1.weight"],
                        self.params[f"layer{i}.ff.w1.bias"]).gelu()
            ff = linear(ff, self.params[f"layer{i}.ff.w2.weight"],
                        self.params[f"layer{i}.ff.w2.bias"])
            h = residual_layer_norm(h, ff, self.params[f"layer{i}.ln2.gain"],
                                    self.params[f"layer{i}.ln2.bias"])
        flat = h.reshape(batch, l_in * cfg.d_model)
        return linear(flat, self.params["head.weight"], self.params["head.bias"])

    def config_dict(self) -> dict:
        cfg = self.cfg
        out = {"d_model": cfg.d_model, "n_heads": cfg.n_heads, "n_layers": cfg.n_layers,
               "ff_dim": cfg.ff_dim, "dropout": cfg.dropout}
        if cfg.bfpf_enabled:
            b = cfg.bfpf
            out["bfpf"] = {"enabled": True, "tau": b.tau, "lambda_init": b.lambda_scale,
                           "alpha_init": b.alpha_scale, "nonzero_focus": b.nonzero_focus,
                           "temporal_focus": b.temporal_focus, "sentinel": b.sentinel}
        return out


# ---------------------------------------------------------------------------
# module-level ops


def fit(model: Forecaster, train: WindowSet, val: WindowSet,
        tc: TrainConfig, seed: Seed | int) -> Forecaster:
    if len(train) == 0 or len(val) == 0:
        raise ValueError("empty training or validation set")
    return model.fit(train, val, tc, seed)


def predict(model: Forecaster, X: np.ndarray, X_raw_tp: np.ndarray) -> np.ndarray:
    """De-normalized mm/h predictions, clamped at zero.

    Accepts a single window (l_in x 6) or a batch (n x l_in x 6).
    """
    X = np.asarray(X, dtype=np.float64)
    X_raw_tp = np.asarray(X_raw_tp, dtype=np.float64)
    single = X.ndim == 2
    if single:
        X = X[None]
        X_raw_tp = X_raw_tp[None]
    if X.ndim != 3 or X.shape[1] != model.window.l_in or X.shape[2] != len(VARIABLES):
        raise ValueError(f"input shape {X.shape} does not match window config")
    if X_raw_tp.shape != X.shape[:2]:
        raise ValueError("X_raw_tp must match the input batch and length")
    out = model.predict_batch(X, X_raw_tp)
    return out[0] if single else out


def grad_check(model: _TrainableForecaster, X: np.ndarray, X_raw_tp: np.ndarray | None,
               y: np.ndarray, step: float = 1e-5) -> float:
    """Max relative error between reverse-mode and central finite-difference
    gradients over every parameter (denominator max(|g|, 1e-8)).

    The perturbed losses are evaluated in extended precision so that the
    difference quotient is not dominated by double rounding; the reverse-mode
    gradients under test stay in ordinary double precision.
    """
    if not model.params:
        raise ValueError("model must be initialized before grad_check")
    y_norm = model.normalizer.transform_target(np.asarray(y, dtype=np.float64))
    loss = model._loss(X, X_raw_tp, y_norm)
    for p in model.params.values():
        p.grad = None
    loss.backward()
    analytic = {name: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
                for name, p in model.params.items()}
    saved = {name: p.data for name, p in model.params.items()}
    try:
        for p in model.params.values():
            p.data = p.data.astype(np.longdouble)
        long_step = np.longdouble(step)
        worst = 0.0
        for name, p in model.params.items():
            flat = p.data.reshape(-1)
            grads = analytic[name].reshape(-1)
            for j in range(flat.size):
                keep = flat[j]
                flat[j] = keep + long_step
                up = model._loss(X, X_raw_tp, y_norm).data
                flat[j] = keep - long_step
                down = model._loss(X, X_raw_tp, y_norm).data
                flat[j] = keep
                fd = float((up - down) / (2.0 * long_step))
                denom = max(abs(grads[j]), abs(fd), 1e-8)
                worst = max(worst, abs(grads[j] - fd) / denom)
    finally:
        for name, p in model.params.items():
            p.data = saved[name]
    return worst


# ---------------------------------------------------------------------------
# registry and checkpoints


def build_model(spec: dict, window: WindowConfig, normalizer: Normalizer) -> Forecaster:
    """Construct a forecaster from a config mapping.

    ``name`` is the reporting label; ``type`` defaults to the name. The
    ``bfpf`` sub-mapping accepts enabled/tau/lambda_init/alpha_init/
    nonzero_focus/temporal_focus.
    """
    spec = dict(spec)
    name = spec.pop("name")
    kind = spec.pop("type", name)
    if kind == "zero":
        model = ZeroForecaster(window, normalizer)
    elif kind == "persistence":
        model = PersistenceForecaster(window, normalizer)
    elif kind == "moving_average":
        model = MovingAverageForecaster(window, normalizer,
                                        window_hours=spec.pop("window_hours", 6))
    elif kind == "linear":
        model = LinearForecaster(window, normalizer)
    elif kind in ("transformer", "transformer_bfpf"):
        bspec = spec.pop("bfpf", {"enabled": kind == "transformer_bfpf"})
        bparams = None
        if bspec.get("enabled", True):
            bparams = BfpfParams(
                tau=bspec.get("tau", 2.0),
                lambda_scale=bspec.get("lambda_init", 0.1),
                alpha_scale=bspec.get("alpha_init", 0.1),
                nonzero_focus=bspec.get("nonzero_focus", True),
                temporal_focus=bspec.get("temporal_focus", True),
                sentinel=bspec.get("sentinel", 1e4),
            )
        cfg = TransformerConfig(
            d_model=spec.pop("d_model", 32),
            n_heads=spec.pop("n_heads", 4),
            n_layers=spec.pop("n_layers", 2),
            ff_dim=spec.pop("ff_dim", 64),
            dropout=spec.pop("dropout", 0.0),
            bfpf=bparams,
        )
        model = TransformerForecaster(window, normalizer, cfg)
    else:
        raise ValueError(f"unknown model type: {kind}")
    model.name = name
    if spec:
        raise ValueError(f"unknown model config keys: {sorted(spec)}")
    return model


MODEL_NAMES = ("zero", "persistence", "moving_average", "linear",
               "transformer", "transformer_bfpf")


def save_checkpoint(model: Forecaster, path) -> None:
    """Versioned flat binary: magic, JSON config block, then little-endian
    float64 parameter arrays in declaration order."""
    header = {
        "name": model.name,
        "type": type(model).name,
        "window": {"l_in": model.window.l_in, "l_out": model.window.l_out,
                   "resolution": model.window.resolution},
        "normalizer": {
            "mean": model.normalizer.mean.tolist(),
            "std": model.normalizer.std.tolist(),
            "constant_flags": model.normalizer.constant_flags.astype(int).tolist(),
        },
        "config": model.config_dict(),
        "params": [{"name": k, "shape": list(v.data.shape)} for k, v in model.params.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for tensor in model.params.values():
            fh.write(np.ascontiguousarray(tensor.data, dtype="<f8").tobytes())


def load_checkpoint(path) -> Forecaster:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a checkpoint file (magic {magic!r})")
        (length,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(length).decode("utf-8"))
        window = WindowConfig(**header["window"])
        norm = Normalizer(
            mean=np.asarray(header["normalizer"]["mean"]),
            std=np.asarray(header["normalizer"]["std"]),
            constant_flags=np.asarray(header["normalizer"]["constant_flags"], dtype=bool),
        )
        spec = {"name": header["name"], "type": header["type"]}
        cfg = dict(header.get("config", {}))
        if "bfpf" in cfg:
            spec["bfpf"] = cfg.pop("bfpf")
        spec.update(cfg)
        model = build_model(spec, window, norm)
        if header["params"]:
            if not isinstance(model, _TrainableForecaster):
                raise ValueError("checkpoint carries parameters for an untrainable model")
            model.initialize(Seed(0))
            saved = [(entry["name"], tuple(entry["shape"])) for entry in header["params"]]
            current = [(k, tuple(v.data.shape)) for k, v in model.params.items()]
            if saved != current:
                raise ValueError("checkpoint parameter layout does not match config")
            for entry in header["params"]:
                tensor = model.params[entry["name"]]
                count = int(np.prod(entry["shape"])) if entry["shape"] else 1
                buf = fh.read(count * 8)
                data = np.frombuffer(buf, dtype="<f8").reshape(entry["shape"])
                tensor.data = np.array(data, dtype=np.float64)
    return model
