"""Deep feedforward network: tansig hidden layers, purelin scalar output.

Trained by mini-batch gradient descent on the MSE between the network output
and the integer fault label, so the output approximates the label itself.
"""

from __future__ import annotations

import copy
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import (DimensionMismatchError, DivergedError, EmptyDatasetError,
                     MalformedFileError, VersionMismatchError)
from .features import NormalizationSpec, fit_normalization

MODEL_MAGIC = "vsr-mlp v1"
ACTIVATIONS = ("tansig", "purelin")
DEFAULT_HIDDEN = (16,) * 10


@dataclass
class Layer:
    weights: np.ndarray  # (out, in)
    biases: np.ndarray  # (out,)
    activation: str = "tansig"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.biases = np.asarray(self.biases, dtype=float).ravel()
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weights.ndim != 2 or self.weights.shape[0] != len(self.biases):
            raise DimensionMismatchError("layer weights/biases shapes disagree")

    @property
    def shape(self) -> tuple[int, int]:
        return self.weights.shape


@dataclass
class MlpModel:
    layers: list[Layer]
    norm: NormalizationSpec | None = None
    regime: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if nxt.weights.shape[1] != prev.weights.shape[0]:
                raise DimensionMismatchError("consecutive layer dimensions do not chain")
        if self.norm is not None and self.norm.dim != self.input_dim:
            raise DimensionMismatchError("normalization spec does not match input_dim")

    @property
    def input_dim(self) -> int:
        return self.layers[0].weights.shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weights.shape[0]

    @property
    def hidden_sizes(self) -> tuple[int, ...]:
        return tuple(layer.weights.shape[0] for layer in self.layers[:-1])

    @property
    def n_params(self) -> int:
        return sum(layer.weights.size + layer.biases.size for layer in self.layers)

    def copy(self) -> "MlpModel":
        return copy.deepcopy(self)

    def predict(self, raw_x) -> np.ndarray:
        """Normalize raw features with the embedded spec, then forward."""
        x = np.asarray(raw_x, dtype=float)
        if self.norm is not None:
            x = self.norm.apply(x)
        return forward(self, x)

    def get_params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend((layer.weights, layer.biases))
        return out


def param_count(input_dim: int, hidden=DEFAULT_HIDDEN, output_dim: int = 1) -> int:
    dims = [input_dim, *hidden, output_dim]
    return sum(o * i + o for i, o in zip(dims, dims[1:]))


def init_model(input_dim: int, hidden=DEFAULT_HIDDEN, seed: int = 0, *,
               regime: str = "", norm: NormalizationSpec | None = None) -> MlpModel:
    """Uniform +-sqrt(6 / (fan_in + fan_out)) weights, zero biases."""
    rng = np.random.default_rng(seed)
    dims = [input_dim, *hidden, 1]
    layers = []
    for k, (fan_in, fan_out) in enumerate(zip(dims, dims[1:])):
        lim = math.sqrt(6.0 / (fan_in + fan_out))
        act = "purelin" if k == len(dims) - 2 else "tansig"
        layers.append(Layer(rng.uniform(-lim, lim, (fan_out, fan_in)), np.zeros(fan_out), act))
    return MlpModel(layers, norm, regime, {"seed": seed})


def forward(model: MlpModel, x):
    """Evaluate the network on one vector (returns float) or rows of a matrix."""
    a = np.asarray(x, dtype=float)
    single = a.ndim == 1
    if a.shape[-1] != model.input_dim:
        raise DimensionMismatchError(
            f"input has {a.shape[-1]} features, model expects {model.input_dim}")
    a = a.reshape(-1, model.input_dim)
    for layer in model.layers:
        a = a @ layer.weights.T + layer.biases
        if layer.activation == "tansig":
            a = np.tanh(a)
    out = a[:, 0]
    return float(out[0]) if single else out


def loss_and_grads(model: MlpModel, x, y, *, reduce: str = "mean"):
    """MSE loss and its gradient per layer as ``[(dW, db), ...]``.

    With ``reduce="sum"`` both loss and gradients are sums over the batch,
    which lets partial results be combined exactly by addition.
    """
    x = np.asarray(x, dtype=float).reshape(-1, model.input_dim)
    y = np.asarray(y, dtype=float).ravel()
    acts = [x]
    a = x
    for layer in model.layers:
        a = a @ layer.weights.T + layer.biases
        if layer.activation == "tansig":
            a = np.tanh(a)
        acts.append(a)
    resid = acts[-1][:, 0] - y
    scale = 1.0 if reduce == "sum" else 1.0 / len(y)
    loss = float(np.sum(resid * resid) * scale)
    delta = (2.0 * scale * resid)[:, None]
    grads = [None] * len(model.layers)
    for k in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[k]
        if layer.activation == "tansig":
            delta = delta * (1.0 - acts[k + 1] ** 2)
        grads[k] = (delta.T @ acts[k], delta.sum(axis=0))
        if k:
            delta = delta @ layer.weights
    return loss, grads


def _tree_sum(items):
    items = list(items)
    while len(items) > 1:
        nxt = []
        for k in range(0, len(items) - 1, 2):
            a, b = items[k], items[k + 1]
            summed = [(wa + wb, ba + bb) for (wa, ba), (wb, bb) in zip(a[1], b[1])]
            nxt.append((a[0] + b[0], summed))
        if len(items) % 2:
            nxt.append(items[-1])
        items = nxt
    return items[0]


def batch_gradient(model: MlpModel, x, y, workers: int = 1, pool=None):
    """Mean loss and gradient; ``workers > 1`` splits the batch and tree-reduces."""
    n = len(y)
    if workers <= 1 or n < 2 * workers:
        return loss_and_grads(model, x, y)
    bounds = np.linspace(0, n, workers + 1).astype(int)
    chunks = [(x[a:b], y[a:b]) for a, b in zip(bounds, bounds[1:])]
    if pool is None:
        parts = [loss_and_grads(model, cx, cy, reduce="sum") for cx, cy in chunks]
    else:
        parts = list(pool.map(lambda c: loss_and_grads(model, c[0], c[1], reduce="sum"), chunks))
    loss, grads = _tree_sum(parts)
    return loss / n, [(gw / n, gb / n) for gw, gb in grads]


def mse(model: MlpModel, x, y, weights=None) -> float:
    """Mean squared error, optionally weighted by per-sample ``weights`` summing to 1."""
    r = forward(model, np.asarray(x, float).reshape(-1, model.input_dim)) - np.asarray(y, float)
    if weights is None:
        return float(np.mean(r * r))
    return float(np.sum(weights * r * r))


def balanced_weights(y) -> np.ndarray:
    """Per-sample weights giving every present class equal total weight."""
    labels = np.asarray(y).astype(np.int64)
    counts = np.bincount(labels)
    w = 1.0 / counts[labels]
    return w / w.sum()


# --- training --------------------------------------------------------------

@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    loss_goal: float = 1e-4
    max_epochs: int = 1000
    batch_size: int = 64
    seed: int = 0
    optimizer: str = "sgd"  # "sgd" (momentum) or "adam"
    momentum: float = 0.9
    patience: int = 50
    lr_backoff: bool = False
    lr_decay: float = 1.0  # per-epoch multiplicative decay
    class_balance: bool = False
    workers: int = 1
    time_limit: float | None = None  # seconds

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not self.loss_goal > 0:
            raise ValueError("loss_goal must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class TrainHistory:
    epochs: list[int] = field(default_factory=list)
    train_mse: list[float] = field(default_factory=list)
    val_mse: list[float] = field(default_factory=list)
    learning_rate: list[float] = field(default_factory=list)
    stop_reason: str = ""
    elapsed: float = 0.0

    def to_csv(self, path, meta: dict | None = None) -> None:
        extra = "".join(f", {k}={v}" for k, v in (meta or {}).items())
        with open(path, "w") as fh:
            fh.write(f"# stop_reason={self.stop_reason}, elapsed_s={self.elapsed:.3f}{extra}\n")
            fh.write("epoch,train_mse,val_mse,learning_rate\n")
            for row in zip(self.epochs, self.train_mse, self.val_mse, self.learning_rate):
                fh.write(f"{row[0]},{row[1]!r},{row[2]!r},{row[3]!r}\n")


class _Optimizer:
    def __init__(self, params, cfg: TrainConfig):
        self.cfg = cfg
        self.lr = cfg.learning_rate
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def reset(self):
        for a in self.m + self.v:
            a.fill(0.0)
        self.t = 0

    def step(self, params, grads):
        cfg = self.cfg
        self.t += 1
        if cfg.optimizer == "sgd":
            for p, g, m in zip(params, grads, self.m):
                m *= cfg.momentum
                m -= self.lr * g
                p += m
            return
        b1, b2, eps = 0.9, 0.999, 1e-8
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + eps)


def _flat_grads(grads):
    out = []
    for gw, gb in grads:
        out.extend((gw, gb))
    return out


def train(x, y, x_val=None, y_val=None, *, hidden=DEFAULT_HIDDEN,
          config: TrainConfig | None = None, regime: str = "",
          norm: NormalizationSpec | None = None, model: MlpModel | None = None,
          log=None):
    """Fit a network to raw features ``x`` and integer labels ``y``.

    The normalization spec is fitted on ``x`` unless given, and embedded in
    the returned model. Stops when the training MSE reaches ``loss_goal``,
    after ``max_epochs``, or when the validation MSE has not improved for
    ``patience`` epochs (the best-validation weights are kept).
    """
    cfg = config or TrainConfig()
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if len(y) == 0:
        raise EmptyDatasetError("empty training set")
    x = x.reshape(len(y), -1)
    norm = norm or fit_normalization(x)
    xn = norm.apply(x)
    has_val = x_val is not None and len(y_val) > 0
    if has_val:
        xv = norm.apply(np.asarray(x_val, dtype=float).reshape(len(y_val), -1))
        yv = np.asarray(y_val, dtype=float).ravel()
    if model is None:
        model = init_model(x.shape[1], hidden, cfg.seed, regime=regime, norm=norm)
    else:
        model = model.copy()
        model.norm, model.regime = norm, regime or model.regime
    rng = np.random.default_rng(cfg.seed)
    params = model.get_params()
    opt = _Optimizer(params, cfg)
    hist = TrainHistory()
    pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None

    weights = balanced_weights(y) if cfg.class_balance else None
    val_weights = balanced_weights(yv) if cfg.class_balance and has_val else None

    best_val, best_params, since_best = math.inf, None, 0
    prev_loss = mse(model, xn, y, weights)
    prev_params = [p.copy() for p in params]
    t_start = time.perf_counter()
    n = len(y)
    try:
        for epoch in range(1, cfg.max_epochs + 1):
            if weights is None:
                order = rng.permutation(n)
            else:
                order = rng.choice(n, size=n, p=weights)
            for a in range(0, n, cfg.batch_size):
                idx = order[a:a + cfg.batch_size]
                _, grads = batch_gradient(model, xn[idx], y[idx], cfg.workers, pool)
                opt.step(params, _flat_grads(grads))
            loss = mse(model, xn, y, weights)
            if not math.isfinite(loss):
                raise DivergedError(f"training loss became non-finite at epoch {epoch}")
            if cfg.lr_backoff and loss > prev_loss:
                for p, q in zip(params, prev_params):
                    p[...] = q
                opt.reset()
                opt.lr *= 0.5
                loss = prev_loss
            else:
                prev_loss = loss
                prev_params = [p.copy() for p in params]
            val = mse(model, xv, yv, val_weights) if has_val else math.nan
            hist.epochs.append(epoch)
            hist.train_mse.append(loss)
            hist.val_mse.append(val)
            hist.learning_rate.append(opt.lr)
            opt.lr *= cfg.lr_decay
            if log is not None:
                log(epoch, loss, val)
            if has_val:
                if val < best_val:
                    best_val, since_best = val, 0
                    best_params = [p.copy() for p in params]
                else:
                    since_best += 1
            if loss <= cfg.loss_goal:
                hist.stop_reason = "goal_reached"
                break
            if has_val and since_best >= cfg.patience:
                hist.stop_reason = "early_stop"
                break
            if cfg.time_limit is not None and time.perf_counter() - t_start > cfg.time_limit:
                hist.stop_reason = "time_limit"
                break
        else:
            hist.stop_reason = "max_epochs"
    finally:
        if pool is not None:
            pool.shutdown()
    if has_val and best_params is not None and hist.stop_reason != "goal_reached":
        for p, q in zip(params, best_params):
            p[...] = q
    hist.elapsed = time.perf_counter() - t_start
    model.meta.update(seed=cfg.seed, final_loss=mse(model, xn, y, weights), epochs=len(hist.epochs),
                      stop_reason=hist.stop_reason, optimizer=cfg.optimizer)
    return model, hist


# --- verification ------------------------------------------------------------

def gradient_check(model: MlpModel, x, y, epsilon: float = 1e-5) -> float:
    """Max relative error between backprop and central-difference gradients."""
    x = np.asarray(x, dtype=float).reshape(-1, model.input_dim)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    _, grads = loss_and_grads(model, x, y)
    worst = 0.0
    for layer, (gw, gb) in zip(model.layers, grads):
        for arr, g in ((layer.weights, gw), (layer.biases, gb)):
            flat = arr.reshape(-1)
            gflat = g.reshape(-1)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + epsilon
                lp, _ = loss_and_grads(model, x, y)
                flat[j] = orig - epsilon
                lm, _ = loss_and_grads(model, x, y)
                flat[j] = orig
                fd = (lp - lm) / (2.0 * epsilon)
                bp = gflat[j]
                err = abs(bp - fd) / max(abs(bp), abs(fd), 1e-12)
                worst = max(worst, err)
    return worst


# --- persistence -------------------------------------------------------------

def _fmt(values) -> str:
    return ",".join(repr(float(v)) for v in np.ravel(values))


def save_model(model: MlpModel, path) -> None:
    lines = [MODEL_MAGIC, "[arch]", f"input_dim = {model.input_dim}",
             "layers = " + " ".join(f"{l.weights.shape[0]}:{l.activation}" for l in model.layers),
             "[norm]"]
    if model.norm is not None:
        lines += [f"x_min = {_fmt(model.norm.x_min)}", f"x_max = {_fmt(model.norm.x_max)}"]
    lines += ["[regime]", model.regime or "none", "[meta]"]
    lines += [f"{k} = {v!r}" if isinstance(v, float) else f"{k} = {v}"
              for k, v in model.meta.items()]
    for k, layer in enumerate(model.layers):
        lines.append(f"[layer {k}]")
        lines.extend(_fmt(row) for row in layer.weights)
        lines.append(_fmt(layer.biases))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _floats(line: str, what: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in line.split(",")], dtype=float)
    except ValueError:
        raise MalformedFileError(f"bad number list in {what}") from None


def load_model(path) -> MlpModel:
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines:
        raise MalformedFileError("empty model file")
    head = lines[0].strip()
    if head != MODEL_MAGIC:
        if head.startswith("vsr-mlp"):
            raise VersionMismatchError(f"unsupported model version {head!r}")
        raise MalformedFileError(f"not a model file (header {head!r})")
    sections: dict[str, list[str]] = {}
    current = None
    for ln in lines[1:]:
        s = ln.strip()
        if not s:
            continue
        if s.startswith("[") and s.endswith("]"):
            current = s[1:-1].strip()
            sections[current] = []
        elif current is None:
            raise MalformedFileError(f"content outside a section: {s!r}")
        else:
            sections[current].append(s)

    def kv(name):
        out = {}
        for s in sections.get(name, []):
            k, sep, v = s.partition("=")
            if not sep:
                raise MalformedFileError(f"bad line in [{name}]: {s!r}")
            out[k.strip()] = v.strip()
        return out

    arch = kv("arch")
    try:
        input_dim = int(arch["input_dim"])
        spec = [tok.split(":") for tok in arch["layers"].split()]
        sizes = [int(a) for a, _ in spec]
        acts = [b for _, b in spec]
    except (KeyError, ValueError):
        raise MalformedFileError("bad [arch] section") from None
    dims = [input_dim, *sizes]
    layers = []
    for k, (fan_in, fan_out) in enumerate(zip(dims, dims[1:])):
        rows = sections.get(f"layer {k}")
        if rows is None or len(rows) != fan_out + 1:
            raise MalformedFileError(f"[layer {k}] missing or truncated")
        w = np.array([_floats(r, f"layer {k}") for r in rows[:fan_out]], dtype=object)
        if any(len(r) != fan_in for r in w):
            raise MalformedFileError(f"[layer {k}] rows must have {fan_in} weights")
        b = _floats(rows[fan_out], f"layer {k} biases")
        if len(b) != fan_out:
            raise MalformedFileError(f"[layer {k}] needs {fan_out} biases")
        try:
            layers.append(Layer(np.vstack(list(w)), b, acts[k]))
        except ValueError as exc:
            raise MalformedFileError(str(exc)) from None
    if f"layer {len(dims) - 1}" in sections:
        raise MalformedFileError("more layer sections than the architecture declares")
    norm_kv = kv("norm")
    norm = None
    if norm_kv:
        try:
            norm = NormalizationSpec(_floats(norm_kv["x_min"], "norm"),
                                     _floats(norm_kv["x_max"], "norm"))
        except (KeyError, ValueError) as exc:
            raise MalformedFileError(f"bad [norm] section: {exc}") from None
    regime = (sections.get("regime") or ["none"])[0]
    meta = {}
    for k, v in kv("meta").items():
        for conv in (int, float):
            try:
                meta[k] = conv(v)
                break
            except ValueError:
                continue
        else:
            meta[k] = v
    try:
        return MlpModel(layers, norm, "" if regime == "none" else regime, meta)
    except DimensionMismatchError as exc:
        raise MalformedFileError(str(exc)) from None
