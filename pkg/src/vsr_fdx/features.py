"""Feature regimes, min-max normalization, synthetic products and labeling."""

from __future__ import annotations

import enum
import io
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (EmptyDatasetError, MalformedFileError, TraceTooShortError,
                     UncodableFaultSetError)
from .sim import SWITCHES, FaultScenario, SwitchId, Trace, observability_mask, parse_header

DATASET_MAGIC = "vsr-dataset v1"
NORM_LOW = -1.0
NORM_HIGH = 1.0


class FaultLabel(enum.IntEnum):
    F0 = 0
    F1 = 1
    F2 = 2
    F3 = 3
    F4 = 4
    F5 = 5
    F6 = 6
    F7 = 7

    @property
    def switches(self) -> frozenset[SwitchId]:
        return LABEL_SWITCHES[self]

    @property
    def code(self) -> str:
        return self.name


S = SwitchId
LABEL_SWITCHES: dict[FaultLabel, frozenset[SwitchId]] = {
    FaultLabel.F0: frozenset(),
    FaultLabel.F1: frozenset({S.SaP}),
    FaultLabel.F2: frozenset({S.SaN}),
    FaultLabel.F3: frozenset({S.SbP}),
    FaultLabel.F4: frozenset({S.SbN}),
    FaultLabel.F5: frozenset({S.ScP}),
    FaultLabel.F6: frozenset({S.ScN}),
    FaultLabel.F7: frozenset({S.SaP, S.SbP}),
}
_SWITCHES_LABEL = {v: k for k, v in LABEL_SWITCHES.items()}
N_LABELS = len(FaultLabel)


def label_for_switches(switches) -> FaultLabel:
    key = frozenset(SwitchId(s) for s in switches)
    try:
        return _SWITCHES_LABEL[key]
    except KeyError:
        names = "+".join(sorted(s.value for s in key)) or "(none)"
        raise UncodableFaultSetError(f"switch set {names} has no fault code") from None


# --- normalization ---------------------------------------------------------

@dataclass(frozen=True, eq=False)
class NormalizationSpec:
    """Per-channel extrema of the training set; targets are fixed at [-1, 1]."""

    x_min: np.ndarray
    x_max: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.x_min, dtype=float).ravel()
        hi = np.asarray(self.x_max, dtype=float).ravel()
        if lo.shape != hi.shape:
            raise ValueError("x_min and x_max must have the same length")
        if np.any(lo > hi):
            raise ValueError("x_min must not exceed x_max")
        object.__setattr__(self, "x_min", lo)
        object.__setattr__(self, "x_max", hi)

    def __eq__(self, other):
        if not isinstance(other, NormalizationSpec):
            return NotImplemented
        return np.array_equal(self.x_min, other.x_min) and np.array_equal(self.x_max, other.x_max)

    @property
    def dim(self) -> int:
        return len(self.x_min)

    def apply(self, x) -> np.ndarray:
        """Normalize rows of ``x`` channel by channel (no clamping)."""
        x = np.asarray(x, dtype=float)
        span = self.x_max - self.x_min
        safe = np.where(span != 0.0, span, 1.0)
        out = (NORM_HIGH - NORM_LOW) * (x - self.x_min) / safe + NORM_LOW
        return np.where(span != 0.0, out, NORM_LOW)


def normalize(x: float, channel_spec: tuple[float, float]) -> float:
    x_min, x_max = channel_spec
    if x_max == x_min:
        return NORM_LOW
    return (NORM_HIGH - NORM_LOW) * (x - x_min) / (x_max - x_min) + NORM_LOW


def fit_normalization(dataset) -> NormalizationSpec:
    x = np.asarray(dataset, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.size == 0 or x.shape[0] == 0:
        raise EmptyDatasetError("cannot fit normalization on an empty dataset")
    return NormalizationSpec(x.min(axis=0), x.max(axis=0))


# --- feature regimes -------------------------------------------------------

def synthesize(i_a: float, i_b: float, i_c: float) -> tuple[float, ...]:
    return (i_a, i_b, i_c, i_a * i_b, i_a * i_c, i_b * i_c, i_a * i_b * i_c)


def synthesize_array(i_abc) -> np.ndarray:
    """Row-wise :func:`synthesize` for an (N, 3) array."""
    i = np.asarray(i_abc, dtype=float)
    a, b, c = i[..., 0], i[..., 1], i[..., 2]
    return np.stack([a, b, c, a * b, a * c, b * c, a * b * c], axis=-1)


@dataclass(frozen=True)
class FeatureRegime:
    kind: str
    window_len: int = 1

    KINDS = ("transient", "synthetic", "timeseries")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown regime {self.kind!r}")
        if self.window_len < 1:
            raise ValueError("window_len must be >= 1")
        if self.kind != "timeseries" and self.window_len != 1:
            object.__setattr__(self, "window_len", 1)

    @classmethod
    def transient(cls) -> "FeatureRegime":
        return cls("transient")

    @classmethod
    def synthetic(cls) -> "FeatureRegime":
        return cls("synthetic")

    @classmethod
    def time_series(cls, window_len: int = 200) -> "FeatureRegime":
        return cls("timeseries", window_len)

    @property
    def dim(self) -> int:
        return {"transient": 3, "synthetic": 7}.get(self.kind, 3 * self.window_len)

    @property
    def tag(self) -> str:
        return f"timeseries:{self.window_len}" if self.kind == "timeseries" else self.kind

    @property
    def is_instantaneous(self) -> bool:
        return self.kind != "timeseries"

    @classmethod
    def parse(cls, tag: str) -> "FeatureRegime":
        tag = tag.strip()
        if tag.startswith("timeseries"):
            _, _, w = tag.partition(":")
            return cls.time_series(int(w) if w else 200)
        return cls(tag)

    def raw_features(self, i_abc) -> np.ndarray:
        """Features for instantaneous regimes from an (N, 3) current array."""
        if self.kind == "synthetic":
            return synthesize_array(i_abc)
        if self.kind == "transient":
            return np.asarray(i_abc, dtype=float).reshape(-1, 3)
        raise ValueError("time-series features need a window; use extract()")


def extract(trace: Trace, regime: FeatureRegime, stride: int = 1):
    """Raw feature vectors and their source times.

    Time-series windows are flattened channel-major (all i_a, then i_b, then
    i_c) and stamped with the time of their last record.
    """
    i = np.asarray(trace.i_abc, dtype=float)
    if regime.is_instantaneous:
        return regime.raw_features(i), np.asarray(trace.t, dtype=float).copy()
    w = regime.window_len
    if len(i) < w:
        raise TraceTooShortError(f"trace has {len(i)} records, window needs {w}")
    win = np.lib.stride_tricks.sliding_window_view(i, w, axis=0)[::stride]
    x = np.ascontiguousarray(win.reshape(len(win), 3 * w))
    t = np.asarray(trace.t[w - 1::stride], dtype=float)[:len(x)]
    return x, t


def label_samples(trace: Trace, scenario: FaultScenario) -> np.ndarray:
    """Per-record fault label: code of (active faults) ∩ (observable switches)."""
    label_for_switches(scenario.switches)  # precondition: codable scenario
    n = len(trace)
    active = np.zeros((n, 6), dtype=bool)
    t = np.asarray(trace.t)
    for f in scenario.faults:
        on = t >= f.onset
        if f.clear is not None:
            on &= t < f.clear
        active[:, f.switch.index] = on
    visible = active & observability_mask(trace.ref_angle)
    lookup = np.full(64, -1, dtype=np.int64)
    for label, sws in LABEL_SWITCHES.items():
        lookup[sum(1 << s.index for s in sws)] = int(label)
    codes = lookup[(visible * (1 << np.arange(6))).sum(axis=1)]
    if np.any(codes < 0):
        raise UncodableFaultSetError("observable fault subset has no code")
    return codes


def window_labels(labels, regime: FeatureRegime, stride: int = 1) -> np.ndarray:
    """Labels aligned with :func:`extract` output (last record of each window)."""
    labels = np.asarray(labels)
    if regime.is_instantaneous:
        return labels.copy()
    return labels[regime.window_len - 1::stride].copy()


# --- datasets --------------------------------------------------------------

@dataclass(frozen=True)
class LabeledSample:
    features: tuple[float, ...]
    label: FaultLabel
    source_time: float


@dataclass(eq=False)
class Dataset:
    """Column-oriented labeled samples of one regime."""

    regime: FeatureRegime
    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float).reshape(-1, self.regime.dim)
        self.y = np.asarray(self.y, dtype=np.int64).ravel()
        self.t = np.asarray(self.t, dtype=float).ravel()
        if not (len(self.x) == len(self.y) == len(self.t)):
            raise ValueError("features, labels and times differ in length")

    def __len__(self):
        return len(self.y)

    def __iter__(self):
        for k in range(len(self)):
            yield LabeledSample(tuple(self.x[k].tolist()), FaultLabel(int(self.y[k])),
                                float(self.t[k]))

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.regime == other.regime and np.array_equal(self.x, other.x)
                and np.array_equal(self.y, other.y) and np.array_equal(self.t, other.t))

    def subset(self, idx) -> "Dataset":
        return Dataset(self.regime, self.x[idx], self.y[idx], self.t[idx], dict(self.meta))

    @classmethod
    def concat(cls, parts) -> "Dataset":
        parts = list(parts)
        if not parts:
            raise EmptyDatasetError("nothing to concatenate")
        return cls(parts[0].regime, np.concatenate([p.x for p in parts]),
                   np.concatenate([p.y for p in parts]), np.concatenate([p.t for p in parts]),
                   dict(parts[0].meta))

    @classmethod
    def from_samples(cls, regime: FeatureRegime, samples) -> "Dataset":
        samples = list(samples)
        x = np.array([s.features for s in samples], dtype=float).reshape(-1, regime.dim)
        return cls(regime, x, [int(s.label) for s in samples], [s.source_time for s in samples])


def write_dataset(ds: Dataset, path) -> None:
    header = f"{DATASET_MAGIC}, regime={ds.regime.tag}, dim={ds.regime.dim}"
    for key, value in ds.meta.items():
        header += f", {key}={value}"
    with open(path, "w") as fh:
        fh.write(header + "\n")
        if len(ds):
            table = np.column_stack([ds.x, ds.y.astype(float), ds.t])
            fmt = ["%.17g"] * ds.regime.dim + ["%d", "%.17g"]
            np.savetxt(fh, table, fmt=fmt, delimiter=",")


def read_dataset(path) -> Dataset:
    with open(path) as fh:
        first = fh.readline()
        body = fh.read()
    if not first:
        raise MalformedFileError("empty dataset file")
    meta = parse_header(first, DATASET_MAGIC)
    try:
        regime = FeatureRegime.parse(meta.pop("regime"))
        dim = int(meta.pop("dim"))
    except (KeyError, ValueError) as exc:
        raise MalformedFileError(f"bad dataset header: {exc}") from None
    if dim != regime.dim:
        raise MalformedFileError(f"dim={dim} does not match regime {regime.tag}")
    if not body.strip():
        return Dataset(regime, np.zeros((0, dim)), [], [], meta)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            table = np.loadtxt(io.StringIO(body), delimiter=",", ndmin=2)
    except ValueError as exc:
        raise MalformedFileError(f"bad dataset rows: {exc}") from None
    if table.shape[1] != dim + 2:
        raise MalformedFileError(f"expected {dim + 2} columns, found {table.shape[1]}")
    labels = table[:, dim]
    if np.any(labels != np.round(labels)) or np.any((labels < 0) | (labels >= N_LABELS)):
        raise MalformedFileError("label outside 0..7")
    return Dataset(regime, table[:, :dim], labels.astype(np.int64), table[:, dim + 1], meta)


def switch_names(switches) -> str:
    """``+``-joined names in canonical switch order (empty string for none)."""
    return "+".join(s.value for s in SWITCHES if s in switches)
