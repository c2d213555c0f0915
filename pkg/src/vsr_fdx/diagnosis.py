"""Per-sample decisions, 200-result window aggregation, debounced localization
and confusion-matrix evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyDatasetError, RegimeMismatchError
from .features import LABEL_SWITCHES, N_LABELS, FaultLabel, FeatureRegime, switch_names
from .mlp import MlpModel
from .sim import SWITCHES, SwitchId

ERROR = -1  # array encoding of an out-of-range network output
DEFAULT_THRESHOLD = 0.10
DEFAULT_DEBOUNCE = 2
WINDOW_SIZE = 200


def _round_half_away(f):
    return np.sign(f) * np.floor(np.abs(f) + 0.5)


def decide(f_value: float) -> FaultLabel | None:
    """Map a network output to a fault label; ``None`` marks the error outcome."""
    if -0.5 < f_value < 7.5:
        return FaultLabel(int(_round_half_away(f_value)))
    return None


def decide_array(f_values) -> np.ndarray:
    """Vectorized :func:`decide`; errors are encoded as ``ERROR`` (-1)."""
    f = np.asarray(f_values, dtype=float)
    ok = (f > -0.5) & (f < 7.5)
    out = np.full(f.shape, ERROR, dtype=np.int64)
    out[ok] = _round_half_away(f[ok]).astype(np.int64)
    return out


def _instantaneous_regime(model: MlpModel) -> FeatureRegime:
    try:
        regime = FeatureRegime.parse(model.regime)
    except (ValueError, TypeError):
        raise RegimeMismatchError(f"model has unknown regime {model.regime!r}") from None
    if not regime.is_instantaneous:
        raise RegimeMismatchError("time-series models classify windows, not samples")
    return regime


def classify_samples(model: MlpModel, i_abc) -> np.ndarray:
    """Decisions for an (N, 3) array of phase currents (ERROR = -1)."""
    regime = _instantaneous_regime(model)
    raw = regime.raw_features(np.asarray(i_abc, dtype=float).reshape(-1, 3))
    return decide_array(model.predict(raw))


def classify_sample(model: MlpModel, i_abc) -> FaultLabel | None:
    code = int(classify_samples(model, [i_abc])[0])
    return None if code == ERROR else FaultLabel(code)


# --- window aggregation and localization ----------------------------------------

@dataclass(frozen=True)
class WindowReport:
    window_index: int
    counts: tuple[int, ...]  # per label F0..F7
    error_count: int
    above_threshold: frozenset[FaultLabel]
    fault_switches: frozenset[SwitchId]
    t_start: float = 0.0
    window_span: float = 0.02

    @property
    def size(self) -> int:
        return sum(self.counts) + self.error_count

    def csv_row(self) -> str:
        counts = ",".join(str(c) for c in self.counts)
        return (f"{self.window_index},{self.t_start:.6f},{counts},{self.error_count},"
                f"{switch_names(self.fault_switches)}")


LOG_HEADER = ("window_index,t_start," + ",".join(f"count_F{k}" for k in range(N_LABELS))
              + ",count_err,fault_switches")


def aggregate_window(results, threshold: float = DEFAULT_THRESHOLD, *, window_index: int = 0,
                     t_start: float = 0.0, window_span: float = 0.02) -> WindowReport:
    """Count decisions in one frame and name the switches of frequent fault labels.

    ``results`` holds label codes 0..7, ``FaultLabel`` values, or ``None`` /
    ``ERROR`` for error outcomes.
    """
    if not 0.0 < threshold <= 1.0:
        raise ValueError("threshold must lie in (0, 1]")
    codes = np.array([ERROR if r is None else int(r) for r in results], dtype=np.int64)
    if codes.size == 0:
        raise ValueError("empty window")
    counts = np.bincount(codes[codes >= 0], minlength=N_LABELS)[:N_LABELS]
    errors = int(np.count_nonzero(codes < 0))
    need = threshold * codes.size
    above = frozenset(FaultLabel(k) for k in range(N_LABELS) if counts[k] >= need)
    switches = frozenset().union(*(LABEL_SWITCHES[lab] for lab in above))
    return WindowReport(window_index, tuple(int(c) for c in counts), errors, above,
                        switches, t_start, window_span)


@dataclass
class LocalizationState:
    """Debounce: confirm after M consecutive hits, retire after M consecutive misses."""

    debounce: int = DEFAULT_DEBOUNCE
    hits: dict = field(default_factory=lambda: {s: 0 for s in SWITCHES})
    misses: dict = field(default_factory=lambda: {s: 0 for s in SWITCHES})
    confirmed: set = field(default_factory=set)

    def __post_init__(self):
        if self.debounce < 1:
            raise ValueError("debounce must be >= 1")


def localize(report: WindowReport, state: LocalizationState) -> frozenset[SwitchId]:
    """Feed one window report; mutates ``state`` and returns the confirmed set."""
    m = state.debounce
    for sw in SWITCHES:
        if sw in report.fault_switches:
            state.hits[sw] = min(state.hits[sw] + 1, m)
            state.misses[sw] = 0
            if state.hits[sw] >= m:
                state.confirmed.add(sw)
        else:
            state.misses[sw] = min(state.misses[sw] + 1, m)
            state.hits[sw] = 0
            if sw in state.confirmed and state.misses[sw] >= m:
                state.confirmed.discard(sw)
    return frozenset(state.confirmed)


def localize_stream(reports, debounce: int = DEFAULT_DEBOUNCE):
    """Run :func:`localize` over ``reports``; yields the confirmed set after each."""
    state = LocalizationState(debounce)
    for rep in reports:
        yield localize(rep, state)


class DiagnosisSession:
    """Online pipeline: frame samples -> decisions -> window report -> localization."""

    def __init__(self, model: MlpModel, threshold: float = DEFAULT_THRESHOLD,
                 debounce: int = DEFAULT_DEBOUNCE, frame_period: float = 0.02):
        _instantaneous_regime(model)
        self.model = model
        self.threshold = threshold
        self.frame_period = frame_period
        self.state = LocalizationState(debounce)
        self.reports: list[WindowReport] = []
        self.confirmed_history: list[frozenset[SwitchId]] = []

    def process(self, window_index: int, i_abc) -> tuple[WindowReport, frozenset[SwitchId]]:
        decisions = classify_samples(self.model, i_abc)
        rep = aggregate_window(decisions, self.threshold, window_index=window_index,
                               t_start=window_index * self.frame_period,
                               window_span=self.frame_period)
        confirmed = localize(rep, self.state)
        self.reports.append(rep)
        self.confirmed_history.append(confirmed)
        return rep, confirmed

    @property
    def confirmed(self) -> frozenset[SwitchId]:
        return frozenset(self.state.confirmed)

    def log_text(self) -> str:
        return LOG_HEADER + "\n" + "".join(r.csv_row() + "\n" for r in self.reports)


# --- evaluation --------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Evaluation:
    counts: np.ndarray  # (8, 9) raw counts, last column = error outputs
    matrix: np.ndarray  # row-normalized counts
    macro_accuracy: float
    micro_accuracy: float
    error_rate: float

    @property
    def recalls(self) -> np.ndarray:
        return np.diag(self.matrix[:, :N_LABELS]).copy()

    def to_csv(self, path, meta: dict | None = None) -> None:
        with open(path, "w") as fh:
            if meta:
                fh.write("# " + ", ".join(f"{k}={v}" for k, v in meta.items()) + "\n")
            fh.write("true\\pred," + ",".join(f"F{k}" for k in range(N_LABELS)) + ",Error,n\n")
            for k in range(N_LABELS):
                row = ",".join(f"{v:.4f}" for v in self.matrix[k])
                fh.write(f"F{k},{row},{int(self.counts[k].sum())}\n")

    def summary(self) -> str:
        return (f"macro_accuracy={self.macro_accuracy:.4f} "
                f"micro_accuracy={self.micro_accuracy:.4f} "
                f"error_rate={self.error_rate:.5f} recalls="
                + " ".join(f"F{k}:{r:.4f}" for k, r in enumerate(self.recalls)))


def evaluate_decisions(y_true, decisions) -> Evaluation:
    y = np.asarray(y_true, dtype=np.int64).ravel()
    d = np.asarray(decisions, dtype=np.int64).ravel()
    if y.size == 0:
        raise EmptyDatasetError("empty test set")
    col = np.where(d == ERROR, N_LABELS, d)
    counts = np.zeros((N_LABELS, N_LABELS + 1), dtype=np.int64)
    np.add.at(counts, (y, col), 1)
    totals = counts.sum(axis=1, keepdims=True)
    matrix = np.divide(counts, totals, out=np.zeros(counts.shape), where=totals > 0)
    present = totals[:, 0] > 0
    diag = np.diag(matrix[:, :N_LABELS])
    macro = float(diag[present].mean())
    micro = float(np.trace(counts[:, :N_LABELS]) / y.size)
    return Evaluation(counts, matrix, macro, micro, float(np.count_nonzero(d == ERROR) / y.size))


def evaluate(model: MlpModel, x, y) -> Evaluation:
    """Confusion matrix of ``model`` on raw features ``x`` (any regime)."""
    return evaluate_decisions(y, decide_array(model.predict(x)))


def mean_diagonal(matrix) -> float:
    m = np.asarray(matrix, dtype=float)
    return float(np.mean(np.diag(m[:, :m.shape[0]])))

