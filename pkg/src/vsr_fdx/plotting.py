"""SVG figures of traces and diagnosis logs for visual inspection."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .features import N_LABELS, label_samples  # noqa: E402
from .sim import FaultScenario, Trace  # noqa: E402


def plot_trace(trace: Trace, path, scenario: FaultScenario | None = None) -> Path:
    """Phase currents, DC-link voltage and (if ``scenario`` is given) the label timeline."""
    rows = 3 if scenario is not None else 2
    fig, axes = plt.subplots(rows, 1, sharex=True, figsize=(8, 2.2 * rows))
    ax = axes[0]
    for k, name in enumerate("abc"):
        ax.plot(trace.t, trace.i_abc[:, k], lw=0.7, label=f"i_{name}")
    ax.set_ylabel("current (A)")
    ax.legend(loc="upper right", ncol=3, fontsize=8)
    axes[1].plot(trace.t, trace.u_dc, lw=0.8, color="k")
    axes[1].set_ylabel("u_dc (V)")
    if scenario is not None:
        axes[2].step(trace.t, label_samples(trace, scenario), where="post", lw=0.8)
        axes[2].set_yticks(range(N_LABELS), [f"F{k}" for k in range(N_LABELS)])
        axes[2].set_ylabel("label")
    axes[-1].set_xlabel("time (s)")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path


def read_diagnosis_log(path) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Returns window start times, (W, 9) counts (F0..F7, error) and switch columns."""
    t, counts, switches = [], [], []
    with open(path) as fh:
        for line in fh:
            if not line.strip() or line.startswith(("window_index", "#")):
                continue
            parts = line.rstrip("\n").split(",")
            t.append(float(parts[1]))
            counts.append([int(v) for v in parts[2:2 + N_LABELS + 1]])
            switches.append(parts[2 + N_LABELS + 1] if len(parts) > 3 + N_LABELS else "")
    return np.array(t), np.array(counts, dtype=int).reshape(-1, N_LABELS + 1), switches


def plot_diagnosis_log(log_path, path) -> Path:
    """Stacked per-window label counts, in the style of a fault-process chart."""
    t, counts, _ = read_diagnosis_log(log_path)
    fig, ax = plt.subplots(figsize=(8, 3))
    idx = np.arange(len(t))
    bottom = np.zeros(len(t))
    names = [f"F{k}" for k in range(N_LABELS)] + ["Error"]
    for k, name in enumerate(names):
        if counts[:, k].any():
            ax.bar(idx, counts[:, k], bottom=bottom, width=0.9, label=name)
            bottom += counts[:, k]
    ax.set_xlabel("window")
    ax.set_ylabel("results per window")
    ax.legend(loc="upper right", ncol=5, fontsize=8)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path
