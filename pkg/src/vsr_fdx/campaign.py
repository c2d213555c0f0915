"""Scripted fault-injection campaigns producing labeled train/val/test datasets."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import config_hash, parse_float, parse_params, read_kv_file
from .errors import ConfigError, EmptyDatasetError
from .features import (LABEL_SWITCHES, N_LABELS, Dataset, FaultLabel, FeatureRegime, extract,
                       label_samples, window_labels, write_dataset)
from .mlp import TrainConfig
from .sim import FaultScenario, SimParams, simulate

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")


@dataclass
class CampaignScenario:
    scenario: FaultScenario
    duration: float
    seed: int
    label: FaultLabel


@dataclass
class CampaignConfig:
    params: SimParams = field(default_factory=SimParams)
    classes: tuple[int, ...] = tuple(range(N_LABELS))
    traces_per_class: int = 5
    settle: float = 0.2  # discarded start-up interval
    span: float = 0.25  # recorded interval per trace
    train_fraction: float = 0.05
    val_fraction: float = 0.05
    regimes: tuple[FeatureRegime, ...] = (FeatureRegime.transient(), FeatureRegime.synthetic())
    timeseries_stride: int = 25
    train: TrainConfig = field(default_factory=TrainConfig)
    hidden: tuple[int, ...] = (16,) * 10
    seed: int = 0
    out_dir: str = "campaign"
    hash: str = ""

    def __post_init__(self):
        for name in ("train_fraction", "val_fraction"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ConfigError(f"{name} must lie in (0, 1)")
        if self.train_fraction + self.val_fraction > 1.0:
            raise ConfigError("split fractions must sum to at most 1")
        if self.traces_per_class < 1:
            raise ConfigError("traces_per_class must be >= 1")
        for c in self.classes:
            if not 0 <= c < N_LABELS:
                raise ConfigError(f"class {c} outside 0..7")

    def scenarios(self) -> list[CampaignScenario]:
        """One trace per (class, repetition) with a random fault-onset angle.

        Onsets are uniform over one fundamental period after the settle time,
        so every observability region is hit at fault inception.
        """
        rng = np.random.default_rng(self.seed)
        period = 1.0 / self.params.grid_freq
        out = []
        for c in self.classes:
            label = FaultLabel(c)
            for _ in range(self.traces_per_class):
                onset = self.settle + float(rng.uniform(0.0, period))
                scen = FaultScenario.single(sorted(LABEL_SWITCHES[label]), onset)
                out.append(CampaignScenario(scen, self.settle + self.span,
                                            int(rng.integers(2**31)), label))
        return out


def _parse_int_list(key, value):
    try:
        return tuple(int(v) for v in value.replace("+", ",").split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"{key}: expected integers, got {value!r}") from None


def load_campaign_config(path) -> CampaignConfig:
    items = read_kv_file(path)
    return parse_campaign_items(items, str(path))


def parse_campaign_items(items, source="<config>") -> CampaignConfig:
    params, rest = parse_params(items)
    cfg = CampaignConfig(params=params, hash=config_hash(items))
    train_kw = {}
    train_fields = {"learning_rate": float, "loss_goal": float, "max_epochs": int,
                    "batch_size": int, "optimizer": str, "momentum": float, "patience": int,
                    "lr_decay": float, "class_balance": lambda v: v.lower() in ("1", "true", "yes"),
                    "workers": int, "time_limit": float}
    for key, value in rest:
        if key in train_fields:
            conv = train_fields[key]
            try:
                train_kw[key] = conv(value)
            except ValueError:
                raise ConfigError(f"{source}: bad value for {key}: {value!r}") from None
        elif key == "classes":
            cfg.classes = _parse_int_list(key, value)
        elif key == "traces_per_class":
            cfg.traces_per_class = int(parse_float(key, value))
        elif key in ("settle", "span", "train_fraction", "val_fraction"):
            setattr(cfg, key, parse_float(key, value))
        elif key == "regimes":
            try:
                cfg.regimes = tuple(FeatureRegime.parse(v) for v in value.split(",") if v.strip())
            except ValueError as exc:
                raise ConfigError(f"{source}: {exc}") from None
        elif key == "timeseries_stride":
            cfg.timeseries_stride = int(parse_float(key, value))
        elif key == "hidden":
            cfg.hidden = _parse_int_list(key, value)
        elif key == "seed":
            cfg.seed = int(parse_float(key, value))
        elif key == "out_dir":
            cfg.out_dir = value
        else:
            raise ConfigError(f"{source}: unknown key {key!r}")
    train_kw.setdefault("seed", cfg.seed)
    try:
        cfg.train = TrainConfig(**train_kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    cfg.__post_init__()
    return cfg


def stratified_split(labels, fractions, rng) -> list[np.ndarray]:
    """Per-class random split; returns index arrays for train, val, test."""
    labels = np.asarray(labels)
    parts = [[] for _ in range(3)]
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        n_tr = int(round(fractions[0] * len(idx)))
        n_va = int(round(fractions[1] * len(idx)))
        parts[0].append(idx[:n_tr])
        parts[1].append(idx[n_tr:n_tr + n_va])
        parts[2].append(idx[n_tr + n_va:])
    return [np.sort(np.concatenate(p)) if p else np.zeros(0, int) for p in parts]


def generate(cfg: CampaignConfig, backend: str | None = None) -> dict[str, dict[str, Dataset]]:
    """Simulate every campaign scenario, extract and label features, split.

    Returns ``{regime_tag: {"train": ds, "val": ds, "test": ds}}``. All
    instantaneous regimes share the same record-level split.
    """
    per_regime: dict[str, list[Dataset]] = {r.tag: [] for r in cfg.regimes}
    for sc in cfg.scenarios():
        trace = simulate(sc.scenario, sc.duration, cfg.params, sc.seed, backend=backend,
                         config_hash=cfg.hash).window(cfg.settle)
        labels = label_samples(trace, sc.scenario)
        for regime in cfg.regimes:
            stride = 1 if regime.is_instantaneous else cfg.timeseries_stride
            x, t = extract(trace, regime, stride)
            y = window_labels(labels, regime, stride)
            per_regime[regime.tag].append(Dataset(regime, x, y, t))
        log.info("simulated %s (%d records)", sc.label.code, len(trace))
    out = {}
    shared = None
    for regime in cfg.regimes:
        full = Dataset.concat(per_regime[regime.tag])
        if len(full) == 0:
            raise EmptyDatasetError("campaign produced no samples")
        rng = np.random.default_rng(cfg.seed + 1)
        fr = (cfg.train_fraction, cfg.val_fraction)
        if regime.is_instantaneous:
            if shared is None:
                shared = stratified_split(full.y, fr, rng)
            idx = shared
        else:
            idx = stratified_split(full.y, fr, rng)
        meta = {"seed": cfg.seed, "config": cfg.hash} if cfg.hash else {"seed": cfg.seed}
        out[regime.tag] = {}
        for name, ix in zip(SPLITS, idx):
            ds = full.subset(ix)
            ds.meta = dict(meta, split=name)
            out[regime.tag][name] = ds
    return out


def dataset_path(out_dir, split: str, regime: FeatureRegime | str) -> Path:
    tag = regime.tag if isinstance(regime, FeatureRegime) else regime
    return Path(out_dir) / f"{split}_{tag.replace(':', '')}.csv"


def write_campaign(datasets, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for tag, splits in datasets.items():
        for name, ds in splits.items():
            p = dataset_path(out_dir, name, tag)
            write_dataset(ds, p)
            paths.append(p)
    return paths


def class_counts(ds: Dataset) -> np.ndarray:
    return np.bincount(ds.y, minlength=N_LABELS)


def total_samples(datasets) -> int:
    first = next(iter(datasets.values()))
    return sum(len(ds) for ds in first.values())


def describe(datasets) -> str:
    lines = []
    for tag, splits in datasets.items():
        for name, ds in splits.items():
            lines.append(f"{tag:>14} {name:>5}: {len(ds):8d} samples, per class "
                         + " ".join(str(c) for c in class_counts(ds)))
    return "\n".join(lines)

