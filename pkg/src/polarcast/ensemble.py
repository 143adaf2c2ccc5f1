"""Settings-grid training, ensemble prediction aggregation, 40-bin prediction
histograms, and the uncertainty / mislabel-correction analytics.

Aggregation is the plain mean. Member predictions are sorted before a
compensated (Kahan) sum so the mean is bitwise invariant to model order.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .dataio import Polarity, WindowSet
from .netcore import ArchConfig, ModelParams, predict
from .somclean import FlagSet
from .trainer import TrainConfig, TrainingError, TrainRecord, evaluate, mean_accuracy, train

DEFAULT_BINS = 40


@dataclass(frozen=True)
class Setting:
    optimizer: str  # "sgd" | "adam"
    dropout: bool
    variant: str  # "complete" | "cleaned"

    @property
    def key(self) -> str:
        drop = "dropout" if self.dropout else "nodrop"
        return f"{self.optimizer}x{drop}x{self.variant}"


def parse_setting_key(key: str) -> Setting:
    """Parse keys like ``sgdxdropoutxcomplete`` (the CLI --setting format)."""
    parts = key.split("x")
    if len(parts) != 3:
        raise ValueError(f"bad setting key {key!r}")
    opt, drop, variant = parts
    if opt not in ("sgd", "adam") or drop not in ("dropout", "nodrop") \
            or variant not in ("complete", "cleaned"):
        raise ValueError(f"bad setting key {key!r}")
    return Setting(optimizer=opt, dropout=drop == "dropout", variant=variant)


@dataclass
class SettingsGrid:
    optimizers: tuple = ("sgd", "adam")
    dropout_options: tuple = (False, True)
    variants: tuple = ("complete", "cleaned")
    models_per_setting: int = 7

    def settings(self) -> list[Setting]:
        out = []
        for opt in self.optimizers:
            for drop in self.dropout_options:
                for variant in self.variants:
                    out.append(Setting(opt, drop, variant))
        return out


@dataclass
class GridData:
    """Both dataset variants, ready to train on. Test sets are shared by every
    setting so accuracy differences cannot come from test-set sampling."""

    train: dict  # variant -> augmented WindowSet
    val: dict  # variant -> WindowSet
    test: dict  # variant -> WindowSet (evaluated for every member)


@dataclass
class MemberResult:
    setting: Setting
    index: int
    seed: int
    params: ModelParams
    record: TrainRecord
    test_accuracy: dict  # variant -> float
    checkpoint_path: str | None = None


@dataclass
class GridResult:
    grid: SettingsGrid
    base_seed: int
    members: dict = field(default_factory=dict)  # key -> list[MemberResult]
    failures: dict = field(default_factory=dict)  # key -> list of error strings

    def setting_members(self, key: str) -> list:
        return self.members.get(key, [])

    def all_members(self) -> list:
        out = []
        for s in self.grid.settings():
            out.extend(self.members.get(s.key, []))
        return out

    def incomplete_settings(self) -> list[str]:
        want = self.grid.models_per_setting
        return [
            s.key
            for s in self.grid.settings()
            if len(self.members.get(s.key, [])) < want
        ]

    def registry_digest(self) -> str:
        h = hashlib.sha256()
        for m in self.all_members():
            h.update(m.setting.key.encode())
            h.update(str(m.seed).encode())
            h.update(ckpt.params_digest(m.params).encode())
        return h.hexdigest()

    def report(self) -> dict:
        """Tables-shaped summary: per setting, mean +/- std accuracy on both
        test sets (std null when fewer than 2 members)."""
        table = {}
        for s in self.grid.settings():
            ms = self.members.get(s.key, [])
            entry: dict = {
                "n_models": len(ms),
                "incomplete": len(ms) < self.grid.models_per_setting,
            }
            for variant in ("complete", "cleaned"):
                accs = [m.test_accuracy[variant] for m in ms]
                if len(accs) >= 2:
                    mean, std = mean_accuracy(accs)
                elif accs:
                    mean, std = accs[0], None
                else:
                    mean, std = None, None
                entry[f"test_{variant}"] = {"mean": mean, "std": std}
            table[s.key] = entry
        return table

    def to_registry_json(self) -> dict:
        return {
            "base_seed": self.base_seed,
            "models_per_setting": self.grid.models_per_setting,
            "digest": self.registry_digest(),
            "settings": {
                s.key: [
                    {
                        "index": m.index,
                        "seed": m.seed,
                        "checkpoint": m.checkpoint_path,
                        "best_epoch": m.record.best_epoch,
                        "best_val_loss": min(m.record.val_losses),
                        "test_accuracy": m.test_accuracy,
                    }
                    for m in self.members.get(s.key, [])
                ]
                for s in self.grid.settings()
            },
            "failures": self.failures,
            "report": self.report(),
        }


def train_grid(
    grid: SettingsGrid,
    data: GridData,
    arch: ArchConfig,
    base_cfg: TrainConfig,
    base_seed: int,
    out_dir=None,
) -> GridResult:
    """Train models_per_setting models for every setting; seeds are globally
    distinct (base_seed + running index). A member failure marks its setting
    incomplete and the grid moves on."""
    result = GridResult(grid=grid, base_seed=base_seed)
    out_dir = Path(out_dir) if out_dir is not None else None
    for s_idx, setting in enumerate(grid.settings()):
        members: list[MemberResult] = []
        for m_idx in range(grid.models_per_setting):
            seed = base_seed + s_idx * grid.models_per_setting + m_idx
            cfg = replace(
                base_cfg,
                optimizer=setting.optimizer,
                dropout_enabled=setting.dropout,
                dataset_variant=setting.variant,
                seed=seed,
            )
            arch_m = replace(arch, dropout_enabled=setting.dropout)
            try:
                params, record = train(
                    arch_m, data.train[setting.variant], data.val[setting.variant], cfg
                )
            except TrainingError as exc:
                result.failures.setdefault(setting.key, []).append(
                    f"member {m_idx} (seed {seed}): {exc}"
                )
                continue
            accs = {
                variant: evaluate(params, data.test[variant]).accuracy
                for variant in ("complete", "cleaned")
            }
            path = None
            if out_dir is not None:
                member_dir = out_dir / setting.key / f"m{m_idx}"
                ckpt.save_checkpoint(
                    member_dir,
                    params,
                    meta={
                        "setting": setting.key,
                        "seed": seed,
                        "epoch": record.best_epoch,
                        "val_loss": min(record.val_losses),
                    },
                )
                path = str(member_dir)
            members.append(
                MemberResult(setting, m_idx, seed, params, record, accs, path)
            )
        result.members[setting.key] = members
    if out_dir is not None:
        with open(out_dir / "registry.json", "w", encoding="utf-8") as fh:
            json.dump(result.to_registry_json(), fh, indent=2)
    return result


def load_registry_models(registry_path) -> dict[str, list[ModelParams]]:
    """Load all checkpointed members listed in a registry.json, keyed by setting."""
    registry_path = Path(registry_path)
    with open(registry_path, encoding="utf-8") as fh:
        registry = json.load(fh)
    out: dict[str, list[ModelParams]] = {}
    for key, members in registry["settings"].items():
        models = []
        for m in members:
            if m["checkpoint"] is None:
                continue
            params, _ = ckpt.load_checkpoint(m["checkpoint"])
            models.append(params)
        out[key] = models
    return out


# ---------------------------------------------------------------------------
# aggregation and histograms


def _kahan_mean_columns(preds: np.ndarray) -> np.ndarray:
    """Column means via sorted compensated summation: bitwise independent of
    the row (model) order."""
    srt = np.sort(np.asarray(preds, dtype=np.float64), axis=0)
    total = np.zeros(srt.shape[1])
    comp = np.zeros(srt.shape[1])
    for row in srt:
        y = row - comp
        t = total + y
        comp = (t - total) - y
        total = t
    return total / srt.shape[0]


def predict_mean(models: list[ModelParams], values: np.ndarray) -> np.ndarray:
    """Per-window arithmetic mean of member eval-mode predictions."""
    if not models:
        raise ValueError("predict_mean needs at least one model")
    preds = np.stack([predict(m, values) for m in models])
    return _kahan_mean_columns(preds)


def member_predictions(models: list[ModelParams], values: np.ndarray) -> np.ndarray:
    """(n_models, n_windows) eval-mode prediction matrix."""
    return np.stack([predict(m, values) for m in models])


@dataclass
class PredictionHistogram:
    bin_count: int
    edges: np.ndarray  # bin_count + 1 values, exactly 0.0 .. 1.0
    counts: np.ndarray  # ints, sum == n_total
    n_total: int

    def to_json(self) -> dict:
        return {
            "bin_count": self.bin_count,
            "edges": self.edges.tolist(),
            "counts": self.counts.tolist(),
            "n_total": self.n_total,
        }

    @classmethod
    def from_json(cls, d: dict) -> "PredictionHistogram":
        return cls(
            bin_count=d["bin_count"],
            edges=np.asarray(d["edges"], dtype=np.float64),
            counts=np.asarray(d["counts"], dtype=np.int64),
            n_total=d["n_total"],
        )


def bin_index(predictions: np.ndarray, bins: int = DEFAULT_BINS) -> np.ndarray:
    """Bin i covers [i/bins, (i+1)/bins); the last bin is closed at 1.0."""
    p = np.asarray(predictions, dtype=np.float64)
    if p.size and (p.min() < 0.0 or p.max() > 1.0):
        raise ValueError("prediction outside [0, 1]; upstream corruption")
    edges = np.arange(bins + 1) / bins
    idx = np.searchsorted(edges, p, side="right") - 1
    return np.clip(idx, 0, bins - 1)


def histogram(predictions: np.ndarray, bins: int = DEFAULT_BINS) -> PredictionHistogram:
    p = np.asarray(predictions, dtype=np.float64)
    idx = bin_index(p, bins)
    counts = np.bincount(idx, minlength=bins).astype(np.int64)
    return PredictionHistogram(
        bin_count=bins,
        edges=np.arange(bins + 1) / bins,
        counts=counts,
        n_total=int(p.size),
    )


@dataclass
class UncertaintyMetrics:
    extremal_mass: float  # fraction in the two outermost bins
    central_mass: float  # fraction in the bins covering the central band
    entropy: float  # normalized to [0, 1]

    def to_json(self) -> dict:
        return {
            "extremal_mass": self.extremal_mass,
            "central_mass": self.central_mass,
            "entropy": self.entropy,
        }


def uncertainty_metrics(
    h: PredictionHistogram, central_band: tuple = (0.4, 0.6)
) -> UncertaintyMetrics:
    """Extremal/central mass and normalized entropy of a prediction histogram.

    The central band defaults to [0.4, 0.6] (bins 16..23 of 40)."""
    if h.n_total <= 0:
        raise ValueError("histogram is empty")
    counts = np.asarray(h.counts, dtype=np.float64)
    n = float(h.n_total)
    extremal = (counts[0] + counts[-1]) / n
    lo = int(round(central_band[0] * h.bin_count))
    hi = int(round(central_band[1] * h.bin_count))
    central = counts[lo:hi].sum() / n
    probs = counts / n
    nz = probs[probs > 0]
    entropy = float(-(nz * np.log(nz)).sum() / np.log(h.bin_count))
    return UncertaintyMetrics(
        extremal_mass=float(extremal),
        central_mass=float(central),
        entropy=float(np.clip(entropy, 0.0, 1.0)),
    )


@dataclass
class FlatnessComparison:
    """Pure three-criterion comparison; values are "a", "b" or "tie"."""

    lower_extremal: str
    higher_central: str
    higher_entropy: str
    a: UncertaintyMetrics = None
    b: UncertaintyMetrics = None

    def to_json(self) -> dict:
        return {
            "lower_extremal": self.lower_extremal,
            "higher_central": self.higher_central,
            "higher_entropy": self.higher_entropy,
            "a": self.a.to_json() if self.a else None,
            "b": self.b.to_json() if self.b else None,
        }


def _pick(a_val: float, b_val: float, prefer_lower: bool) -> str:
    if a_val == b_val:
        return "tie"
    if (a_val < b_val) == prefer_lower:
        return "a"
    return "b"


def compare_flatness(a: UncertaintyMetrics, b: UncertaintyMetrics) -> FlatnessComparison:
    return FlatnessComparison(
        lower_extremal=_pick(a.extremal_mass, b.extremal_mass, prefer_lower=True),
        higher_central=_pick(a.central_mass, b.central_mass, prefer_lower=False),
        higher_entropy=_pick(a.entropy, b.entropy, prefer_lower=False),
        a=a,
        b=b,
    )


@dataclass
class AuditSample:
    left: list  # trace ids sampled from bin 0
    right: list  # trace ids sampled from the last bin
    k: int
    seed: int


def audit_extremal_bins(
    ids: list[str],
    predictions: np.ndarray,
    k: int,
    seed: int = 0,
    bins: int = DEFAULT_BINS,
) -> AuditSample:
    """Seeded uniform sample (without replacement) of ids whose prediction lies
    in the extremal bins; takes the whole bin when it holds fewer than k."""
    idx = bin_index(predictions, bins)
    rng = np.random.default_rng(seed)

    def sample(member_ids: list[str]) -> list[str]:
        if k >= len(member_ids):
            return list(member_ids)
        pick = rng.choice(len(member_ids), size=k, replace=False)
        return [member_ids[i] for i in sorted(int(j) for j in pick)]

    left_ids = [ids[i] for i in np.flatnonzero(idx == 0)]
    right_ids = [ids[i] for i in np.flatnonzero(idx == bins - 1)]
    return AuditSample(left=sample(left_ids), right=sample(right_ids), k=k, seed=seed)


@dataclass
class CorrectionReport:
    per_model_counts: list
    mean_count: float
    mean_fraction: float
    n_flags: int

    def to_json(self) -> dict:
        return {
            "per_model_counts": self.per_model_counts,
            "mean_count": self.mean_count,
            "mean_fraction": self.mean_fraction,
            "n_flags": self.n_flags,
        }


def mislabel_correction_rate(
    models: list[ModelParams], flagged_windows: WindowSet, flags: FlagSet
) -> CorrectionReport:
    """How many flagged traces each model assigns to the corrected label
    (threshold 0.5), averaged over the setting's models."""
    if len(flags) == 0:
        raise ValueError("empty flag set")
    if not models:
        raise ValueError("no models supplied")
    targets = []
    for tid in flagged_windows.ids:
        entry = flags.entries.get(tid)
        if entry is None:
            raise ValueError(f"window {tid} has no flag entry")
        if entry.corrected_label is None:
            raise ValueError(f"flag for {tid} lacks a corrected label")
        targets.append(1.0 if entry.corrected_label is Polarity.UP else 0.0)
    y = np.asarray(targets)
    counts = []
    for m in models:
        p = predict(m, flagged_windows.values)
        counts.append(int(np.sum((p >= 0.5) == (y == 1.0))))
    n = len(y)
    return CorrectionReport(
        per_model_counts=counts,
        mean_count=float(np.mean(counts)),
        mean_fraction=float(np.mean(counts)) / n,
        n_flags=n,
    )
