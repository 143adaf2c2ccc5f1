"""Waveform dataset ingestion, synthesis, windowing, splitting and augmentation.

On-disk dataset format (the "waveform container"):
    <dir>/waveforms/<trace_id>.f32   raw little-endian IEEE-754 float32 samples
    <dir>/metadata.csv               header: id,polarity,p_arrival_sample,sampling_rate
    <dir>/manifest.json              synthetic datasets only: generator config and
                                     the ids whose labels were deliberately inverted

Reading other container layouts (e.g. hierarchical scientific formats) only
requires replacing ``read_waveform``; everything downstream consumes Trace
objects and never touches files.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np


class Polarity(Enum):
    UP = "up"
    DOWN = "down"
    UNDECIDABLE = "undecidable"


class Source(Enum):
    REAL = "real"
    SYNTHETIC = "synthetic"


DEFINED = (Polarity.UP, Polarity.DOWN)

#: Default window geometry: onset sits off-center so pre-arrival noise context
#: is retained (160 samples before the pick, 240 after, 400 total).
DEFAULT_PRE = 160
DEFAULT_POST = 240


class WindowError(ValueError):
    """A trace cannot be turned into a model window (bounds or degenerate data)."""


@dataclass
class Trace:
    """One labeled vertical-component waveform."""

    id: str
    samples: np.ndarray  # float64, arbitrary amplitude units
    sampling_rate: float
    p_arrival: int
    label: Polarity
    source: Source = Source.REAL

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError(f"trace {self.id}: samples must be 1-D")
        if not 0 <= self.p_arrival < len(self.samples):
            raise ValueError(
                f"trace {self.id}: p_arrival {self.p_arrival} outside "
                f"[0, {len(self.samples)})"
            )
        if self.sampling_rate <= 0:
            raise ValueError(f"trace {self.id}: sampling_rate must be > 0")


@dataclass
class Window:
    """Fixed-length max-abs-normalized model input anchored on the P arrival."""

    values: np.ndarray
    trace_id: str
    label: Polarity


@dataclass
class WindowSet:
    """Batch of windows as one (n, window_len) array plus aligned ids/labels.

    The array form is what the trainer and the SOM consume; ``Window`` objects
    are the single-trace view.
    """

    values: np.ndarray  # (n, window_len) float64
    ids: list[str]
    labels: list[Polarity]

    def __post_init__(self):
        if len(self.ids) != len(self.values) or len(self.labels) != len(self.values):
            raise ValueError("ids/labels/values length mismatch")

    def __len__(self) -> int:
        return len(self.values)

    @property
    def window_len(self) -> int:
        return self.values.shape[1]

    def y(self) -> np.ndarray:
        """Binary targets: Up -> 1, Down -> 0. Undecidable has no target."""
        if any(l is Polarity.UNDECIDABLE for l in self.labels):
            raise ValueError("undecidable labels have no binary target")
        return np.array([1.0 if l is Polarity.UP else 0.0 for l in self.labels])

    def subset(self, indices) -> "WindowSet":
        return WindowSet(
            values=self.values[indices],
            ids=[self.ids[i] for i in indices],
            labels=[self.labels[i] for i in indices],
        )

    @classmethod
    def from_windows(cls, windows: list[Window]) -> "WindowSet":
        return cls(
            values=np.stack([w.values for w in windows]),
            ids=[w.trace_id for w in windows],
            labels=[w.label for w in windows],
        )


@dataclass
class SplitSpec:
    """Train/val/test fractions; floor() remainders go to train."""

    train_frac: float = 0.88
    val_frac: float = 0.064
    test_frac: float = 0.056
    seed: int = 0

    def __post_init__(self):
        fr = (self.train_frac, self.val_frac, self.test_frac)
        if any(f <= 0 for f in fr):
            raise ValueError("split fractions must be positive")
        if abs(sum(fr) - 1.0) > 1e-9:
            raise ValueError(f"split fractions sum to {sum(fr)}, expected 1.0")


@dataclass
class SynthConfig:
    """Synthetic dataset recipe (desk-scale stand-in for a real archive)."""

    n_defined: int = 1000
    n_undecidable: int = 200
    n_mislabeled: int = 0
    snr_defined: float = 6.0
    snr_ambiguous: float = 0.4
    window_len: int = 400
    seed: int = 0

    def __post_init__(self):
        if self.n_mislabeled > self.n_defined:
            raise ValueError("n_mislabeled exceeds n_defined")
        if self.snr_defined <= 0 or self.snr_ambiguous <= 0:
            raise ValueError("SNRs must be positive")
        if self.window_len < 8:
            raise ValueError("window_len too small")


@dataclass
class SynthManifest:
    """Ids whose labels were inverted, plus the generator config."""

    mislabeled_ids: list[str]
    config: SynthConfig

    def to_json(self) -> dict:
        cfg = self.config
        return {
            "mislabeled_ids": list(self.mislabeled_ids),
            "config": {
                "n_defined": cfg.n_defined,
                "n_undecidable": cfg.n_undecidable,
                "n_mislabeled": cfg.n_mislabeled,
                "snr_defined": cfg.snr_defined,
                "snr_ambiguous": cfg.snr_ambiguous,
                "window_len": cfg.window_len,
                "seed": cfg.seed,
            },
        }

    @classmethod
    def from_json(cls, d: dict) -> "SynthManifest":
        return cls(
            mislabeled_ids=list(d["mislabeled_ids"]),
            config=SynthConfig(**d["config"]),
        )


@dataclass
class SkipRecord:
    row_id: str
    reason: str


@dataclass
class IngestReport:
    n_rows: int = 0
    n_loaded: int = 0
    skipped: list[SkipRecord] = field(default_factory=list)

    def skip(self, row_id: str, reason: str):
        self.skipped.append(SkipRecord(row_id, reason))

    def to_json(self) -> dict:
        return {
            "n_rows": self.n_rows,
            "n_loaded": self.n_loaded,
            "n_skipped": len(self.skipped),
            "skipped": [{"id": s.row_id, "reason": s.reason} for s in self.skipped],
        }


@dataclass
class ColumnMapping:
    """Metadata column names and polarity-string mapping; never hard-coded."""

    id_col: str = "id"
    polarity_col: str = "polarity"
    p_arrival_col: str = "p_arrival_sample"
    sampling_rate_col: str = "sampling_rate"
    polarity_values: dict = field(
        default_factory=lambda: {
            "up": Polarity.UP,
            "down": Polarity.DOWN,
            "undecidable": Polarity.UNDECIDABLE,
        }
    )


def read_waveform(container_path: Path, trace_id: str) -> np.ndarray:
    """Read one raw little-endian float32 waveform from the container directory."""
    fp = Path(container_path) / f"{trace_id}.f32"
    if not fp.exists():
        raise FileNotFoundError(fp)
    return np.fromfile(fp, dtype="<f4").astype(np.float64)


def load_dataset(
    container_path,
    metadata_path,
    mapping: ColumnMapping | None = None,
) -> tuple[list[Trace], IngestReport]:
    """Load traces driven by the metadata table; bad rows are skipped and reported.

    Fatal errors: missing container directory or metadata file. Per-row
    problems (unmapped polarity string, missing pick, missing waveform file,
    invalid pick index) skip the row and increment the report.
    """
    mapping = mapping or ColumnMapping()
    container_path = Path(container_path)
    metadata_path = Path(metadata_path)
    if not container_path.is_dir():
        raise FileNotFoundError(f"waveform container not found: {container_path}")
    if not metadata_path.is_file():
        raise FileNotFoundError(f"metadata table not found: {metadata_path}")

    report = IngestReport()
    traces: list[Trace] = []
    with open(metadata_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            report.n_rows += 1
            trace_id = (row.get(mapping.id_col) or "").strip()
            if not trace_id:
                report.skip(f"row{report.n_rows}", "missing id")
                continue
            pol_raw = (row.get(mapping.polarity_col) or "").strip()
            label = mapping.polarity_values.get(pol_raw)
            if label is None:
                report.skip(trace_id, f"unmapped polarity {pol_raw!r}")
                continue
            p_raw = (row.get(mapping.p_arrival_col) or "").strip()
            if not p_raw:
                report.skip(trace_id, "missing p_arrival")
                continue
            try:
                samples = read_waveform(container_path, trace_id)
            except FileNotFoundError:
                report.skip(trace_id, "waveform file missing")
                continue
            try:
                trace = Trace(
                    id=trace_id,
                    samples=samples,
                    sampling_rate=float(row.get(mapping.sampling_rate_col) or 100.0),
                    p_arrival=int(float(p_raw)),
                    label=label,
                    source=Source.REAL,
                )
            except ValueError as exc:
                report.skip(trace_id, str(exc))
                continue
            traces.append(trace)
            report.n_loaded += 1
    return traces, report


def save_dataset(traces: list[Trace], out_dir, manifest: SynthManifest | None = None):
    """Write traces in the canonical container layout (see module docstring)."""
    out_dir = Path(out_dir)
    wf_dir = out_dir / "waveforms"
    wf_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "metadata.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "polarity", "p_arrival_sample", "sampling_rate"])
        for t in traces:
            t.samples.astype("<f4").tofile(wf_dir / f"{t.id}.f32")
            writer.writerow([t.id, t.label.value, t.p_arrival, t.sampling_rate])
    if manifest is not None:
        with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
            json.dump(manifest.to_json(), fh, indent=2)


def load_manifest(dataset_dir) -> SynthManifest:
    with open(Path(dataset_dir) / "manifest.json", encoding="utf-8") as fh:
        return SynthManifest.from_json(json.load(fh))


def synth_generate(cfg: SynthConfig) -> tuple[list[Trace], SynthManifest]:
    """Generate a deterministic synthetic dataset.

    Defined-polarity traces are pre-arrival Gaussian noise followed by a clean
    damped oscillation whose first half-cycle sign matches the label
    (Up -> positive onset). Undecidable traces keep noise running through the
    whole record with a weak random-sign oscillation added on top, so the onset
    sign is not dominant. Exactly ``n_mislabeled`` defined traces get their
    label (not their waveform) inverted; their ids go into the manifest.
    """
    rng = np.random.default_rng(cfg.seed)
    sampling_rate = 100.0
    pad = max(16, cfg.window_len // 10)
    length = cfg.window_len + 2 * pad
    pre_anchor = int(0.4 * cfg.window_len)

    def onset(sign: float, amp: float) -> np.ndarray:
        n_post = length  # generous; truncated by caller
        t = np.arange(n_post) / sampling_rate
        freq = rng.uniform(4.0, 12.0)
        decay = rng.uniform(2.0, 6.0)
        scale = amp * rng.uniform(0.7, 1.3)
        return sign * scale * np.sin(2 * np.pi * freq * t) * np.exp(-decay * t)

    traces: list[Trace] = []
    for i in range(cfg.n_defined):
        label = Polarity.UP if i % 2 == 0 else Polarity.DOWN
        sign = 1.0 if label is Polarity.UP else -1.0
        p = pre_anchor + int(rng.integers(0, 2 * pad + 1))
        samples = rng.normal(0.0, 1.0, length)
        samples[p:] = onset(sign, cfg.snr_defined)[: length - p]
        traces.append(
            Trace(
                id=f"syn{i:06d}",
                samples=samples,
                sampling_rate=sampling_rate,
                p_arrival=p,
                label=label,
                source=Source.SYNTHETIC,
            )
        )

    for i in range(cfg.n_undecidable):
        sign = 1.0 if rng.random() < 0.5 else -1.0
        p = pre_anchor + int(rng.integers(0, 2 * pad + 1))
        samples = rng.normal(0.0, 1.0, length)
        samples[p:] += onset(sign, cfg.snr_ambiguous)[: length - p]
        traces.append(
            Trace(
                id=f"synu{i:06d}",
                samples=samples,
                sampling_rate=sampling_rate,
                p_arrival=p,
                label=Polarity.UNDECIDABLE,
                source=Source.SYNTHETIC,
            )
        )

    flip_idx = rng.choice(cfg.n_defined, size=cfg.n_mislabeled, replace=False)
    mislabeled_ids = []
    for idx in sorted(int(j) for j in flip_idx):
        t = traces[idx]
        inverted = Polarity.DOWN if t.label is Polarity.UP else Polarity.UP
        traces[idx] = replace(t, label=inverted)
        mislabeled_ids.append(t.id)

    return traces, SynthManifest(mislabeled_ids=mislabeled_ids, config=cfg)


def normalize(values: np.ndarray, mode: str = "max_abs") -> np.ndarray:
    """Scale so max(|values|) == 1 exactly. All-zero input is rejected."""
    if mode != "max_abs":
        raise ValueError(f"unknown normalization mode {mode!r}")
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise WindowError("empty vector")
    peak = np.max(np.abs(values))
    if peak == 0.0:
        raise WindowError("all-zero window cannot be normalized")
    return values / peak


def window_trace(trace: Trace, pre: int = DEFAULT_PRE, post: int = DEFAULT_POST) -> Window:
    """Cut samples[p-pre : p+post] and normalize; raises WindowError out of bounds."""
    lo = trace.p_arrival - pre
    hi = trace.p_arrival + post
    if lo < 0 or hi > len(trace.samples):
        raise WindowError(
            f"trace {trace.id}: window [{lo}, {hi}) exceeds bounds "
            f"[0, {len(trace.samples)})"
        )
    return Window(
        values=normalize(trace.samples[lo:hi]),
        trace_id=trace.id,
        label=trace.label,
    )


@dataclass
class WindowingReport:
    n_in: int = 0
    n_windowed: int = 0
    excluded: list[SkipRecord] = field(default_factory=list)


def window_dataset(
    traces: list[Trace], pre: int = DEFAULT_PRE, post: int = DEFAULT_POST
) -> tuple[WindowSet, WindowingReport]:
    """Window every trace; out-of-bounds or all-zero traces are excluded with a report."""
    report = WindowingReport(n_in=len(traces))
    windows: list[Window] = []
    for t in traces:
        try:
            windows.append(window_trace(t, pre, post))
        except WindowError as exc:
            report.excluded.append(SkipRecord(t.id, str(exc)))
    report.n_windowed = len(windows)
    if not windows:
        raise WindowError("no trace survived windowing")
    return WindowSet.from_windows(windows), report


def split(
    traces: list[Trace], spec: SplitSpec
) -> tuple[list[Trace], list[Trace], list[Trace]]:
    """Seeded shuffle into train/val/test; val and test get floor(n*frac),
    the remainder goes to train. Defined-polarity traces only."""
    n = len(traces)
    if n < 3:
        raise ValueError(f"need at least 3 traces to split, got {n}")
    if any(t.label is Polarity.UNDECIDABLE for t in traces):
        raise ValueError("split expects defined-polarity traces only")
    rng = np.random.default_rng(spec.seed)
    perm = rng.permutation(n)
    n_val = math.floor(n * spec.val_frac)
    n_test = math.floor(n * spec.test_frac)
    n_train = n - n_val - n_test
    train = [traces[i] for i in perm[:n_train]]
    val = [traces[i] for i in perm[n_train : n_train + n_val]]
    test = [traces[i] for i in perm[n_train + n_val :]]
    return train, val, test


def augment_flip(windows: WindowSet) -> WindowSet:
    """Double the set: for each (w, label) also emit (-w, flipped label).

    Output order is all originals, then all flips in the same order, so the
    result has exactly balanced Up/Down counts.
    """
    if any(l is Polarity.UNDECIDABLE for l in windows.labels):
        raise ValueError("flip augmentation is defined only for Up/Down labels")
    flipped_labels = [
        Polarity.DOWN if l is Polarity.UP else Polarity.UP for l in windows.labels
    ]
    return WindowSet(
        values=np.concatenate([windows.values, -windows.values]),
        ids=windows.ids + [f"{i}#flip" for i in windows.ids],
        labels=windows.labels + flipped_labels,
    )
