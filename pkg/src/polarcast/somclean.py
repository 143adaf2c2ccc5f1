"""Kohonen SOM over normalized windows plus the cyclic flag-and-retrain
cleaning workflow.

Flags persist as an append-only JSON-lines journal; the live FlagSet is the
fold of that journal (last write per trace id wins, "unflag" is a tombstone).
This keeps the multi-cycle human review auditable.
"""

from __future__ import annotations

import hashlib
import json
import time
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .dataio import Polarity, Trace, WindowSet, window_dataset

SOM_FORMAT = "polarcast-som/1"


@dataclass
class SomConfig:
    grid_rows: int = 10
    grid_cols: int = 10
    epochs: int = 20
    alpha0: float = 0.5
    sigma0: float | None = None  # default max(rows, cols) / 2
    seed: int = 0

    def __post_init__(self):
        if self.grid_rows < 1 or self.grid_cols < 1:
            raise ValueError("grid dims must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")

    def sigma_start(self) -> float:
        if self.sigma0 is not None:
            return self.sigma0
        return max(self.grid_rows, self.grid_cols) / 2.0


@dataclass
class SOMap:
    grid_rows: int
    grid_cols: int
    prototypes: np.ndarray  # (rows, cols, window_len) float64
    epochs_trained: int
    alpha0: float
    sigma0: float

    @property
    def window_len(self) -> int:
        return self.prototypes.shape[2]

    def flat(self) -> np.ndarray:
        return self.prototypes.reshape(-1, self.window_len)


def _grid_dist2(rows: int, cols: int) -> np.ndarray:
    """Pairwise squared grid distances between node indices (row-major flat)."""
    rr, cc = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    coords = np.stack([rr.ravel(), cc.ravel()], axis=1).astype(np.float64)
    diff = coords[:, None, :] - coords[None, :, :]
    return (diff**2).sum(axis=2)


def _as_sample_matrix(values) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2 or len(values) == 0:
        raise ValueError("need a non-empty (n, window_len) sample array")
    return values


def _draw_prototypes(values: np.ndarray, cfg: SomConfig, rng) -> np.ndarray:
    n = len(values)
    n_nodes = cfg.grid_rows * cfg.grid_cols
    if n < n_nodes:
        warnings.warn(
            f"SOM has {n_nodes} nodes but only {n} samples; prototypes will repeat",
            stacklevel=3,
        )
    pick = rng.choice(n, size=n_nodes, replace=n < n_nodes)
    return values[pick].copy()


def som_init(values: np.ndarray, cfg: SomConfig) -> SOMap:
    """Untrained map whose prototypes are randomly chosen training samples.
    Shares its rng stream with som_train, so both start from the same grid."""
    values = _as_sample_matrix(values)
    protos = _draw_prototypes(values, cfg, np.random.default_rng(cfg.seed))
    return SOMap(
        grid_rows=cfg.grid_rows,
        grid_cols=cfg.grid_cols,
        prototypes=protos.reshape(cfg.grid_rows, cfg.grid_cols, values.shape[1]),
        epochs_trained=0,
        alpha0=cfg.alpha0,
        sigma0=cfg.sigma_start(),
    )


def som_train(values: np.ndarray, cfg: SomConfig) -> SOMap:
    """Classic online Kohonen training, deterministic per (data order, cfg, seed).

    Prototypes start as randomly chosen training samples. For every presented
    sample the BMU is found and every node j moves by
    alpha(t) * exp(-d2(j, bmu) / (2 sigma(t)^2)) * (x - proto_j),
    with alpha(t) = alpha0 * exp(-t/T), sigma(t) = sigma0 * exp(-t/T),
    t the global sample counter and T the total presentations (epochs * n).
    """
    values = _as_sample_matrix(values)
    n, dim = values.shape
    rng = np.random.default_rng(cfg.seed)
    protos = _draw_prototypes(values, cfg, rng)

    dist2 = _grid_dist2(cfg.grid_rows, cfg.grid_cols)
    sigma0 = cfg.sigma_start()
    total = cfg.epochs * n
    t = 0
    for _ in range(cfg.epochs):
        for i in rng.permutation(n):
            x = values[i]
            b = int(np.argmin(((protos - x) ** 2).sum(axis=1)))
            decay = np.exp(-t / total)
            alpha = cfg.alpha0 * decay
            sigma = max(sigma0 * decay, 1e-9)
            influence = alpha * np.exp(-dist2[:, b] / (2.0 * sigma * sigma))
            protos += influence[:, None] * (x - protos)
            t += 1
    return SOMap(
        grid_rows=cfg.grid_rows,
        grid_cols=cfg.grid_cols,
        prototypes=protos.reshape(cfg.grid_rows, cfg.grid_cols, dim),
        epochs_trained=cfg.epochs,
        alpha0=cfg.alpha0,
        sigma0=sigma0,
    )


def bmu(som: SOMap, x: np.ndarray) -> tuple[int, int]:
    """Best-matching unit: argmin squared Euclidean distance, ties to the
    lowest row-major index."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (som.window_len,):
        raise ValueError(f"query length {x.shape} != window_len {som.window_len}")
    d2 = ((som.flat() - x) ** 2).sum(axis=1)
    idx = int(np.argmin(d2))
    return idx // som.grid_cols, idx % som.grid_cols


def quantization_error(som: SOMap, values: np.ndarray) -> float:
    """Mean Euclidean distance of each sample to its BMU prototype."""
    values = np.asarray(values, dtype=np.float64)
    flat = som.flat()
    d2 = ((values[:, None, :] - flat[None, :, :]) ** 2).sum(axis=2)
    return float(np.mean(np.sqrt(d2.min(axis=1))))


@dataclass
class NodeSummary:
    row: int
    col: int
    member_ids: list
    count: int
    purity: float | None  # fraction Up; None for empty nodes
    mean: np.ndarray | None


@dataclass
class ClusterReport:
    grid_rows: int
    grid_cols: int
    nodes: list  # row-major NodeSummary list

    def node(self, row: int, col: int) -> NodeSummary:
        return self.nodes[row * self.grid_cols + col]


def assign_clusters(som: SOMap, windows: WindowSet) -> ClusterReport:
    """Assign every window to its BMU; per node report members, mean waveform
    and label purity (fraction Up; empty nodes report purity None)."""
    values = np.asarray(windows.values, dtype=np.float64)
    flat = som.flat()
    # chunked distance computation to bound memory
    bmus = np.empty(len(values), dtype=np.int64)
    for s in range(0, len(values), 1024):
        chunk = values[s : s + 1024]
        d2 = ((chunk[:, None, :] - flat[None, :, :]) ** 2).sum(axis=2)
        bmus[s : s + 1024] = d2.argmin(axis=1)
    nodes = []
    for j in range(som.grid_rows * som.grid_cols):
        members = np.flatnonzero(bmus == j)
        if len(members) == 0:
            nodes.append(
                NodeSummary(j // som.grid_cols, j % som.grid_cols, [], 0, None, None)
            )
            continue
        ids = [windows.ids[i] for i in members]
        ups = sum(1 for i in members if windows.labels[i] is Polarity.UP)
        nodes.append(
            NodeSummary(
                row=j // som.grid_cols,
                col=j % som.grid_cols,
                member_ids=ids,
                count=len(members),
                purity=ups / len(members),
                mean=values[members].mean(axis=0),
            )
        )
    return ClusterReport(som.grid_rows, som.grid_cols, nodes)


# ---------------------------------------------------------------------------
# flags


REASONS = ("mislabeled", "ambiguous")


@dataclass
class FlagEntry:
    trace_id: str
    reason: str
    corrected_label: Polarity | None = None
    cycle: int = 0
    author: str = "analyst"
    timestamp: float = 0.0
    bin_side: str | None = None  # set by extremal-bin audit verdicts

    def __post_init__(self):
        if self.reason not in REASONS:
            raise ValueError(f"reason must be one of {REASONS}")
        if (self.reason == "mislabeled") != (self.corrected_label is not None):
            raise ValueError("corrected_label present iff reason == mislabeled")


@dataclass
class FlagSet:
    entries: dict = field(default_factory=dict)  # trace_id -> FlagEntry

    def __len__(self) -> int:
        return len(self.entries)

    def ids(self) -> set:
        return set(self.entries)

    @property
    def max_cycle(self) -> int:
        return max((e.cycle for e in self.entries.values()), default=0)

    def digest(self) -> str:
        payload = json.dumps(
            {tid: _entry_json(e) for tid, e in sorted(self.entries.items())},
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()


def _entry_json(e: FlagEntry) -> dict:
    return {
        "trace_id": e.trace_id,
        "reason": e.reason,
        "corrected_label": e.corrected_label.value if e.corrected_label else None,
        "cycle": e.cycle,
        "author": e.author,
        "ts": e.timestamp,
        "bin_side": e.bin_side,
    }


def _entry_from_json(d: dict) -> FlagEntry:
    cl = d.get("corrected_label")
    return FlagEntry(
        trace_id=d["trace_id"],
        reason=d["reason"],
        corrected_label=Polarity(cl) if cl else None,
        cycle=d.get("cycle", 0),
        author=d.get("author", "analyst"),
        timestamp=d.get("ts", 0.0),
        bin_side=d.get("bin_side"),
    )


def append_flag(journal_path, entry: FlagEntry):
    line = json.dumps({"action": "flag", **_entry_json(entry)}, sort_keys=True)
    with open(journal_path, "a", encoding="utf-8") as fh:
        fh.write(line + "\n")
        fh.flush()


def append_unflag(journal_path, trace_id: str, author: str = "analyst"):
    line = json.dumps(
        {"action": "unflag", "trace_id": trace_id, "author": author, "ts": time.time()},
        sort_keys=True,
    )
    with open(journal_path, "a", encoding="utf-8") as fh:
        fh.write(line + "\n")
        fh.flush()


def fold_journal(journal_path) -> FlagSet:
    """Replay the journal from empty; deterministic last-write-wins fold."""
    flags = FlagSet()
    path = Path(journal_path)
    if not path.exists():
        return flags
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if rec["action"] == "flag":
                flags.entries[rec["trace_id"]] = _entry_from_json(rec)
            elif rec["action"] == "unflag":
                flags.entries.pop(rec["trace_id"], None)
            else:
                raise ValueError(f"unknown journal action {rec['action']!r}")
    return flags


def apply_flags(
    traces: list[Trace], flags: FlagSet, mode: str = "remove"
) -> tuple[list[Trace], list[str]]:
    """Remove: drop every flagged trace. Correct: mislabeled traces get their
    corrected label, ambiguous ones are dropped. Order preserved; flag ids not
    present in the dataset come back as warnings."""
    if mode not in ("remove", "correct"):
        raise ValueError(f"unknown mode {mode!r}")
    known = {t.id for t in traces}
    unknown = sorted(flags.ids() - known)
    out: list[Trace] = []
    for t in traces:
        entry = flags.entries.get(t.id)
        if entry is None:
            out.append(t)
        elif mode == "correct" and entry.reason == "mislabeled":
            out.append(replace(t, label=entry.corrected_label))
        # removed otherwise
    return out, unknown


@dataclass
class CycleResult:
    som: SOMap
    report: ClusterReport
    n_removed: int
    n_remaining: int


def cleaning_cycle(
    traces: list[Trace],
    flags: FlagSet,
    som_cfg: SomConfig,
    pre: int,
    post: int,
) -> CycleResult:
    """One round of the loop: drop flagged traces, retrain the SOM on the rest,
    return a fresh cluster report for the next round of review."""
    kept, _ = apply_flags(traces, flags, mode="remove")
    if not kept:
        raise ValueError("every trace is flagged; nothing left to cluster")
    windows, _ = window_dataset(kept, pre, post)
    som = som_train(windows.values, som_cfg)
    report = assign_clusters(som, windows)
    return CycleResult(
        som=som,
        report=report,
        n_removed=len(traces) - len(kept),
        n_remaining=len(kept),
    )


# ---------------------------------------------------------------------------
# SOM checkpoints: JSON manifest + float32 prototype blob


def save_som(ckpt_dir, som: SOMap, meta: dict | None = None) -> Path:
    ckpt_dir = Path(ckpt_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    blob = np.ascontiguousarray(som.prototypes, dtype="<f4")
    blob.tofile(ckpt_dir / "prototypes.bin")
    manifest = {
        "format": SOM_FORMAT,
        "grid_rows": som.grid_rows,
        "grid_cols": som.grid_cols,
        "window_len": som.window_len,
        "epochs_trained": som.epochs_trained,
        "alpha0": som.alpha0,
        "sigma0": som.sigma0,
        "dtype": "float32",
        "byte_order": "little",
        "meta": meta or {},
    }
    with open(ckpt_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return ckpt_dir


def load_som(ckpt_dir) -> SOMap:
    ckpt_dir = Path(ckpt_dir)
    with open(ckpt_dir / "manifest.json", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format") != SOM_FORMAT:
        raise ValueError(f"not a SOM checkpoint: {ckpt_dir}")
    protos = np.fromfile(ckpt_dir / "prototypes.bin", dtype="<f4").astype(np.float64)
    shape = (manifest["grid_rows"], manifest["grid_cols"], manifest["window_len"])
    return SOMap(
        grid_rows=manifest["grid_rows"],
        grid_cols=manifest["grid_cols"],
        prototypes=protos.reshape(shape),
        epochs_trained=manifest["epochs_trained"],
        alpha0=manifest["alpha0"],
        sigma0=manifest["sigma0"],
    )
