"""Desk-scale experiment orchestration: synthetic data -> dataset variants ->
settings grid -> prediction analytics. Shared by the CLI and the acceptance
suite so both run the same pipeline."""

from __future__ import annotations

from dataclasses import dataclass, field

from .dataio import (
    Polarity,
    SplitSpec,
    SynthConfig,
    SynthManifest,
    Trace,
    WindowSet,
    augment_flip,
    split,
    synth_generate,
    window_dataset,
)
from .ensemble import GridData, GridResult, SettingsGrid, train_grid
from .netcore import ArchConfig
from .somclean import FlagEntry, FlagSet, apply_flags
from .trainer import TrainConfig

#: Compact architecture that trains in seconds on a laptop; five blocks still
#: pool down to a 2-sample map at window 128.
DESK_ARCH = ArchConfig(
    window_len=128,
    conv_channels=(4, 8, 8, 16, 16),
    kernel_size=3,
    dense_widths=(16, 1),
)
DESK_PRE = 51  # 0.4 * 128, onset kept off-center like the full-scale default
DESK_POST = 77


def manifest_flags(traces: list[Trace], manifest: SynthManifest) -> FlagSet:
    """Ground-truth flags for planted mislabels: the corrected label is the
    opposite of the (inverted) label carried by the dataset."""
    by_id = {t.id: t for t in traces}
    flags = FlagSet()
    for tid in manifest.mislabeled_ids:
        assigned = by_id[tid].label
        corrected = Polarity.DOWN if assigned is Polarity.UP else Polarity.UP
        flags.entries[tid] = FlagEntry(
            trace_id=tid,
            reason="mislabeled",
            corrected_label=corrected,
        )
    return flags


@dataclass
class DeskDataset:
    """Everything one synthetic experiment run trains and analyzes on."""

    grid_data: GridData
    undecidable: WindowSet
    flags: FlagSet  # planted mislabels with corrected labels
    flagged_windows: WindowSet
    traces: list


def build_desk_dataset(
    synth_cfg: SynthConfig,
    split_spec: SplitSpec,
    pre: int = DESK_PRE,
    post: int = DESK_POST,
) -> DeskDataset:
    """Generate, split, window and augment both dataset variants.

    The "cleaned" variant removes the planted mislabels from train, val and
    test alike, standing in for the flags a human review loop would produce.
    """
    traces, manifest = synth_generate(synth_cfg)
    defined = [t for t in traces if t.label is not Polarity.UNDECIDABLE]
    undecidable = [t for t in traces if t.label is Polarity.UNDECIDABLE]
    flags = manifest_flags(traces, manifest)

    tr, va, te = split(defined, split_spec)
    variants_traces = {"complete": (tr, va, te)}
    variants_traces["cleaned"] = tuple(
        apply_flags(part, flags, mode="remove")[0] for part in (tr, va, te)
    )

    train_ws, val_ws, test_ws = {}, {}, {}
    for variant, (t_tr, t_va, t_te) in variants_traces.items():
        ws_tr, _ = window_dataset(t_tr, pre, post)
        train_ws[variant] = augment_flip(ws_tr)
        val_ws[variant], _ = window_dataset(t_va, pre, post)
        test_ws[variant], _ = window_dataset(t_te, pre, post)

    undec_ws, _ = window_dataset(undecidable, pre, post) if undecidable else (None, None)
    flagged_traces = [t for t in defined if t.id in flags.entries]
    flagged_ws, _ = window_dataset(flagged_traces, pre, post) if flagged_traces else (None, None)

    return DeskDataset(
        grid_data=GridData(train=train_ws, val=val_ws, test=test_ws),
        undecidable=undec_ws,
        flags=flags,
        flagged_windows=flagged_ws,
        traces=traces,
    )


@dataclass
class DeskRunConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    split: SplitSpec = field(default_factory=SplitSpec)
    arch: ArchConfig = field(default_factory=lambda: DESK_ARCH)
    train: TrainConfig = field(default_factory=TrainConfig)
    grid: SettingsGrid = field(default_factory=SettingsGrid)
    pre: int = DESK_PRE
    post: int = DESK_POST
    base_seed: int = 0


@dataclass
class DeskRun:
    dataset: DeskDataset
    result: GridResult


def run_desk_grid(cfg: DeskRunConfig, out_dir=None) -> DeskRun:
    dataset = build_desk_dataset(cfg.synth, cfg.split, cfg.pre, cfg.post)
    result = train_grid(
        cfg.grid, dataset.grid_data, cfg.arch, cfg.train, cfg.base_seed, out_dir=out_dir
    )
    return DeskRun(dataset=dataset, result=result)
