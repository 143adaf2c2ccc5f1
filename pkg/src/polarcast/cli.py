"""Command-line umbrella: synth | ingest | split | train | train-grid | som |
serve | ensemble {hist,compare,audit} | audit.

Option precedence is explicit flags > --config file > built-in defaults. The
config file is JSON keyed by subcommand, values keyed by the long option name
with underscores (e.g. {"train": {"setting": "sgdxdropoutxcomplete"}}).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .dataio import (
    Polarity,
    SplitSpec,
    SynthConfig,
    augment_flip,
    load_dataset,
    load_manifest,
    save_dataset,
    split,
    synth_generate,
    window_dataset,
)
from .ensemble import (
    GridData,
    PredictionHistogram,
    SettingsGrid,
    compare_flatness,
    histogram,
    load_registry_models,
    audit_extremal_bins,
    parse_setting_key,
    predict_mean,
    train_grid,
    uncertainty_metrics,
)
from .experiments import DESK_ARCH, DESK_POST, DESK_PRE, manifest_flags
from .netcore import ArchConfig
from .somclean import SomConfig, apply_flags, assign_clusters, fold_journal, save_som, som_train
from .trainer import TrainConfig, evaluate, train


def _merge(args: argparse.Namespace, defaults: dict) -> dict:
    """flags > config file section > defaults."""
    merged = dict(defaults)
    config_path = getattr(args, "config", None)
    if config_path:
        with open(config_path, encoding="utf-8") as fh:
            file_cfg = json.load(fh)
        section = args.command
        if getattr(args, "ensemble_command", None):
            section = f"{args.command}.{args.ensemble_command}"
        merged.update(file_cfg.get(section, {}))
    for key in defaults:
        val = getattr(args, key, None)
        if val is not None:
            merged[key] = val
    return merged


def _load_traces(dataset_dir: Path):
    traces, report = load_dataset(dataset_dir / "waveforms", dataset_dir / "metadata.csv")
    if report.skipped:
        print(f"warning: {len(report.skipped)} rows skipped during ingest", file=sys.stderr)
    return traces


def _arch_for(window_len: int, overrides: dict | None = None) -> ArchConfig:
    fields = {"window_len": window_len, **(overrides or {})}
    if "conv_channels" in fields:
        fields["conv_channels"] = tuple(fields["conv_channels"])
    if "dense_widths" in fields:
        fields["dense_widths"] = tuple(fields["dense_widths"])
    return replace(DESK_ARCH, **fields)  # single replace: validation sees all overrides


def _prepare_variants(traces, pre, post, split_seed, flags):
    """Window/split/augment both dataset variants from one trace list."""
    defined = [t for t in traces if t.label is not Polarity.UNDECIDABLE]
    spec = SplitSpec(seed=split_seed)
    tr, va, te = split(defined, spec)
    out = {"complete": (tr, va, te)}
    if flags is not None:
        # an empty flag set legitimately yields cleaned == complete
        out["cleaned"] = tuple(apply_flags(p, flags, mode="remove")[0] for p in (tr, va, te))
    data = GridData(train={}, val={}, test={})
    for variant, (t_tr, t_va, t_te) in out.items():
        ws_tr, _ = window_dataset(t_tr, pre, post)
        data.train[variant] = augment_flip(ws_tr)
        data.val[variant], _ = window_dataset(t_va, pre, post)
        data.test[variant], _ = window_dataset(t_te, pre, post)
    return data


def _flags_for_dataset(dataset_dir: Path, journal, traces):
    """Cleaning flags: an explicit journal wins; otherwise fall back to the
    synthetic manifest's planted mislabels when present."""
    if journal:
        return fold_journal(journal)
    manifest_path = dataset_dir / "manifest.json"
    if manifest_path.is_file():
        return manifest_flags(traces, load_manifest(dataset_dir))
    return None


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args):
    defaults = dict(out=None, n_defined=1000, n_undecidable=200, n_mislabeled=80,
                    snr_defined=6.0, snr_ambiguous=0.4, window_len=128, seed=0)
    cfg = _merge(args, defaults)
    if not cfg["out"]:
        raise SystemExit("synth: --out is required")
    synth_cfg = SynthConfig(
        n_defined=cfg["n_defined"],
        n_undecidable=cfg["n_undecidable"],
        n_mislabeled=cfg["n_mislabeled"],
        snr_defined=cfg["snr_defined"],
        snr_ambiguous=cfg["snr_ambiguous"],
        window_len=cfg["window_len"],
        seed=cfg["seed"],
    )
    traces, manifest = synth_generate(synth_cfg)
    out = Path(cfg["out"])
    save_dataset(traces, out, manifest)
    print(json.dumps({"out": str(out), "n_traces": len(traces),
                      "n_mislabeled": len(manifest.mislabeled_ids)}))


def cmd_ingest(args):
    defaults = dict(container=None, metadata=None)
    cfg = _merge(args, defaults)
    if not cfg["container"] or not cfg["metadata"]:
        raise SystemExit("ingest: --container and --metadata are required")
    traces, report = load_dataset(cfg["container"], cfg["metadata"])
    print(json.dumps(report.to_json(), indent=2))


def cmd_split(args):
    defaults = dict(data=None, seed=0, out=None)
    cfg = _merge(args, defaults)
    if not cfg["data"]:
        raise SystemExit("split: --data is required")
    traces = _load_traces(Path(cfg["data"]))
    defined = [t for t in traces if t.label is not Polarity.UNDECIDABLE]
    tr, va, te = split(defined, SplitSpec(seed=cfg["seed"]))
    payload = {
        "train": [t.id for t in tr],
        "val": [t.id for t in va],
        "test": [t.id for t in te],
    }
    if cfg["out"]:
        Path(cfg["out"]).write_text(json.dumps(payload, indent=2), encoding="utf-8")
    print(json.dumps({k: len(v) for k, v in payload.items()}))


def cmd_train(args):
    defaults = dict(setting=None, seed=0, data=None, out=None, flags=None,
                    pre=DESK_PRE, post=DESK_POST, split_seed=0,
                    batch_size=512, max_epochs=100, patience=10,
                    learning_rate=0.01, arch=None)
    cfg = _merge(args, defaults)
    if not cfg["setting"] or not cfg["data"] or not cfg["out"]:
        raise SystemExit("train: --setting, --data and --out are required")
    setting = parse_setting_key(cfg["setting"])
    dataset_dir = Path(cfg["data"])
    traces = _load_traces(dataset_dir)
    flags = _flags_for_dataset(dataset_dir, cfg["flags"], traces)
    if setting.variant == "cleaned" and flags is None:
        raise SystemExit("train: cleaned variant needs --flags or a dataset manifest")
    data = _prepare_variants(traces, cfg["pre"], cfg["post"], cfg["split_seed"], flags)
    arch_overrides = json.loads(Path(cfg["arch"]).read_text()) if cfg["arch"] else None
    arch = _arch_for(cfg["pre"] + cfg["post"], arch_overrides)
    arch = replace(arch, dropout_enabled=setting.dropout)
    train_cfg = TrainConfig(
        optimizer=setting.optimizer,
        dropout_enabled=setting.dropout,
        dataset_variant=setting.variant,
        seed=cfg["seed"],
        batch_size=cfg["batch_size"],
        max_epochs=cfg["max_epochs"],
        patience=cfg["patience"],
        learning_rate=cfg["learning_rate"],
    )
    params, record = train(arch, data.train[setting.variant],
                           data.val[setting.variant], train_cfg)
    out = Path(cfg["out"])
    ckpt.save_checkpoint(out / "checkpoint", params, meta={
        "setting": setting.key,
        "seed": cfg["seed"],
        "epoch": record.best_epoch,
        "val_loss": min(record.val_losses),
    })
    accs = {v: evaluate(params, data.test[v]).accuracy for v in data.test}
    payload = {"record": record.to_json(), "test_accuracy": accs,
               "checkpoint": str(out / "checkpoint")}
    (out / "train_record.json").write_text(json.dumps(payload, indent=2),
                                           encoding="utf-8")
    print(json.dumps({"best_epoch": record.best_epoch,
                      "stop_reason": record.stop_reason,
                      "test_accuracy": accs}))


def cmd_train_grid(args):
    defaults = dict(data=None, out=None, flags=None, base_seed=0,
                    models_per_setting=7, pre=DESK_PRE, post=DESK_POST,
                    split_seed=0, batch_size=512, max_epochs=100, patience=10,
                    learning_rate=0.01, arch=None)
    cfg = _merge(args, defaults)
    if not cfg["data"] or not cfg["out"]:
        raise SystemExit("train-grid: --data and --out are required")
    dataset_dir = Path(cfg["data"])
    traces = _load_traces(dataset_dir)
    flags = _flags_for_dataset(dataset_dir, cfg["flags"], traces)
    if flags is None:
        raise SystemExit("train-grid: need --flags or a dataset manifest for the "
                         "cleaned variant")
    data = _prepare_variants(traces, cfg["pre"], cfg["post"], cfg["split_seed"], flags)
    arch_overrides = json.loads(Path(cfg["arch"]).read_text()) if cfg["arch"] else None
    arch = _arch_for(cfg["pre"] + cfg["post"], arch_overrides)
    base_cfg = TrainConfig(batch_size=cfg["batch_size"], max_epochs=cfg["max_epochs"],
                           patience=cfg["patience"], learning_rate=cfg["learning_rate"])
    grid = SettingsGrid(models_per_setting=cfg["models_per_setting"])
    result = train_grid(grid, data, arch, base_cfg, cfg["base_seed"],
                        out_dir=Path(cfg["out"]))
    print(json.dumps(result.report(), indent=2))


def cmd_som(args):
    defaults = dict(data=None, out=None, flags=None, rows=10, cols=10, epochs=20,
                    alpha0=0.5, sigma0=None, seed=0, pre=DESK_PRE, post=DESK_POST)
    cfg = _merge(args, defaults)
    if not cfg["data"] or not cfg["out"]:
        raise SystemExit("som: --data and --out are required")
    traces = _load_traces(Path(cfg["data"]))
    if cfg["flags"]:
        flags = fold_journal(cfg["flags"])
        traces, _ = apply_flags(traces, flags, mode="remove")
    windows, _ = window_dataset(traces, cfg["pre"], cfg["post"])
    som_cfg = SomConfig(grid_rows=cfg["rows"], grid_cols=cfg["cols"],
                        epochs=cfg["epochs"], alpha0=cfg["alpha0"],
                        sigma0=cfg["sigma0"], seed=cfg["seed"])
    som = som_train(windows.values, som_cfg)
    report = assign_clusters(som, windows)
    save_som(Path(cfg["out"]), som, meta={"n_windows": len(windows)})
    occupied = sum(1 for n in report.nodes if n.count)
    print(json.dumps({"out": cfg["out"], "nodes": len(report.nodes),
                      "occupied": occupied}))


def cmd_serve(args):
    defaults = dict(data=None, journal=None, som=None, artifacts=None, ui=None,
                    host="127.0.0.1", port=8321, pre=DESK_PRE, post=DESK_POST)
    cfg = _merge(args, defaults)
    if not cfg["data"] or not cfg["journal"]:
        raise SystemExit("serve: --data and --journal are required")
    from .service import build_session, serve

    session = build_session(cfg["data"], cfg["journal"], cfg["pre"], cfg["post"],
                            som_dir=cfg["som"], artifacts_dir=cfg["artifacts"])
    serve(session, host=cfg["host"], port=cfg["port"], ui_dir=cfg["ui"])


def _histogram_svg(h: PredictionHistogram, title: str) -> str:
    width, height, pad = 640, 320, 36
    plot_w, plot_h = width - 2 * pad, height - 2 * pad
    peak = max(1, int(h.counts.max()))
    bars = []
    bw = plot_w / h.bin_count
    for i, c in enumerate(h.counts):
        bh = plot_h * int(c) / peak
        x = pad + i * bw
        y = height - pad - bh
        bars.append(
            f'<rect x="{x:.2f}" y="{y:.2f}" width="{bw - 1:.2f}" '
            f'height="{bh:.2f}" fill="#4878a8"/>'
        )
    axis = (
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" '
        f'y2="{height - pad}" stroke="#333"/>'
        f'<text x="{pad}" y="{height - pad + 16}" font-size="11">0</text>'
        f'<text x="{width - pad - 8}" y="{height - pad + 16}" font-size="11">1</text>'
        f'<text x="{pad}" y="{pad - 10}" font-size="13">{title} '
        f'(n={h.n_total}, peak={peak})</text>'
    )
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">'
        f'<rect width="{width}" height="{height}" fill="white"/>'
        + axis + "".join(bars) + "</svg>"
    )


def cmd_ensemble_hist(args):
    defaults = dict(registry=None, dataset=None, data="undecidable", models="all",
                    out=None, pre=DESK_PRE, post=DESK_POST, split_seed=0)
    cfg = _merge(args, defaults)
    if not cfg["registry"] or not cfg["dataset"] or not cfg["out"]:
        raise SystemExit("ensemble hist: --registry, --dataset and --out are required")
    if cfg["data"] not in ("undecidable", "test"):
        raise SystemExit("ensemble hist: --data must be 'undecidable' or 'test'")
    registry_path = Path(cfg["registry"])
    if registry_path.is_dir():
        registry_path = registry_path / "registry.json"
    by_setting = load_registry_models(registry_path)
    if cfg["models"] == "all":
        models = [m for ms in by_setting.values() for m in ms]
        selector = "all"
    else:
        key = parse_setting_key(cfg["models"]).key
        models = by_setting.get(key, [])
        selector = key
    if not models:
        raise SystemExit(f"ensemble hist: no models for selector {cfg['models']!r}")
    traces = _load_traces(Path(cfg["dataset"]))
    if cfg["data"] == "undecidable":
        subset = [t for t in traces if t.label is Polarity.UNDECIDABLE]
    else:
        defined = [t for t in traces if t.label is not Polarity.UNDECIDABLE]
        _, _, subset = split(defined, SplitSpec(seed=cfg["split_seed"]))
    if not subset:
        raise SystemExit(f"ensemble hist: no {cfg['data']} traces in the dataset")
    windows, _ = window_dataset(subset, cfg["pre"], cfg["post"])
    mean_p = predict_mean(models, windows.values)
    h = histogram(mean_p)
    metrics = uncertainty_metrics(h)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    name = f"{selector}-{cfg['data']}" if cfg["data"] != "undecidable" else selector
    hist_payload = {**h.to_json(), "metrics": metrics.to_json(),
                    "selector": selector, "which": cfg["data"],
                    "n_models": len(models)}
    (out / f"{name}.hist.json").write_text(json.dumps(hist_payload, indent=2))
    (out / f"{name}.preds.json").write_text(json.dumps(
        {"ids": windows.ids, "mean_p": mean_p.tolist()}))
    (out / f"{name}.svg").write_text(_histogram_svg(h, f"{selector} / {cfg['data']}"))
    with open(out / f"{name}.csv", "w", encoding="utf-8") as fh:
        fh.write("bin_lo,bin_hi,count\n")
        for i, c in enumerate(h.counts):
            fh.write(f"{h.edges[i]},{h.edges[i + 1]},{int(c)}\n")
    print(json.dumps({"artifact": name, "n_windows": len(windows),
                      "metrics": metrics.to_json()}))


def cmd_ensemble_compare(args):
    defaults = dict(a=None, b=None)
    cfg = _merge(args, defaults)
    if not cfg["a"] or not cfg["b"]:
        raise SystemExit("ensemble compare: --a and --b histogram JSONs required")
    metrics = []
    for path in (cfg["a"], cfg["b"]):
        h = PredictionHistogram.from_json(json.loads(Path(path).read_text()))
        metrics.append(uncertainty_metrics(h))
    print(json.dumps(compare_flatness(*metrics).to_json(), indent=2))


def cmd_audit(args):
    defaults = dict(predictions=None, bin="right", k=40, seed=0)
    cfg = _merge(args, defaults)
    if not cfg["predictions"]:
        raise SystemExit("audit: --predictions (a *.preds.json) is required")
    preds = json.loads(Path(cfg["predictions"]).read_text())
    sample = audit_extremal_bins(preds["ids"], np.asarray(preds["mean_p"]),
                                 k=cfg["k"], seed=cfg["seed"])
    picked = sample.left if cfg["bin"] == "left" else sample.right
    print(json.dumps({"bin": cfg["bin"], "k": cfg["k"], "ids": picked}, indent=2))


# ---------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser, *names):
    spec = {
        "data": dict(type=str, help="dataset directory (canonical layout)"),
        "out": dict(type=str, help="output path"),
        "seed": dict(type=int),
        "pre": dict(type=int, help="samples before the pick"),
        "post": dict(type=int, help="samples after the pick"),
        "flags": dict(type=str, help="flag journal (JSON lines)"),
        "split_seed": dict(type=int),
    }
    for n in names:
        p.add_argument(f"--{n.replace('_', '-')}", dest=n, **spec[n])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="polarcast")
    parser.add_argument("--config", type=str, help="JSON config file")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    _add_common(p, "out", "seed")
    for n in ("n-defined", "n-undecidable", "n-mislabeled", "window-len"):
        p.add_argument(f"--{n}", dest=n.replace("-", "_"), type=int)
    p.add_argument("--snr-defined", dest="snr_defined", type=float)
    p.add_argument("--snr-ambiguous", dest="snr_ambiguous", type=float)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="validate a waveform container")
    p.add_argument("--container", type=str)
    p.add_argument("--metadata", type=str)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("split", help="deterministic train/val/test id lists")
    _add_common(p, "data", "seed", "out")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train one setting")
    p.add_argument("--setting", type=str,
                   help="{sgd|adam}x{dropout|nodrop}x{complete|cleaned}")
    _add_common(p, "data", "out", "seed", "flags", "pre", "post", "split_seed")
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--arch", type=str, help="JSON file with ArchConfig overrides")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("train-grid", help="train the full 8-setting grid")
    _add_common(p, "data", "out", "flags", "pre", "post", "split_seed")
    p.add_argument("--base-seed", dest="base_seed", type=int)
    p.add_argument("--models-per-setting", dest="models_per_setting", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--arch", type=str)
    p.set_defaults(func=cmd_train_grid)

    p = sub.add_parser("som", help="train a SOM and write its checkpoint")
    _add_common(p, "data", "out", "seed", "flags", "pre", "post")
    p.add_argument("--rows", type=int)
    p.add_argument("--cols", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--alpha0", type=float)
    p.add_argument("--sigma0", type=float)
    p.set_defaults(func=cmd_som)

    p = sub.add_parser("serve", help="run the review service")
    _add_common(p, "data", "pre", "post")
    p.add_argument("--journal", type=str)
    p.add_argument("--som", type=str, help="SOM checkpoint directory")
    p.add_argument("--artifacts", type=str, help="ensemble artifacts directory")
    p.add_argument("--ui", type=str, help="static UI directory to mount at /ui")
    p.add_argument("--host", type=str)
    p.add_argument("--port", type=int)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("ensemble", help="ensemble analytics")
    esub = p.add_subparsers(dest="ensemble_command", required=True)

    pg = esub.add_parser("train-grid", help="alias for the top-level train-grid")
    _add_common(pg, "data", "out", "flags", "pre", "post", "split_seed")
    pg.add_argument("--base-seed", dest="base_seed", type=int)
    pg.add_argument("--models-per-setting", dest="models_per_setting", type=int)
    pg.add_argument("--batch-size", dest="batch_size", type=int)
    pg.add_argument("--max-epochs", dest="max_epochs", type=int)
    pg.add_argument("--patience", type=int)
    pg.add_argument("--learning-rate", dest="learning_rate", type=float)
    pg.add_argument("--arch", type=str)
    pg.set_defaults(func=cmd_train_grid)

    ph = esub.add_parser("hist", help="mean-prediction histogram artifacts")
    ph.add_argument("--registry", type=str)
    ph.add_argument("--dataset", type=str, help="dataset directory (canonical layout)")
    ph.add_argument("--data", choices=("undecidable", "test"),
                    help="which windows to histogram")
    _add_common(ph, "out", "pre", "post", "split_seed")
    ph.add_argument("--models", type=str, help="'all' or a setting key")
    ph.set_defaults(func=cmd_ensemble_hist)

    pc = esub.add_parser("compare", help="three-criterion flatness comparison")
    pc.add_argument("--a", type=str)
    pc.add_argument("--b", type=str)
    pc.set_defaults(func=cmd_ensemble_compare)

    pa = esub.add_parser("audit", help="sample extremal-bin ids for human audit")
    pa.add_argument("--predictions", type=str)
    pa.add_argument("--bin", choices=("left", "right"))
    pa.add_argument("-k", dest="k", type=int)
    pa.add_argument("--seed", type=int)
    pa.set_defaults(func=cmd_audit)

    p = sub.add_parser("audit", help="alias for 'ensemble audit'")
    p.add_argument("--predictions", type=str)
    p.add_argument("--bin", choices=("left", "right"))
    p.add_argument("-k", dest="k", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_audit)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    args.func(args)


if __name__ == "__main__":
    main()
