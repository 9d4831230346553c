"""Command-line entry point.

Subcommands: synth, decompose, pretrain, train, evaluate, forecast,
dump-latents, ablate. Configuration lives in a JSON file with "train" and
"synthetic" sections; --set section.key=value overrides file values. Every
run writes one manifest.json into its output directory; reusing a directory
requires --overwrite. Exit codes: 0 ok, 1 usage, 2 data, 3 training.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import CheckpointError
from .data import (DataError, SyntheticSpec, generate_synthetic, ingest_csv,
                   prepare_samples, windows_for_role, write_csv)
from .decomposition import DecompositionError, decompose
from .evaluation import METRIC_NAMES, MetricError
from .forecaster import write_forecast_csv
from .latent import dump_latents, separation_score, write_dump
from .training import (TrainConfig, TrainingError, VARIANTS, build_cvae, build_model,
                       evaluate_split, load_full, load_stage1, multi_seed_evaluate,
                       pipeline_split, save_full, save_stage1,
                       stage1_pretrain, stage2_train, RunRecord)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_TRAINING = 3

OUT_ROOT_ENV = "LATENTCAST_OUT_ROOT"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# Config handling
# ---------------------------------------------------------------------------

def load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise UsageError(f"config file not found: {p}")
    try:
        with open(p, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"config file {p} is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise DataError(f"config file {p} must hold a JSON object")
    return cfg


def apply_overrides(cfg: dict, sets: list[str]) -> dict:
    for item in sets:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise UsageError(f"--set expects section.key=value, got {item!r}")
        dotted, raw = item.split("=", 1)
        section, key = dotted.split(".", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        cfg.setdefault(section, {})[key] = value
    return cfg


def train_config_from(cfg: dict, args) -> TrainConfig:
    section = dict(cfg.get("train", {}))
    if getattr(args, "seed", None) is not None:
        section["seed"] = args.seed
    if getattr(args, "variant", None) is not None:
        section["variant"] = args.variant
    try:
        config = TrainConfig(**section)
    except TypeError as exc:
        raise UsageError(f"bad train config: {exc}") from None
    try:
        config.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return config


def synthetic_spec_from(cfg: dict) -> SyntheticSpec:
    section = dict(cfg.get("synthetic", {}))
    for key in ("trend_slope_range", "domain_period_range",
                "domain_amplitude_range", "phase_range"):
        if key in section:
            section[key] = tuple(section[key])
    try:
        spec = SyntheticSpec(**section)
    except TypeError as exc:
        raise UsageError(f"bad synthetic config: {exc}") from None
    spec.validate()
    return spec


# ---------------------------------------------------------------------------
# Output directory and manifest
# ---------------------------------------------------------------------------

def resolve_out(out: str, overwrite: bool) -> Path:
    root = os.environ.get(OUT_ROOT_ENV, ".")
    path = Path(out) if os.path.isabs(out) else Path(root) / out
    manifest = path / "manifest.json"
    if manifest.exists() and not overwrite:
        raise UsageError(f"output dir {path} already holds a run; pass --overwrite to reuse it")
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_manifest(out: Path, command: str, config_snapshot: dict,
                   artifacts: dict[str, str]) -> None:
    manifest = {
        "tool": f"latentcast {__version__}",
        "command": command,
        "argv": sys.argv[1:],
        "config": config_snapshot,
        "artifacts": artifacts,
        "created": _dt.datetime.now().isoformat(timespec="seconds"),
        "out_dir": str(out),
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def _load_datasets(args, config: TrainConfig):
    path = Path(args.data)
    if not path.exists():
        raise UsageError(f"data file not found: {path}")
    return ingest_csv(path, value_scale=config.value_scale,
                      fill_missing=config.fill_missing)


def _write_reports(out: Path, result_reports: dict) -> dict[str, str]:
    artifacts = {}
    for name, report in result_reports.items():
        jpath = out / f"report_{name}.json"
        tpath = out / f"report_{name}.txt"
        cpath = out / f"report_{name}.csv"
        jpath.write_text(report.to_json() + "\n", encoding="utf-8")
        tpath.write_text(report.to_table() + "\n", encoding="utf-8")
        with open(cpath, "w", encoding="utf-8") as fh:
            fh.write("domain,metric,value\n")
            for dom, metric, value in report.to_csv_rows():
                fh.write(f"{dom},{metric},{value!r}\n")
        artifacts[f"report_{name}"] = str(jpath)
    return artifacts


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = apply_overrides(load_config_file(args.config), args.set)
    spec = synthetic_spec_from(cfg)
    out = resolve_out(args.out, args.overwrite)
    datasets = generate_synthetic(spec)
    csv_path = out / "data.csv"
    write_csv(datasets, csv_path)
    write_manifest(out, "synth", {"synthetic": spec.__dict__}, {"data": str(csv_path)})
    print(f"wrote {csv_path} ({len(datasets)} domains)")
    return EXIT_OK


def cmd_decompose(args) -> int:
    cfg = apply_overrides(load_config_file(args.config), args.set)
    config = train_config_from(cfg, args)
    datasets = _load_datasets(args, config)
    by_name = {ds.domain_name: ds for ds in datasets}
    ds = by_name.get(args.domain) if args.domain else datasets[0]
    if ds is None:
        raise DataError(f"domain {args.domain!r} not in {sorted(by_name)}")
    if args.series:
        if args.series not in ds.series_names:
            raise DataError(f"series {args.series!r} not in domain {ds.domain_name}")
        s = ds.series_names.index(args.series)
    else:
        s = 0
    kernel = args.kernel if args.kernel is not None else config.kernel
    parts = decompose(ds.values[s], kernel)
    out = resolve_out(args.out, args.overwrite)
    path = out / "decomposition.csv"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("value,trend,seasonal\n")
        for v, t, sv in zip(ds.values[s], parts.x_t, parts.x_s):
            fh.write(f"{float(v)!r},{float(t)!r},{float(sv)!r}\n")
    write_manifest(out, "decompose",
                   {"kernel": kernel, "domain": ds.domain_name,
                    "series": ds.series_names[s]},
                   {"decomposition": str(path)})
    print(f"wrote {path}")
    return EXIT_OK


def cmd_pretrain(args) -> int:
    cfg = apply_overrides(load_config_file(args.config), args.set)
    config = train_config_from(cfg, args)
    if config.variant in ("e2e", "no_latent"):
        raise UsageError(f"variant {config.variant!r} has no separate pretraining stage")
    datasets = _load_datasets(args, config)
    out = resolve_out(args.out, args.overwrite)
    split, domain_index, domain_map = pipeline_split(datasets, config)
    windows = windows_for_role(datasets, split, "train", config.lookback,
                               config.horizon, config.stride)
    samples = prepare_samples(windows)
    rng = np.random.default_rng([config.seed, 1])
    pair = build_cvae(config, len(split.train_domains), rng)
    record = RunRecord(seed=config.seed)
    stage1_pretrain(pair, samples, domain_index, config, record)
    ckpt = out / "stage1.ckpt.json"
    save_stage1(ckpt, pair, domain_map, config)
    (out / "runrecord_stage1.json").write_text(
        json.dumps(record.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    write_manifest(out, "pretrain", config.to_dict(),
                   {"checkpoint": str(ckpt), "runrecord": str(out / 'runrecord_stage1.json')})
    print(f"stage-1 loss {record.stage1_losses[0]:.6f} -> {record.stage1_losses[-1]:.6f} "
          f"over {len(record.stage1_losses)} epochs; wrote {ckpt}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = apply_overrides(load_config_file(args.config), args.set)
    config = train_config_from(cfg, args)
    datasets = _load_datasets(args, config)
    out = resolve_out(args.out, args.overwrite)
    split, domain_index, domain_map = pipeline_split(datasets, config)
    feat_dim = datasets[0].feat_dim

    rng = np.random.default_rng([config.seed, 1])
    pair = build_cvae(config, len(split.train_domains), rng)
    model = build_model(config, pair, feat_dim, rng)
    if config.variant not in ("e2e", "no_latent"):
        if not args.pretrained:
            raise UsageError("train requires --pretrained CHECKPOINT unless --variant e2e/no_latent")
        if not Path(args.pretrained).exists():
            raise UsageError(f"pretrain checkpoint not found: {args.pretrained}")
        ckpt_config, ckpt_map = load_stage1(args.pretrained, pair)
        for key in ("lookback", "d_z", "hidden", "alpha", "kernel", "seed", "dropout"):
            if getattr(ckpt_config, key) != getattr(config, key):
                raise CheckpointError(
                    f"pretrain checkpoint {key}={getattr(ckpt_config, key)} does not match "
                    f"config {key}={getattr(config, key)}")
        if [list(row) for row in ckpt_map] != [list(row) for row in domain_map]:
            raise CheckpointError(
                "pretrain checkpoint was built on a different domain split; "
                "check data, seed, and split fractions")

    train_windows = windows_for_role(datasets, split, "train", config.lookback,
                                     config.horizon, config.stride)
    val_windows = windows_for_role(datasets, split, "val", config.lookback,
                                   config.horizon, config.stride)
    record = RunRecord(seed=config.seed)
    stage2_train(model, prepare_samples(train_windows), prepare_samples(val_windows),
                 config, record,
                 domain_index=domain_index if config.variant == "e2e" else None)

    eval_rng = np.random.default_rng([config.seed, 4])
    report_train, _, _ = evaluate_split(model, datasets, split, config, "train", eval_rng)
    report_test, wins, dists = evaluate_split(model, datasets, split, config, "test", eval_rng)

    ckpt = out / "model.ckpt.json"
    save_full(ckpt, model, domain_map, config, feat_dim)
    (out / "runrecord.json").write_text(
        json.dumps(record.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    artifacts = {"checkpoint": str(ckpt), "runrecord": str(out / 'runrecord.json')}
    artifacts.update(_write_reports(out, {"train": report_train, "test": report_test}))
    fc_path = out / "forecasts_test.csv"
    write_forecast_csv(fc_path, wins, dists)
    artifacts["forecasts_test"] = str(fc_path)
    write_manifest(out, "train", config.to_dict(), artifacts)
    print(f"selected epoch {record.selected_epoch} "
          f"(val loss {min(record.stage2_val_losses):.6f})")
    print("test averages: " + "  ".join(
        f"{m}={report_test.average[m]:.6f}" for m in METRIC_NAMES))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    config, model, _, _ = _load_full_checkpoint(args.checkpoint)
    datasets = _load_datasets(args, config)
    out = resolve_out(args.out, args.overwrite)
    split, _, _ = pipeline_split(datasets, config)
    eval_rng = np.random.default_rng([config.seed, 4])
    report_train, _, _ = evaluate_split(model, datasets, split, config, "train", eval_rng)
    report_test, _, _ = evaluate_split(model, datasets, split, config, "test", eval_rng)
    artifacts = _write_reports(out, {"train": report_train, "test": report_test})
    write_manifest(out, "evaluate", config.to_dict(), artifacts)
    for name, report in (("train", report_train), ("test", report_test)):
        print(f"[{name}] " + "  ".join(
            f"{m}={report.average[m]:.6f}" for m in METRIC_NAMES))
    return EXIT_OK


def cmd_forecast(args) -> int:
    config, model, _, _ = _load_full_checkpoint(args.checkpoint)
    datasets = _load_datasets(args, config)
    out = resolve_out(args.out, args.overwrite)
    split, _, _ = pipeline_split(datasets, config)
    eval_rng = np.random.default_rng([config.seed, 4])
    _, wins, dists = evaluate_split(model, datasets, split, config, args.split, eval_rng)
    path = out / f"forecasts_{args.split}.csv"
    write_forecast_csv(path, wins, dists)
    write_manifest(out, "forecast", config.to_dict(), {"forecasts": str(path)})
    print(f"wrote {path} ({len(wins)} windows)")
    return EXIT_OK


def cmd_dump_latents(args) -> int:
    config, model, _, _ = _load_full_checkpoint(args.checkpoint)
    datasets = _load_datasets(args, config)
    out = resolve_out(args.out, args.overwrite)
    split, _, _ = pipeline_split(datasets, config)
    role = "test" if args.split == "test" else "val"
    windows = windows_for_role(datasets, split, role, config.lookback,
                               config.horizon, config.eval_stride)
    if not windows:
        raise DataError(f"no windows available for split {args.split!r}")
    dump = dump_latents(model.pair, windows)
    path = out / f"latents_{args.split}.csv"
    write_dump(dump, path)
    artifacts = {"latents": str(path)}
    lines = [f"rows={len(dump.rows)}"]
    try:
        shared_ratio, specific_ratio, notes = separation_score(dump)
        lines.append(f"shared_ratio={shared_ratio:.6f} specific_ratio={specific_ratio:.6f}")
        lines.extend(notes)
    except ValueError as exc:
        lines.append(f"separation score unavailable: {exc}")
    score_path = out / "separation.txt"
    score_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    artifacts["separation"] = str(score_path)
    write_manifest(out, "dump-latents", config.to_dict(), artifacts)
    print("\n".join(lines))
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = apply_overrides(load_config_file(args.config), args.set)
    config = train_config_from(cfg, args)
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    unknown = [v for v in variants if v not in VARIANTS]
    if unknown:
        raise UsageError(f"unknown variants {unknown}; valid: {', '.join(VARIANTS)}")
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    datasets = _load_datasets(args, config)
    out = resolve_out(args.out, args.overwrite)

    table: dict[str, dict] = {}
    any_failed = False
    for variant in variants:
        result = multi_seed_evaluate(datasets, replace(config, variant=variant), seeds)
        row: dict = {"failed_seeds": result.failures}
        for r in result.rows:
            if r["split"] == "test":
                row[f"{r['metric']}_mean"] = r["mean"]
                row[f"{r['metric']}_std"] = r["std"]
                row["n_seeds"] = r["n_seeds"]
        if result.failures:
            any_failed = True
        table[variant] = row

    (out / "ablation.json").write_text(
        json.dumps(table, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    header = f"{'variant':>12} " + " ".join(f"{m + ' (mean±std)':>22}" for m in METRIC_NAMES)
    lines = [header]
    for variant in variants:
        row = table[variant]
        if row["failed_seeds"] and f"{METRIC_NAMES[0]}_mean" not in row:
            lines.append(f"{variant:>12} " + "FAILED: " + "; ".join(row["failed_seeds"].values()))
            continue
        cells = " ".join(
            f"{row[f'{m}_mean']:>13.6f}±{row[f'{m}_std']:.4f}" for m in METRIC_NAMES)
        lines.append(f"{variant:>12} " + cells)
    (out / "ablation.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    write_manifest(out, "ablate", config.to_dict(),
                   {"ablation": str(out / 'ablation.json')})
    print("\n".join(lines))
    return EXIT_TRAINING if any_failed else EXIT_OK


def _load_full_checkpoint(path: str):
    p = Path(path)
    if not p.exists():
        raise UsageError(f"checkpoint not found: {p}")
    return load_full(p)


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="latentcast",
                     description="Domain-generalizing probabilistic time series forecasting")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=True, config=True):
        if config:
            p.add_argument("--config", help="JSON config file")
            p.add_argument("--set", action="append", default=[],
                           metavar="SECTION.KEY=VALUE", help="override a config value")
        if data:
            p.add_argument("--data", required=True, help="input CSV")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--overwrite", action="store_true")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--variant", default=None, choices=VARIANTS)

    p = sub.add_parser("synth", help="generate a synthetic multi-domain CSV")
    common(p, data=False)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("decompose", help="emit value/trend/seasonal columns for one series")
    common(p)
    p.add_argument("--domain", default=None)
    p.add_argument("--series", default=None)
    p.add_argument("--kernel", type=int, default=None)
    p.set_defaults(fn=cmd_decompose)

    p = sub.add_parser("pretrain", help="stage 1: pretrain the conditional VAE pair")
    common(p)
    p.set_defaults(fn=cmd_pretrain)

    p = sub.add_parser("train", help="stage 2: train the forecasting decoder")
    common(p)
    p.add_argument("--pretrained", default=None, help="stage-1 checkpoint")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("evaluate", help="metric reports for train and test domain sets")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("forecast", help="write per-window quantile forecasts")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.set_defaults(fn=cmd_forecast)

    p = sub.add_parser("dump-latents", help="export shared/specific latents plus separation score")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.set_defaults(fn=cmd_dump_latents)

    p = sub.add_parser("ablate", help="run variant ablations over multiple seeds")
    common(p)
    p.add_argument("--variants", default="full,e2e,no_reg,no_decomp,shared_only,no_cond")
    p.add_argument("--seeds", default="0")
    p.set_defaults(fn=cmd_ablate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, MetricError, CheckpointError, DecompositionError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingError as exc:
        print(f"training failure: {exc}", file=sys.stderr)
        return EXIT_TRAINING


if __name__ == "__main__":
    sys.exit(main())
