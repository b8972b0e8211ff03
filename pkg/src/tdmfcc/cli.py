"""Command-line front door.

Subcommands: ``manifest``, ``extract``, ``train-extractor``,
``run-experiment``, ``report``. All take a YAML config (``-c``) plus
``--set dotted.path=value`` overrides; ``TDMFCC_``-prefixed environment
variables override file values too (see config module).

Exit codes: 0 success, 2 config error, 3 data error (missing/corrupt
inputs), 4 numeric failure (non-convergence, degenerate systems).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import audio_io, classify, dsp, experiment, report, td_features
from .config import RunConfig, load_config
from .errors import (ConfigError, ConstantTargetError, ConvergenceError,
                     DegenerateFilterError, EmptyAudioError,
                     EmptyDatasetError, FormatError, IllConditionedError,
                     InitializationError, StratificationError,
                     UnsupportedFormatError)

_DATA_ERRORS = (FormatError, UnsupportedFormatError, EmptyAudioError,
                EmptyDatasetError, StratificationError, FileNotFoundError)
_NUMERIC_ERRORS = (DegenerateFilterError, ConvergenceError,
                   IllConditionedError, InitializationError,
                   ConstantTargetError)

EXTRACT_MODES = ("reference", "td_direct", "td_reservoir")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tdmfcc",
        description="Spoken-digit feature extraction and reservoir "
                    "classification experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("-c", "--config", default=None,
                       help="YAML config file (defaults apply without one)")
        p.add_argument("--set", dest="overrides", action="append",
                       default=[], metavar="KEY=VALUE",
                       help="override a config leaf, e.g. "
                            "--set experiment.n_seeds=3")
        p.add_argument("--jobs", type=int, default=1,
                       help="worker threads for clip/run parallelism")
        return p

    common(sub.add_parser("manifest",
                          help="scan the dataset and write its manifest"))
    p = common(sub.add_parser("extract",
                              help="write per-clip feature files + index"))
    p.add_argument("--mode", required=True, choices=EXTRACT_MODES)
    p.add_argument("--extractor", default=None,
                   help="extractor artifact (td_reservoir mode); defaults "
                        "to <output_dir>/extractor.earc")
    p = common(sub.add_parser("train-extractor",
                              help="train Reservoir 1 to mimic the "
                                   "filterbank convolutions"))
    p.add_argument("--out", default=None,
                   help="artifact path; defaults to <output_dir>/extractor.earc")
    common(sub.add_parser("run-experiment",
                          help="run the configured experiment end to end"))
    p = common(sub.add_parser("report",
                              help="re-render summary and plots from runs.csv"))
    p.add_argument("--runs", default=None,
                   help="runs CSV; defaults to <output_dir>/runs.csv")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, set_overrides=args.overrides)
        return _dispatch(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except _DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except _NUMERIC_ERRORS as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4
    except ValueError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4


def _dispatch(args, cfg: RunConfig) -> int:
    handler = {
        "manifest": _cmd_manifest,
        "extract": _cmd_extract,
        "train-extractor": _cmd_train_extractor,
        "run-experiment": _cmd_run_experiment,
        "report": _cmd_report,
    }[args.command]
    return handler(args, cfg)


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _default_extractor_path(cfg: RunConfig) -> Path:
    return Path(cfg.output_dir) / "extractor.earc"


def _cmd_manifest(args, cfg: RunConfig) -> int:
    manifest = audio_io.build_manifest(cfg.dataset.root, cfg.dataset.scheme)
    entries = experiment.select_entries(manifest, cfg)
    subset = dataclasses.replace(manifest, entries=entries)
    out = _out_dir(cfg)
    (out / "manifest.csv").write_text(audio_io.manifest_to_csv(subset))
    digits = sorted({e.digit for e in entries})
    speakers = sorted({e.speaker for e in entries})
    print(f"{len(entries)} clips, digits {digits}, "
          f"{len(speakers)} speakers -> {out / 'manifest.csv'}")
    for w in manifest.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return 0


def _feature_dir(cfg: RunConfig, mode: str) -> Path:
    return Path(cfg.output_dir) / "features" / mode


def _cmd_extract(args, cfg: RunConfig) -> int:
    clips = experiment.load_clips(cfg, jobs=args.jobs)
    if args.mode == "reference":
        feats = experiment.reference_features(clips, cfg, jobs=args.jobs)
    elif args.mode == "td_direct":
        feats = experiment.td_direct_features(clips, cfg, jobs=args.jobs)
    else:
        path = Path(args.extractor) if args.extractor \
            else _default_extractor_path(cfg)
        if not path.is_file():
            print(f"data error: no extractor artifact at {path}; train one "
                  f"first with: tdmfcc train-extractor -c <config>",
                  file=sys.stderr)
            return 3
        extractor = td_features.load_extractor(path)
        feats = experiment.td_reservoir_features(clips, extractor, cfg)

    out = _feature_dir(cfg, args.mode)
    out.mkdir(parents=True, exist_ok=True)
    index_lines = [f"# config_hash={cfg.config_hash()}",
                   "clip,digit,speaker,feature_file,n_frames"]
    for clip, f in zip(clips, feats):
        stem = Path(clip.source_path).stem
        fname = stem + ".eafm"
        (out / fname).write_bytes(dsp.features_to_bytes(f))
        index_lines.append(f"{stem},{clip.digit_label},{clip.speaker_label},"
                           f"{fname},{f.n_frames}")
    (out / "index.csv").write_text("\n".join(index_lines) + "\n")
    print(f"{len(feats)} feature files ({args.mode}) -> {out}")
    return 0


def _cmd_train_extractor(args, cfg: RunConfig) -> int:
    clips = experiment.load_clips(cfg, jobs=args.jobs)
    extractor, idx = experiment.train_extractor(cfg, clips)
    out = _out_dir(cfg)
    path = Path(args.out) if args.out else _default_extractor_path(cfg)
    path.parent.mkdir(parents=True, exist_ok=True)
    td_features.save_extractor(path, extractor)

    index_lines = [f"# config_hash={cfg.config_hash()}",
                   "clip,digit,speaker"]
    for i in idx:
        c = clips[i]
        index_lines.append(f"{Path(c.source_path).stem},{c.digit_label},"
                           f"{c.speaker_label}")
    (out / "extractor_train_index.csv").write_text(
        "\n".join(index_lines) + "\n")

    metrics = {
        "config_hash": cfg.config_hash(),
        "extractor_fingerprint": experiment.extractor_fingerprint(cfg),
        "n_nodes": cfg.esn1.n_nodes,
        "n_train_clips": int(len(idx)),
        "training_nrmse": [float(v) for v in extractor.training_nrmse],
    }
    (out / "extractor_metrics.json").write_text(
        json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    nrmse = ", ".join(f"{v:.3f}" for v in extractor.training_nrmse)
    print(f"extractor ({cfg.esn1.n_nodes} nodes, {len(idx)} clips) -> {path}")
    print(f"per-channel training NRMSE: {nrmse}")
    return 0


def _cmd_run_experiment(args, cfg: RunConfig) -> int:
    result = experiment.run_experiment(cfg, jobs=args.jobs)
    paths = report.write_report(cfg.output_dir, result, cfg)
    for task, stats in result.stats.items():
        s = classify.summarize(stats)
        print(f"{result.experiment} {task} ({result.protocol}): "
              f"test median {s['test']['median']:.2f}% "
              f"[{s['test']['min']:.2f}..{s['test']['max']:.2f}] "
              f"over {s['n_runs']} runs")
    print(f"report -> {paths['runs']}")
    return 0


def _cmd_report(args, cfg: RunConfig) -> int:
    runs_path = Path(args.runs) if args.runs \
        else Path(cfg.output_dir) / "runs.csv"
    if not runs_path.is_file():
        print(f"data error: no runs CSV at {runs_path}; run an experiment "
              f"first with: tdmfcc run-experiment -c <config>",
              file=sys.stderr)
        return 3
    paths = report.rerender_from_csv(runs_path, cfg.output_dir)
    print(f"summary -> {paths['summary']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
