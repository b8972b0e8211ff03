"""Report emission: delimited runs, JSON summaries, confusions, box plots.

Every file embeds the config hash so results stay traceable, and nothing
here writes a timestamp — rerunning an unchanged config must reproduce
the CSV/JSON payloads byte for byte. PNG figures are rendered headless
(Agg) next to the delimited output for quick visual inspection.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, classify
from .config import RunConfig
from .errors import FormatError
from .experiment import ExperimentResult

RUNS_HEADER = "experiment,task,protocol,seed,fold,phase,accuracy_pct"


def runs_csv_text(result: ExperimentResult) -> str:
    lines = [f"# config_hash={result.config_hash}", RUNS_HEADER]
    for task, stats in result.stats.items():
        for r in stats.records:
            for phase, acc in (("train", r.train_accuracy_pct),
                               ("test", r.test_accuracy_pct)):
                lines.append(f"{result.experiment},{task},{result.protocol},"
                             f"{r.seed},{r.fold},{phase},{acc:.6f}")
    return "\n".join(lines) + "\n"


def read_runs_csv(text: str):
    """Parse runs CSV back into (config_hash, {(experiment, task, protocol):
    {"train": [...], "test": [...]}}) preserving row order."""
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# config_hash="):
        raise FormatError("runs CSV must start with a config_hash comment")
    config_hash = lines[0].split("=", 1)[1]
    if len(lines) < 2 or lines[1] != RUNS_HEADER:
        raise FormatError(f"runs CSV header must be {RUNS_HEADER!r}")
    groups: dict = {}
    for ln in lines[2:]:
        if not ln:
            continue
        parts = ln.split(",")
        if len(parts) != 7:
            raise FormatError(f"malformed runs row: {ln!r}")
        experiment, task, protocol, _seed, _fold, phase, acc = parts
        if phase not in ("train", "test"):
            raise FormatError(f"unknown phase {phase!r}")
        key = (experiment, task, protocol)
        groups.setdefault(key, {"train": [], "test": []})
        groups[key][phase].append(float(acc))
    return config_hash, groups


def summary_payload(result: ExperimentResult, cfg: RunConfig) -> dict:
    fold_sizes = np.bincount(result.folds,
                             minlength=cfg.experiment.n_folds).tolist()
    tasks = {}
    for task, stats in result.stats.items():
        s = classify.summarize(stats)
        tasks[task] = {"train": s["train"], "test": s["test"],
                       "n_runs": s["n_runs"]}
    payload = {
        "schema_version": cfg.schema_version,
        "config_hash": result.config_hash,
        "experiment": result.experiment,
        "protocol": result.protocol,
        "n_clips": result.n_clips,
        "seeds": result.seeds,
        "fold_sizes": fold_sizes,
        "tasks": tasks,
        "extractor_training_nrmse":
            None if result.extractor_nrmse is None
            else [float(v) for v in result.extractor_nrmse],
        "versions": _versions(),
    }
    return payload


def _versions() -> dict:
    import scipy
    return {
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "tdmfcc": __version__,
    }


def confusion_csv_text(record: classify.RunRecord, class_labels,
                       config_hash: str) -> str:
    if record.confusion is None:
        raise ValueError("record carries no confusion matrix")
    lines = [f"# config_hash={config_hash}", "true,predicted,count"]
    for i, true_label in enumerate(class_labels):
        for j, pred_label in enumerate(class_labels):
            lines.append(f"{true_label},{pred_label},{record.confusion[i, j]}")
    return "\n".join(lines) + "\n"


def write_confusions(out_dir, result: ExperimentResult) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for task, stats in result.stats.items():
        for r in stats.records:
            p = out / f"confusion_{task}_seed{r.seed}_fold{r.fold}.csv"
            p.write_text(confusion_csv_text(r, stats.class_labels,
                                            result.config_hash))
            written.append(p)
    return written


def render_box_plots(out_dir, result: ExperimentResult) -> list[Path]:
    """One PNG per task: train/test accuracy distributions over the grid."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for task, stats in result.stats.items():
        train = [r.train_accuracy_pct for r in stats.records]
        test = [r.test_accuracy_pct for r in stats.records]
        fig, ax = plt.subplots(figsize=(4.5, 4.0))
        ax.boxplot([train, test], tick_labels=["train", "test"])
        ax.set_ylabel("accuracy (%)")
        ax.set_title(f"{result.experiment} · {task} · {result.protocol} "
                     f"({len(stats.records)} runs)")
        ax.grid(True, axis="y", alpha=0.3)
        fig.tight_layout()
        p = out / f"accuracy_{task}.png"
        fig.savefig(p)
        plt.close(fig)
        written.append(p)
    return written


def write_report(output_dir, result: ExperimentResult, cfg: RunConfig,
                 render_plots: bool = True) -> dict[str, object]:
    """Emit the full report bundle; returns the paths written."""
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    runs_path = out / "runs.csv"
    runs_path.write_text(runs_csv_text(result))
    summary_path = out / "summary.json"
    summary_path.write_text(json.dumps(summary_payload(result, cfg),
                                       indent=2, sort_keys=True) + "\n")
    confusions = write_confusions(out / "confusion", result)
    plots = render_box_plots(out / "plots", result) if render_plots else []
    return {"runs": runs_path, "summary": summary_path,
            "confusions": confusions, "plots": plots}


def rerender_from_csv(runs_path, out_dir) -> dict[str, object]:
    """The `report` command path: summary + plots from an existing runs CSV."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    text = Path(runs_path).read_text()
    config_hash, groups = read_runs_csv(text)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tasks = {}
    plots = []
    for (experiment, task, protocol), phases in groups.items():
        tasks[task] = {
            "train": classify.five_number_summary(phases["train"]),
            "test": classify.five_number_summary(phases["test"]),
            "n_runs": len(phases["test"]),
        }
        fig, ax = plt.subplots(figsize=(4.5, 4.0))
        ax.boxplot([phases["train"], phases["test"]],
                   tick_labels=["train", "test"])
        ax.set_ylabel("accuracy (%)")
        ax.set_title(f"{experiment} · {task} · {protocol} "
                     f"({len(phases['test'])} runs)")
        ax.grid(True, axis="y", alpha=0.3)
        fig.tight_layout()
        p = out / f"accuracy_{task}.png"
        fig.savefig(p)
        plt.close(fig)
        plots.append(p)
    summary = {"config_hash": config_hash, "tasks": tasks,
               "versions": _versions()}
    summary_path = out / "summary.json"
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True)
                            + "\n")
    return {"summary": summary_path, "plots": plots}
