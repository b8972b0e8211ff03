"""Utterance classification with a second reservoir.

Feature matrices (one column per frame) drive a 400-node reservoir from a
zero state per utterance; a ridge readout is trained against per-frame
one-hot targets, and an utterance is labeled by the argmax of the
time-averaged readout outputs. Includes the stratified cross-validation
harness with two protocols:

* ``paper``  — train on n_folds-1 partitions, report test accuracy on the
  ENTIRE dataset (training data included), matching the published setup;
* ``holdout`` — test only on the left-out partition (honest generalization).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import esn as esn_mod
from .dsp import FeatureMatrix
from .errors import ConfigError, StratificationError

_BATCH = 256


def default_esn2_config() -> esn_mod.EsnConfig:
    return esn_mod.EsnConfig(n_nodes=400, input_dim=14, connection_prob=0.2,
                             spectral_radius_target=0.95, leak_rate=0.3,
                             input_scale=0.5, bias_scale=0.0, seed=0)


@dataclass
class ExperimentConfig:
    experiment: str = "exp1"
    task: str = "digit"
    n_folds: int = 5
    n_seeds: int = 10
    esn2_cfg: esn_mod.EsnConfig = field(default_factory=default_esn2_config)
    washout: int = 50
    ridge_lambda: float = 1e-6
    protocol: str = "holdout"

    def __post_init__(self):
        if self.experiment not in ("exp1", "exp2"):
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        if self.task not in ("digit", "speaker"):
            raise ConfigError(f"unknown task {self.task!r}")
        if self.n_folds < 2:
            raise ConfigError("n_folds must be >= 2")
        if self.n_seeds < 1:
            raise ConfigError("n_seeds must be >= 1")
        if self.protocol not in ("paper", "holdout"):
            raise ConfigError(f"unknown protocol {self.protocol!r}")
        if self.washout < 0:
            raise ConfigError("washout must be >= 0")


@dataclass
class ClassifierModel:
    """Reservoir 2 with its trained readout and the training-time scaling."""

    esn: esn_mod.Esn
    readout: esn_mod.Readout
    class_labels: list
    feature_normalization: tuple[np.ndarray, np.ndarray]
    task: str
    washout: int = 50

    def __post_init__(self):
        if self.readout.w_out.shape[0] != len(self.class_labels):
            raise ValueError("readout must have one row per class")
        if len(set(self.class_labels)) != len(self.class_labels):
            raise ValueError("class labels must be unique")


@dataclass
class RunRecord:
    seed: int
    fold: int
    train_accuracy_pct: float
    test_accuracy_pct: float  # under the run's protocol
    confusion: Optional[np.ndarray] = None  # rows true, cols predicted (test phase)
    # both protocol variants are free to keep once the scores exist:
    test_full_pct: Optional[float] = None      # entire dataset ("paper")
    test_heldout_pct: Optional[float] = None   # left-out fold ("holdout")


@dataclass
class RunStats:
    records: list[RunRecord]
    task: str
    protocol: str
    class_labels: list


def encode_targets(label_index: int, n_classes: int, n_steps: int) -> np.ndarray:
    """Constant one-hot teacher: +1 on the true class row, 0 elsewhere."""
    if not 0 <= label_index < n_classes:
        raise ValueError(f"label index {label_index} outside 0..{n_classes - 1}")
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    out = np.zeros((n_classes, n_steps))
    out[label_index] = 1.0
    return out


def _zscore_stats(features: Sequence[FeatureMatrix]) -> tuple[np.ndarray, np.ndarray]:
    stacked = np.concatenate([fm.values for fm in features], axis=1)
    means = stacked.mean(axis=1)
    stds = stacked.std(axis=1)
    stds[stds == 0.0] = 1.0  # constant coefficients pass through centered
    return means, stds


def _utterance_washout(n_frames: int, washout: int) -> int:
    return min(washout, n_frames - 1)


def _mean_usable_states(net: esn_mod.Esn, features: Sequence[FeatureMatrix],
                        means: np.ndarray, stds: np.ndarray, washout: int,
                        gram_mask: Optional[np.ndarray] = None,
                        batch_size: int = _BATCH):
    """Lockstep evolution of many utterances.

    Returns per-utterance mean post-washout states (n_nodes x n_utts) and,
    for utterances selected by ``gram_mask``, the accumulated Gram blocks
    of the intercept-augmented usable states: sxx (D x D) and per-utterance
    augmented state sums (D x n_utts) from which class-wise sxt follows.
    """
    n = net.config.n_nodes
    n_utts = len(features)
    mean_states = np.zeros((n, n_utts))
    aug_sums = np.zeros((n + 1, n_utts))
    sxx = np.zeros((n + 1, n + 1))
    if gram_mask is None:
        gram_mask = np.zeros(n_utts, dtype=bool)
    for lo in range(0, n_utts, batch_size):
        idx = np.arange(lo, min(lo + batch_size, n_utts))
        batch = [features[i] for i in idx]
        lengths = np.array([fm.n_frames for fm in batch])
        washes = np.array([_utterance_washout(L, washout) for L in lengths])
        t_max = int(lengths.max())
        inputs = np.zeros((len(batch), net.config.input_dim, t_max))
        for i, fm in enumerate(batch):
            inputs[i, :, :lengths[i]] = (fm.values - means[:, None]) / stds[:, None]
        in_gram = gram_mask[idx]
        usable_cols = int(np.sum((lengths - washes)[in_gram]))
        buf = np.empty((n, usable_cols))
        filled = 0
        sums = np.zeros((n, len(batch)))
        counts = np.zeros(len(batch))
        for t, states in esn_mod.iterate_batch(net, inputs):
            live = (t >= washes) & (t < lengths)
            if not np.any(live):
                continue
            sums[:, live] += states[:, live]
            counts[live] += 1
            gram_cols = live & in_gram
            k = int(gram_cols.sum())
            if k:
                buf[:, filled:filled + k] = states[:, gram_cols]
                filled += k
        aug = np.vstack([buf, np.ones(usable_cols)])
        sxx += aug @ aug.T
        mean_states[:, idx] = sums / counts
        aug_sums[:n, idx] = sums
        aug_sums[n, idx] = counts
    return mean_states, aug_sums, sxx


def _scores_from_means(w_out: np.ndarray, mean_states: np.ndarray) -> np.ndarray:
    # time-averaging commutes with the linear readout, so scores come
    # straight from the mean usable state plus the intercept column
    return w_out[:, :-1] @ mean_states + w_out[:, -1:]


def train_classifier(features, cfg: ExperimentConfig, seed: int) -> ClassifierModel:
    """Fit Reservoir 2 + readout on labeled feature matrices.

    ``features`` is a sequence of (FeatureMatrix, label) pairs. Utterances
    left with a single usable frame after washout are skipped (warning
    recorded on the model). The reservoir is drawn from ``seed``.
    """
    pairs = list(features)
    if not pairs:
        raise ValueError("empty training set")
    n_coeffs = pairs[0][0].n_coeffs
    if any(fm.n_coeffs != n_coeffs for fm, _ in pairs):
        raise ValueError("all feature matrices must share n_coeffs")
    class_labels = sorted({label for _, label in pairs})
    warnings = []
    kept = []
    for fm, label in pairs:
        if fm.n_frames - _utterance_washout(fm.n_frames, cfg.washout) < 2:
            warnings.append(
                f"skipped a {fm.n_frames}-frame utterance (label {label!r}): "
                "a single post-washout frame is all transient")
        else:
            kept.append((fm, label))
    if not kept:
        raise ValueError("every utterance was shorter than the washout allows")
    present = {label for _, label in kept}
    missing = [c for c in class_labels if c not in present]
    if missing:
        raise ValueError(f"classes lost all utterances in training: {missing}")

    esn_cfg = dataclasses.replace(cfg.esn2_cfg, input_dim=n_coeffs, seed=seed)
    net = esn_mod.init_reservoir(esn_cfg)
    feats = [fm for fm, _ in kept]
    labels = [label for _, label in kept]
    means, stds = _zscore_stats(feats)
    _, aug_sums, sxx = _mean_usable_states(
        net, feats, means, stds, cfg.washout,
        gram_mask=np.ones(len(feats), dtype=bool))
    label_idx = np.array([class_labels.index(lab) for lab in labels])
    sxt = np.zeros((net.config.n_nodes + 1, len(class_labels)))
    for c in range(len(class_labels)):
        cols = label_idx == c
        if np.any(cols):
            sxt[:, c] = aug_sums[:, cols].sum(axis=1)
    w_out = esn_mod.solve_ridge(sxx, sxt, cfg.ridge_lambda)
    readout = esn_mod.Readout(w_out=w_out, ridge_lambda=cfg.ridge_lambda,
                              has_intercept=True,
                              input_normalization=(means, stds))
    model = ClassifierModel(esn=net, readout=readout, class_labels=class_labels,
                            feature_normalization=(means, stds), task=cfg.task,
                            washout=cfg.washout)
    model.warnings = warnings
    return model


def predict(model: ClassifierModel, features: FeatureMatrix):
    """Label one utterance: time-averaged readout, lowest-index tie-break."""
    means, stds = model.feature_normalization
    if features.n_coeffs != means.size:
        raise ValueError(
            f"expected {means.size} coefficients, got {features.n_coeffs}")
    z = (features.values - means[:, None]) / stds[:, None]
    washout = _utterance_washout(features.n_frames, model.washout)
    traj = esn_mod.run(model.esn, z, washout=washout)
    outputs = esn_mod.apply_readout(model.readout, traj.usable)
    scores = outputs.mean(axis=1)
    return model.class_labels[int(np.argmax(scores))], scores


# ---------------------------------------------------------------------------
# cross-validation

def stratified_folds(strata: Sequence, n_folds: int, fold_seed: int) -> np.ndarray:
    """Deterministic stratified fold assignment.

    ``strata`` holds one hashable stratum key per utterance (for the
    experiments: the (digit, speaker) pair, so both tasks share folds).
    Items of each stratum are shuffled and dealt round-robin, with the
    dealing cursor carried across strata to keep fold sizes level.
    """
    strata = list(strata)
    rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence((fold_seed, 0xF01D))))
    by_stratum: dict = {}
    for i, key in enumerate(strata):
        by_stratum.setdefault(key, []).append(i)
    assignment = np.empty(len(strata), dtype=int)
    cursor = 0
    for key in sorted(by_stratum):
        members = np.array(by_stratum[key])
        rng.shuffle(members)
        for j, idx in enumerate(members):
            assignment[idx] = (cursor + j) % n_folds
        cursor = (cursor + len(members)) % n_folds
    return assignment


def _check_stratification(labels: Sequence, folds: np.ndarray, n_folds: int,
                          task: str) -> None:
    labels = np.asarray(labels, dtype=object)
    for f in range(n_folds):
        present = set(labels[folds == f])
        missing = sorted(set(labels) - present, key=repr)
        if missing:
            raise StratificationError(
                f"fold {f} lacks {task} classes {missing}; "
                "dataset too small or too imbalanced for stratification")


def cross_validate_multi(features: Sequence[FeatureMatrix],
                         label_sets: dict[str, Sequence],
                         cfg: ExperimentConfig,
                         folds: np.ndarray,
                         seeds: Optional[Sequence[int]] = None,
                         with_confusion: bool = False) -> dict[str, RunStats]:
    """Run the cross-validation grid once, scoring several label sets.

    The reservoir states of a (seed, fold) run depend only on the features
    and the training fold's z-statistics, so all tasks (digit, speaker)
    share one state computation per run. Returns one RunStats per task.
    """
    n_utts = len(features)
    for task, labels in label_sets.items():
        if len(labels) != n_utts:
            raise ValueError(f"label set {task!r} length mismatch")
        _check_stratification(labels, folds, cfg.n_folds, task)
    if seeds is None:
        seeds = [cfg.esn2_cfg.seed + s for s in range(cfg.n_seeds)]
    n_coeffs = features[0].n_coeffs
    usable_ok = np.array(
        [fm.n_frames - _utterance_washout(fm.n_frames, cfg.washout) >= 2
         for fm in features])
    class_lists = {task: sorted(set(labels))
                   for task, labels in label_sets.items()}
    label_idx = {task: np.array([class_lists[task].index(lab) for lab in labels])
                 for task, labels in label_sets.items()}
    stats = {task: RunStats(records=[], task=task, protocol=cfg.protocol,
                            class_labels=class_lists[task])
             for task in label_sets}

    for seed in seeds:
        esn_cfg = dataclasses.replace(cfg.esn2_cfg, input_dim=n_coeffs, seed=seed)
        net = esn_mod.init_reservoir(esn_cfg)
        for fold in range(cfg.n_folds):
            in_train = (folds != fold) & usable_ok
            if not np.any(in_train):
                raise ValueError(f"fold {fold} leaves no training utterances")
            means, stds = _zscore_stats([features[i]
                                         for i in np.nonzero(in_train)[0]])
            mean_states, aug_sums, sxx = _mean_usable_states(
                net, features, means, stds, cfg.washout, gram_mask=in_train)
            for task in label_sets:
                classes = class_lists[task]
                idx = label_idx[task]
                sxt = np.zeros((net.config.n_nodes + 1, len(classes)))
                for c in range(len(classes)):
                    cols = in_train & (idx == c)
                    if np.any(cols):
                        sxt[:, c] = aug_sums[:, cols].sum(axis=1)
                w_out = esn_mod.solve_ridge(sxx, sxt, cfg.ridge_lambda)
                scores = _scores_from_means(w_out, mean_states)
                predicted = np.argmax(scores, axis=0)
                hits = predicted == idx
                train_acc = 100.0 * np.mean(hits[in_train])
                full_acc = 100.0 * np.mean(hits)
                heldout_acc = 100.0 * np.mean(hits[folds == fold])
                if cfg.protocol == "paper":
                    test_mask = np.ones(n_utts, dtype=bool)
                    test_acc = full_acc
                else:
                    test_mask = folds == fold
                    test_acc = heldout_acc
                confusion = None
                if with_confusion:
                    k = len(classes)
                    confusion = np.zeros((k, k), dtype=int)
                    np.add.at(confusion,
                              (idx[test_mask], predicted[test_mask]), 1)
                stats[task].records.append(RunRecord(
                    seed=seed, fold=fold,
                    train_accuracy_pct=float(train_acc),
                    test_accuracy_pct=float(test_acc),
                    confusion=confusion,
                    test_full_pct=float(full_acc),
                    test_heldout_pct=float(heldout_acc)))
    return stats


def cross_validate(dataset, cfg: ExperimentConfig,
                   fold_seed: Optional[int] = None,
                   with_confusion: bool = False) -> RunStats:
    """Spec'd single-task entry point over (FeatureMatrix, label) pairs.

    Folds are stratified by the task label itself; to share folds across
    tasks, call :func:`cross_validate_multi` with (digit, speaker) strata.
    """
    pairs = list(dataset)
    features = [fm for fm, _ in pairs]
    labels = [label for _, label in pairs]
    folds = stratified_folds(labels, cfg.n_folds,
                             cfg.esn2_cfg.seed if fold_seed is None else fold_seed)
    return cross_validate_multi(features, {cfg.task: labels}, cfg, folds,
                                with_confusion=with_confusion)[cfg.task]


# ---------------------------------------------------------------------------
# summaries

def five_number_summary(values: Sequence[float]) -> dict:
    """Min, quartiles (linear interpolation), max, and mean."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("no values to summarize")
    q1, med, q3 = np.quantile(arr, [0.25, 0.5, 0.75])  # linear interpolation
    return {"min": float(arr.min()), "q1": float(q1), "median": float(med),
            "q3": float(q3), "max": float(arr.max()), "mean": float(arr.mean())}


def summarize(stats: RunStats) -> dict:
    """Per-phase five-number summaries of a cross-validation grid."""
    if not stats.records:
        raise ValueError("no run records to summarize")
    return {
        "task": stats.task,
        "protocol": stats.protocol,
        "n_runs": len(stats.records),
        "train": five_number_summary(
            [r.train_accuracy_pct for r in stats.records]),
        "test": five_number_summary(
            [r.test_accuracy_pct for r in stats.records]),
    }
