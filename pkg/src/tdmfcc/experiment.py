"""Experiment orchestration: manifest → clips → features → CV grid.

The two experiments differ only in where the feature matrices come from —
``exp1`` runs the classical frequency-domain cepstral pipeline, ``exp2``
pools the outputs of the convolution-mimicking reservoir — and share
folds, seeds, and the classifier path, so their accuracies are directly
comparable. Everything downstream of the manifest is a pure function of
the config and ``global_seed``; rerunning a config reproduces results
byte for byte.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import audio_io, classify, dsp, td_features
from .audio_io import AudioClip, DatasetManifest
from .config import RunConfig
from .errors import EmptyDatasetError

_EXTRACTOR_SEED_TAG = 0xE57


@dataclasses.dataclass
class ExperimentResult:
    stats: dict[str, classify.RunStats]
    folds: np.ndarray
    seeds: list[int]
    experiment: str
    protocol: str
    config_hash: str
    n_clips: int
    extractor_nrmse: Optional[np.ndarray] = None


def select_entries(manifest: DatasetManifest, cfg: RunConfig):
    """Apply the configured speaker/size subset, order-stable by path."""
    entries = manifest.entries
    if cfg.dataset.speakers is not None:
        keep = set(cfg.dataset.speakers)
        entries = [e for e in entries if e.speaker in keep]
    cap = cfg.dataset.max_clips_per_class
    if cap is not None:
        seen: dict = {}
        capped = []
        for e in entries:
            k = (e.digit, e.speaker)
            if seen.get(k, 0) < cap:
                seen[k] = seen.get(k, 0) + 1
                capped.append(e)
        entries = capped
    if not entries:
        raise EmptyDatasetError("dataset subset selected no clips")
    return entries


def load_clips(cfg: RunConfig, jobs: int = 1) -> list[AudioClip]:
    """Load (and if needed resample) every selected clip, manifest order."""
    manifest = audio_io.build_manifest(cfg.dataset.root, cfg.dataset.scheme)
    entries = select_entries(manifest, cfg)
    root = Path(cfg.dataset.root)
    rate = cfg.filterbank.sample_rate_hz

    def one(entry):
        clip = audio_io.load_wav(root / entry.path, digit_label=entry.digit,
                                 speaker_label=entry.speaker)
        return audio_io.resample(clip, rate)

    return _ordered_map(one, entries, jobs)


def _ordered_map(fn, items, jobs: int):
    if jobs <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def reference_features(clips: Sequence[AudioClip], cfg: RunConfig,
                       jobs: int = 1) -> list[dsp.FeatureMatrix]:
    frame_cfg = cfg.frame_config()
    fb = cfg.mel_filterbank()
    n_coeffs = cfg.filterbank.n_coeffs
    return _ordered_map(lambda c: dsp.mfcc(c, frame_cfg, fb, n_coeffs),
                        clips, jobs)


def build_tdfb(cfg: RunConfig) -> td_features.TimeDomainFilterbank:
    if cfg.td.pairs_csv is not None:
        text = Path(cfg.td.pairs_csv).read_text()
        pairs = td_features.load_pairs_csv(text)
        return td_features.filterbank_from_pairs(
            pairs, cfg.filterbank.sample_rate_hz, cfg.td.signal_len)
    fb = cfg.mel_filterbank(n_filters=cfg.td.n_channels)
    return td_features.build_time_domain_filterbank(fb, cfg.td.signal_len)


def extractor_subset(n_clips: int, train_clips: int,
                     global_seed: int) -> np.ndarray:
    """Deterministic clip subset for Reservoir 1 training (sorted indices)."""
    rng = np.random.default_rng(np.random.SeedSequence(
        (global_seed, _EXTRACTOR_SEED_TAG)))
    idx = rng.permutation(n_clips)[:min(train_clips, n_clips)]
    return np.sort(idx)


def train_extractor(cfg: RunConfig, clips: Sequence[AudioClip]):
    """Fit Reservoir 1 on the configured subset; returns (extractor, indices)."""
    tdfb = build_tdfb(cfg)
    idx = extractor_subset(len(clips), cfg.td.train_clips, cfg.global_seed)
    subset = [clips[i] for i in idx]
    esn1_cfg = cfg.esn1.to_esn_config(input_dim=1, seed=cfg.global_seed)
    extractor = td_features.train_conv_reservoir(
        subset, tdfb, esn1_cfg, cfg.esn1.ridge_lambda,
        washout=cfg.esn1.washout, holdback_fraction=cfg.td.holdback_fraction)
    return extractor, idx


def td_reservoir_features(clips: Sequence[AudioClip],
                          extractor: td_features.ConvFeatureExtractor,
                          cfg: RunConfig) -> list[dsp.FeatureMatrix]:
    frame_cfg = cfg.frame_config()
    n_frames = [dsp.n_frames_for(len(c.samples), frame_cfg, c.sample_rate_hz)
                for c in clips]
    return td_features.extract_td_features(clips, extractor, n_frames,
                                           post_log=cfg.td.post_log)


def td_direct_features(clips: Sequence[AudioClip], cfg: RunConfig,
                       jobs: int = 1) -> list[dsp.FeatureMatrix]:
    tdfb = build_tdfb(cfg)
    frame_cfg = cfg.frame_config()

    def one(clip):
        n = dsp.n_frames_for(len(clip.samples), frame_cfg, clip.sample_rate_hz)
        return td_features.td_mfcc_direct(clip, tdfb, n,
                                          post_log=cfg.td.post_log)

    return _ordered_map(one, clips, jobs)


def experiment_config(cfg: RunConfig) -> classify.ExperimentConfig:
    exp = cfg.experiment
    n_coeffs = (cfg.filterbank.n_coeffs if exp.experiment == "exp1"
                else cfg.td.n_channels)
    esn2_cfg = cfg.esn2.to_esn_config(input_dim=n_coeffs,
                                      seed=cfg.global_seed)
    return classify.ExperimentConfig(
        experiment=exp.experiment, task=exp.tasks[0], n_folds=exp.n_folds,
        n_seeds=exp.n_seeds, esn2_cfg=esn2_cfg, washout=cfg.esn2.washout,
        ridge_lambda=cfg.esn2.ridge_lambda, protocol=exp.protocol)


def run_seeds(cfg: RunConfig) -> list[int]:
    return [cfg.global_seed + s for s in range(cfg.experiment.n_seeds)]


def run_experiment(cfg: RunConfig, jobs: int = 1,
                   clips: Optional[Sequence[AudioClip]] = None) -> ExperimentResult:
    """Execute the configured experiment end to end (in memory).

    ``clips`` may be passed to skip re-loading when a caller already holds
    the dataset; the subset/ordering must then match ``load_clips``.
    """
    if clips is None:
        clips = load_clips(cfg, jobs=jobs)
    extractor_nrmse = None
    if cfg.experiment.experiment == "exp1":
        features = reference_features(clips, cfg, jobs=jobs)
    else:
        extractor, _ = train_extractor(cfg, clips)
        extractor_nrmse = extractor.training_nrmse
        features = td_reservoir_features(clips, extractor, cfg)

    label_sets: dict[str, list] = {}
    for task in cfg.experiment.tasks:
        if task == "digit":
            label_sets[task] = [c.digit_label for c in clips]
        else:
            label_sets[task] = [c.speaker_label for c in clips]
    strata = [(c.digit_label, c.speaker_label) for c in clips]
    folds = classify.stratified_folds(strata, cfg.experiment.n_folds,
                                      fold_seed=cfg.global_seed)
    seeds = run_seeds(cfg)
    exp_cfg = experiment_config(cfg)
    stats = _grid(features, label_sets, exp_cfg, folds, seeds, jobs)
    return ExperimentResult(stats=stats, folds=folds, seeds=seeds,
                            experiment=cfg.experiment.experiment,
                            protocol=cfg.experiment.protocol,
                            config_hash=cfg.config_hash(),
                            n_clips=len(clips),
                            extractor_nrmse=extractor_nrmse)


def _grid(features, label_sets, exp_cfg, folds, seeds, jobs):
    """The (seed, fold) grid, optionally seed-parallel, merged by ordering."""
    if jobs <= 1 or len(seeds) < 2:
        return classify.cross_validate_multi(features, label_sets, exp_cfg,
                                             folds, seeds=seeds,
                                             with_confusion=True)
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        parts = list(pool.map(
            lambda s: classify.cross_validate_multi(
                features, label_sets, exp_cfg, folds, seeds=[s],
                with_confusion=True),
            seeds))
    merged = {task: classify.RunStats(records=[], task=task,
                                      protocol=exp_cfg.protocol,
                                      class_labels=parts[0][task].class_labels)
              for task in label_sets}
    for part in parts:  # parts arrive in seed order from pool.map
        for task, stats in part.items():
            merged[task].records.extend(stats.records)
    return merged


def extractor_fingerprint(cfg: RunConfig) -> str:
    """Hash of every setting that shapes the extractor artifact."""
    relevant = {
        "dataset": dataclasses.asdict(cfg.dataset),
        "frame": cfg.to_tree()["frame"],
        "filterbank": dataclasses.asdict(cfg.filterbank),
        "td": dataclasses.asdict(cfg.td),
        "esn1": dataclasses.asdict(cfg.esn1),
        "global_seed": cfg.global_seed,
    }
    canon = json.dumps(relevant, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:12]
