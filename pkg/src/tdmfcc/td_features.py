"""Time-domain MFCC extraction.

Each mel filter is recast as a short time-domain signal (a superposition
of sines, one per FFT bin under the filter's triangle), the audio is
convolved with every channel signal, the convolution tail is trimmed, and
each stream is reduced to one value per analysis frame by abs-max pooling.
The convolution itself can be done directly or mimicked by a small
reservoir ("Reservoir 1") trained with a ridge readout to emulate it,
turning feature extraction into a pure end-to-end dynamical system.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import esn as esn_mod
from .dsp import FeatureMatrix, MelFilterbank
from .errors import (ConstantTargetError, DegenerateFilterError,
                     EmptyDatasetError, FormatError)

_TDFB_MAGIC = b"TDFB"


@dataclass(frozen=True)
class FilterPair:
    """One sinusoid of a channel signal: frequency and amplitude."""

    freq_hz: float
    amplitude: float

    def __post_init__(self):
        if self.freq_hz <= 0 or self.amplitude <= 0:
            raise ValueError("filter pairs need positive frequency and amplitude")


@dataclass
class FilterChannel:
    pairs: list[FilterPair]
    signal: np.ndarray


@dataclass
class TimeDomainFilterbank:
    """Per-channel sinusoid recipes plus the synthesized signals."""

    channels: list[FilterChannel]
    sample_rate_hz: int
    signal_len: int

    @property
    def n_channels(self) -> int:
        return len(self.channels)


def derive_filter_pairs(fb: MelFilterbank, channel: int) -> list[FilterPair]:
    """Recast one triangular filter as (freq, amplitude) sinusoid pairs.

    One pair per FFT bin carrying nonzero triangle weight; amplitudes are
    the weights normalized by the channel's weight sum, so louder (wider)
    channels don't dominate the synthesized signals.
    """
    if not 0 <= channel < fb.n_filters:
        raise ValueError(f"channel {channel} out of range 0..{fb.n_filters - 1}")
    row = fb.weights[channel]
    bins = np.nonzero(row)[0]
    if bins.size < 2:
        raise DegenerateFilterError(
            channel, f"channel {channel} has {bins.size} nonzero bins; need >= 2")
    bin_width = fb.sample_rate_hz / fb.n_fft
    total = row[bins].sum()
    return [FilterPair(freq_hz=float(b * bin_width), amplitude=float(row[b] / total))
            for b in bins]


def synth_filter_signal(pairs: Sequence[FilterPair], n_samples: int,
                        sample_rate_hz: int) -> np.ndarray:
    """Superimpose zero-phase sines: s[n] = sum_k A_k sin(2 pi f_k n / sr)."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    t = np.arange(n_samples) / sample_rate_hz
    signal = np.zeros(n_samples)
    for pair in pairs:
        signal += pair.amplitude * np.sin(2.0 * np.pi * pair.freq_hz * t)
    return signal


def build_time_domain_filterbank(fb: MelFilterbank,
                                 signal_len: int = 200) -> TimeDomainFilterbank:
    """Synthesize every channel of a mel filterbank into the time domain."""
    channels = []
    for c in range(fb.n_filters):
        pairs = derive_filter_pairs(fb, c)
        channels.append(FilterChannel(
            pairs=pairs,
            signal=synth_filter_signal(pairs, signal_len, fb.sample_rate_hz)))
    return TimeDomainFilterbank(channels=channels,
                                sample_rate_hz=fb.sample_rate_hz,
                                signal_len=signal_len)


def filterbank_from_pairs(pairs_by_channel: Sequence[Sequence[FilterPair]],
                          sample_rate_hz: int,
                          signal_len: int = 200) -> TimeDomainFilterbank:
    """Build a filterbank from explicit pairs (e.g. a pairs-override file)."""
    channels = [FilterChannel(pairs=list(pairs),
                              signal=synth_filter_signal(pairs, signal_len,
                                                         sample_rate_hz))
                for pairs in pairs_by_channel]
    if not channels:
        raise ValueError("need at least one channel")
    return TimeDomainFilterbank(channels=channels, sample_rate_hz=sample_rate_hz,
                                signal_len=signal_len)


def load_pairs_csv(text: str) -> list[list[FilterPair]]:
    """Parse a `channel,freq_hz,amplitude` override CSV into per-channel pairs."""
    by_channel: dict[int, list[FilterPair]] = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#") or line.lower().startswith("channel"):
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise FormatError(f"pairs CSV line {line_no}: expected 3 fields")
        ch, freq, amp = int(parts[0]), float(parts[1]), float(parts[2])
        by_channel.setdefault(ch, []).append(FilterPair(freq_hz=freq, amplitude=amp))
    if not by_channel:
        raise FormatError("pairs CSV holds no channels")
    n = max(by_channel) + 1
    missing = [c for c in range(n) if c not in by_channel]
    if missing:
        raise FormatError(f"pairs CSV missing channels {missing}")
    return [sorted(by_channel[c], key=lambda p: p.freq_hz) for c in range(n)]


# ---------------------------------------------------------------------------
# the direct path

def convolve(audio: np.ndarray, filter_signal: np.ndarray) -> np.ndarray:
    """Full linear convolution; the ground truth Reservoir 1 must mimic."""
    audio = np.asarray(audio, dtype=np.float64)
    filter_signal = np.asarray(filter_signal, dtype=np.float64)
    if audio.size == 0 or filter_signal.size == 0:
        raise ValueError("convolve needs non-empty inputs")
    return np.convolve(audio, filter_signal, mode="full")


def trim(conv: np.ndarray, audio_len: int) -> np.ndarray:
    """Keep the first audio_len samples; the tail carries little information."""
    conv = np.asarray(conv)
    if conv.size < audio_len:
        raise ValueError(f"convolution length {conv.size} < audio_len {audio_len}")
    return conv[:audio_len]


def pool_abs_max(signal: np.ndarray, n_windows: int) -> np.ndarray:
    """One value per window: the largest-|.| sample, sign preserved.

    Windows are contiguous spans of floor(L/n) samples; the remainder is
    spread one extra sample over the first L mod n spans.
    """
    signal = np.asarray(signal, dtype=np.float64)
    length = signal.size
    if n_windows < 1 or n_windows > length:
        raise ValueError(f"n_windows must lie in 1..{length}, got {n_windows}")
    base, extra = divmod(length, n_windows)
    out = np.empty(n_windows)
    start = 0
    for i in range(n_windows):
        span = base + (1 if i < extra else 0)
        chunk = signal[start:start + span]
        out[i] = chunk[np.argmax(np.abs(chunk))]
        start += span
    return out


def _pool_streams(streams: np.ndarray, n_frames: int, times: np.ndarray,
                  post_log: bool) -> FeatureMatrix:
    values = np.stack([pool_abs_max(row, n_frames) for row in streams])
    if post_log:
        values = np.log10(np.abs(values) + 1e-10)
    return FeatureMatrix(values=values, coeff_kind="td_mfcc", frame_times_s=times)


def _frame_centers(n_frames: int, clip_len: int, sample_rate_hz: int) -> np.ndarray:
    base, extra = divmod(clip_len, n_frames)
    starts = np.arange(n_frames) * base + np.minimum(np.arange(n_frames), extra)
    spans = base + (np.arange(n_frames) < extra)
    return (starts + spans / 2.0) / sample_rate_hz


def td_mfcc_direct(clip, tdfb: TimeDomainFilterbank, n_frames: int,
                   post_log: bool = False) -> FeatureMatrix:
    """Reference time-domain features: convolve, trim, pool each channel."""
    if clip.sample_rate_hz != tdfb.sample_rate_hz:
        raise ValueError(
            f"clip at {clip.sample_rate_hz} Hz, filterbank at {tdfb.sample_rate_hz} Hz")
    streams = np.stack([trim(convolve(clip.samples, ch.signal), len(clip.samples))
                        for ch in tdfb.channels])
    times = _frame_centers(n_frames, len(clip.samples), clip.sample_rate_hz)
    return _pool_streams(streams, n_frames, times, post_log)


# ---------------------------------------------------------------------------
# the reservoir path

@dataclass
class ConvFeatureExtractor:
    """Reservoir 1 plus its convolution-mimicking readout."""

    esn: esn_mod.Esn
    readout: esn_mod.Readout
    tdfb: TimeDomainFilterbank
    training_nrmse: np.ndarray
    washout: int = 50

    def __post_init__(self):
        if self.readout.w_out.shape[0] != self.tdfb.n_channels:
            raise ValueError("readout must emit one row per filterbank channel")

    @property
    def sample_rate_hz(self) -> int:
        return self.tdfb.sample_rate_hz

    def predict_streams(self, clip) -> np.ndarray:
        """Per-channel predicted convolution streams, n_channels x len(clip)."""
        traj = esn_mod.run(self.esn, clip.samples[None, :])
        return esn_mod.apply_readout(self.readout, traj.states)


class OracleConvExtractor:
    """Stand-in whose "prediction" is the true convolution.

    Substituting it for a trained extractor must make the reservoir path
    agree with the direct path exactly; used to check pipeline plumbing
    separately from mimicry quality.
    """

    def __init__(self, tdfb: TimeDomainFilterbank):
        self.tdfb = tdfb

    @property
    def sample_rate_hz(self) -> int:
        return self.tdfb.sample_rate_hz

    def predict_streams(self, clip) -> np.ndarray:
        return np.stack([trim(convolve(clip.samples, ch.signal), len(clip.samples))
                         for ch in self.tdfb.channels])


def td_mfcc_reservoir(clip, extractor, n_frames: int,
                      post_log: bool = False) -> FeatureMatrix:
    """Reservoir-path features: predict the convolution streams, then pool."""
    if clip.sample_rate_hz != extractor.sample_rate_hz:
        raise ValueError(
            f"clip at {clip.sample_rate_hz} Hz, extractor at {extractor.sample_rate_hz} Hz")
    streams = extractor.predict_streams(clip)
    times = _frame_centers(n_frames, len(clip.samples), clip.sample_rate_hz)
    return _pool_streams(streams, n_frames, times, post_log)


def _conv_targets(clip, tdfb: TimeDomainFilterbank) -> np.ndarray:
    return np.stack([trim(convolve(clip.samples, ch.signal), len(clip.samples))
                     for ch in tdfb.channels])


def train_conv_reservoir(clips, tdfb: TimeDomainFilterbank,
                         esn_cfg: esn_mod.EsnConfig, ridge_lambda: float,
                         washout: int = 50, holdback_fraction: float = 0.2,
                         per_channel: bool = False,
                         batch_size: int = 64) -> ConvFeatureExtractor:
    """Teach Reservoir 1 to convolve.

    The reservoir is driven by each clip's raw samples; the per-timestep
    targets are the trimmed true convolutions, one row per channel. After
    the per-clip washout, the last ``holdback_fraction`` of each clip's
    usable timesteps is excluded from the ridge fit and used to score
    ``training_nrmse`` per channel. Clips shorter than the washout are
    skipped with a warning.
    """
    if esn_cfg.input_dim != 1:
        raise ValueError("Reservoir 1 consumes the raw sample stream: input_dim must be 1")
    usable, warnings = [], []
    for clip in clips:
        if len(clip.samples) <= washout:
            warnings.append(
                f"skipped clip {clip.source_path or '<memory>'}: "
                f"{len(clip.samples)} samples <= washout {washout}")
        else:
            usable.append(clip)
    if not usable:
        raise EmptyDatasetError(f"no clip is longer than the washout ({washout})")

    net = esn_mod.init_reservoir(esn_cfg)
    n_ch = tdfb.n_channels
    dim = esn_cfg.n_nodes + 1  # constant-1 intercept row
    sxx = np.zeros((dim, dim))
    sxt = np.zeros((dim, n_ch))
    held_states, held_targets = [], []

    for lo in range(0, len(usable), batch_size):
        batch = usable[lo:lo + batch_size]
        lengths = np.array([len(c.samples) for c in batch])
        t_max = int(lengths.max())
        inputs = np.zeros((len(batch), 1, t_max))
        targets = np.zeros((len(batch), n_ch, t_max))
        for i, clip in enumerate(batch):
            inputs[i, 0, :lengths[i]] = clip.samples
            targets[i, :, :lengths[i]] = _conv_targets(clip, tdfb)
        fit_end = washout + np.ceil(
            (1.0 - holdback_fraction) * (lengths - washout)).astype(int)
        batch_held_s = [[] for _ in batch]
        batch_held_t = [[] for _ in batch]
        for t, states in esn_mod.iterate_batch(net, inputs):
            if t < washout:
                continue
            live = t < lengths
            fit = live & (t < fit_end)
            if np.any(fit):
                x = np.vstack([states[:, fit], np.ones((1, int(fit.sum())))])
                sxx += x @ x.T
                sxt += x @ targets[fit, :, t]
            held = live & ~fit
            for i in np.nonzero(held)[0]:
                batch_held_s[i].append(states[:, i].copy())
                batch_held_t[i].append(targets[i, :, t])
        for s, tg in zip(batch_held_s, batch_held_t):
            if s:
                held_states.append(np.array(s).T)
                held_targets.append(np.array(tg).T)

    if per_channel:
        rows = [esn_mod.solve_ridge(sxx, sxt[:, c:c + 1], ridge_lambda)
                for c in range(n_ch)]
        w_out = np.vstack(rows)
    else:
        w_out = esn_mod.solve_ridge(sxx, sxt, ridge_lambda)
    readout = esn_mod.Readout(w_out=w_out, ridge_lambda=ridge_lambda,
                              has_intercept=True)

    all_states = np.concatenate(held_states, axis=1)
    all_targets = np.concatenate(held_targets, axis=1)
    preds = esn_mod.apply_readout(readout, all_states)
    training_nrmse = np.array([esn_mod.nrmse(preds[c], all_targets[c])
                               for c in range(n_ch)])
    extractor = ConvFeatureExtractor(esn=net, readout=readout, tdfb=tdfb,
                                     training_nrmse=training_nrmse,
                                     washout=washout)
    extractor.warnings = warnings
    return extractor


def extract_td_features(clips, extractor, n_frames_per_clip: Sequence[int],
                        post_log: bool = False,
                        batch_size: int = 128) -> list[FeatureMatrix]:
    """Batched td_mfcc_reservoir over many clips (lockstep evolution)."""
    out: list[Optional[FeatureMatrix]] = [None] * len(clips)
    order = np.arange(len(clips))
    for lo in range(0, len(clips), batch_size):
        idx = order[lo:lo + batch_size]
        batch = [clips[i] for i in idx]
        lengths = np.array([len(c.samples) for c in batch])
        t_max = int(lengths.max())
        inputs = np.zeros((len(batch), 1, t_max))
        for i, clip in enumerate(batch):
            inputs[i, 0, :lengths[i]] = clip.samples
        n_ch = extractor.tdfb.n_channels
        preds = np.empty((len(batch), n_ch, t_max))
        w = extractor.readout.w_out
        for t, states in esn_mod.iterate_batch(extractor.esn, inputs):
            preds[:, :, t] = (w[:, :-1] @ states + w[:, -1:]).T
        for i, clip in enumerate(batch):
            n_frames = n_frames_per_clip[idx[i]]
            times = _frame_centers(n_frames, int(lengths[i]), clip.sample_rate_hz)
            out[idx[i]] = _pool_streams(preds[i, :, :lengths[i]], n_frames,
                                        times, post_log)
    return out


# ---------------------------------------------------------------------------
# persistence

def save_extractor(path, extractor: ConvFeatureExtractor) -> None:
    """EARC model bytes followed by a TDFB block (pairs; signals resynthesized)."""
    parts = [esn_mod.model_to_bytes(extractor.esn, extractor.readout),
             struct.pack("<4sIIH", _TDFB_MAGIC, extractor.tdfb.sample_rate_hz,
                         extractor.tdfb.signal_len, extractor.tdfb.n_channels),
             struct.pack("<H", extractor.washout)]
    for ch in extractor.tdfb.channels:
        parts.append(struct.pack("<I", len(ch.pairs)))
        for p in ch.pairs:
            parts.append(struct.pack("<dd", p.freq_hz, p.amplitude))
    parts.append(np.ascontiguousarray(extractor.training_nrmse,
                                      dtype="<f8").tobytes())
    with open(str(path), "wb") as fh:
        fh.write(b"".join(parts))


def load_extractor(path) -> ConvFeatureExtractor:
    with open(str(path), "rb") as fh:
        blob = fh.read()
    net, readout, offset = esn_mod.model_from_bytes(blob)
    if readout is None:
        raise FormatError("extractor file lacks a readout block")
    magic, sr, signal_len, n_ch = struct.unpack_from("<4sIIH", blob, offset)
    if magic != _TDFB_MAGIC:
        raise FormatError("extractor file lacks a TDFB block")
    offset += 14
    (washout,) = struct.unpack_from("<H", blob, offset)
    offset += 2
    pairs_by_channel = []
    for _ in range(n_ch):
        (n_pairs,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        pairs = []
        for _ in range(n_pairs):
            freq, amp = struct.unpack_from("<dd", blob, offset)
            offset += 16
            pairs.append(FilterPair(freq_hz=freq, amplitude=amp))
        pairs_by_channel.append(pairs)
    tdfb = filterbank_from_pairs(pairs_by_channel, sr, signal_len)
    training_nrmse = np.frombuffer(blob, dtype="<f8", count=n_ch,
                                   offset=offset).copy()
    return ConvFeatureExtractor(esn=net, readout=readout, tdfb=tdfb,
                                training_nrmse=training_nrmse, washout=washout)
