"""Deterministic synthetic spoken-digit corpus.

Generates small formant-trajectory utterances — a poor man's vocal tract.
Each digit has a fixed segment script (fricative bursts, vowel glides,
nasals); each speaker scales the formant frequencies (vocal tract length),
sets the pitch, and tilts the spectrum. Utterance-level jitter (duration,
pitch, formant offsets, noise) comes from a counter-based seed, so the
corpus is a pure function of (corpus_seed, digit, speaker, repetition) and
regenerating it yields byte-identical WAV files.

Intended as a stand-in where a recorded digit corpus is not available; the
naming follows the digit_speaker_index.wav convention so the rest of the
toolkit treats it like any other dataset.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio_io import AudioClip, save_wav

DEFAULT_SAMPLE_RATE_HZ = 8000

_BASE_DURATION_S = 0.95
_DURATION_JITTER = 0.10
_F0_JITTER = 0.04
_FORMANT_JITTER = 0.025
_SEGMENT_DUR_JITTER = 0.08
_NOISE_FLOOR = 0.006
_PULSE_DEPTH = 0.9


@dataclass(frozen=True)
class SpeakerProfile:
    """One synthetic voice: pitch, vocal-tract scaling, spectral tilt."""

    name: str
    f0_hz: float
    formant_scale: float
    brightness: float = 1.0


SPEAKERS: tuple[SpeakerProfile, ...] = (
    SpeakerProfile("anna", 208.0, 1.14, 1.10),
    SpeakerProfile("boris", 98.0, 0.86, 0.90),
    SpeakerProfile("chen", 152.0, 1.00, 1.00),
    SpeakerProfile("dara", 232.0, 1.08, 1.05),
    SpeakerProfile("emil", 124.0, 0.93, 0.95),
    SpeakerProfile("fumi", 178.0, 1.03, 1.12),
)

# Segment scripts per digit. ``formants`` lists (start_hz, end_hz, amp)
# glides; ``noise`` is (lo_hz, hi_hz, level) band-limited hiss. Durations
# are relative weights within the utterance.


def _seg(dur, formants=None, noise=None, level=1.0):
    return {"dur": dur, "formants": formants or [], "noise": noise,
            "level": level}


DIGIT_SCRIPTS: dict[int, list[dict]] = {
    0: [_seg(0.18, noise=(2400, 3900, 0.30)),
        _seg(0.42, [(480, 380, 1.0), (1750, 2050, 0.80), (2600, 2700, 0.30)]),
        _seg(0.40, [(520, 450, 1.0), (980, 720, 0.70), (2400, 2300, 0.25)])],
    1: [_seg(0.30, [(400, 720, 1.0), (780, 1150, 0.75), (2300, 2500, 0.20)]),
        _seg(0.45, [(680, 550, 1.0), (1150, 1000, 0.70), (2500, 2400, 0.20)]),
        _seg(0.25, [(280, 260, 0.80), (1150, 1200, 0.35), (2450, 2500, 0.15)],
             level=0.8)],
    2: [_seg(0.16, noise=(1500, 3500, 0.50)),
        _seg(0.84, [(360, 300, 1.0), (900, 680, 0.80), (2350, 2250, 0.20)])],
    3: [_seg(0.22, noise=(3000, 3950, 0.30)),
        _seg(0.30, [(420, 360, 1.0), (1350, 1650, 0.80), (1900, 2100, 0.35)]),
        _seg(0.48, [(330, 290, 1.0), (2000, 2250, 0.85), (2850, 2950, 0.30)])],
    4: [_seg(0.20, noise=(1200, 3200, 0.35)),
        _seg(0.50, [(560, 480, 1.0), (1000, 850, 0.80), (2450, 2350, 0.25)]),
        _seg(0.30, [(480, 420, 0.90), (1300, 1500, 0.60), (1800, 1900, 0.30)])],
    5: [_seg(0.18, noise=(1200, 3200, 0.35)),
        _seg(0.52, [(760, 400, 1.0), (1150, 1900, 0.85), (2500, 2600, 0.30)]),
        _seg(0.30, [(350, 300, 0.70), (1500, 1600, 0.50), (2600, 2700, 0.20)],
             noise=(1500, 3000, 0.12), level=0.8)],
    6: [_seg(0.24, noise=(3200, 3950, 0.45)),
        _seg(0.30, [(340, 330, 1.0), (2050, 2150, 0.80), (2900, 2950, 0.30)]),
        _seg(0.12, noise=(1400, 2600, 0.40)),
        _seg(0.34, noise=(3200, 3950, 0.45))],
    7: [_seg(0.18, noise=(3200, 3950, 0.45)),
        _seg(0.28, [(600, 550, 1.0), (1800, 1700, 0.80), (2500, 2450, 0.30)]),
        _seg(0.14, [(350, 320, 0.60), (1500, 1550, 0.40), (2600, 2650, 0.20)],
             noise=(1500, 3000, 0.10), level=0.75),
        _seg(0.24, [(520, 480, 0.90), (1450, 1350, 0.65), (2400, 2400, 0.25)]),
        _seg(0.16, [(280, 260, 0.75), (1200, 1250, 0.35), (2450, 2500, 0.15)],
             level=0.8)],
    8: [_seg(0.62, [(520, 350, 1.0), (1950, 2300, 0.85), (2700, 2850, 0.30)]),
        _seg(0.12, noise=(200, 800, 0.06), level=0.3),
        _seg(0.26, noise=(1500, 3500, 0.40))],
    9: [_seg(0.20, [(300, 280, 0.80), (1100, 1150, 0.40), (2400, 2450, 0.15)],
             level=0.8),
        _seg(0.52, [(750, 380, 1.0), (1150, 2050, 0.85), (2550, 2650, 0.30)]),
        _seg(0.28, [(300, 270, 0.80), (1150, 1100, 0.40), (2400, 2400, 0.15)],
             level=0.8)],
}


def _glide(n: int, start_hz: float, end_hz: float, sr: int,
           phase0: float) -> np.ndarray:
    freq = np.linspace(start_hz, end_hz, n)
    phase = phase0 + 2.0 * np.pi * np.cumsum(freq) / sr
    return np.sin(phase)


def _band_noise(n: int, lo_hz: float, hi_hz: float, sr: int,
                rng: np.random.Generator) -> np.ndarray:
    spec = np.fft.rfft(rng.normal(size=n))
    freqs = np.fft.rfftfreq(n, 1.0 / sr)
    spec[(freqs < lo_hz) | (freqs > hi_hz)] = 0.0
    x = np.fft.irfft(spec, n)
    return x / (np.std(x) + 1e-12)


def _fade(n: int, sr: int) -> np.ndarray:
    ramp = min(max(n // 8, 1), int(0.008 * sr))
    env = np.ones(n)
    up = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
    env[:ramp] = up
    env[n - ramp:] = up[::-1]
    return env


def synth_utterance(digit: int, speaker: SpeakerProfile, rep: int,
                    corpus_seed: int = 0,
                    sample_rate_hz: int = DEFAULT_SAMPLE_RATE_HZ) -> AudioClip:
    """Render one utterance; a pure function of its identifying tuple."""
    if digit not in DIGIT_SCRIPTS:
        raise ValueError(f"no script for digit {digit}")
    sr = sample_rate_hz
    rng = np.random.default_rng(np.random.SeedSequence(
        (corpus_seed, digit, _speaker_seed_token(speaker.name), rep)))

    total = int(round(_BASE_DURATION_S * sr
                      * rng.uniform(1.0 - _DURATION_JITTER,
                                    1.0 + _DURATION_JITTER)))
    f0 = speaker.f0_hz * (1.0 + np.clip(rng.normal(0.0, _F0_JITTER),
                                        -0.1, 0.1))
    script = DIGIT_SCRIPTS[digit]
    weights = np.array([s["dur"] for s in script])
    weights = weights * (1.0 + rng.normal(0.0, _SEGMENT_DUR_JITTER,
                                          size=len(weights)))
    weights = np.clip(weights, 0.04, None)
    bounds = np.round(np.concatenate([[0.0], np.cumsum(weights)])
                      / weights.sum() * total).astype(int)

    out = np.zeros(total)
    nyquist_cap = 0.98 * sr / 2.0
    for i, seg in enumerate(script):
        a, b = bounds[i], bounds[i + 1]
        n = b - a
        if n < 8:
            continue
        frac_a, frac_b = a / total, b / total
        wave = np.zeros(n)
        if seg["formants"]:
            for k, (fs, fe, amp) in enumerate(seg["formants"]):
                jitter = 1.0 + rng.normal(0.0, _FORMANT_JITTER)
                fs_j = min(fs * speaker.formant_scale * jitter, nyquist_cap)
                fe_j = min(fe * speaker.formant_scale * jitter, nyquist_cap)
                tilt = speaker.brightness ** k
                wave += amp * tilt * _glide(n, fs_j, fe_j, sr,
                                            rng.uniform(0, 2 * np.pi))
            # pitch declines over the utterance; its pulse train modulates
            # the formant stack and adds the low buzz that marks the voice
            decl = np.linspace(1.05 - 0.15 * frac_a, 1.05 - 0.15 * frac_b, n)
            f0_track = f0 * decl
            phase = 2.0 * np.pi * np.cumsum(f0_track) / sr
            pulse = (1.0 + _PULSE_DEPTH * np.cos(phase)) / (1.0 + _PULSE_DEPTH)
            wave = wave * pulse + 0.55 * np.sin(phase) \
                + 0.25 * np.sin(2.0 * phase)
        if seg["noise"] is not None:
            lo, hi, level = seg["noise"]
            level = level * rng.uniform(0.8, 1.25)
            wave = wave + level * _band_noise(n, lo, hi, sr, rng) \
                * (3.0 if not seg["formants"] else 1.0)
        out[a:b] += seg["level"] * _fade(n, sr) * wave

    out += rng.normal(0.0, _NOISE_FLOOR, size=total)
    peak = np.max(np.abs(out))
    out *= rng.uniform(0.45, 0.62) / peak
    return AudioClip(samples=out, sample_rate_hz=sr, digit_label=digit,
                     speaker_label=speaker.name,
                     source_path=f"{digit}_{speaker.name}_{rep}.wav")


def _speaker_seed_token(name: str) -> int:
    # hash() is salted per process; fold the name bytes deterministically
    return int.from_bytes(name.encode("utf-8")[:8].ljust(8, b"\0"), "little")


def synth_corpus(dest_dir, n_reps: int = 50,
                 speakers: tuple[SpeakerProfile, ...] = SPEAKERS,
                 digits=range(10), corpus_seed: int = 0,
                 sample_rate_hz: int = DEFAULT_SAMPLE_RATE_HZ) -> list[str]:
    """Write digit_speaker_index.wav files; returns the relative paths."""
    dest = Path(dest_dir)
    dest.mkdir(parents=True, exist_ok=True)
    written = []
    for digit in digits:
        for speaker in speakers:
            for rep in range(n_reps):
                clip = synth_utterance(digit, speaker, rep,
                                       corpus_seed=corpus_seed,
                                       sample_rate_hz=sample_rate_hz)
                name = f"{digit}_{speaker.name}_{rep}.wav"
                save_wav(dest / name, clip.samples, clip.sample_rate_hz)
                written.append(name)
    return written
