"""Classical frequency-domain MFCC pipeline, from first principles.

Stages: framing, windowing, radix-2 FFT, power spectrum, triangular mel
filterbank, log + DCT cepstra, and delta coefficients. The FFT is a
hand-rolled iterative radix-2 transform (vectorized over leading axes)
rather than a wrapper, so it can be checked against the naive O(N^2)
definition in tests.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, DegenerateFilterError, FormatError

#: energies are clamped here before log10 so silence stays finite
LOG_FLOOR = 1e-10

_FEATURE_MAGIC = b"EAFM"
_KIND_CODES = {"mfcc": 0, "td_mfcc": 1, "delta": 2}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}


# ---------------------------------------------------------------------------
# mel scale

def hz_to_mel(f_hz: float) -> float:
    """Perceptual warp: mel = 2595 * log10(1 + f/700)."""
    f = np.asarray(f_hz, dtype=np.float64)
    if np.any(f < 0):
        raise ValueError("frequency must be non-negative")
    out = 2595.0 * np.log10(1.0 + f / 700.0)
    return float(out) if out.ndim == 0 else out


def mel_to_hz(mel: float) -> float:
    """Exact inverse of :func:`hz_to_mel`."""
    m = np.asarray(mel, dtype=np.float64)
    if np.any(m < 0):
        raise ValueError("mel value must be non-negative")
    out = 700.0 * (np.power(10.0, m / 2595.0) - 1.0)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# framing and windowing

@dataclass
class FrameConfig:
    """Short-time analysis geometry.

    25 ms frames with a 10 ms hop; frames are zero-padded to ``n_fft``
    before the transform. ``pre_emphasis`` of 0 disables that stage.
    """

    frame_len_ms: float = 25.0
    hop_ms: float = 10.0
    window_kind: str = "hamming"
    n_fft: int = 1024
    pre_emphasis: float = 0.97

    def __post_init__(self):
        if not 0 < self.hop_ms <= self.frame_len_ms:
            raise ConfigError("need 0 < hop_ms <= frame_len_ms")
        if self.n_fft < 2 or self.n_fft & (self.n_fft - 1):
            raise ConfigError(f"n_fft must be a power of two, got {self.n_fft}")
        if not 0.0 <= self.pre_emphasis < 1.0:
            raise ConfigError("pre_emphasis must lie in [0, 1)")
        if self.window_kind not in ("hamming", "hanning"):
            raise ConfigError(f"unknown window: {self.window_kind!r}")

    def frame_len(self, sample_rate_hz: int) -> int:
        return int(round(self.frame_len_ms * sample_rate_hz / 1000.0))

    def hop(self, sample_rate_hz: int) -> int:
        return int(round(self.hop_ms * sample_rate_hz / 1000.0))


def n_frames_for(n_samples: int, cfg: FrameConfig, sample_rate_hz: int) -> int:
    """Frame count contract: floor((len - frame_len) / hop) + 1, minimum 1."""
    frame_len = cfg.frame_len(sample_rate_hz)
    hop = cfg.hop(sample_rate_hz)
    return max(1, (n_samples - frame_len) // hop + 1)


def frame_signal(samples: np.ndarray, cfg: FrameConfig, sample_rate_hz: int) -> np.ndarray:
    """Slice a signal into overlapping frames, one per row.

    Frame k starts at k*hop. A clip shorter than one frame yields a single
    zero-padded frame.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 1 or samples.size == 0:
        raise ValueError("samples must be a non-empty 1-D vector")
    frame_len = cfg.frame_len(sample_rate_hz)
    hop = cfg.hop(sample_rate_hz)
    if cfg.n_fft < frame_len:
        raise ConfigError(f"n_fft={cfg.n_fft} < frame length {frame_len}")
    count = n_frames_for(samples.size, cfg, sample_rate_hz)
    needed = (count - 1) * hop + frame_len
    padded = np.concatenate([samples, np.zeros(max(0, needed - samples.size))])
    idx = np.arange(count)[:, None] * hop + np.arange(frame_len)
    return padded[idx]


def window_coefficients(kind: str, length: int) -> np.ndarray:
    n = np.arange(length, dtype=np.float64)
    if kind == "hamming":
        return 0.54 - 0.46 * np.cos(2.0 * np.pi * n / (length - 1))
    if kind == "hanning":
        return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / (length - 1))
    raise ConfigError(f"unknown window: {kind!r}")


def apply_window(frame: np.ndarray, kind: str) -> np.ndarray:
    """Taper a frame (or a batch of frames along the last axis)."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape[-1] < 2:
        raise ValueError("frame must have at least 2 samples")
    return frame * window_coefficients(kind, frame.shape[-1])


def pre_emphasize(samples: np.ndarray, coeff: float) -> np.ndarray:
    """First-difference high-pass: y[n] = x[n] - coeff * x[n-1]."""
    samples = np.asarray(samples, dtype=np.float64)
    if coeff == 0.0:
        return samples
    out = samples.copy()
    out[1:] -= coeff * samples[:-1]
    return out


# ---------------------------------------------------------------------------
# transforms

def _bit_reverse_permutation(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for _ in range(bits):
        rev = (rev << 1) | (idx & 1)
        idx >>= 1
    return rev


def fft(x: np.ndarray, n_fft: Optional[int] = None) -> np.ndarray:
    """Iterative radix-2 decimation-in-time FFT over the last axis.

    Input shorter than ``n_fft`` is zero-padded. Works on batches: any
    leading axes are transformed independently.
    """
    x = np.asarray(x)
    n = x.shape[-1] if n_fft is None else int(n_fft)
    if n < 1 or n & (n - 1):
        raise ValueError(f"FFT size must be a power of two, got {n}")
    if x.shape[-1] > n:
        raise ValueError(f"input length {x.shape[-1]} exceeds n_fft={n}")
    buf = np.zeros(x.shape[:-1] + (n,), dtype=np.complex128)
    buf[..., :x.shape[-1]] = x
    if n == 1:
        return buf
    buf = buf[..., _bit_reverse_permutation(n)]
    half = 1
    while half < n:
        twiddle = np.exp(-2j * np.pi * np.arange(half) / (2 * half))
        pairs = buf.reshape(x.shape[:-1] + (n // (2 * half), 2, half))
        top = pairs[..., 0, :]
        bot = pairs[..., 1, :] * twiddle
        merged = np.empty(x.shape[:-1] + (n // (2 * half), 2 * half), dtype=np.complex128)
        merged[..., :half] = top + bot
        merged[..., half:] = top - bot
        buf = merged.reshape(x.shape[:-1] + (n,))
        half *= 2
    return buf


def ifft(spectrum: np.ndarray) -> np.ndarray:
    """Inverse of :func:`fft` via the conjugation identity."""
    spectrum = np.asarray(spectrum, dtype=np.complex128)
    n = spectrum.shape[-1]
    return np.conj(fft(np.conj(spectrum))) / n


def dft(frame: np.ndarray, n_fft: int) -> np.ndarray:
    """Full complex spectrum of one zero-padded frame."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 1:
        raise ValueError("dft expects a single frame; use fft() for batches")
    return fft(frame, n_fft)


def power_spectrum(spectrum: np.ndarray) -> np.ndarray:
    """|X(k)|^2 over the non-negative-frequency half, k = 0 .. n/2."""
    spectrum = np.asarray(spectrum)
    n = spectrum.shape[-1]
    half = spectrum[..., :n // 2 + 1]
    return (half.real ** 2 + half.imag ** 2)


# ---------------------------------------------------------------------------
# mel filterbank

@dataclass
class MelFilterbank:
    """Triangular filters, centers uniformly spaced on the mel axis.

    ``edge_bins`` keeps the snapped FFT-bin grid (n_filters + 2 points);
    filter i rises over [edge i, edge i+1] and falls over
    [edge i+1, edge i+2], peaking at exactly 1.
    """

    weights: np.ndarray
    center_freqs_hz: np.ndarray
    edge_bins: np.ndarray
    n_filters: int
    fmin_hz: float
    fmax_hz: float
    sample_rate_hz: int
    n_fft: int


def make_mel_filterbank(n_filters: int = 25, n_fft: int = 1024,
                        fmin_hz: float = 0.0, fmax_hz: float = 4000.0,
                        sample_rate_hz: int = 8000) -> MelFilterbank:
    """Build the triangular mel filterbank on the FFT bin grid."""
    if n_filters < 1:
        raise ConfigError("need at least one filter")
    if not 0 <= fmin_hz < fmax_hz <= sample_rate_hz / 2:
        raise ConfigError(
            f"need 0 <= fmin < fmax <= Nyquist, got [{fmin_hz}, {fmax_hz}] at {sample_rate_hz} Hz")
    mel_edges = np.linspace(hz_to_mel(fmin_hz), hz_to_mel(fmax_hz), n_filters + 2)
    hz_edges = mel_to_hz(mel_edges)
    bin_width = sample_rate_hz / n_fft
    edge_bins = np.round(hz_edges / bin_width).astype(int)
    n_bins = n_fft // 2 + 1
    weights = np.zeros((n_filters, n_bins))
    for i in range(n_filters):
        lo, center, hi = edge_bins[i], edge_bins[i + 1], edge_bins[i + 2]
        if center <= lo or hi <= center:
            raise DegenerateFilterError(
                i, f"filter {i} collapsed: edges snapped to bins ({lo}, {center}, {hi})")
        rising = np.arange(lo + 1, center + 1)
        weights[i, rising] = (rising - lo) / (center - lo)
        falling = np.arange(center, hi)
        weights[i, falling] = (hi - falling) / (hi - center)
    return MelFilterbank(
        weights=weights,
        center_freqs_hz=edge_bins[1:-1].astype(np.float64) * bin_width,
        edge_bins=edge_bins,
        n_filters=n_filters,
        fmin_hz=fmin_hz,
        fmax_hz=fmax_hz,
        sample_rate_hz=sample_rate_hz,
        n_fft=n_fft,
    )


def apply_filterbank(power: np.ndarray, fb: MelFilterbank) -> np.ndarray:
    """Mel-band energies: s(m) = sum_k weights[m, k] * P(k).

    Accepts one power vector or a batch with frames along the first axis.
    """
    power = np.asarray(power, dtype=np.float64)
    if power.shape[-1] != fb.weights.shape[1]:
        raise ValueError(
            f"power length {power.shape[-1]} != n_fft/2+1 = {fb.weights.shape[1]}")
    return power @ fb.weights.T


# ---------------------------------------------------------------------------
# cepstra

def _dct_kernel(n_filters: int, n_coeffs: int, include_zeroth: bool) -> np.ndarray:
    start = 0 if include_zeroth else 1
    orders = np.arange(start, start + n_coeffs)
    m = np.arange(n_filters) + 0.5
    return np.cos(np.pi * np.outer(orders, m) / n_filters)


def dct_log(mel_energies: np.ndarray, n_coeffs: int,
            floor_value: float = LOG_FLOOR, include_zeroth: bool = False) -> np.ndarray:
    """Cepstra: c(n) = sum_m log10(s(m)) * cos(pi*n*(m+0.5)/M).

    The zeroth coefficient (average log-energy) is excluded by default, so
    the first returned value is c(1). Energies below ``floor_value`` are
    clamped before the log. Batches are accepted with bands on the last axis.
    """
    mel_energies = np.asarray(mel_energies, dtype=np.float64)
    n_filters = mel_energies.shape[-1]
    if n_coeffs > n_filters:
        raise ValueError(f"n_coeffs={n_coeffs} exceeds filter count {n_filters}")
    logs = np.log10(np.maximum(mel_energies, floor_value))
    kernel = _dct_kernel(n_filters, n_coeffs, include_zeroth)
    return logs @ kernel.T


# ---------------------------------------------------------------------------
# feature container

@dataclass
class FeatureMatrix:
    """Coefficients-by-frames array, the common currency of the toolkit."""

    values: np.ndarray  # (n_coeffs, n_frames)
    coeff_kind: str
    frame_times_s: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.frame_times_s = np.asarray(self.frame_times_s, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[1] < 1:
            raise ValueError("values must be a 2-D matrix with at least one frame")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("feature values must be finite")
        if self.coeff_kind not in _KIND_CODES:
            raise ValueError(f"unknown coeff_kind {self.coeff_kind!r}")
        if self.frame_times_s.shape != (self.values.shape[1],):
            raise ValueError("frame_times_s length must equal n_frames")

    @property
    def n_coeffs(self) -> int:
        return self.values.shape[0]

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


def features_to_csv(features: FeatureMatrix) -> str:
    """CSV form: comment header, then one row per coefficient, 9 significant digits."""
    lines = [f"# kind={features.coeff_kind}",
             "# frame_times_s=" + ",".join(f"{t:.9g}" for t in features.frame_times_s)]
    for row in features.values:
        lines.append(",".join(f"{v:.9g}" for v in row))
    return "\n".join(lines) + "\n"


def features_from_csv(text: str) -> FeatureMatrix:
    lines = text.splitlines()
    if len(lines) < 3 or not lines[0].startswith("# kind=") \
            or not lines[1].startswith("# frame_times_s="):
        raise FormatError("malformed feature CSV header")
    kind = lines[0].split("=", 1)[1]
    times = np.array([float(v) for v in lines[1].split("=", 1)[1].split(",")])
    values = np.array([[float(v) for v in ln.split(",")]
                       for ln in lines[2:] if ln.strip()])
    return FeatureMatrix(values=values, coeff_kind=kind, frame_times_s=times)


def features_to_bytes(features: FeatureMatrix) -> bytes:
    """Compact binary form: EAFM magic, dims, row-major float64, little-endian."""
    rows, cols = features.values.shape
    header = struct.pack("<4sIB3xII", _FEATURE_MAGIC, 1,
                         _KIND_CODES[features.coeff_kind], rows, cols)
    body = features.values.astype("<f8").tobytes(order="C")
    times = features.frame_times_s.astype("<f8").tobytes()
    return header + body + times


def features_from_bytes(blob: bytes) -> FeatureMatrix:
    if len(blob) < 20 or blob[:4] != _FEATURE_MAGIC:
        raise FormatError("not an EAFM feature blob")
    _, version, kind_code, rows, cols = struct.unpack_from("<4sIB3xII", blob, 0)
    if version != 1:
        raise FormatError(f"unsupported EAFM version {version}")
    if kind_code not in _KIND_NAMES:
        raise FormatError(f"unknown coefficient kind code {kind_code}")
    offset = 20
    need = rows * cols * 8 + cols * 8
    if len(blob) < offset + need:
        raise FormatError("truncated EAFM blob")
    values = np.frombuffer(blob, dtype="<f8", count=rows * cols,
                           offset=offset).reshape(rows, cols)
    times = np.frombuffer(blob, dtype="<f8", count=cols, offset=offset + rows * cols * 8)
    return FeatureMatrix(values=values.copy(), coeff_kind=_KIND_NAMES[kind_code],
                         frame_times_s=times.copy())


# ---------------------------------------------------------------------------
# full pipeline

def mfcc(clip, frame_cfg: FrameConfig, fb: MelFilterbank, n_coeffs: int = 14) -> FeatureMatrix:
    """MFCCs of one clip: frame, window, FFT, power, mel bank, log+DCT.

    The clip must already be at the filterbank's sample rate. Returns
    c(1)..c(n_coeffs) per frame (zeroth coefficient excluded).
    """
    if clip.sample_rate_hz != fb.sample_rate_hz:
        raise ConfigError(
            f"clip at {clip.sample_rate_hz} Hz but filterbank expects {fb.sample_rate_hz} Hz")
    samples = pre_emphasize(clip.samples, frame_cfg.pre_emphasis)
    frames = frame_signal(samples, frame_cfg, clip.sample_rate_hz)
    windowed = apply_window(frames, frame_cfg.window_kind)
    spectra = fft(windowed, frame_cfg.n_fft)
    power = power_spectrum(spectra)
    mel = apply_filterbank(power, fb)
    coeffs = dct_log(mel, n_coeffs)
    frame_len = frame_cfg.frame_len(clip.sample_rate_hz)
    hop = frame_cfg.hop(clip.sample_rate_hz)
    starts = np.arange(frames.shape[0]) * hop
    times = (starts + frame_len / 2.0) / clip.sample_rate_hz
    return FeatureMatrix(values=coeffs.T, coeff_kind="mfcc", frame_times_s=times)


def delta(features: FeatureMatrix, n: int = 2) -> FeatureMatrix:
    """Frame-difference trajectories with replicated-edge padding.

    d_t = sum_k k*(c_{t+k} - c_{t-k}) / (2 * sum_k k^2), k = 1..n.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    values = features.values
    if values.shape[1] < 2 * n + 1:
        raise ValueError(f"need at least {2 * n + 1} frames, got {values.shape[1]}")
    padded = np.pad(values, ((0, 0), (n, n)), mode="edge")
    denom = 2.0 * sum(k * k for k in range(1, n + 1))
    out = np.zeros_like(values)
    for k in range(1, n + 1):
        out += k * (padded[:, n + k:padded.shape[1] - n + k]
                    - padded[:, n - k:padded.shape[1] - n - k])
    out /= denom
    return FeatureMatrix(values=out, coeff_kind="delta",
                         frame_times_s=features.frame_times_s)
