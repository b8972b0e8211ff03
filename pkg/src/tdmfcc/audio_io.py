"""WAV loading, resampling and dataset manifests.

Every downstream stage consumes :class:`AudioClip`, a mono float vector
normalized to [-1, 1] plus its sample rate and optional labels. The WAV
reader is a self-contained RIFF parser so the supported encodings
(PCM 8/16/24-bit and 32-bit float) are explicit rather than inherited
from a codec library.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.signal import resample_poly

from .errors import (
    ConfigError,
    EmptyAudioError,
    EmptyDatasetError,
    FormatError,
    UnsupportedFormatError,
)

# Polyphase windowed-sinc resampler settings (scipy.signal.resample_poly).
RESAMPLE_WINDOW = ("kaiser", 5.0)

_WAVE_FORMAT_PCM = 1
_WAVE_FORMAT_IEEE_FLOAT = 3
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE


@dataclass
class AudioClip:
    """Mono audio with metadata, amplitude within [-1, 1]."""

    samples: np.ndarray
    sample_rate_hz: int
    digit_label: Optional[int] = None
    speaker_label: Optional[str] = None
    source_path: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.size == 0:
            raise EmptyAudioError(f"clip has no samples: {self.source_path!r}")
        if self.sample_rate_hz <= 0:
            raise ValueError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError(f"non-finite samples in {self.source_path!r}")

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz


def _parse_fmt_chunk(payload: bytes) -> tuple[int, int, int, int]:
    if len(payload) < 16:
        raise FormatError("fmt chunk shorter than 16 bytes")
    audio_format, n_channels, sample_rate, _byte_rate, _block_align, bits = struct.unpack(
        "<HHIIHH", payload[:16]
    )
    if audio_format == _WAVE_FORMAT_EXTENSIBLE:
        # Real format code lives in the first two bytes of the SubFormat GUID.
        if len(payload) < 26:
            raise FormatError("WAVE_FORMAT_EXTENSIBLE fmt chunk truncated")
        audio_format = struct.unpack_from("<H", payload, 24)[0]
    return audio_format, n_channels, sample_rate, bits


def _read_chunks(path: Path) -> tuple[dict[str, bytes], bytes]:
    data = path.read_bytes()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise FormatError(f"not a RIFF/WAVE file: {path}")
    chunks: dict[str, bytes] = {}
    pos = 12
    while pos + 8 <= len(data):
        cid = data[pos:pos + 4].decode("latin-1")
        (size,) = struct.unpack_from("<I", data, pos + 4)
        payload = data[pos + 8:pos + 8 + size]
        if cid not in chunks:  # keep the first occurrence
            chunks[cid] = payload
        pos += 8 + size + (size & 1)  # chunks are word-aligned
    if "fmt " not in chunks or "data" not in chunks:
        raise FormatError(f"missing fmt/data chunk in {path}")
    return chunks, data


def _decode_samples(payload: bytes, audio_format: int, bits: int) -> np.ndarray:
    if audio_format == _WAVE_FORMAT_PCM:
        if bits == 8:
            raw = np.frombuffer(payload, dtype=np.uint8)
            return (raw.astype(np.float64) - 128.0) / 128.0
        if bits == 16:
            raw = np.frombuffer(payload, dtype="<i2")
            return raw.astype(np.float64) / 32768.0
        if bits == 24:
            usable = len(payload) - len(payload) % 3
            raw = np.frombuffer(payload[:usable], dtype=np.uint8).reshape(-1, 3)
            vals = (
                raw[:, 0].astype(np.int32)
                | (raw[:, 1].astype(np.int32) << 8)
                | (raw[:, 2].astype(np.int32) << 16)
            )
            vals = np.where(vals >= 1 << 23, vals - (1 << 24), vals)
            return vals.astype(np.float64) / float(1 << 23)
        raise UnsupportedFormatError(f"unsupported PCM bit depth: {bits}")
    if audio_format == _WAVE_FORMAT_IEEE_FLOAT:
        if bits == 32:
            return np.frombuffer(payload, dtype="<f4").astype(np.float64)
        raise UnsupportedFormatError(f"unsupported float bit depth: {bits}")
    raise UnsupportedFormatError(f"unsupported WAVE format code: {audio_format}")


def load_wav(path, digit_label: Optional[int] = None,
             speaker_label: Optional[str] = None) -> AudioClip:
    """Load a RIFF/WAVE file as a mono, full-scale-normalized AudioClip.

    Stereo is averaged to mono. Integer PCM is scaled by the type's full
    scale; float payloads are rescaled only if they overshoot [-1, 1].
    """
    path = Path(path)
    if not path.is_file():
        raise FormatError(f"no such file: {path}")
    chunks, _ = _read_chunks(path)
    audio_format, n_channels, sample_rate, bits = _parse_fmt_chunk(chunks["fmt "])
    if n_channels not in (1, 2):
        raise UnsupportedFormatError(f"{n_channels} channels not supported: {path}")
    if sample_rate <= 0:
        raise FormatError(f"invalid sample rate {sample_rate} in {path}")
    samples = _decode_samples(chunks["data"], audio_format, bits)
    if samples.size == 0:
        raise EmptyAudioError(f"no samples in {path}")
    if n_channels == 2:
        usable = len(samples) - len(samples) % 2
        samples = samples[:usable].reshape(-1, 2).mean(axis=1)
        if samples.size == 0:
            raise EmptyAudioError(f"no complete frames in {path}")
    peak = np.max(np.abs(samples))
    if peak > 1.0:
        samples = samples / peak
    return AudioClip(
        samples=samples,
        sample_rate_hz=int(sample_rate),
        digit_label=digit_label,
        speaker_label=speaker_label,
        source_path=str(path),
    )


def wav_sample_rate(path) -> int:
    """Read just the sample rate from a WAV header."""
    chunks, _ = _read_chunks(Path(path))
    _, _, sample_rate, _ = _parse_fmt_chunk(chunks["fmt "])
    return int(sample_rate)


def save_wav(path, samples: np.ndarray, sample_rate_hz: int) -> None:
    """Write mono 16-bit PCM. Values outside [-1, 1] are clipped."""
    samples = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    pcm = np.clip(np.round(samples * 32768.0), -32768, 32767).astype("<i2")
    payload = pcm.tobytes()
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(payload), b"WAVE",
        b"fmt ", 16, _WAVE_FORMAT_PCM, 1, sample_rate_hz,
        sample_rate_hz * 2, 2, 16,
        b"data", len(payload),
    )
    Path(path).write_bytes(header + payload)


def resample(clip: AudioClip, target_rate_hz: int) -> AudioClip:
    """Band-limited resampling (polyphase windowed sinc).

    Duration is preserved within one sample period. Output is rescaled to
    [-1, 1] if the interpolation overshoots.
    """
    if target_rate_hz <= 0:
        raise ValueError(f"target_rate_hz must be positive, got {target_rate_hz}")
    if target_rate_hz == clip.sample_rate_hz:
        return clip
    g = math.gcd(target_rate_hz, clip.sample_rate_hz)
    up, down = target_rate_hz // g, clip.sample_rate_hz // g
    out = resample_poly(clip.samples, up, down, window=RESAMPLE_WINDOW)
    peak = np.max(np.abs(out))
    if peak > 1.0:
        out = out / peak
    return replace(clip, samples=out, sample_rate_hz=target_rate_hz)


@dataclass
class ManifestEntry:
    path: str  # relative to the manifest root
    digit: int
    speaker: str


@dataclass
class DatasetManifest:
    """Catalogue of one corpus: (path, digit, speaker) per clip."""

    entries: list[ManifestEntry]
    corpus_name: str
    sample_rate_hz: int
    root_dir: str = ""
    warnings: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def speakers(self) -> list[str]:
        return sorted({e.speaker for e in self.entries})

    def resolve(self, entry: ManifestEntry) -> Path:
        return Path(self.root_dir) / entry.path

    def load_clip(self, entry: ManifestEntry) -> AudioClip:
        return load_wav(self.resolve(entry), digit_label=entry.digit,
                        speaker_label=entry.speaker)


def _parse_stem(stem: str, scheme: str) -> tuple[int, str]:
    parts = stem.split("_")
    if len(parts) != 3:
        raise ValueError(f"expected digit_speaker_index, got {stem!r}")
    digit = int(parts[0])
    if not 0 <= digit <= 9:
        raise ValueError(f"digit out of range in {stem!r}")
    speaker = parts[1]
    if not speaker:
        raise ValueError(f"empty speaker in {stem!r}")
    if scheme == "audio_mnist" and not speaker.isdigit():
        raise ValueError(f"audio_mnist speaker must be numeric, got {stem!r}")
    int(parts[2])  # repetition index must parse
    return digit, speaker


def build_manifest(root_dir, naming_scheme: str) -> DatasetManifest:
    """Scan a corpus directory into a manifest.

    Schemes: ``audio_mnist`` (digit_speaker_index.wav in per-speaker
    folders) and ``fsdd`` (digit_speakerName_index.wav, flat). Unparseable
    filenames are collected as warnings, never silently dropped.
    """
    if naming_scheme not in ("audio_mnist", "fsdd"):
        raise ValueError(f"unknown naming scheme: {naming_scheme!r}")
    root = Path(root_dir)
    if not root.is_dir():
        raise ConfigError(f"dataset root is not a directory: {root}")
    wavs = sorted(root.rglob("*.wav"))
    if not wavs:
        raise EmptyDatasetError(f"no .wav files under {root}")
    entries: list[ManifestEntry] = []
    warnings: list[str] = []
    for p in wavs:
        rel = p.relative_to(root).as_posix()
        try:
            digit, speaker = _parse_stem(p.stem, naming_scheme)
        except ValueError as exc:
            warnings.append(f"{rel}: {exc}")
            continue
        entries.append(ManifestEntry(path=rel, digit=digit, speaker=speaker))
    if not entries:
        raise EmptyDatasetError(f"no files matched scheme {naming_scheme!r} under {root}")
    rate = wav_sample_rate(root / entries[0].path)
    return DatasetManifest(
        entries=entries,
        corpus_name=naming_scheme,
        sample_rate_hz=rate,
        root_dir=str(root),
        warnings=warnings,
    )


def manifest_to_csv(manifest: DatasetManifest) -> str:
    lines = ["path,digit,speaker"]
    lines += [f"{e.path},{e.digit},{e.speaker}" for e in manifest.entries]
    return "\n".join(lines) + "\n"


def manifest_to_json(manifest: DatasetManifest) -> str:
    doc = {
        "corpus_name": manifest.corpus_name,
        "sample_rate_hz": manifest.sample_rate_hz,
        "entries": [
            {"path": e.path, "digit": e.digit, "speaker": e.speaker}
            for e in manifest.entries
        ],
        "warnings": list(manifest.warnings),
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def manifest_from_csv(text: str, root_dir: str = "",
                      corpus_name: str = "", sample_rate_hz: int = 0) -> DatasetManifest:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != "path,digit,speaker":
        raise FormatError("manifest CSV must start with 'path,digit,speaker'")
    entries = []
    for ln in lines[1:]:
        path, digit, speaker = ln.split(",")
        entries.append(ManifestEntry(path=path, digit=int(digit), speaker=speaker))
    return DatasetManifest(entries=entries, corpus_name=corpus_name,
                           sample_rate_hz=sample_rate_hz, root_dir=root_dir)
