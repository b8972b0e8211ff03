"""Unit and property tests for the frequency-domain feature pipeline.

Oracles here are deliberately independent of the implementation: the DFT
oracle is the O(N^2) definition, the DCT oracle is a direct double loop,
and the filterbank oracle builds triangles scalar-wise from re-derived
edges.
"""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tdmfcc import dsp
from tdmfcc.audio_io import AudioClip
from tdmfcc.errors import ConfigError, DegenerateFilterError, FormatError


# ---------------------------------------------------------------------------
# oracles

def naive_dft(x, n_fft):
    """Literal spectral sum, no FFT structure."""
    x = np.concatenate([x, np.zeros(n_fft - len(x))])
    out = np.zeros(n_fft, dtype=complex)
    for k in range(n_fft):
        for n in range(n_fft):
            out[k] += x[n] * np.exp(-2j * np.pi * n * k / n_fft)
    return out


def naive_dct_log(energies, n_coeffs, floor=1e-10, include_zeroth=False):
    m_count = len(energies)
    logs = [np.log10(max(e, floor)) for e in energies]
    start = 0 if include_zeroth else 1
    out = []
    for n in range(start, start + n_coeffs):
        acc = 0.0
        for m in range(m_count):
            acc += logs[m] * np.cos(np.pi * n * (m + 0.5) / m_count)
        out.append(acc)
    return np.array(out)


def oracle_mel_edges(n_filters, n_fft, fmin, fmax, sr):
    """Snapped bin edges re-derived from the warp formula."""
    lo = 2595.0 * np.log10(1.0 + fmin / 700.0)
    hi = 2595.0 * np.log10(1.0 + fmax / 700.0)
    mels = [lo + (hi - lo) * i / (n_filters + 1) for i in range(n_filters + 2)]
    hz = [700.0 * (10.0 ** (m / 2595.0) - 1.0) for m in mels]
    return [int(round(f * n_fft / sr)) for f in hz]


def oracle_triangle_weights(n_filters, n_fft, fmin, fmax, sr):
    edges = oracle_mel_edges(n_filters, n_fft, fmin, fmax, sr)
    n_bins = n_fft // 2 + 1
    weights = np.zeros((n_filters, n_bins))
    for i in range(n_filters):
        lo, c, hi = edges[i], edges[i + 1], edges[i + 2]
        for b in range(n_bins):
            if lo < b <= c:
                weights[i, b] = (b - lo) / (c - lo)
            elif c < b < hi:
                weights[i, b] = (hi - b) / (hi - c)
    return weights


# ---------------------------------------------------------------------------
# mel scale

def test_mel_at_origin():
    assert dsp.hz_to_mel(0.0) == 0.0
    assert dsp.mel_to_hz(0.0) == 0.0


def test_mel_anchor_700hz():
    # 2595*log10(2), evaluated with mpmath-grade precision and frozen
    assert dsp.hz_to_mel(700.0) == pytest.approx(781.1728387480312, abs=1e-9)


def test_mel_anchor_1000hz():
    assert dsp.hz_to_mel(1000.0) == pytest.approx(999.9855371396244, abs=1e-9)
    assert dsp.hz_to_mel(1000.0) == pytest.approx(1000.0, abs=0.1)


def test_mel_rejects_negative():
    with pytest.raises(ValueError):
        dsp.hz_to_mel(-1.0)
    with pytest.raises(ValueError):
        dsp.mel_to_hz(-0.5)


@given(st.floats(min_value=0.0, max_value=4000.0))
def test_mel_round_trip(f):
    back = dsp.mel_to_hz(dsp.hz_to_mel(f))
    assert back == pytest.approx(f, rel=1e-9, abs=1e-9)


def test_mel_round_trip_batch():
    rng = np.random.default_rng(7)
    f = rng.uniform(0.0, 4000.0, size=100)
    back = dsp.mel_to_hz(dsp.hz_to_mel(f))
    assert np.max(np.abs(back - f) / np.maximum(f, 1e-12)) < 1e-9


def test_mel_strictly_increasing():
    f = np.linspace(0, 4000, 500)
    assert np.all(np.diff(dsp.hz_to_mel(f)) > 0)


# ---------------------------------------------------------------------------
# framing

def test_frame_count_example():
    cfg = dsp.FrameConfig(frame_len_ms=25, hop_ms=10)
    frames = dsp.frame_signal(np.arange(400, dtype=float), cfg, 8000)
    assert frames.shape == (3, 200)
    assert frames[0, 0] == 0 and frames[1, 0] == 80 and frames[2, 0] == 160


def test_short_clip_zero_padded():
    cfg = dsp.FrameConfig()
    frames = dsp.frame_signal(np.ones(100), cfg, 8000)
    assert frames.shape == (1, 200)
    assert np.all(frames[0, :100] == 1) and np.all(frames[0, 100:] == 0)


def test_constant_signal_frames_identical():
    cfg = dsp.FrameConfig()
    frames = dsp.frame_signal(np.full(1000, 3.5), cfg, 8000)
    assert np.all(frames == frames[0])


def test_one_second_clip_has_98_frames():
    cfg = dsp.FrameConfig()
    assert dsp.n_frames_for(8000, cfg, 8000) == 98


@given(st.integers(min_value=1, max_value=5000))
def test_frame_count_formula(n):
    cfg = dsp.FrameConfig()
    frames = dsp.frame_signal(np.zeros(n), cfg, 8000)
    assert frames.shape[0] == max(1, (n - 200) // 80 + 1)


def test_frame_config_validation():
    with pytest.raises(ConfigError):
        dsp.FrameConfig(hop_ms=30, frame_len_ms=25)
    with pytest.raises(ConfigError):
        dsp.FrameConfig(n_fft=1000)
    with pytest.raises(ConfigError):
        dsp.FrameConfig(pre_emphasis=1.0)
    with pytest.raises(ConfigError):
        dsp.FrameConfig(window_kind="blackman")


def test_frame_len_must_fit_n_fft():
    cfg = dsp.FrameConfig(frame_len_ms=25, n_fft=128)
    with pytest.raises(ConfigError):
        dsp.frame_signal(np.zeros(400), cfg, 8000)


# ---------------------------------------------------------------------------
# windows

def test_hamming_three_points():
    out = dsp.apply_window(np.ones(3), "hamming")
    assert out == pytest.approx([0.08, 1.0, 0.08], abs=1e-12)


def test_hanning_endpoints_are_zero():
    out = dsp.apply_window(np.ones(64), "hanning")
    assert out[0] == pytest.approx(0.0, abs=1e-15)
    assert out[-1] == pytest.approx(0.0, abs=1e-15)


def test_window_preserves_zeros():
    assert np.all(dsp.apply_window(np.zeros(50), "hamming") == 0)


def test_window_formula_matches_literal():
    L = 200
    n = np.arange(L)
    assert dsp.apply_window(np.ones(L), "hamming") == pytest.approx(
        0.54 - 0.46 * np.cos(2 * np.pi * n / (L - 1)))
    assert dsp.apply_window(np.ones(L), "hanning") == pytest.approx(
        0.5 - 0.5 * np.cos(2 * np.pi * n / (L - 1)))


def test_pre_emphasis_first_difference():
    x = np.array([1.0, 2.0, 3.0])
    out = dsp.pre_emphasize(x, 0.97)
    assert out == pytest.approx([1.0, 2.0 - 0.97, 3.0 - 1.94])
    assert dsp.pre_emphasize(x, 0.0) is x or np.all(dsp.pre_emphasize(x, 0.0) == x)


# ---------------------------------------------------------------------------
# transforms

def test_dft_impulse():
    out = dsp.dft(np.array([1.0]), 64)
    assert np.max(np.abs(out - 1.0)) < 1e-12


def test_dft_cosine_lines():
    n = np.arange(64)
    x = np.cos(2 * np.pi * n * 8 / 64)
    out = dsp.dft(x, 64)
    mags = np.abs(out)
    assert mags[8] == pytest.approx(32.0, abs=1e-9)
    assert mags[56] == pytest.approx(32.0, abs=1e-9)
    others = np.delete(mags, [8, 56])
    assert np.max(others) < 1e-9


@pytest.mark.parametrize("n", [8, 64, 256, 1024])
def test_fft_matches_naive_dft(n):
    rng = np.random.default_rng(n)
    x = rng.normal(size=n)
    assert np.max(np.abs(dsp.fft(x) - naive_dft(x, n))) < 1e-9


def test_fft_zero_pads_short_input():
    rng = np.random.default_rng(1)
    x = rng.normal(size=200)
    assert np.allclose(dsp.fft(x, 1024), naive_dft(x, 1024), atol=1e-9)


def test_fft_rejects_bad_sizes():
    with pytest.raises(ValueError):
        dsp.fft(np.zeros(10))
    with pytest.raises(ValueError):
        dsp.fft(np.zeros(100), 64)


def test_fft_batched_axes():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(4, 3, 128))
    out = dsp.fft(x)
    for i in range(4):
        for j in range(3):
            assert np.allclose(out[i, j], dsp.fft(x[i, j]))


def test_ifft_round_trip():
    rng = np.random.default_rng(3)
    x = rng.normal(size=256) + 1j * rng.normal(size=256)
    assert np.max(np.abs(dsp.ifft(dsp.fft(x)) - x)) < 1e-10


def test_power_spectrum_shapes_and_values():
    assert np.all(dsp.power_spectrum(np.zeros(64, dtype=complex)) == 0)
    imp = dsp.dft(np.array([1.0]), 64)
    p = dsp.power_spectrum(imp)
    assert p.shape == (33,)
    assert np.max(np.abs(p - 1.0)) < 1e-12


@given(st.integers(min_value=0, max_value=2 ** 31 - 1))
@settings(max_examples=25, deadline=None)
def test_parseval_on_windowed_frames(seed):
    rng = np.random.default_rng(seed)
    frame = dsp.apply_window(rng.normal(size=200), "hamming")
    spec = dsp.fft(frame, 1024)
    lhs = np.sum(np.abs(spec) ** 2)
    rhs = 1024 * np.sum(frame ** 2)
    assert lhs == pytest.approx(rhs, rel=1e-6)


# ---------------------------------------------------------------------------
# filterbank

def test_filterbank_default_geometry():
    fb = dsp.make_mel_filterbank(25, 1024, 0.0, 4000.0, 8000)
    assert fb.weights.shape == (25, 513)
    assert np.all(fb.weights.max(axis=1) == 1.0)
    assert np.all(np.diff(fb.center_freqs_hz) > 0)
    supports = [np.nonzero(row)[0] for row in fb.weights]
    starts = [s[0] for s in supports]
    assert starts == sorted(starts)


def test_filterbank_matches_independent_oracle():
    fb = dsp.make_mel_filterbank(25, 1024, 0.0, 4000.0, 8000)
    oracle = oracle_triangle_weights(25, 1024, 0.0, 4000.0, 8000)
    assert np.max(np.abs(fb.weights - oracle)) < 1e-12


def test_single_filter_peaks_at_mel_midpoint():
    fb = dsp.make_mel_filterbank(1, 1024, 0.0, 4000.0, 8000)
    midpoint = dsp.mel_to_hz(dsp.hz_to_mel(4000.0) / 2.0)
    bin_width = 8000 / 1024
    assert abs(fb.center_freqs_hz[0] - midpoint) <= bin_width / 2 + 1e-9


def test_adjacent_filter_crossover():
    fb = dsp.make_mel_filterbank(25, 1024, 0.0, 4000.0, 8000)
    for i in range(24):
        upper_edge = fb.edge_bins[i + 2]
        assert fb.weights[i, upper_edge] == 0.0
        assert fb.weights[i + 1, upper_edge] == 1.0


def test_degenerate_filter_raises_with_index():
    with pytest.raises(DegenerateFilterError) as exc:
        dsp.make_mel_filterbank(200, 256, 0.0, 4000.0, 8000)
    assert exc.value.filter_index >= 0


def test_filterbank_validation():
    with pytest.raises(ConfigError):
        dsp.make_mel_filterbank(0, 1024, 0.0, 4000.0, 8000)
    with pytest.raises(ConfigError):
        dsp.make_mel_filterbank(25, 1024, 4000.0, 100.0, 8000)
    with pytest.raises(ConfigError):
        dsp.make_mel_filterbank(25, 1024, 0.0, 5000.0, 8000)


def test_apply_filterbank_basics():
    fb = dsp.make_mel_filterbank(25, 1024, 0.0, 4000.0, 8000)
    assert np.all(dsp.apply_filterbank(np.zeros(513), fb) == 0)
    indicator = np.zeros(513)
    indicator[fb.edge_bins[5]] = 1.0  # filter 4's center bin
    s = dsp.apply_filterbank(indicator, fb)
    assert s[4] == 1.0
    assert s[3] < 1.0 and s[5] < 1.0
    rng = np.random.default_rng(4)
    p = rng.uniform(size=513)
    assert np.array_equal(dsp.apply_filterbank(p, fb), fb.weights @ p)


def test_apply_filterbank_length_mismatch():
    fb = dsp.make_mel_filterbank(25, 1024, 0.0, 4000.0, 8000)
    with pytest.raises(ValueError):
        dsp.apply_filterbank(np.zeros(100), fb)


# ---------------------------------------------------------------------------
# cepstra

def test_dct_log_unit_energies_zero():
    assert np.max(np.abs(dsp.dct_log(np.ones(25), 14))) == 0.0


def test_dct_log_constant_ten():
    c = dsp.dct_log(np.full(25, 10.0), 14, include_zeroth=True)
    assert c[0] == pytest.approx(25.0, abs=1e-9)
    assert np.max(np.abs(c[1:])) < 1e-9


def test_dct_log_matches_direct_sum():
    rng = np.random.default_rng(5)
    e = rng.uniform(0.01, 10.0, size=25)
    assert np.max(np.abs(dsp.dct_log(e, 14) - naive_dct_log(e, 14))) < 1e-9
    got = dsp.dct_log(e, 10, include_zeroth=True)
    want = naive_dct_log(e, 10, include_zeroth=True)
    assert np.max(np.abs(got - want)) < 1e-9


def test_dct_log_floor_applies():
    out = dsp.dct_log(np.zeros(25), 14, include_zeroth=True)
    assert out[0] == pytest.approx(25 * np.log10(1e-10))


def test_dct_log_rejects_too_many_coeffs():
    with pytest.raises(ValueError):
        dsp.dct_log(np.ones(10), 11)


@given(st.floats(min_value=0.1, max_value=5.0))
@settings(max_examples=25)
def test_dct_log_linear_in_log_energies(a):
    rng = np.random.default_rng(6)
    e = rng.uniform(0.5, 4.0, size=25)
    lhs = dsp.dct_log(e ** a, 14)
    rhs = a * dsp.dct_log(e, 14)
    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-9)


# ---------------------------------------------------------------------------
# full pipeline

def _tone_clip(freq=1000.0, seconds=1.0, sr=8000):
    t = np.arange(int(seconds * sr)) / sr
    return AudioClip(samples=np.sin(2 * np.pi * freq * t), sample_rate_hz=sr)


def test_mfcc_shape_and_kind():
    fb = dsp.make_mel_filterbank()
    fm = dsp.mfcc(_tone_clip(), dsp.FrameConfig(), fb)
    assert fm.values.shape == (14, 98)
    assert fm.coeff_kind == "mfcc"
    assert fm.frame_times_s[0] == pytest.approx(0.0125)
    assert fm.frame_times_s[1] - fm.frame_times_s[0] == pytest.approx(0.010)


def test_mfcc_silence_is_constant_floor_column():
    fb = dsp.make_mel_filterbank()
    clip = AudioClip(samples=np.zeros(8000), sample_rate_hz=8000)
    fm = dsp.mfcc(clip, dsp.FrameConfig(), fb)
    expected = dsp.dct_log(np.zeros(25), 14)
    for t in range(fm.n_frames):
        assert fm.values[:, t] == pytest.approx(expected, abs=1e-12)


def test_mfcc_pure_tone_stationary():
    fb = dsp.make_mel_filterbank()
    fm = dsp.mfcc(_tone_clip(1000.0), dsp.FrameConfig(), fb)
    interior = fm.values[0, 5:-5]
    assert np.max(interior) - np.min(interior) < 1e-6


def test_mfcc_tone_excites_expected_filter():
    fb = dsp.make_mel_filterbank()
    cfg = dsp.FrameConfig()
    clip = _tone_clip(1000.0)
    samples = dsp.pre_emphasize(clip.samples, cfg.pre_emphasis)
    frames = dsp.frame_signal(samples, cfg, 8000)
    spec = dsp.fft(dsp.apply_window(frames, cfg.window_kind), cfg.n_fft)
    mel = dsp.apply_filterbank(dsp.power_spectrum(spec), fb)
    # the filter whose band contains 1000 Hz should dominate in every frame
    contains = [i for i in range(25)
                if fb.edge_bins[i] * 8000 / 1024 < 1000 < fb.edge_bins[i + 2] * 8000 / 1024]
    assert np.all(np.isin(np.argmax(mel, axis=1), contains))


def test_mfcc_rejects_rate_mismatch():
    fb = dsp.make_mel_filterbank()
    clip = AudioClip(samples=np.zeros(100), sample_rate_hz=16000)
    with pytest.raises(ConfigError):
        dsp.mfcc(clip, dsp.FrameConfig(), fb)


@given(st.integers(min_value=0, max_value=10 ** 6))
@settings(max_examples=20, deadline=None)
def test_mfcc_invariant_to_short_zero_tail(seed):
    # appending z trailing zeros leaves features unchanged while
    # r + z < hop, where r = (len - frame_len) mod hop
    rng = np.random.default_rng(seed)
    n = int(rng.integers(300, 2000))
    cfg = dsp.FrameConfig()
    fb = dsp.make_mel_filterbank()
    x = rng.normal(size=n)
    r = (n - 200) % 80
    z = int(rng.integers(0, 80 - r)) if 80 - r > 1 else 0
    a = dsp.mfcc(AudioClip(samples=x, sample_rate_hz=8000), cfg, fb)
    b = dsp.mfcc(AudioClip(samples=np.concatenate([x, np.zeros(z)]),
                           sample_rate_hz=8000), cfg, fb)
    assert np.array_equal(a.values, b.values)


# ---------------------------------------------------------------------------
# deltas

def _as_features(values):
    values = np.atleast_2d(values)
    return dsp.FeatureMatrix(values=values, coeff_kind="mfcc",
                             frame_times_s=np.arange(values.shape[1], dtype=float))


def test_delta_of_constant_is_zero():
    d = dsp.delta(_as_features(np.full((3, 20), 7.0)), n=2)
    assert np.all(d.values == 0)
    assert d.coeff_kind == "delta"


def test_delta_of_ramp_is_one_interior():
    d = dsp.delta(_as_features(np.arange(30.0)), n=2)
    assert d.values[0, 2:-2] == pytest.approx(np.ones(26))


def test_delta_delta_of_quadratic_is_two():
    t = np.arange(40.0)
    dd = dsp.delta(dsp.delta(_as_features(t * t), n=2), n=2)
    assert dd.values[0, 4:-4] == pytest.approx(np.full(32, 2.0))


def test_delta_argument_errors():
    with pytest.raises(ValueError):
        dsp.delta(_as_features(np.arange(4.0)), n=2)
    with pytest.raises(ValueError):
        dsp.delta(_as_features(np.arange(30.0)), n=0)


# ---------------------------------------------------------------------------
# feature container + serialization

def test_feature_matrix_validation():
    with pytest.raises(ValueError):
        dsp.FeatureMatrix(values=np.array([[np.nan]]), coeff_kind="mfcc",
                          frame_times_s=np.array([0.0]))
    with pytest.raises(ValueError):
        dsp.FeatureMatrix(values=np.ones((2, 3)), coeff_kind="bogus",
                          frame_times_s=np.arange(3.0))
    with pytest.raises(ValueError):
        dsp.FeatureMatrix(values=np.ones((2, 3)), coeff_kind="mfcc",
                          frame_times_s=np.arange(2.0))


def test_feature_binary_round_trip():
    rng = np.random.default_rng(8)
    fm = _as_features(rng.normal(size=(14, 98)))
    back = dsp.features_from_bytes(dsp.features_to_bytes(fm))
    assert np.array_equal(back.values, fm.values)
    assert np.array_equal(back.frame_times_s, fm.frame_times_s)
    assert back.coeff_kind == fm.coeff_kind


def test_feature_csv_round_trip():
    rng = np.random.default_rng(9)
    fm = _as_features(rng.normal(size=(5, 12)) * 100)
    back = dsp.features_from_csv(dsp.features_to_csv(fm))
    assert back.values == pytest.approx(fm.values, rel=1e-8)
    assert back.coeff_kind == fm.coeff_kind


def test_feature_blob_rejects_garbage():
    with pytest.raises(FormatError):
        dsp.features_from_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(FormatError):
        dsp.features_from_csv("1,2,3\n4,5,6\n")
