"""Oracle tests for the signal kernels."""

from __future__ import annotations

import struct

import numpy as np
import pytest
from conftest import support_rms_error

from semmix.dsp_core import (
    AudioClip,
    ConfigError,
    Spectrogram,
    StftConfig,
    analytic_envelope,
    integrated_loudness,
    istft,
    loudness_trajectory,
    mel_band_energies,
    mel_filterbank,
    read_wav,
    spectral_energy,
    stft,
    write_wav,
)
from semmix.errors import DataError, LengthError

SR = 8000


def _clip(x, sr=SR, id=""):
    return AudioClip(np.asarray(x, dtype=np.float64), sr, id)


def _naive_dft(frame: np.ndarray, fft_len: int) -> np.ndarray:
    """Direct one-sided DFT, the independent oracle for one STFT frame."""
    padded = np.zeros(fft_len)
    padded[: frame.size] = frame
    k = np.arange(fft_len // 2 + 1)
    j = np.arange(fft_len)
    basis = np.exp(-2j * np.pi * np.outer(k, j) / fft_len)
    return basis @ padded


# ---------------------------------------------------------------------------
# stft
# ---------------------------------------------------------------------------

def test_stft_zero_clip_is_zero():
    cfg = StftConfig(256, 64, "hann", 256)
    spec = stft(_clip(np.zeros(2048)), cfg)
    assert spec.n_frames == (2048 - 256) // 64 + 1
    assert np.all(spec.bins == 0)


def test_stft_bin_center_sine_single_bin():
    n = 256
    cfg = StftConfig(n, n, "rect", n)
    k, amp = 16, 0.7
    t = np.arange(4 * n)
    x = amp * np.sin(2 * np.pi * k * t / n)
    spec = stft(_clip(x), cfg)
    mags = np.abs(spec.bins)
    for row in mags:
        assert abs(row[k] - amp * n / 2) < 1e-9 * n
        others = np.delete(row, k)
        assert others.max() < 1e-9 * n


def test_stft_matches_naive_dft_oracle():
    rng = np.random.default_rng(7)
    cfg = StftConfig(64, 16, "hann", 128)
    x = rng.uniform(-1, 1, 64 + 5 * 16)
    spec = stft(_clip(x), cfg)
    window = cfg.window_array()
    for t in range(spec.n_frames):
        frame = x[t * cfg.hop: t * cfg.hop + cfg.window_len] * window
        expected = _naive_dft(frame, cfg.fft_len)
        np.testing.assert_allclose(spec.bins[t], expected, atol=1e-10)


def test_stft_linearity():
    rng = np.random.default_rng(11)
    cfg = StftConfig(128, 32, "hann", 128)
    a = rng.uniform(-1, 1, 1024)
    b = rng.uniform(-1, 1, 1024)
    sab = stft(_clip(a + b), cfg).bins
    np.testing.assert_allclose(
        sab, stft(_clip(a), cfg).bins + stft(_clip(b), cfg).bins, atol=1e-10
    )


def test_stft_short_clip_raises():
    cfg = StftConfig(256, 64, "hann", 256)
    with pytest.raises(LengthError):
        stft(_clip(np.zeros(255)), cfg)


def test_non_cola_config_raises():
    with pytest.raises(ConfigError):
        StftConfig(256, 256, "hann", 256)  # hann without overlap
    with pytest.raises(ConfigError):
        StftConfig(8, 3, "rect", 8)  # hop does not tile the window
    with pytest.raises(ConfigError):
        StftConfig(256, 0, "hann", 256)
    with pytest.raises(ConfigError):
        StftConfig(256, 64, "hann", 128)  # fft_len < window_len


# ---------------------------------------------------------------------------
# istft
# ---------------------------------------------------------------------------

COLA_GRID = [
    StftConfig(256, 64, "hann", 256),
    StftConfig(256, 128, "hann", 256),
    StftConfig(256, 32, "hann", 512),
    StftConfig(256, 64, "hamming", 256),
    StftConfig(128, 128, "rect", 128),
    StftConfig(512, 128, "hann", 512),
]


@pytest.mark.parametrize("cfg", COLA_GRID, ids=lambda c: f"{c.window}-{c.window_len}-{c.hop}")
def test_roundtrip_identity_on_cola_grid(cfg):
    rng = np.random.default_rng(3)
    n = cfg.window_len + 13 * cfg.hop
    x = rng.uniform(-1, 1, n)
    out = istft(stft(_clip(x), cfg))
    assert len(out) == n
    rms, excluded = support_rms_error(x, out.samples, cfg)
    assert excluded <= 1
    assert rms < 1e-6


def test_istft_zero_spectrogram():
    cfg = StftConfig(256, 64, "hann", 256)
    spec = Spectrogram(np.zeros(((1024 - 256) // 64 + 1, cfg.n_bins)), cfg, 1024, SR)
    out = istft(spec)
    assert np.all(out.samples == 0)
    assert len(out) == 1024


def test_istft_linear_scaling():
    rng = np.random.default_rng(5)
    cfg = StftConfig(256, 64, "hann", 256)
    x = rng.uniform(-1, 1, 256 + 9 * 64)
    spec = stft(_clip(x), cfg)
    doubled = istft(spec.with_bins(2.0 * spec.bins))
    rms, _ = support_rms_error(2.0 * x, doubled.samples, cfg)
    assert rms < 1e-6


def test_parseval_rect_no_overlap():
    rng = np.random.default_rng(13)
    cfg = StftConfig(128, 128, "rect", 128)
    x = rng.uniform(-1, 1, 128 * 6)
    spec = stft(_clip(x), cfg)
    energy = spectral_energy(spec)
    expected = cfg.fft_len * np.sum(x ** 2)
    assert abs(energy - expected) < 1e-9 * expected


# ---------------------------------------------------------------------------
# analytic envelope
# ---------------------------------------------------------------------------

def _interior(x: np.ndarray, frac: float = 0.1) -> np.ndarray:
    k = int(x.size * frac)
    return x[k: x.size - k]


def test_envelope_sine_amplitude():
    t = np.arange(4000) / SR
    for amp in (0.5, 1.0):
        env = analytic_envelope(_clip(amp * np.sin(2 * np.pi * 217.0 * t)))
        dev = np.abs(_interior(env) - amp) / amp
        assert dev.max() < 0.02


def test_envelope_zero():
    env = analytic_envelope(_clip(np.zeros(512)))
    assert np.all(env == 0)


def test_envelope_am_recovery():
    # modulator recovered from (1 + 0.5 cos(2 pi f_m t)) sin(2 pi f_c t)
    t = np.arange(SR) / SR
    modulator = 1.0 + 0.5 * np.cos(2 * np.pi * 10.0 * t)
    x = modulator * np.sin(2 * np.pi * 1000.0 * t)
    env = analytic_envelope(_clip(x))
    rel = np.abs(_interior(env) - _interior(modulator)) / _interior(modulator)
    assert rel.max() < 0.02


def test_envelope_sign_flip_and_scaling():
    rng = np.random.default_rng(17)
    t = np.arange(2000) / SR
    x = np.sin(2 * np.pi * 440 * t) * (0.2 + 0.1 * rng.uniform(size=t.size))
    env = analytic_envelope(_clip(x))
    np.testing.assert_allclose(analytic_envelope(_clip(-x)), env, atol=1e-12)
    np.testing.assert_allclose(analytic_envelope(_clip(3.0 * x)), 3.0 * env, atol=1e-12)


def test_envelope_too_short_raises():
    with pytest.raises(LengthError):
        analytic_envelope(_clip([0.5]))


# ---------------------------------------------------------------------------
# mel band energies
# ---------------------------------------------------------------------------

def test_mel_zero_spectrogram():
    cfg = StftConfig(256, 256, "rect", 256)
    spec = stft(_clip(np.zeros(256 * 4)), cfg)
    energies = mel_band_energies(spec, 8, 100.0, 3800.0)
    assert energies.shape == (4, 8)
    assert np.all(energies == 0)


def test_mel_white_noise_matches_rowsum_oracle():
    # flat expected power per bin -> band energy proportional to filter row sum
    rng = np.random.default_rng(23)
    cfg = StftConfig(256, 256, "rect", 256)
    x = rng.normal(0.0, 0.3, 256 * 120)
    spec = stft(_clip(x), cfg)
    energies = mel_band_energies(spec, 8, 200.0, 3800.0).mean(axis=0)
    rows = mel_filterbank(8, 200.0, 3800.0, cfg.fft_len, SR).sum(axis=1)
    ratio = energies / rows
    assert np.abs(ratio / ratio.mean() - 1.0).max() < 0.10


def test_mel_single_bin_tone_band_support():
    n = 256
    cfg = StftConfig(n, n, "rect", n)
    k = 40
    t = np.arange(4 * n)
    spec = stft(_clip(np.sin(2 * np.pi * k * t / n)), cfg)
    fb = mel_filterbank(8, 100.0, 3800.0, n, SR)
    energies = mel_band_energies(spec, 8, 100.0, 3800.0).sum(axis=0)
    overlapping = fb[:, k] > 0
    assert np.all(energies[overlapping] > 0)
    assert np.all(energies[~overlapping] < 1e-12 * energies.max())


def test_mel_bad_range_raises():
    cfg = StftConfig(256, 256, "rect", 256)
    spec = stft(_clip(np.zeros(512)), cfg)
    with pytest.raises(ConfigError):
        mel_band_energies(spec, 8, 3800.0, 100.0)
    with pytest.raises(ConfigError):
        mel_band_energies(spec, 8, 0.0, SR)  # fmax beyond Nyquist
    with pytest.raises(ConfigError):
        mel_band_energies(spec, 0, 100.0, 3800.0)


# ---------------------------------------------------------------------------
# loudness trajectories
# ---------------------------------------------------------------------------

def test_loudness_constant_full_scale():
    traj = loudness_trajectory(_clip(np.ones(2048)), 256, 256)
    assert traj.n_frames == 8
    np.testing.assert_allclose(traj.frames, 0.0, atol=1e-12)


def test_loudness_zero_clip_hits_floor():
    traj = loudness_trajectory(_clip(np.zeros(2048)), 256, 256, floor_db=-80.0)
    np.testing.assert_allclose(traj.frames, -80.0, atol=1e-12)


def test_loudness_step_matches_rms_closed_form():
    # 0.1 -> 1.0 step inside frame 4; every frame checked against closed form
    frame_len = 256
    x = np.full(2048, 0.1)
    step_at = 1100
    x[step_at:] = 1.0
    traj = loudness_trajectory(_clip(x), frame_len, frame_len)
    for t in range(traj.n_frames):
        lo, hi = t * frame_len, (t + 1) * frame_len
        n_low = int(np.clip(step_at - lo, 0, frame_len))
        rms = np.sqrt((n_low * 0.1 ** 2 + (frame_len - n_low) * 1.0) / frame_len)
        assert abs(traj.frames[t] - 20 * np.log10(rms)) < 1e-9
    assert abs(traj.frames[0] - (-20.0)) < 1e-9
    assert abs(traj.frames[-1] - 0.0) < 1e-9
    assert abs((traj.frames[-1] - traj.frames[0]) - 20.0) < 1e-9


def test_loudness_gain_shift_property():
    rng = np.random.default_rng(29)
    x = rng.uniform(-0.5, 0.5, 4096)
    base = loudness_trajectory(_clip(x), 512, 256)
    for k in (0.5, 2.0, 7.0):
        shifted = loudness_trajectory(_clip(k * x), 512, 256)
        np.testing.assert_allclose(
            shifted.frames, base.frames + 20 * np.log10(k), atol=1e-9
        )


def test_loudness_frame_longer_than_clip_raises():
    with pytest.raises(LengthError):
        loudness_trajectory(_clip(np.zeros(100)), 256, 64)


def test_integrated_loudness_closed_form():
    assert abs(integrated_loudness(_clip(np.ones(1000)))) < 1e-12
    assert abs(integrated_loudness(_clip(np.full(1000, 0.5))) + 6.0206) < 1e-3
    assert integrated_loudness(_clip(np.zeros(1000))) == -80.0


# ---------------------------------------------------------------------------
# WAV I/O
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("fmt,atol", [
    ("float32", 1e-7),
    ("pcm16", 1.0 / 32767),
    ("pcm24", 1.0 / 8388607),
])
def test_wav_roundtrip(tmp_path, fmt, atol):
    rng = np.random.default_rng(31)
    clip = _clip(rng.uniform(-0.9, 0.9, 5000), sr=44100)
    path = tmp_path / f"x_{fmt}.wav"
    write_wav(path, clip, fmt=fmt)
    back = read_wav(path)
    assert back.sample_rate == 44100
    np.testing.assert_allclose(back.samples, clip.samples, atol=atol)


def test_wav_stereo_downmix(tmp_path):
    # hand-built interleaved stereo PCM16: L=0.5, R=-0.25 -> mean 0.125
    rate, n = 8000, 64
    left = np.full(n, int(0.5 * 32767), dtype="<i2")
    right = np.full(n, int(-0.25 * 32767), dtype="<i2")
    data = np.empty(2 * n, dtype="<i2")
    data[0::2], data[1::2] = left, right
    payload = data.tobytes()
    fmt_chunk = struct.pack("<HHIIHH", 1, 2, rate, rate * 4, 4, 16)
    body = struct.pack("<4sI", b"fmt ", len(fmt_chunk)) + fmt_chunk
    body += struct.pack("<4sI", b"data", len(payload)) + payload
    path = tmp_path / "stereo.wav"
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sI4s", b"RIFF", 4 + len(body), b"WAVE"))
        fh.write(body)
    clip = read_wav(path)
    np.testing.assert_allclose(clip.samples, 0.125, atol=1e-3)


def test_wav_rate_mismatch_raises(tmp_path):
    clip = _clip(np.zeros(100), sr=22050)
    path = tmp_path / "x.wav"
    write_wav(path, clip)
    with pytest.raises(DataError):
        read_wav(path, expect_rate=44100)


def test_wav_too_many_channels_raises(tmp_path):
    fmt_chunk = struct.pack("<HHIIHH", 1, 3, 8000, 8000 * 6, 6, 16)
    payload = np.zeros(30, dtype="<i2").tobytes()
    body = struct.pack("<4sI", b"fmt ", len(fmt_chunk)) + fmt_chunk
    body += struct.pack("<4sI", b"data", len(payload)) + payload
    path = tmp_path / "multi.wav"
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sI4s", b"RIFF", 4 + len(body), b"WAVE"))
        fh.write(body)
    with pytest.raises(DataError):
        read_wav(path)
