"""Deterministic signal kernels: STFT/iSTFT, analytic envelopes, mel bands,
loudness trajectories, and WAV I/O.

All operations are pure and work on float64 buffers. Types are frozen and
their arrays are marked read-only, so clips can be processed in parallel
without locking.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import hilbert

from .errors import ConfigError, DataError, LengthError, NumericError, ShapeError

DEFAULT_SAMPLE_RATE = 44100
DEFAULT_FLOOR_DB = -80.0

# Below this, an overlap-add normalization weight is treated as zero: the
# analysis window carries no information about those samples.
_OLA_TINY = 1e-12

STEM_CLASSES = ("speech", "music", "effects", "mix")


def _as_readonly(x: np.ndarray) -> np.ndarray:
    # always copy: marking a caller-owned buffer read-only would be a nasty
    # side effect
    out = np.array(x, dtype=np.float64, order="C")
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class AudioClip:
    """Mono sample buffer at a fixed rate; the unit of all audio I/O."""

    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE
    id: str = ""

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ShapeError(f"AudioClip expects a 1-D buffer, got shape {samples.shape}")
        if samples.size < 1:
            raise LengthError("AudioClip needs at least one sample")
        if self.sample_rate <= 0:
            raise ConfigError(f"sample_rate must be > 0, got {self.sample_rate}")
        if not np.all(np.isfinite(samples)):
            raise DataError(f"clip {self.id!r} contains non-finite samples")
        object.__setattr__(self, "samples", _as_readonly(samples))

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def with_samples(self, samples: np.ndarray, id: str | None = None) -> "AudioClip":
        return AudioClip(samples, self.sample_rate, self.id if id is None else id)


def make_window(name: str, length: int) -> np.ndarray:
    """Periodic tapering window of the given length."""
    n = np.arange(length, dtype=np.float64)
    if name == "hann":
        return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / length)
    if name == "hamming":
        return 0.54 - 0.46 * np.cos(2.0 * np.pi * n / length)
    if name == "rect":
        return np.ones(length, dtype=np.float64)
    raise ConfigError(f"unknown window {name!r} (expected hann, hamming, or rect)")


def _check_cola(window: np.ndarray, hop: int) -> None:
    # Numeric constant-overlap-add check on the fully covered interior.
    length = window.size
    total = length + 8 * hop
    acc = np.zeros(total)
    for start in range(0, total - length + 1, hop):
        acc[start:start + length] += window
    interior = acc[length:total - length]
    if interior.size == 0:
        interior = acc[length - 1:length]
    dev = interior.max() - interior.min()
    if dev > 1e-8 * max(interior.mean(), 1e-30):
        raise ConfigError(
            f"(window, hop={hop}) violates constant overlap-add "
            f"(interior deviation {dev:.3e})"
        )


@dataclass(frozen=True)
class StftConfig:
    """Analysis configuration. Construction validates the COLA condition."""

    window_len: int = 2048
    hop: int = 512
    window: str = "hann"
    fft_len: int = 0  # 0 -> window_len

    def __post_init__(self):
        if self.fft_len == 0:
            object.__setattr__(self, "fft_len", self.window_len)
        if not (0 < self.hop <= self.window_len <= self.fft_len):
            raise ConfigError(
                f"need 0 < hop <= window_len <= fft_len, got "
                f"hop={self.hop} window_len={self.window_len} fft_len={self.fft_len}"
            )
        _check_cola(make_window(self.window, self.window_len), self.hop)

    @property
    def n_bins(self) -> int:
        return self.fft_len // 2 + 1

    def window_array(self) -> np.ndarray:
        return make_window(self.window, self.window_len)

    def frame_count(self, n_samples: int) -> int:
        if n_samples < self.window_len:
            raise LengthError(
                f"clip of {n_samples} samples is shorter than one window "
                f"({self.window_len})"
            )
        return (n_samples - self.window_len) // self.hop + 1

    def to_dict(self) -> dict:
        return {
            "window_len": self.window_len,
            "hop": self.hop,
            "window": self.window,
            "fft_len": self.fft_len,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StftConfig":
        return cls(**d)


@dataclass(frozen=True)
class Spectrogram:
    """Complex time-frequency grid, frames along axis 0.

    Edge policy: frames start at sample 0, no center padding, and a final
    partial frame is dropped. Windowed frames are zero-padded at the tail
    up to ``fft_len`` before the FFT.
    """

    bins: np.ndarray
    config: StftConfig
    origin_len: int
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        bins = np.asarray(self.bins, dtype=np.complex128)
        if bins.ndim != 2 or bins.shape[1] != self.config.n_bins:
            raise ShapeError(
                f"spectrogram must be [frames x {self.config.n_bins}], got {bins.shape}"
            )
        expected = self.config.frame_count(self.origin_len)
        if bins.shape[0] != expected:
            raise ShapeError(
                f"frame count {bins.shape[0]} does not match origin_len "
                f"{self.origin_len} (expected {expected})"
            )
        if not np.all(np.isfinite(bins)):
            raise DataError("spectrogram contains non-finite bins")
        bins = np.array(bins, order="C")
        bins.setflags(write=False)
        object.__setattr__(self, "bins", bins)

    @property
    def n_frames(self) -> int:
        return self.bins.shape[0]

    @property
    def n_bins(self) -> int:
        return self.bins.shape[1]

    def magnitude(self) -> np.ndarray:
        return np.abs(self.bins)

    def with_bins(self, bins: np.ndarray) -> "Spectrogram":
        return Spectrogram(bins, self.config, self.origin_len, self.sample_rate)


@dataclass(frozen=True)
class LoudnessTrajectory:
    """Per-frame loudness in dB relative to full scale, floored."""

    frames: np.ndarray
    frame_len: int
    hop: int
    stem_class: str = "mix"
    floor_db: float = DEFAULT_FLOOR_DB

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 1 or frames.size < 1:
            raise ShapeError("trajectory needs at least one frame")
        if not np.all(np.isfinite(frames)):
            raise DataError("trajectory contains non-finite values")
        if self.stem_class not in STEM_CLASSES:
            raise ConfigError(f"stem_class must be one of {STEM_CLASSES}")
        object.__setattr__(self, "frames", _as_readonly(frames))

    @property
    def n_frames(self) -> int:
        return self.frames.size


# ---------------------------------------------------------------------------
# STFT / iSTFT
# ---------------------------------------------------------------------------

def _frame_signal(x: np.ndarray, cfg: StftConfig) -> np.ndarray:
    n_frames = cfg.frame_count(x.size)
    stride = x.strides[0]
    return np.lib.stride_tricks.as_strided(
        x, shape=(n_frames, cfg.window_len), strides=(cfg.hop * stride, stride)
    )


def stft(clip: AudioClip, cfg: StftConfig) -> Spectrogram:
    """Short-time Fourier transform; linear in the input amplitude."""
    frames = _frame_signal(clip.samples, cfg) * cfg.window_array()
    bins = np.fft.rfft(frames, n=cfg.fft_len, axis=1)
    return Spectrogram(bins, cfg, origin_len=clip.samples.size,
                       sample_rate=clip.sample_rate)


def ola_weight(cfg: StftConfig, n_frames: int, n_samples: int) -> np.ndarray:
    """Per-sample overlap-add normalization: sum of squared synthesis windows.

    Samples with zero weight (e.g. the very first sample under a periodic
    Hann window) receive no energy from any analysis frame and cannot be
    reconstructed.
    """
    w2 = cfg.window_array() ** 2
    den = np.zeros(n_samples)
    for t in range(n_frames):
        start = t * cfg.hop
        stop = min(start + cfg.window_len, n_samples)
        den[start:stop] += w2[: stop - start]
    return den


def istft(spec: Spectrogram) -> AudioClip:
    """Overlap-add inverse with synthesis-window normalization.

    Returns ``origin_len`` samples. Zero-weight samples are returned as 0;
    a zero normalization weight under non-negligible synthesis energy
    raises ``NumericError``.
    """
    cfg = spec.config
    window = cfg.window_array()
    frames_time = np.fft.irfft(spec.bins, n=cfg.fft_len, axis=1)[:, : cfg.window_len]
    frames_time = frames_time * window

    n = spec.origin_len
    num = np.zeros(n)
    for t in range(spec.n_frames):
        start = t * cfg.hop
        stop = min(start + cfg.window_len, n)
        num[start:stop] += frames_time[t, : stop - start]

    den = ola_weight(cfg, spec.n_frames, n)
    dead = den <= _OLA_TINY
    if np.any(dead & (np.abs(num) > 1e-9 * max(np.abs(num).max(), 1.0))):
        raise NumericError("zero overlap-add normalization under non-zero energy")
    out = np.zeros(n)
    np.divide(num, den, out=out, where=~dead)
    return AudioClip(out, spec.sample_rate)


def spectral_energy(spec: Spectrogram) -> float:
    """Total squared magnitude over the full (two-sided) spectrum."""
    mag2 = np.abs(spec.bins) ** 2
    total = 2.0 * mag2.sum() - mag2[:, 0].sum()
    if spec.config.fft_len % 2 == 0:
        total -= mag2[:, -1].sum()
    return float(total)


# ---------------------------------------------------------------------------
# Envelopes and loudness
# ---------------------------------------------------------------------------

def analytic_envelope(clip: AudioClip) -> np.ndarray:
    """Magnitude of the FFT-based analytic signal (negative frequencies
    suppressed, positive doubled, DC/Nyquist kept)."""
    if len(clip) < 2:
        raise LengthError("analytic envelope needs at least 2 samples")
    return np.abs(hilbert(clip.samples))


def mel_frequency(hz: np.ndarray | float) -> np.ndarray | float:
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel: np.ndarray | float) -> np.ndarray | float:
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_bands: int, fmin: float, fmax: float,
                   fft_len: int, sample_rate: float) -> np.ndarray:
    """Triangular mel filterbank, rows [n_bands x (fft_len//2+1)]."""
    if n_bands < 1:
        raise ConfigError(f"n_bands must be >= 1, got {n_bands}")
    if not (0.0 <= fmin < fmax <= sample_rate / 2.0):
        raise ConfigError(
            f"need 0 <= fmin < fmax <= sample_rate/2, got "
            f"fmin={fmin} fmax={fmax} rate={sample_rate}"
        )
    edges = mel_to_hz(np.linspace(mel_frequency(fmin), mel_frequency(fmax), n_bands + 2))
    bin_freqs = np.arange(fft_len // 2 + 1) * sample_rate / fft_len
    fb = np.zeros((n_bands, bin_freqs.size))
    for b in range(n_bands):
        lo, mid, hi = edges[b], edges[b + 1], edges[b + 2]
        up = (bin_freqs - lo) / max(mid - lo, 1e-12)
        down = (hi - bin_freqs) / max(hi - mid, 1e-12)
        fb[b] = np.clip(np.minimum(up, down), 0.0, None)
    return fb


def mel_band_energies(spec: Spectrogram, n_bands: int,
                      fmin: float, fmax: float) -> np.ndarray:
    """Nonnegative band energies [frames x n_bands] from squared magnitudes."""
    fb = mel_filterbank(n_bands, fmin, fmax, spec.config.fft_len, spec.sample_rate)
    return (np.abs(spec.bins) ** 2) @ fb.T


def loudness_trajectory(clip: AudioClip, frame_len: int, hop: int,
                        floor_db: float = DEFAULT_FLOOR_DB,
                        stem_class: str = "mix") -> LoudnessTrajectory:
    """Per-frame RMS loudness in dBFS, clamped at ``floor_db``."""
    if frame_len > len(clip):
        raise LengthError(
            f"frame_len {frame_len} exceeds clip length {len(clip)}"
        )
    if hop < 1:
        raise ConfigError(f"hop must be >= 1, got {hop}")
    n_frames = (len(clip) - frame_len) // hop + 1
    stride = clip.samples.strides[0]
    frames = np.lib.stride_tricks.as_strided(
        clip.samples, shape=(n_frames, frame_len), strides=(hop * stride, stride)
    )
    rms = np.sqrt(np.mean(frames ** 2, axis=1))
    floor_lin = 10.0 ** (floor_db / 20.0)
    db = 20.0 * np.log10(np.maximum(rms, floor_lin))
    return LoudnessTrajectory(db, frame_len, hop, stem_class, floor_db)


def integrated_loudness(clip: AudioClip, floor_db: float = DEFAULT_FLOOR_DB) -> float:
    """Whole-clip RMS loudness in dBFS, clamped at ``floor_db``."""
    rms = float(np.sqrt(np.mean(clip.samples ** 2)))
    floor_lin = 10.0 ** (floor_db / 20.0)
    return 20.0 * float(np.log10(max(rms, floor_lin)))


# ---------------------------------------------------------------------------
# WAV I/O (PCM 16/24-bit, 32-bit float; stereo downmixed by channel mean)
# ---------------------------------------------------------------------------

_PCM16_SCALE = 32767.0
_PCM24_SCALE = 8388607.0


def read_wav(path, expect_rate: int | None = None, id: str = "") -> AudioClip:
    """Read a WAV file into a mono AudioClip.

    Stereo is downmixed by channel mean; more than 2 channels is an error.
    If ``expect_rate`` is given, a sample-rate mismatch is an error (no
    resampling in scope).
    """
    with open(path, "rb") as fh:
        riff, _size, wave_tag = struct.unpack("<4sI4s", fh.read(12))
        if riff != b"RIFF" or wave_tag != b"WAVE":
            raise DataError(f"{path}: not a RIFF/WAVE file")
        fmt = None
        data = None
        while True:
            head = fh.read(8)
            if len(head) < 8:
                break
            tag, size = struct.unpack("<4sI", head)
            payload = fh.read(size)
            if size % 2:  # chunks are word-aligned
                fh.read(1)
            if tag == b"fmt ":
                fmt = struct.unpack("<HHIIHH", payload[:16])
            elif tag == b"data":
                data = payload
        if fmt is None or data is None:
            raise DataError(f"{path}: missing fmt or data chunk")

    audio_format, channels, rate, _brate, _balign, bits = fmt
    if channels < 1 or channels > 2:
        raise DataError(f"{path}: {channels} channels unsupported (mono/stereo only)")
    if expect_rate is not None and rate != expect_rate:
        raise DataError(f"{path}: sample rate {rate} != expected {expect_rate}")

    if audio_format == 3 and bits == 32:
        x = np.frombuffer(data, dtype="<f4").astype(np.float64)
    elif audio_format == 1 and bits == 16:
        x = np.frombuffer(data, dtype="<i2").astype(np.float64) / _PCM16_SCALE
    elif audio_format == 1 and bits == 24:
        raw = np.frombuffer(data, dtype=np.uint8)
        raw = raw[: (raw.size // 3) * 3].reshape(-1, 3).astype(np.int64)
        val = raw[:, 0] | (raw[:, 1] << 8) | (raw[:, 2] << 16)
        val = (val ^ 0x800000) - 0x800000
        x = val.astype(np.float64) / _PCM24_SCALE
    else:
        raise DataError(
            f"{path}: unsupported format (format={audio_format}, bits={bits})"
        )

    if channels == 2:
        x = x[: (x.size // 2) * 2].reshape(-1, 2).mean(axis=1)
    return AudioClip(x, rate, id=id or str(path))


def write_wav(path, clip: AudioClip, fmt: str = "float32") -> None:
    """Write a mono AudioClip as WAV (fmt: pcm16, pcm24, or float32)."""
    x = clip.samples
    if fmt == "float32":
        payload = x.astype("<f4").tobytes()
        audio_format, bits = 3, 32
    elif fmt == "pcm16":
        q = np.round(np.clip(x, -1.0, 1.0) * _PCM16_SCALE).astype("<i2")
        payload = q.tobytes()
        audio_format, bits = 1, 16
    elif fmt == "pcm24":
        q = np.round(np.clip(x, -1.0, 1.0) * _PCM24_SCALE).astype("<i4")
        # low 3 little-endian bytes of each int32 are the 24-bit two's complement
        payload = q.view(np.uint8).reshape(-1, 4)[:, :3].tobytes()
        audio_format, bits = 1, 24
    else:
        raise ConfigError(f"unknown wav format {fmt!r}")

    channels = 1
    rate = int(clip.sample_rate)
    block_align = channels * bits // 8
    byte_rate = rate * block_align
    fmt_chunk = struct.pack("<HHIIHH", audio_format, channels, rate,
                            byte_rate, block_align, bits)
    chunks = [(b"fmt ", fmt_chunk)]
    if audio_format == 3:
        chunks.append((b"fact", struct.pack("<I", x.size)))
    chunks.append((b"data", payload))

    body = b""
    for tag, blob in chunks:
        body += struct.pack("<4sI", tag, len(blob)) + blob
        if len(blob) % 2:
            body += b"\x00"
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sI4s", b"RIFF", 4 + len(body), b"WAVE"))
        fh.write(body)
