"""Poor-mix construction from stem sets and the loudness-sampling remix baseline.

A poor mix is built by drawing per-stem loudness offsets from a configurable
prior, turning them into gain schedules, and summing the scheduled stems.
The schedule that produced a mix is returned alongside it as ground truth.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from .dsp_core import AudioClip, integrated_loudness
from .errors import ClippingError, ConfigError, DataError, RangeError

log = logging.getLogger("semmix.mix_synthesis")

STEM_NAMES = ("speech", "music", "effects")

# Deliberately bad mixes are allowed; anything past this peak is a blowup.
PEAK_LIMIT = 4.0

# Stems quieter than this are treated as silent by the remix baseline.
SILENCE_DB = -79.0


@dataclass(frozen=True)
class StemSet:
    """The three named stems plus their mixdown."""

    speech: AudioClip
    music: AudioClip
    effects: AudioClip
    reference_mix: AudioClip | None = None
    mix_weights: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        stems = [self.speech, self.music, self.effects]
        rates = {s.sample_rate for s in stems}
        lengths = {len(s) for s in stems}
        if len(rates) != 1:
            raise DataError(f"stems disagree on sample rate: {sorted(rates)}")
        if len(lengths) != 1:
            raise DataError(f"stems disagree on length: {sorted(lengths)}")
        if self.reference_mix is None:
            mixed = sum(w * s.samples for w, s in zip(self.mix_weights, stems))
            object.__setattr__(
                self, "reference_mix",
                AudioClip(mixed, self.speech.sample_rate, id="reference_mix"),
            )
        else:
            if len(self.reference_mix) != len(self.speech) or \
                    self.reference_mix.sample_rate != self.speech.sample_rate:
                raise DataError("reference_mix does not match stem geometry")
            mixed = sum(w * s.samples for w, s in zip(self.mix_weights, stems))
            if np.abs(self.reference_mix.samples - mixed).max() > 1e-6:
                raise DataError(
                    "reference_mix is not the recorded linear combination of stems"
                )

    @property
    def sample_rate(self) -> int:
        return self.speech.sample_rate

    def __len__(self) -> int:
        return len(self.speech)

    def stem(self, name: str) -> AudioClip:
        if name not in STEM_NAMES:
            raise ConfigError(f"unknown stem {name!r}")
        return getattr(self, name)


@dataclass(frozen=True)
class GainCurve:
    """Breakpoint gain automation for one stem.

    Breakpoints are (start_sample, linear_gain) pairs, strictly increasing in
    time and starting at sample 0. Gains are nonnegative; interpolation is
    'hold' (step) or 'linear' (ramp, holding after the last breakpoint).
    """

    breakpoints: tuple[tuple[int, float], ...]
    interpolation: str = "hold"

    def __post_init__(self):
        bps = tuple((int(t), float(g)) for t, g in self.breakpoints)
        if not bps:
            raise ConfigError("gain curve needs at least one breakpoint")
        if bps[0][0] != 0:
            raise ConfigError("first breakpoint must be at sample 0")
        times = [t for t, _ in bps]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ConfigError(f"breakpoint times must strictly increase: {times}")
        if any(g < 0 or not np.isfinite(g) for _, g in bps):
            raise ConfigError("gains must be finite and nonnegative")
        if self.interpolation not in ("hold", "linear"):
            raise ConfigError(f"unknown interpolation {self.interpolation!r}")
        object.__setattr__(self, "breakpoints", bps)

    def gain_at(self, n_samples: int) -> np.ndarray:
        """Interpolated per-sample gain for a clip of ``n_samples``."""
        last = self.breakpoints[-1][0]
        if last >= n_samples:
            raise RangeError(
                f"breakpoint at sample {last} beyond clip end ({n_samples})"
            )
        times = np.array([t for t, _ in self.breakpoints], dtype=np.float64)
        gains = np.array([g for _, g in self.breakpoints], dtype=np.float64)
        idx = np.arange(n_samples, dtype=np.float64)
        if self.interpolation == "linear":
            return np.interp(idx, times, gains)
        step = np.searchsorted(times, idx, side="right") - 1
        return gains[step]

    def to_dict(self) -> dict:
        return {
            "breakpoints": [[t, g] for t, g in self.breakpoints],
            "interpolation": self.interpolation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GainCurve":
        return cls(tuple((t, g) for t, g in d["breakpoints"]), d["interpolation"])


@dataclass(frozen=True)
class GainSchedule:
    """Per-stem gain curves; the ground truth of a synthesized poor mix."""

    speech: GainCurve
    music: GainCurve
    effects: GainCurve

    def curve(self, name: str) -> GainCurve:
        if name not in STEM_NAMES:
            raise ConfigError(f"unknown stem {name!r}")
        return getattr(self, name)

    def to_dict(self) -> dict:
        return {"stems": {name: self.curve(name).to_dict() for name in STEM_NAMES}}

    @classmethod
    def from_dict(cls, d: dict) -> "GainSchedule":
        return cls(**{name: GainCurve.from_dict(d["stems"][name])
                      for name in STEM_NAMES})

    @classmethod
    def identity(cls) -> "GainSchedule":
        one = GainCurve(((0, 1.0),))
        return cls(one, one, one)


def save_schedule(path, schedule: GainSchedule) -> None:
    with open(path, "w") as fh:
        json.dump(schedule.to_dict(), fh, indent=2)


def load_schedule(path) -> GainSchedule:
    with open(path) as fh:
        return GainSchedule.from_dict(json.load(fh))


@dataclass(frozen=True)
class OffsetDistribution:
    """Distribution over loudness offsets in dB: uniform, normal, or empirical."""

    kind: str
    params: tuple[float, ...] = ()

    def __post_init__(self):
        params = tuple(float(p) for p in self.params)
        if any(not np.isfinite(p) for p in params):
            raise ConfigError("distribution parameters must be finite")
        if self.kind == "uniform":
            if len(params) != 2 or params[0] > params[1]:
                raise ConfigError(f"uniform needs (lo, hi) with lo <= hi: {params}")
        elif self.kind == "normal":
            if len(params) != 2 or params[1] < 0:
                raise ConfigError(f"normal needs (mean, std >= 0): {params}")
        elif self.kind == "empirical":
            if not params:
                raise ConfigError("empirical needs a nonempty value list")
        else:
            raise ConfigError(f"unknown distribution kind {self.kind!r}")
        object.__setattr__(self, "params", params)

    def sample(self, rng: np.random.Generator) -> float:
        if self.kind == "uniform":
            lo, hi = self.params
            return float(rng.uniform(lo, hi)) if lo < hi else lo
        if self.kind == "normal":
            return float(rng.normal(*self.params))
        return float(rng.choice(np.array(self.params)))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": list(self.params)}

    @classmethod
    def from_dict(cls, d: dict) -> "OffsetDistribution":
        return cls(d["kind"], tuple(d["params"]))


@dataclass(frozen=True)
class LoudnessPrior:
    """Per-stem-class distribution over loudness offsets (dB)."""

    speech: OffsetDistribution
    music: OffsetDistribution
    effects: OffsetDistribution

    def for_stem(self, name: str) -> OffsetDistribution:
        if name not in STEM_NAMES:
            raise ConfigError(f"unknown stem {name!r}")
        return getattr(self, name)

    @classmethod
    def default(cls) -> "LoudnessPrior":
        # stand-in until measured per-class offset distributions are dropped in
        u = OffsetDistribution("uniform", (-15.0, 5.0))
        return cls(u, u, u)

    @classmethod
    def constant(cls, speech_db: float = 0.0, music_db: float = 0.0,
                 effects_db: float = 0.0) -> "LoudnessPrior":
        return cls(
            OffsetDistribution("uniform", (speech_db, speech_db)),
            OffsetDistribution("uniform", (music_db, music_db)),
            OffsetDistribution("uniform", (effects_db, effects_db)),
        )

    def to_dict(self) -> dict:
        return {name: self.for_stem(name).to_dict() for name in STEM_NAMES}

    @classmethod
    def from_dict(cls, d: dict) -> "LoudnessPrior":
        return cls(**{name: OffsetDistribution.from_dict(d[name])
                      for name in STEM_NAMES})


def apply_gain_schedule(clip: AudioClip, curve: GainCurve) -> AudioClip:
    """Sample-wise multiplication by the interpolated gain curve."""
    return clip.with_samples(clip.samples * curve.gain_at(len(clip)))


def sample_offsets(prior: LoudnessPrior, seed: int) -> dict[str, float]:
    """Per-stem dB offsets drawn deterministically from (prior, seed).

    This is the exact stream consumed by ``cdx_baseline_remix``, exposed so
    callers can verify loudness targets independently.
    """
    rng = np.random.default_rng(seed)
    return {name: prior.for_stem(name).sample(rng) for name in STEM_NAMES}


def synthesize_poor_mix(stems: StemSet, prior: LoudnessPrior, seed: int,
                        breakpoint_prob: float = 0.5) -> tuple[AudioClip, GainSchedule]:
    """Degrade a stem set into a poor mix; returns (mix, ground-truth schedule).

    Each stem gets one static gain drawn from the prior, plus (with
    probability ``breakpoint_prob``) a single mid-clip hold breakpoint.
    Deterministic given the seed.
    """
    rng = np.random.default_rng(seed)
    n = len(stems)
    curves = {}
    for name in STEM_NAMES:
        dist = prior.for_stem(name)
        gain = 10.0 ** (dist.sample(rng) / 20.0)
        breakpoints = [(0, gain)]
        if rng.uniform() < breakpoint_prob:
            mid = int(rng.integers(n // 4, 3 * n // 4))
            gain2 = 10.0 ** (dist.sample(rng) / 20.0)
            breakpoints.append((mid, gain2))
        curves[name] = GainCurve(tuple(breakpoints), "hold")

    schedule = GainSchedule(**curves)
    mixed = np.zeros(n)
    for name in STEM_NAMES:
        mixed += apply_gain_schedule(stems.stem(name), schedule.curve(name)).samples
    peak = float(np.abs(mixed).max())
    if peak > PEAK_LIMIT:
        raise ClippingError(
            f"poor mix peaks at {peak:.3f} (> {PEAK_LIMIT}); renormalize the stems"
        )
    clip_id = stems.speech.id or "clip"
    mix = AudioClip(mixed, stems.sample_rate, id=f"{clip_id}:poor_mix")
    return mix, schedule


def cdx_baseline_remix(stems: StemSet, prior: LoudnessPrior, seed: int) -> AudioClip:
    """Remix by sampling a loudness target per stem and rescaling to hit it.

    A silent stem (integrated loudness at the floor) passes through unscaled
    with a recorded warning. Deterministic given the seed.
    """
    offsets = sample_offsets(prior, seed)
    mixed = np.zeros(len(stems))
    for name in STEM_NAMES:
        stem = stems.stem(name)
        loud = integrated_loudness(stem)
        if loud <= SILENCE_DB:
            log.warning("stem %s of %s is silent; passing through unscaled",
                        name, stem.id or "clip")
            mixed += stem.samples
            continue
        mixed += stem.samples * 10.0 ** (offsets[name] / 20.0)
    peak = float(np.abs(mixed).max())
    if peak > PEAK_LIMIT:
        raise ClippingError(
            f"remix peaks at {peak:.3f} (> {PEAK_LIMIT}); renormalize the stems"
        )
    clip_id = stems.speech.id or "clip"
    return AudioClip(mixed, stems.sample_rate, id=f"{clip_id}:cdx_remix")
