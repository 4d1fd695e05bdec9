"""Synthetic stem sets and toy datasets for desk-scale training runs.

The three stem classes occupy distinct frequency bands with distinct
temporal envelopes, so a small model can separate their contributions from
magnitude features. Conditioning embeddings encode each clip's degradation
offsets through a fixed random projection, standing in for caption-derived
text features.
"""

from __future__ import annotations

import numpy as np

from .dsp_core import AudioClip, StftConfig
from .highlight_model import TrainSample
from .mix_synthesis import (
    STEM_NAMES,
    GainSchedule,
    LoudnessPrior,
    OffsetDistribution,
    StemSet,
    synthesize_poor_mix,
)

TOY_SR = 8000
TOY_N_SAMPLES = 2048
EMBED_PROJECTION_SEED = 90210


def _band_noise(rng: np.random.Generator, n: int, sr: int,
                lo: float, hi: float) -> np.ndarray:
    spec = np.fft.rfft(rng.normal(size=n))
    freqs = np.fft.rfftfreq(n, d=1.0 / sr)
    spec[(freqs < lo) | (freqs > hi)] = 0.0
    return np.fft.irfft(spec, n=n)


def _peak_normalize(x: np.ndarray, peak: float) -> np.ndarray:
    m = np.abs(x).max()
    return x * (peak / m) if m > 0 else x


def make_synthetic_stems(clip_id: str, seed: int, sample_rate: int = TOY_SR,
                         n_samples: int = TOY_N_SAMPLES) -> StemSet:
    """Band-limited stems: low-band syllabic noise (speech), mid-band tones
    (music), high-band bursts (effects)."""
    rng = np.random.default_rng(seed)
    t = np.arange(n_samples) / sample_rate

    syllable = 0.6 + 0.4 * np.sin(2 * np.pi * rng.uniform(3.0, 6.0) * t
                                  + rng.uniform(0, 2 * np.pi))
    speech = _band_noise(rng, n_samples, sample_rate, 100.0, 700.0) * syllable

    music = np.zeros(n_samples)
    for _ in range(2):
        f0 = rng.uniform(500.0, 1400.0)
        swell = 0.7 + 0.3 * np.sin(2 * np.pi * rng.uniform(0.5, 2.0) * t
                                   + rng.uniform(0, 2 * np.pi))
        music += np.sin(2 * np.pi * f0 * t + rng.uniform(0, 2 * np.pi)) * swell

    bursts = np.zeros(n_samples)
    for _ in range(2):
        center = rng.integers(n_samples // 8, 7 * n_samples // 8)
        width = rng.integers(n_samples // 16, n_samples // 6)
        idx = np.arange(n_samples)
        bursts += np.exp(-0.5 * ((idx - center) / width) ** 2)
    effects = _band_noise(rng, n_samples, sample_rate, 1800.0, 3600.0) * (0.1 + bursts)

    return StemSet(
        AudioClip(_peak_normalize(speech, 0.3), sample_rate, f"{clip_id}:speech"),
        AudioClip(_peak_normalize(music, 0.3), sample_rate, f"{clip_id}:music"),
        AudioClip(_peak_normalize(effects, 0.3), sample_rate, f"{clip_id}:effects"),
    )


def schedule_embedding(schedule: GainSchedule, c_text: int,
                       projection_seed: int = EMBED_PROJECTION_SEED) -> np.ndarray:
    """Encode the per-stem dB offsets into a dense conditioning vector via a
    fixed random projection (shared across clips)."""
    gains_db = np.array([
        20.0 * np.log10(max(schedule.curve(name).breakpoints[0][1], 1e-6))
        for name in STEM_NAMES
    ])
    proj = np.random.default_rng(projection_seed).normal(
        size=(c_text, len(STEM_NAMES))) / np.sqrt(len(STEM_NAMES))
    return np.tanh(proj @ (gains_db / 12.0))


def toy_prior() -> LoudnessPrior:
    # offsets kept within what a mask bounded at 4.0 can invert
    u = OffsetDistribution("uniform", (-9.0, 6.0))
    return LoudnessPrior(u, u, u)


def make_toy_dataset(n_clips: int, seed: int, c_text: int,
                     sample_rate: int = TOY_SR,
                     n_samples: int = TOY_N_SAMPLES,
                     prior: LoudnessPrior | None = None,
                     breakpoint_prob: float = 0.0) -> list[TrainSample]:
    """Seeded clips with static-gain degradations and schedule-derived
    conditioning embeddings."""
    prior = prior or toy_prior()
    samples = []
    for i in range(n_clips):
        clip_id = f"toy{i:03d}"
        clip_seed = seed * 100003 + i
        stems = make_synthetic_stems(clip_id, clip_seed, sample_rate, n_samples)
        poor, schedule = synthesize_poor_mix(
            stems, prior, seed=clip_seed + 1, breakpoint_prob=breakpoint_prob)
        samples.append(TrainSample(
            poor=poor,
            target=stems.reference_mix,
            text_embedding=schedule_embedding(schedule, c_text),
            clip_id=clip_id,
            stems=stems,
        ))
    return samples


def toy_stft_config() -> StftConfig:
    return StftConfig(window_len=256, hop=64, window="hann", fft_len=256)


def toy_model_dims() -> dict:
    """Model overrides matched to ``toy_stft_config`` for CLI config files."""
    return {
        "d_model": 32, "n_heads": 4, "c_text": 24,
        "n_bins": toy_stft_config().n_bins,
        "conv_channels": [8, 32], "conv_kernels": [16, 8],
    }


def export_toy_manifest(out_dir, n_clips: int, seed: int,
                        sample_rate: int = TOY_SR,
                        n_samples: int = TOY_N_SAMPLES):
    """Write stem WAVs plus a manifest; the starting point for CLI runs."""
    from pathlib import Path

    from .dsp_core import write_wav
    from .manifest import Manifest, ManifestEntry, save_manifest

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(n_clips):
        clip_id = f"toy{i:03d}"
        stems = make_synthetic_stems(clip_id, seed * 100003 + i,
                                     sample_rate, n_samples)
        stem_paths = {}
        for name in STEM_NAMES:
            rel = f"{clip_id}.{name}.wav"
            write_wav(out_dir / rel, stems.stem(name))
            stem_paths[name] = rel
        ref_rel = f"{clip_id}.reference.wav"
        write_wav(out_dir / ref_rel, stems.reference_mix)
        entries.append(ManifestEntry(clip_id=clip_id, stems=stem_paths,
                                     reference_mix=ref_rel))
    manifest = Manifest(entries, base_dir=out_dir)
    path = out_dir / "manifest.json"
    save_manifest(path, manifest)
    return path


def attach_schedule_embeddings(manifest_path, c_text: int) -> None:
    """Derive conditioning vectors from each entry's gain schedule and record
    them in the manifest (stands in for an external embedding exporter)."""
    import json
    from pathlib import Path

    from .manifest import load_manifest, save_manifest
    from .mix_synthesis import load_schedule

    manifest = load_manifest(manifest_path)
    for entry in manifest.entries:
        if not entry.schedule:
            continue
        schedule = load_schedule(manifest.resolve(entry.schedule))
        vec = schedule_embedding(schedule, c_text)
        rel = f"{entry.clip_id}.text_embedding.json"
        with open(Path(manifest.base_dir) / rel, "w") as fh:
            json.dump({"space": "toy-text", "dim": c_text,
                       "values": vec.tolist()}, fh)
        entry.embeddings = {**entry.embeddings, "text": rel}
    save_manifest(manifest_path, manifest)
