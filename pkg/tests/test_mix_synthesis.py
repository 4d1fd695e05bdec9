"""Tests for poor-mix synthesis and the loudness-sampling remix baseline."""

from __future__ import annotations

import numpy as np
import pytest

from semmix.dsp_core import AudioClip, integrated_loudness
from semmix.errors import ClippingError, ConfigError, DataError, RangeError
from semmix.mix_synthesis import (
    STEM_NAMES,
    GainCurve,
    GainSchedule,
    LoudnessPrior,
    OffsetDistribution,
    StemSet,
    apply_gain_schedule,
    cdx_baseline_remix,
    load_schedule,
    sample_offsets,
    save_schedule,
    synthesize_poor_mix,
)

SR = 8000


def _stems(seed=0, n=4000, scale=0.25) -> StemSet:
    rng = np.random.default_rng(seed)
    mk = lambda name: AudioClip(rng.uniform(-scale, scale, n), SR, id=name)
    return StemSet(mk("speech"), mk("music"), mk("effects"))


# ---------------------------------------------------------------------------
# types
# ---------------------------------------------------------------------------

def test_stemset_default_reference_is_unit_sum():
    s = _stems()
    expected = s.speech.samples + s.music.samples + s.effects.samples
    np.testing.assert_array_equal(s.reference_mix.samples, expected)


def test_stemset_mismatched_geometry_raises():
    rng = np.random.default_rng(1)
    a = AudioClip(rng.uniform(-1, 1, 100), SR)
    b = AudioClip(rng.uniform(-1, 1, 101), SR)
    with pytest.raises(DataError):
        StemSet(a, b, a)
    c = AudioClip(rng.uniform(-1, 1, 100), 16000)
    with pytest.raises(DataError):
        StemSet(a, a, c)


def test_stemset_inconsistent_reference_raises():
    s = _stems()
    bad = AudioClip(s.reference_mix.samples * 1.5, SR)
    with pytest.raises(DataError):
        StemSet(s.speech, s.music, s.effects, reference_mix=bad)


def test_gain_curve_validation():
    with pytest.raises(ConfigError):
        GainCurve(((5, 1.0),))  # must start at 0
    with pytest.raises(ConfigError):
        GainCurve(((0, 1.0), (0, 2.0)))  # strictly increasing times
    with pytest.raises(ConfigError):
        GainCurve(((0, -0.1),))  # nonnegative gains
    with pytest.raises(ConfigError):
        GainCurve(((0, 1.0),), interpolation="spline")


def test_offset_distribution_validation():
    with pytest.raises(ConfigError):
        OffsetDistribution("uniform", (5.0, -5.0))
    with pytest.raises(ConfigError):
        OffsetDistribution("normal", (0.0, -1.0))
    with pytest.raises(ConfigError):
        OffsetDistribution("empirical", ())
    with pytest.raises(ConfigError):
        OffsetDistribution("poisson", (1.0,))
    OffsetDistribution("uniform", (-12.0, -12.0))  # degenerate constant is fine


# ---------------------------------------------------------------------------
# apply_gain_schedule
# ---------------------------------------------------------------------------

def test_apply_identity_curve():
    clip = _stems().speech
    out = apply_gain_schedule(clip, GainCurve(((0, 1.0),)))
    np.testing.assert_array_equal(out.samples, clip.samples)


def test_apply_hold_halving():
    clip = _stems().speech
    out = apply_gain_schedule(clip, GainCurve(((0, 0.5),)))
    np.testing.assert_array_equal(out.samples, clip.samples * 0.5)


def test_apply_linear_ramp_closed_form():
    n = 512
    clip = AudioClip(np.ones(n), SR)
    curve = GainCurve(((0, 0.0), (n - 1, 1.0)), interpolation="linear")
    out = apply_gain_schedule(clip, curve)
    expected = np.arange(n) / (n - 1)
    np.testing.assert_allclose(out.samples, expected, atol=1e-12)


def test_apply_hold_step_and_range_error():
    n = 100
    clip = AudioClip(np.ones(n), SR)
    out = apply_gain_schedule(clip, GainCurve(((0, 1.0), (40, 2.0))))
    assert np.all(out.samples[:40] == 1.0)
    assert np.all(out.samples[40:] == 2.0)
    with pytest.raises(RangeError):
        apply_gain_schedule(clip, GainCurve(((0, 1.0), (100, 2.0))))


# ---------------------------------------------------------------------------
# synthesize_poor_mix
# ---------------------------------------------------------------------------

def test_poor_mix_zero_offset_prior_is_identity():
    s = _stems()
    mix, schedule = synthesize_poor_mix(s, LoudnessPrior.constant(), seed=1,
                                        breakpoint_prob=0.0)
    np.testing.assert_array_equal(mix.samples, s.reference_mix.samples)
    for name in STEM_NAMES:
        assert schedule.curve(name).breakpoints == ((0, 1.0),)


def test_poor_mix_music_attenuation_closed_form():
    # -12 dB on music only; recovered by subtracting the other stems
    s = _stems()
    prior = LoudnessPrior.constant(music_db=-12.0)
    mix, schedule = synthesize_poor_mix(s, prior, seed=2, breakpoint_prob=0.0)
    g = 10.0 ** (-12.0 / 20.0)
    assert abs(g - 0.251188643) < 1e-9
    residual = mix.samples - s.speech.samples - s.effects.samples
    np.testing.assert_allclose(residual, s.music.samples * g, atol=1e-12)
    assert abs(schedule.music.breakpoints[0][1] - g) < 1e-15


def test_poor_mix_determinism_and_seed_sensitivity():
    s = _stems()
    prior = LoudnessPrior.default()
    mix_a, sched_a = synthesize_poor_mix(s, prior, seed=42)
    mix_b, sched_b = synthesize_poor_mix(s, prior, seed=42)
    assert np.array_equal(mix_a.samples, mix_b.samples)
    assert sched_a == sched_b
    _, sched_c = synthesize_poor_mix(s, prior, seed=43)
    assert sched_a != sched_c


def test_poor_mix_is_sum_of_scheduled_stems():
    s = _stems(seed=5)
    mix, schedule = synthesize_poor_mix(s, LoudnessPrior.default(), seed=7)
    total = np.zeros(len(s))
    for name in STEM_NAMES:
        total += apply_gain_schedule(s.stem(name), schedule.curve(name)).samples
    np.testing.assert_array_equal(mix.samples, total)


def test_poor_mix_schedule_recovery():
    s = _stems(seed=6)
    _, schedule = synthesize_poor_mix(s, LoudnessPrior.default(), seed=8)
    for name in STEM_NAMES:
        curve = schedule.curve(name)
        scheduled = apply_gain_schedule(s.stem(name), curve)
        orig = s.stem(name).samples
        keep = np.abs(orig) > 1e-6
        recovered = scheduled.samples[keep] / orig[keep]
        np.testing.assert_allclose(recovered, curve.gain_at(len(s))[keep], atol=1e-9)


def test_poor_mix_clipping_error():
    s = _stems(scale=0.9)
    prior = LoudnessPrior.constant(9.0, 9.0, 9.0)  # ~2.8x on every stem
    with pytest.raises(ClippingError):
        synthesize_poor_mix(s, prior, seed=3, breakpoint_prob=0.0)


def test_schedule_json_roundtrip(tmp_path):
    s = _stems()
    _, schedule = synthesize_poor_mix(s, LoudnessPrior.default(), seed=11)
    path = tmp_path / "schedule.json"
    save_schedule(path, schedule)
    assert load_schedule(path) == schedule


# ---------------------------------------------------------------------------
# cdx_baseline_remix
# ---------------------------------------------------------------------------

def test_cdx_zero_offsets_is_identity():
    s = _stems()
    out = cdx_baseline_remix(s, LoudnessPrior.constant(), seed=1)
    err = np.sqrt(np.mean((out.samples - s.reference_mix.samples) ** 2))
    assert err < 1e-6


def test_cdx_plus_six_db_doubles_amplitude():
    s = _stems()
    prior = LoudnessPrior.constant(speech_db=6.0206)  # 20*log10(2)
    out = cdx_baseline_remix(s, prior, seed=1)
    residual = out.samples - s.music.samples - s.effects.samples
    np.testing.assert_allclose(residual, 2.0 * s.speech.samples, atol=1e-6)


def test_cdx_hits_sampled_targets():
    s = _stems(seed=9)
    prior = LoudnessPrior.default()
    seed = 21
    offsets = sample_offsets(prior, seed)
    out = cdx_baseline_remix(s, prior, seed)
    # subtract the other scaled stems to isolate each one
    scaled = {n: s.stem(n).samples * 10.0 ** (offsets[n] / 20.0) for n in STEM_NAMES}
    np.testing.assert_allclose(out.samples, sum(scaled.values()), atol=1e-12)
    for name in STEM_NAMES:
        target = integrated_loudness(s.stem(name)) + offsets[name]
        got = integrated_loudness(AudioClip(scaled[name], SR))
        assert abs(got - target) < 0.01


def test_cdx_silent_stem_passthrough():
    rng = np.random.default_rng(10)
    speech = AudioClip(rng.uniform(-0.3, 0.3, 2000), SR, id="speech")
    music = AudioClip(rng.uniform(-0.3, 0.3, 2000), SR, id="music")
    effects = AudioClip(np.zeros(2000), SR, id="effects")
    s = StemSet(speech, music, effects)
    prior = LoudnessPrior.constant(6.0, -6.0, 12.0)
    out = cdx_baseline_remix(s, prior, seed=4)
    expected = (speech.samples * 10 ** (6.0 / 20.0)
                + music.samples * 10 ** (-6.0 / 20.0))
    np.testing.assert_allclose(out.samples, expected, atol=1e-12)


def test_cdx_determinism():
    s = _stems(seed=12)
    prior = LoudnessPrior.default()
    a = cdx_baseline_remix(s, prior, seed=5)
    b = cdx_baseline_remix(s, prior, seed=5)
    assert np.array_equal(a.samples, b.samples)
