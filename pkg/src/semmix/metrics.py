"""The five-metric evaluation suite: MAG, ENV, KLD, delta-IB, and W-dis,
plus file loaders, the per-clip evaluator, and report aggregation.

MAG, ENV, and KLD are reported x100; delta-IB is a x100 cosine gap; W-dis
is reported unscaled. W-dis here is realized as loudness-mass transport
over the frame index per stem class (a documented substitute construction,
flagged in reports via ``scale_note``).
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .dsp_core import (
    AudioClip,
    LoudnessTrajectory,
    StftConfig,
    analytic_envelope,
    loudness_trajectory,
    mel_band_energies,
    read_wav,
    stft,
)
from .errors import (
    DataError,
    DegenerateMassError,
    DomainError,
    NumericError,
    ShapeError,
    ValidationError,
)
from .manifest import Manifest, ManifestEntry
from .mix_synthesis import STEM_NAMES, apply_gain_schedule, load_schedule

log = logging.getLogger("semmix.metrics")

KLD_EPS = 1e-10
SCALE_NOTE = "x100 applied to mag/env/kld; w_dis is frame-index mass transport"
MEL_SPACE_BANDS = 32


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EventDistribution:
    """Categorical distribution over sound-event classes."""

    probs: np.ndarray
    label_space: str

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.ndim != 1 or probs.size < 1:
            raise ShapeError("probs must be a nonempty vector")
        if np.any(probs < 0):
            raise DataError("probs must be nonnegative")
        if abs(probs.sum() - 1.0) > 1e-9:
            raise DataError(f"probs must sum to 1 (got {probs.sum():.12f})")
        probs = np.array(probs, order="C")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @property
    def dim(self) -> int:
        return self.probs.size


@dataclass(frozen=True)
class EmbeddingVector:
    """Dense vector in a shared audio-video embedding space."""

    values: np.ndarray
    space: str
    modality: str

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1 or values.size < 1:
            raise ShapeError("embedding must be a nonempty vector")
        if not np.all(np.isfinite(values)):
            raise DataError("embedding contains non-finite values")
        if float(np.linalg.norm(values)) == 0.0:
            raise NumericError("embedding has zero norm")
        if self.modality not in ("video", "audio"):
            raise DomainError(f"modality must be video or audio, got {self.modality!r}")
        values = np.array(values, order="C")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class StemTrajectories:
    """Loudness trajectories for the three stem classes."""

    speech: LoudnessTrajectory
    music: LoudnessTrajectory
    effects: LoudnessTrajectory

    def for_stem(self, name: str) -> LoudnessTrajectory:
        return getattr(self, name)


@dataclass
class MetricsReport:
    """Per-clip scores. ``delta_ib``/``w_dis`` are None when their inputs
    are unavailable (never silently zero)."""

    clip_id: str
    mag: float
    env: float
    kld: float
    delta_ib: float | None = None
    w_dis: float | None = None
    scale_note: str = SCALE_NOTE
    error: str = ""

    def __post_init__(self):
        for name in ("mag", "env", "kld", "w_dis"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise DataError(f"{name} must be nonnegative, got {v}")


# ---------------------------------------------------------------------------
# the five metrics
# ---------------------------------------------------------------------------

def _check_pair(pred: AudioClip, ref: AudioClip) -> None:
    if len(pred) != len(ref):
        raise ShapeError(f"length mismatch: pred {len(pred)} vs ref {len(ref)}")
    if pred.sample_rate != ref.sample_rate:
        raise ShapeError(
            f"sample-rate mismatch: {pred.sample_rate} vs {ref.sample_rate}"
        )


def mag(pred: AudioClip, ref: AudioClip, cfg: StftConfig) -> float:
    """Mean L1 distance between magnitude STFTs, x100. Symmetric."""
    _check_pair(pred, ref)
    diff = np.abs(stft(pred, cfg).magnitude() - stft(ref, cfg).magnitude())
    return 100.0 * float(diff.mean())


def env(pred: AudioClip, ref: AudioClip) -> float:
    """Mean L1 distance between analytic-signal envelopes, x100. Symmetric."""
    _check_pair(pred, ref)
    diff = np.abs(analytic_envelope(pred) - analytic_envelope(ref))
    return 100.0 * float(diff.mean())


def kld(pred_dist: EventDistribution, ref_dist: EventDistribution) -> float:
    """Reference-relative KL divergence in nats, x100.

    kld = 100 * sum_i ref_i * ln((ref_i + eps) / (pred_i + eps)).
    """
    if pred_dist.label_space != ref_dist.label_space:
        raise DomainError(
            f"label spaces differ: {pred_dist.label_space!r} vs "
            f"{ref_dist.label_space!r}"
        )
    if pred_dist.dim != ref_dist.dim:
        raise DomainError(f"dims differ: {pred_dist.dim} vs {ref_dist.dim}")
    r, p = ref_dist.probs, pred_dist.probs
    return 100.0 * float(np.sum(r * np.log((r + KLD_EPS) / (p + KLD_EPS))))


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise NumericError("cosine of zero-norm vector")
    return float(np.dot(a, b) / (na * nb))


def delta_ib(v: EmbeddingVector, a_ref: EmbeddingVector,
             a_pred: EmbeddingVector) -> float:
    """Audio-video correspondence gap: cosine(v, a_ref) - cosine(v, a_pred), x100."""
    spaces = {v.space, a_ref.space, a_pred.space}
    if len(spaces) != 1:
        raise DomainError(f"embeddings live in different spaces: {sorted(spaces)}")
    if v.modality != "video" or a_ref.modality != "audio" or a_pred.modality != "audio":
        raise DomainError(
            f"need (video, audio, audio) modalities, got "
            f"({v.modality}, {a_ref.modality}, {a_pred.modality})"
        )
    return 100.0 * (_cosine(v.values, a_ref.values) - _cosine(v.values, a_pred.values))


def _trajectory_mass(traj: LoudnessTrajectory) -> np.ndarray:
    # shift by -floor so floored frames carry zero mass
    mass = traj.frames - traj.floor_db
    total = mass.sum()
    if total <= 0.0:
        raise DegenerateMassError(
            f"{traj.stem_class} trajectory is entirely at the loudness floor; "
            "no mass to transport"
        )
    return mass / total


def wasserstein_1d(p_mass: np.ndarray, q_mass: np.ndarray) -> float:
    """W1 between two nonnegative mass vectors over the normalized frame index.

    Masses are L1-normalized; frame i sits at position i/n. Computed via
    cumulative-sum differences.
    """
    p = np.asarray(p_mass, dtype=np.float64)
    q = np.asarray(q_mass, dtype=np.float64)
    if p.shape != q.shape:
        raise ShapeError(f"mass vectors differ in shape: {p.shape} vs {q.shape}")
    if p.sum() <= 0 or q.sum() <= 0:
        raise DegenerateMassError("cannot normalize an all-zero mass vector")
    p = p / p.sum()
    q = q / q.sum()
    return float(np.abs(np.cumsum(p) - np.cumsum(q)).sum() / p.size)


def w_dis(pred: StemTrajectories, ref: StemTrajectories) -> float:
    """Mean per-class W1 transport cost between loudness trajectories."""
    costs = []
    for name in STEM_NAMES:
        tp, tr = pred.for_stem(name), ref.for_stem(name)
        if tp.n_frames != tr.n_frames:
            raise ShapeError(
                f"{name}: frame counts differ ({tp.n_frames} vs {tr.n_frames})"
            )
        costs.append(wasserstein_1d(_trajectory_mass(tp), _trajectory_mass(tr)))
    return float(np.mean(costs))


# ---------------------------------------------------------------------------
# reference event-distribution provider (mel-32 space)
# ---------------------------------------------------------------------------

def mel_event_distribution(clip: AudioClip, cfg: StftConfig,
                           n_bands: int = MEL_SPACE_BANDS) -> EventDistribution:
    """Time-averaged, L1-normalized mel-band energies as a stand-in event
    distribution (space ``mel-<n>``). A silent clip maps to uniform."""
    fmax = clip.sample_rate / 2.0
    energies = mel_band_energies(stft(clip, cfg), n_bands, 0.0, fmax).mean(axis=0)
    total = energies.sum()
    if total <= 0.0:
        probs = np.full(n_bands, 1.0 / n_bands)
    else:
        probs = energies / total
    return EventDistribution(probs / probs.sum(), f"mel-{n_bands}")


# ---------------------------------------------------------------------------
# JSON file formats
# ---------------------------------------------------------------------------

def save_event_distribution(path, dist: EventDistribution) -> None:
    payload = {"space": dist.label_space, "dim": dist.dim,
               "values": dist.probs.tolist()}
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_event_distribution(path) -> EventDistribution:
    with open(path) as fh:
        d = json.load(fh)
    for key in ("space", "dim", "values"):
        if key not in d:
            raise ValidationError(f"{path}: event distribution missing {key!r}")
    values = np.asarray(d["values"], dtype=np.float64)
    if values.size != d["dim"]:
        raise ValidationError(
            f"{path}: dim {d['dim']} != len(values) {values.size}"
        )
    total = values.sum()
    if abs(total - 1.0) > 1e-6:
        raise ValidationError(f"{path}: values sum to {total:.8f}, not 1")
    return EventDistribution(values / total, d["space"])


def save_embedding(path, emb: EmbeddingVector) -> None:
    payload = {"space": emb.space, "dim": emb.dim,
               "modality": emb.modality, "values": emb.values.tolist()}
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_embedding(path) -> EmbeddingVector:
    with open(path) as fh:
        d = json.load(fh)
    for key in ("space", "dim", "values", "modality"):
        if key not in d:
            raise ValidationError(f"{path}: embedding missing {key!r}")
    values = np.asarray(d["values"], dtype=np.float64)
    if values.size != d["dim"]:
        raise ValidationError(f"{path}: dim {d['dim']} != len(values) {values.size}")
    return EmbeddingVector(values, d["space"], d["modality"])


def load_dense_vector(path) -> tuple[np.ndarray, str]:
    """Load a conditioning vector ({space, dim, values}; modality optional)."""
    with open(path) as fh:
        d = json.load(fh)
    for key in ("space", "dim", "values"):
        if key not in d:
            raise ValidationError(f"{path}: vector file missing {key!r}")
    values = np.asarray(d["values"], dtype=np.float64)
    if values.size != d["dim"]:
        raise ValidationError(f"{path}: dim {d['dim']} != len(values) {values.size}")
    return values, d["space"]


# ---------------------------------------------------------------------------
# per-clip evaluation
# ---------------------------------------------------------------------------

@dataclass
class EvalProviders:
    """Everything evaluate_clip needs beyond the manifest entry itself.

    ``pred_field`` names the entry attribute holding the prediction path;
    "auto" prefers ``pred`` when present and falls back to ``poor_mix``.
    """

    stft_cfg: StftConfig = field(default_factory=StftConfig)
    pred_field: str = "poor_mix"
    mel_bands: int = MEL_SPACE_BANDS
    loud_frame: int = 0  # 0 -> stft window_len
    loud_hop: int = 0    # 0 -> stft hop

    def loudness_params(self) -> tuple[int, int]:
        return (self.loud_frame or self.stft_cfg.window_len,
                self.loud_hop or self.stft_cfg.hop)

    def resolve_pred_field(self, entry: ManifestEntry) -> str:
        if self.pred_field == "auto":
            return "pred" if entry.pred else "poor_mix"
        return self.pred_field


def _stem_trajectories(clips: dict[str, AudioClip], frame_len: int, hop: int,
                       curves=None) -> StemTrajectories:
    trajs = {}
    for name in STEM_NAMES:
        clip = clips[name]
        if curves is not None:
            clip = apply_gain_schedule(clip, curves.curve(name))
        trajs[name] = loudness_trajectory(clip, frame_len, hop, stem_class=name)
    return StemTrajectories(**trajs)


def evaluate_clip(entry: ManifestEntry, manifest: Manifest,
                  providers: EvalProviders | None = None) -> MetricsReport:
    """Compute all five metrics for one manifest entry.

    Missing embedding files leave ``delta_ib`` as None; a prediction with no
    per-stem gain source (pred stems, schedule, or pred==reference) leaves
    ``w_dis`` as None with a logged warning. Missing required files are
    reported in one aggregate error.
    """
    providers = providers or EvalProviders()
    pred_rel = getattr(entry, providers.resolve_pred_field(entry), None)
    required = {"pred": pred_rel, "reference_mix": entry.reference_mix}
    missing = [f"{k} ({v})" for k, v in required.items() if not v]
    for k, v in required.items():
        if v and not manifest.resolve(v).exists():
            missing.append(f"{k}: {manifest.resolve(v)}")
    for name, rel in entry.stems.items():
        if not manifest.resolve(rel).exists():
            missing.append(f"stem {name}: {manifest.resolve(rel)}")
    if missing:
        raise DataError(
            f"clip {entry.clip_id!r}: missing inputs: " + "; ".join(missing)
        )

    pred = read_wav(manifest.resolve(pred_rel), id=f"{entry.clip_id}:pred")
    ref = read_wav(manifest.resolve(entry.reference_mix),
                   id=f"{entry.clip_id}:ref")
    cfg = providers.stft_cfg

    mag_score = mag(pred, ref, cfg)
    env_score = env(pred, ref)

    # event distributions: files if both present, else the mel provider
    ed = entry.event_dists
    if "ref" in ed and "pred" in ed:
        ref_dist = load_event_distribution(manifest.resolve(ed["ref"]))
        pred_dist = load_event_distribution(manifest.resolve(ed["pred"]))
    else:
        ref_dist = mel_event_distribution(ref, cfg, providers.mel_bands)
        pred_dist = mel_event_distribution(pred, cfg, providers.mel_bands)
    kld_score = kld(pred_dist, ref_dist)

    emb = entry.embeddings
    dib = None
    if all(k in emb for k in ("video", "audio", "audio_pred")):
        dib = delta_ib(
            load_embedding(manifest.resolve(emb["video"])),
            load_embedding(manifest.resolve(emb["audio"])),
            load_embedding(manifest.resolve(emb["audio_pred"])),
        )
    else:
        log.info("clip %s: embeddings absent; delta_ib not computed", entry.clip_id)

    wd = _w_dis_for_entry(entry, manifest, providers, pred_rel)

    return MetricsReport(entry.clip_id, mag_score, env_score, kld_score, dib, wd)


def _w_dis_for_entry(entry: ManifestEntry, manifest: Manifest,
                     providers: EvalProviders, pred_rel: str) -> float | None:
    frame_len, hop = providers.loudness_params()
    if not all(n in entry.stems for n in STEM_NAMES):
        log.warning("clip %s: stems absent; w_dis not computed", entry.clip_id)
        return None
    clips = {n: read_wav(manifest.resolve(entry.stems[n]), id=n)
             for n in STEM_NAMES}
    ref_traj = _stem_trajectories(clips, frame_len, hop)

    if all(n in entry.pred_stems for n in STEM_NAMES):
        pred_clips = {n: read_wav(manifest.resolve(entry.pred_stems[n]), id=n)
                      for n in STEM_NAMES}
        pred_traj = _stem_trajectories(pred_clips, frame_len, hop)
    elif pred_rel == entry.reference_mix:
        pred_traj = ref_traj
    elif pred_rel == entry.poor_mix and entry.schedule:
        schedule = load_schedule(manifest.resolve(entry.schedule))
        pred_traj = _stem_trajectories(clips, frame_len, hop, curves=schedule)
    else:
        log.warning(
            "clip %s: no per-stem gain source for the prediction; "
            "w_dis not computed", entry.clip_id,
        )
        return None
    return w_dis(pred_traj, ref_traj)


# ---------------------------------------------------------------------------
# report aggregation and serialization
# ---------------------------------------------------------------------------

_CSV_COLUMNS = ("clip_id", "mag", "env", "kld", "delta_ib", "w_dis",
                "scale_note", "error")
_ABSENT = "n/a"


def save_reports_csv(path, reports: list[MetricsReport]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_CSV_COLUMNS)
        for r in sorted(reports, key=lambda r: r.clip_id):
            writer.writerow([
                r.clip_id,
                repr(r.mag), repr(r.env), repr(r.kld),
                _ABSENT if r.delta_ib is None else repr(r.delta_ib),
                _ABSENT if r.w_dis is None else repr(r.w_dis),
                r.scale_note, r.error,
            ])


def load_reports_csv(path) -> list[MetricsReport]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != _CSV_COLUMNS:
            raise ValidationError(f"{path}: unexpected report columns")
        for row in reader:
            out.append(MetricsReport(
                row["clip_id"],
                float(row["mag"]), float(row["env"]), float(row["kld"]),
                None if row["delta_ib"] == _ABSENT else float(row["delta_ib"]),
                None if row["w_dis"] == _ABSENT else float(row["w_dis"]),
                row["scale_note"], row["error"],
            ))
    return out


def save_reports_json(path, reports: list[MetricsReport]) -> None:
    payload = [vars(r) for r in sorted(reports, key=lambda r: r.clip_id)]
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)


def load_reports_json(path) -> list[MetricsReport]:
    with open(path) as fh:
        return [MetricsReport(**d) for d in json.load(fh)]


METRIC_NAMES = ("mag", "env", "kld", "delta_ib", "w_dis")


def aggregate_reports(reports: list[MetricsReport]) -> dict[str, float | None]:
    """Mean of each metric over clips; None metrics are skipped per clip."""
    if not reports:
        raise DataError("cannot aggregate an empty report list")
    out: dict[str, float | None] = {}
    for name in METRIC_NAMES:
        vals = [getattr(r, name) for r in reports if getattr(r, name) is not None]
        out[name] = float(np.mean(vals)) if vals else None
    return out


def format_improvement(baseline: float | None, value: float | None) -> str:
    """Percent improvement vs a lower-is-better baseline, e.g. '+56%'."""
    if baseline is None or value is None or baseline <= 0:
        return _ABSENT
    pct = (baseline - value) / baseline * 100.0
    return f"{round(pct):+d}%"


def render_comparison_table(rows: list[tuple[str, dict[str, float | None]]],
                            baseline_label: str | None = None) -> str:
    """Fixed-width comparison in the shape of the main-results table:
    one row per method, metrics with percent-vs-baseline parentheses."""
    if not rows:
        raise DataError("no rows to render")
    if baseline_label is None:
        baseline_label = rows[0][0]
    baseline = dict(rows)[baseline_label]

    header = ["Method"] + [m.upper() for m in METRIC_NAMES]
    lines = []
    for label, agg in rows:
        cells = [label]
        for name in METRIC_NAMES:
            v = agg.get(name)
            if v is None:
                cells.append(_ABSENT)
            elif label == baseline_label:
                cells.append(f"{v:.2f}")
            else:
                cells.append(f"{v:.2f} ({format_improvement(baseline[name], v)})")
        lines.append(cells)

    widths = [max(len(row[i]) for row in [header] + lines)
              for i in range(len(header))]
    def fmt(row):
        return "  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip()
    sep = "-" * (sum(widths) + 2 * (len(widths) - 1))
    return "\n".join([fmt(header), sep] + [fmt(r) for r in lines])
