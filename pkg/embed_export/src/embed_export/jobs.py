"""Export jobs and a reader for the toolkit's manifest format."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, DataError

ASPECTS = ("Emotion", "Objects", "Scene", "Tone", "SoundSources", "CameraFocus")
FAMILIES = ("Focused", "Minimal")


@dataclass
class ClipRecord:
    """The slice of a manifest entry the exporters need."""

    clip_id: str
    reference_mix: str | None = None
    poor_mix: str | None = None
    pred: str | None = None
    keyframes: list[str] = field(default_factory=list)

    def pred_audio(self) -> str | None:
        return self.pred or self.poor_mix


@dataclass
class ExportJob:
    """One export invocation: inputs, model identifiers, output directory."""

    manifest_path: Path
    out_dir: Path
    captioner: str = "stub:cap-v1"
    tagger: str = "stub:tag-24"
    embedder: str = "stub:bind-64"
    templates_dir: Path | None = None
    device: str = "cpu"
    keyframe_fps: float = 1.0  # consumed by video-decoding backends

    def __post_init__(self):
        self.manifest_path = Path(self.manifest_path)
        self.out_dir = Path(self.out_dir)
        if self.templates_dir is not None:
            self.templates_dir = Path(self.templates_dir)
        if self.keyframe_fps <= 0:
            raise ConfigError(f"keyframe_fps must be > 0, got {self.keyframe_fps}")

    def ensure_out(self) -> None:
        self.out_dir.mkdir(parents=True, exist_ok=True)


def load_export_manifest(path) -> tuple[list[ClipRecord], Path]:
    """Read the manifest (JSON list of entries); returns (clips, base_dir)."""
    path = Path(path)
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise DataError(f"manifest not found: {path}")
    except json.JSONDecodeError as e:
        raise DataError(f"manifest {path} is not valid JSON: {e}")
    if not isinstance(raw, list):
        raise DataError(f"manifest {path} must be a JSON list")
    clips = []
    for d in raw:
        if "clip_id" not in d:
            raise DataError(f"manifest entry without clip_id: {d}")
        clips.append(ClipRecord(
            clip_id=d["clip_id"],
            reference_mix=d.get("reference_mix"),
            poor_mix=d.get("poor_mix"),
            pred=d.get("pred"),
            keyframes=list(d.get("keyframes", [])),
        ))
    if not clips:
        raise DataError(f"manifest {path} lists no clips")
    return clips, path.parent


def resolve(base: Path, rel: str) -> Path:
    p = Path(rel)
    return p if p.is_absolute() else base / p


def write_error_record(out_dir: Path, stage: str, clip_id: str, error: str) -> None:
    """Append a per-clip failure record; the job continues past it."""
    with open(out_dir / "errors.jsonl", "a") as fh:
        fh.write(json.dumps({"stage": stage, "clip_id": clip_id,
                             "error": error}) + "\n")


def update_manifest_copy(job: ExportJob, clips_extra: dict[str, dict]) -> Path:
    """Write a manifest copy into the output directory with the exported
    file references merged in (paths relative to the output manifest)."""
    with open(job.manifest_path) as fh:
        raw = json.load(fh)
    base = job.manifest_path.parent.resolve()
    out_abs = job.out_dir.resolve()

    def rebase(rel: str) -> str:
        p = Path(rel)
        absolute = (p if p.is_absolute() else base / p).resolve()
        try:
            return str(absolute.relative_to(out_abs))
        except ValueError:
            return str(absolute)

    for entry in raw:
        for key in ("reference_mix", "poor_mix", "pred", "schedule"):
            if entry.get(key):
                entry[key] = rebase(entry[key])
        for key in ("stems", "pred_stems", "captions", "embeddings",
                    "event_dists"):
            if entry.get(key):
                entry[key] = {k: rebase(v) for k, v in entry[key].items()}
        if entry.get("keyframes"):
            entry["keyframes"] = [rebase(k) for k in entry["keyframes"]]
        extra = clips_extra.get(entry["clip_id"], {})
        for key, mapping in extra.items():
            merged = dict(entry.get(key, {}))
            merged.update(mapping)
            entry[key] = merged
    out_path = job.out_dir / "manifest.json"
    with open(out_path, "w") as fh:
        json.dump(raw, fh, indent=2)
        fh.write("\n")
    return out_path
