"""Dataset manifests: a JSON list of clip entries tying together stems,
mixes, schedules, captions, and embedding/distribution files.

Paths inside a manifest are relative to the manifest's directory (absolute
paths pass through untouched).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DataError, ValidationError


@dataclass
class ManifestEntry:
    clip_id: str
    stems: dict[str, str] = field(default_factory=dict)
    reference_mix: str | None = None
    poor_mix: str | None = None
    pred: str | None = None
    pred_stems: dict[str, str] = field(default_factory=dict)
    schedule: str | None = None
    captions: dict[str, str] = field(default_factory=dict)
    embeddings: dict[str, str] = field(default_factory=dict)
    event_dists: dict[str, str] = field(default_factory=dict)
    keyframes: list[str] = field(default_factory=list)

    _PATH_FIELDS = ("reference_mix", "poor_mix", "pred", "schedule")
    _MAP_FIELDS = ("stems", "pred_stems", "captions", "embeddings", "event_dists")

    def to_dict(self) -> dict:
        out: dict = {"clip_id": self.clip_id}
        for name in self._PATH_FIELDS:
            if getattr(self, name):
                out[name] = getattr(self, name)
        for name in self._MAP_FIELDS:
            if getattr(self, name):
                out[name] = dict(getattr(self, name))
        if self.keyframes:
            out["keyframes"] = list(self.keyframes)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ManifestEntry":
        if "clip_id" not in d:
            raise ValidationError(f"manifest entry missing clip_id: {d}")
        known = {"clip_id", *cls._PATH_FIELDS, *cls._MAP_FIELDS, "keyframes"}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(
                f"manifest entry {d['clip_id']!r} has unknown keys {sorted(unknown)}"
            )
        return cls(**d)


@dataclass
class Manifest:
    entries: list[ManifestEntry]
    base_dir: Path = Path(".")

    def resolve(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.base_dir / p

    def by_id(self, clip_id: str) -> ManifestEntry:
        for e in self.entries:
            if e.clip_id == clip_id:
                return e
        raise DataError(f"no entry with clip_id {clip_id!r}")


def load_manifest(path) -> Manifest:
    path = Path(path)
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise DataError(f"manifest not found: {path}")
    except json.JSONDecodeError as e:
        raise ValidationError(f"manifest {path} is not valid JSON: {e}")
    if not isinstance(raw, list):
        raise ValidationError(f"manifest {path} must be a JSON list of entries")
    entries = [ManifestEntry.from_dict(d) for d in raw]
    ids = [e.clip_id for e in entries]
    if len(set(ids)) != len(ids):
        raise ValidationError(f"manifest {path} has duplicate clip ids")
    return Manifest(entries, base_dir=path.parent)


def save_manifest(path, manifest: Manifest) -> None:
    path = Path(path)
    with open(path, "w") as fh:
        json.dump([e.to_dict() for e in manifest.entries], fh, indent=2)
        fh.write("\n")
