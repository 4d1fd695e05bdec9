"""Caption export: one JSONL record per (clip, aspect, family)."""

from __future__ import annotations

import json
from pathlib import Path

from .backends import ABSTAIN_TOKEN, get_captioner
from .errors import ConfigError, DataError, ExportError
from .jobs import ASPECTS, FAMILIES, ExportJob, load_export_manifest, resolve, \
    write_error_record

CAPTION_KEYS = {"clip_id", "aspect", "family", "text", "abstained"}


def caption_file(job: ExportJob, aspect: str, family: str) -> Path:
    return job.out_dir / f"captions.{aspect}.{family}.jsonl"


def _read_prompt(job: ExportJob, aspect: str, family: str) -> str:
    if job.templates_dir is None:
        raise ConfigError("captions export needs --templates (rendered "
                          "prompt assets)")
    path = job.templates_dir / f"{aspect}.{family}.txt"
    if not path.exists():
        raise DataError(f"missing prompt template {path}")
    return path.read_text(encoding="utf-8")


def _valid_record(d: dict) -> bool:
    if set(d) != CAPTION_KEYS:
        return False
    if d["abstained"] and d["text"] != ABSTAIN_TOKEN:
        return False
    return bool(d["text"])


def _load_existing(path: Path) -> dict[str, dict]:
    """Schema-valid records from a previous run, keyed by clip id."""
    if not path.exists():
        return {}
    kept = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError:
                continue
            if _valid_record(d):
                kept[d["clip_id"]] = d
    return kept


def export_captions(job: ExportJob, aspect: str, family: str) -> Path:
    """Write (or resume) the caption JSONL for one (aspect, family) cell.

    Clips whose records already exist and are schema-valid are skipped;
    per-clip backend failures are appended to errors.jsonl and the job
    continues.
    """
    if aspect not in ASPECTS:
        raise ConfigError(f"unknown aspect {aspect!r}")
    if family not in FAMILIES:
        raise ConfigError(f"unknown family {family!r}")
    clips, base = load_export_manifest(job.manifest_path)
    prompt = _read_prompt(job, aspect, family)
    captioner = get_captioner(job.captioner)
    job.ensure_out()

    out_path = caption_file(job, aspect, family)
    records = _load_existing(out_path)
    for clip in clips:
        if clip.clip_id in records:
            continue
        keyframes = [resolve(base, k) for k in clip.keyframes]
        try:
            text = captioner.caption(prompt, keyframes, clip.clip_id,
                                     aspect, family)
        except ExportError as e:
            write_error_record(job.out_dir, "captions", clip.clip_id, str(e))
            continue
        records[clip.clip_id] = {
            "clip_id": clip.clip_id,
            "aspect": aspect,
            "family": family,
            "text": text,
            "abstained": (aspect == "SoundSources" and family == "Focused"
                          and text == ABSTAIN_TOKEN),
        }
    with open(out_path, "w") as fh:
        for clip_id in sorted(records):
            fh.write(json.dumps(records[clip_id]) + "\n")
    return out_path
