"""Event-distribution export: softmaxed tagger logits per clip and side."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .backends import get_tagger
from .errors import ExportError
from .jobs import ExportJob, load_export_manifest, resolve, write_error_record


def event_file(job: ExportJob, clip_id: str, which: str) -> Path:
    return job.out_dir / f"{clip_id}.events.{which}.json"


def _is_valid(path: Path, n_classes: int) -> bool:
    try:
        with open(path) as fh:
            d = json.load(fh)
        values = np.asarray(d["values"], dtype=np.float64)
        return (d.get("dim") == values.size == n_classes
                and bool(np.all(values >= 0))
                and abs(values.sum() - 1.0) <= 1e-6)
    except (OSError, ValueError, KeyError, json.JSONDecodeError):
        return False


def export_event_dist(job: ExportJob) -> dict[str, dict[str, str]]:
    """Write event distributions for the reference and prediction sides of
    each clip. Returns {clip_id: {"ref"|"pred": filename}} for the exported
    files; failures land in errors.jsonl and the job continues.
    """
    clips, base = load_export_manifest(job.manifest_path)
    tagger = get_tagger(job.tagger)
    job.ensure_out()

    produced: dict[str, dict[str, str]] = {}
    for clip in clips:
        sides = {}
        if clip.reference_mix:
            sides["ref"] = clip.reference_mix
        if clip.pred_audio():
            sides["pred"] = clip.pred_audio()
        done = {}
        for which, rel in sides.items():
            out_path = event_file(job, clip.clip_id, which)
            if _is_valid(out_path, tagger.n_classes):
                done[which] = out_path.name
                continue
            try:
                logits = tagger.logits(resolve(base, rel))
            except ExportError as e:
                write_error_record(job.out_dir, "events", clip.clip_id, str(e))
                continue
            # softmax, then exact L1 renormalization
            z = np.exp(logits - logits.max())
            probs = z / z.sum()
            probs = probs / probs.sum()
            assert abs(probs.sum() - 1.0) <= 1e-6
            with open(out_path, "w") as fh:
                json.dump({"space": tagger.label_space, "dim": probs.size,
                           "values": probs.tolist()}, fh)
            done[which] = out_path.name
        if done:
            produced[clip.clip_id] = done
    return produced
