"""Embedding export: one video and one audio vector per clip in a shared
space, plus a prediction-side audio vector when a prediction exists."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .backends import get_embedder
from .errors import ExportError
from .jobs import ExportJob, load_export_manifest, resolve, write_error_record


def embedding_file(job: ExportJob, clip_id: str, which: str) -> Path:
    return job.out_dir / f"{clip_id}.embedding.{which}.json"


def _is_valid(path: Path, dim: int, modality: str, space: str) -> bool:
    try:
        with open(path) as fh:
            d = json.load(fh)
        values = np.asarray(d["values"], dtype=np.float64)
        return (d.get("dim") == values.size == dim
                and d.get("modality") == modality
                and d.get("space") == space
                and float(np.linalg.norm(values)) > 0.0)
    except (OSError, ValueError, KeyError, json.JSONDecodeError):
        return False


def _write(path: Path, space: str, modality: str, values: np.ndarray) -> None:
    with open(path, "w") as fh:
        json.dump({"space": space, "dim": values.size, "modality": modality,
                   "values": values.tolist()}, fh)


def export_embeddings(job: ExportJob) -> dict[str, dict[str, str]]:
    """Write per-clip embeddings: video (keyframes), audio (reference mix),
    audio_pred (prediction/poor mix when present). Returns
    {clip_id: {"video"|"audio"|"audio_pred": filename}}."""
    clips, base = load_export_manifest(job.manifest_path)
    embedder = get_embedder(job.embedder)
    job.ensure_out()

    produced: dict[str, dict[str, str]] = {}
    for clip in clips:
        done: dict[str, str] = {}

        def emit(which: str, modality: str, compute) -> None:
            out_path = embedding_file(job, clip.clip_id, which)
            if _is_valid(out_path, embedder.dim, modality, embedder.space):
                done[which] = out_path.name
                return
            try:
                values = compute()
            except ExportError as e:
                write_error_record(job.out_dir, "embeddings", clip.clip_id,
                                   f"{which}: {e}")
                return
            _write(out_path, embedder.space, modality, values)
            done[which] = out_path.name

        keyframes = [resolve(base, k) for k in clip.keyframes]
        emit("video", "video", lambda: embedder.embed_video(keyframes))
        if clip.reference_mix:
            ref_path = resolve(base, clip.reference_mix)
            emit("audio", "audio", lambda: embedder.embed_audio(ref_path))
        if clip.pred_audio():
            pred_path = resolve(base, clip.pred_audio())
            emit("audio_pred", "audio",
                 lambda: embedder.embed_audio(pred_path))
        if done:
            produced[clip.clip_id] = done
    return produced
