"""Export tests: schema round-trips through the toolkit's loaders, abstention,
determinism, resumability, and per-clip error handling."""

from __future__ import annotations

import json
import warnings

import numpy as np
import pytest
from semmix.metrics import delta_ib, kld, load_embedding, load_event_distribution
from semmix.prompt_kit import AspectId, PromptFamily, load_captions, validate_caption

from embed_export import ExportJob, export_captions, export_embeddings, \
    export_event_dist
from embed_export.captions import caption_file
from embed_export.embedder import embedding_file
from embed_export.errors import ConfigError, DataError
from embed_export.tagger import event_file


def _job(corpus, out, manifest=None, **kw) -> ExportJob:
    return ExportJob(
        manifest_path=manifest or corpus["manifest"],
        out_dir=out,
        templates_dir=corpus["templates"],
        **kw,
    )


# ---------------------------------------------------------------------------
# captions
# ---------------------------------------------------------------------------

def test_caption_counts_and_primary_roundtrip(corpus, tmp_path):
    job = _job(corpus, tmp_path / "cap")
    path = export_captions(job, "Objects", "Minimal")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        captions = load_captions(path)
    assert caught == []
    assert len(captions) == 4
    assert all(c.aspect == AspectId.Objects for c in captions)
    assert all(c.family == PromptFamily.Minimal for c in captions)


def test_captions_validate_with_zero_normalization_changes(corpus, tmp_path):
    job = _job(corpus, tmp_path / "cap")
    for aspect in ("Objects", "Scene", "Tone", "Emotion", "CameraFocus",
                   "SoundSources"):
        for family in ("Focused", "Minimal"):
            path = export_captions(job, aspect, family)
            for c in load_captions(path):
                revalidated = validate_caption(
                    c.text, AspectId(aspect), PromptFamily(family),
                    clip_id=c.clip_id)
                assert revalidated.text == c.text, (aspect, family)
                assert revalidated.abstained == c.abstained


def test_sound_sources_abstention_without_keyframes(corpus, tmp_path):
    job = _job(corpus, tmp_path / "cap")
    path = export_captions(job, "SoundSources", "Focused")
    by_id = {c.clip_id: c for c in load_captions(path)}
    assert by_id["toy000"].abstained is True  # the clip with no keyframes
    assert by_id["toy000"].text == "none"
    assert by_id["toy001"].abstained is False


def test_captions_deterministic(corpus, tmp_path):
    a = export_captions(_job(corpus, tmp_path / "a"), "Scene", "Focused")
    b = export_captions(_job(corpus, tmp_path / "b"), "Scene", "Focused")
    assert a.read_bytes() == b.read_bytes()


def test_captions_resume_keeps_valid_records(corpus, tmp_path):
    out = tmp_path / "cap"
    job = _job(corpus, out)
    path = export_captions(job, "Tone", "Minimal")
    first = path.read_bytes()
    # drop one record; the rerun regenerates only that clip
    lines = [l for l in path.read_text().splitlines()
             if json.loads(l)["clip_id"] != "toy002"]
    path.write_text("\n".join(lines) + "\n")
    export_captions(job, "Tone", "Minimal")
    assert path.read_bytes() == first


def test_captions_missing_template_errors(corpus, tmp_path):
    job = _job(corpus, tmp_path / "cap")
    job.templates_dir = tmp_path / "nowhere"
    with pytest.raises(DataError):
        export_captions(job, "Scene", "Minimal")
    with pytest.raises(ConfigError):
        export_captions(_job(corpus, tmp_path / "cap2"), "Vibes", "Minimal")


def test_caption_per_clip_failure_continues(corpus, tmp_path):
    # break one clip's keyframe path in a manifest copy
    with open(corpus["manifest"]) as fh:
        entries = json.load(fh)
    for entry in entries:
        if entry["clip_id"] == "toy002":
            entry["keyframes"] = ["missing.png"]
    broken = corpus["synth"] / "broken_manifest.json"
    with open(broken, "w") as fh:
        json.dump(entries, fh)
    job = _job(corpus, tmp_path / "cap", manifest=broken)
    path = export_captions(job, "Emotion", "Focused")
    ids = {c.clip_id for c in load_captions(path)}
    assert "toy002" not in ids
    assert len(ids) == 3
    errors = [json.loads(l) for l in
              (tmp_path / "cap" / "errors.jsonl").read_text().splitlines()]
    assert any(e["clip_id"] == "toy002" for e in errors)


# ---------------------------------------------------------------------------
# event distributions
# ---------------------------------------------------------------------------

def test_event_dist_primary_roundtrip_and_normalization(corpus, tmp_path):
    job = _job(corpus, tmp_path / "ev")
    produced = export_event_dist(job)
    assert set(produced) == {"toy000", "toy001", "toy002", "toy003"}
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        for clip_id, refs in produced.items():
            assert set(refs) == {"ref", "pred"}
            ref = load_event_distribution(event_file(job, clip_id, "ref"))
            pred = load_event_distribution(event_file(job, clip_id, "pred"))
            assert abs(ref.probs.sum() - 1.0) < 1e-9
            assert ref.label_space == pred.label_space == "stubtag-24"
            assert kld(pred, ref) >= 0.0
    assert caught == []


def test_event_dist_deterministic(corpus, tmp_path):
    a = _job(corpus, tmp_path / "a")
    b = _job(corpus, tmp_path / "b")
    export_event_dist(a)
    export_event_dist(b)
    for which in ("ref", "pred"):
        fa = event_file(a, "toy001", which).read_bytes()
        fb = event_file(b, "toy001", which).read_bytes()
        assert fa == fb


def test_event_dist_resume_skips_valid_files(corpus, tmp_path):
    job = _job(corpus, tmp_path / "ev")
    export_event_dist(job)
    keep = event_file(job, "toy001", "ref")
    before = keep.read_bytes()
    before_mtime = keep.stat().st_mtime_ns
    # corrupt one file and delete another; only those regenerate
    event_file(job, "toy002", "ref").write_text("{broken")
    event_file(job, "toy003", "pred").unlink()
    export_event_dist(job)
    assert keep.read_bytes() == before
    assert keep.stat().st_mtime_ns == before_mtime
    assert json.load(open(event_file(job, "toy002", "ref")))["dim"] == 24
    assert event_file(job, "toy003", "pred").exists()


# ---------------------------------------------------------------------------
# embeddings
# ---------------------------------------------------------------------------

def test_embeddings_schema_and_modalities(corpus, tmp_path):
    job = _job(corpus, tmp_path / "emb")
    produced = export_embeddings(job)
    # toy000 has no keyframes: no video vector, audio sides still exported
    assert set(produced["toy000"]) == {"audio", "audio_pred"}
    assert set(produced["toy001"]) == {"video", "audio", "audio_pred"}
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        v = load_embedding(embedding_file(job, "toy001", "video"))
        a = load_embedding(embedding_file(job, "toy001", "audio"))
        p = load_embedding(embedding_file(job, "toy001", "audio_pred"))
    assert caught == []
    assert v.modality == "video" and a.modality == p.modality == "audio"
    assert v.space == a.space == p.space == "stubbind-64"
    assert v.dim == a.dim == p.dim == 64
    errors = (tmp_path / "emb" / "errors.jsonl").read_text()
    assert "toy000" in errors  # the missing-video failure was recorded


def test_delta_ib_zero_on_exported_identity_triple(corpus, tmp_path):
    job = _job(corpus, tmp_path / "emb",
               manifest=corpus["identity_manifest"])
    export_embeddings(job)
    v = load_embedding(embedding_file(job, "toy001", "video"))
    a = load_embedding(embedding_file(job, "toy001", "audio"))
    p = load_embedding(embedding_file(job, "toy001", "audio_pred"))
    assert delta_ib(v, a, p) == 0.0
    np.testing.assert_array_equal(a.values, p.values)


def test_embeddings_content_sensitivity(corpus, tmp_path):
    job = _job(corpus, tmp_path / "emb")
    export_embeddings(job)
    a = load_embedding(embedding_file(job, "toy001", "audio"))
    p = load_embedding(embedding_file(job, "toy001", "audio_pred"))
    assert np.abs(a.values - p.values).max() > 0  # poor mix differs from ref
