"""CLI tests: stages, dry run, manifest update, and the full loop back into
the toolkit's evaluator."""

from __future__ import annotations

import json

from semmix.cli import main as semmix_main
from semmix.metrics import load_reports_csv

from embed_export.cli import main


def test_dry_run_validates_without_writing(corpus, tmp_path):
    out = tmp_path / "dry"
    assert main(["all", "--manifest", str(corpus["manifest"]),
                 "--out", str(out), "--templates", str(corpus["templates"]),
                 "--dry-run"]) == 0
    assert not out.exists() or not any(out.iterdir())


def test_dry_run_missing_inputs_exit_2(corpus, tmp_path):
    with open(corpus["manifest"]) as fh:
        entries = json.load(fh)
    entries[0]["keyframes"] = ["gone.png"]
    broken = corpus["synth"] / "dry_broken.json"
    with open(broken, "w") as fh:
        json.dump(entries, fh)
    assert main(["all", "--manifest", str(broken), "--out",
                 str(tmp_path / "dry"), "--templates",
                 str(corpus["templates"]), "--dry-run"]) == 2


def test_unknown_backend_exit_1(corpus, tmp_path):
    assert main(["events", "--manifest", str(corpus["manifest"]),
                 "--out", str(tmp_path / "o"),
                 "--tagger", "bogus:nope"]) == 1


def test_hf_backend_unavailable_exit_1(corpus, tmp_path):
    assert main(["embeddings", "--manifest", str(corpus["manifest"]),
                 "--out", str(tmp_path / "o"),
                 "--embedder", "hf:some/model"]) == 1


def test_full_export_updates_manifest_and_feeds_evaluator(corpus, tmp_path):
    out = tmp_path / "export"
    assert main(["all", "--manifest", str(corpus["identity_manifest"]),
                 "--out", str(out), "--templates",
                 str(corpus["templates"])]) == 0

    with open(out / "manifest.json") as fh:
        entries = json.load(fh)
    by_id = {e["clip_id"]: e for e in entries}
    assert set(by_id["toy001"]["event_dists"]) == {"ref", "pred"}
    assert set(by_id["toy001"]["embeddings"]) == {"video", "audio", "audio_pred"}
    assert len(by_id["toy001"]["captions"]) == 12

    # the updated manifest drives the toolkit's evaluator end to end:
    # delta_ib is now populated (identity prediction -> 0) and KLD comes
    # from the exported distributions
    eval_out = tmp_path / "eval"
    cfg = tmp_path / "toy.json"
    cfg.write_text(json.dumps({
        "stft": {"window_len": 256, "hop": 64, "window": "hann",
                 "fft_len": 256}}))
    assert semmix_main(["evaluate", "--manifest", str(out / "manifest.json"),
                        "--out", str(eval_out), "--config", str(cfg)]) == 0
    reports = load_reports_csv(eval_out / "per_clip.csv")
    with_video = [r for r in reports if r.clip_id != "toy000"]
    assert with_video and all(r.delta_ib == 0.0 for r in with_video)
    assert all(abs(r.mag) < 1e-12 for r in reports)  # identity prediction
