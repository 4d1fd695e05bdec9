"""Shared corpus for the export tests: a synthesized toy dataset with
keyframes, rendered prompt templates, and an identity-prediction variant."""

from __future__ import annotations

import json
from pathlib import Path

import pytest
from semmix.cli import main as semmix_main
from semmix.toydata import export_toy_manifest


@pytest.fixture(scope="session")
def corpus(tmp_path_factory) -> dict:
    root = tmp_path_factory.mktemp("corpus")
    data = root / "data"
    export_toy_manifest(data, n_clips=4, seed=11)

    # keyframes for every clip except toy000 (the abstention case)
    with open(data / "manifest.json") as fh:
        entries = json.load(fh)
    for entry in entries[1:]:
        frames = []
        for k in range(2):
            rel = f"{entry['clip_id']}.frame{k}.png"
            (data / rel).write_bytes(
                b"PNGSTUB:" + entry["clip_id"].encode() + bytes([k]))
            frames.append(rel)
        entry["keyframes"] = frames
    with open(data / "manifest.json", "w") as fh:
        json.dump(entries, fh, indent=2)

    synth = root / "synth"
    assert semmix_main(["synth", "--manifest", str(data / "manifest.json"),
                        "--out", str(synth), "--seed", "13"]) == 0

    templates = root / "templates"
    assert semmix_main(["prompts", "--out", str(templates)]) == 0

    # identity variant: the prediction is the reference itself
    with open(synth / "manifest.json") as fh:
        entries = json.load(fh)
    for entry in entries:
        entry["pred"] = entry["reference_mix"]
    identity = root / "identity_manifest.json"
    with open(identity, "w") as fh:
        json.dump(entries, fh, indent=2)
    # paths inside are relative to synth/, so park the copy there
    identity_in_synth = synth / "identity_manifest.json"
    identity.rename(identity_in_synth)

    return {
        "root": root,
        "manifest": synth / "manifest.json",
        "identity_manifest": identity_in_synth,
        "templates": templates,
        "synth": synth,
        "data": data,
    }
