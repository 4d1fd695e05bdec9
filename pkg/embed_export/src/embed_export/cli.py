"""semmix-export: batch export of captions, event distributions, and
embeddings into the toolkit's file formats."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .captions import export_captions
from .embedder import export_embeddings
from .errors import BackendUnavailable, ConfigError, DataError
from .jobs import ASPECTS, FAMILIES, ExportJob, load_export_manifest, resolve, \
    update_manifest_copy
from .tagger import export_event_dist

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    p = _Parser(prog="semmix-export",
                description="Materialize caption/EventDistribution/"
                            "EmbeddingVector files for the semmix toolkit")
    p.add_argument("stage", choices=("captions", "events", "embeddings", "all"))
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--templates", help="directory of rendered prompt assets "
                                       "(required for captions)")
    p.add_argument("--captioner", default="stub:cap-v1")
    p.add_argument("--tagger", default="stub:tag-24")
    p.add_argument("--embedder", default="stub:bind-64")
    p.add_argument("--device", default="cpu")
    p.add_argument("--keyframe-fps", type=float, default=1.0,
                   help="frame sampling rate for video-decoding backends")
    p.add_argument("--aspect", default="all")
    p.add_argument("--family", default="all")
    p.add_argument("--dry-run", action="store_true",
                   help="validate the manifest and inputs, load no models")
    return p


def _dry_run(job: ExportJob) -> int:
    clips, base = load_export_manifest(job.manifest_path)
    missing = []
    for clip in clips:
        for rel in filter(None, (clip.reference_mix, clip.pred_audio())):
            if not resolve(base, rel).exists():
                missing.append(f"{clip.clip_id}: {rel}")
        for rel in clip.keyframes:
            if not resolve(base, rel).exists():
                missing.append(f"{clip.clip_id}: keyframe {rel}")
    if missing:
        raise DataError("missing inputs: " + "; ".join(missing))
    print(f"dry run ok: {len(clips)} clips, backends "
          f"[{job.captioner}, {job.tagger}, {job.embedder}] untouched")
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        job = ExportJob(
            manifest_path=Path(args.manifest),
            out_dir=Path(args.out),
            captioner=args.captioner,
            tagger=args.tagger,
            embedder=args.embedder,
            templates_dir=Path(args.templates) if args.templates else None,
            device=args.device,
            keyframe_fps=args.keyframe_fps,
        )
        if args.dry_run:
            return _dry_run(job)

        merged: dict[str, dict] = {}
        if args.stage in ("captions", "all"):
            aspects = ASPECTS if args.aspect == "all" else (args.aspect,)
            families = FAMILIES if args.family == "all" else (args.family,)
            caption_refs: dict[str, dict[str, str]] = {}
            for aspect in aspects:
                for family in families:
                    path = export_captions(job, aspect, family)
                    clips, _ = load_export_manifest(job.manifest_path)
                    for clip in clips:
                        caption_refs.setdefault(clip.clip_id, {})[
                            f"{aspect}.{family}"] = path.name
                    print(f"captions {aspect}.{family} -> {path}")
            for clip_id, refs in caption_refs.items():
                merged.setdefault(clip_id, {})["captions"] = refs
        if args.stage in ("events", "all"):
            produced = export_event_dist(job)
            for clip_id, refs in produced.items():
                merged.setdefault(clip_id, {})["event_dists"] = refs
            print(f"event distributions for {len(produced)} clips -> {job.out_dir}")
        if args.stage in ("embeddings", "all"):
            produced = export_embeddings(job)
            for clip_id, refs in produced.items():
                merged.setdefault(clip_id, {})["embeddings"] = refs
            print(f"embeddings for {len(produced)} clips -> {job.out_dir}")

        out_manifest = update_manifest_copy(job, merged)
        print(f"updated manifest -> {out_manifest}")
        errors = job.out_dir / "errors.jsonl"
        if errors.exists():
            n = sum(1 for _ in open(errors))
            print(f"({n} per-clip error record(s) in {errors})", file=sys.stderr)
        return EXIT_OK
    except (ConfigError, BackendUnavailable) as e:
        print(f"semmix-export: config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as e:
        print(f"semmix-export: data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
