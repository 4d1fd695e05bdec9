"""Batch entry points: synthesize poor mixes, render prompts, evaluate,
train, sweep depth, and print comparison reports.

Every subcommand is deterministic given (inputs, seed), stamps its output
directory with the resolved configuration, and follows the exit-code
contract 0=ok, 1=usage/config, 2=data, 3=numeric. Per-clip randomness is
derived from the root seed by hashing the clip id, so worker count and
evaluation order cannot change results. Set SEMMIX_LOG to control verbosity.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .dsp_core import StftConfig, read_wav, write_wav
from .errors import ConfigError, DataError, NumericError, SemmixError
from .highlight_model import (
    ModelConfig,
    TrainConfig,
    TrainSample,
    build_model,
    depth_sweep,
    save_sweep_csv,
    train_toy,
)
from .manifest import Manifest, ManifestEntry, load_manifest, save_manifest
from .metrics import (
    EvalProviders,
    MetricsReport,
    aggregate_reports,
    evaluate_clip,
    load_dense_vector,
    load_reports_json,
    render_comparison_table,
    save_reports_csv,
    save_reports_json,
)
from .mix_synthesis import LoudnessPrior, StemSet, save_schedule, synthesize_poor_mix
from .prompt_kit import ALL_ASPECTS, ALL_FAMILIES, render_prompt, template_name

log = logging.getLogger("semmix.cli")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


def clip_seed(root_seed: int, clip_id: str) -> int:
    """Stable per-clip seed split from the root seed."""
    digest = hashlib.blake2b(f"{root_seed}:{clip_id}".encode(),
                             digest_size=8).digest()
    return int.from_bytes(digest, "little")


@dataclass
class RunConfig:
    """Resolved per-invocation configuration."""

    subcommand: str
    manifest: Path | None = None
    out: Path | None = None
    seed: int = 0
    workers: int = 1
    report_format: str = "csv"
    stft: StftConfig = field(default_factory=StftConfig)
    model_overrides: dict = field(default_factory=dict)
    train_overrides: dict = field(default_factory=dict)
    prior: LoudnessPrior = field(default_factory=LoudnessPrior.default)

    def model_config(self, depth: int | None = None) -> ModelConfig:
        overrides = dict(self.model_overrides)
        if depth is not None:
            overrides["depth"] = depth
        overrides.setdefault("seed", self.seed)
        overrides.setdefault("n_bins", self.stft.n_bins)
        base = ModelConfig().to_dict()
        base.update(overrides)
        return ModelConfig.from_dict(base)

    def train_config(self) -> TrainConfig:
        overrides = dict(self.train_overrides)
        overrides.setdefault("seed", self.seed)
        base = TrainConfig().to_dict()
        base.update(overrides)
        return TrainConfig(**base)

    def stamp(self, extra: dict | None = None) -> None:
        if self.out is None:
            return
        payload = {
            "package_version": __version__,
            "subcommand": self.subcommand,
            "seed": self.seed,
            "workers": self.workers,
            "report_format": self.report_format,
            "stft": self.stft.to_dict(),
            "model_overrides": self.model_overrides,
            "train_overrides": self.train_overrides,
            "prior": self.prior.to_dict(),
        }
        payload.update(extra or {})
        with open(self.out / "run_config.json", "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _load_run_config(args) -> RunConfig:
    cfg = RunConfig(subcommand=args.command)
    if getattr(args, "manifest", None):
        cfg.manifest = Path(args.manifest)
    if getattr(args, "out", None):
        cfg.out = Path(args.out)
        cfg.out.mkdir(parents=True, exist_ok=True)
    cfg.seed = args.seed
    cfg.workers = getattr(args, "workers", 1)
    if cfg.workers < 1:
        raise ConfigError(f"--workers must be >= 1, got {cfg.workers}")
    cfg.report_format = getattr(args, "format", "csv")

    config_path = getattr(args, "config", None)
    if config_path:
        try:
            with open(config_path) as fh:
                raw = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {config_path}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {config_path} is not valid JSON: {e}")
        unknown = set(raw) - {"stft", "model", "train", "prior"}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        if "stft" in raw:
            base = StftConfig().to_dict()
            base.update(raw["stft"])
            cfg.stft = StftConfig.from_dict(base)
        cfg.model_overrides = dict(raw.get("model", {}))
        cfg.train_overrides = dict(raw.get("train", {}))
        if "prior" in raw:
            cfg.prior = LoudnessPrior.from_dict(raw["prior"])
    return cfg


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = _load_run_config(args)
    if cfg.manifest is None or cfg.out is None:
        raise ConfigError("synth needs --manifest and --out")
    manifest = load_manifest(cfg.manifest)
    if not manifest.entries:
        raise DataError(f"manifest {cfg.manifest} lists no clips")

    missing = []
    for entry in manifest.entries:
        for name, rel in entry.stems.items():
            if not manifest.resolve(rel).exists():
                missing.append(f"{entry.clip_id}/{name}: {manifest.resolve(rel)}")
    if missing:
        raise DataError("missing stem files: " + "; ".join(missing))

    out_abs = cfg.out.resolve()
    new_entries = []
    for entry in manifest.entries:
        stems = StemSet(**{
            name: read_wav(manifest.resolve(entry.stems[name]), id=name)
            for name in ("speech", "music", "effects")
        })
        poor, schedule = synthesize_poor_mix(
            stems, cfg.prior, seed=clip_seed(cfg.seed, entry.clip_id))
        poor_rel = f"{entry.clip_id}.poor.wav"
        sched_rel = f"{entry.clip_id}.schedule.json"
        write_wav(cfg.out / poor_rel, poor)
        save_schedule(cfg.out / sched_rel, schedule)

        clone = _rebase_entry(entry, manifest, out_abs)
        if clone.reference_mix is None:
            ref_rel = f"{entry.clip_id}.reference.wav"
            write_wav(cfg.out / ref_rel, stems.reference_mix)
            clone.reference_mix = ref_rel
        clone.poor_mix = poor_rel
        clone.schedule = sched_rel
        new_entries.append(clone)

    out_manifest = cfg.out / "manifest.json"
    save_manifest(out_manifest, Manifest(new_entries, base_dir=cfg.out))
    cfg.stamp({"clips": len(new_entries)})
    print(f"synthesized {len(new_entries)} poor mixes -> {out_manifest}")
    return EXIT_OK


def _rebase_entry(entry: ManifestEntry, manifest: Manifest,
                  new_base: Path) -> ManifestEntry:
    # rewrite paths so the updated manifest resolves from its own directory:
    # out-relative when possible, absolute otherwise
    def rebase(rel: str | None) -> str | None:
        if rel is None:
            return None
        absolute = manifest.resolve(rel).resolve()
        try:
            return str(absolute.relative_to(new_base))
        except ValueError:
            return str(absolute)

    clone = ManifestEntry.from_dict(entry.to_dict())
    for name in clone._PATH_FIELDS:
        setattr(clone, name, rebase(getattr(clone, name)))
    for name in clone._MAP_FIELDS:
        setattr(clone, name, {k: rebase(v) for k, v in getattr(clone, name).items()})
    clone.keyframes = [rebase(k) for k in clone.keyframes]
    return clone


def cmd_prompts(args) -> int:
    cfg = _load_run_config(args)
    if cfg.out is None:
        raise ConfigError("prompts needs --out")
    aspects = ALL_ASPECTS if args.aspect == "all" else tuple(
        a for a in ALL_ASPECTS if a.value == args.aspect)
    families = ALL_FAMILIES if args.family == "all" else tuple(
        f for f in ALL_FAMILIES if f.value == args.family)
    if not aspects:
        raise ConfigError(f"unknown aspect {args.aspect!r}")
    if not families:
        raise ConfigError(f"unknown family {args.family!r}")
    count = 0
    for aspect in aspects:
        for family in families:
            path = cfg.out / template_name(aspect, family)
            path.write_text(render_prompt(aspect, family), encoding="utf-8")
            count += 1
    cfg.stamp({"templates": count})
    print(f"wrote {count} prompt templates -> {cfg.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _load_run_config(args)
    if cfg.manifest is None or cfg.out is None:
        raise ConfigError("evaluate needs --manifest and --out")
    manifest = load_manifest(cfg.manifest)
    if not manifest.entries:
        raise DataError(f"manifest {cfg.manifest} lists no clips")

    providers = EvalProviders(stft_cfg=cfg.stft, pred_field="auto")

    def run_one(entry: ManifestEntry) -> MetricsReport:
        try:
            return evaluate_clip(entry, manifest, providers)
        except SemmixError as e:
            nan = float("nan")
            return MetricsReport(entry.clip_id, nan, nan, nan, None, None,
                                 error=str(e))

    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        reports = sorted(pool.map(run_one, manifest.entries),
                         key=lambda r: r.clip_id)

    failed = [r for r in reports if r.error]
    ok = [r for r in reports if not r.error]
    save_reports_csv(cfg.out / "per_clip.csv", reports)
    if not ok:
        cfg.stamp({"clips": len(reports), "failed": len(failed)})
        raise DataError(
            f"all {len(failed)} clips failed; first error: {failed[0].error}"
        )

    agg = aggregate_reports(ok)
    rows = [("evaluated", agg)]
    # baseline comparison when the evaluated prediction is not the poor mix
    pred_fields = {providers.resolve_pred_field(e) for e in manifest.entries}
    if pred_fields != {"poor_mix"} and all(
            e.poor_mix for e in manifest.entries):
        base_providers = EvalProviders(stft_cfg=cfg.stft, pred_field="poor_mix")
        base_reports = []
        for entry in manifest.entries:
            try:
                base_reports.append(evaluate_clip(entry, manifest, base_providers))
            except SemmixError:
                pass
        if base_reports:
            rows.insert(0, ("poor_mix", aggregate_reports(base_reports)))

    if cfg.report_format == "json":
        save_reports_json(cfg.out / "aggregate.json", ok)
    else:
        save_reports_csv(cfg.out / "aggregate.csv", ok)
    table = render_comparison_table(rows, baseline_label=rows[0][0])
    (cfg.out / "summary.txt").write_text(table + "\n")
    cfg.stamp({"clips": len(reports), "failed": len(failed)})
    print(table)
    if failed:
        print(f"({len(failed)} clip(s) failed; see per_clip.csv)", file=sys.stderr)
    return EXIT_OK


def _manifest_train_samples(manifest: Manifest, cfg: RunConfig,
                            c_text: int) -> list[TrainSample]:
    samples = []
    missing = []
    for entry in manifest.entries:
        if not entry.poor_mix or not entry.reference_mix:
            missing.append(f"{entry.clip_id}: needs poor_mix and reference_mix")
            continue
        poor = read_wav(manifest.resolve(entry.poor_mix), id=entry.clip_id)
        target = read_wav(manifest.resolve(entry.reference_mix),
                          expect_rate=poor.sample_rate)
        emb = None
        if "text" in entry.embeddings:
            values, _space = load_dense_vector(
                manifest.resolve(entry.embeddings["text"]))
            if values.size != c_text:
                raise ConfigError(
                    f"{entry.clip_id}: text embedding width {values.size} != "
                    f"c_text {c_text}"
                )
            emb = values
        stems = None
        if all(n in entry.stems for n in ("speech", "music", "effects")):
            stems = StemSet(**{
                n: read_wav(manifest.resolve(entry.stems[n]), id=n)
                for n in ("speech", "music", "effects")
            })
        samples.append(TrainSample(poor=poor, target=target,
                                   text_embedding=emb,
                                   clip_id=entry.clip_id, stems=stems))
    if missing:
        raise DataError("entries unusable for training: " + "; ".join(missing))
    if not samples:
        raise DataError("manifest has no trainable entries")
    return samples


def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    if cfg.manifest is None or cfg.out is None:
        raise ConfigError("train needs --manifest and --out")
    manifest = load_manifest(cfg.manifest)
    mcfg = cfg.model_config(depth=args.depth)
    tcfg = cfg.train_config()
    samples = _manifest_train_samples(manifest, cfg, mcfg.c_text)

    model = build_model(mcfg)
    trace = train_toy(model, samples, tcfg, cfg.stft,
                      checkpoint_path=cfg.out / "model.ckpt")
    with open(cfg.out / "trace.csv", "w") as fh:
        fh.write("epoch,loss\n")
        for i, loss in enumerate(trace.epoch_losses):
            fh.write(f"{i},{loss!r}\n")
    cfg.stamp({"model": mcfg.to_dict(), "train": tcfg.to_dict(),
               "clips": len(samples)})
    print(f"trained depth={mcfg.depth} on {len(samples)} clips: "
          f"loss {trace.epoch_losses[0]:.5f} -> {trace.epoch_losses[-1]:.5f}")
    return EXIT_OK


def _parse_depths(spec: str) -> list[int]:
    if spec in ("all", ""):
        return list(range(7))
    try:
        return [int(tok) for tok in spec.split(",") if tok != ""]
    except ValueError:
        raise ConfigError(f"bad --depth list {spec!r} (expected e.g. 0,3,6)")


def cmd_sweep(args) -> int:
    cfg = _load_run_config(args)
    if cfg.manifest is None or cfg.out is None:
        raise ConfigError("sweep needs --manifest and --out")
    depths = _parse_depths(args.depth)
    manifest = load_manifest(cfg.manifest)
    mcfg = cfg.model_config()
    tcfg = cfg.train_config()
    samples = _manifest_train_samples(manifest, cfg, mcfg.c_text)

    rows = depth_sweep(samples, depths, tcfg, samples, cfg.stft, mcfg)
    save_sweep_csv(cfg.out / "sweep.csv", rows)
    cfg.stamp({"depths": depths, "model": mcfg.to_dict(),
               "train": tcfg.to_dict(), "clips": len(samples)})
    header = f"{'L':>2} {'MAG':>9} {'ENV':>9} {'KLD':>9} {'W-dis':>9} {'params':>9}"
    print(header)
    for r in rows:
        print(f"{r.depth:>2} {r.mag:>9.3f} {r.env:>9.3f} {r.kld:>9.3f} "
              f"{r.w_dis:>9.5f} {r.param_count:>9}")
    return EXIT_OK


def cmd_report(args) -> int:
    cfg = _load_run_config(args)
    rows = []
    for path in args.reports:
        label = Path(path).stem
        reports = load_reports_json(path)
        rows.append((label, aggregate_reports(reports)))
    if not rows:
        raise DataError("no report files given")
    baseline = args.baseline or rows[0][0]
    if baseline not in dict(rows):
        raise ConfigError(f"baseline {baseline!r} not among {[r[0] for r in rows]}")
    table = render_comparison_table(rows, baseline_label=baseline)
    print(table)
    if cfg.out is not None:
        (cfg.out / "comparison.txt").write_text(table + "\n")
        cfg.stamp({"reports": [str(p) for p in args.reports]})
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser / entry point
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    parser = _Parser(prog="semmix",
                     description="Desk-scale acoustic-highlighting toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, manifest=True):
        if manifest:
            p.add_argument("--manifest", help="dataset manifest (JSON list)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, default=0, help="root seed")
        p.add_argument("--workers", type=int, default=1,
                       help="parallel clip workers")
        p.add_argument("--format", choices=("csv", "json"), default="csv",
                       help="aggregate report format")
        p.add_argument("--config", help="JSON file with stft/model/train/prior "
                                        "overrides")

    p = sub.add_parser("synth", help="synthesize poor mixes from stems")
    common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("prompts", help="render aspect prompt templates")
    common(p, manifest=False)
    p.add_argument("--aspect", default="all")
    p.add_argument("--family", default="all")
    p.set_defaults(func=cmd_prompts)

    p = sub.add_parser("evaluate", help="run the five-metric suite per clip")
    common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("train", help="train the toy highlight model")
    common(p)
    p.add_argument("--depth", type=int, default=None,
                   help="transformer depth override")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="depth sweep under one recipe")
    common(p)
    p.add_argument("--depth", default="all",
                   help="comma-separated depths (default 0..6)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="compare aggregate reports")
    common(p, manifest=False)
    p.add_argument("reports", nargs="*", help="aggregate JSON report files")
    p.add_argument("--baseline", default=None,
                   help="row label to compare against (default: first)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("SEMMIX_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"semmix: config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as e:
        print(f"semmix: numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except DataError as e:
        print(f"semmix: data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
