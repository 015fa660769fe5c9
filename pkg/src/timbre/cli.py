"""Command-line entry point: ``timbre <subcommand>``.

Exit codes: 0 success, 2 configuration error, 3 I/O or ingestion error,
4 numeric or training fault (including checkpoint/model mismatches).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import torch

from timbre import __version__
from timbre.augment import EffectConfig
from timbre.corpus.ingest import ingest_irmas, ingest_nsynth, irmas_labels
from timbre.corpus.manifest import (Corpus, LabelSpace, energy_filter, make_splits, read_manifest,
                                    write_manifest)
from timbre.corpus.synth import default_specs, make_polyphonic, synth_corpus
from timbre.errors import CheckpointError, ConfigError, IngestError, TimbreError, TrainingFault
from timbre.evalkit.inference import export_embeddings, load_items, score_entries
from timbre.evalkit.metrics import DEFAULT_GRID
from timbre.evalkit.reports import THRESHOLD_SOURCES, evaluate, write_report, write_scores
from timbre.model.checkpoint import Checkpoint, model_from_checkpoint
from timbre.model.network import ModelConfig, count_params
from timbre.traincore.config import RunConfig
from timbre.traincore.drivers import finetune, pretrain

logger = logging.getLogger("timbre")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_FAULT = 0, 2, 3, 4
SECTIONS = ("corpus", "augment", "model", "train", "eval", "paths", "seed")


# -- configuration -------------------------------------------------------------

@dataclass(frozen=True)
class CorpusSettings:
    n_families: int = 8
    instruments_per_family: int = 8
    notes_per_instrument: int = 8
    note_duration_s: float = 2.0
    mixture_source_notes: int = 8
    n_train_mixtures: int = 400
    n_val_mixtures: int = 50
    n_test_mixtures: int = 200
    k_range: tuple[int, int] = (1, 3)
    val_fraction: float = 0.04
    energy_threshold: float = 1e-4

    def validate(self) -> None:
        if not 2 <= self.n_families <= 8 or self.instruments_per_family < 1:
            raise ConfigError("corpus: n_families must lie in [2, 8] and instruments_per_family >= 1")
        if self.notes_per_instrument < 1 or self.mixture_source_notes < 2:
            raise ConfigError("corpus: need >= 1 note per instrument and >= 2 mixture source notes")
        if self.note_duration_s < 1:
            raise ConfigError("corpus: note_duration_s must be >= 1")
        if min(self.n_train_mixtures, self.n_test_mixtures) < 1 or self.n_val_mixtures < 0:
            raise ConfigError("corpus: mixture counts must be positive")
        lo, hi = self.k_range
        if not 1 <= lo <= hi <= self.n_families:
            raise ConfigError(f"corpus: invalid k_range {self.k_range}")
        if not 0 < self.val_fraction < 1:
            raise ConfigError("corpus: val_fraction must lie in (0, 1)")


@dataclass(frozen=True)
class AugmentSettings:
    concat_prob: float = 0.5
    mixup_prob: float = 0.5
    mixup_alpha: float = 0.3
    effects: EffectConfig = field(default_factory=EffectConfig)


@dataclass(frozen=True)
class EvalSettings:
    win_s: float = 1.0
    overlap: float = 0.5
    threshold_source: str = "test"
    split: str = "test"

    def validate(self) -> None:
        if self.win_s <= 0 or not 0 <= self.overlap < 1:
            raise ConfigError("eval: need win_s > 0 and 0 <= overlap < 1")
        if self.threshold_source not in THRESHOLD_SOURCES:
            raise ConfigError(f"eval: threshold_source must be one of {THRESHOLD_SOURCES}")


@dataclass(frozen=True)
class CliConfig:
    corpus: CorpusSettings = field(default_factory=CorpusSettings)
    augment: AugmentSettings = field(default_factory=AugmentSettings)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: dict = field(default_factory=dict)
    eval: EvalSettings = field(default_factory=EvalSettings)
    paths: dict = field(default_factory=dict)
    seed: int = 0

    def run_config(self, phase: str, **overrides: Any) -> RunConfig:
        section = dict(self.train.get(phase, {}))
        if phase == "pretrain":
            a = self.augment
            section.setdefault("concat_prob", a.concat_prob)
            section.setdefault("mixup_prob", a.mixup_prob)
            section.setdefault("mixup_alpha", a.mixup_alpha)
            section.setdefault("effect_ratio", a.effects.chain_probability)
            section["effects"] = a.effects.to_dict()
        section["model"] = self.model.to_dict()
        section.setdefault("seed", self.seed)
        section.update({k: v for k, v in overrides.items() if v is not None})
        return RunConfig.from_dict(section, phase)


def _dataclass_from(cls, d: Any, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    known = set(cls.__dataclass_fields__)
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kw = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
    try:
        return cls(**kw)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


_TRAIN_KEYS = set(RunConfig.__dataclass_fields__) - {"phase", "model", "effects", "manifest", "labels",
                                                     "root"}
PATH_KEYS = ("pretrain_manifest", "finetune_manifest", "manifest", "labels", "checkpoint")


def parse_config(doc: Any) -> CliConfig:
    """Validate a configuration document; unknown keys anywhere are rejected."""
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a JSON object")
    unknown = set(doc) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
    kw: dict[str, Any] = {}
    if "corpus" in doc:
        kw["corpus"] = _dataclass_from(CorpusSettings, doc["corpus"], "corpus")
    if "augment" in doc:
        a = dict(doc["augment"]) if isinstance(doc["augment"], dict) else doc["augment"]
        if isinstance(a, dict) and "effects" in a:
            a["effects"] = EffectConfig.from_dict(a["effects"])
        kw["augment"] = _dataclass_from(AugmentSettings, a, "augment")
    if "model" in doc:
        kw["model"] = ModelConfig.from_dict(doc["model"])
    if "train" in doc:
        t = doc["train"]
        if not isinstance(t, dict) or set(t) - {"pretrain", "finetune"}:
            raise ConfigError("train: expected an object with 'pretrain' and/or 'finetune'")
        for phase, section in t.items():
            if not isinstance(section, dict):
                raise ConfigError(f"train.{phase}: expected an object")
            bad = set(section) - _TRAIN_KEYS
            if bad:
                raise ConfigError(f"train.{phase}: unknown keys {sorted(bad)}")
        kw["train"] = t
    if "eval" in doc:
        kw["eval"] = _dataclass_from(EvalSettings, doc["eval"], "eval")
    if "paths" in doc:
        if not isinstance(doc["paths"], dict) or not all(isinstance(v, str) for v in doc["paths"].values()):
            raise ConfigError("paths: expected an object of strings")
        bad = set(doc["paths"]) - set(PATH_KEYS)
        if bad:
            raise ConfigError(f"paths: unknown keys {sorted(bad)}")
        kw["paths"] = doc["paths"]
    if "seed" in doc:
        if not isinstance(doc["seed"], int) or isinstance(doc["seed"], bool):
            raise ConfigError("seed must be an integer")
        kw["seed"] = doc["seed"]
    cfg = CliConfig(**kw)
    cfg.corpus.validate()
    cfg.augment.effects.validate()
    cfg.eval.validate()
    try:
        cfg.model.validate()
    except ValueError as exc:
        raise ConfigError(f"model: {exc}") from exc
    for phase in ("pretrain", "finetune"):
        cfg.run_config(phase)
    return cfg


def load_config(path: str | None) -> CliConfig:
    if path is None:
        return CliConfig()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return parse_config(doc)


# -- helpers -------------------------------------------------------------------

def _path(args, cfg: CliConfig, name: str, default: str | None = None) -> str:
    value = getattr(args, name, None) or cfg.paths.get(name) or default
    if value is None:
        raise ConfigError(f"--{name.replace('_', '-')} is required (or set paths.{name})")
    return value


def _corpus(manifest: str, labels: str | None) -> Corpus:
    mpath = Path(manifest)
    if not mpath.is_file():
        raise IngestError(f"manifest not found: {manifest}")
    lpath = Path(labels) if labels else mpath.parent / "labels.json"
    if not lpath.is_file():
        raise IngestError(f"label space not found: {lpath}")
    return Corpus(LabelSpace.load(lpath), read_manifest(mpath), mpath.parent)


def _load_checkpoint(path: str) -> Checkpoint:
    if not Path(path).is_file():
        raise IngestError(f"checkpoint not found: {path}")
    return Checkpoint.load(path)


def _absolute(entry, root: str):
    return replace(entry, path=str((Path(root) / entry.path).resolve()))


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _out(args) -> Path:
    return Path(args.out or ".")


def _say(args, text: str) -> None:
    if not args.quiet:
        print(text)


# -- subcommands ---------------------------------------------------------------

def cmd_synth_data(args, cfg: CliConfig) -> int:
    c = cfg.corpus
    out = _out(args)
    seed = cfg.seed
    specs = default_specs(c.n_families, c.instruments_per_family, seed=seed)
    labels, notes = synth_corpus(specs, c.notes_per_instrument, c.note_duration_s, seed + 1, out,
                                 id_prefix="note_")
    notes = make_splits(notes, c.val_fraction, seed=seed, group_key=lambda e: e.id)
    _, sources = synth_corpus(specs, c.mixture_source_notes, c.note_duration_s, seed + 2, out,
                              id_prefix="src_")
    half = c.mixture_source_notes // 2
    fit_src = [e for e in sources if int(e.id.rsplit("_n", 1)[1]) < half]
    test_src = [e for e in sources if int(e.id.rsplit("_n", 1)[1]) >= half]
    mix_train = make_polyphonic(fit_src, c.n_train_mixtures, seed + 3, out, k_range=c.k_range,
                                root=out, id_prefix="mixtr")
    mix_val = [replace(e, split="val") for e in make_polyphonic(
        fit_src, c.n_val_mixtures, seed + 4, out, k_range=c.k_range, root=out, id_prefix="mixva")]
    mix_test = [replace(e, split="test") for e in make_polyphonic(
        test_src, c.n_test_mixtures, seed + 5, out, k_range=c.k_range, root=out, id_prefix="mixte")]
    labels.save(out / "labels.json")
    write_manifest(out / "pretrain.jsonl", notes)
    write_manifest(out / "finetune.jsonl", mix_train + mix_val + mix_test)
    _say(args, f"families {labels.n_coarse}  instruments {labels.n_fine}  notes {len(notes)}  "
               f"mixtures train/val/test {len(mix_train)}/{len(mix_val)}/{len(mix_test)}")
    _say(args, f"manifest sha256 {_sha256(out / 'finetune.jsonl')[:16]} {_sha256(out / 'pretrain.jsonl')[:16]}")
    return EXIT_OK


def cmd_ingest_nsynth(args, cfg: CliConfig) -> int:
    errors: list = []
    labels, found = ingest_nsynth(args.root, seed=cfg.seed, errors=errors,
                                  val_fraction=cfg.corpus.val_fraction)
    kept = energy_filter(found, cfg.corpus.energy_threshold, root=args.root, errors=errors)
    out = _out(args)
    out.mkdir(parents=True, exist_ok=True)
    labels.save(out / "labels.json")
    entries = [_absolute(e, args.root) for e in kept]
    write_manifest(out / "pretrain.jsonl", entries)
    _say(args, f"notes {len(entries)} (dropped {len(found) - len(kept)} quiet)  "
               f"instruments {labels.n_fine}  families {labels.n_coarse}  errors {len(errors)}")
    for item, msg in errors[:20]:
        logger.warning("skipped %s: %s", item, msg)
    return EXIT_OK


def cmd_ingest_irmas(args, cfg: CliConfig) -> int:
    errors: list = []
    entries = ingest_irmas(args.root, args.mode, errors=errors)
    if args.mode == "train":
        entries = make_splits(entries, cfg.corpus.val_fraction, seed=cfg.seed)
    out = _out(args)
    out.mkdir(parents=True, exist_ok=True)
    labels = irmas_labels()
    labels.save(out / "labels.json")
    entries = [_absolute(e, args.root) for e in entries]
    write_manifest(out / f"irmas_{args.mode}.jsonl", entries)
    _say(args, f"clips {len(entries)}  labels {labels.n_coarse}  errors {len(errors)}")
    return EXIT_OK


def cmd_pretrain(args, cfg: CliConfig) -> int:
    manifest = _path(args, cfg, "manifest", cfg.paths.get("pretrain_manifest"))
    corpus = _corpus(manifest, getattr(args, "labels", None) or cfg.paths.get("labels"))
    run = cfg.run_config("pretrain", epochs=args.epochs, batch_size=args.batch_size)
    out = _out(args)
    result = pretrain(run, corpus, log_path=out / "pretrain_log.jsonl")
    ckpt_path = out / "pretrain.tfv1"
    result.checkpoint.save(ckpt_path)
    _say(args, f"checkpoint {ckpt_path}")
    _say(args, f"final training loss {result.final_loss:.6f}")
    return EXIT_OK


def cmd_finetune(args, cfg: CliConfig) -> int:
    manifest = _path(args, cfg, "manifest", cfg.paths.get("finetune_manifest"))
    corpus = _corpus(manifest, getattr(args, "labels", None) or cfg.paths.get("labels"))
    init = None if args.init == "random" else _load_checkpoint(args.init)
    run = cfg.run_config("finetune", epochs=args.epochs, batch_size=args.batch_size,
                         data_fraction=args.data_fraction, max_lr=args.lr,
                         init="random" if init is None else "checkpoint")
    out = _out(args)
    result = finetune(run, init, corpus, log_path=out / "finetune_log.jsonl")
    ckpt_path = out / "finetune.tfv1"
    result.checkpoint.save(ckpt_path)
    _say(args, f"checkpoint {ckpt_path}  lr {run.resolved_lr():g}  init {args.init}")
    _say(args, f"final training loss {result.final_loss:.6f}")
    return EXIT_OK


def _scores_for(model, corpus: Corpus, split: str, ev: EvalSettings):
    entries = corpus.split(split)
    if not entries:
        raise IngestError(f"manifest has no {split!r} entries")
    waves = load_items(entries, corpus.root, model.cfg.frontend.sample_rate)
    return entries, score_entries(model, entries, corpus.root, corpus.labels.coarse_names,
                                  win_s=ev.win_s, overlap=ev.overlap, waves=waves)


def cmd_eval(args, cfg: CliConfig) -> int:
    from timbre import plotting

    ev = cfg.eval
    if args.threshold_source:
        ev = replace(ev, threshold_source=args.threshold_source)
    if args.split:
        ev = replace(ev, split=args.split)
    manifest = _path(args, cfg, "manifest", cfg.paths.get("finetune_manifest"))
    corpus = _corpus(manifest, getattr(args, "labels", None) or cfg.paths.get("labels"))
    ckpt = _load_checkpoint(_path(args, cfg, "checkpoint"))
    if ckpt.config.head.n_out != corpus.labels.n_coarse:
        raise CheckpointError(f"checkpoint head has {ckpt.config.head.n_out} outputs, "
                              f"label space has {corpus.labels.n_coarse}")
    model = model_from_checkpoint(ckpt)
    entries, test = _scores_for(model, corpus, ev.split, ev)
    val = _scores_for(model, corpus, "val", ev)[1] if ev.threshold_source == "val" else None
    report = evaluate(test, val=val, threshold_source=ev.threshold_source)
    report["checkpoint"] = {"fingerprint": ckpt.fingerprint, "step": ckpt.step}
    report["params"] = count_params(ckpt.config)
    out = _out(args)
    write_scores(out / "scores.jsonl", [e.id for e in entries], test)
    json_path, csv_path = write_report(out, report)
    if not args.no_plots:
        plotting.threshold_sweep(test, out / "threshold_sweep.png", DEFAULT_GRID,
                                 report["best_micro"]["threshold"])
        plotting.per_class_f1([r["name"] for r in report["best_micro"]["per_class"]],
                              [r["f1"] for r in report["best_micro"]["per_class"]], out / "per_class_f1.png")
        if "confusion" in report:
            plotting.confusion(report["confusion"]["matrix"], report["labels"], out / "confusion.png")
    if args.embeddings:
        export_embeddings(ckpt, entries, corpus.root, out / "embeddings.tsv", corpus.labels.coarse_names)
    _say(args, f"micro F1 {report['micro_f1']:.4f} (t={report['best_micro']['threshold']:.2f})  "
               f"macro F1 {report['macro_f1']:.4f} (t={report['best_macro']['threshold']:.2f})  "
               f"LRAP {report['lrap']:.4f}  thresholds from {ev.threshold_source}")
    if "confusion" in report:
        _say(args, f"single-label accuracy {report['confusion']['accuracy']:.4f}")
    _say(args, f"report {json_path}  table {csv_path}")
    return EXIT_OK


_PARAM_KEYS = ("frontend", "encoder_conv", "encoder_bn", "lde", "head", "total")


def cmd_params(args, cfg: CliConfig) -> int:
    if args.checkpoint:
        model_cfg = _load_checkpoint(args.checkpoint).config
    else:
        model_cfg = cfg.model
    if args.n_out is not None:
        model_cfg = model_cfg.with_head(model_cfg.head.kind, args.n_out)
    if args.compare:
        enc = model_cfg.encoder
        rows = {
            "unshared": count_params(replace(model_cfg, encoder=replace(enc, shared_blocks=False))),
            "shared": count_params(replace(model_cfg, encoder=replace(enc, shared_blocks=True))),
        }
    else:
        rows = {"shared" if model_cfg.encoder.shared_blocks else "unshared": count_params(model_cfg)}
    names = list(rows)
    print("component\t" + "\t".join(names))
    for key in _PARAM_KEYS:
        print(key + "\t" + "\t".join(str(rows[n][key]) for n in names))
    if args.compare:
        for key in ("encoder_conv", "total"):
            red = 100.0 * (1.0 - rows["shared"][key] / rows["unshared"][key])
            print(f"reduction {key}\t{red:.1f}%")
    if args.out:
        from timbre import plotting

        out = _out(args)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "params.tsv", "w", encoding="utf-8") as fh:
            fh.write("component\t" + "\t".join(names) + "\n")
            for key in _PARAM_KEYS:
                fh.write(key + "\t" + "\t".join(str(rows[n][key]) for n in names) + "\n")
        plotting.params_comparison(rows, out / "params.png")
    return EXIT_OK


# -- parser --------------------------------------------------------------------

def _global_flags(p: argparse.ArgumentParser, suppress) -> None:
    """Global flags, accepted before or after the subcommand."""
    def d(value):
        return value if suppress is None else suppress
    p.add_argument("--config", default=d(None), help="JSON configuration file")
    p.add_argument("--seed", type=int, default=d(None), help="override the configuration seed")
    p.add_argument("--out", default=d(None), help="output directory (default: current)")
    p.add_argument("--quiet", action="store_true", default=d(False),
                   help="suppress summaries and progress")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="timbre", description=__doc__.splitlines()[0])
    _global_flags(parser, None)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, argparse.SUPPRESS)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("synth-data", parents=[common], help="render the synthetic corpus and mixtures")

    p = sub.add_parser("ingest-nsynth", parents=[common], help="build a manifest from an NSynth tree")
    p.add_argument("root")

    p = sub.add_parser("ingest-irmas", parents=[common], help="build a manifest from an IRMAS tree")
    p.add_argument("root")
    p.add_argument("--mode", choices=("train", "test"), default="train")

    for name, helptext in (("pretrain", "monophonic pre-training"),
                           ("finetune", "multi-label fine-tuning")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--manifest")
        p.add_argument("--labels", help="label space JSON (default: labels.json next to the manifest)")
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch-size", type=int)
        if name == "finetune":
            p.add_argument("--init", default="random", help="'random' or a checkpoint path")
            p.add_argument("--data-fraction", type=float, help="fraction of training groups kept")
            p.add_argument("--lr", type=float, help="override the maximum learning rate")

    p = sub.add_parser("eval", parents=[common], help="clip inference, metrics and figures")
    p.add_argument("--checkpoint")
    p.add_argument("--manifest")
    p.add_argument("--labels")
    p.add_argument("--split", choices=("train", "val", "test"))
    p.add_argument("--threshold-source", choices=THRESHOLD_SOURCES)
    p.add_argument("--embeddings", action="store_true", help="also write embeddings.tsv")
    p.add_argument("--no-plots", action="store_true")

    p = sub.add_parser("params", parents=[common], help="parameter counts per component")
    p.add_argument("--checkpoint")
    p.add_argument("--compare", action="store_true", help="shared vs unshared side by side")
    p.add_argument("--n-out", type=int, help="head outputs (e.g. 11 for the IRMAS label set)")
    return parser


COMMANDS = {
    "synth-data": cmd_synth_data,
    "ingest-nsynth": cmd_ingest_nsynth,
    "ingest-irmas": cmd_ingest_irmas,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "eval": cmd_eval,
    "params": cmd_params,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    torch.set_num_threads(1)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingFault, CheckpointError) as exc:
        print(f"fault: {exc}", file=sys.stderr)
        return EXIT_FAULT
    except (IngestError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except TimbreError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
