"""Command-line interface.

Exit status: 0 on success, 1 on invalid input or configuration, 2 when a run
fails at runtime.  Every command writes ``manifest.json`` into ``--out``.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
from dataclasses import replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .align import bucket_by_wer, project_annotations
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, CorpusRef, RunConfig
from .corpus import (BIOError, Corpus, CorpusFormatError, FrameLexicon, LexiconError, Sample,
                     build_label_space, label_space_hash, read_corpus, write_corpus)
from .decode import DecoderConfig, decode_sample
from .experiment import data_from_corpora, run_experiment, table_tsv, wer_tsv, write_outputs
from .metrics import (EvalReport, breakdown_report, check_grid, evaluate_predictions, scored_samples,
                      sweep_delta)
from .optim import TrainingAborted, TrainingState
from .synth import chi_squared, frame_counts, generate
from .tagger import Tagger, TrainConfig, Vocabulary, train

log = logging.getLogger("advframe")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
VALIDATION_ERRORS = (ConfigError, CorpusFormatError, LexiconError, BIOError, CheckpointError,
                     json.JSONDecodeError)


class UsageError(Exception):
    """Bad command-line usage or a missing input file."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# --- helpers ------------------------------------------------------------------

def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _need_file(path: str | None, what: str) -> Path:
    if path is None:
        raise UsageError(f"{what} is required")
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {p}")
    return p


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _load_lexicon(path: str | None) -> FrameLexicon:
    return FrameLexicon.load(_need_file(path, "lexicon"))


def _load_refs(refs: Sequence[CorpusRef], lexicon: FrameLexicon) -> list[Corpus]:
    out = []
    for ref in refs:
        corpus = read_corpus(_need_file(ref.path, "corpus"), lexicon, ref.domain)
        if ref.split is not None:
            parts = corpus.split()
            if ref.split not in parts:
                raise ConfigError(f"{ref.path}: no split named {ref.split!r}")
            corpus = parts[ref.split]
        out.append(corpus)
    return out


def _load_model(path: str | None, lexicon: FrameLexicon) -> tuple[Tagger, dict, dict]:
    labels = build_label_space(lexicon)
    params, header = load_checkpoint(_need_file(path, "checkpoint"), label_space_hash(labels))
    meta = header["meta"]
    if "tagger" not in meta:
        raise CheckpointError("checkpoint carries no model description")
    return Tagger.from_description(meta["tagger"]), params, meta


def _parse_grid(text: str | None, default: Sequence[float]) -> list[float]:
    if text is None:
        return check_grid(default)
    try:
        if ":" in text:
            lo, hi, step = (float(x) for x in text.split(":"))
            n = int(round((hi - lo) / step)) + 1
            grid = [round(lo + k * step, 10) for k in range(n)]
        else:
            grid = [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise UsageError(f"cannot parse delta grid {text!r}: {exc}") from exc
    try:
        return check_grid(grid)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


class Run:
    """Collects inputs and outputs of one command and writes its manifest."""

    def __init__(self, command: str, args: argparse.Namespace, config: RunConfig):
        self.command = command
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.config = config
        self.args = {k: v for k, v in sorted(vars(args).items())
                     if k not in ("out", "func", "log_level") and v is not None}
        self.inputs: dict[str, str] = {}
        self.outputs: list[Path] = []

    def input(self, path: str | Path) -> Path:
        p = Path(path)
        self.inputs[str(path)] = _sha256(p)
        return p

    def output(self, name: str) -> Path:
        p = self.out / name
        self.outputs.append(p)
        return p

    def write_text(self, name: str, text: str) -> Path:
        p = self.output(name)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text, encoding="utf-8")
        return p

    def finish(self, extra: dict | None = None) -> Path:
        manifest = {
            "command": self.command,
            "arguments": self.args,
            "seed": self.config.seed,
            "config": self.config.to_dict(),
            "config_hash": self.config.hash(),
            "inputs": dict(sorted(self.inputs.items())),
            "outputs": {str(p.relative_to(self.out)): _sha256(p) for p in sorted(set(self.outputs))},
            "versions": {"advframe": __version__, "numpy": np.__version__,
                         "python": platform.python_version()},
        }
        if extra:
            manifest.update(extra)
        path = self.out / "manifest.json"
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


def _report_files(run: Run, report: EvalReport, figures: bool, title: str) -> None:
    from .plotting import plot_pr_curves, write_curve_tsv

    run.write_text("report.json", json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    write_curve_tsv(report.curve, run.output("curve.tsv"))
    if figures:
        curves = {"AI": report.curve}
        if report.fi_curve:
            curves["FI"] = report.fi_curve
        plot_pr_curves(curves, run.output("pr_curve.png"), title=title)


def _summary(report: EvalReport) -> str:
    return (f"FI P={report.fi.precision:.4f} R={report.fi.recall:.4f} F={report.fi.f1:.4f}\n"
            f"AI P={report.ai.precision:.4f} R={report.ai.recall:.4f} F={report.ai.f1:.4f}\n"
            f"fmax_delta={report.fmax_delta:g}")


# --- commands -----------------------------------------------------------------

def cmd_gen_synth(args) -> int:
    cfg = _load_config(args)
    cfg = replace(cfg, synth=replace(cfg.synth, seed=cfg.seed))
    run = Run("gen-synth", args, cfg)
    written, gold, asr, lexicon = generate(cfg.synth)
    for name, corpus in (("written", written), ("spoken_gold", gold), ("spoken_asr", asr)):
        write_corpus(corpus, run.output(f"{name}.conll"))
    lexicon.save(run.output("lexicon.json"))
    ids = {s.meta["id"]: s for s in gold}
    ref_tokens = sum(len(ids[s.meta["id"]].tokens) for s in asr)
    corpus_wer = sum(float(s.meta["wer"]) * len(ids[s.meta["id"]].tokens) for s in asr) / max(1, ref_tokens)
    stats = {"sizes": {"written": len(written), "spoken_gold": len(gold), "spoken_asr": len(asr)},
             "asr_excluded": len(gold) - len(asr), "corpus_wer": round(corpus_wer, 6),
             "frame_chi_squared": round(chi_squared(frame_counts(written), frame_counts(gold)), 6),
             "label_space_size": len(build_label_space(lexicon))}
    run.write_text("stats.json", json.dumps(stats, indent=2, sort_keys=True) + "\n")
    run.finish()
    print(json.dumps(stats, sort_keys=True))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config(args)
    if args.mode:
        cfg = replace(cfg, train=replace(cfg.train, mode=args.mode))
    if args.epochs is not None:
        cfg = replace(cfg, train=replace(cfg.train, epochs=args.epochs))
    cfg.check_paths("lexicon", "train")
    lexicon = _load_lexicon(cfg.paths.lexicon)
    train_corpora = _load_refs(cfg.paths.train, lexicon)
    val = _load_refs([cfg.paths.val], lexicon)[0] if cfg.paths.val is not None else None
    if cfg.train.mode == "adversarial" and len({c.domain_id for c in train_corpora}) < 2:
        raise ConfigError("adversarial mode needs training corpora from at least two domains "
                          "(set distinct 'domain' values under paths.train)")
    if max(c.domain_id for c in train_corpora) >= cfg.net.n_domains:
        raise ConfigError(f"domain ids must be < net.n_domains ({cfg.net.n_domains})")
    run = Run("train", args, cfg)
    for ref in (*cfg.paths.train, *([cfg.paths.val] if cfg.paths.val else [])):
        run.input(ref.path)
    run.input(cfg.paths.lexicon)
    tagger = Tagger(cfg.net, Vocabulary.build(train_corpora), build_label_space(lexicon))
    state = TrainingState(tagger.init_params(cfg.seed), cfg.train.learning_rate, rng_seed=cfg.seed)
    train_cfg = replace(cfg.train, seed=cfg.seed)
    log_path = run.output("train_log.jsonl")
    records: list[dict] = []

    def on_epoch(rec):
        records.append(rec)
        log_path.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in records), encoding="utf-8")

    try:
        result = train(state, tagger, train_corpora, val, lexicon, train_cfg, on_epoch=on_epoch)
    except TrainingAborted as exc:
        partial = getattr(exc, "result", None)
        if partial is not None and partial.best_epoch >= 0:
            save_checkpoint(run.output("model.ckpt"), partial.state.params, tagger.label_hash,
                            {"tagger": tagger.describe(), "train": train_cfg.to_dict(),
                             "best_epoch": partial.best_epoch, "aborted": True})
        log_path.touch()
        run.finish({"aborted": str(exc)})
        raise
    log_path.touch()
    save_checkpoint(run.output("model.ckpt"), result.state.params, tagger.label_hash,
                    {"tagger": tagger.describe(), "train": train_cfg.to_dict(), "best_epoch": result.best_epoch})
    run.finish({"best_epoch": result.best_epoch})
    print(f"best epoch {result.best_epoch}; checkpoint {run.out / 'model.ckpt'}")
    return EXIT_OK


def cmd_predict(args) -> int:
    cfg = _load_config(args)
    lexicon_path = args.lexicon or cfg.paths.lexicon
    lexicon = _load_lexicon(lexicon_path)
    tagger, params, _ = _load_model(args.checkpoint or cfg.paths.checkpoint, lexicon)
    corpus = read_corpus(_need_file(args.input, "--input corpus"), lexicon, args.domain)
    decoder = cfg.decoder if args.delta is None else replace(cfg.decoder, delta=args.delta)
    run = Run("predict", args, cfg)
    run.input(args.input)
    run.input(lexicon_path)
    run.input(args.checkpoint or cfg.paths.checkpoint)
    dists = tagger.predict_dists(params, corpus.samples)
    preds = [s.with_gold(decode_sample(d, s, lexicon, decoder, tagger.labels)) for d, s in zip(dists, corpus)]
    write_corpus(preds, run.output("predictions.conll"))
    run.finish()
    print(f"{len(preds)} samples decoded at delta={decoder.delta:g}")
    return EXIT_OK


def _aligned_predictions(gold: Corpus, pred: Corpus) -> list:
    if len(gold) != len(pred):
        raise ConfigError(f"gold has {len(gold)} samples but predictions have {len(pred)}")
    for i, (g, p) in enumerate(zip(gold, pred)):
        if [t.surface for t in g.tokens] != [t.surface for t in p.tokens] or g.target != p.target:
            raise ConfigError(f"sample {i}: prediction tokens or target differ from the gold sample")
        if p.gold is None:
            raise ConfigError(f"sample {i}: prediction carries no labels")
    return [p.gold for p in pred]


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    lexicon_path = args.lexicon or cfg.paths.lexicon
    lexicon = _load_lexicon(lexicon_path)
    gold = read_corpus(_need_file(args.gold, "--gold corpus"), lexicon)
    run = Run("eval", args, cfg)
    run.input(args.gold)
    run.input(lexicon_path)
    if args.pred:
        pred = read_corpus(_need_file(args.pred, "--pred corpus"), lexicon)
        run.input(args.pred)
        keep = [i for i, s in enumerate(gold) if s.gold is not None]
        preds = _aligned_predictions(gold, pred)
        report = evaluate_predictions([gold.samples[i] for i in keep], [preds[i] for i in keep],
                                      cfg.decoder.delta)
    elif args.checkpoint:
        tagger, params, _ = _load_model(args.checkpoint, lexicon)
        run.input(args.checkpoint)
        grid = _parse_grid(args.grid, cfg.experiment.delta_grid)
        samples = scored_samples(gold)
        sweep = sweep_delta(tagger, params, samples, lexicon, grid, cfg.decoder)
        from .metrics import score_arg_id_soft, score_frame_id
        golds = [s.gold for s in samples]
        report = EvalReport(score_frame_id(golds, sweep.predictions), score_arg_id_soft(golds, sweep.predictions),
                            sweep.curve, sweep.fmax.delta, breakdown_report(samples, sweep.predictions),
                            sweep.fi_curve)
    else:
        raise UsageError("eval needs --pred (scored predictions) or --checkpoint (model sweep)")
    _report_files(run, report, not args.no_figures, "Precision/recall")
    run.finish()
    print(_summary(report))
    return EXIT_OK


def cmd_tune_delta(args) -> int:
    cfg = _load_config(args)
    lexicon_path = args.lexicon or cfg.paths.lexicon
    lexicon = _load_lexicon(lexicon_path)
    tagger, params, _ = _load_model(args.checkpoint or cfg.paths.checkpoint, lexicon)
    corpus = read_corpus(_need_file(args.corpus, "--corpus"), lexicon)
    grid = _parse_grid(args.grid, cfg.experiment.delta_grid)
    run = Run("tune-delta", args, cfg)
    run.input(args.corpus)
    run.input(lexicon_path)
    run.input(args.checkpoint or cfg.paths.checkpoint)
    sweep = sweep_delta(tagger, params, corpus, lexicon, grid, cfg.decoder)
    from .plotting import plot_pr_curves, write_curve_tsv
    write_curve_tsv(sweep.curve, run.output("curve.tsv"))
    result = {"fmax_delta": sweep.fmax.delta, "fmax": sweep.fmax.f1,
              "precision": sweep.fmax.precision, "recall": sweep.fmax.recall}
    run.write_text("tune.json", json.dumps(result, indent=2, sort_keys=True) + "\n")
    if not args.no_figures:
        plot_pr_curves({"AI": sweep.curve}, run.output("pr_curve.png"))
    run.finish(result)
    print(f"fmax_delta={sweep.fmax.delta:g} fmax={sweep.fmax.f1:.4f}")
    return EXIT_OK


def _read_hypotheses(path: Path) -> list[list[str]]:
    return [line.split() for line in path.read_text(encoding="utf-8").splitlines()]


def cmd_align_project(args) -> int:
    cfg = _load_config(args)
    lexicon_path = args.lexicon or cfg.paths.lexicon
    lexicon = _load_lexicon(lexicon_path)
    ref = read_corpus(_need_file(args.ref, "--ref corpus"), lexicon)
    hyps = _read_hypotheses(_need_file(args.hyp, "--hyp transcripts"))
    if len(hyps) != len(ref):
        raise ConfigError(f"{len(ref)} reference samples but {len(hyps)} hypothesis lines")
    run = Run("align-project", args, cfg)
    for p in (args.ref, args.hyp, lexicon_path):
        run.input(p)
    projected: list[Sample] = []
    wers, excluded = [], []
    totals: dict[str, int] = {}
    for i, (sample, hyp) in enumerate(zip(ref, hyps)):
        if sample.gold is None:
            raise ConfigError(f"reference sample {i} has no gold annotation to project")
        proj = project_annotations(sample, hyp)
        for k, v in proj.stats.items():
            totals[k] = totals.get(k, 0) + int(v)
        if proj.excluded:
            excluded.append(i)
            continue
        projected.append(proj.sample)
        wers.append(proj.wer)
    write_corpus(projected, run.output("projected.conll"))
    edges = cfg.experiment.wer_edges
    buckets = {k: len(v) for k, v in bucket_by_wer(wers, edges).items()}
    n_ref = sum(len(s.tokens) for s in ref)
    errors = totals.get("substitute", 0) + totals.get("delete", 0) + totals.get("insert", 0)
    stats = {"corpus_wer": round(errors / max(1, n_ref), 6), "samples": len(ref),
             "projected": len(projected), "excluded": excluded, "counts": dict(sorted(totals.items())),
             "wer_buckets": buckets}
    run.write_text("projection_stats.json", json.dumps(stats, indent=2, sort_keys=True) + "\n")
    run.finish()
    print(f"corpus WER {stats['corpus_wer']:.4f}; {len(projected)} projected, {len(excluded)} excluded")
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = _load_config(args)
    if args.seeds:
        try:
            seeds = tuple(int(s) for s in args.seeds.split(","))
        except ValueError as exc:
            raise UsageError(f"--seeds must be comma-separated integers: {exc}") from exc
        cfg = replace(cfg, experiment=replace(cfg.experiment, seeds=seeds))
    if args.epochs is not None:
        cfg = replace(cfg, experiment=replace(cfg.experiment, epochs=args.epochs))
    run = Run("experiment", args, cfg)
    if args.data:
        d = Path(args.data)
        lexicon = FrameLexicon.load(run.input(_need_file(str(d / "lexicon.json"), "lexicon")))
        corpora = [read_corpus(run.input(_need_file(str(d / f"{n}.conll"), n)), lexicon, dom)
                   for n, dom in (("written", 0), ("spoken_gold", 1), ("spoken_asr", 1))]
        data = data_from_corpora(*corpora, lexicon)
    else:
        synth = replace(cfg.synth, seed=cfg.seed)
        cfg = replace(cfg, synth=synth)
        run.config = cfg
        data = data_from_corpora(*generate(synth))

    def on_epoch(rec):
        log.info("seed %s %s epoch %s lambda=%.4f loss=%.4f val_ai=%s", rec["seed"], rec["mode"], rec["epoch"],
                 rec["lambda"], rec["loss_frame"], rec.get("val_ai"))

    train_cfg = replace(cfg.train, epochs=cfg.experiment.epochs)
    report = run_experiment(data, cfg.net, train_cfg, cfg.probe, cfg.experiment.seeds,
                            cfg.experiment.delta_grid, cfg.experiment.wer_edges, on_epoch)
    run.outputs.extend(write_outputs(report, run.out, cfg.experiment.figures))
    run.finish({"checks": report.checks})
    sys.stdout.write(table_tsv(report))
    sys.stdout.write(wer_tsv(report))
    print(json.dumps(report.checks, sort_keys=True))
    return EXIT_OK


# --- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, help="random seed (overrides the config)")
    common.add_argument("--config", help="TOML run configuration")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--log-level", default="WARNING", help="logging level (default WARNING)")

    parser = _Parser(prog="advframe", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"advframe {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name: str, func: Callable, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, parents=[common], help=help_text, description=help_text)
        p.set_defaults(func=func)
        return p

    add("gen-synth", cmd_gen_synth, "generate the synthetic written/spoken/ASR corpora and lexicon")

    p = add("train", cmd_train, "train a tagger from the corpora named in the config")
    p.add_argument("--mode", choices=["baseline", "adversarial"])
    p.add_argument("--epochs", type=int)

    p = add("predict", cmd_predict, "decode a corpus with a trained checkpoint")
    p.add_argument("--checkpoint")
    p.add_argument("--lexicon")
    p.add_argument("--input", required=True)
    p.add_argument("--domain", type=int, default=0)
    p.add_argument("--delta", type=float, help="null offset (overrides decoder.delta)")

    p = add("eval", cmd_eval, "score predictions, or sweep a checkpoint over the null offset")
    p.add_argument("--gold", required=True)
    p.add_argument("--pred")
    p.add_argument("--checkpoint")
    p.add_argument("--lexicon")
    p.add_argument("--grid", help="deltas as 'lo:hi:step' or a comma list")
    p.add_argument("--no-figures", action="store_true")

    p = add("tune-delta", cmd_tune_delta, "find the null offset with the best argument F1")
    p.add_argument("--checkpoint")
    p.add_argument("--lexicon")
    p.add_argument("--corpus", required=True)
    p.add_argument("--grid", help="deltas as 'lo:hi:step' or a comma list")
    p.add_argument("--no-figures", action="store_true")

    p = add("align-project", cmd_align_project, "align hypothesis transcripts and project gold annotations")
    p.add_argument("--ref", required=True)
    p.add_argument("--hyp", required=True, help="one whitespace-tokenised hypothesis per line")
    p.add_argument("--lexicon")

    p = add("experiment", cmd_experiment, "compare baseline and adversarial training over several seeds")
    p.add_argument("--data", help="directory written by gen-synth (default: generate from [synth])")
    p.add_argument("--seeds", help="comma-separated training seeds (overrides experiment.seeds)")
    p.add_argument("--epochs", type=int, help="training epochs per run (overrides experiment.epochs)")
    return parser


def _attach_grid_values(argv: Sequence[str]) -> list[str]:
    """``--grid -0.4:0.4:0.1`` becomes ``--grid=-0.4:0.4:0.1``; argparse would read the value as an option."""
    out: list[str] = []
    it = iter(argv)
    for arg in it:
        if arg == "--grid":
            value = next(it, None)
            out.append(arg if value is None else f"--grid={value}")
        else:
            out.append(arg)
    return out


def main(argv: Sequence[str] | None = None) -> int:
    argv = _attach_grid_values(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"advframe: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, *VALIDATION_ERRORS) as exc:
        print(f"advframe: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except TrainingAborted as exc:
        print(f"advframe: training aborted: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        log.debug("runtime failure", exc_info=True)
        print(f"advframe: runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
