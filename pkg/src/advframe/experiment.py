"""Baseline versus adversarial comparison over several training seeds.

Both models share data, vocabulary, initial parameters and batch order for a
given seed; only the adversarial update differs.  Scores are Fmax over the
null-offset grid on each test set, medians over seeds are reported.
"""
from __future__ import annotations

import json
import logging
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from .align import bucket_by_wer
from .checkpoint import dumps_checkpoint
from .corpus import Corpus, FrameLexicon, build_label_space
from .metrics import (PRPoint, ProbeConfig, check_grid, probe_accuracy, probe_samples,
                      score_arg_id_soft, scored_samples, sweep_dists)
from .optim import TrainingState
from .tagger import NetConfig, Tagger, TrainConfig, Vocabulary, train

log = logging.getLogger(__name__)

MODES = ("baseline", "adversarial")
MODEL_NAMES = {"baseline": "biGRU", "adversarial": "biGRU+adv"}
TEST_SETS = ("in_domain", "gold", "asr")


@dataclass
class ExperimentData:
    train: list[Corpus]
    val: Corpus
    tests: dict[str, Corpus]
    probe: list[Corpus]
    lexicon: FrameLexicon


def data_from_corpora(written: Corpus, spoken_gold: Corpus, spoken_asr: Corpus,
                      lexicon: FrameLexicon) -> ExperimentData:
    """Train on all three training splits; select on noisy spoken validation data.

    The probe contrasts the written and noisy spoken test splits.
    """
    w, g, a = written.split(), spoken_gold.split(), spoken_asr.split()
    if len({written.domain_id, spoken_gold.domain_id}) < 2:
        raise ValueError("the experiment needs written and spoken corpora with different domain ids")
    return ExperimentData(
        train=[w["train"], g["train"], a["train"]],
        val=a["val"],
        tests={"in_domain": w["test"], "gold": g["test"], "asr": a["test"]},
        probe=[w["test"], a["test"]],
        lexicon=lexicon,
    )


@dataclass
class RunRecord:
    seed: int
    mode: str
    best_epoch: int
    log: list[dict]
    scores: dict[str, dict[str, float]]
    buckets: dict[str, dict[str, float]]
    curves: dict[str, list[PRPoint]]
    probe: float
    checkpoint: bytes = field(repr=False, default=b"")

    def to_dict(self) -> dict:
        return {"seed": self.seed, "mode": self.mode, "best_epoch": self.best_epoch,
                "scores": self.scores, "wer_buckets": self.buckets, "probe_accuracy": self.probe,
                "log": self.log}


def bucket_fmax(by_delta: Sequence[Sequence], samples, grid: Sequence[float],
                edges: Sequence[float]) -> dict[str, dict[str, float]]:
    """AI Fmax over the grid inside each WER bucket of ``samples``."""
    groups = bucket_by_wer([float(s.meta["wer"]) for s in samples], edges)
    out = {}
    for name, idx in groups.items():
        if not idx:
            continue
        golds = [samples[i].gold for i in idx]
        best = max((score_arg_id_soft(golds, [preds[i] for i in idx]).f1, -k) for k, preds in enumerate(by_delta))
        out[name] = {"n": len(idx), "ai_fmax": best[0], "delta": grid[-best[1]]}
    return out


def evaluate_run(tagger: Tagger, params, data: ExperimentData, grid, edges):
    scores, curves, buckets = {}, {}, {}
    for name in TEST_SETS:
        samples = scored_samples(data.tests[name])
        dists = tagger.predict_dists(params, samples)
        sweep = sweep_dists(dists, samples, data.lexicon, tagger.labels, grid, keep_all=True)
        fi_best = max(sweep.fi_curve, key=lambda p: p.f1)
        scores[name] = {"ai_fmax": sweep.fmax.f1, "ai_delta": sweep.fmax.delta,
                        "fi_fmax": fi_best.f1, "fi_delta": fi_best.delta, "n": len(samples)}
        curves[name] = sweep.curve
        if name == "asr" and all("wer" in s.meta for s in samples):
            buckets = bucket_fmax(sweep.by_delta, samples, grid, edges)
    return scores, curves, buckets


def run_seed(seed: int, data: ExperimentData, net: NetConfig, train_cfg: TrainConfig,
             probe_cfg: ProbeConfig, grid, edges, on_epoch: Callable[[dict], None] | None = None) -> list[RunRecord]:
    labels = build_label_space(data.lexicon)
    vocab = Vocabulary.build(data.train)
    tagger = Tagger(net, vocab, labels)
    init = tagger.init_params(seed)
    probe_set, probe_domains = probe_samples(data.probe)
    records = []
    for mode in MODES:
        cfg = TrainConfig(**{**train_cfg.to_dict(), "mode": mode, "seed": seed})
        state = TrainingState({k: v.copy() for k, v in init.items()}, cfg.learning_rate, rng_seed=seed)

        def tagged(rec, mode=mode):
            if on_epoch is not None:
                on_epoch({"seed": seed, "mode": mode, **rec})

        result = train(state, tagger, data.train, data.val, data.lexicon, cfg, on_epoch=tagged)
        params = result.state.params
        scores, curves, buckets = evaluate_run(tagger, params, data, grid, edges)
        states = tagger.encode_corpus(params, probe_set)
        acc = probe_accuracy(states, probe_domains, ProbeConfig(**{**probe_cfg.__dict__, "seed": seed}))
        blob = dumps_checkpoint(params, tagger.label_hash,
                                {"tagger": tagger.describe(), "train": cfg.to_dict(), "best_epoch": result.best_epoch})
        records.append(RunRecord(seed, mode, result.best_epoch, result.log, scores, buckets, curves, acc, blob))
        log.info("seed %d %s: asr AI %.4f probe %.4f", seed, mode, scores["asr"]["ai_fmax"], acc)
    return records


def _median(xs: Sequence[float]) -> float:
    return float(statistics.median(xs)) if xs else float("nan")


@dataclass
class ExperimentReport:
    records: list[RunRecord]
    table: dict[str, dict[str, float]]
    in_domain: dict[str, dict[str, float]]
    wer_table: dict[str, dict[str, float]]
    probe: dict[str, float]
    checks: dict[str, bool]

    def to_dict(self) -> dict:
        return {"table": self.table, "in_domain": self.in_domain, "wer_buckets": self.wer_table,
                "probe": self.probe, "checks": self.checks,
                "runs": [r.to_dict() for r in self.records]}


def summarise(records: Sequence[RunRecord]) -> ExperimentReport:
    by_mode = {m: [r for r in records if r.mode == m] for m in MODES}
    table, in_domain, probe = {}, {}, {}
    for mode, runs in by_mode.items():
        name = MODEL_NAMES[mode]
        table[name] = {
            "FI GOLD": _median([r.scores["gold"]["fi_fmax"] for r in runs]),
            "FI ASR": _median([r.scores["asr"]["fi_fmax"] for r in runs]),
            "AI GOLD": _median([r.scores["gold"]["ai_fmax"] for r in runs]),
            "AI ASR": _median([r.scores["asr"]["ai_fmax"] for r in runs]),
        }
        in_domain[name] = {"FI": _median([r.scores["in_domain"]["fi_fmax"] for r in runs]),
                           "AI": _median([r.scores["in_domain"]["ai_fmax"] for r in runs])}
        probe[name] = _median([r.probe for r in runs])
    bucket_names = []
    for r in records:
        bucket_names += [b for b in r.buckets if b not in bucket_names]
    wer_table = {}
    for b in bucket_names:
        row = {"n": max((r.buckets[b]["n"] for r in records if b in r.buckets), default=0)}
        for mode in MODES:
            row[MODEL_NAMES[mode]] = _median([r.buckets[b]["ai_fmax"] for r in by_mode[mode] if b in r.buckets])
        # seeds share init and batch order, so the gain is the median paired difference
        paired = [a.buckets[b]["ai_fmax"] - z.buckets[b]["ai_fmax"]
                  for z in by_mode["baseline"] for a in by_mode["adversarial"]
                  if a.seed == z.seed and b in a.buckets and b in z.buckets]
        row["gain"] = _median(paired)
        wer_table[b] = row
    base, adv = MODEL_NAMES["baseline"], MODEL_NAMES["adversarial"]
    checks = {"asr_ai_adversarial_ge_baseline": table[adv]["AI ASR"] >= table[base]["AI ASR"],
              "probe_adversarial_lt_baseline": probe[adv] < probe[base]}
    if len(wer_table) >= 2:
        gains = [row["gain"] for row in wer_table.values()]
        checks["high_wer_gain_ge_low_wer_gain"] = gains[-1] >= gains[0]
    return ExperimentReport(list(records), table, in_domain, wer_table, probe, checks)


def run_experiment(data: ExperimentData, net: NetConfig, train_cfg: TrainConfig, probe_cfg: ProbeConfig,
                   seeds: Sequence[int], grid, edges,
                   on_epoch: Callable[[dict], None] | None = None) -> ExperimentReport:
    if not seeds:
        raise ValueError("at least one seed is required")
    grid = check_grid(grid)
    records = []
    for seed in seeds:
        records.extend(run_seed(seed, data, net, train_cfg, probe_cfg, grid, edges, on_epoch))
    return summarise(records)


# --- rendering ------------------------------------------------------------------

def _fmt(x: float) -> str:
    return f"{100 * x:.1f}"


def table_tsv(report: ExperimentReport) -> str:
    cols = ["FI GOLD", "FI ASR", "AI GOLD", "AI ASR"]
    lines = ["model\t" + "\t".join(cols) + "\tprobe_accuracy"]
    for name, row in report.table.items():
        lines.append(name + "\t" + "\t".join(_fmt(row[c]) for c in cols) + f"\t{_fmt(report.probe[name])}")
    return "\n".join(lines) + "\n"


def wer_tsv(report: ExperimentReport) -> str:
    base, adv = MODEL_NAMES["baseline"], MODEL_NAMES["adversarial"]
    lines = [f"wer_bucket\tn\t{base}\t{adv}\tgain"]
    for b, row in report.wer_table.items():
        lines.append(f"{b}\t{row['n']}\t{_fmt(row[base])}\t{_fmt(row[adv])}\t{100 * row['gain']:+.1f}")
    return "\n".join(lines) + "\n"


def write_outputs(report: ExperimentReport, out: Path, figures: bool = True) -> list[Path]:
    """Report JSON, delimited tables, per-run checkpoints, logs and P/R figures."""
    from .plotting import plot_bucket_bars, plot_pr_curves, write_curve_tsv

    out.mkdir(parents=True, exist_ok=True)
    written = []

    def put(name: str, text: str) -> None:
        p = out / name
        p.write_text(text, encoding="utf-8")
        written.append(p)

    put("report.json", json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    put("table.tsv", table_tsv(report))
    put("wer_buckets.tsv", wer_tsv(report))
    runs = out / "runs"
    runs.mkdir(exist_ok=True)
    for r in report.records:
        stem = f"seed{r.seed}_{r.mode}"
        ck = runs / f"{stem}.ckpt"
        ck.write_bytes(r.checkpoint)
        written.append(ck)
        lp = runs / f"{stem}.log.jsonl"
        lp.write_text("".join(json.dumps(rec, sort_keys=True) + "\n" for rec in r.log), encoding="utf-8")
        written.append(lp)
        for test, curve in r.curves.items():
            written.append(write_curve_tsv(curve, runs / f"{stem}.{test}.curve.tsv"))
    if figures and report.records:
        first = report.records[0].seed
        for test in TEST_SETS:
            curves = {MODEL_NAMES[r.mode]: r.curves[test] for r in report.records if r.seed == first}
            written.append(plot_pr_curves(curves, out / f"pr_{test}.png",
                                          title=f"AI precision/recall, {test} test, seed {first}"))
        if report.wer_table:
            rows = {b: {k: v for k, v in row.items() if k in MODEL_NAMES.values()}
                    for b, row in report.wer_table.items()}
            written.append(plot_bucket_bars(rows, out / "wer_buckets.png"))
    return written
