"""Frame and argument identification scores, null-offset sweeps, domain probe, breakdowns."""
from __future__ import annotations

import logging
import statistics
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from . import autodiff as ad
from .align import DEFAULT_WER_EDGES, bucket_by_wer
from .corpus import Corpus, FrameAnnotation, FrameLexicon, Sample
from .decode import DecoderConfig, decode_sample, label_index

log = logging.getLogger(__name__)

DEFAULT_DELTA_GRID = tuple(round(-0.8 + 0.04 * k, 10) for k in range(41))

TP, FP, FN = "tp", "fp", "fn"


class PRF(NamedTuple):
    precision: float
    recall: float
    f1: float
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def support(self) -> int:
        return self.tp + self.fn

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int) -> "PRF":
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        f = 2 * p * r / (p + r) if p + r else 0.0
        return cls(p, r, f, tp, fp, fn)

    def to_dict(self) -> dict:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1,
                "tp": self.tp, "fp": self.fp, "fn": self.fn, "support": self.support}


@dataclass(frozen=True)
class PRPoint:
    delta: float
    precision: float
    recall: float
    f1: float

    def __post_init__(self):
        if not (0.0 <= self.precision <= 1.0 and 0.0 <= self.recall <= 1.0):
            raise ValueError("precision and recall must lie in [0, 1]")

    @classmethod
    def at(cls, delta: float, prf: PRF) -> "PRPoint":
        return cls(delta, prf.precision, prf.recall, prf.f1)


def _check_aligned(gold, pred):
    if len(gold) != len(pred):
        raise ValueError(f"{len(gold)} gold annotations but {len(pred)} predictions")


# --- per-item outcomes ------------------------------------------------------

def frame_outcomes(gold: FrameAnnotation, pred: FrameAnnotation) -> list[str]:
    if pred.frame is not None and pred.frame == gold.frame:
        return [TP]
    out = []
    if pred.frame is not None:
        out.append(FP)
    if gold.frame is not None:
        out.append(FN)
    return out


def argument_outcomes(gold: FrameAnnotation, pred: FrameAnnotation) -> list[tuple[str, bool]]:
    """``(outcome, core)`` for every gold and hypothesised frame element of one sample.

    A hypothesis is correct when the frame is right and an unmatched gold
    element with the same name overlaps it; pairs are taken greedily by
    largest overlap, then leftmost hypothesis, then leftmost gold element.
    """
    hyps = list(pred.elements) if pred.frame is not None else []
    golds = list(gold.elements)
    if pred.frame != gold.frame:
        return [(FP, h.core) for h in hyps] + [(FN, g.core) for g in golds]
    pairs = []
    for i, h in enumerate(hyps):
        for j, g in enumerate(golds):
            ov = h.span.overlap(g.span)
            if h.name == g.name and ov >= 1:
                pairs.append((-ov, h.span.start, g.span.start, i, j))
    pairs.sort()
    used_h, used_g = set(), set()
    for _, _, _, i, j in pairs:
        if i not in used_h and j not in used_g:
            used_h.add(i)
            used_g.add(j)
    return ([(TP if i in used_h else FP, h.core) for i, h in enumerate(hyps)]
            + [(FN, g.core) for j, g in enumerate(golds) if j not in used_g])


def _prf(outcomes: Iterable[str]) -> PRF:
    outcomes = list(outcomes)
    return PRF.from_counts(outcomes.count(TP), outcomes.count(FP), outcomes.count(FN))


def score_frame_id(gold: Sequence[FrameAnnotation], pred: Sequence[FrameAnnotation]) -> PRF:
    _check_aligned(gold, pred)
    return _prf(o for g, p in zip(gold, pred) for o in frame_outcomes(g, p))


def score_arg_id_soft(gold: Sequence[FrameAnnotation], pred: Sequence[FrameAnnotation]) -> PRF:
    _check_aligned(gold, pred)
    return _prf(o for g, p in zip(gold, pred) for o, _ in argument_outcomes(g, p))


# --- breakdowns -------------------------------------------------------------

def _lu_pos(sample: Sample) -> str:
    pos = sample.tokens[sample.target.end].pos
    return {"V": "verbal", "N": "nominal"}.get(pos[:1].upper(), "other")


def breakdown_report(gold_samples: Sequence[Sample], pred: Sequence[FrameAnnotation],
                     wer_edges: Sequence[float] = DEFAULT_WER_EDGES) -> dict[str, dict[str, PRF]]:
    """AI scores split by FE coreness, trigger part of speech, sentence length and WER; FI per LU.

    Rows without gold support are omitted.  A factor whose metadata is
    missing for some sample is skipped with a warning.
    """
    golds = [s.gold for s in gold_samples]
    _check_aligned(golds, pred)
    per_sample = [argument_outcomes(g, p) for g, p in zip(golds, pred)]
    report: dict[str, dict[str, PRF]] = {}

    def grouped(keys: Sequence[str]) -> dict[str, PRF]:
        rows = {}
        for key in sorted(set(keys)):
            prf = _prf(o for k, outs in zip(keys, per_sample) if k == key for o, _ in outs)
            if prf.support:
                rows[key] = prf
        return rows

    core = {name: _prf(o for outs in per_sample for o, c in outs if c == flag)
            for name, flag in (("core", True), ("non-core", False))}
    report["fe_type"] = {k: v for k, v in core.items() if v.support}
    report["trigger_pos"] = grouped([_lu_pos(s) for s in gold_samples])
    lengths = [len(s.tokens) for s in gold_samples]
    if lengths:
        threshold = statistics.median(lengths)
        report["length"] = grouped(["short" if n <= threshold else "long" for n in lengths])
    wers = [s.meta.get("wer") for s in gold_samples]
    if wers and all(w is not None for w in wers):
        buckets = bucket_by_wer([float(w) for w in wers], wer_edges)
        keys = [""] * len(wers)
        for name, members in buckets.items():
            for i in members:
                keys[i] = name
        rows = {}
        for name in buckets:
            prf = _prf(o for k, outs in zip(keys, per_sample) if k == name for o, _ in outs)
            if prf.support:
                rows[name] = prf
        report["wer"] = rows
    elif any(w is not None for w in wers):
        log.warning("WER metadata missing for some samples; WER breakdown omitted")
    lus = {}
    for lemma in sorted({s.lu_lemma for s in gold_samples}):
        idx = [i for i, s in enumerate(gold_samples) if s.lu_lemma == lemma]
        prf = score_frame_id([golds[i] for i in idx], [pred[i] for i in idx])
        if prf.support:
            lus[lemma] = prf
    report["lu_fi"] = lus
    return report


# --- sweeps -----------------------------------------------------------------

@dataclass
class SweepResult:
    curve: list[PRPoint]
    fi_curve: list[PRPoint]
    fmax: PRPoint
    fi_at_fmax: PRPoint
    predictions: list[FrameAnnotation]
    by_delta: list[list[FrameAnnotation]] = field(default_factory=list)


def check_grid(grid: Sequence[float]) -> list[float]:
    grid = [float(d) for d in grid]
    if not grid:
        raise ValueError("delta grid is empty")
    if any(not -1.0 < d < 1.0 for d in grid):
        raise ValueError("every delta must lie in (-1, 1)")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("delta grid must be strictly increasing")
    return grid


def scored_samples(corpus: Iterable[Sample]) -> list[Sample]:
    return [s for s in corpus if s.gold is not None]


def sweep_dists(dists: Sequence[np.ndarray], samples: Sequence[Sample], lexicon: FrameLexicon,
                labels, grid: Sequence[float] = DEFAULT_DELTA_GRID,
                decoder: DecoderConfig | None = None, keep_all: bool = False) -> SweepResult:
    """Decode precomputed distributions at every delta and score AI (and FI).

    With ``keep_all`` the predictions at every grid point are returned too.
    """
    grid = check_grid(grid)
    decoder = decoder or DecoderConfig()
    golds = [s.gold for s in samples]
    labels = label_index(labels)
    curve, fi_curve, preds_by_delta = [], [], []
    for d in grid:
        cfg = DecoderConfig(d, decoder.use_coherence_filter, decoder.decode_mode)
        preds = [decode_sample(p, s, lexicon, cfg, labels) for p, s in zip(dists, samples)]
        curve.append(PRPoint.at(d, score_arg_id_soft(golds, preds)))
        fi_curve.append(PRPoint.at(d, score_frame_id(golds, preds)))
        preds_by_delta.append(preds)
    best = max(range(len(grid)), key=lambda k: (curve[k].f1, -k))
    assert all(curve[best].f1 >= pt.f1 for pt in curve)
    return SweepResult(curve, fi_curve, curve[best], fi_curve[best], preds_by_delta[best],
                       preds_by_delta if keep_all else [])


def sweep_delta(tagger, params, corpus: Iterable[Sample], lexicon: FrameLexicon,
                grid: Sequence[float] = DEFAULT_DELTA_GRID,
                decoder: DecoderConfig | None = None) -> SweepResult:
    """One forward pass over the labelled samples, then decode and score at each delta."""
    samples = scored_samples(corpus)
    if not samples:
        raise ValueError("no annotated samples to score")
    dists = tagger.predict_dists(params, samples)
    return sweep_dists(dists, samples, lexicon, tagger.labels, grid, decoder)


@dataclass
class EvalReport:
    fi: PRF
    ai: PRF
    curve: list[PRPoint]
    fmax_delta: float
    breakdowns: dict[str, dict[str, PRF]] = field(default_factory=dict)
    fi_curve: list[PRPoint] = field(default_factory=list)

    def __post_init__(self):
        if self.curve:
            best = max(pt.f1 for pt in self.curve)
            if not any(pt.delta == self.fmax_delta and pt.f1 == best for pt in self.curve):
                raise ValueError("fmax_delta must attain the best F1 on the curve")

    def to_dict(self) -> dict:
        return {
            "fi": self.fi.to_dict(), "ai": self.ai.to_dict(), "fmax_delta": self.fmax_delta,
            "curve": [vars(pt) for pt in self.curve],
            "fi_curve": [vars(pt) for pt in self.fi_curve],
            "breakdowns": {k: {r: v.to_dict() for r, v in rows.items()} for k, rows in self.breakdowns.items()},
        }


def evaluate_predictions(gold_samples: Sequence[Sample], pred: Sequence[FrameAnnotation],
                         delta: float = 0.0) -> EvalReport:
    golds = [s.gold for s in gold_samples]
    fi, ai = score_frame_id(golds, pred), score_arg_id_soft(golds, pred)
    return EvalReport(fi, ai, [PRPoint.at(delta, ai)], delta, breakdown_report(gold_samples, pred),
                      [PRPoint.at(delta, fi)])


def evaluate_model(tagger, params, corpus: Iterable[Sample], lexicon: FrameLexicon,
                   grid: Sequence[float] = DEFAULT_DELTA_GRID,
                   decoder: DecoderConfig | None = None) -> EvalReport:
    samples = scored_samples(corpus)
    if not samples:
        raise ValueError("no annotated samples to score")
    sweep = sweep_delta(tagger, params, samples, lexicon, grid, decoder)
    golds = [s.gold for s in samples]
    return EvalReport(score_frame_id(golds, sweep.predictions), score_arg_id_soft(golds, sweep.predictions),
                      sweep.curve, sweep.fmax.delta, breakdown_report(samples, sweep.predictions),
                      sweep.fi_curve)


# --- domain probe -----------------------------------------------------------

@dataclass(frozen=True)
class ProbeConfig:
    channels: int = 16
    window: int = 3
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 0.01
    holdout: float = 0.3
    seed: int = 0


def _adam(params, grads, state, lr, t, b1=0.9, b2=0.999, eps=1e-8):
    for k in params:
        m, v = state.setdefault(k, (np.zeros_like(params[k]), np.zeros_like(params[k])))
        m = b1 * m + (1 - b1) * grads[k]
        v = b2 * v + (1 - b2) * grads[k] ** 2
        state[k] = (m, v)
        params[k] = params[k] - lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)


def _pad(states: Sequence[np.ndarray]):
    T = max(len(s) for s in states)
    D = states[0].shape[1]
    x = np.zeros((len(states), T, D))
    mask = np.zeros((len(states), T))
    for i, s in enumerate(states):
        x[i, :len(s)] = s
        mask[i, :len(s)] = 1.0
    return x, mask


def probe_accuracy(states: Sequence[np.ndarray], domains: Sequence[int], config: ProbeConfig = ProbeConfig()) -> float:
    """Train a fresh convolutional domain classifier on frozen states; return held-out accuracy."""
    domains = np.asarray(domains)
    n_dom = int(domains.max()) + 1
    if len(set(domains.tolist())) < 2:
        raise ValueError("probe needs samples from at least two domains")
    rng = np.random.default_rng(config.seed)
    order = rng.permutation(len(states))
    n_test = max(1, int(round(config.holdout * len(states))))
    test, train = order[:n_test], order[n_test:]
    D = states[0].shape[1]
    s = 0.1
    params = {"conv.W": rng.uniform(-s, s, (config.window, D, config.channels)),
              "conv.b": np.zeros(config.channels),
              "W": rng.uniform(-s, s, (config.channels, n_dom)), "b": np.zeros(n_dom)}

    def logits(p, x, mask):
        leaves = {k: ad.leaf(v, k) for k, v in p.items()}
        h = ad.tanh(ad.conv1d(ad.leaf(x), leaves["conv.W"], leaves["conv.b"]))
        return leaves, ad.linear(ad.masked_max(h, mask), leaves["W"], leaves["b"])

    adam_state: dict = {}
    t = 0
    for _ in range(config.epochs):
        perm = rng.permutation(train)
        for i in range(0, len(perm), config.batch_size):
            idx = perm[i:i + config.batch_size]
            x, mask = _pad([states[j] for j in idx])
            leaves, out = logits(params, x, mask)
            loss = ad.softmax_cross_entropy(out, domains[idx])
            ad.backward(loss)
            t += 1
            _adam(params, {k: leaves[k].grad for k in params}, adam_state, config.learning_rate, t)
    x, mask = _pad([states[j] for j in test])
    _, out = logits(params, x, mask)
    return float((out.value.argmax(axis=1) == domains[test]).mean())


def probe_samples(corpora: Sequence[Corpus]) -> tuple[list[Sample], list[int]]:
    samples, domains = [], []
    for c in corpora:
        samples.extend(c)
        domains.extend([c.domain_id] * len(c))
    if len(set(domains)) < 2:
        raise ValueError("probe corpus must span at least two domains")
    return samples, domains


def probe_domain_invariance(snapshot_a, snapshot_b, corpora: Sequence[Corpus],
                            config: ProbeConfig = ProbeConfig()) -> tuple[float, float]:
    """Held-out domain accuracy of identical probes on two frozen encoders ``(tagger, params)``."""
    samples, domains = probe_samples(corpora)
    accs = []
    for tagger, params in (snapshot_a, snapshot_b):
        accs.append(probe_accuracy(tagger.encode_corpus(params, samples), domains, config))
    return accs[0], accs[1]
