"""From per-token label distributions to a frame annotation.

Pipeline: null offset -> coherence filter -> BIO-constrained decoding ->
label decoding.  Scores stay unnormalised after the offset; masked entries are
``-inf``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .corpus import (OUTSIDE, FrameAnnotation, FrameLexicon, JointLabel, Sample, Span,
                     bio_allowed, decode_labels, repair_bio)

log = logging.getLogger(__name__)

# log() floor for non-positive scores, which a negative offset can produce
SCORE_FLOOR = 1e-300
_TIE_TOL = 1e-9

_warned_lemmas: set[str] = set()

DECODE_MODES = ("constrained_exact", "greedy")


@dataclass(frozen=True)
class DecoderConfig:
    delta: float = 0.0
    use_coherence_filter: bool = True
    decode_mode: str = "constrained_exact"

    def __post_init__(self):
        if not -1.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (-1, 1), got {self.delta}")
        if self.decode_mode not in DECODE_MODES:
            raise ValueError(f"decode_mode must be one of {DECODE_MODES}")


class LabelIndex:
    """Precomputed lookups over an ordered label space."""

    def __init__(self, labels: Sequence[JointLabel]):
        self.labels = tuple(labels)
        if not self.labels or self.labels[0] != OUTSIDE:
            raise ValueError("label space must start with O")
        self.index = {lab: i for i, lab in enumerate(self.labels)}
        n = len(self.labels)
        self.frame_of = [lab.frame for lab in self.labels]
        self.is_lu = np.array([lab.kind == "LU" for lab in self.labels])
        self.is_fe = np.array([lab.kind == "FE" for lab in self.labels])
        self.lu_frames = sorted({lab.frame for lab in self.labels if lab.kind == "LU" and lab.bio == "B"})
        self.lu_b = {f: self.index[JointLabel("B", "LU", f)] for f in self.lu_frames}
        self.lu_i = {f: self.index.get(JointLabel("I", "LU", f)) for f in self.lu_frames}
        self.frame_cols = {}
        for i, f in enumerate(self.frame_of):
            if f is not None:
                self.frame_cols.setdefault(f, []).append(i)
        allowed = np.ones((n, n), dtype=bool)
        start = np.ones(n, dtype=bool)
        for j, cur in enumerate(self.labels):
            start[j] = bio_allowed(None, cur)
            for i, prev in enumerate(self.labels):
                allowed[i, j] = bio_allowed(prev, cur)
        self.allowed = allowed
        self.start_allowed = start

    def __len__(self):
        return len(self.labels)


@lru_cache(maxsize=32)
def _label_index(labels: tuple[JointLabel, ...]) -> LabelIndex:
    return LabelIndex(labels)


def label_index(labels: Sequence[JointLabel]) -> LabelIndex:
    return labels if isinstance(labels, LabelIndex) else _label_index(tuple(labels))


def apply_null_offset(dists: np.ndarray, delta: float) -> np.ndarray:
    scores = np.array(dists, dtype=np.float64, copy=True)
    scores[:, 0] += delta
    return scores


def greedy_labels(scores: np.ndarray) -> np.ndarray:
    """Per token: the best non-null label if it beats the null score, else O."""
    best = scores[:, 1:].argmax(axis=1) + 1
    wins = scores[np.arange(len(scores)), best] > scores[:, 0]
    return np.where(wins, best, 0)


def coherence_filter(scores: np.ndarray, target: Span, lexicon: FrameLexicon, lu_lemma: str,
                     labels: Sequence[JointLabel]) -> tuple[np.ndarray, str | None]:
    """Commit to one lexicon-licensed frame (or NULL) and mask everything incompatible.

    The frame with the largest LU-label mass over the target wins if that
    mass exceeds the (offset) null mass over the target.  Labels of other
    frames are masked; LU labels are only kept on the target, in B/I order,
    and FE labels never on it.  O stays available off the target.
    """
    idx = label_index(labels)
    candidates = lexicon.frames_for(lu_lemma)
    if candidates is None:
        if lu_lemma not in _warned_lemmas:
            _warned_lemmas.add(lu_lemma)
            log.warning("lemma %r not in lexicon; all frames are candidates", lu_lemma)
        candidates = idx.lu_frames
    else:
        candidates = sorted(f for f in candidates if f in idx.lu_b)
    tgt = list(target.indices())
    null_mass = scores[tgt, 0].sum()
    chosen, best = None, -np.inf
    for f in candidates:
        cols = [idx.lu_b[f]] + ([idx.lu_i[f]] if idx.lu_i[f] is not None else [])
        mass = scores[np.ix_(tgt, cols)].sum()
        if mass > best:
            chosen, best = f, mass
    masked = np.full_like(scores, -np.inf)
    masked[:, 0] = scores[:, 0]
    if chosen is None or not best > null_mass:
        return masked, None
    keep = idx.frame_cols[chosen]
    fe_cols = [c for c in keep if idx.is_fe[c]]
    outside = np.ones(len(scores), dtype=bool)
    outside[tgt] = False
    masked[np.ix_(outside, fe_cols)] = scores[np.ix_(outside, fe_cols)]
    masked[tgt, 0] = -np.inf
    masked[tgt[0], idx.lu_b[chosen]] = scores[tgt[0], idx.lu_b[chosen]]
    if len(tgt) > 1:
        masked[tgt[1:], idx.lu_i[chosen]] = scores[tgt[1:], idx.lu_i[chosen]]
    return masked, chosen


def _log_scores(scores: np.ndarray) -> np.ndarray:
    finite = np.isfinite(scores)
    out = np.full(scores.shape, -np.inf)
    out[finite] = np.log(np.maximum(scores[finite], SCORE_FLOOR))
    return out


def constrained_decode(scores: np.ndarray, labels: Sequence[JointLabel]) -> list[JointLabel]:
    """Exact maximiser of ``sum_t log score[t, y_t]`` over BIO-valid sequences.

    Ties go to the lowest label index at the leftmost differing position.
    """
    idx = label_index(labels)
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[1] != len(idx):
        raise ValueError(f"scores must be [T, {len(idx)}], got {scores.shape}")
    T = len(scores)
    if T == 0:
        return []
    dead = ~np.isfinite(scores).any(axis=0)
    dead[0] = False
    cols = np.flatnonzero(~dead)
    logs = _log_scores(scores[:, cols])
    if np.any(np.all(np.isneginf(logs), axis=1)):
        raise ValueError("every label is masked at some position")
    allowed = idx.allowed[np.ix_(cols, cols)]
    start = idx.start_allowed[cols]
    # best achievable suffix score from (t, label)
    beta = np.empty_like(logs)
    beta[-1] = logs[-1]
    for t in range(T - 2, -1, -1):
        nxt = np.where(allowed, beta[t + 1][None, :], -np.inf).max(axis=1)
        beta[t] = logs[t] + nxt
    path = []
    options = np.where(start, beta[0], -np.inf)
    for t in range(T):
        if t:
            options = np.where(allowed[path[-1]], beta[t], -np.inf)
        top = options.max()
        if not np.isfinite(top):
            raise ValueError("no BIO-valid sequence survives the mask")
        path.append(int(np.flatnonzero(options >= top - _TIE_TOL * max(1.0, abs(top)))[0]))
    return [idx.labels[cols[j]] for j in path]


def _sanitize(seq: Sequence[JointLabel], target: Span) -> list[JointLabel]:
    """Drop labels that cannot form a valid annotation around ``target``."""
    first = seq[target.start]
    frame = first.frame if first.kind == "LU" else None
    out = []
    for i, lab in enumerate(seq):
        if i in target:
            lab = JointLabel("B" if i == target.start else "I", "LU", frame) if frame else OUTSIDE
        elif lab.kind == "LU" or (lab.kind == "FE" and lab.frame != frame):
            lab = OUTSIDE
        out.append(lab)
    return repair_bio(out)[0]


def decode_sample(dists: np.ndarray, sample: Sample, lexicon: FrameLexicon,
                  config: DecoderConfig, labels: Sequence[JointLabel]) -> FrameAnnotation:
    idx = label_index(labels)
    dists = np.asarray(dists, dtype=np.float64)
    if len(dists) != len(sample.tokens):
        raise ValueError(f"{len(dists)} distributions for {len(sample.tokens)} tokens")
    scores = apply_null_offset(dists, config.delta)
    if config.use_coherence_filter:
        scores, frame = coherence_filter(scores, sample.target, lexicon, sample.lu_lemma, idx)
        if frame is None:
            return FrameAnnotation.null(sample.target)
    if config.decode_mode == "greedy":
        seq = repair_bio([idx.labels[j] for j in greedy_labels(scores)])[0]
    else:
        seq = constrained_decode(scores, idx)
    seq = _sanitize(seq, sample.target)
    return decode_labels(seq, sample.target, lexicon)
