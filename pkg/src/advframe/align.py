"""Token alignment with WER, and projection of annotations onto recognised transcripts."""
from __future__ import annotations

import bisect
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .corpus import (OUTSIDE, FrameAnnotation, FrameElement, JointLabel, Sample, Span, Token,
                     encode_labels, repair_bio, spans_from_labels)

MATCH, SUB, DEL, INS = "match", "substitute", "delete", "insert"

# percent edges; the last bucket is open-ended
DEFAULT_WER_EDGES = (0.0, 5.0, 10.0, 15.0, 20.0)


@dataclass(frozen=True)
class EditOp:
    kind: str
    ref: int | None
    hyp: int | None


@dataclass
class Alignment:
    ops: list[EditOp]

    @property
    def counts(self) -> Counter:
        return Counter(op.kind for op in self.ops)

    @property
    def distance(self) -> int:
        c = self.counts
        return c[SUB] + c[DEL] + c[INS]


def _surface(tok) -> str:
    return (tok.surface if isinstance(tok, Token) else str(tok)).lower()


def edit_table(ref: Sequence, hyp: Sequence) -> np.ndarray:
    r = [_surface(t) for t in ref]
    h = [_surface(t) for t in hyp]
    n, m = len(r), len(h)
    d = np.zeros((n + 1, m + 1), dtype=np.int64)
    d[:, 0] = np.arange(n + 1)
    d[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            d[i, j] = min(d[i - 1, j - 1] + (r[i - 1] != h[j - 1]), d[i - 1, j] + 1, d[i, j - 1] + 1)
    return d


def align(ref: Sequence, hyp: Sequence) -> Alignment:
    """Unit-cost minimum edit alignment, case-insensitive.

    Backtrace prefers match, then substitution, deletion, insertion.
    """
    d = edit_table(ref, hyp)
    r = [_surface(t) for t in ref]
    h = [_surface(t) for t in hyp]
    i, j = len(r), len(h)
    ops = []
    while i or j:
        if i and j and r[i - 1] == h[j - 1] and d[i, j] == d[i - 1, j - 1]:
            ops.append(EditOp(MATCH, i - 1, j - 1)); i -= 1; j -= 1
        elif i and j and d[i, j] == d[i - 1, j - 1] + 1:
            ops.append(EditOp(SUB, i - 1, j - 1)); i -= 1; j -= 1
        elif i and d[i, j] == d[i - 1, j] + 1:
            ops.append(EditOp(DEL, i - 1, None)); i -= 1
        else:
            ops.append(EditOp(INS, None, j - 1)); j -= 1
    ops.reverse()
    return Alignment(ops)


def wer(ref: Sequence, hyp: Sequence) -> float:
    if not len(ref):
        raise ValueError("WER is undefined for an empty reference")
    return align(ref, hyp).distance / len(ref)


@dataclass
class Projection:
    sample: Sample | None
    wer: float
    alignment: Alignment
    stats: Counter = field(default_factory=Counter)

    @property
    def excluded(self) -> bool:
        return self.sample is None


def _as_tokens(hyp: Sequence, ref: Sample, alignment: Alignment) -> list[Token]:
    arity = len(ref.tokens[0].extra_features)
    out: list[Token | None] = [t if isinstance(t, Token) else None for t in hyp]
    for op in alignment.ops:
        if op.hyp is not None and out[op.hyp] is None:
            word = str(hyp[op.hyp])
            if op.kind == MATCH:
                src = ref.tokens[op.ref]
                out[op.hyp] = Token(word, src.lemma, src.pos, src.extra_features)
            else:
                out[op.hyp] = Token(word, word.lower(), "_", ("_",) * arity)
    return out


def project_annotations(ref_sample: Sample, hyp_tokens: Sequence) -> Projection:
    """Carry gold BIO labels from the reference onto hypothesis tokens.

    Matched and substituted tokens inherit labels, inserted tokens are O
    except inside the LU span, orphan I labels become B and spans that lose
    every token disappear.  A sample whose whole LU span is deleted is
    excluded.  Every repair is tallied in ``stats``.
    """
    if ref_sample.gold is None:
        raise ValueError("reference sample has no gold annotation")
    alignment = align(ref_sample.tokens, hyp_tokens)
    rate = alignment.distance / len(ref_sample.tokens)
    stats = Counter({k: v for k, v in alignment.counts.items()})
    tokens = _as_tokens(hyp_tokens, ref_sample, alignment)
    ref_labels = encode_labels(ref_sample)
    labels = [OUTSIDE] * len(tokens)
    target_hyp = []
    for op in alignment.ops:
        if op.ref is not None and op.hyp is not None:
            labels[op.hyp] = ref_labels[op.ref]
            if op.ref in ref_sample.target:
                target_hyp.append(op.hyp)
    meta = dict(ref_sample.meta)
    meta["wer"] = f"{rate:.6f}"
    if not target_hyp:
        stats["excluded_lu_deleted"] += 1
        return Projection(None, rate, alignment, stats)
    target = Span(min(target_hyp), max(target_hyp))
    gold = ref_sample.gold
    if gold.frame is not None:
        for j in target.indices():
            lab = JointLabel("B" if j == target.start else "I", "LU", gold.frame)
            if labels[j] != lab and labels[j].kind != "LU":
                stats["lu_span_filled"] += 1
            labels[j] = lab
    # inserted tokens sitting between two tokens of the same span
    for op in alignment.ops:
        if op.kind == INS and labels[op.hyp].is_null:
            left = labels[op.hyp - 1] if op.hyp > 0 else OUTSIDE
            right = labels[op.hyp + 1] if op.hyp + 1 < len(labels) else OUTSIDE
            if right.bio == "I" and left.payload == right.payload:
                stats["inserted_inside_span"] += 1
    labels, promoted = repair_bio(labels)
    stats["promoted_i_to_b"] += promoted
    kept = {op.ref for op in alignment.ops if op.ref is not None and op.hyp is not None}
    stats["dropped_spans"] += sum(1 for el in gold.elements if not kept & set(el.span.indices()))
    elements = [FrameElement(lab.fe, span, {e.name: e.core for e in gold.elements}[lab.fe])
                for lab, span in spans_from_labels(labels) if lab.kind == "FE"]
    annotation = FrameAnnotation(target, gold.frame, tuple(elements))
    return Projection(Sample(tuple(tokens), target, annotation, meta), rate, alignment, stats)


def bucket_by_wer(wers: Sequence[float], edges: Sequence[float] = DEFAULT_WER_EDGES) -> dict[str, list[int]]:
    """Partition sample indices by WER (a fraction) into left-inclusive percent buckets."""
    edges = list(edges)
    if any(b <= a for a, b in zip(edges, edges[1:])):
        raise ValueError("bucket edges must be strictly increasing")
    names = [f"{a:g}<=WER<{b:g}" for a, b in zip(edges, edges[1:])] + [f"{edges[-1]:g}<=WER"]
    groups: dict[str, list[int]] = {n: [] for n in names}
    for i, w in enumerate(wers):
        # tolerance keeps e.g. 3/20 in the [15, 20) bucket
        k = bisect.bisect_right(edges, 100.0 * w + 1e-9) - 1
        groups[names[max(k, 0)]].append(i)
    return groups
