"""Annotated corpus data model, column file format, frame lexicon and BIO codec.

A corpus file is a sequence of blank-line separated blocks, one per LU
occurrence::

    #target 0 0
    Caesar	Caesar	NP	B-LU:Attack
    attacked	attack	V	O
    Gaul	Gaul	NP	B-FE:Attack:Victim

Columns are ``surface lemma pos feat1 .. featN label``.  Extra ``#key value``
header lines after ``#target`` are kept in :attr:`Sample.meta`.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence


class CorpusFormatError(ValueError):
    """Raised for malformed corpus text, with the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class LexiconError(ValueError):
    pass


class BIOError(ValueError):
    pass


@dataclass(frozen=True)
class Token:
    surface: str
    lemma: str
    pos: str
    extra_features: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.surface:
            raise ValueError("token surface must be non-empty")
        if not isinstance(self.extra_features, tuple):
            object.__setattr__(self, "extra_features", tuple(self.extra_features))


@dataclass(frozen=True, order=True)
class Span:
    start: int
    end: int

    def __post_init__(self):
        if self.start < 0 or self.end < self.start:
            raise ValueError(f"invalid span [{self.start}, {self.end}]")

    def __len__(self) -> int:
        return self.end - self.start + 1

    def __contains__(self, index: int) -> bool:
        return self.start <= index <= self.end

    def overlap(self, other: "Span") -> int:
        return max(0, min(self.end, other.end) - max(self.start, other.start) + 1)

    def indices(self) -> range:
        return range(self.start, self.end + 1)


@dataclass(frozen=True)
class FrameElement:
    name: str
    span: Span
    core: bool = True


@dataclass(frozen=True)
class FrameAnnotation:
    lu_span: Span
    frame: str | None
    elements: tuple[FrameElement, ...] = ()

    def __post_init__(self):
        if not isinstance(self.elements, tuple):
            object.__setattr__(self, "elements", tuple(self.elements))
        if self.frame is None and self.elements:
            raise ValueError("a NULL frame carries no frame elements")
        spans = [self.lu_span] + [e.span for e in self.elements]
        spans.sort()
        for a, b in zip(spans, spans[1:]):
            if a.overlap(b):
                raise ValueError(f"overlapping spans {a} and {b}")

    @classmethod
    def null(cls, lu_span: Span) -> "FrameAnnotation":
        return cls(lu_span, None, ())


@dataclass(frozen=True)
class Sample:
    tokens: tuple[Token, ...]
    target: Span
    gold: FrameAnnotation | None = None
    meta: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not isinstance(self.tokens, tuple):
            object.__setattr__(self, "tokens", tuple(self.tokens))
        n = len(self.tokens)
        if self.target.end >= n:
            raise ValueError(f"target {self.target} out of bounds for {n} tokens")
        if self.gold is not None:
            if self.gold.lu_span != self.target:
                raise ValueError("gold LU span must equal the sample target")
            for el in self.gold.elements:
                if el.span.end >= n:
                    raise ValueError(f"frame element span {el.span} out of bounds")

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def lu_lemma(self) -> str:
        return " ".join(self.tokens[i].lemma for i in self.target.indices())

    def with_gold(self, gold: FrameAnnotation | None) -> "Sample":
        return Sample(self.tokens, self.target, gold, dict(self.meta))


@dataclass
class Corpus:
    samples: list[Sample]
    domain_id: int = 0
    name: str = ""

    def __post_init__(self):
        if self.domain_id < 0:
            raise ValueError("domain_id must be >= 0")
        arities = {len(t.extra_features) for s in self.samples for t in s.tokens}
        if len(arities) > 1:
            raise ValueError(f"inconsistent feature arity in corpus {self.name!r}: {sorted(arities)}")

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    @property
    def feature_arity(self) -> int:
        for s in self.samples:
            return len(s.tokens[0].extra_features)
        return 0

    def subset(self, indices: Iterable[int], name: str | None = None) -> "Corpus":
        return Corpus([self.samples[i] for i in indices], self.domain_id, name or self.name)

    def split(self) -> dict[str, "Corpus"]:
        """Split by the ``split`` meta field, falling back to 60/20/20 by position."""
        if self.samples and all("split" in s.meta for s in self.samples):
            parts: dict[str, list[Sample]] = {"train": [], "val": [], "test": []}
            for s in self.samples:
                parts.setdefault(s.meta["split"], []).append(s)
        else:
            n = len(self.samples)
            a, b = int(round(0.6 * n)), int(round(0.8 * n))
            parts = {"train": self.samples[:a], "val": self.samples[a:b], "test": self.samples[b:]}
        return {k: Corpus(v, self.domain_id, f"{self.name}.{k}") for k, v in parts.items()}


class FrameLexicon:
    """LU lemma to candidate frames, and frame to its (fe_name -> core) inventory."""

    def __init__(self, lu_to_frames: Mapping[str, Iterable[str]],
                 frame_to_fes: Mapping[str, Mapping[str, bool]]):
        self.lu_to_frames = {lu: frozenset(fs) for lu, fs in lu_to_frames.items()}
        self.frame_to_fes = {f: dict(fes) for f, fes in frame_to_fes.items()}
        self._validate()

    def _validate(self):
        if not self.frame_to_fes:
            raise LexiconError("lexicon has no frames")
        for name in list(self.frame_to_fes) + [fe for fes in self.frame_to_fes.values() for fe in fes]:
            if not name or any(c in name for c in ": \t\n"):
                raise LexiconError(f"invalid frame/FE name {name!r}")
        for lu, frames in self.lu_to_frames.items():
            if not frames:
                raise LexiconError(f"LU {lu!r} has an empty frame set")
            missing = frames - self.frame_to_fes.keys()
            if missing:
                raise LexiconError(f"LU {lu!r} references unknown frames {sorted(missing)}")
        for frame, fes in self.frame_to_fes.items():
            if not fes:
                raise LexiconError(f"frame {frame!r} has no frame elements")

    def __eq__(self, other):
        return (isinstance(other, FrameLexicon) and self.lu_to_frames == other.lu_to_frames
                and self.frame_to_fes == other.frame_to_fes)

    def frames_for(self, lemma: str) -> frozenset[str] | None:
        return self.lu_to_frames.get(lemma)

    @property
    def lu_frames(self) -> list[str]:
        return sorted(set().union(*self.lu_to_frames.values())) if self.lu_to_frames else []

    def has_fe(self, frame: str, fe: str) -> bool:
        return fe in self.frame_to_fes.get(frame, {})

    def is_core(self, frame: str, fe: str) -> bool:
        return self.frame_to_fes[frame][fe]

    def to_dict(self) -> dict:
        return {
            "lu_to_frames": {lu: sorted(fs) for lu, fs in sorted(self.lu_to_frames.items())},
            "frame_to_fes": {
                f: {fe: {"core": core} for fe, core in sorted(fes.items())}
                for f, fes in sorted(self.frame_to_fes.items())
            },
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "FrameLexicon":
        try:
            fes = {}
            for frame, entries in data["frame_to_fes"].items():
                fes[frame] = {name: bool(v["core"]) for name, v in entries.items()}
            return cls(data["lu_to_frames"], fes)
        except (KeyError, TypeError) as exc:
            raise LexiconError(f"malformed lexicon: {exc}") from exc

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def load(cls, path: str | Path) -> "FrameLexicon":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")


# --- joint BIO labels -------------------------------------------------------

@dataclass(frozen=True)
class JointLabel:
    bio: str
    kind: str | None = None  # "LU" | "FE"
    frame: str | None = None
    fe: str | None = None

    def __post_init__(self):
        if self.bio == "O":
            if self.kind or self.frame or self.fe:
                raise ValueError("O label carries no payload")
        elif self.bio in ("B", "I"):
            if self.kind == "LU":
                if not self.frame or self.fe is not None:
                    raise ValueError("LU label needs a frame and no FE")
            elif self.kind == "FE":
                if not self.frame or not self.fe:
                    raise ValueError("FE label needs a frame and an FE name")
            else:
                raise ValueError(f"unknown label kind {self.kind!r}")
        else:
            raise ValueError(f"bio tag must be B, I or O, got {self.bio!r}")

    @property
    def payload(self) -> tuple | None:
        return None if self.bio == "O" else (self.kind, self.frame, self.fe)

    @property
    def is_null(self) -> bool:
        return self.bio == "O"

    def __str__(self) -> str:
        if self.bio == "O":
            return "O"
        if self.kind == "LU":
            return f"{self.bio}-LU:{self.frame}"
        return f"{self.bio}-FE:{self.frame}:{self.fe}"

    @classmethod
    def parse(cls, text: str) -> "JointLabel":
        if text == "O":
            return OUTSIDE
        try:
            bio, rest = text.split("-", 1)
            kind, payload = rest.split(":", 1)
            if kind == "LU":
                return cls(bio, "LU", payload)
            frame, fe = payload.split(":")
            return cls(bio, kind, frame, fe)
        except ValueError as exc:
            raise ValueError(f"unparseable label {text!r}") from exc

    def validate(self, lexicon: FrameLexicon) -> None:
        if self.is_null:
            return
        if self.frame not in lexicon.frame_to_fes:
            raise LexiconError(f"unknown frame in label {self}")
        if self.kind == "FE" and not lexicon.has_fe(self.frame, self.fe):
            raise LexiconError(f"FE {self.fe!r} does not belong to frame {self.frame!r}")


OUTSIDE = JointLabel("O")


def bio_allowed(prev: JointLabel | None, cur: JointLabel) -> bool:
    """I-X is only valid after B-X or I-X with the same payload."""
    if cur.bio != "I":
        return True
    return prev is not None and prev.bio != "O" and prev.payload == cur.payload


def check_bio(labels: Sequence[JointLabel]) -> None:
    prev = None
    for i, lab in enumerate(labels):
        if not bio_allowed(prev, lab):
            raise BIOError(f"label {lab} at position {i} does not continue a span")
        prev = lab


def repair_bio(labels: Sequence[JointLabel]) -> tuple[list[JointLabel], int]:
    """Promote every orphan I to B; returns the repaired list and the repair count."""
    out: list[JointLabel] = []
    fixes = 0
    prev = None
    for lab in labels:
        if not bio_allowed(prev, lab):
            lab = JointLabel("B", lab.kind, lab.frame, lab.fe)
            fixes += 1
        out.append(lab)
        prev = lab
    return out, fixes


def encode_labels(sample: Sample) -> list[JointLabel]:
    if sample.gold is None:
        raise ValueError("sample has no gold annotation to encode")
    gold = sample.gold
    labels = [OUTSIDE] * len(sample.tokens)
    taken = [False] * len(sample.tokens)

    def paint(span: Span, kind: str, fe: str | None):
        for i in span.indices():
            if taken[i]:
                raise ValueError(f"overlapping spans at token {i}")
            taken[i] = True
            labels[i] = JointLabel("B" if i == span.start else "I", kind, gold.frame, fe)

    if gold.frame is not None:
        paint(gold.lu_span, "LU", None)
        for el in gold.elements:
            paint(el.span, "FE", el.name)
    return labels


def spans_from_labels(labels: Sequence[JointLabel]) -> list[tuple[JointLabel, Span]]:
    """(B-label, span) pairs for every labelled chunk; input must be BIO-valid."""
    check_bio(labels)
    chunks: list[tuple[JointLabel, Span]] = []
    start = None
    for i, lab in enumerate(list(labels) + [OUTSIDE]):
        if start is not None and lab.bio != "I":
            chunks.append((labels[start], Span(start, i - 1)))
            start = None
        if lab.bio == "B":
            start = i
    return chunks


def decode_labels(labels: Sequence[JointLabel], target: Span,
                  lexicon: FrameLexicon | None = None) -> FrameAnnotation:
    """Inverse of :func:`encode_labels`.

    Core flags come from ``lexicon`` when given, otherwise every element is core.
    """
    chunks = spans_from_labels(labels)
    lu_chunks = [(lab, sp) for lab, sp in chunks if lab.kind == "LU"]
    fe_chunks = [(lab, sp) for lab, sp in chunks if lab.kind == "FE"]
    frame = None
    if lu_chunks:
        if len(lu_chunks) > 1 or lu_chunks[0][1] != target:
            raise BIOError(f"LU labels {[str(s) for _, s in lu_chunks]} do not cover the target {target}")
        frame = lu_chunks[0][0].frame
    elif any(not labels[i].is_null for i in target.indices()):
        raise BIOError("target tokens carry non-LU labels")
    if frame is None and fe_chunks:
        raise BIOError("frame elements emitted without a frame")
    elements = []
    for lab, sp in fe_chunks:
        if lab.frame != frame:
            raise BIOError(f"FE {lab} does not belong to frame {frame}")
        core = lexicon.is_core(frame, lab.fe) if lexicon is not None else True
        elements.append(FrameElement(lab.fe, sp, core))
    return FrameAnnotation(target, frame, tuple(elements))


def build_label_space(lexicon: FrameLexicon) -> list[JointLabel]:
    if not lexicon.frame_to_fes or not lexicon.lu_to_frames:
        raise LexiconError("cannot build a label space from an empty lexicon")
    labels = []
    for bio in "BI":
        for frame in lexicon.lu_frames:
            labels.append(JointLabel(bio, "LU", frame))
        for frame, fes in lexicon.frame_to_fes.items():
            for fe in fes:
                labels.append(JointLabel(bio, "FE", frame, fe))
    return [OUTSIDE] + sorted(labels, key=str)


def label_space_hash(labels: Sequence[JointLabel]) -> str:
    return hashlib.sha256("\n".join(map(str, labels)).encode("utf-8")).hexdigest()


# --- column format ----------------------------------------------------------

def _annotation_from_rows(labels: list[JointLabel], tokens: list[Token], target: Span,
                          lexicon: FrameLexicon, block_line: int,
                          label_lines: list[int]) -> FrameAnnotation:
    prev = None
    for lab, tok, line in zip(labels, tokens, label_lines):
        if not bio_allowed(prev, lab):
            raise CorpusFormatError(
                f"BIO violation at token {tok.surface!r}: {lab} does not continue a span", line)
        try:
            lab.validate(lexicon)
        except LexiconError as exc:
            raise CorpusFormatError(str(exc), line) from exc
        prev = lab
    try:
        return decode_labels(labels, target, lexicon)
    except (BIOError, ValueError) as exc:
        raise CorpusFormatError(str(exc), block_line) from exc


def parse_corpus(text: str, lexicon: FrameLexicon, domain_id: int = 0, name: str = "") -> Corpus:
    samples: list[Sample] = []
    block: list[tuple[int, str]] = []
    lines = text.splitlines()
    for lineno, line in enumerate(lines + [""], start=1):
        if line.strip():
            block.append((lineno, line.rstrip("\n")))
        elif block:
            samples.append(_parse_block(block, lexicon))
            block = []
    arity = {len(t.extra_features) for s in samples for t in s.tokens}
    if len(arity) > 1:
        raise CorpusFormatError(f"inconsistent feature arity {sorted(arity)}")
    return Corpus(samples, domain_id, name)


def _parse_block(block: list[tuple[int, str]], lexicon: FrameLexicon) -> Sample:
    target = None
    meta: dict[str, str] = {}
    tokens: list[Token] = []
    raw_labels: list[tuple[int, str]] = []
    width = None
    for lineno, line in block:
        if line.startswith("#"):
            key, _, value = line[1:].partition(" ")
            if key == "target":
                try:
                    a, b = value.split()
                    target = (int(a), int(b), lineno)
                except ValueError:
                    raise CorpusFormatError(f"bad target header {line!r}", lineno)
            elif not key:
                raise CorpusFormatError("empty header key", lineno)
            else:
                meta[key] = value
            continue
        cols = line.split("\t")
        if len(cols) < 4:
            raise CorpusFormatError(f"expected at least 4 tab-separated columns, got {len(cols)}", lineno)
        if width is None:
            width = len(cols)
        elif len(cols) != width:
            raise CorpusFormatError(f"expected {width} columns, got {len(cols)}", lineno)
        surface, lemma, pos, *feats, label = cols
        if not surface:
            raise CorpusFormatError("empty surface form", lineno)
        tokens.append(Token(surface, lemma, pos, tuple(feats)))
        raw_labels.append((lineno, label))
    first = block[0][0]
    if target is None:
        raise CorpusFormatError("block is missing its #target header", first)
    if not tokens:
        raise CorpusFormatError("block has no tokens", first)
    t0, t1, tline = target
    if not (0 <= t0 <= t1 < len(tokens)):
        raise CorpusFormatError(f"target [{t0}, {t1}] out of bounds", tline)
    span = Span(t0, t1)
    if all(lab == "_" for _, lab in raw_labels):
        return Sample(tuple(tokens), span, None, meta)
    labels = []
    for lineno, lab in raw_labels:
        try:
            labels.append(JointLabel.parse(lab))
        except ValueError as exc:
            raise CorpusFormatError(str(exc), lineno) from exc
    gold = _annotation_from_rows(labels, tokens, span, lexicon, first, [ln for ln, _ in raw_labels])
    return Sample(tuple(tokens), span, gold, meta)


def format_sample(sample: Sample, labels: Sequence[JointLabel] | None = None) -> str:
    if labels is None:
        labels = encode_labels(sample) if sample.gold is not None else None
    rows = [f"#target {sample.target.start} {sample.target.end}"]
    rows += [f"#{k} {v}" for k, v in sample.meta.items()]
    for i, tok in enumerate(sample.tokens):
        label = "_" if labels is None else str(labels[i])
        rows.append("\t".join([tok.surface, tok.lemma, tok.pos, *tok.extra_features, label]))
    return "\n".join(rows) + "\n"


def format_corpus(corpus: Corpus | Sequence[Sample]) -> str:
    samples = corpus.samples if isinstance(corpus, Corpus) else corpus
    return "\n".join(format_sample(s) for s in samples)


def read_corpus(path: str | Path, lexicon: FrameLexicon, domain_id: int = 0,
                name: str | None = None) -> Corpus:
    path = Path(path)
    return parse_corpus(path.read_text(encoding="utf-8"), lexicon, domain_id, name or path.stem)


def write_corpus(corpus: Corpus | Sequence[Sample], path: str | Path) -> None:
    Path(path).write_text(format_corpus(corpus), encoding="utf-8")
