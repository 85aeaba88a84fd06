"""Deterministic two-domain synthetic corpora: written style vs spoken style.

Sentences are built from frame templates.  The spoken domain differs from the
written one through a synonym pool for content words, oral fillers, a higher
rate of LUs used in frameless idioms, and a different frame prior.  A noisy
copy of the spoken corpus simulates recognition errors and has its gold
annotation projected through an alignment.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .align import project_annotations
from .corpus import Corpus, FrameAnnotation, FrameElement, FrameLexicon, Sample, Span, Token

FRAME_NAMES = ["Attack", "Leadership", "Statement", "Ingestion", "Motion", "Giving",
               "Request", "Arriving", "Building", "Commerce", "Creating", "Death"]
CORE_FE_NAMES = ["Agent", "Theme", "Goal", "Recipient", "Victim", "Message", "Food", "Cause"]
NONCORE_FE_NAMES = ["Place", "Time", "Manner", "Purpose"]

# short function words and their recognition confusions
FUNCTION_WORDS = ["le", "la", "les", "un", "une", "de", "des", "du", "a", "à", "et", "est",
                  "en", "dans", "sur", "par", "pour", "vers", "au", "il", "on"]
CONFUSIONS = {"a": ["à"], "à": ["a"], "et": ["est"], "est": ["et"], "le": ["la", "les"],
              "la": ["le", "là"], "les": ["le", "des"], "de": ["des", "du"], "des": ["de", "les"],
              "du": ["de"], "un": ["une", "en"], "une": ["un"], "en": ["un", "an"],
              "dans": ["dont"], "sur": ["sûr"], "par": ["pas"], "pour": ["pou"],
              "vers": ["vert"], "au": ["o"], "il": ["ils"], "on": ["ont"]}
FE_MARKERS = {"Agent": ["le", "la", "il"], "Theme": ["le", "un", "les"], "Goal": ["vers", "au"],
              "Recipient": ["à", "au"], "Victim": ["la", "les"], "Message": ["que", "de"],
              "Food": ["du", "des"], "Cause": ["par", "pour"], "Place": ["dans", "à", "sur"],
              "Time": ["en", "pendant"], "Manner": ["avec"], "Purpose": ["pour"]}
WRITTEN_FILLERS = ["ainsi", "toutefois"]
SPOKEN_FILLERS = ["euh", "ben", "bon", "voilà", "hein", "quoi"]
INFLECTIONS = ["", "e", "ait", "é", "ent"]
_SYLLABLES = [c + v for c in "bcdfgklmnprstvz" for v in "aeiou"]


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 7
    n_train_written: int = 1200
    n_train_spoken: int = 300
    n_test: int = 300
    vocab_size: int = 400
    n_frames: int = 8
    fes_per_frame: int = 4
    null_lu_rate_written: float = 0.13
    null_lu_rate_spoken: float = 0.38
    filler_rate_spoken: float = 0.1
    asr_wer_target: float = 0.15
    synonym_rate: float = 0.6
    ambiguous_lus: int = 3

    def __post_init__(self):
        for name in ("null_lu_rate_written", "null_lu_rate_spoken", "filler_rate_spoken",
                     "asr_wer_target", "synonym_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be a probability, got {v}")
        for name in ("n_train_written", "n_train_spoken", "n_test", "vocab_size", "n_frames",
                     "fes_per_frame"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.null_lu_rate_spoken < self.null_lu_rate_written:
            raise ValueError("spoken null-LU rate must be at least the written one")
        if self.vocab_size < 4 * self.n_frames * self.fes_per_frame:
            raise ValueError("vocab_size too small for the requested frame inventory")

    def to_dict(self) -> dict:
        return asdict(self)


def _features(surface: str) -> tuple[str, ...]:
    return ("suf=" + surface[-2:],)


def make_token(surface: str, lemma: str | None = None, pos: str = "N") -> Token:
    return Token(surface, lemma if lemma is not None else surface, pos, _features(surface))


# --- noise channel ----------------------------------------------------------

@dataclass(frozen=True)
class NoiseModel:
    """Relative weights of substitution/deletion/insertion for short and long words."""
    short_weights: tuple[float, float, float] = (0.4, 0.45, 0.15)
    long_weights: tuple[float, float, float] = (0.75, 0.1, 0.15)
    short_len: int = 3
    confusions: dict = field(default_factory=lambda: CONFUSIONS)
    vocabulary: tuple[str, ...] = ()

    @classmethod
    def substitution_only(cls, vocabulary: Sequence[str] = ()) -> "NoiseModel":
        return cls((1.0, 0.0, 0.0), (1.0, 0.0, 0.0), vocabulary=tuple(vocabulary))


def _mangle(word: str, rng: np.random.Generator) -> str:
    """A near-miss spelling that differs from ``word``."""
    pos = int(rng.integers(len(word)))
    letters = [c for c in "aeioubdgkmnrst" if c != word[pos]]
    return word[:pos] + letters[int(rng.integers(len(letters)))] + word[pos + 1:]


def _substitute(tok: Token, model: NoiseModel, rng: np.random.Generator) -> Token:
    w = tok.surface.lower()
    if w in model.confusions:
        options = model.confusions[w]
        new = options[int(rng.integers(len(options)))]
        return make_token(new, new, tok.pos)
    if tok.pos in ("V", "N") and tok.lemma != w and rng.random() < 0.7:
        forms = [tok.lemma + s for s in INFLECTIONS if tok.lemma + s != w]
        new = forms[int(rng.integers(len(forms)))]
        return make_token(new, tok.lemma, tok.pos)
    if model.vocabulary and rng.random() < 0.5:
        new = model.vocabulary[int(rng.integers(len(model.vocabulary)))]
        if new.lower() != w:
            return make_token(new, new, "N")
    new = _mangle(w, rng)
    return make_token(new, new, tok.pos)


def inject_asr_noise(sentence: Sequence[Token], rate: float, rng: np.random.Generator,
                     model: NoiseModel | None = None) -> list[Token]:
    """Corrupt each token independently with probability ``rate``.

    A corrupted token is substituted, deleted, or followed by an inserted
    short word; short words are favoured for deletion.
    """
    if not 0.0 <= rate <= 1.0:
        raise ValueError("rate must be a probability")
    model = model or NoiseModel()
    out: list[Token] = []
    for tok in sentence:
        if rate == 0.0 or rng.random() >= rate:
            out.append(tok)
            continue
        weights = model.short_weights if len(tok.surface) <= model.short_len else model.long_weights
        op = rng.choice(3, p=np.asarray(weights) / sum(weights))
        if op == 0:
            out.append(_substitute(tok, model, rng))
        elif op == 2:
            out.append(tok)
            extra = FUNCTION_WORDS[int(rng.integers(len(FUNCTION_WORDS)))]
            out.append(make_token(extra, extra, "P"))
        # op == 1: deletion
    return out


# --- generator ----------------------------------------------------------------

class _World:
    """Frame inventory, lexicon and per-domain word pools drawn from one RNG."""

    def __init__(self, cfg: SynthConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng
        self._used: set[str] = set(FUNCTION_WORDS) | set(SPOKEN_FILLERS) | set(WRITTEN_FILLERS)
        frames = [FRAME_NAMES[i] if i < len(FRAME_NAMES) else f"Frame{i:02d}" for i in range(cfg.n_frames)]
        n_noncore = min(2, max(0, cfg.fes_per_frame - 1))
        n_core = cfg.fes_per_frame - n_noncore
        self.frames = frames
        self.fes: dict[str, dict[str, bool]] = {}
        for k, f in enumerate(frames):
            cores = [CORE_FE_NAMES[(k + j) % len(CORE_FE_NAMES)] for j in range(n_core)]
            if n_core > len(CORE_FE_NAMES):
                cores = [f"Core{j}" for j in range(n_core)]
            fes = {c: True for c in cores}
            fes.update({NONCORE_FE_NAMES[(k + j) % len(NONCORE_FE_NAMES)]: False for j in range(n_noncore)})
            self.fes[f] = fes
        # content-word concepts: frame-specific for core FEs, shared for non-core
        per_pool = max(3, cfg.vocab_size // (2 * cfg.n_frames * cfg.fes_per_frame))
        self.pools: dict[tuple[str, str] | str, list[tuple[str, str]]] = {}
        for f in frames:
            for fe, core in self.fes[f].items():
                key = (f, fe) if core else fe
                if key not in self.pools:
                    self.pools[key] = [self._concept() for _ in range(per_pool)]
        self.pools["other"] = [self._concept() for _ in range(per_pool * 4)]
        self.idiom_markers = {0: [self._word() for _ in range(3)], 1: [self._word() for _ in range(3)]}
        # two LUs per frame (verbal, nominal); a few lemmas shared between frames
        self.lus: dict[str, list[tuple[str, str]]] = {f: [] for f in frames}
        lu_to_frames: dict[str, set[str]] = {}
        for f in frames:
            for pos in ("V", "N"):
                lemma = self._word(3)
                self.lus[f].append((lemma, pos))
                lu_to_frames[lemma] = {f}
        for k in range(min(cfg.ambiguous_lus, len(frames) - 1) if len(frames) > 1 else 0):
            a, b = frames[k], frames[(k + len(frames) // 2) % len(frames)]
            lemma = self._word(3)
            self.lus[a].append((lemma, "V"))
            self.lus[b].append((lemma, "V"))
            lu_to_frames[lemma] = {a, b}
        self.lexicon = FrameLexicon(lu_to_frames, self.fes)
        # domain frame priors: Zipf over opposite rankings
        ranks = np.arange(1, len(frames) + 1, dtype=float)
        zipf = 1.0 / ranks
        self.prior = {0: zipf / zipf.sum(), 1: zipf[::-1] / zipf.sum()}

    def _word(self, syllables: int | None = None) -> str:
        while True:
            k = syllables or int(self.rng.integers(2, 4))
            w = "".join(_SYLLABLES[int(i)] for i in self.rng.integers(len(_SYLLABLES), size=k))
            if w not in self._used:
                self._used.add(w)
                return w

    def _concept(self) -> tuple[str, str]:
        written = self._word()
        spoken = self._word() if self.rng.random() < self.cfg.synonym_rate else written
        return written, spoken

    @property
    def content_words(self) -> list[str]:
        return sorted({w for pool in self.pools.values() for pair in pool for w in pair})

    def _noun(self, key, domain: int) -> Token:
        pool = self.pools[key]
        w = pool[int(self.rng.integers(len(pool)))][domain]
        return make_token(w, w, "N")

    def _chunk(self, key, role: str, domain: int) -> list[Token]:
        markers = FE_MARKERS.get(role, ["de"])
        m = markers[int(self.rng.integers(len(markers)))]
        toks = [make_token(m, m, "P"), self._noun(key, domain)]
        if self.rng.random() < 0.3:
            toks.append(self._noun(key, domain))
        return toks

    def _lu_token(self, lemma: str, pos: str) -> Token:
        surface = lemma + INFLECTIONS[int(self.rng.integers(len(INFLECTIONS)))]
        return make_token(surface, lemma, pos)

    def sentence(self, domain: int, null_rate: float, filler_rate: float) -> Sample:
        rng = self.rng
        frame = self.frames[int(rng.choice(len(self.frames), p=self.prior[domain]))]
        lemma, pos = self.lus[frame][int(rng.integers(len(self.lus[frame])))]
        is_null = rng.random() < null_rate
        chunks: list[tuple[str | None, list[Token]]] = []
        roles = list(self.fes[frame].items())
        for fe, core in roles:
            if rng.random() < (0.85 if core else 0.4):
                key = (frame, fe) if core else fe
                chunks.append((None if is_null else fe, self._chunk(key, fe, domain)))
        order = rng.permutation(len(chunks))
        chunks = [chunks[i] for i in order]
        split = int(rng.integers(0, min(1, len(chunks)) + 1)) if chunks else 0
        lu_chunk = [self._lu_token(lemma, pos)]
        if is_null:
            marker = self.idiom_markers[domain]
            lu_chunk.insert(0, make_token(marker[int(rng.integers(len(marker)))], pos="X"))
        pieces = chunks[:split] + [("__LU__", lu_chunk)] + chunks[split:]
        tokens: list[Token] = []
        spans: list[tuple[str, int, int]] = []
        target = None
        fillers = SPOKEN_FILLERS if domain == 1 else WRITTEN_FILLERS
        for role, toks in pieces:
            if rng.random() < 0.25:
                tokens.append(self._noun("other", domain))
            if rng.random() < filler_rate:
                tokens.append(make_token(fillers[int(rng.integers(len(fillers)))], pos="I"))
            start = len(tokens)
            tokens.extend(toks)
            if role == "__LU__":
                target = len(tokens) - 1
            elif role is not None:
                spans.append((role, start, len(tokens) - 1))
        if rng.random() < 0.3:
            tokens.append(self._noun("other", domain))
        span = Span(target, target)
        if is_null:
            gold = FrameAnnotation.null(span)
        else:
            gold = FrameAnnotation(span, frame, tuple(FrameElement(r, Span(a, b), self.fes[frame][r])
                                                      for r, a, b in spans))
        return Sample(tuple(tokens), span, gold)


def _split_of(i: int, n_train: int, n_test: int) -> str:
    if i < n_train:
        return "train"
    return "val" if i < n_train + n_test else "test"


def sentence_rates(n: int, target: float, rng: np.random.Generator) -> np.ndarray:
    """Per-sentence corruption rates with mean ``target`` (gamma spread, clipped)."""
    if target == 0.0:
        return np.zeros(n)
    return np.clip(target * rng.gamma(2.0, 0.5, size=n), 0.0, 1.0)


def generate(config: SynthConfig) -> tuple[Corpus, Corpus, Corpus, FrameLexicon]:
    """Written corpus, spoken gold corpus, its noisy transcription, and the lexicon.

    Each corpus holds ``n_train + 2 * n_test`` samples tagged ``split`` =
    train/val/test in their meta; noisy samples whose LU was deleted are dropped.
    """
    rng = np.random.default_rng(config.seed)
    world = _World(config, rng)
    written = []
    n_w = config.n_train_written + 2 * config.n_test
    for i in range(n_w):
        s = world.sentence(0, config.null_lu_rate_written, 0.0)
        written.append(Sample(s.tokens, s.target, s.gold,
                              {"id": f"w{i:05d}", "split": _split_of(i, config.n_train_written, config.n_test)}))
    spoken = []
    n_s = config.n_train_spoken + 2 * config.n_test
    for i in range(n_s):
        s = world.sentence(1, config.null_lu_rate_spoken, config.filler_rate_spoken)
        spoken.append(Sample(s.tokens, s.target, s.gold,
                             {"id": f"s{i:05d}", "split": _split_of(i, config.n_train_spoken, config.n_test)}))
    noise = NoiseModel(vocabulary=tuple(world.content_words))
    noise_rng = np.random.default_rng([config.seed, 1])
    rates = sentence_rates(len(spoken), config.asr_wer_target, noise_rng)
    asr = []
    for s, rate in zip(spoken, rates):
        hyp = inject_asr_noise(s.tokens, float(rate), noise_rng, noise)
        proj = project_annotations(s, hyp)
        if proj.sample is not None:
            asr.append(proj.sample)
    return (Corpus(written, 0, "written"), Corpus(spoken, 1, "spoken_gold"),
            Corpus(asr, 1, "spoken_asr"), world.lexicon)


def frame_counts(corpus: Corpus) -> Counter:
    return Counter(s.gold.frame for s in corpus if s.gold is not None and s.gold.frame is not None)


def chi_squared(a: Counter, b: Counter) -> float:
    """Pearson chi-squared statistic of the 2 x K contingency table of two count vectors."""
    keys = sorted(set(a) | set(b))
    table = np.array([[a.get(k, 0) for k in keys], [b.get(k, 0) for k in keys]], dtype=float)
    expected = table.sum(1, keepdims=True) * table.sum(0, keepdims=True) / table.sum()
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(expected > 0, (table - expected) ** 2 / expected, 0.0)
    return float(terms.sum())
