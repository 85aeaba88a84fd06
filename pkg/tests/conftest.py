"""Shared fixtures: a hand-written lexicon, tiny corpora and a small tagger."""
from __future__ import annotations

import logging

import numpy as np
import pytest

from advframe.corpus import (Corpus, FrameAnnotation, FrameElement, FrameLexicon, Sample, Span,
                             build_label_space)
from advframe.synth import make_token
from advframe.tagger import NetConfig, Tagger, Vocabulary


@pytest.fixture(autouse=True)
def _quiet_decoder_warnings(caplog):
    caplog.set_level(logging.ERROR, logger="advframe.decode")


@pytest.fixture
def lexicon() -> FrameLexicon:
    return FrameLexicon(
        {"attack": ["Attack"], "say": ["Statement"], "hit": ["Attack", "Statement"]},
        {"Attack": {"Assailant": True, "Victim": True, "Place": False},
         "Statement": {"Speaker": True, "Message": True, "Time": False}},
    )


@pytest.fixture
def labels(lexicon):
    return build_label_space(lexicon)


def toks(*words: str, lu: dict[int, str] | None = None):
    lu = lu or {}
    return tuple(make_token(w, lu.get(i, w), "V" if i in lu else "N") for i, w in enumerate(words))


def attack_sample(meta=None) -> Sample:
    tokens = toks("rome", "attacked", "the", "gauls", "in", "gaul", lu={1: "attack"})
    gold = FrameAnnotation(Span(1, 1), "Attack", (
        FrameElement("Assailant", Span(0, 0), True),
        FrameElement("Victim", Span(2, 3), True),
        FrameElement("Place", Span(4, 5), False)))
    return Sample(tokens, Span(1, 1), gold, dict(meta or {}))


def statement_sample(meta=None) -> Sample:
    tokens = toks("he", "said", "hello", "yesterday", lu={1: "say"})
    gold = FrameAnnotation(Span(1, 1), "Statement", (
        FrameElement("Speaker", Span(0, 0), True),
        FrameElement("Message", Span(2, 2), True),
        FrameElement("Time", Span(3, 3), False)))
    return Sample(tokens, Span(1, 1), gold, dict(meta or {}))


def null_sample(meta=None) -> Sample:
    tokens = toks("you", "know", "he", "hit", "it", lu={3: "hit"})
    return Sample(tokens, Span(3, 3), FrameAnnotation.null(Span(3, 3)), dict(meta or {}))


@pytest.fixture
def samples():
    return [attack_sample(), statement_sample(), null_sample()]


@pytest.fixture
def corpora(samples):
    written = Corpus([samples[0], samples[1]], 0, "written")
    spoken = Corpus([samples[2], samples[1]], 1, "spoken")
    return written, spoken


@pytest.fixture
def tiny_tagger(corpora, labels) -> Tagger:
    cfg = NetConfig(embedding_dims=(4, 3, 2, 2), hidden_size=3, n_layers=2, conv_window=3,
                    conv_channels=3, dropout_rate=0.0)
    return Tagger(cfg, Vocabulary.build(corpora), labels)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
