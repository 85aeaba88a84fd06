"""Null offset, coherence filter and exact BIO-constrained decoding."""
from __future__ import annotations

import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from advframe import decode as dec
from advframe.corpus import (OUTSIDE, FrameAnnotation, FrameElement, FrameLexicon, JointLabel, Sample, Span,
                             build_label_space, check_bio, encode_labels)
from advframe.decode import (DecoderConfig, apply_null_offset, coherence_filter, constrained_decode,
                             decode_sample, greedy_labels)
from advframe.metrics import DEFAULT_DELTA_GRID

from conftest import toks
from oracles import brute_force_decode, random_case, random_decode_instance



@pytest.fixture
def wide_lexicon():
    return FrameLexicon(
        {"attack": ["Attack"], "say": ["Statement"], "hit": ["Attack", "Statement"],
         "take part": ["Attack", "Motion"]},
        {"Attack": {"Assailant": True, "Victim": True, "Place": False},
         "Statement": {"Speaker": True, "Message": True},
         "Motion": {"Theme": True, "Goal": False}},
    )


def _dist(labels, rows):
    """Rows of {label string: prob}; the remainder goes to O."""
    idx = {str(lab): i for i, lab in enumerate(labels)}
    out = np.zeros((len(rows), len(labels)))
    for t, row in enumerate(rows):
        for name, p in row.items():
            out[t, idx[name]] = p
        out[t, 0] += 1.0 - out[t].sum()
    return out


# --- null offset ------------------------------------------------------------------

def test_offset_zero_is_identity(rng):
    d = rng.dirichlet(np.ones(5), size=4)
    assert np.array_equal(apply_null_offset(d, 0.0), d)


def test_offset_touches_only_null_column(rng):
    d = rng.dirichlet(np.ones(5), size=4)
    before = d.copy()
    s = apply_null_offset(d, 0.3)
    np.testing.assert_array_equal(s[:, 1:], d[:, 1:])
    np.testing.assert_allclose(s[:, 0], d[:, 0] + 0.3)
    np.testing.assert_array_equal(d, before)


def test_offset_decides_close_token():
    d = np.array([[0.4, 0.5, 0.1]])
    assert greedy_labels(apply_null_offset(d, 0.05)).tolist() == [1]
    assert greedy_labels(apply_null_offset(d, 0.15)).tolist() == [0]


def test_greedy_nonnull_count_is_monotone_in_delta(rng):
    for _ in range(100):
        d = rng.dirichlet(np.ones(int(rng.integers(2, 9))), size=int(rng.integers(1, 12)))
        counts = [int((greedy_labels(apply_null_offset(d, x)) != 0).sum()) for x in DEFAULT_DELTA_GRID]
        assert all(b <= a for a, b in zip(counts, counts[1:]))


def test_delta_near_one_gives_all_null_greedy(rng):
    d = rng.dirichlet(np.ones(6), size=30)
    d[:, 0] = np.maximum(d[:, 0], 0.006)
    d /= d.sum(axis=1, keepdims=True)
    assert not greedy_labels(apply_null_offset(d, 0.99)).any()


def test_decoder_config_validation():
    for bad in (1.0, -1.0, 2.0):
        with pytest.raises(ValueError):
            DecoderConfig(delta=bad)
    with pytest.raises(ValueError):
        DecoderConfig(decode_mode="beam")


# --- coherence filter -------------------------------------------------------------

def test_filter_restricts_to_licensed_frame(lexicon, labels):
    sample = Sample(toks("they", "attacked", "him", lu={1: "attack"}), Span(1, 1))
    d = _dist(labels, [{"B-FE:Attack:Assailant": 0.5, "B-FE:Statement:Speaker": 0.3},
                       {"B-LU:Statement": 0.7, "B-LU:Attack": 0.2},
                       {"B-FE:Attack:Victim": 0.6}])
    masked, frame = coherence_filter(d, sample.target, lexicon, sample.lu_lemma, labels)
    assert frame == "Attack"
    for j, lab in enumerate(labels):
        if lab.frame == "Statement":
            assert np.all(np.isneginf(masked[:, j]))
        if lab.kind == "FE" and lab.frame == "Attack":
            np.testing.assert_array_equal(masked[[0, 2], j], d[[0, 2], j])
    np.testing.assert_array_equal(masked[[0, 2], 0], d[[0, 2], 0])
    ann = decode_sample(d, sample, lexicon, DecoderConfig(), labels)
    assert ann.frame == "Attack"
    assert [(e.name, e.span) for e in ann.elements] == [("Assailant", Span(0, 0)), ("Victim", Span(2, 2))]


def test_filter_null_trigger(lexicon, labels):
    sample = Sample(toks("they", "attacked", lu={1: "attack"}), Span(1, 1))
    d = _dist(labels, [{"B-FE:Attack:Assailant": 0.9}, {"B-LU:Attack": 0.3}])
    masked, frame = coherence_filter(d, sample.target, lexicon, sample.lu_lemma, labels)
    assert frame is None
    assert np.all(np.isneginf(masked[:, 1:]))
    assert decode_sample(d, sample, lexicon, DecoderConfig(), labels) == FrameAnnotation.null(Span(1, 1))


def test_filter_unknown_lemma_warns_once_and_allows_all(lexicon, labels, caplog):
    caplog.set_level(logging.WARNING, logger="advframe.decode")
    dec._warned_lemmas.discard("zzfresh")
    sample = Sample(toks("a", "zzfresh", lu={1: "zzfresh"}), Span(1, 1))
    d = _dist(labels, [{}, {"B-LU:Statement": 0.8}])
    _, frame = coherence_filter(d, sample.target, lexicon, sample.lu_lemma, labels)
    coherence_filter(d, sample.target, lexicon, sample.lu_lemma, labels)
    assert frame == "Statement"
    assert sum("zzfresh" in r.message for r in caplog.records) == 1


def test_filter_sums_mass_over_multi_token_target(wide_lexicon):
    labels = build_label_space(wide_lexicon)
    sample = Sample(toks("we", "take", "part", lu={1: "take", 2: "part"}), Span(1, 2))
    d = _dist(labels, [{}, {"B-LU:Motion": 0.6, "B-LU:Attack": 0.35},
                       {"I-LU:Attack": 0.9, "I-LU:Motion": 0.05}])
    _, frame = coherence_filter(d, sample.target, wide_lexicon, sample.lu_lemma, labels)
    assert frame == "Attack"
    ann = decode_sample(d, sample, wide_lexicon, DecoderConfig(), labels)
    assert ann.frame == "Attack" and ann.lu_span == Span(1, 2)


# --- constrained decoding ---------------------------------------------------------

def test_never_emits_leading_inside(labels):
    i_fe = labels.index(JointLabel("I", "FE", "Attack", "Victim"))
    scores = np.full((2, len(labels)), 0.01)
    scores[0, i_fe] = 0.9
    scores[1, 0] = 0.9
    out = constrained_decode(scores, labels)
    check_bio(out)
    assert out[0].bio != "I"


def test_matches_brute_force_on_random_instances():
    rng = np.random.default_rng(2024)
    for _ in range(200):
        scores, labels = random_decode_instance(rng)
        assert constrained_decode(scores, labels) == brute_force_decode(scores, labels)


def test_uniform_scores_break_ties_by_lowest_index():
    labels = [OUTSIDE, JointLabel("B", "FE", "F", "X"), JointLabel("I", "FE", "F", "X")]
    out = constrained_decode(np.full((4, 3), 1 / 3), labels)
    assert out == [OUTSIDE] * 4
    labels = [OUTSIDE, JointLabel("B", "FE", "F", "X"), JointLabel("I", "FE", "F", "X")]
    scores = np.array([[0.2, 0.4, 0.4], [0.2, 0.4, 0.4]])
    # B I and B B tie at the optimum; index 1 < 2 at the second position
    assert constrained_decode(scores, labels) == [labels[1], labels[1]]


def test_decode_rejects_fully_masked_position(labels):
    scores = np.full((2, len(labels)), 0.1)
    scores[1, :] = -np.inf
    with pytest.raises(ValueError):
        constrained_decode(scores, labels)
    with pytest.raises(ValueError):
        constrained_decode(np.ones((2, 3)), labels)
    assert constrained_decode(np.zeros((0, len(labels))), labels) == []


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_brute_force_property(seed):
    scores, labels = random_decode_instance(np.random.default_rng(seed), max_tokens=5, max_labels=5)
    assert constrained_decode(scores, labels) == brute_force_decode(scores, labels)


# --- full pipeline ----------------------------------------------------------------

def test_clean_pattern_is_recovered(lexicon, labels):
    sample = Sample(toks("x", "said", "hi", lu={1: "say"}), Span(1, 1))
    d = _dist(labels, [{}, {"B-LU:Statement": 0.97}, {"B-FE:Statement:Message": 0.9}])
    ann = decode_sample(d, sample, lexicon, DecoderConfig(), labels)
    assert ann == FrameAnnotation(Span(1, 1), "Statement", (FrameElement("Message", Span(2, 2), True),))


def test_delta_099_gives_null_annotation(lexicon, labels, rng):
    for _ in range(50):
        sample, d = random_case(rng, lexicon, len(labels))
        assert decode_sample(d, sample, lexicon, DecoderConfig(0.99), labels).frame is None


@pytest.mark.parametrize("mode", ["constrained_exact", "greedy"])
def test_random_decodes_are_coherent(wide_lexicon, mode):
    labels = build_label_space(wide_lexicon)
    rng = np.random.default_rng(11)
    for k in range(300):
        sample, d = random_case(rng, wide_lexicon, len(labels), alpha=0.3)
        delta = float(rng.choice(DEFAULT_DELTA_GRID))
        ann = decode_sample(d, sample, wide_lexicon, DecoderConfig(delta, decode_mode=mode), labels)
        check_bio(encode_labels(sample.with_gold(ann)))
        assert all(wide_lexicon.has_fe(ann.frame, e.name) for e in ann.elements)
        licensed = wide_lexicon.frames_for(sample.lu_lemma)
        if ann.frame is not None and licensed is not None:
            assert ann.frame in licensed


def test_without_filter_output_is_still_valid(lexicon, labels, rng):
    for _ in range(100):
        sample, d = random_case(rng, lexicon, len(labels), alpha=0.3)
        ann = decode_sample(d, sample, lexicon, DecoderConfig(use_coherence_filter=False), labels)
        check_bio(encode_labels(sample.with_gold(ann)))


def test_length_mismatch_raises(lexicon, labels, samples):
    with pytest.raises(ValueError):
        decode_sample(np.ones((2, len(labels))) / len(labels), samples[0], lexicon, DecoderConfig(), labels)
