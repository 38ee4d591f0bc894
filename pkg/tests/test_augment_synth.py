import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from themegen.augment import OPS, augment, last_note_duration, pitch_shift_on_scale, shift_pitch_on_scale, split_combine
from themegen.codec import slice_fragments
from themegen.music import Key, Track
from themegen.synth import SynthSpec, read_ground_truth, synth_corpus, synth_piece, write_ground_truth
from themegen.vocab import REST

C_MAJOR = Key(0, "major")
A_MINOR = Key(9, "minor")

events_st = st.lists(
    st.tuples(st.one_of(st.just(REST), st.integers(30, 100)), st.integers(1, 32)), min_size=1, max_size=16
)


def test_scale_shift_examples():
    assert shift_pitch_on_scale(60, C_MAJOR, 1) == 62
    assert shift_pitch_on_scale(64, C_MAJOR, 1) == 65
    assert shift_pitch_on_scale(71, C_MAJOR, 1) == 72
    assert shift_pitch_on_scale(60, C_MAJOR, -1) == 59
    assert shift_pitch_on_scale(61, C_MAJOR, 1) == 63  # chromatic keeps its offset
    assert shift_pitch_on_scale(69, A_MINOR, 2) == 72


@settings(max_examples=100, deadline=None)
@given(st.integers(24, 100), st.integers(-7, 7), st.sampled_from([C_MAJOR, A_MINOR, Key(6, "major")]))
def test_scale_shift_inverts(pitch, deg, key):
    if (pitch - key.tonic) % 12 in key.steps:
        assert shift_pitch_on_scale(shift_pitch_on_scale(pitch, key, deg), key, -deg) == pitch
    assert shift_pitch_on_scale(pitch, key, 7) == pitch + 12


def test_pitch_shift_clamps_with_warning(caplog):
    with caplog.at_level(logging.WARNING):
        out = pitch_shift_on_scale([(126, 4), (REST, 2)], C_MAJOR, 3)
    assert out == [(127, 4), (REST, 2)]
    assert "clamped" in caplog.text


@settings(max_examples=100, deadline=None)
@given(events_st, st.integers(0, 2**32 - 1), st.sampled_from(OPS))
def test_augmentations_keep_rhythm_budget(events, seed, op):
    rng = np.random.default_rng(seed)
    out, used = augment(events, C_MAJOR, rng, op=op)
    assert used == op
    total = sum(d for _, d in events)
    if op == "pitch_shift":
        assert [d for _, d in out] == [d for _, d in events]
        assert [p == REST for p, _ in out] == [p == REST for p, _ in events]
    elif op == "last_duration":
        pitched = [i for i, (p, _) in enumerate(events) if p != REST]
        if not pitched:
            assert out == events
        else:
            i = pitched[-1]
            assert out[:i] + out[i + 1 :] == events[:i] + events[i + 1 :]
            assert out[i][0] == events[i][0]
    else:
        assert sum(d for _, d in out) == total
        assert abs(len(out) - len(events)) <= 1


def test_last_duration_skips_trailing_rest():
    out = last_note_duration([(60, 4), (62, 4), (REST, 8)], np.random.default_rng(0))
    assert out[0] == (60, 4) and out[2] == (REST, 8) and out[1][0] == 62


def test_split_and_combine_modes():
    rng = np.random.default_rng(0)
    assert split_combine([(60, 4)], rng, mode="split") == [(60, 2), (60, 2)]
    assert split_combine([(60, 2), (60, 6)], rng, mode="combine") == [(60, 8)]
    assert split_combine([(60, 3), (62, 1)], rng) == [(60, 3), (62, 1)]


def test_unknown_op():
    with pytest.raises(ValueError):
        augment([(60, 4)], C_MAJOR, np.random.default_rng(0), op="reverse")


# -------------------------------------------------------------------- synth
@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 6), st.integers(0, 2))
def test_planted_occurrences(seed, occurrences, budget):
    audit = []
    spec = SynthSpec(occurrences=occurrences, variation_budget=budget, rng_seed=seed)
    piece, beats = synth_piece(spec, audit=audit)
    assert len(audit) == occurrences
    starts = [a["start_bar"] for a in audit]
    assert beats == {b for s in starts for b in range(4 * s, 4 * s + 8)}
    assert all(len(a["ops"]) == (budget if a["occurrence"] else 0) for a in audit)
    spans = {f.span for f in slice_fragments(piece)}
    assert {(s, s + 2) for s in starts} <= spans
    mel = piece.melody()
    assert all(a.end <= b.onset for a, b in zip(mel, mel[1:]))  # monophonic
    assert any(n.track == Track.ACCOMPANIMENT for n in piece.notes)


def test_repeats_differ_when_budget_positive():
    for seed in range(20):
        audit = []
        synth_piece(SynthSpec(rng_seed=seed, variation_budget=1), audit=audit)
        originals = [tuple(a["events"]) for a in audit]
        assert len(set(originals)) == len(originals)


def test_exact_repeats_without_budget():
    audit = []
    synth_piece(SynthSpec(rng_seed=3, variation_budget=0), audit=audit)
    assert all(a["events"] == audit[0]["events"] for a in audit)


def test_corpus_is_deterministic(tmp_path):
    a, b = synth_corpus(3, seed=7), synth_corpus(3, seed=7)
    assert a == b
    assert [p.id for p, _ in a] == ["synth-7-0000", "synth-7-0001", "synth-7-0002"]
    labels = {p.id: beats for p, beats in a}
    write_ground_truth(labels, tmp_path / "gt.json")
    assert read_ground_truth(tmp_path / "gt.json") == labels


@pytest.mark.parametrize("kwargs", [dict(occurrences=1), dict(filler_bars=(3,)), dict(variation_budget=-1), dict(theme_length_bars=4)])
def test_spec_validation(kwargs):
    with pytest.raises(ValueError):
        SynthSpec(**kwargs)
