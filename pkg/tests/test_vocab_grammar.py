import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from themegen.codec import encode_piece
from themegen.grammar import GrammarState, validate_grammar
from themegen.music import Track
from themegen.vocab import MELODY, PIANO, Vocabulary

from strategies import pieces

TABLE_COUNTS = {
    "Padding": 1,
    "Bar": 1,
    "Subbeat": 16,
    "Tempo": 76,
    "Theme": 2,
    "Note-Pitch": 254,
    "Note-Velocity": 252,
    "Note-Duration": 128,
}


def test_piano_vocabulary_size_and_counts():
    assert len(PIANO) == 730
    assert PIANO.counts() == TABLE_COUNTS


def test_vocabulary_is_a_bijection():
    names = PIANO.names
    assert len(set(names)) == len(names)
    for i in (0, 1, 17, 18, 93, 94, 95, 300, 729):
        assert PIANO.id(PIANO.name(i)) == i


def test_fixed_ids_agree_with_tables():
    from themegen._kernels._pykernels import DURATION, PITCH, SUBBEAT, TEMPO, VELOCITY

    assert PIANO.kind[PIANO.subbeat(15)] == SUBBEAT and PIANO.value[PIANO.subbeat(15)] == 15
    assert PIANO.kind[PIANO.tempo(34)] == TEMPO and PIANO.value[PIANO.tempo(34)] == 119
    assert PIANO.name(PIANO.pitch(Track.ACCOMPANIMENT, 127)) == "Note-Pitch:Accompaniment:127"
    assert PIANO.kind[PIANO.velocity(Track.MELODY, 1)] == VELOCITY
    assert PIANO.kind[PIANO.duration(Track.MELODY, 64)] == DURATION
    assert PIANO.kind[PIANO.pitch(Track.MELODY, 1)] == PITCH
    assert PIANO.name(PIANO.theme_start) == "Theme-Start"


def test_tempo_bin_count_is_configurable():
    v = Vocabulary(tempo_bins=60)
    assert len(v) == 730 - 16
    with pytest.raises(ValueError):
        v.tempo(60)


def test_melody_vocabulary_layout():
    assert len(MELODY) == 193
    assert MELODY.pitch(60) == 60
    assert MELODY.pitch(0) == MELODY.rest == 128
    assert MELODY.duration(1) == 129 and MELODY.duration(64) == 192
    assert MELODY.decode_pair(128, 132) == (0, 4)
    with pytest.raises(ValueError):
        MELODY.duration(65)


def _note(track, p=60, v=80, d=4):
    return [PIANO.pitch(track, p), PIANO.velocity(track, v), PIANO.duration(track, d)]


@pytest.mark.parametrize(
    "seq, rule",
    [
        ([PIANO.theme_end], "theme-alternation"),
        ([PIANO.bar, PIANO.subbeat(0), PIANO.pitch(0, 60), PIANO.duration(0, 4)], "note-triple"),
        ([PIANO.bar, PIANO.subbeat(0), PIANO.pitch(0, 60), PIANO.velocity(1, 60)], "track-tag"),
        ([PIANO.bar, PIANO.subbeat(4), PIANO.subbeat(4)], "subbeat-order"),
        ([PIANO.subbeat(0)], "subbeat-before-bar"),
        ([PIANO.bar, PIANO.tempo(3)], "tempo-position"),
        ([PIANO.bar, *_note(0)], "note-position"),
        ([PIANO.bar, PIANO.pad, PIANO.bar], "padding"),
        ([PIANO.theme_start, PIANO.theme_start], "theme-alternation"),
        ([-1], "unknown-token"),
        ([730], "unknown-token"),
    ],
)
def test_grammar_rules(seq, rule):
    err = validate_grammar(seq)
    assert err is not None and err.rule == rule


def test_incomplete_only_flagged_when_complete():
    seq = [PIANO.bar, PIANO.subbeat(0), PIANO.pitch(0, 60)]
    assert validate_grammar(seq, complete=False) is None
    assert validate_grammar(seq).rule == "incomplete-note"
    seq = [PIANO.theme_start, PIANO.bar]
    assert validate_grammar(seq, complete=False) is None
    assert validate_grammar(seq).rule == "theme-unclosed"


def test_subbeat_order_resets_at_bar():
    seq = [PIANO.bar, PIANO.subbeat(8), *_note(0), PIANO.bar, PIANO.subbeat(0), *_note(1)]
    assert validate_grammar(seq) is None


@settings(max_examples=60, deadline=None)
@given(pieces())
def test_encoded_pieces_are_grammatical(piece):
    assert validate_grammar(encode_piece(piece)) is None


@settings(max_examples=40, deadline=None)
@given(pieces(min_notes=1), st.integers(0, 2**32 - 1))
def test_state_machine_agrees_with_validator(piece, seed):
    """Every token of a valid sequence is allowed by the state machine, and a
    random disallowed token is rejected by the validator."""
    ids = encode_piece(piece)
    state = GrammarState()
    rng = np.random.default_rng(seed)
    for i, t in enumerate(ids):
        allowed = state.allowed()
        assert allowed[t]
        banned = np.flatnonzero(~allowed)
        bad = int(rng.choice(banned))
        if bad != PIANO.pad:
            assert validate_grammar(ids[:i] + [bad], complete=False) is not None
        state.advance(t)


def test_allowed_never_offers_padding():
    state = GrammarState()
    assert not state.allowed()[PIANO.pad]
    state.advance(PIANO.bar)
    assert not state.allowed()[PIANO.pad]
