import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from themegen.codec import annotate_theme_tokens, encode_piece, fragment_to_melody_tokens
from themegen.embedding import EmbedConfig, distance, init_embedding
from themegen.metrics import (
    THEME_METRICS,
    evaluate_sequence,
    grooving_consistency,
    melody_inconsistency,
    melody_inconsistency_curve,
    pitch_class_consistency,
    summarize,
    theme_gap,
    theme_inconsistency,
    theme_uncontrollability,
    write_curve,
    write_report,
)
from themegen.music import Note, Piece, Track

CFG = EmbedConfig(layers=1, hidden=16, heads=2, ff=32, out_dim=8)


@pytest.fixture(scope="module")
def store():
    return init_embedding(CFG, dtype=np.float64)


def bar_of(bar, spec, track=Track.MELODY):
    """Notes in ``bar`` from ``(subbeat, pitch, duration)`` triples."""
    return [Note(16 * bar + s, track, p, 80, d) for s, p, d in spec]


MOTIF = [(0, 60, 4), (4, 64, 4), (8, 67, 8)]
OTHER = [(0, 72, 2), (2, 71, 2), (6, 69, 10)]


# ------------------------------------------------------------ consistency
def test_grooving_identical_bars():
    piece = Piece(notes=tuple(bar_of(0, MOTIF) + bar_of(1, MOTIF) + bar_of(2, MOTIF)))
    assert grooving_consistency(piece) == 1.0


def test_grooving_one_subbeat_difference():
    piece = Piece(notes=tuple(bar_of(0, MOTIF) + bar_of(1, MOTIF[:2] + [(8, 67, 4), (12, 65, 4)])))
    assert grooving_consistency(piece) == pytest.approx(15 / 16, abs=1e-12)
    moved = Piece(notes=tuple(bar_of(0, MOTIF) + bar_of(1, MOTIF[:2] + [(9, 67, 7)])))
    assert grooving_consistency(moved) == pytest.approx(14 / 16, abs=1e-12)


def test_grooving_complement_and_both_tracks():
    a = [(s, 60, 1) for s in range(0, 16, 2)]
    b = [(s, 60, 1) for s in range(1, 16, 2)]
    assert grooving_consistency(Piece(notes=tuple(bar_of(0, a) + bar_of(1, b)))) == 0.0
    acc = bar_of(1, [(s, 40, 1) for s in range(1, 16, 2)], Track.ACCOMPANIMENT)
    assert grooving_consistency(Piece(notes=tuple(bar_of(0, a) + bar_of(1, a) + acc))) == pytest.approx(0.5)


def test_pitch_class_examples():
    same = Piece(notes=tuple(bar_of(0, MOTIF) + bar_of(1, [(0, 72, 4), (4, 76, 4), (8, 55, 8)])))
    assert pitch_class_consistency(same) == pytest.approx(1.0, abs=1e-12)
    disjoint = Piece(notes=tuple(bar_of(0, [(0, 60, 4)]) + bar_of(1, [(0, 61, 4)])))
    assert pitch_class_consistency(disjoint) == 0.0
    # bar 0: C 4, E 4, G 8 -> 1/4 1/4 1/2 ; bar 1: C 16 -> overlap 1/4
    half = Piece(notes=tuple(bar_of(0, MOTIF) + bar_of(1, [(0, 48, 16)])))
    assert pitch_class_consistency(half) == pytest.approx(0.25, abs=1e-12)


def test_consistency_absent_below_two_bars():
    one = Piece(notes=tuple(bar_of(0, MOTIF)))
    assert pitch_class_consistency(one) is None and grooving_consistency(one) is None


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 63), st.integers(24, 100), st.integers(1, 16)), min_size=1, max_size=30), st.sampled_from([-12, 12]))
def test_consistency_octave_invariance(raw, shift):
    notes = [Note(o, Track.MELODY, p, 80, d) for o, p, d in raw]
    moved = [Note(n.onset, n.track, n.pitch + shift, 80, n.duration) for n in notes]
    a, b = Piece(notes=tuple(notes)), Piece(notes=tuple(moved))
    assert pitch_class_consistency(a) == pitch_class_consistency(b)
    assert grooving_consistency(a) == grooving_consistency(b)


# ---------------------------------------------------------------- melody
def _long_piece(tail_bars):
    notes = bar_of(0, MOTIF) + bar_of(1, OTHER)
    for b in range(2, 32):
        notes += bar_of(b, [(0, 50 + b, 8)])
    for b, spec in tail_bars.items():
        notes += bar_of(b, spec)
    return Piece(notes=tuple(notes))


def test_melody_inconsistency_zero_on_copy(store):
    piece = _long_piece({32: MOTIF, 33: OTHER, 40: [(0, 80, 4)], 41: [(0, 81, 4)]})
    assert melody_inconsistency(piece, store, CFG) == 0.0


def test_melody_inconsistency_is_min_over_candidates(store):
    piece = _long_piece({34: [(0, 70, 4)], 35: [(0, 71, 4)], 44: OTHER, 45: MOTIF})
    curve = melody_inconsistency_curve(piece, store, CFG)
    value = melody_inconsistency(piece, store, CFG)
    assert curve[0] == 0.0 and len(curve) == 32
    assert np.isnan(curve[16]) and not np.isnan(curve[17])
    assert value == np.nanmin(curve[16:])
    first = fragment_to_melody_tokens([n for n in piece.notes if n.onset < 32])
    tail = fragment_to_melody_tokens([n for n in piece.notes if 34 * 16 <= n.onset < 36 * 16])
    assert value <= distance(store, CFG, first, tail) + 1e-12


def test_melody_inconsistency_absent_without_tail(store):
    assert melody_inconsistency(_long_piece({}), store, CFG) is None


# ----------------------------------------------------------------- themes
def _themed(regions, extra=None, n_bars=20):
    """Piece with MOTIF+OTHER at each region start (or ``extra`` content)."""
    notes = []
    for b in range(n_bars):
        notes += bar_of(b, [(0, 40 + b, 4)], Track.ACCOMPANIMENT)
    for r in regions:
        content = (extra or {}).get(r, (MOTIF, OTHER))
        notes += bar_of(r, content[0]) + bar_of(r + 1, content[1])
    ids, _ = annotate_theme_tokens(encode_piece(Piece(notes=tuple(notes))), [(r, r + 2) for r in regions])
    return ids


def test_theme_gap():
    assert theme_gap(_themed([0, 9])) == 9.0
    assert theme_gap(_themed([0, 8, 16])) == 8.0
    assert theme_gap(_themed([4])) is None


def test_theme_inconsistency_pair_equals_distance(store):
    ids = _themed([0, 9], extra={9: (OTHER, MOTIF)})
    a = fragment_to_melody_tokens(bar_of(0, MOTIF) + bar_of(1, OTHER))
    b = fragment_to_melody_tokens(bar_of(0, OTHER) + bar_of(1, MOTIF))
    assert theme_inconsistency(ids, store, CFG) == pytest.approx(distance(store, CFG, a, b), abs=1e-9)


def test_identical_regions_give_zero(store):
    ids = _themed([0, 6, 12])
    assert theme_inconsistency(ids, store, CFG) == 0.0
    cond, _ = annotate_theme_tokens(encode_piece(Piece(notes=tuple(bar_of(0, MOTIF) + bar_of(1, OTHER)))), [(0, 2)])
    assert theme_uncontrollability(ids, cond, store, CFG) == 0.0


def test_theme_metrics_ignore_accompaniment(store):
    ids = _themed([0, 9], extra={9: (OTHER, MOTIF)})
    base = theme_inconsistency(ids, store, CFG)
    notes = bar_of(0, MOTIF) + bar_of(1, OTHER) + bar_of(9, OTHER) + bar_of(10, MOTIF)
    notes += bar_of(0, [(3, 33, 2), (9, 35, 5)], Track.ACCOMPANIMENT)
    ids2, _ = annotate_theme_tokens(encode_piece(Piece(notes=tuple(notes))), [(0, 2), (9, 11)])
    assert theme_inconsistency(ids2, store, CFG) == base


def test_uncontrollability_duplicate_region_unchanged(store):
    cond, _ = annotate_theme_tokens(encode_piece(Piece(notes=tuple(bar_of(0, OTHER) + bar_of(1, OTHER)))), [(0, 2)])
    one = theme_uncontrollability(_themed([0]), cond, store, CFG)
    two = theme_uncontrollability(_themed([0, 6]), cond, store, CFG)
    assert one == pytest.approx(two, abs=1e-12) and one > 0


def test_region_without_melody_is_excluded(store, caplog):
    notes = bar_of(0, MOTIF) + bar_of(1, OTHER) + bar_of(6, [(0, 40, 4)], Track.ACCOMPANIMENT)
    ids, _ = annotate_theme_tokens(encode_piece(Piece(notes=tuple(notes))), [(0, 2), (6, 7)])
    assert theme_inconsistency(ids, store, CFG) is None
    assert "no melody" in caplog.text


# ---------------------------------------------------------------- reports
def test_report_layout(tmp_path, store):
    ids = _themed([0, 9])
    rows = [evaluate_sequence(ids, store, CFG, condition=ids[: ids.index(ids[0], 1)]) for _ in range(2)]
    write_report(rows, ["a", "b"], tmp_path / "r.csv")
    lines = list(csv.reader(open(tmp_path / "r.csv")))
    assert lines[0][0] == "piece" and set(THEME_METRICS) <= set(lines[0])
    assert lines[-1][0] == "mean±std" and len(lines) == 4
    rows = [evaluate_sequence(ids, store, CFG, theme_metrics=False)]
    write_report(rows, ["a"], tmp_path / "p.csv", theme_metrics=False)
    header = next(csv.reader(open(tmp_path / "p.csv")))
    assert not set(THEME_METRICS) & set(header)


def test_summarize_skips_absent():
    out = summarize([{"x": 1.0}, {"x": None}, {"x": 3.0}, {"x": math.nan}], ["x", "y"])
    assert out == {"x": (2.0, 1.0), "y": None}


def test_curve_csv(tmp_path):
    write_curve(np.array([0.0, np.nan, 0.5]), tmp_path / "c.csv")
    assert (tmp_path / "c.csv").read_text().splitlines() == ["fragment,distance", "1,0.0", "2,nan", "3,0.5"]
