"""Hypothesis strategies and plain random generators shared by the tests."""
import numpy as np
from hypothesis import strategies as st

from themegen.music import MAX_DURATION, TEMPO_BINS, Note, Piece, Track, bin_tempo

notes = st.builds(
    Note,
    onset=st.integers(0, 16 * 12 - 1),
    track=st.sampled_from(list(Track)),
    pitch=st.integers(1, 127),
    velocity=st.integers(1, 126),
    duration=st.integers(1, MAX_DURATION),
)


@st.composite
def tempo_changes(draw, max_onset=16 * 12):
    """Canonical tempo events: binned values that change at every event."""
    onsets = sorted(draw(st.sets(st.integers(0, max_onset - 1), max_size=4)))
    out, last = [], None
    for t in onsets:
        b = draw(st.integers(0, TEMPO_BINS - 1).filter(lambda b: b != last))
        out.append((t, bin_tempo(b)))
        last = b
    return tuple(out)


@st.composite
def pieces(draw, min_notes=0):
    ns = draw(st.lists(notes, min_size=min_notes, max_size=40))
    return Piece(notes=tuple(ns), tempo_events=draw(tempo_changes()))


def random_piece(rng: np.random.Generator, n_bars: int = 8, piece_id: str = "") -> Piece:
    """A random quantized two-track piece with canonical tempo events."""
    ns = []
    for _ in range(int(rng.integers(1, 12 * n_bars))):
        ns.append(
            Note(
                int(rng.integers(0, 16 * n_bars)),
                Track(int(rng.integers(0, 2))),
                int(rng.integers(1, 128)),
                int(rng.integers(1, 127)),
                int(rng.integers(1, MAX_DURATION + 1)),
            )
        )
    tempo, last = [], None
    for t in sorted(set(rng.integers(0, 16 * n_bars, size=int(rng.integers(0, 4))).tolist())):
        b = int(rng.integers(0, TEMPO_BINS))
        if b != last:
            tempo.append((t, bin_tempo(b)))
            last = b
    return Piece(notes=tuple(ns), tempo_events=tuple(tempo), id=piece_id)


def melody_note(onset, pitch, duration, velocity=80):
    return Note(onset, Track.MELODY, pitch, velocity, duration)


# mask strings over {0,1}; theme starts flagged separately
masks = st.lists(st.integers(0, 1), min_size=0, max_size=200).map(lambda m: np.array(m, dtype=np.int8))
