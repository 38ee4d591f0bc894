"""Token vocabularies for the piano (generation) and melody (embedding) views."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ._kernels._pykernels import BAR, DURATION, PAD, PITCH, SUBBEAT, TEMPO, THEME_END, THEME_START, VELOCITY
from .music import MAX_DURATION, TEMPO_BINS, TEMPO_MIN, TEMPO_STEP, Track

KIND_NAMES = {
    PAD: "Padding",
    BAR: "Bar",
    SUBBEAT: "Subbeat",
    TEMPO: "Tempo",
    THEME_START: "Theme-Start",
    THEME_END: "Theme-End",
    PITCH: "Note-Pitch",
    VELOCITY: "Note-Velocity",
    DURATION: "Note-Duration",
}
TRACK_NAMES = {Track.MELODY: "Melody", Track.ACCOMPANIMENT: "Accompaniment"}
_TRACK_BY_NAME = {v: k for k, v in TRACK_NAMES.items()}


@dataclass(frozen=True)
class Vocabulary:
    """Piano vocabulary.

    Id layout: Padding, Bar, 16 Subbeats, the Tempo bins, Theme-Start,
    Theme-End, then per track (Melody, Accompaniment) the pitch, velocity
    and duration tokens.  With the default 76 tempo bins there are 730 ids.
    """

    tempo_bins: int = TEMPO_BINS
    tempo_min: int = TEMPO_MIN
    tempo_step: int = TEMPO_STEP
    pitches: int = 127
    velocities: int = 126
    durations: int = MAX_DURATION

    @cached_property
    def _tables(self):
        kind, track, value = [], [], []

        def put(k, t, v):
            kind.append(k)
            track.append(t)
            value.append(v)

        put(PAD, -1, 0)
        put(BAR, -1, 0)
        for s in range(16):
            put(SUBBEAT, -1, s)
        for b in range(self.tempo_bins):
            put(TEMPO, -1, self.tempo_min + self.tempo_step * b)
        put(THEME_START, -1, 0)
        put(THEME_END, -1, 0)
        for tr in (Track.MELODY, Track.ACCOMPANIMENT):
            for p in range(1, self.pitches + 1):
                put(PITCH, int(tr), p)
            for v in range(1, self.velocities + 1):
                put(VELOCITY, int(tr), v)
            for d in range(1, self.durations + 1):
                put(DURATION, int(tr), d)
        kind = np.array(kind, dtype=np.int8)
        track = np.array(track, dtype=np.int8)
        value = np.array(value, dtype=np.int16)
        for arr in (kind, track, value):
            arr.setflags(write=False)
        names = tuple(self._name(k, t, v) for k, t, v in zip(kind, track, value))
        index = {n: i for i, n in enumerate(names)}
        return kind, track, value, names, index

    @staticmethod
    def _name(k, t, v) -> str:
        if k in (PAD, BAR, THEME_START, THEME_END):
            return KIND_NAMES[k]
        if k in (SUBBEAT, TEMPO):
            return f"{KIND_NAMES[k]}:{v}"
        return f"{KIND_NAMES[k]}:{TRACK_NAMES[Track(t)]}:{v}"

    @property
    def kind(self) -> np.ndarray:
        return self._tables[0]

    @property
    def track(self) -> np.ndarray:
        return self._tables[1]

    @property
    def value(self) -> np.ndarray:
        return self._tables[2]

    @property
    def names(self) -> tuple[str, ...]:
        return self._tables[3]

    def __len__(self) -> int:
        return len(self.names)

    def id(self, name: str) -> int:
        return self._tables[4][name]

    def name(self, token_id: int) -> str:
        return self.names[token_id]

    # fixed-position ids
    pad = 0
    bar = 1

    def subbeat(self, s: int) -> int:
        return 2 + s

    def tempo(self, bin_index: int) -> int:
        if not 0 <= bin_index < self.tempo_bins:
            raise ValueError(f"tempo bin {bin_index} outside 0..{self.tempo_bins - 1}")
        return 18 + bin_index

    @property
    def theme_start(self) -> int:
        return 18 + self.tempo_bins

    @property
    def theme_end(self) -> int:
        return 19 + self.tempo_bins

    def _track_base(self, track) -> int:
        per_track = self.pitches + self.velocities + self.durations
        return 20 + self.tempo_bins + int(track) * per_track

    def pitch(self, track, p: int) -> int:
        return self._track_base(track) + p - 1

    def velocity(self, track, v: int) -> int:
        return self._track_base(track) + self.pitches + v - 1

    def duration(self, track, d: int) -> int:
        return self._track_base(track) + self.pitches + self.velocities + d - 1

    def counts(self) -> dict[str, int]:
        """Token count per type, mirroring the vocabulary table layout."""
        out: dict[str, int] = {}
        for k in self.kind:
            out[KIND_NAMES[int(k)]] = out.get(KIND_NAMES[int(k)], 0) + 1
        out["Theme"] = out.pop("Theme-Start") + out.pop("Theme-End")
        return out

    def ids_of_kind(self, kind: int, track: int | None = None) -> np.ndarray:
        sel = self.kind == kind
        if track is not None:
            sel &= self.track == track
        return np.flatnonzero(sel)

    def dump(self) -> str:
        """``id<TAB>name`` lines for auditing."""
        return "".join(f"{i}\t{n}\n" for i, n in enumerate(self.names))


REST = 0  # pitch value standing for a rest in melody events


@dataclass(frozen=True)
class MelodyVocabulary:
    """Melody vocabulary: Padding, 127 pitches, REST, 64 durations (193 ids)."""

    pitches: int = 127
    durations: int = MAX_DURATION

    pad = 0

    def __len__(self) -> int:
        return 1 + self.pitches + 1 + self.durations

    @property
    def rest(self) -> int:
        return self.pitches + 1

    def pitch(self, p: int) -> int:
        """Id of pitch ``p``; ``REST`` maps to the rest token."""
        if p == REST:
            return self.rest
        if not 1 <= p <= self.pitches:
            raise ValueError(f"pitch {p} outside 1..{self.pitches}")
        return p

    def duration(self, d: int) -> int:
        if not 1 <= d <= self.durations:
            raise ValueError(f"duration {d} outside 1..{self.durations}")
        return self.pitches + 1 + d

    def decode_pair(self, pitch_id: int, dur_id: int) -> tuple[int, int]:
        p = REST if pitch_id == self.rest else pitch_id
        if not (1 <= pitch_id <= self.rest) or not (self.rest < dur_id < len(self)):
            raise ValueError(f"bad melody token pair ({pitch_id}, {dur_id})")
        return p, dur_id - self.pitches - 1

    @property
    def names(self) -> tuple[str, ...]:
        return (
            ("Padding",)
            + tuple(f"Pitch:{p}" for p in range(1, self.pitches + 1))
            + ("Rest",)
            + tuple(f"Duration:{d}" for d in range(1, self.durations + 1))
        )


PIANO = Vocabulary()
MELODY = MelodyVocabulary()


def track_from_name(name: str) -> Track:
    return _TRACK_BY_NAME[name]
