"""Quantized symbolic pieces and Standard MIDI File input/output.

Time is measured in subbeats: a quarter-note beat holds 4 subbeats and a
4/4 bar holds 16.  The beat grid is the MIDI file's own ticks-per-quarter
resolution, i.e. the file is assumed to be metronomic.
"""
from __future__ import annotations

import enum
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import mido
import numpy as np

log = logging.getLogger(__name__)

SUBBEATS_PER_BEAT = 4
SUBBEATS_PER_BAR = 16
MAX_DURATION = 64
PITCH_RANGE = (1, 127)
VELOCITY_RANGE = (1, 126)
TEMPO_MIN, TEMPO_STEP, TEMPO_BINS = 17, 3, 76

PITCH_NAMES = ("C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B")
MAJOR_STEPS = (0, 2, 4, 5, 7, 9, 11)
MINOR_STEPS = (0, 2, 3, 5, 7, 8, 10)


class MeterError(ValueError):
    """Raised for pieces that are not in 4/4."""


class PieceValidationError(ValueError):
    pass


class Track(enum.IntEnum):
    MELODY = 0
    ACCOMPANIMENT = 1


@dataclass(frozen=True, order=True)
class Note:
    onset: int
    track: Track
    pitch: int
    velocity: int
    duration: int

    def __post_init__(self):
        if self.onset < 0:
            raise PieceValidationError(f"negative onset {self.onset}")
        if not 1 <= self.duration <= MAX_DURATION:
            raise PieceValidationError(f"duration {self.duration} outside 1..{MAX_DURATION}")
        if not PITCH_RANGE[0] <= self.pitch <= PITCH_RANGE[1]:
            raise PieceValidationError(f"pitch {self.pitch} outside 1..127")
        if not VELOCITY_RANGE[0] <= self.velocity <= VELOCITY_RANGE[1]:
            raise PieceValidationError(f"velocity {self.velocity} outside 1..126")

    @property
    def end(self) -> int:
        return self.onset + self.duration

    @property
    def bar(self) -> int:
        return self.onset // SUBBEATS_PER_BAR


@dataclass(frozen=True)
class Key:
    tonic: int  # pitch class 0..11
    mode: str = "major"

    @property
    def steps(self) -> tuple[int, ...]:
        return MAJOR_STEPS if self.mode == "major" else MINOR_STEPS

    def __str__(self) -> str:
        return f"{PITCH_NAMES[self.tonic]} {self.mode}"

    @classmethod
    def parse(cls, text: str) -> "Key":
        name, _, mode = text.strip().partition(" ")
        mode = (mode or "major").lower()
        if mode not in ("major", "minor"):
            raise ValueError(f"unknown mode in key {text!r}")
        flats = {"Db": "C#", "Eb": "D#", "Gb": "F#", "Ab": "G#", "Bb": "A#"}
        name = flats.get(name, name)
        if name not in PITCH_NAMES:
            raise ValueError(f"unknown tonic in key {text!r}")
        return cls(PITCH_NAMES.index(name), mode)


@dataclass(frozen=True)
class Piece:
    """A quantized two-track piece in 4/4.

    ``tempo_events`` are ``(onset, bpm)`` pairs; ``theme_spans`` are
    half-open bar ranges annotated as theme occurrences.
    """

    notes: tuple[Note, ...] = ()
    tempo_events: tuple[tuple[int, int], ...] = ()
    id: str = ""
    key: Key | None = None
    key_events: tuple[tuple[int, str], ...] = ()
    meter: tuple[int, int] = (4, 4)
    theme_spans: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "notes", tuple(sorted(self.notes)))
        object.__setattr__(self, "tempo_events", tuple(sorted(tuple(e) for e in self.tempo_events)))
        object.__setattr__(self, "theme_spans", tuple(tuple(s) for s in self.theme_spans))

    @property
    def n_bars(self) -> int:
        last = max([n.onset for n in self.notes] + [t for t, _ in self.tempo_events], default=-1)
        return last // SUBBEATS_PER_BAR + 1 if last >= 0 else 0

    def melody(self) -> list[Note]:
        return [n for n in self.notes if n.track == Track.MELODY]

    def with_notes(self, notes) -> "Piece":
        return replace(self, notes=tuple(notes))

    @property
    def changes_key(self) -> bool:
        return len({k for _, k in self.key_events}) > 1


# ----------------------------------------------------------------- tempo
def tempo_bin(bpm: float) -> int:
    """Index of the tempo bin holding ``bpm`` (bins start at 17 BPM, width 3)."""
    idx = math.floor((bpm - TEMPO_MIN) / TEMPO_STEP + 1e-6)
    if not 0 <= idx < TEMPO_BINS:
        raise PieceValidationError(
            f"tempo {bpm} BPM outside {TEMPO_MIN}..{TEMPO_MIN + TEMPO_STEP * (TEMPO_BINS - 1)}"
        )
    return idx


def bin_tempo(idx: int) -> int:
    return TEMPO_MIN + TEMPO_STEP * idx


def canonical_tempo(events) -> tuple[tuple[int, int], ...]:
    """Snap tempo values to bins and drop events that do not change the bin."""
    out: list[tuple[int, int]] = []
    for onset, bpm in sorted(events):
        bpm = bin_tempo(tempo_bin(bpm))
        if out and out[-1][0] == onset:
            out.pop()
        if out and out[-1][1] == bpm:
            continue
        out.append((onset, bpm))
    return tuple(out)


# ------------------------------------------------------------------- keys
# Krumhansl-Kessler key profiles
_MAJOR_PROFILE = np.array([6.35, 2.23, 3.48, 2.33, 4.38, 4.09, 2.52, 5.19, 2.39, 3.66, 2.29, 2.88])
_MINOR_PROFILE = np.array([6.33, 2.68, 3.52, 5.38, 2.60, 3.53, 2.54, 4.75, 3.98, 2.69, 3.34, 3.17])


def pitch_class_histogram(notes) -> np.ndarray:
    hist = np.zeros(12)
    for n in notes:
        hist[n.pitch % 12] += n.duration
    return hist


def estimate_key(notes) -> Key:
    """Duration-weighted pitch-class histogram matched against major/minor templates."""
    hist = pitch_class_histogram(notes)
    if not hist.any():
        return Key(0, "major")
    best, best_score = Key(0, "major"), -np.inf
    for mode, profile in (("major", _MAJOR_PROFILE), ("minor", _MINOR_PROFILE)):
        for tonic in range(12):
            score = np.corrcoef(hist, np.roll(profile, tonic))[0, 1]
            if score > best_score + 1e-12:
                best, best_score = Key(tonic, mode), score
    return best


def piece_key(piece: Piece) -> Key:
    return piece.key if piece.key is not None else estimate_key(piece.notes)


# ------------------------------------------------------------------- MIDI
DEFAULT_TRACK_MAP = {"MELODY": Track.MELODY, "PIANO": Track.ACCOMPANIMENT}


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _clamp(value: int, lo: int, hi: int, what: str, where: str) -> int:
    if value < lo or value > hi:
        log.warning("%s %d out of range in %s; clamped to %d..%d", what, value, where, lo, hi)
        return min(max(value, lo), hi)
    return value


def _role(name: str, track_map) -> Track | None:
    for key, role in track_map.items():
        if key.upper() == name.strip().upper():
            return Track[role.upper()] if isinstance(role, str) else Track(role)
    return None


def load_midi(path, track_map=None, piece_id: str | None = None, key: Key | str | None = None) -> Piece:
    """Read a format 0/1 MIDI file into a quantized :class:`Piece`.

    ``track_map`` maps track names to roles (``"melody"`` or
    ``"accompaniment"``); unmapped tracks, e.g. a BRIDGE track, are ignored.
    For a format 0 file the single track is taken as accompaniment unless
    mapped explicitly.
    """
    path = Path(path)
    track_map = DEFAULT_TRACK_MAP if track_map is None else track_map
    mid = mido.MidiFile(str(path))
    if mid.type not in (0, 1):
        raise ValueError(f"{path}: unsupported MIDI format {mid.type}")
    ticks_per_sub = mid.ticks_per_beat / SUBBEATS_PER_BEAT
    where = str(path)

    notes: list[Note] = []
    tempos: list[tuple[int, float]] = []
    key_events: list[tuple[int, str]] = []
    for i, track in enumerate(mid.tracks):
        role = _role(track.name, track_map)
        if role is None and mid.type == 0:
            role = Track.ACCOMPANIMENT
        tick = 0
        open_notes: dict[tuple[int, int], list[tuple[int, int]]] = {}
        for msg in track:
            tick += msg.time
            if msg.is_meta:
                if msg.type == "time_signature" and (msg.numerator, msg.denominator) != (4, 4):
                    raise MeterError(f"{path}: time signature {msg.numerator}/{msg.denominator}, only 4/4 admitted")
                if msg.type == "set_tempo":
                    tempos.append((tick, mido.tempo2bpm(msg.tempo)))
                if msg.type == "key_signature":
                    key_events.append((_round_half_up(tick / ticks_per_sub), msg.key))
                continue
            if role is None:
                continue
            if msg.type == "note_on" and msg.velocity > 0:
                open_notes.setdefault((msg.channel, msg.note), []).append((tick, msg.velocity))
            elif msg.type in ("note_off", "note_on"):
                stack = open_notes.get((msg.channel, msg.note))
                if not stack:
                    continue
                start, vel = stack.pop(0)
                onset = _round_half_up(start / ticks_per_sub)
                dur = _round_half_up(tick / ticks_per_sub) - onset
                dur = max(dur, 1)
                if dur > MAX_DURATION:
                    log.warning("duration %d too long in %s; clipped to %d", dur, where, MAX_DURATION)
                    dur = MAX_DURATION
                notes.append(
                    Note(
                        onset=onset,
                        track=role,
                        pitch=_clamp(msg.note, *PITCH_RANGE, "pitch", where),
                        velocity=_clamp(vel, *VELOCITY_RANGE, "velocity", where),
                        duration=dur,
                    )
                )
    if not tempos:
        tempos = [(0, 120.0)]
    tempo_events = canonical_tempo(
        (SUBBEATS_PER_BEAT * _round_half_up(t / mid.ticks_per_beat), bpm) for t, bpm in tempos
    )
    if isinstance(key, str):
        key = Key.parse(key)
    return Piece(
        notes=tuple(notes),
        tempo_events=tempo_events,
        id=piece_id if piece_id is not None else path.stem,
        key=key,
        key_events=tuple(key_events),
    )


def save_midi(piece: Piece, path, ticks_per_beat: int = 480) -> None:
    """Write a format 1 file with a conductor track, MELODY and PIANO."""
    tps = ticks_per_beat // SUBBEATS_PER_BEAT
    mid = mido.MidiFile(type=1, ticks_per_beat=ticks_per_beat)

    def absolute_to_track(name, events):
        track = mido.MidiTrack()
        track.append(mido.MetaMessage("track_name", name=name, time=0))
        last = 0
        for tick, _, msg in sorted(events, key=lambda e: (e[0], e[1])):
            track.append(msg.copy(time=tick - last))
            last = tick
        track.append(mido.MetaMessage("end_of_track", time=0))
        return track

    meta = [(0, 0, mido.MetaMessage("time_signature", numerator=4, denominator=4))]
    for onset, bpm in piece.tempo_events:
        meta.append((onset * tps, 1, mido.MetaMessage("set_tempo", tempo=mido.bpm2tempo(bpm))))
    mid.tracks.append(absolute_to_track("conductor", meta))
    for role, name, channel in ((Track.MELODY, "MELODY", 0), (Track.ACCOMPANIMENT, "PIANO", 1)):
        events = []
        for n in piece.notes:
            if n.track != role:
                continue
            events.append((n.onset * tps, 1, mido.Message("note_on", note=n.pitch, velocity=n.velocity, channel=channel)))
            events.append((n.end * tps, 0, mido.Message("note_off", note=n.pitch, velocity=0, channel=channel)))
        mid.tracks.append(absolute_to_track(name, events))
    mid.save(str(path))


# ----------------------------------------------------------------- corpus
def filter_corpus(pieces):
    """Keep 4/4 pieces that do not change key."""
    return [p for p in pieces if tuple(p.meter) == (4, 4) and not p.changes_key]


@dataclass
class ManifestEntry:
    path: str
    id: str
    tracks: dict = field(default_factory=lambda: {"MELODY": "melody", "PIANO": "accompaniment"})
    key: str | None = None


def read_manifest(path) -> list[ManifestEntry]:
    """Corpus manifest: JSON ``{"pieces": [{"path", "id", "tracks", "key"}]}``.

    Relative paths resolve against the manifest's directory.
    """
    path = Path(path)
    data = json.loads(path.read_text())
    entries = []
    for item in data["pieces"]:
        p = Path(item["path"])
        if not p.is_absolute():
            p = path.parent / p
        entries.append(
            ManifestEntry(
                path=str(p),
                id=item.get("id", p.stem),
                tracks=item.get("tracks", {"MELODY": "melody", "PIANO": "accompaniment"}),
                key=item.get("key"),
            )
        )
    return entries


def write_manifest(entries, path) -> None:
    path = Path(path)
    items = []
    for e in entries:
        item = {"path": e.path, "id": e.id, "tracks": e.tracks}
        if e.key is not None:
            item["key"] = e.key
        items.append(item)
    path.write_text(json.dumps({"pieces": items}, indent=2, sort_keys=True) + "\n")


def piece_to_dict(piece: Piece) -> dict:
    return {
        "id": piece.id,
        "key": str(piece.key) if piece.key else None,
        "key_events": [list(e) for e in piece.key_events],
        "meter": list(piece.meter),
        "tempo_events": [list(e) for e in piece.tempo_events],
        "theme_spans": [list(s) for s in piece.theme_spans],
        "notes": [[n.onset, int(n.track), n.pitch, n.velocity, n.duration] for n in piece.notes],
    }


def piece_from_dict(d: dict) -> Piece:
    return Piece(
        notes=tuple(Note(o, Track(t), p, v, du) for o, t, p, v, du in d["notes"]),
        tempo_events=tuple(tuple(e) for e in d.get("tempo_events", ())),
        id=d.get("id", ""),
        key=Key.parse(d["key"]) if d.get("key") else None,
        key_events=tuple(tuple(e) for e in d.get("key_events", ())),
        meter=tuple(d.get("meter", (4, 4))),
        theme_spans=tuple(tuple(s) for s in d.get("theme_spans", ())),
    )


def save_pieces(pieces, path) -> None:
    Path(path).write_text(
        "\n".join(json.dumps(piece_to_dict(p), sort_keys=True, separators=(",", ":")) for p in pieces) + "\n"
    )


def load_pieces(path) -> list[Piece]:
    lines = Path(path).read_text().splitlines()
    return [piece_from_dict(json.loads(line)) for line in lines if line.strip()]
