"""Piece <-> token conversion, fragment slicing and token files."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._kernels._pykernels import BAR, DURATION, PAD, PITCH, SUBBEAT, TEMPO, THEME_END, THEME_START, VELOCITY
from .grammar import GrammarError, GrammarState
from .music import SUBBEATS_PER_BAR, Note, Piece, Track, bin_tempo, tempo_bin
from .vocab import MELODY, PIANO, REST, MelodyVocabulary, Vocabulary


# ------------------------------------------------------------------ encode
def encode_piece(piece: Piece, vocab: Vocabulary = PIANO, themes: bool = True) -> list[int]:
    """Piano token ids for ``piece``.

    Per bar: ``Bar``; then for every occupied subbeat in ascending order a
    ``Subbeat`` token, a ``Tempo`` token when the tempo bin changes there,
    and the notes at that position (melody first, ascending pitch) as
    pitch/velocity/duration triples.  When ``themes`` is set, the piece's
    theme spans are bracketed with Theme-Start/Theme-End.
    """
    if not piece.notes and not piece.tempo_events:
        return []
    # tempo changes keyed by position, skipping events that keep the bin
    changes: dict[int, int] = {}
    last_bin = None
    for onset, bpm in piece.tempo_events:
        b = tempo_bin(bpm)
        if b != last_bin:
            changes[onset] = b
            last_bin = b
    by_pos: dict[int, list[Note]] = {}
    for n in piece.notes:
        by_pos.setdefault(n.onset, []).append(n)
    positions = sorted(set(by_pos) | set(changes))
    n_bars = positions[-1] // SUBBEATS_PER_BAR + 1

    ids: list[int] = []
    p = 0
    for bar in range(n_bars):
        ids.append(vocab.bar)
        end = (bar + 1) * SUBBEATS_PER_BAR
        while p < len(positions) and positions[p] < end:
            pos = positions[p]
            ids.append(vocab.subbeat(pos % SUBBEATS_PER_BAR))
            if pos in changes:
                ids.append(vocab.tempo(changes[pos]))
            for n in by_pos.get(pos, ()):
                ids.append(vocab.pitch(n.track, n.pitch))
                ids.append(vocab.velocity(n.track, n.velocity))
                ids.append(vocab.duration(n.track, n.duration))
            p += 1
    if themes and piece.theme_spans:
        ids, _ = annotate_theme_tokens(ids, piece.theme_spans, vocab)
    return ids


def annotate_theme_tokens(ids, spans, vocab: Vocabulary = PIANO) -> tuple[list[int], np.ndarray]:
    """Insert Theme-Start before the Bar opening each span and Theme-End
    after the span's last token.  Returns ``(ids, mask)`` where the mask is
    1 from each Theme-Start through its Theme-End."""
    ids = list(ids)
    spans = sorted(tuple(s) for s in spans)
    for (a0, a1), (b0, _) in zip(spans, spans[1:]):
        if b0 < a1:
            raise ValueError(f"overlapping theme spans {(a0, a1)} and {(b0, _)}")
    bar_at = [i for i, t in enumerate(ids) if t == vocab.bar]
    starts: dict[int, int] = {}
    ends: dict[int, int] = {}
    for s0, s1 in spans:
        if s1 <= s0 or s0 < 0 or s0 >= len(bar_at) or s1 > len(bar_at):
            raise ValueError(f"theme span {(s0, s1)} outside the piece's {len(bar_at)} bars")
        starts[bar_at[s0]] = starts.get(bar_at[s0], 0) + 1
        end_index = bar_at[s1] if s1 < len(bar_at) else len(ids)
        ends[end_index] = ends.get(end_index, 0) + 1
    out: list[int] = []
    mask: list[int] = []
    inside = 0
    for i in range(len(ids) + 1):
        for _ in range(ends.get(i, 0)):
            out.append(vocab.theme_end)
            mask.append(1)
            inside = 0
        for _ in range(starts.get(i, 0)):
            out.append(vocab.theme_start)
            mask.append(1)
            inside = 1
        if i < len(ids):
            out.append(ids[i])
            mask.append(inside)
    return out, np.array(mask, dtype=np.int8)


def theme_mask(ids, vocab: Vocabulary = PIANO) -> np.ndarray:
    """Theme-region mask recomputed from the theme tokens in ``ids``."""
    mask = np.zeros(len(ids), dtype=np.int8)
    inside = False
    for i, t in enumerate(ids):
        if t == vocab.theme_start:
            inside = True
        mask[i] = inside
        if t == vocab.theme_end:
            inside = False
    return mask


# ------------------------------------------------------------------ decode
@dataclass(frozen=True)
class ParsedSequence:
    notes: tuple[Note, ...]
    note_token_index: tuple[int, ...]  # index of each note's pitch token
    tempo_events: tuple[tuple[int, int], ...]
    regions: tuple[tuple[int, int], ...]  # (Theme-Start index, Theme-End index)
    bar_spans: tuple[tuple[int, int], ...]
    bar_of_token: np.ndarray  # bars opened so far at each token


def parse_tokens(ids, vocab: Vocabulary = PIANO, complete: bool = True) -> ParsedSequence:
    """Walk a piano token sequence, raising :class:`GrammarError` on the
    first violation."""
    state = GrammarState(vocab)
    notes: list[Note] = []
    note_index: list[int] = []
    tempo: list[tuple[int, int]] = []
    regions: list[tuple[int, int]] = []
    bar_spans: list[tuple[int, int]] = []
    bar_of_token = np.zeros(len(ids), dtype=np.int64)
    bar = -1
    pos = 0
    pitch = vel = 0
    track = Track.MELODY
    open_start = open_bar = None
    kinds, values, tracks = vocab.kind, vocab.value, vocab.track
    for i, tok in enumerate(ids):
        tok = int(tok)
        if not 0 <= tok < len(vocab):
            raise GrammarError(i, "unknown-token")
        state.advance(tok)
        k = kinds[tok]
        if k == BAR:
            bar += 1
        elif k == SUBBEAT:
            pos = bar * SUBBEATS_PER_BAR + int(values[tok])
        elif k == TEMPO:
            tempo.append((pos, bin_tempo(tempo_bin(int(values[tok])))))
        elif k == PITCH:
            pitch, track = int(values[tok]), Track(int(tracks[tok]))
        elif k == VELOCITY:
            vel = int(values[tok])
        elif k == DURATION:
            notes.append(Note(pos, track, pitch, vel, int(values[tok])))
            note_index.append(i - 2)
        elif k == THEME_START:
            open_start, open_bar = i, bar + 1
        elif k == THEME_END:
            regions.append((open_start, i))
            bar_spans.append((open_bar, bar + 1))
        bar_of_token[i] = bar + 1
    if complete:
        if state.pending:
            raise GrammarError(len(ids), "incomplete-note")
        if state.in_theme:
            raise GrammarError(len(ids), "theme-unclosed")
    return ParsedSequence(
        tuple(notes), tuple(note_index), tuple(tempo), tuple(regions), tuple(bar_spans), bar_of_token
    )


def decode_tokens(ids, vocab: Vocabulary = PIANO, piece_id: str = "") -> Piece:
    """Inverse of :func:`encode_piece`; theme tokens become ``theme_spans``."""
    parsed = parse_tokens(ids, vocab)
    return Piece(
        notes=parsed.notes,
        tempo_events=parsed.tempo_events,
        id=piece_id,
        theme_spans=parsed.bar_spans,
    )


# --------------------------------------------------------------- fragments
@dataclass(frozen=True)
class Fragment:
    piece_id: str
    start_bar: int
    melody: tuple[Note, ...]
    notes: tuple[Note, ...]

    @property
    def end_bar(self) -> int:
        return self.start_bar + 2

    @property
    def span(self) -> tuple[int, int]:
        return (self.start_bar, self.end_bar)

    def beats(self) -> set[int]:
        return set(range(4 * self.start_bar, 4 * self.end_bar))

    def excerpt(self, piece: Piece) -> Piece:
        """The fragment as a standalone piece starting at bar 0, with the tempo
        in effect at its start."""
        offset = self.start_bar * SUBBEATS_PER_BAR
        end = offset + 2 * SUBBEATS_PER_BAR
        tempo = [(0, bpm) for t, bpm in piece.tempo_events if t <= offset][-1:]
        tempo += [(t - offset, bpm) for t, bpm in piece.tempo_events if offset < t < end]
        notes = [Note(n.onset - offset, n.track, n.pitch, n.velocity, n.duration) for n in self.notes]
        return Piece(notes=tuple(notes), tempo_events=tuple(tempo), id=f"{self.piece_id}@{self.start_bar}")


def _start_bar(onset: int) -> int:
    bar, within = divmod(onset, SUBBEATS_PER_BAR)
    return bar if within < SUBBEATS_PER_BAR // 2 else bar + 1


def slice_fragments(piece: Piece) -> list[Fragment]:
    """Non-overlapping two-bar fragments covering the melody.

    Slicing starts at the bar of the first melody onset when that onset lies
    in the first half of its bar, otherwise at the next bar.  Two-bar
    fragments are cut until one of the two bars has no melody onset; the
    rest of the piece is then treated as a new piece and the procedure
    restarts.  No emitted fragment contains a bar without melody.
    """
    melody = piece.melody()
    if not melody:
        return []
    melody_bars = {n.bar for n in melody}
    last_bar = max(melody_bars)
    by_bar: dict[int, list[Note]] = {}
    for n in piece.notes:
        by_bar.setdefault(n.bar, []).append(n)
    onsets = sorted(n.onset for n in melody)

    frags: list[Fragment] = []
    b = _start_bar(onsets[0])
    while b <= last_bar:
        if b in melody_bars and b + 1 in melody_bars:
            notes = tuple(by_bar.get(b, []) + by_bar.get(b + 1, []))
            mel = tuple(n for n in notes if n.track == Track.MELODY)
            frags.append(Fragment(piece.id, b, mel, notes))
            b += 2
            continue
        # restart on the remainder
        resume = (b + 1 if b in melody_bars else b) * SUBBEATS_PER_BAR
        nxt = next((o for o in onsets if o >= resume), None)
        if nxt is None:
            break
        b = max(_start_bar(nxt), resume // SUBBEATS_PER_BAR)
    return frags


# ------------------------------------------------------------------ melody
def melody_events(notes) -> list[tuple[int, int]]:
    """Monophonic ``(pitch, duration)`` events from the first onset on.

    Gaps become ``REST`` events (split at 64 subbeats); overlapping notes are
    cut at the next onset and simultaneous onsets keep the highest pitch.
    """
    by_onset: dict[int, Note] = {}
    for n in notes:
        if n.onset not in by_onset or n.pitch > by_onset[n.onset].pitch:
            by_onset[n.onset] = n
    ordered = [by_onset[o] for o in sorted(by_onset)]
    events: list[tuple[int, int]] = []
    for i, n in enumerate(ordered):
        dur = n.duration
        if i + 1 < len(ordered):
            nxt = ordered[i + 1].onset
            dur = min(dur, nxt - n.onset)
        events.append((n.pitch, dur))
        if i + 1 < len(ordered):
            gap = ordered[i + 1].onset - (n.onset + dur)
            while gap > 0:
                step = min(gap, MELODY.durations)
                events.append((REST, step))
                gap -= step
    return events


def events_to_tokens(events, vocab: MelodyVocabulary = MELODY) -> list[int]:
    out: list[int] = []
    for p, d in events:
        out.append(vocab.pitch(p))
        out.append(vocab.duration(d))
    return out


def tokens_to_events(ids, vocab: MelodyVocabulary = MELODY) -> list[tuple[int, int]]:
    if len(ids) % 2:
        raise ValueError("melody token sequence must hold (pitch, duration) pairs")
    return [vocab.decode_pair(int(ids[i]), int(ids[i + 1])) for i in range(0, len(ids), 2)]


def events_to_timeline(events, start: int = 0) -> list[tuple[int, int, int]]:
    """``(onset, pitch, duration)`` of the pitched events."""
    out = []
    t = start
    for p, d in events:
        if p != REST:
            out.append((t, p, d))
        t += d
    return out


def fragment_to_melody_tokens(fragment: Fragment | list, vocab: MelodyVocabulary = MELODY) -> list[int]:
    notes = fragment.melody if isinstance(fragment, Fragment) else fragment
    return events_to_tokens(melody_events(notes), vocab)


def melody_of_tokens(ids, vocab: Vocabulary = PIANO, start: int = 0, stop: int | None = None) -> list[Note]:
    """Melody notes whose pitch token lies in ``ids[start:stop]``."""
    parsed = parse_tokens(ids, vocab, complete=False)
    stop = len(ids) if stop is None else stop
    return [
        n
        for n, idx in zip(parsed.notes, parsed.note_token_index)
        if start <= idx < stop and n.track == Track.MELODY
    ]


# -------------------------------------------------------------- token files
TOKEN_MAGIC = b"THMTOKS\0"
TOKEN_VERSION = 1
_KIND_CODE = {"piano": 0, "melody": 1}


def write_token_text(ids, path, vocab=PIANO) -> None:
    Path(path).write_text("".join(vocab.names[int(i)] + "\n" for i in ids))


def read_token_text(path, vocab: Vocabulary = PIANO) -> list[int]:
    lookup = {n: i for i, n in enumerate(vocab.names)}
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if line not in lookup:
            raise ValueError(f"{path}:{lineno}: unknown token {line!r}")
        out.append(lookup[line])
    return out


def write_token_binary(ids, path, kind: str = "piano") -> None:
    """16-byte header (magic, u16 version, u16 kind, u32 count) + u16 ids."""
    arr = np.asarray(ids, dtype="<u2")
    header = TOKEN_MAGIC + struct.pack("<HHI", TOKEN_VERSION, _KIND_CODE[kind], len(arr))
    Path(path).write_bytes(header + arr.tobytes())


def read_token_binary(path) -> tuple[list[int], str]:
    buf = Path(path).read_bytes()
    if len(buf) < 16 or buf[:8] != TOKEN_MAGIC:
        raise ValueError(f"{path}: not a token file")
    version, kind, count = struct.unpack("<HHI", buf[8:16])
    if version != TOKEN_VERSION:
        raise ValueError(f"{path}: unsupported token file version {version}")
    if len(buf) != 16 + 2 * count:
        raise ValueError(f"{path}: truncated token file")
    ids = np.frombuffer(buf[16:], dtype="<u2").astype(np.int64).tolist()
    return ids, {v: k for k, v in _KIND_CODE.items()}[kind]
