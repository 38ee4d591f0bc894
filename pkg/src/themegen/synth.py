"""Synthetic pieces with planted, varied two-bar themes."""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .augment import augment
from .codec import events_to_timeline
from .music import SUBBEATS_PER_BAR, Key, Note, Piece, Track, bin_tempo, tempo_bin

THEME_BARS = 2
_PROGRESSION = (0, 3, 4, 5)  # I IV V vi as scale-degree roots
_DURATIONS = (1, 2, 2, 3, 4, 4, 4, 6, 6, 8, 8, 10, 12, 16)


@dataclass(frozen=True)
class SynthSpec:
    occurrences: int = 4
    variation_budget: int = 1  # augmentation ops applied to each repeat
    filler_bars: tuple[int, ...] = (2, 4)  # choices for the gap between repeats
    lead_bars: tuple[int, ...] = (0, 2)  # choices for bars before the first theme
    rng_seed: int = 0
    key: str | None = None  # random when unset
    theme_length_bars: int = THEME_BARS
    accompaniment_step: int = 4
    bpm: int = 119

    def __post_init__(self):
        if self.occurrences < 2:
            raise ValueError("a planted theme needs at least 2 occurrences")
        if self.theme_length_bars != THEME_BARS:
            raise ValueError("themes span exactly 2 bars")
        if self.variation_budget < 0:
            raise ValueError("variation_budget must be >= 0")
        for n in self.filler_bars + self.lead_bars:
            if n < 0 or n % 2:
                raise ValueError("filler and lead bar counts must be even and >= 0")
        if not self.filler_bars or not self.lead_bars:
            raise ValueError("filler_bars and lead_bars need at least one choice")


def _scale_pitches(key: Key, lo: int, hi: int) -> list[int]:
    return [p for p in range(lo, hi + 1) if (p - key.tonic) % 12 in key.steps]


def random_melody(rng: np.random.Generator, key: Key, bars: int = 2, lo: int = 60, hi: int = 81):
    """Stepwise random melody filling ``bars`` bars, as melody events.

    Every bar gets at least one onset because durations never exceed a
    half bar.
    """
    scale = _scale_pitches(key, lo, hi)
    total = bars * SUBBEATS_PER_BAR
    events: list[tuple[int, int]] = []
    t = 0
    idx = int(rng.integers(len(scale)))
    while t < total:
        d = int(rng.choice(_DURATIONS))
        d = min(d, total - t)
        idx = int(np.clip(idx + rng.integers(-3, 4), 0, len(scale) - 1))
        events.append((scale[idx], d))
        t += d
    return events


def _place(events, start: int, velocity: int = 80) -> list[Note]:
    return [Note(o, Track.MELODY, p, velocity, d) for o, p, d in events_to_timeline(events, start)]


def _accompaniment(key: Key, n_bars: int, step: int) -> list[Note]:
    scale = _scale_pitches(key, 36, 84)
    root_idx = scale.index(min(p for p in scale if p >= 48 and (p - key.tonic) % 12 == 0))
    notes = []
    for bar in range(n_bars):
        degree = _PROGRESSION[bar % len(_PROGRESSION)]
        chord = [scale[root_idx + degree + k] for k in (0, 2, 4, 2)]
        for i, t in enumerate(range(0, SUBBEATS_PER_BAR, step)):
            notes.append(Note(bar * SUBBEATS_PER_BAR + t, Track.ACCOMPANIMENT, chord[i % 4], 50, step))
    return notes


def synth_piece(spec: SynthSpec, audit: list | None = None, piece_id: str | None = None):
    """Build a piece with ``spec.occurrences`` planted theme occurrences.

    Returns ``(piece, theme_beats)``, the beat indices (4 per bar) covered by
    the occurrences.  Each repeat after the first receives
    ``variation_budget`` augmentation ops and differs from all earlier
    occurrences whenever the budget is positive.  ``audit`` collects one
    record per occurrence.
    """
    rng = np.random.default_rng(spec.rng_seed)
    key = Key.parse(spec.key) if spec.key else Key(int(rng.integers(12)), "major" if rng.random() < 0.5 else "minor")
    theme = random_melody(rng, key)

    bar = int(rng.choice(spec.lead_bars))
    melody: list[Note] = []
    for b in range(0, bar, 2):
        melody += _place(random_melody(rng, key, lo=55, hi=84), b * SUBBEATS_PER_BAR)
    spans = []
    seen = [theme]
    for k in range(spec.occurrences):
        events, ops = theme, []
        if k and spec.variation_budget:
            for _ in range(20):
                events, ops = theme, []
                for _ in range(spec.variation_budget):
                    events, op = augment(events, key, rng)
                    ops.append(op)
                if events not in seen:
                    break
            seen.append(events)
        if audit is not None:
            audit.append({"occurrence": k, "start_bar": bar, "ops": ops, "events": events})
        melody += _place(events, bar * SUBBEATS_PER_BAR)
        spans.append((bar, bar + THEME_BARS))
        bar += THEME_BARS
        for b in range(int(rng.choice(spec.filler_bars)) // 2):
            melody += _place(random_melody(rng, key, lo=55, hi=84), bar * SUBBEATS_PER_BAR)
            bar += 2
    # later notes cut earlier ones so the melody line stays monophonic
    melody = _monophonic(melody)
    notes = melody + _accompaniment(key, bar, spec.accompaniment_step)
    beats = {beat for b0, b1 in spans for beat in range(4 * b0, 4 * b1)}
    piece = Piece(
        notes=tuple(notes),
        tempo_events=((0, bin_tempo(tempo_bin(spec.bpm))),),
        id=piece_id or f"synth-{spec.rng_seed}",
        key=key,
    )
    return piece, beats


def _monophonic(notes: list[Note]) -> list[Note]:
    notes = sorted(notes)
    out = []
    for i, n in enumerate(notes):
        if i + 1 < len(notes) and n.end > notes[i + 1].onset:
            n = replace(n, duration=notes[i + 1].onset - n.onset)
        out.append(n)
    return out


def synth_corpus(n: int, seed: int = 0, **spec_kwargs) -> list[tuple[Piece, set[int]]]:
    """``n`` synthetic pieces with independent seeds derived from ``seed``."""
    seeds = np.random.SeedSequence(seed).generate_state(n)
    return [
        synth_piece(SynthSpec(rng_seed=int(s), **spec_kwargs), piece_id=f"synth-{seed}-{i:04d}")
        for i, s in enumerate(seeds)
    ]


def write_ground_truth(labels: dict[str, set[int]], path) -> None:
    Path(path).write_text(json.dumps({k: sorted(v) for k, v in sorted(labels.items())}, indent=2) + "\n")


def read_ground_truth(path) -> dict[str, set[int]]:
    return {k: set(v) for k, v in json.loads(Path(path).read_text()).items()}

