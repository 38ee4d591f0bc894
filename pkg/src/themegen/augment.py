"""Melody augmentations used for contrastive training and planted-theme
variation.

All operators work on melody event lists ``[(pitch_or_REST, duration), ...]``
as produced by :func:`themegen.codec.melody_events` and return new lists.
"""
from __future__ import annotations

import logging

import numpy as np

from .music import MAX_DURATION, Key
from .vocab import REST

log = logging.getLogger(__name__)

OPS = ("pitch_shift", "last_duration", "split_combine")


def shift_pitch_on_scale(pitch: int, key: Key, degrees: int) -> int:
    """Move ``pitch`` by ``degrees`` scale steps.  Chromatic pitches keep
    their offset above the scale tone below them."""
    steps = key.steps
    rel = pitch - key.tonic
    octave, pc = divmod(rel, 12)
    idx = max(i for i, s in enumerate(steps) if s <= pc)
    offset = pc - steps[idx]
    o2, idx2 = divmod(idx + degrees, len(steps))
    return key.tonic + 12 * (octave + o2) + steps[idx2] + offset


def pitch_shift_on_scale(events, key: Key, degrees: int):
    out = []
    clamped = 0
    for p, d in events:
        if p != REST:
            q = shift_pitch_on_scale(p, key, degrees)
            if not 1 <= q <= 127:
                clamped += 1
                q = min(max(q, 1), 127)
            p = q
        out.append((p, d))
    if clamped:
        log.warning("pitch shift by %d degrees clamped %d notes into 1..127", degrees, clamped)
    return out


def last_note_duration(events, rng: np.random.Generator):
    out = list(events)
    for i in range(len(out) - 1, -1, -1):
        if out[i][0] != REST:
            out[i] = (out[i][0], int(rng.integers(1, MAX_DURATION + 1)))
            break
    return out


def split_combine(events, rng: np.random.Generator, mode: str | None = None):
    """Split one even-length note into halves or merge one adjacent
    same-pitch pair.  ``mode`` forces ``"split"`` or ``"combine"``."""
    splits = [i for i, (p, d) in enumerate(events) if p != REST and d % 2 == 0]
    combines = [
        i
        for i in range(len(events) - 1)
        if events[i][0] != REST
        and events[i][0] == events[i + 1][0]
        and events[i][1] + events[i + 1][1] <= MAX_DURATION
    ]
    choices = []
    if splits and mode in (None, "split"):
        choices.append("split")
    if combines and mode in (None, "combine"):
        choices.append("combine")
    if not choices:
        return list(events)
    kind = choices[int(rng.integers(len(choices)))]
    out = list(events)
    if kind == "split":
        i = splits[int(rng.integers(len(splits)))]
        p, d = out[i]
        out[i : i + 1] = [(p, d // 2), (p, d // 2)]
    else:
        i = combines[int(rng.integers(len(combines)))]
        out[i : i + 2] = [(out[i][0], out[i][1] + out[i + 1][1])]
    return out


def augment(events, key: Key, rng: np.random.Generator, op: str | None = None, max_degrees: int = 3):
    """Apply one augmentation (uniformly chosen unless ``op`` is given).

    Returns ``(events, op)``.
    """
    if op is None:
        op = OPS[int(rng.integers(len(OPS)))]
    if op == "pitch_shift":
        deg = int(rng.integers(1, max_degrees + 1)) * (1 if rng.random() < 0.5 else -1)
        return pitch_shift_on_scale(events, key, deg), op
    if op == "last_duration":
        return last_note_duration(events, rng), op
    if op == "split_combine":
        return split_combine(events, rng), op
    raise ValueError(f"unknown augmentation {op!r}")
