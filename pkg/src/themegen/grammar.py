"""Piano token grammar: full-sequence validation and an incremental state
machine used for constrained sampling."""
from __future__ import annotations

import numpy as np

from . import _kernels
from ._kernels._pykernels import (
    BAR,
    DURATION,
    INCOMPLETE_NOTE,
    NOTE_POSITION,
    NOTE_TRIPLE,
    OK,
    PAD,
    PADDING,
    PITCH,
    SUBBEAT,
    SUBBEAT_BEFORE_BAR,
    SUBBEAT_ORDER,
    TEMPO,
    TEMPO_POSITION,
    THEME_ALTERNATION,
    THEME_END,
    THEME_START,
    THEME_UNCLOSED,
    TRACK_TAG,
    VELOCITY,
)
from .vocab import PIANO, Vocabulary

RULE_NAMES = {
    NOTE_TRIPLE: "note-triple",
    TRACK_TAG: "track-tag",
    SUBBEAT_ORDER: "subbeat-order",
    SUBBEAT_BEFORE_BAR: "subbeat-before-bar",
    TEMPO_POSITION: "tempo-position",
    NOTE_POSITION: "note-position",
    THEME_ALTERNATION: "theme-alternation",
    PADDING: "padding",
    INCOMPLETE_NOTE: "incomplete-note",
    THEME_UNCLOSED: "theme-unclosed",
}


class GrammarError(ValueError):
    def __init__(self, position: int, rule: str):
        super().__init__(f"grammar violation '{rule}' at token {position}")
        self.position = position
        self.rule = rule


def validate_grammar(ids, vocab: Vocabulary = PIANO, complete: bool = True) -> GrammarError | None:
    """Return the first violation in ``ids`` or ``None`` if the sequence is valid.

    ``complete`` additionally requires the sequence not to stop inside a
    note triple or an open theme region.
    """
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= len(vocab)):
        bad = int(np.flatnonzero((ids < 0) | (ids >= len(vocab)))[0])
        return GrammarError(bad, "unknown-token")
    pos, rule = _kernels.grammar_violation(vocab.kind[ids], vocab.track[ids], vocab.value[ids], complete)
    if rule == OK:
        return None
    return GrammarError(int(pos), RULE_NAMES[int(rule)])


class GrammarState:
    """Incremental grammar tracker.

    ``advance`` consumes one token (raising :class:`GrammarError` when it is
    not allowed); ``allowed`` returns a boolean mask of admissible next
    tokens.  Padding is never offered by ``allowed``.
    """

    def __init__(self, vocab: Vocabulary = PIANO, allow_theme: bool = True):
        self.vocab = vocab
        self.allow_theme = allow_theme
        self.bars = 0
        self.sub = -1
        self.last = -1
        self.pending = 0
        self.ptrack = -1
        self.in_theme = False
        self.padded = False
        self.position = 0
        self._groups = _groups(vocab)

    def copy(self) -> "GrammarState":
        other = GrammarState.__new__(GrammarState)
        other.__dict__.update(self.__dict__)
        return other

    def advance(self, token: int) -> None:
        v = self.vocab
        k, t, val = int(v.kind[token]), int(v.track[token]), int(v.value[token])
        rule = self._check(k, t, val)
        if rule:
            raise GrammarError(self.position, RULE_NAMES[rule])
        self.position += 1
        if k == PAD:
            self.padded = True
        elif self.pending == 1:
            self.pending = 2
        elif self.pending == 2:
            self.pending = 0
        elif k == BAR:
            self.bars += 1
            self.sub = -1
        elif k == SUBBEAT:
            self.sub = val
        elif k == PITCH:
            self.pending = 1
            self.ptrack = t
        elif k == THEME_START:
            self.in_theme = True
        elif k == THEME_END:
            self.in_theme = False
        self.last = k

    def _check(self, k: int, t: int, val: int) -> int:
        if self.padded and k != PAD:
            return PADDING
        if k == PAD:
            return NOTE_TRIPLE if self.pending else OK
        if self.pending == 1:
            return NOTE_TRIPLE if k != VELOCITY else (TRACK_TAG if t != self.ptrack else OK)
        if self.pending == 2:
            return NOTE_TRIPLE if k != DURATION else (TRACK_TAG if t != self.ptrack else OK)
        if k in (VELOCITY, DURATION):
            return NOTE_TRIPLE
        if k == SUBBEAT:
            if self.bars == 0:
                return SUBBEAT_BEFORE_BAR
            return SUBBEAT_ORDER if val <= self.sub else OK
        if k == TEMPO:
            return TEMPO_POSITION if self.last != SUBBEAT else OK
        if k == PITCH:
            return NOTE_POSITION if self.sub < 0 else OK
        if k == THEME_START:
            return THEME_ALTERNATION if self.in_theme else OK
        if k == THEME_END:
            return THEME_ALTERNATION if not self.in_theme else OK
        return OK

    @property
    def at_boundary(self) -> bool:
        """True when not inside a note triple."""
        return self.pending == 0

    def allowed(self) -> np.ndarray:
        g = self._groups
        mask = np.zeros(len(self.vocab), dtype=bool)
        if self.padded:
            return mask
        if self.pending == 1:
            mask[g["velocity"][self.ptrack]] = True
            return mask
        if self.pending == 2:
            mask[g["duration"][self.ptrack]] = True
            return mask
        mask[self.vocab.bar] = True
        if self.bars > 0 and self.sub < 15:
            mask[g["subbeat"][self.sub + 1 :]] = True
        if self.last == SUBBEAT:
            mask[g["tempo"]] = True
        if self.sub >= 0:
            mask[g["pitch"]] = True
        if self.allow_theme:
            mask[self.vocab.theme_end if self.in_theme else self.vocab.theme_start] = True
        return mask


_GROUP_CACHE: dict[Vocabulary, dict] = {}


def _groups(vocab: Vocabulary) -> dict:
    if vocab not in _GROUP_CACHE:
        _GROUP_CACHE[vocab] = {
            "subbeat": vocab.ids_of_kind(SUBBEAT),
            "tempo": vocab.ids_of_kind(TEMPO),
            "pitch": vocab.ids_of_kind(PITCH),
            "velocity": [vocab.ids_of_kind(VELOCITY, t) for t in (0, 1)],
            "duration": [vocab.ids_of_kind(DURATION, t) for t in (0, 1)],
        }
    return _GROUP_CACHE[vocab]
