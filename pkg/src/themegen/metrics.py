"""Objective metrics for generated pieces."""
from __future__ import annotations

import csv
import itertools
import logging
import math

import numpy as np

from .codec import fragment_to_melody_tokens, melody_of_tokens, parse_tokens
from .embedding import embed
from .music import SUBBEATS_PER_BAR, Piece, Track
from .vocab import PIANO, Vocabulary

log = logging.getLogger(__name__)

THEME_METRICS = ("theme_inconsistency", "theme_uncontrollability", "theme_gap")
METRICS = ("pitch_class_consistency", "melody_inconsistency", "grooving_consistency") + THEME_METRICS


def _bars(piece: Piece) -> dict[int, list]:
    out: dict[int, list] = {}
    for n in piece.notes:
        out.setdefault(n.bar, []).append(n)
    return out


def _mean_pairs(items, score) -> float | None:
    pairs = list(itertools.combinations(items, 2))
    if not pairs:
        return None
    return float(np.mean([score(a, b) for a, b in pairs]))


def pitch_class_consistency(piece: Piece) -> float | None:
    """Mean histogram overlap over all pairs of non-empty bars, each bar a
    duration-weighted pitch-class histogram of the notes starting in it."""
    hists = []
    for _, notes in sorted(_bars(piece).items()):
        h = np.zeros(12)
        for n in notes:
            h[n.pitch % 12] += n.duration
        hists.append(h / h.sum())
    return _mean_pairs(hists, lambda a, b: float(np.minimum(a, b).sum()))


def grooving_consistency(piece: Piece) -> float | None:
    """Mean of ``1 - XOR/16`` over all pairs of non-empty bars' onset vectors."""
    grooves = []
    for _, notes in sorted(_bars(piece).items()):
        g = np.zeros(SUBBEATS_PER_BAR, dtype=bool)
        g[[n.onset % SUBBEATS_PER_BAR for n in notes]] = True
        grooves.append(g)
    return _mean_pairs(grooves, lambda a, b: 1.0 - np.count_nonzero(a ^ b) / SUBBEATS_PER_BAR)


def _two_bar_melody(piece: Piece, start_bar: int) -> list:
    lo, hi = start_bar * SUBBEATS_PER_BAR, (start_bar + 2) * SUBBEATS_PER_BAR
    return [n for n in piece.notes if n.track == Track.MELODY and lo <= n.onset < hi]


def _distances_to(store, config, ref_tokens, others) -> np.ndarray:
    z = embed(store, config, [ref_tokens] + list(others)).astype(np.float64)
    return np.linalg.norm(z[1:] - z[0], axis=1)


def melody_inconsistency_curve(piece: Piece, store, config, fragments: int = 32) -> np.ndarray:
    """``D(S_1, S_i)`` for the two-bar fragments ``i = 1..fragments``; NaN
    where a fragment (or ``S_1``) has no melody."""
    curve = np.full(fragments, np.nan)
    first = _two_bar_melody(piece, 0)
    if not first:
        return curve
    idx, toks = [], []
    for i in range(fragments):
        mel = _two_bar_melody(piece, 2 * i)
        if mel:
            idx.append(i)
            toks.append(fragment_to_melody_tokens(mel))
    curve[idx] = _distances_to(store, config, fragment_to_melody_tokens(first), toks)
    curve[0] = 0.0
    return curve


def melody_inconsistency(piece: Piece, store, config) -> float | None:
    """Smallest distance from the first two bars' melody to a melodic two-bar
    fragment of bars 33-64."""
    curve = melody_inconsistency_curve(piece, store, config)
    tail = curve[16:]
    if np.isnan(curve[0]) or np.all(np.isnan(tail)):
        return None
    return float(np.nanmin(tail))


def theme_regions(tokens, vocab: Vocabulary = PIANO) -> list[tuple[int, int]]:
    return list(parse_tokens(tokens, vocab, complete=False).regions)


def _region_melodies(tokens, vocab) -> list[list]:
    out = []
    for a, b in theme_regions(tokens, vocab):
        mel = melody_of_tokens(tokens, vocab, a, b + 1)
        if mel:
            out.append(mel)
        else:
            log.warning("theme region at tokens %d..%d has no melody; excluded", a, b)
    return out


def theme_inconsistency(tokens, store, config, vocab: Vocabulary = PIANO) -> float | None:
    mels = _region_melodies(tokens, vocab)
    if len(mels) < 2:
        return None
    z = embed(store, config, [fragment_to_melody_tokens(m) for m in mels]).astype(np.float64)
    d = [np.linalg.norm(z[i] - z[j]) for i, j in itertools.combinations(range(len(z)), 2)]
    return float(np.mean(d))


def theme_uncontrollability(tokens, condition, store, config, vocab: Vocabulary = PIANO) -> float | None:
    mels = _region_melodies(tokens, vocab)
    cond = melody_of_tokens(list(condition), vocab)
    if not mels or not cond:
        return None
    d = _distances_to(store, config, fragment_to_melody_tokens(cond), [fragment_to_melody_tokens(m) for m in mels])
    return float(np.mean(d))


def theme_gap(tokens, vocab: Vocabulary = PIANO) -> float | None:
    """Mean bar distance between consecutive Theme-Start tokens."""
    bars = 0
    starts = []
    for t in tokens:
        if t == vocab.bar:
            bars += 1
        elif t == vocab.theme_start:
            starts.append(bars)
    if len(starts) < 2:
        return None
    return float(np.mean(np.diff(starts)))


def evaluate_sequence(tokens, store, config, condition=None, theme_metrics: bool = True, vocab: Vocabulary = PIANO) -> dict:
    from .codec import decode_tokens

    piece = decode_tokens(tokens, vocab)
    row = {
        "pitch_class_consistency": pitch_class_consistency(piece),
        "melody_inconsistency": melody_inconsistency(piece, store, config),
        "grooving_consistency": grooving_consistency(piece),
    }
    if theme_metrics:
        row["theme_inconsistency"] = theme_inconsistency(tokens, store, config, vocab)
        row["theme_uncontrollability"] = (
            theme_uncontrollability(tokens, condition, store, config, vocab) if condition is not None else None
        )
        row["theme_gap"] = theme_gap(tokens, vocab)
    return row


def summarize(rows: list[dict], columns) -> dict:
    out = {}
    for c in columns:
        vals = [r[c] for r in rows if r.get(c) is not None and not math.isnan(r[c])]
        out[c] = (float(np.mean(vals)), float(np.std(vals))) if vals else None
    return out


def write_report(rows: list[dict], ids: list[str], path, theme_metrics: bool = True) -> None:
    """Per-piece CSV plus a ``mean±std`` summary row."""
    columns = [c for c in METRICS if theme_metrics or c not in THEME_METRICS]
    summary = summarize(rows, columns)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["piece"] + columns)
        for pid, r in zip(ids, rows):
            w.writerow([pid] + ["" if r.get(c) is None else repr(float(r[c])) for c in columns])
        w.writerow(["mean±std"] + ["" if summary[c] is None else f"{summary[c][0]:.4f}±{summary[c][1]:.4f}" for c in columns])


def write_curve(curve: np.ndarray, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["fragment", "distance"])
        for i, v in enumerate(curve, 1):
            w.writerow([i, "nan" if np.isnan(v) else repr(float(v))])
