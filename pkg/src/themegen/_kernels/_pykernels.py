"""Pure-Python versions of the compiled kernels in ``_ckernels.pyx``.

Both modules expose the same functions with the same semantics; the
package picks one at import time.
"""
import numpy as np

# token kind codes, mirrored in themegen.vocab
PAD, BAR, SUBBEAT, TEMPO, THEME_START, THEME_END, PITCH, VELOCITY, DURATION = range(9)

# grammar rule codes, 0 means no violation
(
    OK,
    NOTE_TRIPLE,
    TRACK_TAG,
    SUBBEAT_ORDER,
    SUBBEAT_BEFORE_BAR,
    TEMPO_POSITION,
    NOTE_POSITION,
    THEME_ALTERNATION,
    PADDING,
    INCOMPLETE_NOTE,
    THEME_UNCLOSED,
) = range(11)


def grammar_violation(kind, track, value, complete=True):
    """Return ``(position, rule)`` of the first violation, or ``(-1, 0)``."""
    n = len(kind)
    bars = 0
    sub = -1
    last = -1
    pending = 0
    ptrack = -1
    in_theme = False
    padded = False
    for i in range(n):
        k = kind[i]
        if padded and k != PAD:
            return i, PADDING
        if k == PAD:
            if pending:
                return i, NOTE_TRIPLE
            padded = True
            last = k
            continue
        if pending == 1:
            if k != VELOCITY:
                return i, NOTE_TRIPLE
            if track[i] != ptrack:
                return i, TRACK_TAG
            pending = 2
            last = k
            continue
        if pending == 2:
            if k != DURATION:
                return i, NOTE_TRIPLE
            if track[i] != ptrack:
                return i, TRACK_TAG
            pending = 0
            last = k
            continue
        if k == VELOCITY or k == DURATION:
            return i, NOTE_TRIPLE
        if k == BAR:
            bars += 1
            sub = -1
        elif k == SUBBEAT:
            if bars == 0:
                return i, SUBBEAT_BEFORE_BAR
            if value[i] <= sub:
                return i, SUBBEAT_ORDER
            sub = value[i]
        elif k == TEMPO:
            if last != SUBBEAT:
                return i, TEMPO_POSITION
        elif k == PITCH:
            if sub < 0:
                return i, NOTE_POSITION
            pending = 1
            ptrack = track[i]
        elif k == THEME_START:
            if in_theme:
                return i, THEME_ALTERNATION
            in_theme = True
        elif k == THEME_END:
            if not in_theme:
                return i, THEME_ALTERNATION
            in_theme = False
        last = k
    if complete:
        if pending:
            return n, INCOMPLETE_NOTE
        if in_theme:
            return n, THEME_UNCLOSED
    return -1, OK


def theme_cross_positions(mask, starts):
    """Cross-attention position per token.

    Inside a theme region the count runs 1, 2, ... from the region's first
    token; it restarts at every token flagged in ``starts`` and at every
    0 -> 1 transition of ``mask``.  Outside regions the position is 1.
    """
    n = len(mask)
    out = np.ones(n, dtype=np.int64)
    count = 0
    prev = 0
    for i in range(n):
        if mask[i]:
            if starts[i] or not prev:
                count = 1
            else:
                count += 1
            out[i] = count
        else:
            count = 0
        prev = mask[i]
    return out


def dbscan_labels(dist, eps, min_points):
    """DBSCAN over a precomputed distance matrix.

    Points are scanned in index order and clusters grow breadth-first, so a
    border point reachable from two clusters joins the one created first.
    Returns labels with -1 for noise.
    """
    n = dist.shape[0]
    labels = np.full(n, -2, dtype=np.int64)  # -2 unvisited
    neighbours = [np.flatnonzero(dist[i] <= eps) for i in range(n)]
    cluster = 0
    for i in range(n):
        if labels[i] != -2:
            continue
        if len(neighbours[i]) < min_points:
            labels[i] = -1
            continue
        labels[i] = cluster
        queue = list(neighbours[i])
        head = 0
        while head < len(queue):
            j = queue[head]
            head += 1
            if labels[j] == -1:
                labels[j] = cluster
            if labels[j] != -2:
                continue
            labels[j] = cluster
            if len(neighbours[j]) >= min_points:
                queue.extend(neighbours[j])
        cluster += 1
    return labels
