# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels; see ``_pykernels.py`` for the reference semantics."""
import numpy as np

cdef enum:
    PAD = 0
    BAR = 1
    SUBBEAT = 2
    TEMPO = 3
    THEME_START = 4
    THEME_END = 5
    PITCH = 6
    VELOCITY = 7
    DURATION = 8

cdef enum:
    OK = 0
    NOTE_TRIPLE = 1
    TRACK_TAG = 2
    SUBBEAT_ORDER = 3
    SUBBEAT_BEFORE_BAR = 4
    TEMPO_POSITION = 5
    NOTE_POSITION = 6
    THEME_ALTERNATION = 7
    PADDING = 8
    INCOMPLETE_NOTE = 9
    THEME_UNCLOSED = 10


def grammar_violation(kind_in, track_in, value_in, bint complete=True):
    cdef const signed char[::1] kind = np.ascontiguousarray(kind_in, dtype=np.int8)
    cdef const signed char[::1] track = np.ascontiguousarray(track_in, dtype=np.int8)
    cdef const short[::1] value = np.ascontiguousarray(value_in, dtype=np.int16)
    cdef Py_ssize_t n = kind.shape[0]
    cdef Py_ssize_t i
    cdef int bars = 0, sub = -1, last = -1, pending = 0, ptrack = -1, k
    cdef bint in_theme = False, padded = False
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


def theme_cross_positions(mask_in, starts_in):
    cdef const signed char[::1] mask = np.ascontiguousarray(mask_in, dtype=np.int8)
    cdef const signed char[::1] starts = np.ascontiguousarray(starts_in, dtype=np.int8)
    cdef Py_ssize_t n = mask.shape[0]
    out_arr = np.ones(n, dtype=np.int64)
    cdef long long[::1] out = out_arr
    cdef long long count = 0
    cdef signed char prev = 0
    cdef Py_ssize_t i
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
    return out_arr


def dbscan_labels(dist_in, double eps, int min_points):
    cdef const double[:, ::1] dist = np.ascontiguousarray(dist_in, dtype=np.float64)
    cdef Py_ssize_t n = dist.shape[0]
    labels_arr = np.full(n, -2, dtype=np.int64)
    cdef long long[::1] labels = labels_arr
    counts_arr = np.zeros(n, dtype=np.int64)
    cdef long long[::1] counts = counts_arr
    queue_arr = np.empty(n * n + 1, dtype=np.int64)
    cdef long long[::1] queue = queue_arr
    cdef Py_ssize_t i, j, m, head, tail
    cdef long long cluster = 0
    for i in range(n):
        for j in range(n):
            if dist[i, j] <= eps:
                counts[i] += 1
    for i in range(n):
        if labels[i] != -2:
            continue
        if counts[i] < min_points:
            labels[i] = -1
            continue
        labels[i] = cluster
        head = 0
        tail = 0
        for m in range(n):
            if dist[i, m] <= eps:
                queue[tail] = m
                tail += 1
        while head < tail:
            j = queue[head]
            head += 1
            if labels[j] == -1:
                labels[j] = cluster
            if labels[j] != -2:
                continue
            labels[j] = cluster
            if counts[j] >= min_points:
                for m in range(n):
                    if dist[j, m] <= eps:
                        queue[tail] = m
                        tail += 1
        cluster += 1
    return labels_arr
