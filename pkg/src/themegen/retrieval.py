"""Theme retrieval: DBSCAN over fragment embeddings, theme selection and
beat-level scoring."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import _kernels
from .codec import Fragment, encode_piece, fragment_to_melody_tokens, slice_fragments
from .embedding import EmbedConfig, embed, pairwise_distances
from .music import Piece
from .vocab import PIANO, Vocabulary


class NoThemeFound(RuntimeError):
    pass


@dataclass(frozen=True)
class ClusterConfig:
    eps: float = 0.13
    min_points: int = 2

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.min_points < 2:
            raise ValueError("min_points must be at least 2")


@dataclass(frozen=True)
class ClusterResult:
    clusters: tuple[tuple[int, ...], ...]
    noise: tuple[int, ...]

    def labels(self, n: int) -> np.ndarray:
        out = np.full(n, -1, dtype=np.int64)
        for c, members in enumerate(self.clusters):
            out[list(members)] = c
        return out


def dbscan(points, config: ClusterConfig = ClusterConfig(), dist: np.ndarray | None = None) -> ClusterResult:
    """DBSCAN with Euclidean ``eps``-neighbourhoods (``d <= eps``, the point
    itself included in the ``min_points`` count).  Clusters are numbered in
    order of creation while scanning points by index."""
    if dist is None:
        dist = pairwise_distances(np.asarray(points, dtype=np.float64))
    n = dist.shape[0]
    if n == 0:
        return ClusterResult((), ())
    labels = _kernels.dbscan_labels(np.ascontiguousarray(dist, dtype=np.float64), float(config.eps), int(config.min_points))
    n_clusters = int(labels.max()) + 1 if n else 0
    clusters = tuple(tuple(int(i) for i in np.flatnonzero(labels == c)) for c in range(n_clusters))
    noise = tuple(int(i) for i in np.flatnonzero(labels < 0))
    seen = sorted(i for c in clusters for i in c) + list(noise)
    assert sorted(seen) == list(range(n)), "clusters and noise must partition the points"
    # with min_points >= 4 a core point can find all its neighbours already
    # claimed as borders and form a smaller cluster; standard DBSCAN keeps it
    return ClusterResult(clusters, noise)


def theme_cluster(result: ClusterResult) -> int:
    """Index of the largest cluster; ties go to the earliest first member."""
    if not result.clusters:
        raise NoThemeFound("every fragment is noise")
    return min(range(len(result.clusters)), key=lambda c: (-len(result.clusters[c]), result.clusters[c][0]))


@dataclass(frozen=True)
class ThemeCondition:
    fragment: Fragment
    excerpt: Piece
    tokens: tuple[int, ...]  # Theme-Start, excerpt tokens, Theme-End
    spans: tuple[tuple[int, int], ...]  # bar spans of every occurrence
    members: tuple[int, ...]  # fragment indices of the theme cluster

    def beats(self) -> set[int]:
        return {b for s0, s1 in self.spans for b in range(4 * s0, 4 * s1)}


def condition_tokens(excerpt: Piece, vocab: Vocabulary = PIANO) -> list[int]:
    """Encoder input for a theme excerpt, bracketed by theme tokens so its
    positions line up with a decoder theme region."""
    return [vocab.theme_start] + encode_piece(excerpt, vocab, themes=False) + [vocab.theme_end]


@dataclass
class Retrieval:
    """Everything computed while retrieving a piece's theme."""

    fragments: list[Fragment]
    embeddings: np.ndarray
    distances: np.ndarray
    result: ClusterResult
    condition: ThemeCondition | None


def analyse_piece(
    piece: Piece,
    store,
    embed_config: EmbedConfig,
    config: ClusterConfig = ClusterConfig(),
    vocab: Vocabulary = PIANO,
) -> Retrieval:
    fragments = slice_fragments(piece)
    if fragments:
        z = embed(store, embed_config, [fragment_to_melody_tokens(f) for f in fragments]).astype(np.float64)
    else:
        z = np.zeros((0, embed_config.out_dim))
    dist = pairwise_distances(z)
    result = dbscan(z, config, dist=dist)
    condition = None
    if result.clusters:
        members = result.clusters[theme_cluster(result)]
        first = fragments[members[0]]
        excerpt = first.excerpt(piece)
        condition = ThemeCondition(
            fragment=first,
            excerpt=excerpt,
            tokens=tuple(condition_tokens(excerpt, vocab)),
            spans=tuple(fragments[i].span for i in members),
            members=members,
        )
    return Retrieval(fragments, z, dist, result, condition)


def retrieve_theme(piece: Piece, store, embed_config: EmbedConfig, config: ClusterConfig = ClusterConfig()) -> ThemeCondition:
    """Theme condition of ``piece``: the earliest fragment of its largest
    fragment cluster, plus the spans of all cluster members."""
    r = analyse_piece(piece, store, embed_config, config)
    if len(r.fragments) < config.min_points:
        raise NoThemeFound(f"piece {piece.id!r} has only {len(r.fragments)} fragments")
    if r.condition is None:
        raise NoThemeFound(f"no fragment cluster in piece {piece.id!r}")
    return r.condition


def first_fragment_condition(piece: Piece, vocab: Vocabulary = PIANO) -> ThemeCondition:
    """Fallback condition built from the piece's first fragment."""
    fragments = slice_fragments(piece)
    if not fragments:
        raise NoThemeFound(f"piece {piece.id!r} has no melody fragments")
    f = fragments[0]
    excerpt = f.excerpt(piece)
    return ThemeCondition(f, excerpt, tuple(condition_tokens(excerpt, vocab)), (f.span,), (0,))


def with_theme(piece: Piece, condition: ThemeCondition) -> Piece:
    return replace(piece, theme_spans=tuple(sorted(condition.spans)))


def retrieval_f1(predicted, annotated) -> tuple[float, float, float]:
    predicted, annotated = set(predicted), set(annotated)
    if not annotated:
        raise ValueError("annotated beat set is empty; recall is undefined")
    hit = len(predicted & annotated)
    precision = hit / len(predicted) if predicted else 0.0
    recall = hit / len(annotated)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def cluster_report(piece: Piece, r: Retrieval) -> dict:
    labels = r.result.labels(len(r.fragments))
    off = r.distances[~np.eye(len(r.fragments), dtype=bool)]
    return {
        "piece": piece.id,
        "fragments": [
            {"span": list(f.span), "cluster": int(labels[i])} for i, f in enumerate(r.fragments)
        ],
        "clusters": [list(c) for c in r.result.clusters],
        "noise": list(r.result.noise),
        "theme_spans": [list(s) for s in r.condition.spans] if r.condition else [],
        "condition_span": list(r.condition.fragment.span) if r.condition else None,
        "distance_summary": {
            "min": float(off.min()) if off.size else None,
            "mean": float(off.mean()) if off.size else None,
            "max": float(off.max()) if off.size else None,
        },
    }
