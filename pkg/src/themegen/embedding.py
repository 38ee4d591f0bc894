"""Contrastive melody embedding: a small bidirectional Transformer over
melody tokens, mean-pooled and projected to a unit-length vector."""
from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass

import numpy as np

from . import nn
from .augment import augment
from .autograd import ParamStore, Tensor, adam_step, backward, load_checkpoint, no_grad, ops, save_checkpoint
from .codec import events_to_tokens, melody_events, slice_fragments
from .music import Key, piece_key
from .vocab import MELODY

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EmbedConfig:
    layers: int = 6
    hidden: int = 256
    heads: int = 8
    ff: int = 1024
    out_dim: int = 128
    alpha: float = 0.5
    batch: int = 128
    max_len: int = 256
    lr: float = 2e-4
    steps: int = 2760
    seed: int = 0
    positions: str = "both"  # "index", "onset" or "both"

    def __post_init__(self):
        for name in ("layers", "hidden", "heads", "ff", "out_dim", "batch", "max_len"):
            if getattr(self, name) <= 0:
                raise ValueError(f"EmbedConfig.{name} must be positive")
        if self.alpha <= 0:
            raise ValueError("temperature alpha must be positive")
        if self.hidden % self.heads:
            raise ValueError("hidden must be divisible by heads")
        if self.positions not in ("index", "onset", "both"):
            raise ValueError(f"unknown position scheme {self.positions!r}")

    def to_dict(self) -> dict:
        return asdict(self)


def init_embedding(config: EmbedConfig, dtype=np.float32) -> ParamStore:
    rng = np.random.default_rng(config.seed)
    store = ParamStore(dtype)
    h = config.hidden
    # unit-variance tables: small ones leave pitch and position nearly
    # invisible next to the layer-norm bias at the start of training
    store.add("tok", rng.normal(0.0, 1.0, size=(len(MELODY), h)))
    if config.positions in ("index", "both"):
        store.add("pos", rng.normal(0.0, 1.0, size=(config.max_len, h)))
    if config.positions in ("onset", "both"):
        store.add("onset", rng.normal(0.0, 1.0, size=(config.max_len, h)))
    for i in range(config.layers):
        nn.init_layer_norm(store, f"l{i}.ln1", h)
        nn.init_attention(store, f"l{i}.att", h, rng)
        nn.init_layer_norm(store, f"l{i}.ln2", h)
        nn.init_feed_forward(store, f"l{i}.ff", h, config.ff, rng)
    nn.init_layer_norm(store, "ln_f", h)
    nn.init_linear(store, "head", h, config.out_dim, rng)
    return store


def onset_positions(tokens) -> np.ndarray:
    """Position ``2 * onset + is_duration`` of each melody token, so that a
    split or merge leaves the positions of all later notes unchanged."""
    tokens = np.asarray(tokens, dtype=np.int64)
    durs = np.where(tokens[1::2] > MELODY.rest, tokens[1::2] - MELODY.rest, 0)
    onsets = np.concatenate([[0], np.cumsum(durs)])
    pos = np.empty(len(tokens), dtype=np.int64)
    pos[0::2] = 2 * onsets[: (len(tokens) + 1) // 2]
    pos[1::2] = 2 * onsets[: len(tokens) // 2] + 1
    return pos


def _pad(batch, config) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    if any(len(s) == 0 for s in batch):
        raise ValueError("cannot embed an empty melody token sequence")
    max_len = config.max_len
    longest = max(len(s) for s in batch)
    if longest > max_len:
        log.warning("truncating melody sequences of length %d to %d tokens", longest, max_len)
        longest = max_len
    ids = np.zeros((len(batch), longest), dtype=np.int64)
    onset = np.zeros((len(batch), longest), dtype=np.int64)
    for i, s in enumerate(batch):
        s = list(s[:longest])
        ids[i, : len(s)] = s
        onset[i, : len(s)] = onset_positions(s)
    np.minimum(onset, max_len - 1, out=onset)
    index = np.broadcast_to(np.arange(longest), ids.shape)
    return ids, index, onset, ids != MELODY.pad


def embed_tokens(store: ParamStore, config: EmbedConfig, batch) -> Tensor:
    """``(B, out_dim)`` unit-length embeddings of a batch of token lists."""
    ids, index, onset, valid = _pad(batch, config)
    h = ops.embedding_lookup(store["tok"], ids)
    if "pos" in store:
        h = ops.add(h, ops.embedding_lookup(store["pos"], index))
    if "onset" in store:
        h = ops.add(h, ops.embedding_lookup(store["onset"], onset))
    blocked = nn.key_padding_block(valid)
    for i in range(config.layers):
        x = nn.layer_norm(store, f"l{i}.ln1", h)
        q = nn.split_heads(nn.linear(store, f"l{i}.att.q", x), config.heads)
        k = nn.split_heads(nn.linear(store, f"l{i}.att.k", x), config.heads)
        v = nn.split_heads(nn.linear(store, f"l{i}.att.v", x), config.heads)
        a = nn.linear(store, f"l{i}.att.o", nn.merge_heads(nn.attend(q, k, v, blocked)))
        h = ops.add(h, a)
        h = ops.add(h, nn.feed_forward(store, f"l{i}.ff", nn.layer_norm(store, f"l{i}.ln2", h)))
    h = nn.layer_norm(store, "ln_f", h)
    w = valid.astype(h.dtype)[:, :, None] / valid.sum(axis=1).astype(h.dtype)[:, None, None]
    pooled = ops.sum_(ops.mul(h, Tensor(w)), axis=1)
    return ops.l2_normalize(nn.linear(store, "head", pooled))


def embed(store: ParamStore, config: EmbedConfig, batch, chunk: int = 256) -> np.ndarray:
    """Embeddings as a plain array, computed without a graph.

    Identical inputs are embedded once, so they map to bitwise identical
    vectors.
    """
    keys = [tuple(int(t) for t in s) for s in batch]
    unique = list(dict.fromkeys(keys))
    if not unique:
        return np.zeros((0, config.out_dim), dtype=store.dtype)
    out = []
    with no_grad():
        for i in range(0, len(unique), chunk):
            out.append(embed_tokens(store, config, unique[i : i + chunk]).data)
    table = np.concatenate(out)
    row = {k: i for i, k in enumerate(unique)}
    return table[[row[k] for k in keys]]


def pairwise_distances(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    sq = (z * z).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * z @ z.T
    d = np.sqrt(np.maximum(d2, 0.0))
    np.fill_diagonal(d, 0.0)
    return d


def distance(store: ParamStore, config: EmbedConfig, a, b) -> float:
    """Euclidean distance between the embeddings of two melody token lists."""
    z = embed(store, config, [a, b]).astype(np.float64)
    return float(np.linalg.norm(z[0] - z[1]))


def contrastive_loss(z: Tensor, positives, alpha: float = 0.5, groups=None) -> Tensor:
    """Mean over anchors of ``-log softmax(sim/alpha)[positive]``.

    ``positives[i]`` is the positive partner of item ``i`` (or -1 when ``i``
    is not an anchor).  The anchor itself never enters its denominator; with
    ``groups``, items sharing the anchor's group other than its positive are
    left out too.
    """
    n = z.shape[0]
    if n < 2:
        raise ValueError("contrastive loss needs a batch of at least 2 items")
    positives = np.asarray(positives, dtype=np.int64)
    anchors = np.flatnonzero(positives >= 0)
    if not len(anchors):
        raise ValueError("no anchors in batch")
    u = ops.l2_normalize(z)
    sim = ops.scale(ops.matmul(u, ops.transpose(u, (1, 0))), 1.0 / alpha)
    blocked = np.eye(n, dtype=bool)
    if groups is not None:
        groups = np.asarray(groups)
        blocked |= groups[:, None] == groups[None, :]
        blocked[np.arange(n), np.maximum(positives, 0)] &= positives < 0
    logits = ops.masked_fill(sim, blocked)
    logits = ops.slice_(logits, anchors)
    return ops.cross_entropy_with_logits(logits, positives[anchors], ignore_index=None)


@dataclass
class TrainingFragment:
    piece_id: str
    events: list
    key: Key


def _versions(frag: TrainingFragment, rng) -> list[list[tuple[int, int]]]:
    a1, _ = augment(frag.events, frag.key, rng)
    a2, _ = augment(frag.events, frag.key, rng)
    return [frag.events, a1, a2]


def train_embedding(
    fragments: list[TrainingFragment],
    config: EmbedConfig,
    loss_csv=None,
    store: ParamStore | None = None,
    callback=None,
) -> tuple[ParamStore, list[float]]:
    """Contrastive training: each step draws ``batch`` fragments from distinct
    pieces, builds two augmentations of each and takes an Adam step on the
    loss over the ``3 * batch`` items."""
    by_piece: dict[str, list[TrainingFragment]] = {}
    for f in fragments:
        by_piece.setdefault(f.piece_id, []).append(f)
    pieces = sorted(by_piece)
    if len(pieces) < config.batch:
        raise ValueError(
            f"only {len(pieces)} distinct pieces for a batch of {config.batch}; use a smaller batch"
        )
    rng = np.random.default_rng(config.seed + 1)
    store = store or init_embedding(config)
    b = config.batch
    positives = np.concatenate([np.arange(b, 2 * b), np.arange(b), np.arange(b)])
    groups = np.tile(np.arange(b), 3)
    losses: list[float] = []
    writer = None
    fh = None
    if loss_csv is not None:
        fh = open(loss_csv, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(["step", "loss"])
    try:
        for step in range(config.steps):
            chosen = rng.choice(len(pieces), size=b, replace=False)
            versions = [[], [], []]
            for pi in chosen:
                group = by_piece[pieces[pi]]
                frag = group[int(rng.integers(len(group)))]
                for slot, ev in zip(versions, _versions(frag, rng)):
                    slot.append(events_to_tokens(ev))
            batch = versions[0] + versions[1] + versions[2]
            z = embed_tokens(store, config, batch)
            loss = contrastive_loss(z, positives, config.alpha, groups)
            backward(loss)
            adam_step(store, lr=config.lr)
            value = float(loss.data)
            if not np.isfinite(value):
                raise FloatingPointError(f"non-finite contrastive loss at step {step}")
            losses.append(value)
            if writer:
                writer.writerow([step, repr(value)])
            if callback:
                callback(step, value)
    finally:
        if fh:
            fh.close()
    return store, losses


def save_embedding(store: ParamStore, config: EmbedConfig, path) -> None:
    save_checkpoint(store, path, config=config.to_dict(), meta={"kind": "embedding", "config": config.to_dict()})


def load_embedding(path) -> tuple[ParamStore, EmbedConfig]:
    from .autograd import checkpoint

    _, _, meta = checkpoint.read_checkpoint(path)
    if meta.get("kind") != "embedding":
        raise checkpoint.CheckpointError(f"{path} is not an embedding checkpoint")
    config = EmbedConfig(**meta["config"])
    store, _ = load_checkpoint(path, config=config.to_dict())
    return store, config


def write_loss_csv(losses, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss"])
        for i, v in enumerate(losses):
            w.writerow([i, repr(float(v))])


def training_fragments(pieces) -> list[TrainingFragment]:
    """Melody events of every two-bar fragment of every piece."""
    out = []
    for p in pieces:
        key = piece_key(p)
        for f in slice_fragments(p):
            out.append(TrainingFragment(p.id, melody_events(f.melody), key))
    return out
