"""The three generative variants.

* ``prompt``: decoder-only; the condition is a prefix of the sequence.
* ``seq2seq``: encoder-decoder with cascaded self -> cross attention and a
  segment embedding marking theme positions.
* ``theme``: encoder-decoder whose decoder layers run self- and
  cross-attention in parallel and gate them with the theme-region mask; the
  cross route uses positions that restart at every theme region.

The encoder memory is the key/value pair of every encoder layer's
self-attention; decoder layer ``l`` attends to encoder layer ``l``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import _kernels, nn
from .autograd import ParamStore, Tensor, load_checkpoint, ops, save_checkpoint
from .autograd.checkpoint import CheckpointError, read_checkpoint
from .vocab import PIANO, Vocabulary

VARIANTS = ("prompt", "seq2seq", "theme")


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "theme"
    vocab_size: int = 730
    layers: int = 6  # decoder layers; encoder variants use as many encoder layers
    heads: int = 8
    hidden: int = 256
    ff: int = 1024
    max_condition: int = 512
    dropout: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.layers < 2 or self.layers % 2:
            raise ValueError("layers must be even and >= 2")
        if self.hidden % self.heads:
            raise ValueError("hidden must be divisible by heads")
        if self.hidden % 2:
            raise ValueError("hidden must be even for sinusoidal positions")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    @property
    def has_encoder(self) -> bool:
        return self.variant != "prompt"

    def to_dict(self) -> dict:
        return asdict(self)


def init_params(config: ModelConfig, dtype=np.float32) -> ParamStore:
    rng = np.random.default_rng(config.seed)
    store = ParamStore(dtype)
    h, L = config.hidden, config.layers
    store.add("te", rng.normal(0.0, 1.0, size=(config.vocab_size, h)))
    if config.has_encoder:
        for i in range(L):
            nn.init_layer_norm(store, f"enc.{i}.ln1", h)
            last = i == L - 1
            # the last layer only contributes keys and values to the memory
            nn.init_attention(store, f"enc.{i}.att", h, rng, parts=("k", "v") if last else ("q", "k", "v", "o"))
            if not last:
                nn.init_layer_norm(store, f"enc.{i}.ln2", h)
                nn.init_feed_forward(store, f"enc.{i}.ff", h, config.ff, rng)
    if config.variant == "seq2seq":
        store.add("se", rng.normal(0.0, 1.0, size=(2, h)))
    for i in range(L):
        nn.init_layer_norm(store, f"dec.{i}.ln1", h)
        nn.init_attention(store, f"dec.{i}.att", h, rng)
        if config.has_encoder:
            nn.init_attention(store, f"dec.{i}.cross", h, rng, parts=("q", "o"))
        if config.variant == "seq2seq":
            nn.init_layer_norm(store, f"dec.{i}.lnc", h)
        nn.init_layer_norm(store, f"dec.{i}.ln2", h)
        nn.init_feed_forward(store, f"dec.{i}.ff", h, config.ff, rng)
    nn.init_layer_norm(store, "ln_f", h)
    nn.init_linear(store, "out", h, config.vocab_size, rng)
    return store


# ------------------------------------------------------------ positions
@dataclass(frozen=True)
class PositionalPlan:
    self_positions: np.ndarray  # (T,) 1..T
    cross_positions: np.ndarray  # (T,) restarts at each theme region
    mask: np.ndarray  # (T,) theme-region bits


def build_positional_plan(
    tokens=None,
    mask=None,
    vocab: Vocabulary = PIANO,
    online: bool = False,
    max_condition: int | None = None,
) -> PositionalPlan:
    """Self and cross positions for a decoder sequence.

    From ``tokens`` the mask is derived from the theme tokens and positions
    restart at every Theme-Start; offline (``online=False``) the theme
    tokens must alternate and close.  From a bare ``mask`` positions restart
    at each 0 -> 1 transition.
    """
    if tokens is not None:
        tokens = np.asarray(tokens, dtype=np.int64)
        starts = tokens == vocab.theme_start
        ends = tokens == vocab.theme_end
        depth = np.cumsum(starts.astype(np.int64) - ends.astype(np.int64))
        if np.any(depth < 0) or np.any(depth > 1) or (not online and len(depth) and depth[-1] != 0):
            raise ValueError("unbalanced theme tokens")
        derived = (depth + ends).astype(np.int8)
        if mask is not None and not np.array_equal(np.asarray(mask, dtype=np.int8), derived):
            raise ValueError("mask disagrees with the theme tokens")
        mask = derived
    elif mask is not None:
        mask = np.asarray(mask, dtype=np.int8)
        starts = np.zeros(len(mask), dtype=bool)
    else:
        raise ValueError("need tokens or a mask")
    cross = _kernels.theme_cross_positions(
        np.ascontiguousarray(mask, dtype=np.int8), np.ascontiguousarray(starts, dtype=np.int8)
    )
    if max_condition is not None:
        cross = np.minimum(cross, max_condition)
    return PositionalPlan(np.arange(1, len(mask) + 1), np.asarray(cross, dtype=np.int64), mask)


# --------------------------------------------------------------- encoder
@dataclass
class Memory:
    keys: list[Tensor]  # per layer, (B, heads, tau, dh)
    values: list[Tensor]
    valid: np.ndarray  # (B, tau)

    @property
    def block(self) -> np.ndarray:
        return nn.key_padding_block(self.valid)


def _pad_batch(seqs, pad: int = 0) -> tuple[np.ndarray, np.ndarray]:
    longest = max(len(s) for s in seqs)
    ids = np.full((len(seqs), longest), pad, dtype=np.int64)
    valid = np.zeros((len(seqs), longest), dtype=bool)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
        valid[i, : len(s)] = True
    return ids, valid


def _pe(positions, config: ModelConfig, store: ParamStore) -> Tensor:
    return Tensor(nn.sinusoid_positions(positions, config.hidden, dtype=store.dtype))


def encode_condition(store: ParamStore, config: ModelConfig, conditions, rng=None) -> Memory:
    """Run the encoder over a batch of condition token lists."""
    if not config.has_encoder:
        raise ValueError("the prompt variant has no encoder")
    if isinstance(conditions, np.ndarray) and conditions.ndim == 1:
        conditions = [conditions]
    conditions = [list(c) for c in conditions]
    if any(len(c) == 0 for c in conditions):
        raise ValueError("empty condition sequence")
    if max(len(c) for c in conditions) > config.max_condition:
        raise ValueError(f"condition longer than max_condition={config.max_condition}")
    ids, valid = _pad_batch(conditions)
    b, tau = ids.shape
    pe = _pe(np.arange(1, tau + 1), config, store)
    h = ops.add(ops.embedding_lookup(store["te"], ids), pe)
    if config.variant == "seq2seq":
        h = ops.add(h, ops.slice_(store["se"], 1))
    block = nn.key_padding_block(valid)
    keys, values = [], []
    for i in range(config.layers):
        x = nn.layer_norm(store, f"enc.{i}.ln1", h)
        xp = ops.add(x, pe) if config.variant == "theme" else x
        k = nn.split_heads(nn.linear(store, f"enc.{i}.att.k", xp), config.heads)
        v = nn.split_heads(nn.linear(store, f"enc.{i}.att.v", x), config.heads)
        keys.append(k)
        values.append(v)
        if i == config.layers - 1:
            break
        q = nn.split_heads(nn.linear(store, f"enc.{i}.att.q", xp), config.heads)
        a = nn.linear(store, f"enc.{i}.att.o", nn.merge_heads(nn.attend(q, k, v, block)))
        h = ops.add(h, ops.dropout(a, config.dropout, rng, training=rng is not None))
        f = nn.feed_forward(store, f"enc.{i}.ff", nn.layer_norm(store, f"enc.{i}.ln2", h), config.dropout, rng)
        h = ops.add(h, f)
    return Memory(keys, values, valid)


# --------------------------------------------------------------- decoder
def _self_attention(store, config, name, x_qk, x_v, causal):
    q = nn.split_heads(nn.linear(store, f"{name}.q", x_qk), config.heads)
    k = nn.split_heads(nn.linear(store, f"{name}.k", x_qk), config.heads)
    v = nn.split_heads(nn.linear(store, f"{name}.v", x_v), config.heads)
    return nn.linear(store, f"{name}.o", nn.merge_heads(nn.attend(q, k, v, causal)))


def _cross_attention(store, config, name, x_q, memory: Memory, layer: int):
    q = nn.split_heads(nn.linear(store, f"{name}.q", x_q), config.heads)
    a = nn.attend(q, memory.keys[layer], memory.values[layer], memory.block)
    return nn.linear(store, f"{name}.o", nn.merge_heads(a))


def _as_batch(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.int64)
    return x[None] if x.ndim == 1 else x


def decoder_forward(
    store: ParamStore,
    config: ModelConfig,
    tokens,
    memory: Memory | None = None,
    mask=None,
    cross_positions=None,
    vocab: Vocabulary = PIANO,
    rng=None,
) -> Tensor:
    """Next-token logits ``(B, T, vocab)`` for a batch of equal-length
    sequences.  ``mask`` and ``cross_positions`` default to the values
    implied by the theme tokens in ``tokens``."""
    tokens = _as_batch(tokens)
    b, t = tokens.shape
    if mask is None:
        plans = [build_positional_plan(row, vocab=vocab, online=True, max_condition=config.max_condition) for row in tokens]
        mask = np.stack([p.mask for p in plans])
        if cross_positions is None:
            cross_positions = np.stack([p.cross_positions for p in plans])
    mask = _as_batch(mask)
    if mask.shape != tokens.shape:
        raise ValueError(f"mask shape {mask.shape} does not match tokens {tokens.shape}")
    if cross_positions is None:
        cross_positions = np.stack(
            [build_positional_plan(mask=m, max_condition=config.max_condition).cross_positions for m in mask]
        )
    cross_positions = _as_batch(cross_positions)
    if config.has_encoder and memory is None:
        raise ValueError(f"the {config.variant} variant needs an encoder memory")
    if memory is not None and memory.valid.shape[0] != b:
        raise ValueError(f"memory batch {memory.valid.shape[0]} does not match tokens batch {b}")

    training = rng is not None
    causal = nn.causal_block(t)
    pe_self = _pe(np.arange(1, t + 1), config, store)
    h = ops.embedding_lookup(store["te"], tokens)
    if config.variant == "theme":
        pe_cross = _pe(cross_positions, config, store)
        m = Tensor(mask.astype(store.dtype)[:, :, None])
        not_m = Tensor(1.0 - mask.astype(store.dtype)[:, :, None])
    else:
        h = ops.add(h, pe_self)
        if config.variant == "seq2seq":
            h = ops.add(h, ops.embedding_lookup(store["se"], mask.astype(np.int64)))

    for i in range(config.layers):
        x = nn.layer_norm(store, f"dec.{i}.ln1", h)
        if config.variant == "theme":
            s = _self_attention(store, config, f"dec.{i}.att", ops.add(x, pe_self), x, causal)
            c = _cross_attention(store, config, f"dec.{i}.cross", ops.add(x, pe_cross), memory, i)
            if i >= config.layers // 2:  # top half: self-attention off inside themes
                a = ops.add(ops.mul(m, c), ops.mul(not_m, s))
            else:
                a = ops.add(ops.mul(m, c), s)
            h = ops.add(h, ops.dropout(a, config.dropout, rng, training))
        else:
            s = _self_attention(store, config, f"dec.{i}.att", x, x, causal)
            h = ops.add(h, ops.dropout(s, config.dropout, rng, training))
            if config.variant == "seq2seq":
                xc = nn.layer_norm(store, f"dec.{i}.lnc", h)
                c = _cross_attention(store, config, f"dec.{i}.cross", xc, memory, i)
                h = ops.add(h, ops.dropout(c, config.dropout, rng, training))
        f = nn.feed_forward(store, f"dec.{i}.ff", nn.layer_norm(store, f"dec.{i}.ln2", h), config.dropout, rng)
        h = ops.add(h, f)
    return nn.linear(store, "out", nn.layer_norm(store, "ln_f", h))


def forward(store, config: ModelConfig, tokens, condition=None, mask=None, cross_positions=None, rng=None) -> Tensor:
    """Encoder (if any) plus decoder in one call."""
    tokens = _as_batch(tokens)
    memory = None
    if config.has_encoder:
        if condition is None:
            raise ValueError(f"the {config.variant} variant needs a condition")
        if len(condition) and np.ndim(condition[0]) == 0:
            condition = [condition] * tokens.shape[0]
        memory = encode_condition(store, config, condition, rng)
    return decoder_forward(store, config, tokens, memory, mask, cross_positions, rng=rng)


# ------------------------------------------------------------ checkpoints
def save_model(store: ParamStore, config: ModelConfig, path, meta: dict | None = None) -> None:
    info = {"kind": "model", "variant": config.variant, "config": config.to_dict()}
    info.update(meta or {})
    save_checkpoint(store, path, config=config.to_dict(), meta=info)


def load_model(path, variant: str | None = None, dtype=None) -> tuple[ParamStore, ModelConfig, dict]:
    _, _, meta = read_checkpoint(path)
    if meta.get("kind") != "model":
        raise CheckpointError(f"{path} is not a model checkpoint")
    if variant is not None and meta["variant"] != variant:
        raise CheckpointError(f"{path} holds a {meta['variant']!r} model, not {variant!r}")
    config = ModelConfig(**meta["config"])
    store, meta = load_checkpoint(path, config=config.to_dict(), dtype=dtype)
    return store, config, meta
