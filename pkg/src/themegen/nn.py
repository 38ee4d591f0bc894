"""Transformer building blocks on top of :mod:`themegen.autograd`.

Parameters live in a :class:`ParamStore` under dotted prefixes; the helpers
here create them (``init_*``) and apply them.
"""
from __future__ import annotations

import functools

import numpy as np

from .autograd import ParamStore, Tensor, ops


def init_linear(store: ParamStore, name: str, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True):
    bound = 1.0 / np.sqrt(n_in)
    store.add(f"{name}.w", rng.uniform(-bound, bound, size=(n_in, n_out)))
    if bias:
        store.add(f"{name}.b", np.zeros(n_out))


def linear(store: ParamStore, name: str, x: Tensor) -> Tensor:
    y = ops.matmul(x, store[f"{name}.w"])
    if f"{name}.b" in store:
        y = ops.add(y, store[f"{name}.b"])
    return y


def init_layer_norm(store: ParamStore, name: str, dim: int):
    store.add(f"{name}.g", np.ones(dim))
    store.add(f"{name}.b", np.zeros(dim))


def layer_norm(store: ParamStore, name: str, x: Tensor) -> Tensor:
    return ops.layer_norm(x, store[f"{name}.g"], store[f"{name}.b"])


def init_feed_forward(store: ParamStore, name: str, hidden: int, ff: int, rng):
    init_linear(store, f"{name}.fc1", hidden, ff, rng)
    init_linear(store, f"{name}.fc2", ff, hidden, rng)


def feed_forward(store: ParamStore, name: str, x: Tensor, dropout: float = 0.0, rng=None) -> Tensor:
    h = ops.gelu(linear(store, f"{name}.fc1", x))
    h = ops.dropout(h, dropout, rng, training=rng is not None)
    return linear(store, f"{name}.fc2", h)


@functools.lru_cache(maxsize=32)
def _sinusoid(n_positions: int, dim: int) -> np.ndarray:
    # row p holds PE(p); row 0 is unused so positions are 1-based
    pos = np.arange(n_positions + 1, dtype=np.float64)[:, None]
    i = np.arange(dim // 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * i / dim)
    table = np.zeros((n_positions + 1, dim))
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle)
    table.setflags(write=False)
    return table


def sinusoid_positions(positions, dim: int, dtype=np.float32) -> np.ndarray:
    """Sinusoidal encodings ``PE(p)`` for 1-based integer positions."""
    if dim % 2:
        raise ValueError(f"sinusoidal encoding needs an even dimension, got {dim}")
    positions = np.asarray(positions, dtype=np.int64)
    top = int(positions.max()) if positions.size else 1
    size = 1 << max(6, int(np.ceil(np.log2(top + 1))))
    return _sinusoid(size, dim)[positions].astype(dtype)


def split_heads(x: Tensor, n_heads: int) -> Tensor:
    b, t, h = x.shape
    return ops.transpose(ops.reshape(x, (b, t, n_heads, h // n_heads)), (0, 2, 1, 3))


def merge_heads(x: Tensor) -> Tensor:
    b, nh, t, dh = x.shape
    return ops.reshape(ops.transpose(x, (0, 2, 1, 3)), (b, t, nh * dh))


def attend(q: Tensor, k: Tensor, v: Tensor, blocked: np.ndarray | None) -> Tensor:
    """Scaled dot-product attention over split heads.

    ``blocked`` broadcasts against ``(B, heads, Tq, Tk)``; true entries are
    excluded from the softmax.
    """
    scores = ops.scale(ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(q.shape[-1]))
    if blocked is not None:
        scores = ops.masked_fill(scores, blocked)
    return ops.matmul(ops.softmax(scores, axis=-1), v)


def init_attention(store: ParamStore, name: str, hidden: int, rng, parts=("q", "k", "v", "o")):
    for part in parts:
        init_linear(store, f"{name}.{part}", hidden, hidden, rng)


def causal_block(t: int) -> np.ndarray:
    return np.triu(np.ones((t, t), dtype=bool), k=1)[None, None]


def key_padding_block(valid: np.ndarray) -> np.ndarray:
    """``(B, Tk)`` validity -> blocked mask broadcastable to attention scores."""
    return ~np.asarray(valid, dtype=bool)[:, None, None, :]
