"""Autoregressive temperature sampling under a theme condition."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ._kernels._pykernels import PITCH, VELOCITY
from .autograd import no_grad
from .grammar import GrammarState
from .models import ModelConfig, build_positional_plan, decoder_forward, encode_condition
from .vocab import PIANO, Vocabulary


class GenerationError(RuntimeError):
    def __init__(self, message: str, partial: list[int]):
        super().__init__(message)
        self.partial = partial


@dataclass(frozen=True)
class GenConfig:
    temperature: float = 1.2  # 0 means greedy
    max_bars: int = 64
    max_tokens: int = 4096
    context: int = 512
    seed: int = 0
    constrained: bool = True

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_bars < 1 or self.max_tokens < 1 or self.context < 1:
            raise ValueError("max_bars, max_tokens and context must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


def _sample(logits: np.ndarray, allowed: np.ndarray | None, temperature: float, rng) -> int:
    logits = logits.astype(np.float64)
    if allowed is not None:
        logits = np.where(allowed, logits, -np.inf)
    if temperature == 0:
        return int(np.argmax(logits))
    z = logits / temperature
    z -= z.max()
    p = np.exp(z)
    p /= p.sum()
    return int(rng.choice(len(p), p=p))


def generate(
    store,
    config: ModelConfig,
    condition,
    gen: GenConfig = GenConfig(),
    vocab: Vocabulary = PIANO,
) -> list[int]:
    """Sample a token sequence.

    Theme variants start from a single Theme-Start token and attend to the
    encoded ``condition``; the prompt variant starts from the condition
    tokens themselves (theme tokens stripped).  Sampling stops before the
    Bar that would open bar ``max_bars + 1`` or at ``max_tokens``; a dangling
    note triple is dropped and an open theme region is closed.
    """
    rng = np.random.default_rng(gen.seed)
    theme_ids = (vocab.theme_start, vocab.theme_end)
    if config.has_encoder:
        seq = [vocab.theme_start]
        with no_grad():
            memory = encode_condition(store, config, [list(condition)])
    else:
        seq = [int(t) for t in condition if t not in theme_ids]
        memory = None
    state = GrammarState(vocab, allow_theme=config.has_encoder)
    for t in seq:
        state.advance(t)
    bars = seq.count(vocab.bar)
    while len(seq) < gen.max_tokens:
        plan = build_positional_plan(seq, vocab=vocab, online=True, max_condition=config.max_condition)
        lo = max(0, len(seq) - gen.context)
        with no_grad():
            logits = decoder_forward(
                store,
                config,
                np.asarray(seq[lo:])[None],
                memory,
                mask=plan.mask[lo:][None],
                cross_positions=plan.cross_positions[lo:][None],
                vocab=vocab,
            ).data[0, -1]
        allowed = state.allowed() if gen.constrained else None
        if allowed is not None and not allowed.any():
            raise GenerationError("no grammatical continuation", list(seq))
        tok = _sample(logits, allowed, gen.temperature, rng)
        if tok == vocab.bar:
            if bars >= gen.max_bars:
                break
            bars += 1
        if gen.constrained:
            state.advance(tok)
        seq.append(tok)
    return finish(seq, vocab)


def finish(seq: list[int], vocab: Vocabulary = PIANO) -> list[int]:
    """Drop an incomplete trailing note and close an open theme region."""
    seq = list(seq)
    while seq and vocab.kind[seq[-1]] in (PITCH, VELOCITY):
        seq.pop()
    open_region = False
    for t in seq:
        if t == vocab.theme_start:
            open_region = True
        elif t == vocab.theme_end:
            open_region = False
    if open_region:
        seq.append(vocab.theme_end)
    return seq
