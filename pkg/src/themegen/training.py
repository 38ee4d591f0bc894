"""Training windows and the teacher-forced training loop."""
from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass

import numpy as np

from .autograd import ParamStore, adam_step, backward, no_grad, ops
from .models import ModelConfig, build_positional_plan, forward, init_params, save_model
from .vocab import PIANO, Vocabulary

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainingSequence:
    """One piece's token sequence with its theme condition."""

    tokens: np.ndarray
    condition: tuple[int, ...] | None
    piece_id: str = ""


@dataclass(frozen=True)
class TrainWindow:
    tokens: np.ndarray  # (T,)
    mask: np.ndarray  # (T,) sliced from the piece-level mask
    cross_positions: np.ndarray  # (T,) sliced from the piece-level plan
    condition: tuple[int, ...] | None
    piece_id: str
    start: int


@dataclass(frozen=True)
class TrainConfig:
    window: int = 512
    batch: int = 8
    lr: float = 2e-4
    steps: int = 1000
    seed: int = 0
    windows: int | None = None  # subsample to this many windows
    checkpoint_every: int = 0
    log_every: int = 50

    def __post_init__(self):
        if self.window < 2:
            raise ValueError("window must be >= 2")
        if self.batch < 1 or self.steps < 0:
            raise ValueError("batch must be >= 1 and steps >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


def theme_window_starts(tokens, window: int, vocab: Vocabulary = PIANO) -> np.ndarray:
    """Every start offset whose window covers a Theme-Start or Theme-End."""
    tokens = np.asarray(tokens)
    n = len(tokens)
    if n < window:
        return np.zeros(0, dtype=np.int64)
    ok = np.zeros(n - window + 1, dtype=bool)
    for p in np.flatnonzero((tokens == vocab.theme_start) | (tokens == vocab.theme_end)):
        lo, hi = max(0, p - window + 1), min(p, n - window)
        ok[lo : hi + 1] = True
    return np.flatnonzero(ok)


def make_windows(
    sequences: list[TrainingSequence],
    window: int,
    variant: str,
    count: int | None = None,
    seed: int = 0,
    vocab: Vocabulary = PIANO,
    max_condition: int | None = None,
) -> list[TrainWindow]:
    """Training windows of ``window`` tokens.

    Theme variants take windows covering at least one theme token; the
    prompt variant takes uniformly random offsets (``len // window`` per
    sequence unless ``count`` is given).  With ``count`` the candidates are
    subsampled with a seeded generator.
    """
    rng = np.random.default_rng(seed)
    candidates: list[tuple[int, int]] = []
    plans = []
    for si, seq in enumerate(sequences):
        tokens = np.asarray(seq.tokens, dtype=np.int64)
        n = len(tokens)
        plans.append(build_positional_plan(tokens, vocab=vocab, max_condition=max_condition))
        if n < window:
            log.warning("sequence %r has %d tokens, fewer than the window %d; skipped", seq.piece_id, n, window)
            continue
        if variant == "prompt":
            starts = np.arange(n - window + 1)
            if count is None:
                starts = rng.choice(starts, size=max(1, n // window), replace=False)
        else:
            starts = theme_window_starts(tokens, window, vocab)
        candidates += [(si, int(s)) for s in starts]
    if count is not None and len(candidates) > count:
        pick = np.sort(rng.choice(len(candidates), size=count, replace=False))
        candidates = [candidates[i] for i in pick]
    out = []
    for si, s in candidates:
        seq, plan = sequences[si], plans[si]
        sl = slice(s, s + window)
        out.append(
            TrainWindow(
                tokens=np.asarray(seq.tokens[sl], dtype=np.int64),
                mask=plan.mask[sl],
                cross_positions=plan.cross_positions[sl],
                condition=seq.condition,
                piece_id=seq.piece_id,
                start=s,
            )
        )
    return out


def window_loss(store: ParamStore, config: ModelConfig, windows: list[TrainWindow], rng=None):
    """Mean next-token NLL over a batch of windows (padding targets ignored)."""
    tokens = np.stack([w.tokens for w in windows])
    mask = np.stack([w.mask for w in windows])
    cross = np.stack([w.cross_positions for w in windows])
    cond = [list(w.condition) for w in windows] if config.has_encoder else None
    logits = forward(store, config, tokens[:, :-1], cond, mask[:, :-1], cross[:, :-1], rng=rng)
    return ops.cross_entropy_with_logits(logits, tokens[:, 1:], ignore_index=0)


def sequence_nll(store: ParamStore, config: ModelConfig, windows: list[TrainWindow]) -> float:
    with no_grad():
        return float(window_loss(store, config, windows).data)


def train(
    config: ModelConfig,
    windows: list[TrainWindow],
    train_config: TrainConfig,
    store: ParamStore | None = None,
    loss_csv=None,
    checkpoint_path=None,
    callback=None,
) -> tuple[ParamStore, list[float]]:
    """Teacher-forced training with Adam.  A non-finite loss aborts with
    :class:`FloatingPointError`."""
    if not windows:
        raise ValueError("no training windows")
    if config.has_encoder and any(w.condition is None for w in windows):
        raise ValueError(f"the {config.variant} variant needs a condition for every window")
    top = max(int(w.tokens.max()) for w in windows)
    if top >= config.vocab_size:
        raise ValueError(f"token id {top} outside the model vocabulary of {config.vocab_size}")
    store = store or init_params(config)
    rng = np.random.default_rng(train_config.seed)
    drop_rng = np.random.default_rng(train_config.seed + 1) if config.dropout > 0 else None
    losses: list[float] = []
    fh = open(loss_csv, "w", newline="") if loss_csv else None
    writer = csv.writer(fh) if fh else None
    if writer:
        writer.writerow(["step", "loss"])
    try:
        for step in range(train_config.steps):
            size = min(train_config.batch, len(windows))
            idx = rng.choice(len(windows), size=size, replace=False)
            loss = window_loss(store, config, [windows[i] for i in idx], rng=drop_rng)
            value = float(loss.data)
            if not np.isfinite(value):
                raise FloatingPointError(f"loss became {value} at step {step}")
            backward(loss)
            adam_step(store, lr=train_config.lr)
            losses.append(value)
            if writer:
                writer.writerow([step, repr(value)])
            if train_config.log_every and step % train_config.log_every == 0:
                log.info("step %d loss %.4f", step, value)
            if checkpoint_path and train_config.checkpoint_every and (step + 1) % train_config.checkpoint_every == 0:
                save_model(store, config, checkpoint_path, meta={"step": step + 1})
            if callback:
                callback(step, value)
    finally:
        if fh:
            fh.close()
    if checkpoint_path:
        save_model(store, config, checkpoint_path, meta={"step": train_config.steps})
    return store, losses
