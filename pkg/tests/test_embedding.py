import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from themegen.augment import split_combine
from themegen import nn
from themegen.autograd import CheckpointError, Tensor, no_grad, ops
from themegen.codec import events_to_tokens
from themegen.embedding import (
    EmbedConfig,
    contrastive_loss,
    distance,
    embed,
    embed_tokens,
    init_embedding,
    load_embedding,
    onset_positions,
    pairwise_distances,
    save_embedding,
    train_embedding,
    training_fragments,
)
from themegen.models import ModelConfig, init_params, save_model
from themegen.synth import synth_corpus

from gradcheck import check

TINY = EmbedConfig(layers=1, hidden=16, heads=2, ff=32, out_dim=8, batch=4, steps=3, lr=1e-3)
MEL_A = [60, 132, 128, 132, 62, 132]
MEL_B = [64, 130, 65, 130, 67, 136]


def test_config_validation():
    with pytest.raises(ValueError):
        EmbedConfig(hidden=10, heads=3)
    with pytest.raises(ValueError):
        EmbedConfig(alpha=0)
    with pytest.raises(ValueError):
        EmbedConfig(positions="relative")


def test_two_item_batch_loss_is_zero():
    z = Tensor(np.random.default_rng(0).normal(size=(2, 5)))
    assert float(contrastive_loss(z, [1, 0]).data) == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("n", [1, 2, 5, 16])
def test_identical_embeddings_loss(n):
    z = Tensor(np.ones((2 * n, 4)))
    positives = np.concatenate([np.arange(n, 2 * n), np.arange(n)])
    assert float(contrastive_loss(z, positives).data) == pytest.approx(math.log(2 * n - 1), abs=1e-6)


def test_group_members_leave_denominator():
    # items 0 and 2 share a group; with grouping 0's only competitor is 3
    z = np.eye(4)[[0, 1, 0, 2]].astype(np.float64)
    loss = contrastive_loss(Tensor(z), [1, 0, -1, -1], alpha=1.0, groups=[0, 0, 0, 1])
    expected = -math.log(math.e**0 / (math.e**0 + math.e**0))
    assert float(loss.data) == pytest.approx(expected)


def test_contrastive_loss_errors():
    with pytest.raises(ValueError):
        contrastive_loss(Tensor(np.ones((1, 3))), [0])
    with pytest.raises(ValueError):
        contrastive_loss(Tensor(np.ones((3, 3))), [-1, -1, -1])


def test_contrastive_loss_gradient():
    rng = np.random.default_rng(1)
    z = Tensor(rng.normal(size=(6, 4)), requires_grad=True)
    pos = [3, 4, 5, 0, 1, 2]
    groups = [0, 1, 2, 0, 1, 2]
    assert check(lambda: contrastive_loss(z, pos, 0.5, groups), [z], probes=24, rng=rng) < 1e-5


def test_embedding_network_gradient():
    store = init_embedding(TINY, dtype=np.float64)
    tensors = list(store.params.values())
    batch = [MEL_A, MEL_B, MEL_A[:4]]
    rng = np.random.default_rng(2)
    loss = lambda: contrastive_loss(embed_tokens(store, TINY, batch), [1, 0, -1])  # noqa: E731
    assert check(loss, tensors, probes=40, rng=rng) < 1e-5


def test_outputs_are_unit_vectors_and_deduplicated():
    store = init_embedding(TINY)
    z = embed(store, TINY, [MEL_A, MEL_B, MEL_A])
    np.testing.assert_allclose(np.linalg.norm(z, axis=1), 1.0, rtol=1e-5)
    assert z[0].tobytes() == z[2].tobytes()
    assert distance(store, TINY, MEL_A, MEL_A) == 0.0
    assert distance(store, TINY, MEL_A, MEL_B) > 0.0
    assert embed(store, TINY, []).shape == (0, 8)
    with pytest.raises(ValueError):
        embed(store, TINY, [[]])


def test_padding_does_not_change_embeddings():
    store = init_embedding(TINY, dtype=np.float64)
    alone = embed(store, TINY, [MEL_A])
    padded = embed(store, TINY, [MEL_A, MEL_B * 5])
    np.testing.assert_allclose(alone[0], padded[0], atol=1e-12)


def test_single_token_is_normalised_head_of_its_hidden_state():
    store = init_embedding(TINY, dtype=np.float64)
    with no_grad():
        h = ops.add(ops.embedding_lookup(store["tok"], [[60]]), ops.embedding_lookup(store["pos"], [[0]]))
        h = ops.add(h, ops.embedding_lookup(store["onset"], [[0]]))
        full = embed_tokens(store, TINY, [[60]]).data[0]
        # one token attends only to itself, so replay the layer stack by hand
        for i in range(TINY.layers):
            v = nn.linear(store, f"l{i}.att.v", nn.layer_norm(store, f"l{i}.ln1", h))
            h = ops.add(h, nn.linear(store, f"l{i}.att.o", v))
            h = ops.add(h, nn.feed_forward(store, f"l{i}.ff", nn.layer_norm(store, f"l{i}.ln2", h)))
        head = nn.linear(store, "head", nn.layer_norm(store, "ln_f", h)).data[0, 0]
    np.testing.assert_allclose(full, head / np.linalg.norm(head), atol=1e-12)


def test_pairwise_distances():
    z = np.array([[0.0, 0.0], [3.0, 4.0]])
    np.testing.assert_allclose(pairwise_distances(z), [[0, 5], [5, 0]])


def test_onset_positions_example():
    assert onset_positions([60, 132, 128, 130, 62, 129]).tolist() == [0, 1, 8, 9, 12, 13]


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 127), st.sampled_from([2, 4, 6, 8])), min_size=2, max_size=12), st.integers(0, 2**32 - 1))
def test_onset_positions_after_split(events, seed):
    """Positions are injective, and a split keeps every original position:
    later notes do not move and the split note keeps its onset."""
    before = onset_positions(events_to_tokens(events))
    assert len(set(before.tolist())) == len(before)
    after_events = split_combine(events, np.random.default_rng(seed), mode="split")
    after = onset_positions(events_to_tokens(after_events))
    assert len(set(after.tolist())) == len(after)
    assert set(before.tolist()) <= set(after.tolist())
    assert len(after) == len(before) + 2


def test_save_load_round_trip(tmp_path):
    store = init_embedding(TINY)
    save_embedding(store, TINY, tmp_path / "e.ckpt")
    back, cfg = load_embedding(tmp_path / "e.ckpt")
    assert cfg == TINY
    np.testing.assert_array_equal(embed(back, cfg, [MEL_A]), embed(store, TINY, [MEL_A]))
    config = ModelConfig(layers=2, hidden=16, heads=2, ff=32)
    save_model(init_params(config), config, tmp_path / "m.ckpt")
    with pytest.raises(CheckpointError):
        load_embedding(tmp_path / "m.ckpt")


@pytest.fixture(scope="module")
def tiny_fragments():
    return training_fragments([p for p, _ in synth_corpus(6, seed=4)])


def test_training_is_deterministic(tmp_path, tiny_fragments):
    s1, l1 = train_embedding(tiny_fragments, TINY, loss_csv=tmp_path / "a.csv")
    s2, l2 = train_embedding(tiny_fragments, TINY, loss_csv=tmp_path / "b.csv")
    assert l1 == l2 and len(l1) == 3
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    for name, t in s1.items():
        assert t.data.tobytes() == s2[name].data.tobytes()


def test_training_reduces_loss(tiny_fragments):
    cfg = EmbedConfig(layers=1, hidden=16, heads=2, ff=32, out_dim=8, batch=6, steps=60, lr=3e-3)
    _, losses = train_embedding(tiny_fragments, cfg)
    assert np.mean(losses[-10:]) < np.mean(losses[:10])


def test_batch_needs_distinct_pieces(tiny_fragments):
    with pytest.raises(ValueError, match="distinct pieces"):
        train_embedding(tiny_fragments, EmbedConfig(batch=7, steps=1))
