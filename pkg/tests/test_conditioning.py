"""Codec modes, cross-attention contracts, audio embedding, AdaLN."""

import numpy as np
import pytest

from gradcheck import check_param_grads, scalarize
from hallo2_micro import tensor as T
from hallo2_micro.blobs import DrivingSignal, generate_sequence
from hallo2_micro.codec import LatentCodec, gray, pool2, train_codec, upsample2
from hallo2_micro.conditioning import (
    AudioEmbedder,
    CrossAttentionLayer,
    TextAdapter,
    adaln_apply,
    embed_audio_window,
)
from hallo2_micro.rng import Rng
from hallo2_micro.tensor import Tensor


# -- codec ----------------------------------------------------------------


def test_debug_codec_reproduces_grayscale_downsample():
    frame = generate_sequence(Rng(1), 2).frames[0]
    codec = LatentCodec(mode="identity-debug")
    out = codec.decode_latent(codec.encode_frame(frame))
    expected = np.repeat(upsample2(pool2(gray(frame)))[..., None], 3, axis=-1)
    np.testing.assert_array_equal(out, np.clip(expected, 0, 1))
    assert codec.encode_frame(frame).shape == (1, 16, 16)


def test_debug_codec_latent_roundtrip_stable():
    codec = LatentCodec(mode="identity-debug")
    z = Rng(2).uniform((1, 16, 16))
    z2 = codec.encode_frame(codec.decode_latent(z))
    np.testing.assert_allclose(z2, z, atol=1e-12)


def test_conv_codec_untrained_raises_state_error():
    codec = LatentCodec(Rng(3), mode="conv")
    with pytest.raises(RuntimeError, match="untrained"):
        codec.encode_frame(np.zeros((32, 32, 3)))


def test_encode_deterministic():
    codec = LatentCodec(mode="identity-debug")
    frame = generate_sequence(Rng(5), 2).frames[0]
    np.testing.assert_array_equal(codec.encode_frame(frame), codec.encode_frame(frame))


def test_conv_codec_shapes_and_quick_fit():
    # tiny run: loss must clearly drop and shapes must match the contract
    rng = Rng(7)
    frames = np.concatenate([generate_sequence(rng.split(i), 12).frames for i in range(3)])
    codec = LatentCodec(rng.split("init"), mode="conv")
    log = train_codec(codec, frames, rng.split("train"), steps=60, batch=8, lr=3e-3)
    assert log[-1][1] < log[0][1]
    z = codec.encode_frame(frames[0])
    assert z.shape == (8, 8, 8)
    img = codec.decode_latent(z)
    assert img.shape == (32, 32, 3)
    assert img.min() >= 0.0 and img.max() <= 1.0


def test_codec_state_roundtrip(tmp_path):
    rng = Rng(8)
    codec = LatentCodec(rng, mode="conv")
    codec.trained = True
    codec.latent_mean, codec.latent_std = 0.3, 1.7
    from hallo2_micro.checkpoint import load_checkpoint, save_checkpoint

    save_checkpoint(tmp_path / "c.h2mc", codec.state())
    fresh = LatentCodec(Rng(999), mode="conv")
    fresh.load_state(load_checkpoint(tmp_path / "c.h2mc"))
    assert fresh.latent_mean == 0.3 and fresh.latent_std == 1.7 and fresh.trained
    img = Rng(1).uniform((2, 32, 32, 3))
    np.testing.assert_array_equal(codec.encode_batch(img), fresh.encode_batch(img))


# -- cross-attention -----------------------------------------------------------


def test_single_context_token_passes_value_through():
    rng = Rng(11)
    layer = CrossAttentionLayer(6, rng)
    q = Tensor(rng.normal((4, 6)))
    ctx = Tensor(rng.normal((1, 6)))
    out = layer(q, ctx).data
    v = ctx.data @ layer.wv.data
    for row in out:
        np.testing.assert_allclose(row, v[0], atol=1e-12)


def test_identical_context_tokens_order_invariant():
    rng = Rng(12)
    layer = CrossAttentionLayer(5, rng)
    q = Tensor(rng.normal((3, 5)))
    token = rng.normal((1, 5))
    ctx = Tensor(np.repeat(token, 4, axis=0))
    out1 = layer(q, ctx).data
    perm = Tensor(ctx.data[::-1].copy())
    np.testing.assert_allclose(out1, layer(q, perm).data, atol=1e-12)


def test_context_permutation_with_keys_and_values_together():
    rng = Rng(13)
    layer = CrossAttentionLayer(5, rng)
    q = Tensor(rng.normal((3, 5)))
    ctx = rng.normal((6, 5))
    perm = np.array([3, 1, 5, 0, 2, 4])
    out1 = layer(q, Tensor(ctx)).data
    out2 = layer(q, Tensor(ctx[perm])).data
    np.testing.assert_allclose(out1, out2, atol=1e-12)


def test_attention_rows_sum_to_one_and_capture():
    rng = Rng(14)
    layer = CrossAttentionLayer(8, rng)
    layer.capture = True
    for seed in range(6):
        r = Rng(seed)
        layer(Tensor(r.normal((2, 5, 8))), Tensor(r.normal((2, 7, 8))))
        sums = layer.last_weights.sum(axis=-1)
        np.testing.assert_allclose(sums, 1.0, atol=1e-12)
        assert layer.last_weights.shape == (2, 5, 7)


def test_empty_context_rejected():
    layer = CrossAttentionLayer(4, Rng(15))
    with pytest.raises(ValueError, match="context"):
        layer(Tensor(np.zeros((2, 4))), Tensor(np.zeros((0, 4))))


# -- audio embedding ---------------------------------------------------------------


def test_constant_signal_embeds_identically_everywhere():
    emb = AudioEmbedder(Rng(16), window=2, dim=16)
    sig = DrivingSignal(samples=np.full(20, 0.4))
    rows = emb.embed(sig, np.arange(20)).data
    for row in rows[1:]:
        np.testing.assert_array_equal(row, rows[0])


def test_boundary_windows_edge_replicate():
    emb = AudioEmbedder(Rng(17), window=2, dim=8)
    sig = np.arange(10, dtype=np.float64)
    win0 = emb.windows(sig, [0])[0]
    np.testing.assert_array_equal(win0, [0, 0, 0, 1, 2])
    win_last = emb.windows(sig, [9])[0]
    np.testing.assert_array_equal(win_last, [7, 8, 9, 9, 9])


def test_distinct_windows_embed_distinctly():
    emb = AudioEmbedder(Rng(18), window=2, dim=16)
    rng = Rng(19)
    seen = set()
    for _ in range(100):
        sig = DrivingSignal(samples=rng.uniform((9,)))
        row = embed_audio_window(emb, sig, 4).data
        key = tuple(np.round(row, 12))
        assert key not in seen
        seen.add(key)


# -- text adapter / adaln -------------------------------------------------------------


def test_adaln_exact_identity_at_initialization():
    adapter = TextAdapter(12, Rng(20))
    x = Tensor(Rng(21).normal((2, 5, 12)))
    for label in range(3):
        out = adaln_apply(adapter, np.full(2, label), x)
        assert np.array_equal(out.data, x.data)  # bit-exact


def test_adaln_departs_after_adapter_update():
    adapter = TextAdapter(6, Rng(22))
    # emulate training: nudge the zero-initialized output layer
    adapter.fc2.w.data += Rng(23).normal(adapter.fc2.w.shape, std=0.1)
    x = Tensor(Rng(24).normal((1, 4, 6)))
    happy = adaln_apply(adapter, [1], x).data
    neutral = adaln_apply(adapter, [0], x).data
    assert not np.array_equal(happy, neutral)


def test_adaln_gradient_matches_finite_difference():
    adapter = TextAdapter(5, Rng(25))
    adapter.fc2.w.data += Rng(26).normal(adapter.fc2.w.shape, std=0.05)
    adapter.fc2.b.data += Rng(27).normal(adapter.fc2.b.shape, std=0.05)
    x = Tensor(Rng(28).normal((2, 3, 5)))
    labels = np.array([1, 2])
    params = adapter.parameters()

    def build_loss():
        return scalarize(adaln_apply(adapter, labels, x))

    assert check_param_grads(build_loss, params) < 1e-4
