"""Conditioned noise-prediction network.

Latents of a whole segment are processed jointly: every frame becomes a
grid of spatial tokens, three residual stages mix them with [spatial
self-attention, temporal self-attention over the frame axis, reference
cross-attention, motion cross-attention, adaptive layer norm driven by the
expression label, audio cross-attention, pointwise MLP], and a
zero-initialized projection emits the noise estimate. Reference and motion
conditioning keep separate attention layers so their maps can be exported
and compared.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .conditioning import (
    AudioEmbedder,
    CondBatch,
    ConditioningSet,
    CrossAttentionLayer,
    TextAdapter,
    adaln_apply,
)
from .modules import LayerNorm, Linear, Mlp, Module
from .rng import Rng
from .tensor import Tensor


@dataclass(frozen=True)
class NetConfig:
    latent: tuple[int, int, int] = (8, 8, 8)   # (C, H, W)
    dim: int = 32
    stages: int = 3
    segment_len: int = 16     # L, also the temporal-position table size
    window: int = 4           # N motion frames
    audio_window: int = 2     # w; embedder sees 2w+1 samples
    audio_dim: int = 16
    text_dim: int = 8
    time_dim: int = 32

    @property
    def tokens(self) -> int:
        return self.latent[1] * self.latent[2]


class DenoiserStage(Module):
    def __init__(self, cfg: NetConfig, rng: Rng):
        super().__init__()
        d = cfg.dim
        self.ln_self = self.child("ln_self", LayerNorm(d))
        self.attn_self = self.child("attn_self", CrossAttentionLayer(d, rng.split("self")))
        self.ln_temp = self.child("ln_temp", LayerNorm(d))
        self.attn_temp = self.child("attn_temp", CrossAttentionLayer(d, rng.split("temp")))
        self.ln_ref = self.child("ln_ref", LayerNorm(d))
        self.attn_ref = self.child("attn_ref", CrossAttentionLayer(d, rng.split("ref")))
        self.ln_mot = self.child("ln_mot", LayerNorm(d))
        self.attn_mot = self.child("attn_mot", CrossAttentionLayer(d, rng.split("mot")))
        self.ln_aud = self.child("ln_aud", LayerNorm(d))
        self.attn_aud = self.child("attn_aud", CrossAttentionLayer(d, rng.split("aud")))
        self.ln_mlp = self.child("ln_mlp", LayerNorm(d))
        self.mlp = self.child("mlp", Mlp(d, 2 * d, rng.split("mlp")))

    def __call__(self, x: Tensor, ref_ctx: Tensor, mot_ctx: Tensor,
                 aud_ctx: Tensor, adapter: TextAdapter, label_ids) -> Tensor:
        # x: (B, L, HW, D)
        h = self.ln_self(x)
        x = x + self.attn_self(h, h)
        # temporal attention runs per spatial position over the frame axis
        xt = T.transpose(x, (0, 2, 1, 3))            # (B, HW, L, D)
        ht = self.ln_temp(xt)
        xt = xt + self.attn_temp(ht, ht)
        x = T.transpose(xt, (0, 2, 1, 3))
        x = x + self.attn_ref(self.ln_ref(x), ref_ctx)
        x = x + self.attn_mot(self.ln_mot(x), mot_ctx)
        # label conditioning sits between cross-attention and audio attention
        x = adaln_apply(adapter, label_ids, x)
        x = x + self.attn_aud(self.ln_aud(x), aud_ctx)
        x = x + self.mlp(self.ln_mlp(x))
        return x


class DenoiserNet(Module):
    def __init__(self, cfg: NetConfig, rng: Rng):
        super().__init__()
        self.cfg = cfg
        c, h, w = cfg.latent
        d = cfg.dim
        self.in_proj = self.child("in_proj", Linear(c, d, rng.split("in")))
        self.ref_proj = self.child("ref_proj", Linear(c, d, rng.split("refp")))
        self.mot_proj = self.child("mot_proj", Linear(c, d, rng.split("motp")))
        self.pos_spatial = self.param("pos_spatial", rng.split("ps").normal((cfg.tokens, d), std=0.02))
        self.pos_temporal = self.param("pos_temporal", rng.split("pt").normal((cfg.segment_len, d), std=0.02))
        self.slot_motion = self.param("slot_motion", rng.split("sm").normal((cfg.window, d), std=0.02))
        self.audio = self.child("audio", AudioEmbedder(rng.split("audio"), cfg.audio_window, cfg.audio_dim))
        self.audio_proj = self.child("audio_proj", Linear(cfg.audio_dim, d, rng.split("audp")))
        self.time_mlp = self.child("time_mlp", Mlp(cfg.time_dim, d, rng.split("time"), d_out=d))
        self.text = self.child("text", TextAdapter(d, rng.split("text"), d_txt=cfg.text_dim))
        self.stage_list = [
            self.child(f"stage{i}", DenoiserStage(cfg, rng.split(f"stage{i}")))
            for i in range(cfg.stages)
        ]
        self.ln_out = self.child("ln_out", LayerNorm(d))
        # zero-init output: the untrained net predicts exactly zero noise
        self.out_proj = self.child("out_proj", Linear(d, c, rng.split("out"), zero_init=True))
        self._capture = False
        self.last_maps: dict[str, np.ndarray] = {}

    # -- attention-map export hook ------------------------------------------------

    def capture_attention(self, enabled: bool = True) -> None:
        self._capture = enabled
        for name, layer in self._attention_layers():
            layer.capture = enabled

    def _attention_layers(self):
        for i, stage in enumerate(self.stage_list):
            yield f"stage{i}.self", stage.attn_self
            yield f"stage{i}.temporal", stage.attn_temp
            yield f"stage{i}.reference", stage.attn_ref
            yield f"stage{i}.motion", stage.attn_mot
            yield f"stage{i}.audio", stage.attn_aud

    def _collect_maps(self) -> None:
        self.last_maps = {
            name: layer.last_weights
            for name, layer in self._attention_layers()
            if layer.last_weights is not None
        }

    # -- forward --------------------------------------------------------------------

    def forward(self, zt, t, cond: CondBatch) -> Tensor:
        """zt: (B, L, C, H, W) array or Tensor; t: scalar or (B,) ints."""
        cfg = self.cfg
        c, hh, ww = cfg.latent
        zt = zt if isinstance(zt, Tensor) else Tensor(zt)
        if zt.ndim != 5 or zt.shape[2:] != (c, hh, ww):
            raise ValueError(f"zt shape {zt.shape} != (B, L, {c}, {hh}, {ww})")
        B, L = zt.shape[0], zt.shape[1]
        if L > cfg.segment_len:
            raise ValueError(f"segment length {L} exceeds configured {cfg.segment_len}")

        tokens = cfg.tokens
        x = T.reshape(T.transpose(zt, (0, 1, 3, 4, 2)), (B, L, tokens, c))
        x = self.in_proj(x)
        x = x + self.pos_spatial
        x = x + T.reshape(self.pos_temporal[:L], (1, L, 1, cfg.dim))

        t_arr = np.atleast_1d(np.asarray(t, dtype=np.float64))
        t_emb = self.time_mlp(T.sinusoidal_embedding(t_arr, cfg.time_dim))
        x = x + T.reshape(t_emb, (t_arr.shape[0], 1, 1, cfg.dim))

        ref = Tensor(cond.z_ref) if not isinstance(cond.z_ref, Tensor) else cond.z_ref
        ref_tok = T.reshape(T.transpose(ref, (0, 2, 3, 1)), (B, tokens, c))
        ref_ctx = self.ref_proj(ref_tok) + self.pos_spatial
        ref_ctx = T.reshape(ref_ctx, (B, 1, tokens, cfg.dim))

        mot = Tensor(cond.motion_latents) if not isinstance(cond.motion_latents, Tensor) else cond.motion_latents
        n = mot.shape[1]
        if n != cfg.window:
            raise ValueError(f"motion window {n} != configured {cfg.window}")
        mot_tok = T.reshape(T.transpose(mot, (0, 1, 3, 4, 2)), (B, n, tokens, c))
        mot_ctx = self.mot_proj(mot_tok) + self.pos_spatial
        mot_ctx = mot_ctx + T.reshape(self.slot_motion, (1, n, 1, cfg.dim))
        mot_ctx = T.reshape(mot_ctx, (B, 1, n * tokens, cfg.dim))

        aud = cond.c_audio if isinstance(cond.c_audio, Tensor) else Tensor(cond.c_audio)
        if aud.shape[:2] != (B, L):
            raise ValueError(f"audio rows {aud.shape} != (B={B}, L={L}, d_a)")
        aud_ctx = T.reshape(self.audio_proj(aud), (B, L, 1, cfg.dim))

        for stage in self.stage_list:
            x = stage(x, ref_ctx, mot_ctx, aud_ctx, self.text, cond.label_ids)

        if self._capture:
            self._collect_maps()

        out = self.out_proj(self.ln_out(x))
        out = T.transpose(T.reshape(out, (B, L, hh, ww, c)), (0, 1, 4, 2, 3))
        return out


def predict_eps(net: DenoiserNet, zt, t, cond) -> Tensor:
    """Noise estimate for one segment (unbatched) or a batch.

    cond may be a ConditioningSet (zt is (L, C, H, W)) or a CondBatch
    (zt is (B, L, C, H, W)).
    """
    if isinstance(cond, ConditioningSet):
        zt_arr = zt.data if isinstance(zt, Tensor) else np.asarray(zt)
        cond.validate(net.cfg.window, zt_arr.shape[0])
        batch = CondBatch.from_single(cond)
        out = net.forward(zt_arr[None], t, batch)
        return T.reshape(out, out.shape[1:])
    return net.forward(zt, t, cond)
