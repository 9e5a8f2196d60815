"""Conditioning inputs and the layers that inject them into the denoiser.

The conditioning set carries four streams: the reference latent, the
corrupted motion-frame latents, per-frame audio embeddings, and an
expression label. Reference and motion enter through separate
cross-attention layers (their attention maps stay distinguishable for
export); the label enters through a zero-initialized adaptive layer norm
placed between the cross-attention and audio attention layers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .blobs import LABEL_IDS, DrivingSignal
from .modules import Linear, Module
from .rng import Rng
from .tensor import Tensor


class CrossAttentionLayer(Module):
    """softmax(Q K^T / sqrt(d_k)) V with learned projections.

    The output dimension equals the query dimension (no output projection),
    so the caller's block wrapper can residual-add directly. Setting
    `capture` keeps the last attention weights around for export.
    """

    def __init__(self, d: int, rng: Rng):
        super().__init__()
        self.d_k = d
        self.wq = self.param("wq", rng.normal((d, d), std=1.0 / np.sqrt(d)))
        self.wk = self.param("wk", rng.normal((d, d), std=1.0 / np.sqrt(d)))
        self.wv = self.param("wv", rng.normal((d, d), std=1.0 / np.sqrt(d)))
        self.capture = False
        self.last_weights: np.ndarray | None = None

    def __call__(self, query: Tensor, context: Tensor) -> Tensor:
        if context.shape[-2] < 1:
            raise ValueError("cross-attention needs at least one context token")
        if query.shape[-1] != self.d_k or context.shape[-1] != self.d_k:
            raise ValueError(
                f"token dim mismatch: query {query.shape}, context {context.shape},"
                f" layer d={self.d_k}"
            )
        # flatten leading axes so each projection is one large GEMM
        def project(tokens: Tensor, w: Tensor) -> Tensor:
            flat = T.reshape(tokens, (-1, self.d_k))
            return T.reshape(T.matmul(flat, w), tokens.shape)

        q = project(query, self.wq)
        k = project(context, self.wk)
        v = project(context, self.wv)
        scores = T.matmul(q, T.swap_last(k)) * (1.0 / np.sqrt(self.d_k))
        attn = T.softmax_rows(scores)
        if self.capture:
            self.last_weights = attn.data.copy()
        return T.matmul(attn, v)


class AudioEmbedder(Module):
    """Linear map of a (2w+1)-sample signal window around each frame."""

    def __init__(self, rng: Rng, window: int = 2, dim: int = 16):
        super().__init__()
        self.window = window
        self.dim = dim
        self.proj = self.child("proj", Linear(2 * window + 1, dim, rng))

    def windows(self, samples: np.ndarray, frames) -> np.ndarray:
        """Edge-replicated windows for the given frame indices, (n, 2w+1)."""
        samples = np.asarray(samples, dtype=np.float64)
        frames = np.atleast_1d(np.asarray(frames, dtype=np.int64))
        offsets = np.arange(-self.window, self.window + 1)
        idx = np.clip(frames[:, None] + offsets[None, :], 0, len(samples) - 1)
        return samples[idx]

    def embed(self, signal: DrivingSignal, frames) -> Tensor:
        return self.proj(Tensor(self.windows(signal.samples, frames)))


def embed_audio_window(embedder: AudioEmbedder, signal: DrivingSignal, t: int) -> Tensor:
    """Embedding row for a single frame index."""
    return T.reshape(embedder.embed(signal, [t]), (embedder.dim,))


class TextAdapter(Module):
    """Label embedding -> zero-initialized MLP -> (gamma, beta).

    The final layer starts at exactly zero, so until training moves it the
    adaptive layer norm is a bit-exact identity and outputs cannot depend on
    the label.
    """

    def __init__(self, dim: int, rng: Rng, d_txt: int = 8, hidden: int = 16):
        super().__init__()
        self.dim = dim
        self.table = self.param(
            "table", rng.normal((len(LABEL_IDS), d_txt), std=1.0)
        )
        self.fc1 = self.child("fc1", Linear(d_txt, hidden, rng.split("fc1")))
        self.fc2 = self.child("fc2", Linear(hidden, 2 * dim, rng.split("fc2"), zero_init=True))

    def gamma_beta(self, label_ids) -> tuple[Tensor, Tensor]:
        label_ids = np.atleast_1d(np.asarray(label_ids, dtype=np.int64))
        e = T.take_rows(self.table, label_ids)
        gb = self.fc2(T.silu(self.fc1(e)))
        gamma = gb[:, : self.dim]
        beta = gb[:, self.dim :]
        return gamma, beta


def adaln_apply(adapter: TextAdapter, label_ids, x_cross: Tensor) -> Tensor:
    """gamma * LayerNorm(x) + beta + x, with (gamma, beta) from the label.

    x_cross has shape (B, ..., dim); label_ids is a scalar or (B,). The
    layer norm here carries no learned affine of its own.
    """
    gamma, beta = adapter.gamma_beta(label_ids)
    ones = Tensor(np.ones(adapter.dim))
    zeros = Tensor(np.zeros(adapter.dim))
    normed = T.layer_norm(x_cross, ones, zeros)
    bshape = (gamma.shape[0],) + (1,) * (x_cross.ndim - 2) + (adapter.dim,)
    gamma = T.reshape(gamma, bshape)
    beta = T.reshape(beta, bshape)
    return gamma * normed + beta + x_cross


@dataclass
class ConditioningSet:
    """Everything the denoiser is conditioned on for one segment.

    motion_latents must hold exactly `window` entries (callers pad with the
    reference latent before warm-up). c_audio rows are already-embedded
    audio features aligned 1:1 with the frames being generated; they may
    carry gradients back into the audio embedder during training.
    """

    z_ref: np.ndarray            # (C, H, W), never augmented
    motion_latents: np.ndarray   # (N, C, H, W), augmented upstream
    c_audio: Tensor              # (L, d_a) embedded audio rows
    label_id: int

    def validate(self, window: int, segment_len: int) -> None:
        missing = []
        if self.z_ref is None:
            missing.append("z_ref")
        if self.motion_latents is None or len(self.motion_latents) != window:
            missing.append(f"motion_latents (need exactly {window})")
        if self.c_audio is None or self.c_audio.shape[0] != segment_len:
            missing.append(f"c_audio (need {segment_len} rows)")
        if self.label_id is None:
            missing.append("label_id")
        if missing:
            raise ValueError(f"incomplete conditioning: missing {', '.join(missing)}")


@dataclass
class CondBatch:
    """Batched conditioning used by the training loop."""

    z_ref: np.ndarray            # (B, C, H, W)
    motion_latents: np.ndarray   # (B, N, C, H, W)
    c_audio: Tensor              # (B, L, d_a)
    label_ids: np.ndarray        # (B,)

    @staticmethod
    def from_single(cond: ConditioningSet) -> "CondBatch":
        return CondBatch(
            z_ref=cond.z_ref[None],
            motion_latents=np.asarray(cond.motion_latents)[None],
            c_audio=T.reshape(cond.c_audio, (1,) + cond.c_audio.shape),
            label_ids=np.array([cond.label_id], dtype=np.int64),
        )
