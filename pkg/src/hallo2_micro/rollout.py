"""Incremental long-duration generation.

Video comes out one segment at a time. Each segment is sampled jointly
(the latent carries a frame axis; temporal attention links the frames),
conditioned on the reference latent, the corrupted latents of the last N
generated frames, per-frame audio, and the expression label active at the
segment start. After a segment lands, the motion window is refreshed with
its last N decoded frames; the only state carried forward is that window,
so a rollout can be resumed bit-identically from (reference, window, seed,
segment index).

The reference latent is computed once, clean, and never touched by the
augmentation path.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .augmentation import NoiseAugConfig, PatchDropConfig, augment_motion_frame
from .blobs import LABELS, DrivingSignal, ExpressionLabel, label_track
from .codec import LatentCodec
from .conditioning import CondBatch, ConditioningSet
from .denoiser import DenoiserNet
from .diffusion import NoiseSchedule, sample
from .ppm import read_ppm, write_pgm, write_ppm
from .rng import Rng
from .tensor import no_grad


@dataclass
class RolloutConfig:
    segment_len: int = 16
    window: int = 4
    patch: PatchDropConfig = PatchDropConfig(1, 0.25)
    noise: NoiseAugConfig = NoiseAugConfig(0.1)
    drop_domain: str = "image"


class MotionWindow:
    """Ring buffer of the last N generated frames."""

    def __init__(self, frames: list[np.ndarray], size: int):
        if len(frames) != size:
            raise ValueError(f"window needs exactly {size} frames, got {len(frames)}")
        self.size = size
        self.frames = [np.asarray(f) for f in frames]

    @staticmethod
    def from_reference(reference: np.ndarray, size: int) -> "MotionWindow":
        # before warm-up the window is padded with copies of the reference
        return MotionWindow([reference.copy() for _ in range(size)], size)

    def refresh(self, new_frames: np.ndarray) -> None:
        combined = self.frames + [np.asarray(f) for f in new_frames]
        self.frames = combined[-self.size :]

    def augmented_latents(self, codec: LatentCodec, cfg: RolloutConfig,
                          rng: Rng) -> np.ndarray:
        return np.stack([
            augment_motion_frame(
                frame, cfg.patch, cfg.noise, codec, rng.split(i), cfg.drop_domain
            )
            for i, frame in enumerate(self.frames)
        ])


@dataclass
class VideoResult:
    frames: np.ndarray          # (total, H, W, 3)
    reference: np.ndarray       # (H, W, 3)
    signal: np.ndarray          # (total,)
    label_ids: np.ndarray       # (total,) label applied per frame
    segment_ids: np.ndarray     # (total,)
    seed: int
    checkpoint: str = ""


def segment_conditioning(net: DenoiserNet, codec: LatentCodec, z_ref: np.ndarray,
                         window: MotionWindow, signal: DrivingSignal,
                         frame_indices: np.ndarray, label_id: int,
                         cfg: RolloutConfig, aug_rng: Rng) -> ConditioningSet:
    with no_grad():
        c_audio = net.audio.embed(signal, frame_indices)
    return ConditioningSet(
        z_ref=z_ref,
        motion_latents=window.augmented_latents(codec, cfg, aug_rng),
        c_audio=c_audio,
        label_id=label_id,
    )


def generate_segment(net: DenoiserNet, codec: LatentCodec, cond: ConditioningSet,
                     L: int, sched: NoiseSchedule, rng: Rng,
                     attention_sink=None) -> tuple[np.ndarray, np.ndarray]:
    """Sample L latents jointly; returns (latents, decoded frames)."""
    if L < 1:
        raise ValueError(f"segment length must be >= 1, got {L}")
    cond.validate(net.cfg.window, L)
    batch = CondBatch.from_single(cond)
    shape = (1, L) + net.cfg.latent

    def predictor(zt, t, _):
        out = net.forward(zt, t, batch)
        if attention_sink is not None:
            attention_sink(t, net.last_maps)
        return out.data

    with no_grad():
        latents = sample(predictor, None, shape, sched, rng)[0]
    return latents, codec.decode_batch(latents)


def rollout(net: DenoiserNet, codec: LatentCodec, reference: np.ndarray,
            signal: DrivingSignal, label_events: list[ExpressionLabel],
            total_frames: int, sched: NoiseSchedule, cfg: RolloutConfig,
            seed: int, *, start_segment: int = 0,
            window: MotionWindow | None = None,
            attention_dir=None) -> VideoResult:
    """Generate total_frames incrementally (padded up to whole segments).

    start_segment/window resume a rollout mid-stream; with the same seed the
    tail of a resumed run matches the original bit-for-bit.
    """
    L = cfg.segment_len
    n_segments = (total_frames + L - 1) // L
    padded = n_segments * L
    if len(signal.samples) < padded:
        pad = np.full(padded - len(signal.samples), signal.samples[-1])
        signal = DrivingSignal(np.concatenate([signal.samples, pad]),
                               signal.smoothness)
    labels = label_track(label_events, padded)

    base = Rng(seed)
    z_ref = codec.encode_frame(reference)
    window = window or MotionWindow.from_reference(reference, cfg.window)

    frames_out: list[np.ndarray] = []
    segment_ids: list[int] = []
    for k in range(start_segment, n_segments):
        idx = np.arange(k * L, (k + 1) * L)
        label_id = int(labels[k * L])  # labels switch hard at segment starts
        cond = segment_conditioning(
            net, codec, z_ref, window, signal, idx, label_id, cfg,
            base.split("aug").split(k),
        )
        sink = None
        if attention_dir is not None and k == start_segment:
            sink = _attention_writer(attention_dir)
        if sink is not None:
            net.capture_attention(True)
        try:
            _, frames = generate_segment(
                net, codec, cond, L, sched, base.split("sample").split(k), sink
            )
        finally:
            if sink is not None:
                net.capture_attention(False)
        frames_out.append(frames)
        segment_ids.extend([k] * L)
        window.refresh(frames[-cfg.window :])

    generated = np.concatenate(frames_out)[: total_frames - start_segment * L]
    return VideoResult(
        frames=generated,
        reference=reference,
        signal=signal.samples[start_segment * L : total_frames],
        label_ids=labels[start_segment * L : total_frames],
        segment_ids=np.array(segment_ids)[: total_frames - start_segment * L],
        seed=seed,
    )


def _attention_writer(directory):
    """Per-layer, per-step attention export: CSV matrix + PGM heatmap."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    def sink(t: int, maps: dict[str, np.ndarray]) -> None:
        for name, weights in maps.items():
            # collapse batch/frame axes to one queries x keys matrix
            mat = weights.mean(axis=tuple(range(weights.ndim - 2)))
            stem = directory / f"{name.replace('.', '_')}_t{t:04d}"
            np.savetxt(str(stem) + ".csv", mat, fmt="%.10g", delimiter=",")
            peak = mat.max()
            write_pgm(str(stem) + ".pgm", mat / peak if peak > 0 else mat)

    return sink


# -- disk layout --------------------------------------------------------------


def save_video_result(directory, result: VideoResult) -> None:
    directory = Path(directory)
    (directory / "frames").mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(result.frames):
        write_ppm(directory / "frames" / f"frame_{i:05d}.ppm", frame)
    write_ppm(directory / "reference.ppm", result.reference)
    timeline = [
        {
            "frame": i,
            "segment": int(result.segment_ids[i]),
            "label": LABELS[int(result.label_ids[i])],
            "signal": float(result.signal[i]),
        }
        for i in range(len(result.frames))
    ]
    payload = {
        "seed": result.seed,
        "checkpoint": result.checkpoint,
        "timeline": timeline,
    }
    with open(directory / "timeline.json", "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_video_result(directory) -> VideoResult:
    directory = Path(directory)
    payload = json.loads((directory / "timeline.json").read_text())
    rows = payload["timeline"]
    frame_paths = sorted((directory / "frames").glob("frame_*.ppm"))
    frames = np.stack([read_ppm(p) for p in frame_paths])
    return VideoResult(
        frames=frames,
        reference=read_ppm(directory / "reference.ppm"),
        signal=np.array([r["signal"] for r in rows]),
        label_ids=np.array([LABELS.index(r["label"]) for r in rows], dtype=np.int64),
        segment_ids=np.array([r["segment"] for r in rows], dtype=np.int64),
        seed=int(payload["seed"]),
        checkpoint=payload.get("checkpoint", ""),
    )
