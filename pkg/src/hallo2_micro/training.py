"""Two-stage denoiser training.

Stage 1 teaches conditioned denoising with clean motion frames (no
corruption). Stage 2 continues from a stage-1 checkpoint with patch drop
and Gaussian noise applied to the motion frames, which is what buys
long-rollout stability. Each training sample is a random 16-frame clip
from the corpus, conditioned on the 4 frames immediately preceding it plus
a random reference frame from the same sequence; targets and the reference
stay clean in both stages.

Per-step randomness derives from (seed, step), so training resumed from a
checkpoint at step k replays steps k.. bit-identically.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .augmentation import (NoiseAugConfig, PatchDropConfig,
                           augment_motion_frames)
from .blobs import BlobSequence
from .checkpoint import load_checkpoint, save_checkpoint
from .codec import LatentCodec
from .conditioning import CondBatch
from .denoiser import DenoiserNet
from .diffusion import NoiseSchedule, denoise_loss, make_batch
from .optim import Adam
from .rng import Rng
from .tensor import Tensor


@dataclass
class TrainingPlan:
    stage: int
    steps: int
    batch: int = 8
    lr: float = 2e-3
    patch: PatchDropConfig = PatchDropConfig(0, 0.0)
    noise: NoiseAugConfig = NoiseAugConfig(0.0)
    drop_domain: str = "image"
    log_every: int = 50

    def __post_init__(self):
        if self.stage not in (1, 2):
            raise ValueError(f"stage must be 1 or 2, got {self.stage}")
        if self.stage == 1 and (self.patch.enabled or self.noise.sigma > 0.0):
            raise ValueError("stage-1 training runs clean: patch_size=0, sigma=0")

    @property
    def augmented(self) -> bool:
        return self.stage == 2 and (self.patch.enabled or self.noise.sigma > 0.0)


class ClipSampler:
    """Random clip access over a corpus with precomputed clean latents."""

    def __init__(self, sequences: list[BlobSequence], codec: LatentCodec,
                 segment_len: int, window: int):
        self.segment_len = segment_len
        self.window = window
        min_len = window + segment_len
        self.sequences = [s for s in sequences if len(s) >= min_len]
        if not self.sequences:
            raise ValueError(
                f"no sequence is long enough for a clip ({min_len} frames)"
            )
        self.latents = [codec.encode_batch(s.frames) for s in self.sequences]

    def draw(self, rng: Rng) -> tuple[int, int, int]:
        """(sequence index, clip start, reference frame index)."""
        si = int(rng.integers(0, len(self.sequences)))
        seq = self.sequences[si]
        start = int(rng.integers(self.window, len(seq) - self.segment_len + 1))
        ref = int(rng.integers(0, len(seq)))
        return si, start, ref


def _assemble_batch(sampler: ClipSampler, net: DenoiserNet, codec: LatentCodec,
                    plan: TrainingPlan, rng: Rng):
    """One training minibatch: clean targets, conditioned on (possibly
    corrupted) motion frames."""
    L, N = sampler.segment_len, sampler.window
    z0, z_ref, windows, labels = [], [], [], []
    clean_motion, aug_frames, aug_rngs = [], [], []
    for b in range(plan.batch):
        crng = rng.split(b)
        si, start, ref = sampler.draw(crng.split("draw"))
        seq = sampler.sequences[si]
        lat = sampler.latents[si]
        z0.append(lat[start : start + L])
        z_ref.append(lat[ref])
        if plan.augmented:
            arng = crng.split("aug")
            aug_frames.extend(seq.frames[start - N + i] for i in range(N))
            aug_rngs.extend(arng.split(i) for i in range(N))
        else:
            clean_motion.append(lat[start - N : start])
        windows.append(net.audio.windows(seq.signal.samples, np.arange(start, start + L)))
        labels.append(int(seq.label_ids[start]))
    if plan.augmented:
        flat = augment_motion_frames(
            np.stack(aug_frames), plan.patch, plan.noise, codec, aug_rngs,
            plan.drop_domain,
        )
        motion = flat.reshape((plan.batch, N) + flat.shape[1:])
    else:
        motion = np.stack(clean_motion)
    c_audio = net.audio.proj(Tensor(np.stack(windows)))
    return np.stack(z0), CondBatch(
        z_ref=np.stack(z_ref),
        motion_latents=motion,
        c_audio=c_audio,
        label_ids=np.array(labels, dtype=np.int64),
    )


def save_training_state(path, net: DenoiserNet, opt: Adam, step: int,
                        meta: dict | None = None) -> None:
    tensors = {k: v.data for k, v in net.parameters().items()}
    tensors.update(opt.state_tensors())
    save_checkpoint(path, tensors)
    sidecar = dict(meta or {})
    sidecar["step"] = step
    with open(str(path) + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_training_state(path, net: DenoiserNet, opt: Adam | None = None) -> int:
    tensors = load_checkpoint(path)
    net.load_parameters({k: v for k, v in tensors.items() if not k.startswith("opt.")})
    if opt is not None and "opt.step" in tensors:
        opt.load_state(tensors)
    sidecar = Path(str(path) + ".json")
    if sidecar.exists():
        return int(json.loads(sidecar.read_text()).get("step", 0))
    return 0


def train(net: DenoiserNet, codec: LatentCodec, sequences: list[BlobSequence],
          plan: TrainingPlan, sched: NoiseSchedule, seed: int, *,
          opt: Adam | None = None, start_step: int = 0,
          ckpt_path=None, ckpt_every: int = 0,
          progress=None) -> list[tuple[int, float]]:
    """Run plan.steps optimization steps; returns (step, loss) pairs.

    A NaN loss aborts immediately with a diagnostic dump of the batch next
    to the checkpoint path (or the working directory).
    """
    sampler = ClipSampler(sequences, codec, net.cfg.segment_len, net.cfg.window)
    opt = opt or Adam(net.parameters(), lr=plan.lr)
    base = Rng(seed)
    log: list[tuple[int, float]] = []
    for step in range(start_step, plan.steps):
        srng = base.split("step").split(step)
        z0, cond = _assemble_batch(sampler, net, codec, plan, srng.split("data"))
        batch = make_batch(z0, sched, srng.split("diffuse"))
        loss = denoise_loss(lambda zt, t, c: net.forward(zt, t, c), batch, cond)
        value = loss.item()
        if not np.isfinite(value):
            dump = Path(str(ckpt_path) + f".nan_step{step}.npz") if ckpt_path \
                else Path(f"nan_batch_step{step}.npz")
            np.savez(dump, zt=batch.zt, t=batch.t, eps=batch.eps,
                     z_ref=cond.z_ref, motion=cond.motion_latents)
            raise RuntimeError(
                f"non-finite loss {value} at step {step}; batch dumped to {dump}"
            )
        opt.zero_grad()
        loss.backward()
        opt.step()
        if step % plan.log_every == 0 or step == plan.steps - 1:
            log.append((step, value))
            if progress:
                progress(step, value)
        if ckpt_path and ckpt_every and (step + 1) % ckpt_every == 0:
            save_training_state(ckpt_path, net, opt, step + 1)
    if ckpt_path:
        save_training_state(ckpt_path, net, opt, plan.steps)
    return log
