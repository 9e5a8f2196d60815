"""Motion-frame corruption: patch drop plus Gaussian latent noise.

Motion frames are deliberately corrupted before conditioning so the model
learns to draw appearance from the reference image and only motion from
the window. A frame is tiled into p x p patches; each patch survives with
probability 1 - r (dropped patches become exact zeros, survivors stay
byte-identical). Gaussian noise with standard deviation sigma is then
added to the encoded latent. The reference latent never passes through
here.

Patch drop defaults to image space (drop, then encode); a latent-space
variant (encode, then drop on the latent grid) is available through
drop_domain="latent".
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codec import LatentCodec
from .rng import Rng

SUPPORTED_PATCH_SIZES = (0, 1, 4, 16)
DROP_DOMAINS = ("image", "latent")


@dataclass(frozen=True)
class PatchDropConfig:
    patch_size: int = 1      # 0 disables patch drop
    drop_rate: float = 0.25

    def __post_init__(self):
        if self.patch_size not in SUPPORTED_PATCH_SIZES:
            raise ValueError(
                f"patch_size must be one of {SUPPORTED_PATCH_SIZES}, got {self.patch_size}"
            )
        if not 0.0 <= self.drop_rate <= 1.0:
            raise ValueError(f"drop_rate must be in [0, 1], got {self.drop_rate}")

    @property
    def enabled(self) -> bool:
        return self.patch_size > 0 and self.drop_rate > 0.0


@dataclass(frozen=True)
class NoiseAugConfig:
    sigma: float = 0.1

    def __post_init__(self):
        if self.sigma < 0.0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")


@dataclass
class PatchMask:
    """Binary retain/drop grid aligned to the patch tiling."""

    grid: np.ndarray   # (side/p, side/p) of {0, 1}
    patch_size: int

    @property
    def K(self) -> int:
        return self.grid.size


def make_mask(cfg: PatchDropConfig, rng: Rng, side: int = 32) -> PatchMask:
    """Each patch retained independently iff xi >= r, xi ~ U(0, 1)."""
    p = cfg.patch_size
    if p <= 0:
        raise ValueError("make_mask needs patch_size > 0")
    if side % p != 0:
        raise ValueError(f"canvas side {side} not divisible by patch size {p}")
    k = side // p
    xi = rng.uniform((k, k))
    return PatchMask(grid=(xi >= cfg.drop_rate).astype(np.float64), patch_size=p)


def patch_drop(frame: np.ndarray, mask: PatchMask, p: int,
               layout: str = "hwc") -> np.ndarray:
    """Zero dropped patches; retained pixels come through bit-identical.

    layout "hwc" places channels last (images); "chw" places them first
    (latents). The spatial axes must match the mask tiling exactly.
    """
    if p != mask.patch_size:
        raise ValueError(f"mask built for p={mask.patch_size}, called with p={p}")
    if layout not in ("hwc", "chw"):
        raise ValueError(f"layout must be 'hwc' or 'chw', got {layout!r}")
    kh, kw = mask.grid.shape
    spatial = frame.shape[:2] if layout == "hwc" else frame.shape[-2:]
    if spatial != (kh * p, kw * p):
        raise ValueError(
            f"mask tiling {mask.grid.shape} x {p} does not match frame {frame.shape}"
        )
    full = np.repeat(np.repeat(mask.grid, p, axis=0), p, axis=1)
    return frame * (full[:, :, None] if layout == "hwc" else full[None, :, :])


def augment_motion_frame(frame: np.ndarray, pd: PatchDropConfig,
                         na: NoiseAugConfig, codec: LatentCodec, rng: Rng,
                         drop_domain: str = "image") -> np.ndarray:
    """Corrupted latent of one motion frame: encode(drop(frame)) + noise.

    With patch drop disabled and sigma = 0 this is exactly encode_frame.
    """
    return augment_motion_frames(
        frame[None], pd, na, codec, [rng], drop_domain
    )[0]


def augment_motion_frames(frames: np.ndarray, pd: PatchDropConfig,
                          na: NoiseAugConfig, codec: LatentCodec,
                          rngs: list[Rng], drop_domain: str = "image") -> np.ndarray:
    """Batched corruption: (M, H, W, 3) frames -> (M,) + latent_shape.

    Each frame has its own random stream (mask first, then latent noise),
    so results match the single-frame path draw for draw while the encoder
    runs once over the whole stack.
    """
    if drop_domain not in DROP_DOMAINS:
        raise ValueError(f"drop_domain must be one of {DROP_DOMAINS}")
    if len(rngs) != len(frames):
        raise ValueError(f"need one rng per frame: {len(rngs)} vs {len(frames)}")
    if drop_domain == "image":
        if pd.enabled:
            frames = np.stack([
                patch_drop(f, make_mask(pd, r, side=f.shape[0]), pd.patch_size)
                for f, r in zip(frames, rngs)
            ])
        z = codec.encode_batch(frames)
    else:
        z = codec.encode_batch(frames)
        if pd.enabled:
            side = z.shape[-1]
            if side % pd.patch_size != 0:
                raise ValueError(
                    f"latent side {side} not divisible by patch size {pd.patch_size}"
                )
            z = np.stack([
                patch_drop(zi, make_mask(pd, r, side=side), pd.patch_size, layout="chw")
                for zi, r in zip(z, rngs)
            ])
    if na.sigma > 0.0:
        z = z + np.stack([r.normal(zi.shape, std=na.sigma) for zi, r in zip(z, rngs)])
    return z
