"""Frame <-> latent codec.

Two modes share one interface:

* "conv": a small trained conv autoencoder mapping 32x32x3 images to 8x8x8
  latents and back. Latents are standardized by corpus statistics so the
  diffusion side sees roughly unit scale.
* "identity-debug": a parameter-free path (16x16 grayscale pixel space,
  latent shape 1x16x16) so diffusion machinery can run without training.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .modules import Conv2d, ConvTranspose2d, Module
from .optim import Adam
from .rng import Rng
from .tensor import Tensor, no_grad

LATENT_SHAPE = (8, 8, 8)          # (C, H, W) in conv mode
DEBUG_LATENT_SHAPE = (1, 16, 16)


def to_chw(images: np.ndarray) -> np.ndarray:
    """(B, H, W, 3) -> (B, 3, H, W)."""
    return np.ascontiguousarray(np.moveaxis(images, -1, 1))


def to_hwc(chw: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.moveaxis(chw, 1, -1))


def gray(images: np.ndarray) -> np.ndarray:
    return images.mean(axis=-1)


def pool2(x: np.ndarray) -> np.ndarray:
    """2x2 average pooling over the trailing two axes."""
    h, w = x.shape[-2] // 2, x.shape[-1] // 2
    return x.reshape(x.shape[:-2] + (h, 2, w, 2)).mean(axis=(-3, -1))


def upsample2(x: np.ndarray) -> np.ndarray:
    return np.repeat(np.repeat(x, 2, axis=-2), 2, axis=-1)


class LatentCodec(Module):
    def __init__(self, rng: Rng | None = None, mode: str = "conv"):
        super().__init__()
        if mode not in ("conv", "identity-debug"):
            raise ValueError(f"unknown codec mode '{mode}'")
        self.mode = mode
        self.trained = mode == "identity-debug"
        self.latent_mean = 0.0
        self.latent_std = 1.0
        if mode == "conv":
            if rng is None:
                raise ValueError("conv codec needs an rng for initialization")
            self.enc1 = self.child("enc1", Conv2d(3, 16, 3, rng.split("e1"), stride=2, padding=1))
            self.enc2 = self.child("enc2", Conv2d(16, 32, 3, rng.split("e2"), stride=2, padding=1))
            self.enc3 = self.child("enc3", Conv2d(32, 8, 3, rng.split("e3"), stride=1, padding=1))
            self.dec1 = self.child("dec1", Conv2d(8, 32, 3, rng.split("d1"), stride=1, padding=1))
            self.dec2 = self.child("dec2", ConvTranspose2d(32, 16, 4, rng.split("d2"), stride=2, padding=1))
            self.dec3 = self.child("dec3", ConvTranspose2d(16, 16, 4, rng.split("d3"), stride=2, padding=1))
            self.dec4 = self.child("dec4", Conv2d(16, 3, 3, rng.split("d4"), stride=1, padding=1))

    @property
    def latent_shape(self) -> tuple[int, int, int]:
        return DEBUG_LATENT_SHAPE if self.mode == "identity-debug" else LATENT_SHAPE

    # -- differentiable paths (conv mode, training) ---------------------------

    def enc_forward(self, x: Tensor) -> Tensor:
        h = T.silu(self.enc1(x))
        h = T.silu(self.enc2(h))
        return self.enc3(h)

    def dec_forward(self, z: Tensor) -> Tensor:
        h = T.silu(self.dec1(z))
        h = T.silu(self.dec2(h))
        h = T.silu(self.dec3(h))
        return self.dec4(h)

    # -- inference interface ----------------------------------------------------

    def _require_trained(self) -> None:
        if not self.trained:
            raise RuntimeError(
                "codec is untrained; train it or use mode='identity-debug'"
            )

    def encode_batch(self, images: np.ndarray) -> np.ndarray:
        """(B, H, W, 3) images in [0,1] -> (B,) + latent_shape latents."""
        self._require_trained()
        if self.mode == "identity-debug":
            return pool2(gray(images))[:, None, :, :]
        with no_grad():
            z = self.enc_forward(Tensor(to_chw(images))).data
        return (z - self.latent_mean) / self.latent_std

    def decode_batch(self, latents: np.ndarray) -> np.ndarray:
        """Latents -> (B, H, W, 3) images clamped to [0, 1]."""
        self._require_trained()
        if self.mode == "identity-debug":
            g = upsample2(latents[:, 0, :, :])
            return np.clip(np.repeat(g[..., None], 3, axis=-1), 0.0, 1.0)
        with no_grad():
            z = latents * self.latent_std + self.latent_mean
            img = self.dec_forward(Tensor(z)).data
        return np.clip(to_hwc(img), 0.0, 1.0)

    def encode_frame(self, image: np.ndarray) -> np.ndarray:
        return self.encode_batch(image[None])[0]

    def decode_latent(self, latent: np.ndarray) -> np.ndarray:
        return self.decode_batch(latent[None])[0]

    # -- persistence ---------------------------------------------------------------

    def state(self) -> dict[str, np.ndarray]:
        out = {k: v.data for k, v in self.parameters().items()}
        out["norm.mean"] = np.array([self.latent_mean])
        out["norm.std"] = np.array([self.latent_std])
        out["norm.trained"] = np.array([1.0 if self.trained else 0.0])
        return out

    def load_state(self, tensors: dict[str, np.ndarray]) -> None:
        self.load_parameters(
            {k: v for k, v in tensors.items() if not k.startswith("norm.")}
        )
        self.latent_mean = float(tensors["norm.mean"][0])
        self.latent_std = float(tensors["norm.std"][0])
        self.trained = bool(tensors["norm.trained"][0])


def train_codec(codec: LatentCodec, frames: np.ndarray, rng: Rng,
                steps: int = 1200, batch: int = 16, lr: float = 2e-3,
                log_every: int = 200) -> list[tuple[int, float]]:
    """MSE reconstruction training on corpus frames (N, H, W, 3).

    Afterwards, latent normalization statistics are calibrated over the
    training frames and the codec is marked trained.
    """
    if codec.mode != "conv":
        raise ValueError("only the conv codec trains")
    opt = Adam(codec.parameters(), lr=lr)
    log = []
    n = len(frames)
    for step in range(steps):
        idx = rng.split(step).integers(0, n, (batch,))
        x = Tensor(to_chw(frames[idx]))
        opt.zero_grad()
        recon = codec.dec_forward(codec.enc_forward(x))
        diff = recon - x
        loss = (diff * diff).mean()
        loss.backward()
        opt.step()
        if step % log_every == 0 or step == steps - 1:
            log.append((step, loss.item()))
    # calibrate latent scale on a fixed subset
    with no_grad():
        idx = rng.split("calibrate").integers(0, n, (min(256, n),))
        z = codec.enc_forward(Tensor(to_chw(frames[idx]))).data
    codec.latent_mean = float(z.mean())
    codec.latent_std = float(z.std()) or 1.0
    codec.trained = True
    return log
