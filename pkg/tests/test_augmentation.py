"""Patch-drop and Gaussian augmentation: exact cases and Monte-Carlo stats."""

import numpy as np
import pytest

from hallo2_micro.augmentation import (
    NoiseAugConfig,
    PatchDropConfig,
    PatchMask,
    augment_motion_frame,
    make_mask,
    patch_drop,
)
from hallo2_micro.codec import LatentCodec
from hallo2_micro.rng import Rng


def test_config_validation():
    with pytest.raises(ValueError, match="patch_size"):
        PatchDropConfig(patch_size=3)
    with pytest.raises(ValueError, match="drop_rate"):
        PatchDropConfig(drop_rate=1.5)
    with pytest.raises(ValueError, match="sigma"):
        NoiseAugConfig(sigma=-0.1)


def test_mask_r0_all_ones_and_r1_all_zeros():
    ones = make_mask(PatchDropConfig(4, 0.0), Rng(1))
    np.testing.assert_array_equal(ones.grid, np.ones((8, 8)))
    zeros = make_mask(PatchDropConfig(4, 1.0), Rng(2))
    np.testing.assert_array_equal(zeros.grid, np.zeros((8, 8)))
    assert ones.K == 64


def test_mask_k_matches_tiling():
    assert make_mask(PatchDropConfig(1, 0.5), Rng(0)).K == 1024
    assert make_mask(PatchDropConfig(16, 0.5), Rng(0)).K == 4


@pytest.mark.parametrize("r", [0.1, 0.25, 0.5])
def test_mask_retained_fraction_monte_carlo(r):
    # Mean retained fraction over 10^4 masks equals 1 - r within 0.01.
    rng = Rng(hash(("mask", r)) & 0xFFFF)
    cfg = PatchDropConfig(4, r)
    total = 0.0
    n = 10_000
    for i in range(n):
        total += make_mask(cfg, rng.split(i)).grid.mean()
    assert abs(total / n - (1.0 - r)) < 0.01


def test_patch_drop_identity_and_zero():
    frame = Rng(3).uniform((32, 32, 3))
    ones = PatchMask(np.ones((8, 8)), 4)
    np.testing.assert_array_equal(patch_drop(frame, ones, 4), frame)
    zeros = PatchMask(np.zeros((8, 8)), 4)
    np.testing.assert_array_equal(patch_drop(frame, zeros, 4), np.zeros_like(frame))


def test_patch_drop_checkerboard_exact_half():
    frame = Rng(4).uniform((32, 32, 3)) + 0.5  # strictly positive
    grid = np.indices((8, 8)).sum(axis=0) % 2
    out = patch_drop(frame, PatchMask(grid.astype(float), 4), 4)
    zero_pixels = np.all(out == 0.0, axis=-1).sum()
    assert zero_pixels == 32 * 32 // 2
    kept = out != 0.0
    np.testing.assert_array_equal(out[kept], frame[kept])  # bit-identical


def test_patch_drop_tiling_mismatch():
    frame = np.ones((32, 32, 3))
    with pytest.raises(ValueError, match="tiling"):
        patch_drop(frame, PatchMask(np.ones((4, 4)), 4), 4)


def test_patch_drop_latent_layout():
    z = Rng(5).normal((8, 8, 8))  # (C, H, W)
    grid = np.zeros((2, 2))
    grid[0, 0] = 1.0
    out = patch_drop(z, PatchMask(grid, 4), 4, layout="chw")
    np.testing.assert_array_equal(out[:, :4, :4], z[:, :4, :4])
    assert np.all(out[:, 4:, :] == 0.0)


def test_augment_disabled_equals_plain_encode():
    codec = LatentCodec(mode="identity-debug")
    frame = Rng(6).uniform((32, 32, 3))
    out = augment_motion_frame(
        frame, PatchDropConfig(0, 0.0), NoiseAugConfig(0.0), codec, Rng(7)
    )
    np.testing.assert_array_equal(out, codec.encode_frame(frame))


def test_augment_latent_noise_variance_monte_carlo():
    # sigma=0.1 on a fixed zero frame: latent spread about the deterministic
    # encode is sigma^2 within 20% over 10^3 draws.
    codec = LatentCodec(mode="identity-debug")
    frame = np.zeros((32, 32, 3))
    base = codec.encode_frame(frame)
    rng = Rng(8)
    sq = []
    for i in range(1000):
        z = augment_motion_frame(
            frame, PatchDropConfig(0, 0.0), NoiseAugConfig(0.1), codec, rng.split(i)
        )
        sq.append(((z - base) ** 2).mean())
    var = float(np.mean(sq))
    assert abs(var - 0.01) < 0.002


def test_augment_latent_domain_drops_latent_patches():
    codec = LatentCodec(mode="identity-debug")  # latent (1, 16, 16)
    frame = Rng(9).uniform((32, 32, 3)) * 0.5 + 0.25
    out = augment_motion_frame(
        frame, PatchDropConfig(4, 1.0), NoiseAugConfig(0.0), codec, Rng(10),
        drop_domain="latent",
    )
    np.testing.assert_array_equal(out, np.zeros_like(out))


def test_default_config_matches_selected_ablation_optimum():
    # defaults are the best ablation cell: patch size 1, drop rate 0.25
    cfg = PatchDropConfig()
    assert cfg.patch_size == 1
    assert cfg.drop_rate == 0.25


def test_mask_statistics_three_sigma_band():
    # Expected retained fraction 1-r; check a 3-sigma band per Bernoulli K
    cfg = PatchDropConfig(4, 0.25)
    rng = Rng(11)
    fractions = [make_mask(cfg, rng.split(i)).grid.mean() for i in range(2000)]
    k = 64
    sd = np.sqrt(0.25 * 0.75 / k) / np.sqrt(len(fractions))
    assert abs(np.mean(fractions) - 0.75) < 3 * sd + 1e-9
