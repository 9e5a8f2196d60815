"""Metric proxies: drift exclusions, sync correlation, sign test."""

import numpy as np
import pytest

from hallo2_micro.blobs import generate_sequence, render_frame
from hallo2_micro.metrics import (
    appearance_drift,
    drift_report,
    drift_slope,
    exact_binomial_sign_test,
    expression_response,
    smoothness,
    sync_correlation,
)
from hallo2_micro.rng import Rng


def test_drift_zero_for_identical_frame():
    seq = generate_sequence(Rng(1), 4)
    d = appearance_drift(seq.frames[:1], seq.frames[0])
    assert d[0] == 0.0


def test_drift_background_shift_analytic():
    seq = generate_sequence(Rng(2), 2)
    ref = seq.frames[0]
    shifted = ref.copy()
    from hallo2_micro.blobs import mouth_mask

    bg = np.all(np.abs(ref - seq.identity.background_color) < 1e-9, axis=-1)
    shifted[bg] = np.clip(shifted[bg] + np.array([0.2, 0.2, 0.2]), 0, 1)
    keep = ~(mouth_mask(ref) | mouth_mask(shifted))
    expected = 0.2 * bg[keep].sum() / keep.sum()
    d = appearance_drift(shifted[None], ref)[0]
    np.testing.assert_allclose(d, expected, rtol=1e-6)


def test_drift_small_on_ground_truth_sequences():
    # pose sinusoid only: no label switches, so expression edits don't count
    from hallo2_micro.blobs import SequenceConfig

    cfg = SequenceConfig(max_label_switches=0)
    for seed in range(8):
        seq = generate_sequence(Rng(10 + seed), 96, cfg)
        d = appearance_drift(seq.frames, seq.frames[0])
        assert d.max() < 0.02, f"seed {seed}: max drift {d.max():.4f}"


def test_drift_ignores_commanded_aperture():
    ident_seq = generate_sequence(Rng(20), 2)
    ident = ident_seq.identity
    center = (16.0, 16.0)
    ref = render_frame(ident, 0.0, "neutral", center)
    wide = render_frame(ident, 1.0, "neutral", center)
    d = appearance_drift(wide[None], ref)[0]
    assert d < 1e-6


def test_sync_on_ground_truth_and_sign_flip():
    seq = generate_sequence(Rng(3), 96)
    r = sync_correlation(seq.frames, seq.signal)
    assert r > 0.95
    flipped = 1.0 - seq.signal.samples
    r2 = sync_correlation(seq.frames, flipped)
    np.testing.assert_allclose(r2, -r, atol=1e-12)


def test_sync_constant_frames_returns_zero():
    seq = generate_sequence(Rng(4), 8)
    frames = np.repeat(seq.frames[:1], 8, axis=0)
    assert sync_correlation(frames, seq.signal) == 0.0


def test_sync_zero_variance_signal_is_an_error():
    seq = generate_sequence(Rng(5), 8)
    with pytest.raises(ValueError, match="zero-variance|zero variance"):
        sync_correlation(seq.frames, np.full(8, 0.5))


def test_drift_slope_linear_curve():
    curve = 0.003 * np.arange(50) + 0.01
    np.testing.assert_allclose(drift_slope(curve), 0.003, rtol=1e-9)


def test_smoothness_static_sequence_is_zero():
    frames = np.zeros((4, 8, 8, 3))
    assert smoothness(frames) == 0.0


def test_expression_response_direction_on_ground_truth():
    ident = generate_sequence(Rng(6), 2).identity
    center = (16.0, 16.0)
    frames = np.stack(
        [render_frame(ident, 0.8, "neutral", center)] * 10
        + [render_frame(ident, 0.8, "happy", center)] * 10
    )
    delta = expression_response(frames, 10)
    assert delta > 0.5


def test_drift_report_bundles_and_validates():
    seq = generate_sequence(Rng(7), 64)
    rep = drift_report(seq.frames, seq.frames[0], seq.signal)
    assert rep.terminal_drift == rep.drift[-1]
    assert rep.expression is None
    assert -1 <= rep.sync <= 1


def test_exact_binomial_sign_test_values():
    # 5/5 wins: p = 1/32; 4/5: p = 6/32
    np.testing.assert_allclose(exact_binomial_sign_test(5, 5), 1 / 32)
    np.testing.assert_allclose(exact_binomial_sign_test(4, 5), 6 / 32)
    np.testing.assert_allclose(exact_binomial_sign_test(0, 5), 1.0)
    assert exact_binomial_sign_test(5, 5) < 0.05
    assert exact_binomial_sign_test(4, 5) > 0.05


def test_metrics_are_pure_functions():
    seq = generate_sequence(Rng(8), 32)
    a = drift_report(seq.frames, seq.frames[0], seq.signal)
    b = drift_report(seq.frames, seq.frames[0], seq.signal)
    np.testing.assert_array_equal(a.drift, b.drift)
    assert a.sync == b.sync and a.smooth == b.smooth
