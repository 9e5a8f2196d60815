"""Quality proxies computed from saved frames.

Appearance drift is the per-frame mean absolute distance to the reference
over non-mouth pixels (mouth pixels are excluded by color segmentation so
lip motion never counts as drift). Sync is the Pearson correlation between
the measured mouth aperture and the commanded signal. Everything here is a
pure function of stored arrays: re-running on the same frames reproduces
reports bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blobs import measure_aperture, mouth_curvature, mouth_mask


def appearance_drift(frames: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """D(k) for every frame; mouth regions of either image are excluded."""
    if len(frames) < 1:
        raise ValueError("need at least one frame")
    ref_mouth = mouth_mask(reference)
    out = np.empty(len(frames))
    for k, frame in enumerate(frames):
        keep = ~(ref_mouth | mouth_mask(frame))
        if not keep.any():
            out[k] = 0.0
            continue
        out[k] = float(np.abs(frame - reference)[keep].mean())
    return out


def drift_slope(curve: np.ndarray) -> float:
    """Least-squares slope of D(k) over the frame index."""
    k = np.arange(len(curve), dtype=np.float64)
    if len(curve) < 2:
        return 0.0
    kc = k - k.mean()
    denom = float((kc * kc).sum())
    return float((kc * (curve - curve.mean())).sum() / denom)


def sync_correlation(frames: np.ndarray, signal) -> float:
    """Pearson r between measured apertures and the driving signal."""
    samples = np.asarray(getattr(signal, "samples", signal), dtype=np.float64)
    if len(frames) != len(samples):
        raise ValueError(
            f"frame count {len(frames)} != signal length {len(samples)}"
        )
    if samples.std() == 0.0:
        raise ValueError("driving signal has zero variance; correlation undefined")
    apertures = np.array([measure_aperture(f) for f in frames])
    if apertures.std() == 0.0:
        return 0.0
    return float(np.corrcoef(apertures, samples)[0, 1])


def smoothness(frames: np.ndarray) -> float:
    """Mean absolute difference between adjacent frames."""
    if len(frames) < 2:
        return 0.0
    return float(np.abs(np.diff(frames, axis=0)).mean())


def expression_response(frames: np.ndarray, switch_frame: int,
                        margin: int = 0) -> float:
    """Mouth-curvature shift across a label switch (after minus before).

    margin skips frames right at the boundary (segment granularity).
    """
    if not 0 < switch_frame < len(frames):
        raise ValueError(f"switch frame {switch_frame} outside sequence")
    before = [mouth_curvature(f) for f in frames[: max(1, switch_frame - margin)]]
    after = [mouth_curvature(f) for f in frames[switch_frame + margin :]]
    if not after:
        raise ValueError("no frames after the switch")
    return float(np.mean(after) - np.mean(before))


@dataclass
class DriftReport:
    drift: np.ndarray            # D(k)
    terminal_drift: float        # D at the final frame
    slope: float
    sync: float
    smooth: float
    expression: float | None     # None when the timeline has no switch

    def validate(self) -> None:
        assert np.all(np.isfinite(self.drift)) and np.all(self.drift >= 0)
        assert -1.0 <= self.sync <= 1.0


def drift_report(frames: np.ndarray, reference: np.ndarray, signal,
                 switch_frame: int | None = None) -> DriftReport:
    curve = appearance_drift(frames, reference)
    report = DriftReport(
        drift=curve,
        terminal_drift=float(curve[-1]),
        slope=drift_slope(curve),
        sync=sync_correlation(frames, signal),
        smooth=smoothness(frames),
        expression=(
            expression_response(frames, switch_frame)
            if switch_frame is not None else None
        ),
    )
    report.validate()
    return report


def exact_binomial_sign_test(wins: int, n: int) -> float:
    """One-sided exact binomial p-value: P[X >= wins] under fair coin."""
    if not 0 <= wins <= n:
        raise ValueError(f"wins {wins} outside 0..{n}")
    from math import comb

    return sum(comb(n, i) for i in range(wins, n + 1)) / 2.0 ** n
