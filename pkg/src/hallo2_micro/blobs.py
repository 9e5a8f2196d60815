"""Procedural "talking blob" corpus.

A stylized portrait on a 32x32 canvas: a colored head disc on a colored
background, two eye dots, and a dark red mouth ellipse whose opening is
driven by a scalar signal in [0, 1]. Expression labels edit the geometry
(happy curves the mouth corners up, surprised doubles the eyes), so
expression control can be measured with pixel counting instead of a
learned detector. Everything renders deterministically from its arguments.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ppm import read_ppm, write_ppm
from .rng import Rng

CANVAS = 32

# Fixed palette anchors. Sampled identity colors must stay >= 0.3 away from
# these (and from each other) in max-channel distance so color segmentation
# never misfires.
MOUTH_COLOR = np.array([0.55, 0.05, 0.05])
EYE_COLOR = np.array([0.92, 0.92, 0.96])
COLOR_SEPARATION = 0.3
MOUTH_MATCH_TOL = 0.15

# Mouth geometry at scale 1 (pixels).
MOUTH_HALF_WIDTH = 6.0
MOUTH_MAX_OPEN = 4.0     # vertical semi-axis at aperture 1
MOUTH_DROP = 6.0         # below head center
HAPPY_CORNER_LIFT = 2.0  # corners move up this much under "happy"
EYE_ROW_OFFSET = -4.0
EYE_RADIUS = 1.2         # doubled under "surprised"

LABELS = ("neutral", "happy", "surprised")
LABEL_IDS = {name: i for i, name in enumerate(LABELS)}


def max_channel_distance(c1, c2) -> float:
    return float(np.max(np.abs(np.asarray(c1) - np.asarray(c2))))


@dataclass
class Identity:
    """Appearance parameters of one blob subject."""

    head_color: tuple[float, float, float]
    background_color: tuple[float, float, float]
    head_radius: float
    eye_offset: float

    def validate(self) -> None:
        anchors = {
            "head": self.head_color,
            "background": self.background_color,
            "mouth": tuple(MOUTH_COLOR),
            "eye": tuple(EYE_COLOR),
        }
        names = list(anchors)
        for i, a in enumerate(names):
            for b in names[i + 1 :]:
                d = max_channel_distance(anchors[a], anchors[b])
                if d < COLOR_SEPARATION:
                    raise ValueError(
                        f"identity colors too close: {a} vs {b} ({d:.3f} < {COLOR_SEPARATION})"
                    )

    def to_dict(self) -> dict:
        return {
            "head_color": list(self.head_color),
            "background_color": list(self.background_color),
            "head_radius": self.head_radius,
            "eye_offset": self.eye_offset,
        }

    @staticmethod
    def from_dict(d: dict) -> "Identity":
        return Identity(
            head_color=tuple(d["head_color"]),
            background_color=tuple(d["background_color"]),
            head_radius=float(d["head_radius"]),
            eye_offset=float(d["eye_offset"]),
        )


def sample_identity(rng: Rng) -> Identity:
    """Rejection-sample colors until the whole palette is separated."""
    while True:
        head = tuple(rng.uniform((3,), 0.05, 0.95))
        background = tuple(rng.uniform((3,), 0.05, 0.95))
        ident = Identity(
            head_color=head,
            background_color=background,
            head_radius=float(rng.uniform((), 10.0, 11.5)),
            eye_offset=float(rng.uniform((), 3.0, 5.0)),
        )
        try:
            ident.validate()
            return ident
        except ValueError:
            continue


@dataclass
class DrivingSignal:
    """Per-frame scalar in [0, 1] driving the mouth opening."""

    samples: np.ndarray
    smoothness: float = 0.22

    def __len__(self) -> int:
        return len(self.samples)


def synthesize_signal(rng: Rng, length: int, smoothness: float = 0.22) -> DrivingSignal:
    """Low-pass random walk a' = a + alpha (u - a), u ~ U(0,1).

    Both a and u live in [0,1], so |delta| <= alpha <= 0.25 by construction.
    """
    if not 0.0 < smoothness <= 0.25:
        raise ValueError(f"smoothness must be in (0, 0.25], got {smoothness}")
    u = rng.uniform((length,))
    samples = np.empty(length)
    a = float(rng.uniform((), 0.2, 0.8))
    for t in range(length):
        a = a + smoothness * (u[t] - a)
        samples[t] = a
    return DrivingSignal(samples=samples, smoothness=smoothness)


@dataclass
class ExpressionLabel:
    name: str
    onset_frame: int

    def __post_init__(self):
        if self.name not in LABEL_IDS:
            raise ValueError(f"unknown expression label '{self.name}'")


def label_track(events: list[ExpressionLabel], length: int) -> np.ndarray:
    """Per-frame label ids from an onset-sorted event list."""
    ids = np.zeros(length, dtype=np.int64)
    for ev in sorted(events, key=lambda e: e.onset_frame):
        if not 0 <= ev.onset_frame < length:
            raise ValueError(f"onset_frame {ev.onset_frame} outside 0..{length - 1}")
        ids[ev.onset_frame :] = LABEL_IDS[ev.name]
    return ids


@dataclass
class BlobSequence:
    frames: np.ndarray            # (T, H, W, 3) in [0, 1]
    identity: Identity
    signal: DrivingSignal
    label_events: list[ExpressionLabel]
    label_ids: np.ndarray         # (T,)
    pose: np.ndarray              # (T, 2) head-center offsets (dy, dx)
    scale: int = 1

    def __len__(self) -> int:
        return len(self.frames)


# -- rendering ---------------------------------------------------------------


def render_frame(identity: Identity, aperture: float, label: str,
                 center: tuple[float, float], scale: int = 1) -> np.ndarray:
    """Rasterize one frame; a pure function of its arguments.

    center is the head center (row, col) in canvas pixels. The head must sit
    fully inside the canvas.
    """
    if not 0.0 <= aperture <= 1.0:
        raise ValueError(f"aperture must be in [0, 1], got {aperture}")
    if label not in LABEL_IDS:
        raise ValueError(f"unknown expression label '{label}'")
    side = CANVAS * scale
    cy, cx = float(center[0]) * scale, float(center[1]) * scale
    r = identity.head_radius * scale
    if cy - r < 0 or cy + r > side - 1 or cx - r < 0 or cx + r > side - 1:
        raise ValueError(
            f"head (center={center}, radius={identity.head_radius}) leaves the canvas"
        )

    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
    img = np.empty((side, side, 3))
    img[:] = identity.background_color

    head = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    img[head] = identity.head_color

    eye_r = EYE_RADIUS * scale * (2.0 if label == "surprised" else 1.0)
    ey = cy + EYE_ROW_OFFSET * scale
    for ex in (cx - identity.eye_offset * scale, cx + identity.eye_offset * scale):
        eye = (yy - ey) ** 2 + (xx - ex) ** 2 <= eye_r * eye_r
        img[eye] = EYE_COLOR

    b = MOUTH_MAX_OPEN * scale * aperture
    if b > 0.0:
        a = MOUTH_HALF_WIDTH * scale
        my = cy + MOUTH_DROP * scale
        lift = HAPPY_CORNER_LIFT * scale if label == "happy" else 0.0
        dx = (xx - cx) / a
        centerline = my - lift * dx * dx
        mouth = dx * dx + ((yy - centerline) / b) ** 2 <= 1.0
        img[mouth] = MOUTH_COLOR

    return img


def mouth_mask(frame: np.ndarray) -> np.ndarray:
    """Pixels matching the fixed mouth color within the segmentation band."""
    return np.max(np.abs(frame - MOUTH_COLOR), axis=-1) <= MOUTH_MATCH_TOL


_MAX_MOUTH_AREA: dict[int, int] = {}


def _mouth_max_area(scale: int) -> int:
    if scale not in _MAX_MOUTH_AREA:
        a = MOUTH_HALF_WIDTH * scale
        b = MOUTH_MAX_OPEN * scale
        span = int(np.ceil(max(a, b))) + 1
        dy, dx = np.mgrid[-span : span + 1, -span : span + 1].astype(np.float64)
        _MAX_MOUTH_AREA[scale] = int(((dx / a) ** 2 + (dy / b) ** 2 <= 1.0).sum())
    return _MAX_MOUTH_AREA[scale]


def measure_aperture(frame: np.ndarray) -> float:
    """Mouth-pixel count normalized by the largest possible mouth, in [0, 1]."""
    side = frame.shape[0]
    scale = max(1, side // CANVAS)
    count = int(mouth_mask(frame).sum())
    return min(1.0, count / _mouth_max_area(scale))


def mouth_curvature(frame: np.ndarray) -> float:
    """Corner-lift statistic: positive when mouth corners sit above center.

    Per mouth column, take the mean row; compare inner columns (within half
    the mouth half-width of the centroid) against outer ones. Straight mouths
    score ~0, "happy" mouths score positive. Result is in scale-1 pixels.
    """
    mask = mouth_mask(frame)
    if mask.sum() < 4:
        return 0.0
    side = frame.shape[0]
    scale = max(1, side // CANVAS)
    ys, xs = np.nonzero(mask)
    cx = xs.mean()
    cols = np.unique(xs)
    col_rows = np.array([ys[xs == c].mean() for c in cols], dtype=np.float64)
    inner = np.abs(cols - cx) <= MOUTH_HALF_WIDTH * scale / 2.0
    if inner.all() or not inner.any():
        return 0.0
    return float((col_rows[inner].mean() - col_rows[~inner].mean()) / scale)


# -- sequence synthesis ----------------------------------------------------------


@dataclass
class SequenceConfig:
    smoothness: float = 0.22
    # Amplitude stays subpixel by default: the hard-edged rasterizer flips a
    # boundary ring of pixels per shifted pixel, and the appearance-drift
    # metric must stay < 0.02 on ground truth. Capped at 3 px.
    pose_amplitude_max: float = 0.15
    pose_period_min: int = 64
    max_label_switches: int = 2
    scale: int = 1

    def __post_init__(self):
        if self.pose_amplitude_max > 3.0:
            raise ValueError("pose amplitude capped at 3 px")


def _pose_track(rng: Rng, length: int, cfg: SequenceConfig) -> np.ndarray:
    track = np.zeros((length, 2))
    t = np.arange(length)
    for axis in range(2):
        amp = float(rng.uniform((), cfg.pose_amplitude_max / 3.0, cfg.pose_amplitude_max))
        period = float(rng.uniform((), cfg.pose_period_min, 2 * cfg.pose_period_min))
        phase = float(rng.uniform((), 0.0, 2 * np.pi))
        track[:, axis] = amp * np.sin(2 * np.pi * t / period + phase)
    return track


def _label_events(rng: Rng, length: int, cfg: SequenceConfig) -> list[ExpressionLabel]:
    events = [ExpressionLabel("neutral", 0)]
    n_switch = int(rng.integers(0, cfg.max_label_switches + 1))
    if n_switch == 0 or length < 4:
        return events
    onsets = sorted(
        int(v) for v in rng.integers(length // 4, length, (n_switch,))
    )
    current = 0
    for onset in onsets:
        choices = [i for i in range(len(LABELS)) if i != current]
        current = int(choices[int(rng.integers(0, len(choices)))])
        events.append(ExpressionLabel(LABELS[current], onset))
    return events


def generate_sequence(rng: Rng, length: int,
                      cfg: SequenceConfig | None = None) -> BlobSequence:
    """One labeled sequence: identity sampled once, then rendered per frame."""
    if length < 2:
        raise ValueError(f"sequence length must be >= 2, got {length}")
    cfg = cfg or SequenceConfig()
    identity = sample_identity(rng.split("identity"))
    signal = synthesize_signal(rng.split("signal"), length, cfg.smoothness)
    pose = _pose_track(rng.split("pose"), length, cfg)
    events = _label_events(rng.split("labels"), length, cfg)
    ids = label_track(events, length)

    base = CANVAS / 2.0
    side = CANVAS * cfg.scale
    frames = np.empty((length, side, side, 3))
    for t in range(length):
        frames[t] = render_frame(
            identity,
            float(signal.samples[t]),
            LABELS[ids[t]],
            (base + pose[t, 0], base + pose[t, 1]),
            scale=cfg.scale,
        )
    return BlobSequence(
        frames=frames,
        identity=identity,
        signal=signal,
        label_events=events,
        label_ids=ids,
        pose=pose,
        scale=cfg.scale,
    )


def rerender_sequence(seq: BlobSequence, scale: int) -> np.ndarray:
    """Re-render a sequence's frames at another scale (HQ pair source)."""
    base = CANVAS / 2.0
    side = CANVAS * scale
    frames = np.empty((len(seq), side, side, 3))
    for t in range(len(seq)):
        frames[t] = render_frame(
            seq.identity,
            float(seq.signal.samples[t]),
            LABELS[seq.label_ids[t]],
            (base + seq.pose[t, 0], base + seq.pose[t, 1]),
            scale=scale,
        )
    return frames


# -- disk layout -------------------------------------------------------------------
# One directory per sequence: frame_0000.ppm ... plus meta.json carrying the
# identity, the driving signal, the label track, and the pose track.


def save_sequence(directory, seq: BlobSequence) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for t in range(len(seq)):
        write_ppm(directory / f"frame_{t:04d}.ppm", seq.frames[t])
    meta = {
        "identity": seq.identity.to_dict(),
        "signal": [float(v) for v in seq.signal.samples],
        "smoothness": seq.signal.smoothness,
        "label_events": [
            {"name": ev.name, "onset_frame": ev.onset_frame} for ev in seq.label_events
        ],
        "label_ids": [int(v) for v in seq.label_ids],
        "pose": [[float(a), float(b)] for a, b in seq.pose],
        "scale": seq.scale,
    }
    with open(directory / "meta.json", "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_sequence(directory) -> BlobSequence:
    directory = Path(directory)
    meta = json.loads((directory / "meta.json").read_text())
    paths = sorted(directory.glob("frame_*.ppm"))
    if not paths:
        raise FileNotFoundError(f"no frames in {directory}")
    frames = np.stack([read_ppm(p) for p in paths])
    return BlobSequence(
        frames=frames,
        identity=Identity.from_dict(meta["identity"]),
        signal=DrivingSignal(
            samples=np.array(meta["signal"]), smoothness=meta["smoothness"]
        ),
        label_events=[
            ExpressionLabel(ev["name"], ev["onset_frame"])
            for ev in meta["label_events"]
        ],
        label_ids=np.array(meta["label_ids"], dtype=np.int64),
        pose=np.array(meta["pose"]),
        scale=int(meta.get("scale", 1)),
    )


def generate_dataset(root, n_sequences: int, length: int, seed: int,
                     cfg: SequenceConfig | None = None) -> list[Path]:
    """Write n_sequences sequence directories under root; returns their paths."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    base = Rng(seed)
    out = []
    for i in range(n_sequences):
        seq = generate_sequence(base.split(i), length, cfg)
        directory = root / f"seq_{i:04d}"
        save_sequence(directory, seq)
        out.append(directory)
    return out


def load_dataset(root) -> list[BlobSequence]:
    root = Path(root)
    dirs = sorted(d for d in root.iterdir() if d.is_dir() and (d / "meta.json").exists())
    if not dirs:
        raise FileNotFoundError(f"no sequence directories under {root}")
    return [load_sequence(d) for d in dirs]
