"""Binary PPM/PGM image files (P6/P5, maxval 255).

Zero-dependency frame format: byte-exact to diff in tests and trivially
deterministic. Optional PNG export goes through Pillow.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np


def to_bytes_u8(img: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_ppm(path, img: np.ndarray) -> None:
    """img: float array (H, W, 3) in [0, 1]."""
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"PPM expects (H, W, 3), got {img.shape}")
    h, w = img.shape[:2]
    data = to_bytes_u8(img)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def write_pgm(path, img: np.ndarray) -> None:
    """img: float array (H, W) in [0, 1]."""
    if img.ndim != 2:
        raise ValueError(f"PGM expects (H, W), got {img.shape}")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(to_bytes_u8(img).tobytes())


def _read_netpbm(path, magic: bytes, channels: int) -> np.ndarray:
    blob = Path(path).read_bytes()
    if not blob.startswith(magic):
        raise ValueError(f"{path}: expected {magic!r} header")
    # Header is 4 whitespace-separated tokens: magic, width, height, maxval.
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if blob[pos : pos + 1] == b"#":  # comment line
            pos = blob.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        tokens.append(blob[start:pos])
    pos += 1  # single whitespace after maxval
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 supported, got {maxval}")
    raw = np.frombuffer(blob, dtype=np.uint8, count=h * w * channels, offset=pos)
    shape = (h, w, channels) if channels > 1 else (h, w)
    return raw.reshape(shape).astype(np.float64) / 255.0


def read_ppm(path) -> np.ndarray:
    return _read_netpbm(path, b"P6", 3)


def read_pgm(path) -> np.ndarray:
    return _read_netpbm(path, b"P5", 1)


def write_png(path, img: np.ndarray) -> None:
    try:
        from PIL import Image
    except ImportError as exc:
        raise RuntimeError(
            "PNG export needs Pillow; install the 'png' extra"
        ) from exc
    Image.fromarray(to_bytes_u8(img)).save(path)
