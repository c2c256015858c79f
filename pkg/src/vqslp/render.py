"""Stick-figure PNG frames from pose sequences (x/y projection, display only)."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .errors import DataError
from .pose_data import PoseSequence, fit_normalization, normalize

GROUP_COLOURS = {
    "hand_left": (200, 60, 60),
    "hand_right": (60, 60, 200),
    "body": (30, 30, 30),
    "face": (60, 150, 60),
}
DEFAULT_COLOUR = (30, 30, 30)


def display_frames(seq: PoseSequence) -> np.ndarray:
    """Frames in [0, 1]; sequences outside the unit box are min-max scaled on themselves."""
    f = seq.frames
    if f.min() < 0.0 or f.max() > 1.0:
        span = f.max(axis=(0, 1)) - f.min(axis=(0, 1))
        if (span > 0).all():
            f = normalize(seq, fit_normalization([seq]))[0].frames
    return np.clip(f, 0.0, 1.0)


def draw_frame(frame: np.ndarray, skeleton, size: int = 256) -> Image.Image:
    """One frame as an RGB image; joints in a group are chained in index order."""
    img = Image.new("RGB", (size, size), (255, 255, 255))
    draw = ImageDraw.Draw(img)
    margin = size // 16
    scale = size - 2 * margin
    xy = margin + frame[:, :2] * scale
    # image rows grow downward
    pts = [(float(x), float(size - y)) for x, y in xy]
    r = max(1, size // 128)
    for name, sl in skeleton.group_slices().items():
        colour = GROUP_COLOURS.get(name, DEFAULT_COLOUR)
        group = pts[sl]
        if len(group) > 1:
            draw.line(group, fill=colour, width=1)
        for x, y in group:
            draw.ellipse((x - r, y - r, x + r, y + r), fill=colour)
    return img


def render_sequence(seq: PoseSequence, out_dir, size: int = 256) -> list[Path]:
    if seq.skeleton.dims < 2:
        raise DataError("rendering needs at least two coordinate dimensions")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for k, frame in enumerate(display_frames(seq)):
        path = out / f"frame_{k:04d}.png"
        draw_frame(frame, seq.skeleton, size).save(path, format="PNG")
        paths.append(path)
    return paths
