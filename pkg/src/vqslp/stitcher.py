"""Smoothing of token-boundary discontinuities in detokenized pose sequences.

Two passes: a linear blend around every boundary, then a per-channel
interpolating (or smoothing) spline that is resampled uniformly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import splev, splrep

from .errors import SequenceTooShortError, StitchConfigError
from .pose_data import PoseSequence


@dataclass
class StitchConfig:
    blend_width: int = 2
    spline_order: int = 3
    smoothing: float = 0.0

    def validate(self):
        if self.blend_width < 1:
            raise StitchConfigError(f"blend_width must be >= 1, got {self.blend_width}")
        if not 2 <= self.spline_order <= 5:
            raise StitchConfigError(f"spline_order must be in [2, 5], got {self.spline_order}")
        if self.smoothing < 0:
            raise StitchConfigError(f"smoothing must be nonnegative, got {self.smoothing}")
        return self


def _check_boundaries(boundaries, n_frames: int, w: int) -> list[int]:
    bs = sorted(int(b) for b in boundaries)
    if len(set(bs)) != len(bs):
        raise StitchConfigError("duplicate boundary")
    for b in bs:
        if not 0 < b < n_frames:
            raise StitchConfigError(f"boundary {b} outside (0, {n_frames})")
    if bs and (bs[0] - w - 1 < 0 or bs[-1] + w > n_frames - 1):
        raise StitchConfigError(f"blend width {w} reaches past the sequence ends")
    gaps = np.diff(bs)
    if gaps.size and int(gaps.min()) <= 2 * w:
        raise StitchConfigError(
            f"blend width {w} needs more than {2 * w} frames between boundaries, got {int(gaps.min())}")
    return bs


def linear_stitch(seq: PoseSequence, boundaries, config: StitchConfig | None = None) -> PoseSequence:
    """Replace frames [b-w, b+w) at each boundary b by a linear blend between
    the untouched neighbours seq[b-w-1] and seq[b+w]."""
    cfg = (config or StitchConfig()).validate()
    w = cfg.blend_width
    bs = _check_boundaries(boundaries, len(seq), w)
    src = seq.frames
    out = src.copy()
    span = 2 * w + 1
    for b in bs:
        lo, hi = b - w - 1, b + w
        p, q = src[lo], src[hi]
        for i in range(b - w, b + w):
            t = (i - lo) / span
            out[i] = p + t * (q - p)
    return seq.with_frames(out)


def spline_resample(seq: PoseSequence, target_len: int, config: StitchConfig | None = None) -> PoseSequence:
    """Fit an order-k spline to every coordinate over the frame index and
    sample it at ``target_len`` evenly spaced points spanning the same range."""
    cfg = (config or StitchConfig()).validate()
    k = cfg.spline_order
    U = len(seq)
    if U <= k:
        raise SequenceTooShortError(f"a degree-{k} spline needs more than {k} frames, got {U}")
    if target_len < 1:
        raise ValueError(f"target_len must be positive, got {target_len}")
    flat = seq.frames.reshape(U, -1)
    x = np.arange(U, dtype=np.float64)
    xs = np.linspace(0.0, U - 1.0, target_len)
    out = np.empty((target_len, flat.shape[1]))
    for c in range(flat.shape[1]):
        tck = splrep(x, flat[:, c], k=k, s=cfg.smoothing)
        out[:, c] = splev(xs, tck)
    return PoseSequence(out.reshape(target_len, *seq.frames.shape[1:]), seq.fps, seq.source_id, seq.skeleton)


def apply(seq: PoseSequence, boundaries, config: StitchConfig | None = None, clamp: bool = True) -> PoseSequence:
    """Linear stitch, then spline resample back to the original length."""
    cfg = (config or StitchConfig()).validate()
    stitched = linear_stitch(seq, boundaries, cfg) if len(boundaries) else seq
    out = spline_resample(stitched, len(seq), cfg)
    if clamp:
        out = out.with_frames(np.clip(out.frames, 0.0, 1.0))
    return out


def boundary_jerk(seq: PoseSequence, boundaries) -> float:
    """Largest mean joint displacement across any boundary b (frames b-1 -> b)."""
    if not len(boundaries):
        return 0.0
    f = seq.frames
    return max(float(np.linalg.norm(f[b] - f[b - 1], axis=-1).mean()) for b in boundaries)
