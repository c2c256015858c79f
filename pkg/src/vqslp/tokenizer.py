"""Pose sequence <-> codebook token sequence, using a frozen codebook artifact."""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DataError,
    EmptySequenceError,
    NormalizationMismatchError,
    SequenceTooShortError,
    TokenRangeError,
)
from .pose_data import PoseSequence

RANGE_TOLERANCE = 1e-6
CACHE_ENV = "VQSLP_CACHE_DIR"


@dataclass(frozen=True)
class TokenSequence:
    tokens: tuple[int, ...]
    source_len: int
    dropped_frames: int = 0
    source_id: str = ""

    def __len__(self):
        return len(self.tokens)

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(int(t) for t in self.tokens))


def build_token_pose_table(artifact) -> np.ndarray:
    """Decoder output of every entry, clamped to [0, 1]: (N, U_cb, J, D).

    When ``$VQSLP_CACHE_DIR`` is set the table is also kept there, keyed by
    the artifact fingerprint, so a changed artifact never reuses a stale table.
    """
    cache_dir = os.environ.get(CACHE_ENV)
    path = None
    if cache_dir:
        path = Path(cache_dir) / f"token_table_{artifact.fingerprint}.npy"
        if path.exists():
            return np.load(path, allow_pickle=False)
    table = np.clip(artifact.decode_tokens(np.arange(artifact.n_tokens)), 0.0, 1.0)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        np.save(path, table, allow_pickle=False)
    return table


def tokenize(seq: PoseSequence, artifact) -> TokenSequence:
    """Split a normalized sequence into consecutive windows and map each to its nearest entry.

    Trailing frames that do not fill a window are dropped.
    """
    W = artifact.window
    U = len(seq)
    if U < W:
        raise SequenceTooShortError(f"sequence of {U} frames is shorter than the {W}-frame window")
    if seq.skeleton.joint_count != artifact.skeleton.joint_count or seq.skeleton.dims != artifact.skeleton.dims:
        raise DataError("sequence skeleton does not match the artifact")
    lo, hi = float(seq.frames.min()), float(seq.frames.max())
    if lo < -RANGE_TOLERANCE or hi > 1 + RANGE_TOLERANCE:
        raise NormalizationMismatchError(
            f"coordinates span [{lo:.6g}, {hi:.6g}]; normalize with the artifact's params first")
    M = U // W
    windows = seq.frames[: M * W].reshape(M, W, *seq.frames.shape[1:])
    z = artifact.encode_windows(windows)
    tokens = artifact.quantize(z)
    return TokenSequence(tuple(int(t) for t in tokens), U, U - M * W, seq.source_id)


def detokenize(tokens: TokenSequence, artifact, fps: float = 25.0, source_id: str | None = None) -> PoseSequence:
    ids = tokens.tokens if isinstance(tokens, TokenSequence) else tuple(int(t) for t in tokens)
    if not ids:
        raise EmptySequenceError("cannot detokenize an empty token sequence")
    N = artifact.n_tokens
    for pos, t in enumerate(ids):
        if not 0 <= t < N:
            raise TokenRangeError(pos, t, N)
    table = artifact.token_pose_table()
    frames = table[np.asarray(ids)].reshape(-1, *table.shape[2:])
    sid = source_id if source_id is not None else getattr(tokens, "source_id", "")
    return PoseSequence(frames.copy(), fps, sid, artifact.skeleton)


def token_boundaries(n_tokens: int, window: int) -> list[int]:
    """Frame indices where one token block ends and the next begins."""
    return [k * window for k in range(1, n_tokens)]


# ---------------------------------------------------------------------------
# token files: "<source_id> <U> <t1> <t2> ..." per line


def write_token_file(path, seqs) -> Path:
    path = Path(path)
    lines = []
    for ts in seqs:
        if not ts.source_id or any(c.isspace() for c in ts.source_id):
            raise DataError(f"token sequence needs a whitespace-free source id, got {ts.source_id!r}")
        lines.append(" ".join([ts.source_id, str(ts.source_len), *map(str, ts.tokens)]))
    path.write_text("\n".join(lines) + ("\n" if lines else ""))
    return path


def read_token_file(path, window: int | None = None) -> list[TokenSequence]:
    out = []
    for k, line in enumerate(Path(path).read_text().splitlines()):
        parts = line.split()
        if not parts:
            continue
        if len(parts) < 2:
            raise DataError(f"{path}:{k + 1}: expected '<id> <U> tokens...'")
        try:
            U = int(parts[1])
            toks = tuple(int(t) for t in parts[2:])
        except ValueError:
            raise DataError(f"{path}:{k + 1}: non-integer field") from None
        dropped = U - len(toks) * window if window else 0
        out.append(TokenSequence(toks, U, dropped, parts[0]))
    return out
