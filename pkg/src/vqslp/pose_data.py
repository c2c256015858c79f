"""Skeletal pose sequences: container types, file format, normalization and a
synthetic motion-primitive corpus used in place of licensed sign datasets.

Pose files come in two flavours selected by extension:

* ``.pose``  text: ``#``-prefixed ``key=value`` header lines, then one frame per
  line with ``J*D`` decimal coordinates in row-major (joint, dim) order.
* ``.poseb`` binary: the same header lines, terminated by ``# payload=float64-le``,
  followed by the raw little-endian float64 payload.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import (
    DataError,
    DegenerateDimensionError,
    FrameCountError,
    HeaderError,
    JointCountError,
    NonFiniteError,
)

POSE_FORMAT = "vqslp-pose"
POSE_FORMAT_VERSION = 1
TEXT_SUFFIX = ".pose"
BINARY_SUFFIX = ".poseb"
_PAYLOAD_MARKER = b"# payload=float64-le\n"

DEFAULT_LAYOUT = (("hand_left", 21), ("hand_right", 21), ("body", 9), ("face", 10))


@dataclass(frozen=True)
class SkeletonSpec:
    joint_count: int = 61
    dims: int = 3
    layout: tuple[tuple[str, int], ...] = DEFAULT_LAYOUT

    def __post_init__(self):
        if self.joint_count < 1 or self.dims < 1:
            raise ValueError("joint_count and dims must be positive")
        total = sum(size for _, size in self.layout)
        if total != self.joint_count:
            raise ValueError(f"layout covers {total} joints, expected {self.joint_count}")

    @classmethod
    def flat(cls, joint_count: int, dims: int) -> "SkeletonSpec":
        """A single-group layout, for toy skeletons with no anatomy."""
        return cls(joint_count, dims, (("joints", joint_count),))

    def group_slices(self) -> dict[str, slice]:
        out, start = {}, 0
        for name, size in self.layout:
            out[name] = slice(start, start + size)
            start += size
        return out

    @property
    def n_features(self) -> int:
        return self.joint_count * self.dims

    def layout_string(self) -> str:
        return ",".join(f"{name}:{size}" for name, size in self.layout)

    @classmethod
    def from_layout_string(cls, text: str, joint_count: int, dims: int) -> "SkeletonSpec":
        layout = []
        for item in text.split(","):
            name, _, size = item.partition(":")
            layout.append((name.strip(), int(size)))
        return cls(joint_count, dims, tuple(layout))


@dataclass(frozen=True, eq=False)
class PoseSequence:
    frames: np.ndarray  # (U, J, D)
    fps: float = 25.0
    source_id: str = ""
    skeleton: SkeletonSpec = field(default_factory=SkeletonSpec)

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 3:
            raise DataError(f"frames must have shape (U, J, D), got {frames.shape}")
        if frames.shape[0] < 1:
            raise DataError("a pose sequence needs at least one frame")
        if frames.shape[1:] != (self.skeleton.joint_count, self.skeleton.dims):
            raise JointCountError(
                f"frames have joint shape {frames.shape[1:]}, skeleton expects "
                f"{(self.skeleton.joint_count, self.skeleton.dims)}"
            )
        if not np.isfinite(frames).all():
            raise NonFiniteError("pose sequence contains non-finite coordinates")
        if not self.fps > 0:
            raise DataError("fps must be positive")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "fps", float(self.fps))

    def __len__(self) -> int:
        return self.frames.shape[0]

    def with_frames(self, frames: np.ndarray, fps: float | None = None) -> "PoseSequence":
        return PoseSequence(frames, self.fps if fps is None else fps, self.source_id, self.skeleton)


@dataclass(frozen=True, eq=False)
class NormalizationParams:
    minimum: np.ndarray  # (D,)
    maximum: np.ndarray  # (D,)

    def __post_init__(self):
        lo = np.asarray(self.minimum, dtype=np.float64).reshape(-1)
        hi = np.asarray(self.maximum, dtype=np.float64).reshape(-1)
        if lo.shape != hi.shape:
            raise ValueError("minimum and maximum must have the same length")
        for d in range(lo.size):
            if not hi[d] > lo[d]:
                raise DegenerateDimensionError(d, float(lo[d]))
        object.__setattr__(self, "minimum", lo)
        object.__setattr__(self, "maximum", hi)

    @property
    def scale(self) -> np.ndarray:
        return self.maximum - self.minimum

    def to_dict(self) -> dict:
        return {"minimum": self.minimum.tolist(), "maximum": self.maximum.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationParams":
        return cls(np.array(d["minimum"], dtype=np.float64), np.array(d["maximum"], dtype=np.float64))

    def __eq__(self, other):
        if not isinstance(other, NormalizationParams):
            return NotImplemented
        return np.array_equal(self.minimum, other.minimum) and np.array_equal(self.maximum, other.maximum)


def fit_normalization(seqs) -> NormalizationParams:
    """Global per-axis min/max over every frame of every sequence."""
    seqs = list(seqs)
    if not seqs:
        raise DataError("cannot fit normalization on zero sequences")
    lo = np.min([s.frames.min(axis=(0, 1)) for s in seqs], axis=0)
    hi = np.max([s.frames.max(axis=(0, 1)) for s in seqs], axis=0)
    return NormalizationParams(lo, hi)


def normalize(seq: PoseSequence, params: NormalizationParams | None = None):
    """Affine per-axis rescale into [0, 1].

    When ``params`` is None they are fitted on ``seq`` itself. With supplied
    params, coordinates outside the fitted range are clipped so held-out data
    still satisfies the [0, 1] contract.
    """
    if params is None:
        params = fit_normalization([seq])
    if params.minimum.size != seq.skeleton.dims:
        raise DataError(f"normalization has {params.minimum.size} dims, sequence has {seq.skeleton.dims}")
    out = (seq.frames - params.minimum) / params.scale
    np.clip(out, 0.0, 1.0, out=out)
    return seq.with_frames(out), params


def denormalize(seq: PoseSequence, params: NormalizationParams) -> PoseSequence:
    return seq.with_frames(seq.frames * params.scale + params.minimum)


def subsample(seq: PoseSequence, factor: int) -> PoseSequence:
    if not isinstance(factor, (int, np.integer)) or factor < 1:
        raise ValueError(f"subsample factor must be an integer >= 1, got {factor!r}")
    return seq.with_frames(seq.frames[::factor].copy(), fps=seq.fps / factor)


# ---------------------------------------------------------------------------
# file format


def _header_lines(seq: PoseSequence, norm: NormalizationParams | None) -> list[str]:
    sk = seq.skeleton
    lines = [
        f"# format={POSE_FORMAT}",
        f"# version={POSE_FORMAT_VERSION}",
        f"# joints={sk.joint_count}",
        f"# dims={sk.dims}",
        f"# frames={len(seq)}",
        f"# fps={float(seq.fps)!r}",
        f"# layout={sk.layout_string()}",
        f"# source_id={seq.source_id}",
    ]
    if norm is not None:
        lines.append("# norm_min=" + ",".join(repr(float(v)) for v in norm.minimum))
        lines.append("# norm_max=" + ",".join(repr(float(v)) for v in norm.maximum))
    return lines


def save_pose_file(path, seq: PoseSequence, norm: NormalizationParams | None = None) -> Path:
    path = Path(path)
    header = _header_lines(seq, norm)
    flat = seq.frames.reshape(len(seq), -1)
    if path.suffix == BINARY_SUFFIX:
        blob = ("\n".join(header) + "\n").encode() + _PAYLOAD_MARKER
        blob += flat.astype("<f8").tobytes()
        path.write_bytes(blob)
    else:
        rows = [" ".join(repr(float(v)) for v in row) for row in flat]
        path.write_text("\n".join(header + rows) + "\n")
    return path


def _parse_header(lines: list[str]) -> dict[str, str]:
    meta = {}
    for line in lines:
        body = line[1:].strip()
        if not body:
            continue
        key, sep, value = body.partition("=")
        if not sep:
            raise HeaderError(f"malformed header line: {line!r}")
        meta[key.strip()] = value
    if meta.get("format") != POSE_FORMAT:
        raise HeaderError(f"not a {POSE_FORMAT} file (format={meta.get('format')!r})")
    for key in ("joints", "dims", "frames", "fps"):
        if key not in meta:
            raise HeaderError(f"header is missing '{key}'")
    if meta.get("version", "").strip() != str(POSE_FORMAT_VERSION):
        raise HeaderError(f"unsupported pose format version {meta.get('version')}")
    return meta


def _build(meta: dict[str, str], flat: np.ndarray) -> tuple[PoseSequence, NormalizationParams | None]:
    try:
        joints, dims, frames = int(meta["joints"]), int(meta["dims"]), int(meta["frames"])
        fps = float(meta["fps"])
    except ValueError as exc:
        raise HeaderError(f"bad numeric header value: {exc}") from None
    if "layout" in meta and meta["layout"]:
        try:
            skeleton = SkeletonSpec.from_layout_string(meta["layout"], joints, dims)
        except ValueError as exc:
            raise HeaderError(str(exc)) from None
    else:
        skeleton = SkeletonSpec.flat(joints, dims)
    if flat.shape[0] != frames:
        raise FrameCountError(f"header declares {frames} frames, payload has {flat.shape[0]}")
    if not np.isfinite(flat).all():
        bad = np.argwhere(~np.isfinite(flat))[0]
        raise NonFiniteError(f"non-finite coordinate at frame {bad[0]}, column {bad[1]}")
    norm = None
    if "norm_min" in meta:
        norm = NormalizationParams(
            np.array([float(v) for v in meta["norm_min"].split(",")]),
            np.array([float(v) for v in meta["norm_max"].split(",")]),
        )
    seq = PoseSequence(flat.reshape(frames, joints, dims), fps, meta.get("source_id", ""), skeleton)
    return seq, norm


def read_pose_file(path) -> tuple[PoseSequence, NormalizationParams | None]:
    """Parse a pose file, returning the sequence and any baked normalization."""
    path = Path(path)
    raw = path.read_bytes()
    if path.suffix == BINARY_SUFFIX:
        cut = raw.find(_PAYLOAD_MARKER)
        if cut < 0:
            raise HeaderError("binary pose file has no payload marker")
        meta = _parse_header(raw[:cut].decode().splitlines())
        width = int(meta["joints"]) * int(meta["dims"])
        payload = raw[cut + len(_PAYLOAD_MARKER):]
        if len(payload) % (8 * width):
            raise JointCountError(f"payload of {len(payload)} bytes is not a whole number of {width}-wide frames")
        flat = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(-1, width)
        return _build(meta, flat)

    lines = raw.decode().splitlines()
    header = [ln for ln in lines if ln.startswith("#")]
    body = [ln for ln in lines if ln.strip() and not ln.startswith("#")]
    meta = _parse_header(header)
    width = int(meta["joints"]) * int(meta["dims"])
    rows = []
    for k, line in enumerate(body):
        try:
            values = [float(v) for v in line.split()]
        except ValueError:
            raise HeaderError(f"frame {k}: unparseable coordinate") from None
        if len(values) != width:
            raise JointCountError(f"frame {k} has {len(values)} values, expected {width}")
        rows.append(values)
    flat = np.array(rows, dtype=np.float64).reshape(-1, width)
    return _build(meta, flat)


def load_pose_file(path) -> PoseSequence:
    return read_pose_file(path)[0]


# ---------------------------------------------------------------------------
# synthetic corpus

DISTRACTORS = ("the", "a", "of", "to", "and", "is")


@dataclass
class SyntheticConfig:
    n_primitives: int = 20
    primitive_length: int = 16
    n_sentences: int = 500
    min_sentence_len: int = 3
    max_sentence_len: int = 8
    noise_scale: float = 0.002
    crossfade: int = 1
    control_points: int = 4
    motion_amplitude: float = 0.12
    distractor_rate: float = 0.2
    dev_fraction: float = 0.1
    test_fraction: float = 0.1
    joint_count: int = 61
    dims: int = 3
    fps: float = 25.0
    seed: int = 7

    def validate(self):
        if self.n_primitives < 2:
            raise ValueError("need at least 2 primitives")
        if self.primitive_length < 2:
            raise ValueError("primitive_length must be >= 2 frames")
        if not 1 <= self.min_sentence_len <= self.max_sentence_len:
            raise ValueError("need 1 <= min_sentence_len <= max_sentence_len")
        if self.n_sentences < 1:
            raise ValueError("n_sentences must be positive")
        if self.noise_scale < 0 or self.crossfade < 0:
            raise ValueError("noise_scale and crossfade must be nonnegative")
        if 2 * self.crossfade > self.primitive_length:
            raise ValueError("crossfade wider than half a primitive")
        if self.control_points < 2:
            raise ValueError("control_points must be >= 2")
        if self.dev_fraction + self.test_fraction >= 1:
            raise ValueError("dev + test fractions must leave a training split")

    def skeleton(self) -> SkeletonSpec:
        if self.joint_count == 61:
            return SkeletonSpec(61, self.dims)
        return SkeletonSpec.flat(self.joint_count, self.dims)


@dataclass(eq=False)
class CorpusRecord:
    record_id: str
    words: list[str]
    primitive_ids: list[int]
    pose: PoseSequence
    split: str = "train"

    def frame_labels(self, primitive_length: int) -> np.ndarray:
        """Primitive ID owning each frame slot."""
        return np.repeat(np.asarray(self.primitive_ids, dtype=np.int64), primitive_length)


@dataclass(eq=False)
class SyntheticCorpus:
    records: list[CorpusRecord]
    primitive_bank: np.ndarray  # (G, L, J, D)
    config: SyntheticConfig
    seed: int

    def split(self, name: str) -> list[CorpusRecord]:
        return [r for r in self.records if r.split == name]


def primitive_word(g: int) -> str:
    return f"w{g}"


def _template_pose(skeleton: SkeletonSpec, rng: np.random.Generator) -> np.ndarray:
    """Rest pose: each layout group is a small cloud around its own anchor."""
    J, D = skeleton.joint_count, skeleton.dims
    pose = np.empty((J, D))
    for k, (_, sl) in enumerate(skeleton.group_slices().items()):
        anchor = rng.uniform(0.3, 0.7, size=D)
        pose[sl] = anchor + rng.normal(0.0, 0.05, size=(sl.stop - sl.start, D))
    return pose


def _primitive_trajectory(template, cfg: SyntheticConfig, rng) -> np.ndarray:
    L, K = cfg.primitive_length, cfg.control_points
    knots = np.linspace(0.0, L - 1, K)
    controls = template[None] + rng.uniform(-cfg.motion_amplitude, cfg.motion_amplitude, size=(K,) + template.shape)
    if K < 4:
        # too few points for not-a-knot; clamp end slopes instead
        spline = CubicSpline(knots, controls, axis=0, bc_type="clamped")
    else:
        spline = CubicSpline(knots, controls, axis=0)
    return spline(np.arange(L, dtype=np.float64))


def concatenate_with_crossfade(blocks: list[np.ndarray], crossfade: int) -> np.ndarray:
    """Concatenate trajectories, replacing ``crossfade`` frames each side of every
    junction by a linear blend of the outgoing and incoming motions."""
    out = np.concatenate(blocks, axis=0)
    if crossfade == 0 or len(blocks) < 2:
        return out
    c = crossfade
    starts = np.cumsum([0] + [len(b) for b in blocks])
    for k in range(1, len(blocks)):
        b = starts[k]
        prev, nxt = blocks[k - 1], blocks[k]
        for i in range(b - c, b + c):
            lam = (i - (b - c) + 1) / (2 * c + 1)
            a = prev[i - starts[k - 1]] if i < b else prev[-1]
            n = nxt[i - b] if i >= b else nxt[0]
            out[i] = (1.0 - lam) * a + lam * n
    return out


def generate_synthetic_corpus(cfg: SyntheticConfig) -> SyntheticCorpus:
    cfg.validate()
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    skeleton = cfg.skeleton()
    template = _template_pose(skeleton, rng)
    bank = np.stack([_primitive_trajectory(template, cfg, rng) for _ in range(cfg.n_primitives)])

    n = cfg.n_sentences
    order = rng.permutation(n)
    n_test = int(round(cfg.test_fraction * n))
    n_dev = int(round(cfg.dev_fraction * n))
    splits = np.array(["train"] * n, dtype=object)
    splits[order[:n_test]] = "test"
    splits[order[n_test:n_test + n_dev]] = "dev"

    records = []
    for i in range(n):
        length = int(rng.integers(cfg.min_sentence_len, cfg.max_sentence_len + 1))
        prims = [int(g) for g in rng.integers(0, cfg.n_primitives, size=length)]
        words = []
        for g in prims:
            if rng.random() < cfg.distractor_rate:
                words.append(DISTRACTORS[int(rng.integers(len(DISTRACTORS)))])
            words.append(primitive_word(g))
        frames = concatenate_with_crossfade([bank[g] for g in prims], cfg.crossfade)
        if cfg.noise_scale > 0:
            frames = frames + rng.uniform(-cfg.noise_scale, cfg.noise_scale, size=frames.shape)
        rid = f"s{i:05d}"
        pose = PoseSequence(frames, cfg.fps, rid, skeleton)
        records.append(CorpusRecord(rid, words, prims, pose, str(splits[i])))
    return SyntheticCorpus(records, bank, cfg, cfg.seed)


def primitive_coverage(corpus: SyntheticCorpus) -> np.ndarray:
    counts = np.zeros(corpus.config.n_primitives, dtype=np.int64)
    for r in corpus.records:
        np.add.at(counts, r.primitive_ids, 1)
    return counts


# ---------------------------------------------------------------------------
# corpus on disk


def write_corpus(corpus: SyntheticCorpus, out_dir, binary: bool = False) -> Path:
    out = Path(out_dir)
    (out / "poses").mkdir(parents=True, exist_ok=True)
    (out / "primitives").mkdir(exist_ok=True)
    suffix = BINARY_SUFFIX if binary else TEXT_SUFFIX
    skeleton = corpus.records[0].pose.skeleton if corpus.records else corpus.config.skeleton()
    for g, traj in enumerate(corpus.primitive_bank):
        save_pose_file(out / "primitives" / f"g{g:03d}{BINARY_SUFFIX}",
                       PoseSequence(traj, corpus.config.fps, f"g{g:03d}", skeleton))
    lines = []
    for r in corpus.records:
        rel = f"poses/{r.record_id}{suffix}"
        save_pose_file(out / rel, r.pose)
        lines.append(json.dumps({
            "id": r.record_id,
            "sentence": " ".join(r.words),
            "primitives": r.primitive_ids,
            "pose": rel,
            "split": r.split,
        }, sort_keys=True))
    (out / "manifest.jsonl").write_text("\n".join(lines) + "\n")
    (out / "corpus.json").write_text(json.dumps({"config": asdict(corpus.config), "seed": corpus.seed},
                                                indent=2, sort_keys=True) + "\n")
    return out


def read_manifest(corpus_dir) -> list[dict]:
    path = Path(corpus_dir) / "manifest.jsonl"
    if not path.exists():
        raise DataError(f"no manifest at {path}")
    out = []
    for k, line in enumerate(path.read_text().splitlines()):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"manifest line {k + 1}: {exc}") from None
        for key in ("id", "sentence", "pose"):
            if key not in rec:
                raise DataError(f"manifest line {k + 1} lacks '{key}'")
        out.append(rec)
    return out


def read_corpus(corpus_dir) -> SyntheticCorpus:
    root = Path(corpus_dir)
    meta = json.loads((root / "corpus.json").read_text())
    cfg = SyntheticConfig(**meta["config"])
    records = []
    for rec in read_manifest(root):
        pose = load_pose_file(root / rec["pose"])
        records.append(CorpusRecord(rec["id"], rec["sentence"].split(), list(rec.get("primitives", [])),
                                    pose, rec.get("split", "train")))
    prim_files = sorted((root / "primitives").glob(f"*{BINARY_SUFFIX}"))
    bank = np.stack([load_pose_file(p).frames for p in prim_files]) if prim_files else np.empty((0,))
    return SyntheticCorpus(records, bank, cfg, meta["seed"])


def window_count(n_frames: int, window: int) -> int:
    return math.floor(n_frames / window)
