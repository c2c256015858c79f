"""On-disk codebook artifact: config manifest, named parameter blobs, normalization.

Layout::

    VERSION               "vqslp-codebook <major>.<minor>"
    config.json           codebook config, skeleton, seed
    normalization.json    per-axis min/max used for every sequence
    history.json          per-epoch training log
    params/<name>.npy     one array per state-dict tensor
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from pathlib import Path

import numpy as np
import torch

from ..errors import ArtifactMismatchError, DataError
from ..pose_data import NormalizationParams, SkeletonSpec
from .config import CodebookConfig, ReplacementPolicy
from .model import CodebookModel, nearest_entry

ARTIFACT_KIND = "vqslp-codebook"
ARTIFACT_VERSION = "1.0"


def check_version(text: str, kind: str, supported: str) -> str:
    parts = text.strip().split()
    if len(parts) != 2 or parts[0] != kind:
        raise ArtifactMismatchError(f"not a {kind} artifact (VERSION={text.strip()!r})")
    major = parts[1].split(".")[0]
    if major != supported.split(".")[0]:
        raise ArtifactMismatchError(f"unsupported {kind} major version {parts[1]} (supported {supported})")
    return parts[1]


def save_state(state: dict[str, torch.Tensor], params_dir: Path):
    params_dir.mkdir(parents=True, exist_ok=True)
    for name, tensor in state.items():
        np.save(params_dir / f"{name}.npy", tensor.detach().cpu().numpy(), allow_pickle=False)


def load_state(params_dir: Path) -> dict[str, torch.Tensor]:
    if not params_dir.is_dir():
        raise DataError(f"missing parameter directory {params_dir}")
    return {p.name[:-4]: torch.from_numpy(np.load(p, allow_pickle=False)) for p in sorted(params_dir.glob("*.npy"))}


def state_fingerprint(state: dict[str, torch.Tensor], extra: str = "") -> str:
    h = hashlib.sha256(extra.encode())
    for name in sorted(state):
        arr = state[name].detach().cpu().numpy()
        h.update(name.encode())
        h.update(str(arr.shape).encode())
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()[:16]


def config_from_dict(d: dict) -> CodebookConfig:
    d = dict(d)
    policy = ReplacementPolicy(**d.pop("replacement", {}))
    return CodebookConfig(replacement=policy, **d)


class CodebookArtifact:
    """A frozen, trained codebook model together with the data normalization it expects."""

    def __init__(self, config: CodebookConfig, skeleton: SkeletonSpec, normalization: NormalizationParams,
                 model: CodebookModel, seed: int, history: list[dict] | None = None,
                 version: str = ARTIFACT_VERSION):
        self.config = config
        self.skeleton = skeleton
        self.normalization = normalization
        self.model = model.eval()
        self.seed = seed
        self.history = history or []
        self.version = version
        self._table_cache: dict[str, np.ndarray] = {}

    @property
    def n_tokens(self) -> int:
        return self.config.vocab_size

    @property
    def window(self) -> int:
        return self.config.window

    @property
    def fingerprint(self) -> str:
        return state_fingerprint(self.model.state_dict(), f"{ARTIFACT_KIND} {self.version}")

    # --- inference -------------------------------------------------------

    @torch.no_grad()
    def encode_windows(self, windows: np.ndarray) -> torch.Tensor:
        """(B, U_cb, J, D) normalized frames -> (B, U_cb, H) encoder output."""
        windows = np.asarray(windows)
        if windows.ndim != 4 or windows.shape[1] != self.window:
            raise ValueError(f"windows must be (B, {self.window}, J, D), got {windows.shape}")
        dtype = next(self.model.parameters()).dtype
        x = torch.from_numpy(windows.reshape(windows.shape[0], self.window, -1)).to(dtype)
        self.model.eval()
        return self.model.encode(x)

    @torch.no_grad()
    def quantize(self, z: torch.Tensor) -> np.ndarray:
        idx, _ = nearest_entry(z.reshape(z.shape[0], -1), self.model.codebook.entries)
        return idx.numpy()

    @torch.no_grad()
    def decode_tokens(self, tokens) -> np.ndarray:
        """Decoder output for each token index: (M, U_cb, J, D), unclamped."""
        idx = torch.as_tensor(np.asarray(tokens, dtype=np.int64))
        self.model.eval()
        poses, _ = self.model.decode(self.model.codebook.entries[idx])
        J, D = self.skeleton.joint_count, self.skeleton.dims
        return poses.reshape(len(idx), self.window, J, D).double().numpy()

    def token_pose_table(self) -> np.ndarray:
        key = self.fingerprint
        if key not in self._table_cache:
            from ..tokenizer import build_token_pose_table

            self._table_cache.clear()
            self._table_cache[key] = build_token_pose_table(self)
        return self._table_cache[key]

    # --- persistence -----------------------------------------------------

    def save(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "VERSION").write_text(f"{ARTIFACT_KIND} {self.version}\n")
        manifest = {
            "codebook": dataclasses.asdict(self.config),
            "skeleton": {"joint_count": self.skeleton.joint_count, "dims": self.skeleton.dims,
                         "layout": self.skeleton.layout_string()},
            "seed": self.seed,
            "fingerprint": self.fingerprint,
        }
        (out / "config.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        (out / "normalization.json").write_text(json.dumps(self.normalization.to_dict(), indent=2) + "\n")
        (out / "history.json").write_text(json.dumps(self.history, indent=1) + "\n")
        save_state(self.model.state_dict(), out / "params")
        return out

    @classmethod
    def load(cls, path) -> "CodebookArtifact":
        root = Path(path)
        if not (root / "VERSION").exists():
            raise DataError(f"{root} is not a codebook artifact (no VERSION file)")
        version = check_version((root / "VERSION").read_text(), ARTIFACT_KIND, ARTIFACT_VERSION)
        manifest = json.loads((root / "config.json").read_text())
        cfg = config_from_dict(manifest["codebook"])
        sk = manifest["skeleton"]
        skeleton = SkeletonSpec.from_layout_string(sk["layout"], sk["joint_count"], sk["dims"])
        norm = NormalizationParams.from_dict(json.loads((root / "normalization.json").read_text()))
        with torch.random.fork_rng():
            model = CodebookModel(skeleton.n_features, cfg)
        state = load_state(root / "params")
        dtype = state["codebook.entries"].dtype
        model.to(dtype)
        model.load_state_dict(state)
        history = json.loads((root / "history.json").read_text()) if (root / "history.json").exists() else []
        art = cls(cfg, skeleton, norm, model, manifest.get("seed", 0), history, version)
        art.token_pose_table()
        return art
