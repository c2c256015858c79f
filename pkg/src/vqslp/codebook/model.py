"""Encoder / NSVQ / counter-decoder network that learns the pose codebook."""

from __future__ import annotations

import math

import torch
from torch import nn

from .config import CodebookConfig


def sinusoid_table(length: int, dim: int, dtype=torch.float32) -> torch.Tensor:
    """Fixed sine/cosine positional table of shape (length, dim); works for odd ``dim``."""
    pos = torch.arange(length, dtype=torch.float64)[:, None]
    i = torch.arange(dim, dtype=torch.float64)[None, :]
    rates = torch.exp(-math.log(10000.0) * (2 * torch.div(i, 2, rounding_mode="floor")) / dim)
    angles = pos * rates
    table = torch.where(i.long() % 2 == 0, torch.sin(angles), torch.cos(angles))
    return table.to(dtype)


def counter_track(window: int, dtype=torch.float32) -> torch.Tensor:
    """Progress counter (u+1)/window for u = 0..window-1."""
    return torch.arange(1, window + 1, dtype=dtype) / window


def xavier_init(module: nn.Module):
    for name, p in module.named_parameters():
        if p.dim() > 1:
            nn.init.xavier_uniform_(p)
        elif name.endswith("bias"):
            nn.init.zeros_(p)


class PoseEncoder(nn.Module):
    """Positional encoding in pose space, per-frame linear embedding, then
    pre-norm self-attention over the time axis."""

    def __init__(self, n_features: int, cfg: CodebookConfig):
        super().__init__()
        self.embed = nn.Linear(n_features, cfg.embed)
        layer = nn.TransformerEncoderLayer(cfg.embed, cfg.heads, cfg.ff_size, cfg.dropout,
                                           activation="relu", batch_first=True, norm_first=True)
        self.blocks = nn.TransformerEncoder(layer, cfg.layers, norm=nn.LayerNorm(cfg.embed),
                                            enable_nested_tensor=False)
        self.register_buffer("pe", sinusoid_table(cfg.window, n_features), persistent=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x: (B, U, J*D)
        x = x + self.pe[: x.shape[1]].to(x.dtype)
        return self.blocks(self.embed(x))


class CounterDecoder(nn.Module):
    """Non-autoregressive decoder: counter values are the queries, the
    quantized embedding is the cross-attention memory."""

    def __init__(self, n_features: int, cfg: CodebookConfig):
        super().__init__()
        self.embed = nn.Linear(1, cfg.embed)
        layer = nn.TransformerDecoderLayer(cfg.embed, cfg.heads, cfg.ff_size, cfg.dropout,
                                           activation="relu", batch_first=True, norm_first=True)
        self.blocks = nn.TransformerDecoder(layer, cfg.layers, norm=nn.LayerNorm(cfg.embed))
        self.pose_head = nn.Linear(cfg.embed, n_features)
        self.counter_head = nn.Linear(cfg.embed, 1)
        self.register_buffer("pe", sinusoid_table(cfg.window, 1), persistent=False)

    def forward(self, memory: torch.Tensor, counters: torch.Tensor):
        # memory: (B, U, H); counters: (U,)
        B, U = memory.shape[0], counters.shape[0]
        q = counters.to(memory.dtype)[None, :, None] + self.pe[:U].to(memory.dtype)[None]
        h = self.blocks(self.embed(q).expand(B, U, -1).contiguous(), memory)
        return self.pose_head(h), self.counter_head(h).squeeze(-1)


def nearest_entry(flat_z: torch.Tensor, entries: torch.Tensor, chunk: int = 256) -> tuple[torch.Tensor, torch.Tensor]:
    """Index of the entry minimizing squared Euclidean distance (lowest index on ties).

    Distances are formed from explicit differences, not the expanded
    ``|z|^2 - 2 z.t + |t|^2`` form, so near ties resolve the same way a plain
    scan would.
    """
    flat_z = flat_z.detach()
    entries = entries.detach()
    idx, dist = [], []
    for s in range(0, flat_z.shape[0], chunk):
        d = ((flat_z[s:s + chunk, None, :] - entries[None]) ** 2).sum(-1)
        m, i = d.min(dim=1)
        idx.append(i)
        dist.append(m)
    if not idx:
        return torch.empty(0, dtype=torch.long), torch.empty(0, dtype=flat_z.dtype)
    return torch.cat(idx), torch.cat(dist)


def nsvq(z: torch.Tensor, entries: torch.Tensor, noise: torch.Tensor | None = None,
         generator: torch.Generator | None = None):
    """Noise-substitution quantization.

    Returns ``z + |z - t_i| * V / |V|`` with ``t_i`` the nearest entry and
    ``V`` standard normal, plus the selected indices. Gradients reach the
    encoder through ``z`` and the selected entries through the error norm.
    """
    B = z.shape[0]
    flat = z.reshape(B, -1)
    idx, _ = nearest_entry(flat, entries)
    err = torch.linalg.vector_norm(flat - entries[idx], dim=1)
    if noise is None:
        noise = torch.randn(flat.shape, dtype=flat.dtype, device=flat.device, generator=generator)
    else:
        noise = noise.reshape(B, -1).to(flat.dtype)
    vnorm = torch.linalg.vector_norm(noise, dim=1)
    while bool((vnorm == 0).any()):
        bad = vnorm == 0
        noise[bad] = torch.randn((int(bad.sum()), flat.shape[1]), dtype=flat.dtype, generator=generator)
        vnorm = torch.linalg.vector_norm(noise, dim=1)
    z_hat = flat + (err / vnorm)[:, None] * noise
    return z_hat.reshape(z.shape), idx


class Codebook(nn.Module):
    """N flattened token vectors plus per-entry selection counts for the current tracking window."""

    def __init__(self, n_entries: int, dim: int, init_scale: float = 1.0):
        super().__init__()
        self.entries = nn.Parameter(torch.randn(n_entries, dim) * init_scale)
        self.register_buffer("usage", torch.zeros(n_entries, dtype=torch.long), persistent=False)

    def __len__(self):
        return self.entries.shape[0]

    def record(self, idx: torch.Tensor):
        self.usage += torch.bincount(idx, minlength=len(self))

    def reset_usage(self):
        self.usage.zero_()

    def usage_fraction(self) -> torch.Tensor:
        total = int(self.usage.sum())
        if total == 0:
            return torch.zeros(len(self), dtype=torch.float64)
        return self.usage.double() / total


class CodebookModel(nn.Module):
    def __init__(self, n_features: int, cfg: CodebookConfig):
        super().__init__()
        self.cfg = cfg
        self.n_features = n_features
        self.encoder = PoseEncoder(n_features, cfg)
        self.codebook = Codebook(cfg.vocab_size, cfg.token_dim, cfg.init_scale)
        self.decoder = CounterDecoder(n_features, cfg)
        xavier_init(self.encoder)
        xavier_init(self.decoder)
        self.register_buffer("counters", counter_track(cfg.window), persistent=False)
        # per-feature data statistics; the network works on standardized poses
        self.register_buffer("pose_mean", torch.zeros(n_features))
        self.register_buffer("pose_scale", torch.ones(n_features))

    def set_pose_stats(self, windows: torch.Tensor):
        flat = windows.reshape(-1, self.n_features)
        self.pose_mean.copy_(flat.mean(0))
        self.pose_scale.copy_(flat.std(0).clamp(min=1e-4) if flat.shape[0] > 1 else torch.ones(self.n_features))

    def _check(self, x: torch.Tensor):
        if x.dim() != 3 or x.shape[1] != self.cfg.window or x.shape[2] != self.n_features:
            raise ValueError(f"expected windows of shape (B, {self.cfg.window}, {self.n_features}), got {tuple(x.shape)}")

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        self._check(x)
        return self.encoder((x - self.pose_mean.to(x.dtype)) / self.pose_scale.to(x.dtype))

    def quantize(self, z: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        idx, _ = nearest_entry(z.reshape(z.shape[0], -1), self.codebook.entries)
        return idx, self.codebook.entries[idx].reshape(z.shape)

    def decode(self, z_hat: torch.Tensor):
        if z_hat.dim() == 2:
            z_hat = z_hat.reshape(z_hat.shape[0], self.cfg.window, self.cfg.embed)
        if z_hat.shape[1:] != (self.cfg.window, self.cfg.embed):
            raise ValueError(f"quantized embedding must be ({self.cfg.window}, {self.cfg.embed}), got {tuple(z_hat.shape[1:])}")
        poses, counters = self.decoder(z_hat, self.counters.to(z_hat.dtype))
        return poses * self.pose_scale.to(poses.dtype) + self.pose_mean.to(poses.dtype), counters

    def forward(self, x: torch.Tensor, noise: torch.Tensor | None = None):
        z = self.encode(x)
        z_hat, idx = nsvq(z, self.codebook.entries, noise)
        poses, counters = self.decode(z_hat)
        return {"z": z, "z_hat": z_hat, "idx": idx, "poses": poses, "counters": counters}
