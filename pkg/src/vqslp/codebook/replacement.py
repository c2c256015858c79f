from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import torch

from .config import ReplacementPolicy
from .model import Codebook

log = logging.getLogger(__name__)


@dataclass
class ReplacementReport:
    # (dead index, source kind, source index); kind is "entry" or "z"
    replaced: list[tuple[int, str, int]] = field(default_factory=list)
    skipped: bool = False
    message: str = ""

    def __len__(self):
        return len(self.replaced)


class EncoderBuffer:
    """Ring buffer of recent flattened encoder outputs."""

    def __init__(self, capacity: int, dim: int):
        self.data = torch.zeros(capacity, dim)
        self.capacity = capacity
        self.count = 0
        self._pos = 0

    def push(self, flat_z: torch.Tensor):
        flat_z = flat_z.detach().to(self.data.dtype)
        if flat_z.shape[0] >= self.capacity:
            self.data.copy_(flat_z[-self.capacity:])
            self.count, self._pos = self.capacity, 0
            return
        n = flat_z.shape[0]
        end = self._pos + n
        if end <= self.capacity:
            self.data[self._pos:end] = flat_z
        else:
            k = self.capacity - self._pos
            self.data[self._pos:] = flat_z[:k]
            self.data[: n - k] = flat_z[k:]
        self._pos = end % self.capacity
        self.count = min(self.capacity, self.count + n)

    def contents(self) -> torch.Tensor:
        return self.data[: self.count]


@torch.no_grad()
def replace_dead_entries(cb: Codebook, policy: ReplacementPolicy, recent_z, rng: np.random.Generator,
                         reset: bool = True) -> ReplacementReport:
    """Overwrite entries whose usage fraction is below the dead threshold.

    ``recent_z`` is a tensor (or :class:`EncoderBuffer`) of flattened encoder
    outputs, used in ``encoder-sample`` mode. Usage counters are reset unless
    ``reset`` is False.
    """
    if isinstance(recent_z, EncoderBuffer):
        recent_z = recent_z.contents()
    n = len(cb)
    frac = cb.usage_fraction().numpy()
    report = ReplacementReport()
    if cb.usage.sum() == 0:
        report.skipped, report.message = True, "no usage recorded in this window"
    else:
        dead = np.flatnonzero(frac < policy.dead_threshold)
        if dead.size:
            if policy.mode == "active-plus-noise":
                active = np.flatnonzero(frac > policy.resolved_active_threshold(n))
                if active.size == 0:
                    report.skipped, report.message = True, "no active entries to copy from"
                else:
                    scale = policy.noise_scale
                    if scale is None:
                        scale = 0.01 * float(torch.linalg.vector_norm(cb.entries, dim=1).mean())
                    src = rng.choice(active, size=dead.size, replace=True)
                    noise = torch.from_numpy(rng.standard_normal((dead.size, cb.entries.shape[1])))
                    cb.entries[torch.from_numpy(dead)] = cb.entries[torch.from_numpy(src)] + scale * noise.to(cb.entries.dtype)
                    report.replaced = [(int(d), "entry", int(s)) for d, s in zip(dead, src)]
            else:
                pool = recent_z.shape[0] if recent_z is not None else 0
                if pool == 0:
                    report.skipped, report.message = True, "encoder buffer is empty"
                else:
                    src = rng.choice(pool, size=dead.size, replace=dead.size > pool)
                    cb.entries[torch.from_numpy(dead)] = recent_z[torch.from_numpy(src)].to(cb.entries.dtype)
                    report.replaced = [(int(d), "z", int(s)) for d, s in zip(dead, src)]
    if report.skipped:
        log.warning("codebook replacement skipped: %s", report.message)
    if reset:
        cb.reset_usage()
    return report
