from __future__ import annotations

from dataclasses import dataclass, field

REPLACEMENT_MODES = ("active-plus-noise", "encoder-sample")


@dataclass
class ReplacementPolicy:
    """When and how dead codebook entries get overwritten.

    ``active_threshold`` and ``noise_scale`` left as None resolve at run time to
    ``max(1/N, dead_threshold)`` and ``0.01 * mean entry norm``. The replacement interval starts at
    ``interval_epochs`` and is multiplied by ``interval_growth`` every
    ``growth_every`` epochs; replacement stops for good once the learning rate
    drops below ``stop_lr``.
    """

    enabled: bool = True
    mode: str = "encoder-sample"
    dead_threshold: float = 0.001
    active_threshold: float | None = None
    noise_scale: float | None = None
    interval_epochs: int = 1
    interval_growth: int = 10
    growth_every: int = 50
    stop_lr: float = 1e-6
    buffer_size: int = 4096

    def validate(self, vocab_size: int):
        if self.mode not in REPLACEMENT_MODES:
            raise ValueError(f"unknown replacement mode {self.mode!r}; expected one of {REPLACEMENT_MODES}")
        if not 0 <= self.dead_threshold <= self.resolved_active_threshold(vocab_size):
            raise ValueError("need 0 <= dead_threshold <= active_threshold")
        if self.interval_epochs < 1 or self.interval_growth < 1 or self.growth_every < 1:
            raise ValueError("replacement intervals must be positive")
        if self.noise_scale is not None and not self.noise_scale > 0:
            raise ValueError("noise_scale must be positive")

    def resolved_active_threshold(self, vocab_size: int) -> float:
        if self.active_threshold is None:
            # never below the dead threshold, which 1/N undercuts once N > 1/dead_threshold
            return max(1.0 / vocab_size, self.dead_threshold)
        return self.active_threshold

    def interval_at(self, epoch: int) -> int:
        """Replacement interval in effect during 1-based ``epoch``."""
        return self.interval_epochs * self.interval_growth ** ((epoch - 1) // self.growth_every)

    def due(self, epoch: int) -> bool:
        return self.enabled and epoch % self.interval_at(epoch) == 0


@dataclass
class CodebookConfig:
    vocab_size: int = 2500
    window: int = 8
    embed: int = 128
    layers: int = 2
    heads: int = 4
    ff_size: int = 128
    dropout: float = 0.1
    counter_weight: float = 1.0
    contrastive_weight: float = 0.1
    temperature: float = 0.07
    lr: float = 1e-4
    plateau_patience: int = 5
    plateau_factor: float = 0.9
    batch_size: int = 64
    epochs: int = 100
    window_stride: int | None = None
    init_scale: float = 1.0
    seed: int = 0
    replacement: ReplacementPolicy = field(default_factory=ReplacementPolicy)

    @classmethod
    def small_corpus(cls, **overrides) -> "CodebookConfig":
        """Vocabulary and window preferred on smaller corpora."""
        return cls(**{"vocab_size": 4000, "window": 4, **overrides})

    @classmethod
    def toy(cls, **overrides) -> "CodebookConfig":
        """64 entries over 4-frame windows; trains in a few minutes on one CPU."""
        base = dict(vocab_size=64, window=4, embed=64, layers=2, heads=4, ff_size=64, dropout=0.0,
                    lr=1e-3, batch_size=16, epochs=15)
        base.update(overrides)
        return cls(**base)

    @property
    def stride(self) -> int:
        return self.window if self.window_stride is None else self.window_stride

    @property
    def token_dim(self) -> int:
        return self.window * self.embed

    def validate(self):
        for name in ("vocab_size", "window", "embed", "layers", "heads", "ff_size", "batch_size", "epochs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.embed % self.heads:
            raise ValueError(f"embed ({self.embed}) must be divisible by heads ({self.heads})")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")
        if self.counter_weight < 0 or self.contrastive_weight < 0:
            raise ValueError("loss weights must be nonnegative")
        if not self.temperature > 0 or not self.lr > 0:
            raise ValueError("temperature and lr must be positive")
        if not 0 < self.plateau_factor < 1:
            raise ValueError("plateau_factor must be in (0, 1)")
        if self.stride < 1:
            raise ValueError("window_stride must be positive")
        self.replacement.validate(self.vocab_size)
