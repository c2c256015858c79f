from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from ..codebook.model import sinusoid_table, xavier_init
from .vocab import PAD


@dataclass
class TranslatorConfig:
    layers: int = 1
    heads: int = 4
    embed: int = 512
    ff_size: int = 1024
    dropout: float = 0.1
    lr: float = 1e-4
    beam_size: int = 5
    length_penalty: float = 2.0
    max_output_len: int | None = None  # None: 1.5x the longest training target
    label_smoothing: float = 0.0
    batch_size: int = 32
    epochs: int = 100
    plateau_patience: int = 5
    plateau_factor: float = 0.9
    seed: int = 0

    def validate(self):
        if self.embed % self.heads:
            raise ValueError(f"embed {self.embed} is not divisible by heads {self.heads}")
        if self.layers < 1 or self.beam_size < 1 or self.epochs < 0 or self.batch_size < 1:
            raise ValueError("layers, beam_size and batch_size must be >= 1, epochs >= 0")
        if self.max_output_len is not None and self.max_output_len < 0:
            raise ValueError("max_output_len must be nonnegative")
        if not 0 <= self.label_smoothing < 1 or not 0 <= self.dropout < 1:
            raise ValueError("label_smoothing and dropout must be in [0, 1)")
        return self

    @classmethod
    def toy(cls, **overrides) -> "TranslatorConfig":
        """Small model that trains in minutes on one CPU."""
        base = dict(layers=2, heads=4, embed=64, ff_size=128, dropout=0.1, lr=1e-3, batch_size=32, epochs=40)
        base.update(overrides)
        return cls(**base)


class TranslatorModel(nn.Module):
    """Word ids -> codebook-token ids encoder/decoder transformer (pre-norm)."""

    def __init__(self, src_vocab_size: int, tgt_vocab_size: int, cfg: TranslatorConfig):
        super().__init__()
        self.cfg = cfg
        self.src_embed = nn.Embedding(src_vocab_size, cfg.embed, padding_idx=PAD)
        self.tgt_embed = nn.Embedding(tgt_vocab_size, cfg.embed, padding_idx=PAD)
        enc = nn.TransformerEncoderLayer(cfg.embed, cfg.heads, cfg.ff_size, cfg.dropout,
                                         activation="relu", batch_first=True, norm_first=True)
        dec = nn.TransformerDecoderLayer(cfg.embed, cfg.heads, cfg.ff_size, cfg.dropout,
                                         activation="relu", batch_first=True, norm_first=True)
        self.encoder = nn.TransformerEncoder(enc, cfg.layers, norm=nn.LayerNorm(cfg.embed), enable_nested_tensor=False)
        self.decoder = nn.TransformerDecoder(dec, cfg.layers, norm=nn.LayerNorm(cfg.embed))
        self.out = nn.Linear(cfg.embed, tgt_vocab_size)
        xavier_init(self)
        with torch.no_grad():
            self.src_embed.weight[PAD].zero_()
            self.tgt_embed.weight[PAD].zero_()
        self.scale = math.sqrt(cfg.embed)
        self._pe = sinusoid_table(256, cfg.embed)

    def _positional(self, length: int, dtype) -> torch.Tensor:
        if length > self._pe.shape[0]:
            self._pe = sinusoid_table(2 * length, self.cfg.embed)
        return self._pe[:length].to(dtype)

    def _embed(self, table: nn.Embedding, ids: torch.Tensor) -> torch.Tensor:
        e = table(ids) * self.scale
        return e + self._positional(ids.shape[1], e.dtype)[None]

    def encode(self, src: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        pad = src == PAD
        memory = self.encoder(self._embed(self.src_embed, src), src_key_padding_mask=pad)
        return memory, pad

    def decode(self, tgt_in: torch.Tensor, memory: torch.Tensor, memory_pad: torch.Tensor) -> torch.Tensor:
        """Logits (B, T, V) for every prefix position of ``tgt_in``."""
        T = tgt_in.shape[1]
        causal = torch.triu(torch.ones(T, T, dtype=torch.bool), diagonal=1)
        h = self.decoder(self._embed(self.tgt_embed, tgt_in), memory, tgt_mask=causal,
                              tgt_key_padding_mask=tgt_in == PAD, memory_key_padding_mask=memory_pad)
        return self.out(h)

    def forward(self, src: torch.Tensor, tgt_in: torch.Tensor) -> torch.Tensor:
        memory, pad = self.encode(src)
        return self.decode(tgt_in, memory, pad)
