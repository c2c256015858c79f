from __future__ import annotations

import dataclasses
import json
import logging
import math
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from ..codebook.artifact import check_version, load_state, save_state, state_fingerprint
from ..codebook.train import set_determinism
from ..errors import DataError, NumericalError
from ..tokenizer import TokenSequence
from .decoding import Decoded, beam_search, greedy_decode
from .model import TranslatorConfig, TranslatorModel
from .vocab import BOS, EOS, PAD, TargetVocab, Vocab

log = logging.getLogger(__name__)

ARTIFACT_KIND = "vqslp-translator"
ARTIFACT_VERSION = "1.0"


def _target_ids(t) -> list[int]:
    return list(t.tokens) if isinstance(t, TokenSequence) else [int(x) for x in t]


def _pad(rows: list[list[int]]) -> torch.Tensor:
    width = max(len(r) for r in rows)
    return torch.tensor([r + [PAD] * (width - len(r)) for r in rows], dtype=torch.long)


class TranslatorArtifact:
    """Trained translator plus its vocabularies and decoding limits."""

    def __init__(self, config: TranslatorConfig, src_vocab: Vocab, n_tokens: int, model: TranslatorModel,
                 max_output_len: int, codebook_fingerprint: str = "", history: list[dict] | None = None,
                 version: str = ARTIFACT_VERSION):
        self.config = config
        self.src_vocab = src_vocab
        self.tgt_vocab = TargetVocab(n_tokens)
        self.model = model.eval()
        self.max_output_len = max_output_len
        self.codebook_fingerprint = codebook_fingerprint
        self.history = history or []
        self.version = version

    @property
    def n_tokens(self) -> int:
        return self.tgt_vocab.n_tokens

    @property
    def fingerprint(self) -> str:
        return state_fingerprint(self.model.state_dict(), f"{ARTIFACT_KIND} {self.version}")

    # --- decoding ----------------------------------------------------------

    def step_fn(self, words):
        """Step function for the decoders, with the source encoded once.

        Prefixes are scored one at a time so a hypothesis gets bit-identical
        log-probabilities whatever beam it shares a step with.
        """
        src = torch.tensor([self.src_vocab.encode(words) or [PAD]], dtype=torch.long)
        self.model.eval()
        with torch.no_grad():
            memory, pad = self.model.encode(src)

        def step(prefixes):
            rows = []
            with torch.no_grad():
                for p in prefixes:
                    tgt = torch.tensor([list(p)], dtype=torch.long)
                    logits = self.model.decode(tgt, memory, pad)[0, -1]
                    rows.append(F.log_softmax(logits.double(), dim=-1).numpy())
            return np.stack(rows)

        return step

    def _limit(self, max_len):
        return self.max_output_len if max_len is None else max_len

    def greedy(self, words, max_len: int | None = None) -> Decoded:
        d = greedy_decode(self.step_fn(words), self._limit(max_len), self.config.length_penalty)
        d.ids = self.tgt_vocab.decode(d.ids)
        return d

    def beam(self, words, beam_size: int | None = None, length_penalty: float | None = None,
             max_len: int | None = None) -> Decoded:
        alpha = self.config.length_penalty if length_penalty is None else length_penalty
        d = beam_search(self.step_fn(words), beam_size or self.config.beam_size, self._limit(max_len), alpha)
        d.ids = self.tgt_vocab.decode(d.ids)
        return d

    # --- persistence -------------------------------------------------------

    def save(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "VERSION").write_text(f"{ARTIFACT_KIND} {self.version}\n")
        manifest = {"translator": dataclasses.asdict(self.config), "n_tokens": self.n_tokens,
                    "max_output_len": self.max_output_len, "codebook_fingerprint": self.codebook_fingerprint,
                    "fingerprint": self.fingerprint}
        (out / "config.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        self.src_vocab.save(out / "source_vocab.json")
        (out / "history.json").write_text(json.dumps(self.history, indent=1) + "\n")
        save_state(self.model.state_dict(), out / "params")
        return out

    @classmethod
    def load(cls, path) -> "TranslatorArtifact":
        root = Path(path)
        if not (root / "VERSION").exists():
            raise DataError(f"{root} is not a translator artifact (no VERSION file)")
        version = check_version((root / "VERSION").read_text(), ARTIFACT_KIND, ARTIFACT_VERSION)
        manifest = json.loads((root / "config.json").read_text())
        cfg = TranslatorConfig(**manifest["translator"])
        vocab = Vocab.load(root / "source_vocab.json")
        n = manifest["n_tokens"]
        with torch.random.fork_rng():
            model = TranslatorModel(len(vocab), n + 4, cfg)
        model.load_state_dict(load_state(root / "params"))
        history = json.loads((root / "history.json").read_text()) if (root / "history.json").exists() else []
        return cls(cfg, vocab, n, model, manifest["max_output_len"], manifest.get("codebook_fingerprint", ""),
                   history, version)


def train_translator(pairs: Sequence[tuple], n_tokens: int, cfg: TranslatorConfig,
                     dev_pairs: Sequence[tuple] | None = None, codebook_fingerprint: str = "",
                     deterministic: bool = True, callback=None) -> TranslatorArtifact:
    """Teacher-forced cross-entropy training on (words, tokens) pairs.

    Targets are BOS-prefixed for the decoder input and EOS-suffixed for the
    output. The source vocabulary comes from ``pairs`` only. With
    ``dev_pairs`` the plateau scheduler follows the dev loss.
    """
    cfg.validate()
    if not pairs:
        raise DataError("empty training set")
    tv = TargetVocab(n_tokens)
    src_vocab = Vocab.build(w for w, _ in pairs)

    def prepare(ps):
        # encoding validates every target token before any training happens
        return [(src_vocab.encode(w) or [PAD], tv.encode(_target_ids(t))) for w, t in ps]

    data = prepare(pairs)
    dev = prepare(dev_pairs) if dev_pairs else None
    longest = max(len(y) for _, y in data)
    max_len = cfg.max_output_len if cfg.max_output_len is not None else int(math.ceil(1.5 * longest))

    set_determinism(deterministic)
    torch.manual_seed(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    model = TranslatorModel(len(src_vocab), len(tv), cfg)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    sched = torch.optim.lr_scheduler.ReduceLROnPlateau(opt, factor=cfg.plateau_factor, patience=cfg.plateau_patience)
    history = []

    for epoch in range(1, cfg.epochs + 1):
        model.train()
        perm = torch.randperm(len(data), generator=gen).tolist()
        tot, n_tok, correct = 0.0, 0, 0
        for s in range(0, len(perm), cfg.batch_size):
            batch = [data[i] for i in perm[s:s + cfg.batch_size]]
            src, tgt_in, tgt_out = _tensors(batch)
            logits = model(src, tgt_in)
            loss = F.cross_entropy(logits.reshape(-1, logits.shape[-1]), tgt_out.reshape(-1),
                                   ignore_index=PAD, label_smoothing=cfg.label_smoothing)
            if not torch.isfinite(loss):
                raise NumericalError(f"non-finite translator loss at epoch {epoch}",
                                     {"epoch": epoch, "lr": opt.param_groups[0]["lr"], "history": history[-5:]})
            opt.zero_grad()
            loss.backward()
            opt.step()
            mask = tgt_out != PAD
            k = int(mask.sum())
            tot += float(loss.detach()) * k
            n_tok += k
            correct += int(((logits.argmax(-1) == tgt_out) & mask).sum())
        row = {"epoch": epoch, "loss": tot / n_tok, "train_accuracy": correct / n_tok}
        if dev:
            row["dev_loss"], row["dev_accuracy"] = evaluate_teacher_forced(model, dev, cfg.batch_size)
        sched.step(row.get("dev_loss", row["loss"]))
        row["lr"] = opt.param_groups[0]["lr"]
        history.append(row)
        if callback is not None:
            callback(row)
        log.debug("translator epoch %d: %s", epoch, row)

    model.eval()
    return TranslatorArtifact(cfg, src_vocab, n_tokens, model, max_len, codebook_fingerprint, history)


def _tensors(batch):
    src = _pad([x for x, _ in batch])
    tgt_in = _pad([[BOS] + y for _, y in batch])
    tgt_out = _pad([y + [EOS] for _, y in batch])
    return src, tgt_in, tgt_out


@torch.no_grad()
def evaluate_teacher_forced(model: TranslatorModel, data, batch_size: int = 64) -> tuple[float, float]:
    """(mean cross-entropy, next-token accuracy) with gold prefixes, EOS included."""
    was_training = model.training
    model.eval()
    tot, n_tok, correct = 0.0, 0, 0
    for s in range(0, len(data), batch_size):
        src, tgt_in, tgt_out = _tensors(data[s:s + batch_size])
        logits = model(src, tgt_in)
        mask = tgt_out != PAD
        tot += float(F.cross_entropy(logits.reshape(-1, logits.shape[-1]), tgt_out.reshape(-1),
                                     ignore_index=PAD, reduction="sum"))
        n_tok += int(mask.sum())
        correct += int(((logits.argmax(-1) == tgt_out) & mask).sum())
    model.train(was_training)
    return tot / n_tok, correct / n_tok


def teacher_forced_accuracy(art: TranslatorArtifact, pairs) -> float:
    data = [(art.src_vocab.encode(w) or [PAD], art.tgt_vocab.encode(_target_ids(t))) for w, t in pairs]
    return evaluate_teacher_forced(art.model, data)[1]
