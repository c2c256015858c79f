"""Shared fixtures. The toy models train once per session and are reused by the
tokenizer, translator and acceptance tests."""

import time
from dataclasses import dataclass

import numpy as np
import pytest

from vqslp.codebook.config import CodebookConfig, ReplacementPolicy
from vqslp.codebook.train import fit_codebook, train_codebook
from vqslp.codebook.artifact import CodebookArtifact
from vqslp.pipeline import tokenize_corpus, translation_pairs
from vqslp.pose_data import NormalizationParams, SkeletonSpec, SyntheticConfig, generate_synthetic_corpus
from vqslp.translator import TranslatorConfig, train_translator

ACCEPTANCE_LINES = []


@dataclass
class Timed:
    value: object
    seconds: float


def timed(fn, *args, **kwargs) -> Timed:
    t = time.perf_counter()
    out = fn(*args, **kwargs)
    return Timed(out, time.perf_counter() - t)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def tiny_artifact():
    """8 entries over 2-frame windows of a 3-joint 2-D skeleton, trained for a few epochs."""
    rng = np.random.default_rng(0)
    base = rng.random((4, 2, 6))
    which = rng.integers(0, 4, size=96)
    X = (base[which] + 0.01 * rng.random((96, 2, 6))).astype(np.float32)
    cfg = CodebookConfig(vocab_size=8, window=2, embed=16, layers=1, heads=2, ff_size=16, dropout=0.0, lr=3e-3,
                         batch_size=16, epochs=4)
    model, hist = fit_codebook(X, cfg)
    sk = SkeletonSpec(joint_count=3, dims=2, layout=(("body", 3),))
    return CodebookArtifact(cfg, sk, NormalizationParams(np.zeros(2), np.ones(2)), model, cfg.seed, hist)


@pytest.fixture(scope="session")
def toy_corpus():
    return generate_synthetic_corpus(SyntheticConfig(n_sentences=500))


def toy_codebook_config(**overrides) -> CodebookConfig:
    return CodebookConfig.toy(**{"contrastive_weight": 0.0, **overrides})


@pytest.fixture(scope="session")
def toy_codebook(toy_corpus) -> Timed:
    """Replacement on, no contrastive term."""
    return timed(train_codebook, toy_corpus, toy_codebook_config())


@pytest.fixture(scope="session")
def toy_codebook_no_replacement(toy_corpus) -> Timed:
    return timed(train_codebook, toy_corpus, toy_codebook_config(replacement=ReplacementPolicy(enabled=False)))


@pytest.fixture(scope="session")
def toy_codebook_contrastive(toy_corpus) -> Timed:
    return timed(train_codebook, toy_corpus, toy_codebook_config(contrastive_weight=0.1), use_labels=True)


@pytest.fixture(scope="session")
def toy_tokens(toy_corpus, toy_codebook) -> dict:
    return {t.source_id: t for t in tokenize_corpus(toy_corpus, toy_codebook.value)}


@pytest.fixture(scope="session")
def toy_translator(toy_corpus, toy_codebook, toy_tokens) -> Timed:
    art = toy_codebook.value
    return timed(train_translator, translation_pairs(toy_corpus, toy_tokens, "train"), art.n_tokens,
                 TranslatorConfig.toy(epochs=30), translation_pairs(toy_corpus, toy_tokens, "dev"),
                 art.fingerprint)
