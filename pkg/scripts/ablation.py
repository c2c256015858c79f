"""Toy ablations: code replacement, contrastive weight and stitching.

Trains three codebooks and one translator on the 500-sentence toy corpus and
prints one table. Takes about ten minutes on one CPU.

    python scripts/ablation.py [--sentences 500] [--json out.json]
"""

import argparse
import json
import time

import numpy as np
import torch

from vqslp.codebook.config import CodebookConfig, ReplacementPolicy
from vqslp.codebook.losses import pool_embeddings
from vqslp.codebook.train import corpus_training_data, train_codebook
from vqslp.metrics import codebook_utilization, corpus_bleu, dtw_mje, intra_label_distance, velocity_std
from vqslp.pipeline import normalized_poses, tokenize_corpus, translation_pairs
from vqslp.pose_data import SyntheticConfig, generate_synthetic_corpus
from vqslp.stitcher import boundary_jerk
from vqslp.tokenizer import TokenSequence, detokenize, token_boundaries
from vqslp.translator import TranslatorConfig, stitch_pose, train_translator


def codebook_row(name, corpus, art, seconds):
    tokens = {t.source_id: t for t in tokenize_corpus(corpus, art)}
    train = [tokens[r.record_id] for r in corpus.split("train")]
    test = normalized_poses(corpus, art, "test")
    X, y, _ = corpus_training_data(corpus, art.config, split="test", use_labels=True)
    windows = X.reshape(X.shape[0], X.shape[1], art.skeleton.joint_count, art.skeleton.dims)
    with torch.no_grad():
        pooled = pool_embeddings(art.encode_windows(windows)).double().numpy()
    return tokens, {
        "codebook": name,
        "utilization": codebook_utilization(train, art.n_tokens),
        "test_dtw_mje": float(np.mean([dtw_mje(detokenize(tokens[k], art), s) for k, s in test.items()])),
        "intra_label_distance": intra_label_distance(pooled, y),
        "train_seconds": round(seconds, 1),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sentences", type=int, default=500)
    ap.add_argument("--translator-epochs", type=int, default=30)
    ap.add_argument("--json", help="also write the rows here")
    args = ap.parse_args()

    corpus = generate_synthetic_corpus(SyntheticConfig(n_sentences=args.sentences))
    variants = {
        "baseline": (CodebookConfig.toy(contrastive_weight=0.0), False),
        "no replacement": (CodebookConfig.toy(contrastive_weight=0.0, replacement=ReplacementPolicy(enabled=False)),
                           False),
        "contrastive 0.1": (CodebookConfig.toy(contrastive_weight=0.1), True),
    }
    rows, base_tokens, base = [], None, None
    for name, (cfg, use_labels) in variants.items():
        t0 = time.perf_counter()
        art = train_codebook(corpus, cfg, use_labels=use_labels)
        tokens, row = codebook_row(name, corpus, art, time.perf_counter() - t0)
        rows.append(row)
        print(row, flush=True)
        if base is None:
            base, base_tokens = art, tokens

    tr = train_translator(translation_pairs(corpus, base_tokens, "train"), base.n_tokens,
                          TranslatorConfig.toy(epochs=args.translator_epochs),
                          dev_pairs=translation_pairs(corpus, base_tokens, "dev"), codebook_fingerprint=base.fingerprint)
    src = normalized_poses(corpus, base, "test")
    hyps, refs, stats = [], [], {"quantized": [], "stitched": []}
    for r in corpus.split("test"):
        ids = tr.beam(r.words, 5).ids
        hyps.append(ids)
        refs.append([list(base_tokens[r.record_id].tokens)])
        if not ids:
            continue
        q = detokenize(TokenSequence(tuple(ids), len(ids) * base.window), base)
        bs = token_boundaries(len(ids), base.window)
        for key, p in (("quantized", q), ("stitched", stitch_pose(q, base.window))):
            stats[key].append((velocity_std(p), boundary_jerk(p, bs), dtw_mje(p, src[r.record_id])))
    bleu = corpus_bleu(hyps, refs)
    src_v = float(np.mean([velocity_std(s) for s in src.values()]))
    print(f"translator test BLEU-1 {bleu[1]:.1f} BLEU-4 {bleu[4]:.1f}; source velocity std {src_v:.4f}")
    for key, vals in stats.items():
        v, j, m = np.mean(vals, axis=0)
        rows.append({"output": key, "velocity_std": float(v), "boundary_jerk": float(j), "dtw_mje": float(m)})
        print(rows[-1])
    if args.json:
        with open(args.json, "w") as f:
            json.dump({"rows": rows, "bleu": bleu, "source_velocity_std": src_v}, f, indent=2)


if __name__ == "__main__":
    main()
