"""Corpus-level glue: tokenize a corpus, assemble translation pairs, score outputs."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import DataError
from .metrics import bleu, corpus_bleu, corpus_rouge_l, dtw_mje, rouge_l, velocity_std
from .pose_data import PoseSequence, SyntheticCorpus, normalize
from .tokenizer import TokenSequence, tokenize

BLEU_ORDERS = (1, 2, 3, 4)


def records_of(corpus: SyntheticCorpus, split: str | None = None):
    return corpus.records if split is None else corpus.split(split)


def normalized_poses(corpus: SyntheticCorpus, artifact, split: str | None = None) -> dict[str, PoseSequence]:
    out = {}
    for r in records_of(corpus, split):
        seq, _ = normalize(r.pose, artifact.normalization)
        out[r.record_id] = PoseSequence(seq.frames, seq.fps, r.record_id, seq.skeleton)
    return out


def tokenize_corpus(corpus: SyntheticCorpus, artifact, split: str | None = None) -> list[TokenSequence]:
    return [tokenize(seq, artifact) for seq in normalized_poses(corpus, artifact, split).values()]


def translation_pairs(corpus: SyntheticCorpus, tokens: dict[str, TokenSequence], split: str | None = None):
    pairs = []
    for r in records_of(corpus, split):
        if r.record_id not in tokens:
            raise DataError(f"no token sequence for record {r.record_id}")
        pairs.append((r.words, tokens[r.record_id]))
    return pairs


def _ids(t) -> list[int]:
    return list(t.tokens) if isinstance(t, TokenSequence) else [int(x) for x in t]


def evaluate(hyp_poses: dict[str, PoseSequence], ref_poses: dict[str, PoseSequence],
             hyp_tokens: dict | None = None, ref_tokens: dict | None = None,
             max_n: int = 4, rouge_beta: float = 1.2) -> dict:
    """Per-sequence and aggregate scores for hypotheses keyed by sequence id.

    Token scores are filled only when both token maps are given; pose scores
    need the reference ids to cover every hypothesis.
    """
    ids = sorted(hyp_poses)
    if not ids:
        raise DataError("nothing to evaluate")
    missing = [i for i in ids if i not in ref_poses]
    if missing:
        raise DataError(f"no reference for {missing[:5]}")
    with_tokens = hyp_tokens is not None and ref_tokens is not None
    rows = []
    for i in ids:
        hyp, ref = hyp_poses[i], ref_poses[i]
        row = {
            "id": i,
            "frames_hyp": len(hyp),
            "frames_ref": len(ref),
            "dtw_mje": dtw_mje(hyp, ref),
            "velocity_std_hyp": velocity_std(hyp) if len(hyp) > 1 else None,
            "velocity_std_ref": velocity_std(ref) if len(ref) > 1 else None,
        }
        if with_tokens:
            h, r = _ids(hyp_tokens[i]), _ids(ref_tokens[i])
            scores = bleu(h, [r], max_n)
            for n in range(1, max_n + 1):
                row[f"bleu_{n}"] = scores[n]
            row["rouge_l"] = rouge_l(h, r, rouge_beta)
        rows.append(row)

    def mean(key):
        vals = [r[key] for r in rows if r[key] is not None]
        return float(np.mean(vals)) if vals else None

    agg = {"sequences": len(rows), "dtw_mje": mean("dtw_mje"),
           "velocity_std_hyp": mean("velocity_std_hyp"), "velocity_std_ref": mean("velocity_std_ref")}
    if with_tokens:
        hyps = [_ids(hyp_tokens[i]) for i in ids]
        refs = [[_ids(ref_tokens[i])] for i in ids]
        scores = corpus_bleu(hyps, refs, max_n)
        for n in range(1, max_n + 1):
            agg[f"bleu_{n}"] = scores[n]
        agg["rouge_l"] = corpus_rouge_l(hyps, [r[0] for r in refs], rouge_beta)
    return {"rows": rows, "aggregate": agg}


def format_summary(report: dict) -> str:
    agg = report["aggregate"]
    lines = [f"sequences        {agg['sequences']}"]
    for key in ("dtw_mje", "velocity_std_hyp", "velocity_std_ref", *(f"bleu_{n}" for n in BLEU_ORDERS), "rouge_l"):
        if agg.get(key) is not None:
            lines.append(f"{key:<16} {agg[key]:.4f}")
    return "\n".join(lines) + "\n"


def write_report(report: dict, out_dir) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rp = out / "report.json"
    rp.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    sp = out / "summary.txt"
    sp.write_text(format_summary(report))
    return rp, sp
