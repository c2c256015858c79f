"""DTW alignment error, BLEU, ROUGE-L, velocity statistics and codebook utilization."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptySequenceError, SequenceTooShortError
from .pose_data import PoseSequence


def _frames(x) -> np.ndarray:
    f = x.frames if isinstance(x, PoseSequence) else np.asarray(x, dtype=np.float64)
    if f.ndim == 2:
        f = f[:, :, None]
    if f.shape[0] == 0:
        raise EmptySequenceError("DTW needs nonempty sequences")
    return f


def frame_distances(a, b) -> np.ndarray:
    """(U1, U2) matrix of mean per-joint Euclidean distances."""
    fa, fb = _frames(a), _frames(b)
    diff = fa[:, None] - fb[None]
    return np.linalg.norm(diff, axis=-1).mean(-1)


@dataclass(frozen=True)
class DtwResult:
    path: tuple[tuple[int, int], ...]
    cost: float


def dtw_from_costs(cost: np.ndarray) -> DtwResult:
    """Minimum-sum monotone path through ``cost`` with steps (1,0), (0,1), (1,1).

    Costs accumulate in path order so the total is bit-identical to summing
    the frame costs along the returned path. Ties prefer the diagonal, then
    the step that advances ``a``.
    """
    n, m = cost.shape
    acc = np.full((n, m), np.inf)
    move = np.zeros((n, m), dtype=np.int8)  # 0 diag, 1 from (i-1, j), 2 from (i, j-1)
    acc[0, 0] = cost[0, 0]
    for i in range(n):
        for j in range(m):
            if i == 0 and j == 0:
                continue
            best, step = np.inf, 0
            if i and j and acc[i - 1, j - 1] < best:
                best, step = acc[i - 1, j - 1], 0
            if i and acc[i - 1, j] < best:
                best, step = acc[i - 1, j], 1
            if j and acc[i, j - 1] < best:
                best, step = acc[i, j - 1], 2
            acc[i, j] = best + cost[i, j]
            move[i, j] = step
    path = [(n - 1, m - 1)]
    i, j = n - 1, m - 1
    while (i, j) != (0, 0):
        s = move[i, j]
        if s == 0:
            i, j = i - 1, j - 1
        elif s == 1:
            i -= 1
        else:
            j -= 1
        path.append((i, j))
    return DtwResult(tuple(reversed(path)), float(acc[n - 1, m - 1]))


def dtw_align(a, b) -> DtwResult:
    return dtw_from_costs(frame_distances(a, b))


def dtw_mje(a, b) -> float:
    """Mean absolute coordinate error over the DTW path between ``a`` and ``b``."""
    fa, fb = _frames(a), _frames(b)
    res = dtw_align(fa, fb)
    ia = np.fromiter((p[0] for p in res.path), dtype=np.int64)
    ib = np.fromiter((p[1] for p in res.path), dtype=np.int64)
    return float(np.abs(fa[ia] - fb[ib]).mean())


def velocity_series(seq) -> np.ndarray:
    f = seq.frames if isinstance(seq, PoseSequence) else np.asarray(seq, dtype=np.float64)
    if f.shape[0] < 2:
        raise SequenceTooShortError("velocity needs at least 2 frames")
    return np.linalg.norm(np.diff(f, axis=0), axis=-1).mean(-1)


def velocity_std(seq) -> float:
    """Standard deviation over time of the frame-to-frame mean joint displacement."""
    return float(np.std(velocity_series(seq)))


def codebook_utilization(token_seqs: Iterable, n_tokens: int) -> float:
    """Fraction of the ``n_tokens`` entries that occur at least once."""
    seen = set()
    for ts in token_seqs:
        seen.update(int(t) for t in getattr(ts, "tokens", ts))
    return len(seen) / n_tokens


def intra_label_distance(embeddings, labels) -> float:
    """Mean Euclidean distance between L2-normalized embeddings over all
    unordered pairs that share a label.

    Normalizing first measures the space the contrastive term acts on, so the
    value is comparable between models whose raw embedding scales differ.
    """
    e = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(labels).reshape(-1)
    if e.ndim != 2 or e.shape[0] != y.shape[0]:
        raise ValueError("need (n, d) embeddings and n labels")
    e = e / np.maximum(np.linalg.norm(e, axis=1, keepdims=True), 1e-12)
    total, count = 0.0, 0
    for lab in np.unique(y):
        g = e[y == lab]
        if len(g) < 2:
            continue
        d = np.sqrt(np.maximum(((g[:, None, :] - g[None, :, :]) ** 2).sum(-1), 0.0))
        iu = np.triu_indices(len(g), 1)
        total += float(d[iu].sum())
        count += len(iu[0])
    if count == 0:
        raise ValueError("no label occurs twice")
    return total / count


# ---------------------------------------------------------------------------
# text metrics, all on a 0..100 scale


def _ngrams(seq: Sequence, n: int) -> Counter:
    return Counter(tuple(seq[i:i + n]) for i in range(len(seq) - n + 1))


def _clipped_matches(hyp: Sequence, refs: Sequence[Sequence], n: int) -> tuple[int, int]:
    h = _ngrams(hyp, n)
    max_ref: Counter = Counter()
    for r in refs:
        for g, c in _ngrams(r, n).items():
            max_ref[g] = max(max_ref[g], c)
    return sum(min(c, max_ref[g]) for g, c in h.items()), max(len(hyp) - n + 1, 0)


def _closest_ref_len(hyp_len: int, refs: Sequence[Sequence]) -> int:
    return min((abs(len(r) - hyp_len), len(r)) for r in refs)[1]


def _bleu_from_stats(matches, totals, hyp_len, ref_len, max_n) -> dict[int, float]:
    if hyp_len == 0:
        return {n: 0.0 for n in range(1, max_n + 1)}
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    scores, log_sum = {}, 0.0
    for n in range(1, max_n + 1):
        if matches[n - 1] == 0 or totals[n - 1] == 0:
            log_sum = -math.inf
        else:
            log_sum += math.log(matches[n - 1] / totals[n - 1])
        scores[n] = 0.0 if log_sum == -math.inf else 100.0 * bp * math.exp(log_sum / n)
    return scores


def corpus_bleu(hyps: Sequence[Sequence], refs: Sequence[Sequence[Sequence]], max_n: int = 4) -> dict[int, float]:
    """Cumulative BLEU-1..max_n with corpus-level counts and brevity penalty.

    ``refs[k]`` is the list of references for ``hyps[k]``.
    """
    if len(hyps) != len(refs):
        raise ValueError("one reference list per hypothesis")
    matches, totals = [0] * max_n, [0] * max_n
    hyp_len = ref_len = 0
    for h, rs in zip(hyps, refs):
        if not rs or any(len(r) == 0 for r in rs):
            raise ValueError("references must be nonempty")
        h = list(h)
        for n in range(1, max_n + 1):
            m, t = _clipped_matches(h, rs, n)
            matches[n - 1] += m
            totals[n - 1] += t
        hyp_len += len(h)
        ref_len += _closest_ref_len(len(h), rs)
    return _bleu_from_stats(matches, totals, hyp_len, ref_len, max_n)


def bleu(hyp: Sequence, refs, max_n: int = 4) -> dict[int, float]:
    """Sentence BLEU; ``refs`` is one reference or a list of references."""
    refs = [refs] if refs and not isinstance(refs[0], (list, tuple)) else refs
    return corpus_bleu([hyp], [refs], max_n)


def lcs_length(a: Sequence, b: Sequence) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(hyp: Sequence, ref: Sequence, beta: float = 1.2) -> float:
    """LCS-based F-measure, recall weighted by ``beta``."""
    if len(ref) == 0:
        raise ValueError("reference must be nonempty")
    lcs = lcs_length(list(hyp), list(ref))
    if lcs == 0:
        return 0.0
    p, r = lcs / len(hyp), lcs / len(ref)
    return 100.0 * (1 + beta ** 2) * p * r / (r + beta ** 2 * p)


def corpus_rouge_l(hyps, refs, beta: float = 1.2) -> float:
    """Mean sentence ROUGE-L."""
    scores = [rouge_l(h, r, beta) for h, r in zip(hyps, refs)]
    return float(np.mean(scores)) if scores else 0.0
