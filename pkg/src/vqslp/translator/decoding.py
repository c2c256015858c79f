"""Greedy and length-normalized beam decoding over an abstract step function.

A step function maps a list of id prefixes (each starting with BOS) to an
array of next-id log-probabilities, one row per prefix. Decoding never emits
PAD, BOS or UNK; EOS ends a hypothesis and is not part of the returned ids.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .vocab import BOS, EOS, PAD, UNK

StepFn = Callable[[Sequence[Sequence[int]]], np.ndarray]
BANNED = (PAD, BOS, UNK)


def length_penalty(length: int, alpha: float) -> float:
    return ((5.0 + length) / 6.0) ** alpha


@dataclass
class Hypothesis:
    prefix: list[int] = field(default_factory=lambda: [BOS])
    log_prob: float = 0.0
    finished: bool = False

    @property
    def ids(self) -> list[int]:
        """Output ids without BOS and EOS."""
        body = self.prefix[1:]
        return body[:-1] if self.finished else body

    @property
    def length(self) -> int:
        """Length used for the penalty; counts EOS when present."""
        return len(self.prefix) - 1

    def score(self, alpha: float) -> float:
        return self.log_prob / length_penalty(self.length, alpha)


@dataclass
class Decoded:
    ids: list[int]
    log_prob: float
    score: float
    truncated: bool


def _masked(logp: np.ndarray) -> np.ndarray:
    row = np.array(logp, dtype=np.float64, copy=True)
    row[list(BANNED)] = -np.inf
    return row


def greedy_decode(step: StepFn, max_len: int, alpha: float = 2.0) -> Decoded:
    """Arg-max id at every step until EOS or ``max_len`` output ids."""
    hyp = Hypothesis()
    while len(hyp.ids) < max_len:
        row = _masked(step([hyp.prefix])[0])
        nxt = int(np.argmax(row))
        hyp = Hypothesis(hyp.prefix + [nxt], hyp.log_prob + float(row[nxt]), nxt == EOS)
        if hyp.finished:
            break
    return Decoded(hyp.ids, hyp.log_prob, hyp.score(alpha), not hyp.finished)


def beam_search(step: StepFn, beam_size: int, max_len: int, alpha: float = 2.0) -> Decoded:
    """Keep the ``beam_size`` best extensions by cumulative log-probability.

    Extensions ending in EOS leave the beam as finished hypotheses; the search
    stops once no live hypothesis remains or ``max_len`` ids have been emitted.
    The finished hypothesis with the best length-normalized score wins; if
    none finished, the live ones compete instead and the result is marked
    truncated. Ties go to the earlier hypothesis, then the lower id.
    """
    if beam_size < 1:
        raise ValueError("beam_size must be >= 1")
    alive = [Hypothesis()]
    finished: list[Hypothesis] = []
    emitted = 0
    while alive and emitted < max_len:
        logp = step([h.prefix for h in alive])
        cand = []
        for k, h in enumerate(alive):
            row = _masked(logp[k])
            for t in np.flatnonzero(np.isfinite(row)):
                cand.append((h.log_prob + float(row[t]), k, int(t)))
        # stable: equal scores keep (hypothesis, id) order
        cand.sort(key=lambda c: -c[0])
        nxt = []
        for lp, k, t in cand[:beam_size]:
            h = Hypothesis(alive[k].prefix + [t], lp, t == EOS)
            (finished if h.finished else nxt).append(h)
        alive = nxt
        emitted += 1
    pool = finished if finished else alive
    if not pool:
        return Decoded([], 0.0, 0.0, True)
    best = max(pool, key=lambda h: h.score(alpha))  # max keeps the first of equal scores
    return Decoded(best.ids, best.log_prob, best.score(alpha), not best.finished)
