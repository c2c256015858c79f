import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vqslp.translator.decoding import beam_search, greedy_decode, length_penalty
from vqslp.translator.vocab import BOS, EOS, PAD, UNK

CONTENT = (4, 5, 6)
V = 7


def table_step(seed, eos_bias=0.0):
    """Step function whose next-id distribution is a fixed random function of the prefix."""

    def dist(prefix):
        code = seed
        for t in prefix:
            code = code * 31 + t
        rng = np.random.default_rng(code % (2 ** 32))
        logits = rng.normal(size=V) * 2
        logits[EOS] += eos_bias
        return logits - np.logaddexp.reduce(logits)

    def step(prefixes):
        return np.stack([dist(tuple(p)) for p in prefixes])

    return step


def exhaustive(step, max_len, alpha):
    """Best length-normalized finished sequence among all with at most ``max_len`` emitted ids."""
    best = None
    for n in range(max_len):
        for body in itertools.product(CONTENT, repeat=n):
            prefix = [BOS]
            lp = 0.0
            for t in list(body) + [EOS]:
                lp += float(step([prefix])[0][t])
                prefix.append(t)
            score = lp / length_penalty(n + 1, alpha)
            if best is None or score > best[0]:
                best = (score, list(body))
    return best


def test_length_penalty_form():
    assert length_penalty(1, 2.0) == 1.0
    assert length_penalty(7, 2.0) == pytest.approx(4.0)
    assert length_penalty(3, 0.0) == 1.0


@pytest.mark.parametrize("seed", range(12))
def test_wide_beam_matches_exhaustive(seed):
    step = table_step(seed)
    for alpha in (0.0, 1.0, 2.0):
        score, body = exhaustive(step, 3, alpha)
        d = beam_search(step, beam_size=3 ** 3 * 2, max_len=3, alpha=alpha)
        assert d.ids == body
        assert d.score == pytest.approx(score, abs=1e-12)


def test_hand_case_beam_beats_greedy():
    # first step prefers a, but a's continuations are flat while b ends confidently
    probs = {
        (BOS,): {4: 0.5, 5: 0.4, EOS: 0.1},
        (BOS, 4): {4: 0.34, 5: 0.33, EOS: 0.33},
        (BOS, 5): {EOS: 0.9, 4: 0.1},
    }

    def step(prefixes):
        out = []
        for p in prefixes:
            row = np.full(V, -np.inf)
            for t, pr in probs.get(tuple(p), {EOS: 1.0}).items():
                row[t] = math.log(pr)
            out.append(row)
        return np.stack(out)

    g = greedy_decode(step, max_len=3, alpha=0.0)
    assert g.ids[:1] == [4]
    b = beam_search(step, beam_size=2, max_len=3, alpha=0.0)
    assert b.ids == [5]
    assert b.log_prob == pytest.approx(math.log(0.4 * 0.9))
    assert b.score >= g.score


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(0, 6), st.sampled_from([0.0, 1.0, 2.0]))
def test_beam_one_equals_greedy(seed, max_len, alpha):
    step = table_step(seed, eos_bias=-1.0)
    g = greedy_decode(step, max_len, alpha)
    b = beam_search(step, 1, max_len, alpha)
    assert b.ids == g.ids
    assert b.truncated == g.truncated
    assert b.log_prob == g.log_prob


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_never_emits_reserved(seed):
    # put most of the mass on the banned ids
    base = table_step(seed)

    def step(prefixes):
        out = base(prefixes).copy()
        out[:, [PAD, BOS, UNK]] += 5.0
        return out

    for d in (greedy_decode(step, 5), beam_search(step, 3, 5)):
        assert all(t in CONTENT for t in d.ids)


def test_zero_max_len_is_empty_and_truncated():
    step = table_step(0)
    g = greedy_decode(step, 0)
    assert g.ids == [] and g.truncated
    b = beam_search(step, 5, 0)
    assert b.ids == [] and b.truncated


def test_truncated_when_eos_never_wins():
    def step(prefixes):
        row = np.full(V, -10.0)
        row[4] = 0.0
        return np.tile(row, (len(prefixes), 1))

    g = greedy_decode(step, 4)
    assert g.ids == [4, 4, 4, 4] and g.truncated
    assert beam_search(step, 1, 4).ids == g.ids
    # a wider beam keeps an EOS extension, and finished hypotheses outrank live ones
    b = beam_search(step, 3, 4)
    assert not b.truncated and b.ids == [4, 4, 4]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_wider_beam_on_toy_tables(seed):
    step = table_step(seed)
    runs = [beam_search(step, k, 3, 2.0) for k in (1, 2, 4, 60)]
    # the 60-wide beam is exhaustive here, so no finished result beats it
    assert not runs[-1].truncated
    assert runs[-1].score >= max(r.score for r in runs if not r.truncated) - 1e-12
