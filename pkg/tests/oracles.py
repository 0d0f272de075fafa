"""Brute-force reference implementations used to check the fast paths."""

import itertools
from functools import lru_cache

import numpy as np

from asrkit.rng import rng_for
from asrkit.vocab import Vocab

# a five-token vocabulary whose CTC alphabet is exactly {blank, 1, 2}
TINY_TOKENS = ("<blank>", "a", "b", "<sos>", "<eos>")


def tiny_vocab() -> Vocab:
    return Vocab(tokens=TINY_TOKENS)


def collapse(path) -> tuple[int, ...]:
    out = []
    prev = None
    for p in path:
        if p != prev and p != 0:
            out.append(int(p))
        prev = p
    return tuple(out)


def ctc_logprob_by_sequence(log_post: np.ndarray) -> dict:
    """Total probability of every collapsed sequence, by enumerating all
    V^T frame paths."""
    t_len, v = log_post.shape
    table = {}
    for path in itertools.product(range(v), repeat=t_len):
        lp = sum(log_post[t, p] for t, p in enumerate(path))
        seq = collapse(path)
        table[seq] = np.logaddexp(table[seq], lp) if seq in table else lp
    return table


def seeded_decode_fn(seed: int, width: int):
    """A deterministic fake decoder: each prefix maps to a fixed
    normalized log-probability row."""

    def decode_fn(prefix):
        rng = rng_for(seed, "fake-att", *[str(int(p)) for p in prefix])
        row = rng.normal(size=width)
        return row - np.logaddexp.reduce(row)

    return decode_fn


def brute_force_counts(ref, hyp):
    """Minimal (S, D, I), preferring more substitutions among
    minimal-cost alignments.  Independent recursive formulation."""
    n, m = len(ref), len(hyp)

    @lru_cache(maxsize=None)
    def best(i, j):
        # (total, -substitutions, (S, D, I)) of the best suffix alignment
        if i == n and j == m:
            return (0, 0, (0, 0, 0))
        cands = []
        if i < n:
            t, ns, (s, d, ii) = best(i + 1, j)
            cands.append((t + 1, ns, (s, d + 1, ii)))
        if j < m:
            t, ns, (s, d, ii) = best(i, j + 1)
            cands.append((t + 1, ns, (s, d, ii + 1)))
        if i < n and j < m:
            sub = int(ref[i] != hyp[j])
            t, ns, (s, d, ii) = best(i + 1, j + 1)
            cands.append((t + sub, ns - sub, (s + sub, d, ii)))
        return min(cands)

    return best(0, 0)[2]


def joint_brute_force(log_post: np.ndarray, decode_fn, vocab: Vocab,
                      lambda_ctc: float, max_len: int,
                      language: str | None = None):
    """Argmax of the joint score over every character sequence up to
    max_len, with the searcher's tie-break: higher joint, then shorter,
    then lexicographically smaller."""
    head = (vocab.sos_id,)
    if language is not None:
        head = (vocab.sos_id, vocab.lang_id(language))
    ctc_table = ctc_logprob_by_sequence(log_post)
    eos = vocab.eos_id
    best = None
    for n in range(max_len + 1):
        for seq in itertools.product(vocab.char_ids, repeat=n):
            att = 0.0
            for i, c in enumerate(seq):
                att += float(decode_fn(head + seq[:i])[c])
            att += float(decode_fn(head + seq)[eos])
            ctc = float(ctc_table.get(seq, -np.inf))
            joint = lambda_ctc * ctc + (1.0 - lambda_ctc) * att
            key = (-joint, n, seq)
            if best is None or key < best[0]:
                best = (key, seq, joint, ctc, att)
    _, seq, joint, ctc, att = best
    return seq, joint, ctc, att
