"""Label-synchronous beam search over the joint CTC + decoder score.

Each step expands every live hypothesis over the candidate tokens,
scoring extensions with the decoder's next-token log-probability and the
CTC prefix score on the final CTC posterior, combined as

    joint = lambda_ctc * ctc + (1 - lambda_ctc) * att

A hypothesis finishes on <eos>; its CTC term then switches to the total
probability that the CTC output equals the prefix exactly, making
finished scores comparable.  Ties order by (higher joint, shorter,
lexicographically smaller tokens).
"""

from dataclasses import dataclass, field

import numpy as np

from .ctc import (PrefixState, ctc_complete_logprob, ctc_prefix_extend_all,
                  ctc_prefix_initial)
from .errors import ValidationError
from .vocab import Vocab


@dataclass(frozen=True)
class BeamConfig:
    beam_size: int = 4
    lambda_ctc: float = 0.3
    max_len: int = 64
    nbest: int = 1
    length_penalty: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.lambda_ctc <= 1.0:
            raise ValidationError("lambda_ctc must lie in [0, 1]")
        if self.beam_size < 1:
            raise ValidationError("beam_size must be at least 1")
        if self.nbest < 1 or self.nbest > self.beam_size:
            raise ValidationError("nbest must lie in [1, beam_size]")


@dataclass
class Hypothesis:
    tokens: tuple[int, ...]        # character ids, no specials
    ctc_state: PrefixState | None
    att_logprob: float
    ctc_logprob: float
    lambda_ctc: float
    finished: bool = False
    truncated: bool = False

    @property
    def joint(self) -> float:
        return (self.lambda_ctc * self.ctc_logprob
                + (1.0 - self.lambda_ctc) * self.att_logprob)

    def sort_key(self):
        return (-self.joint, len(self.tokens), self.tokens)


@dataclass
class BeamResult:
    tokens: tuple[int, ...]
    joint: float
    ctc: float
    att: float
    truncated: bool = False


def joint_beam_search(ctc_log_post: np.ndarray, decode_fn, vocab: Vocab,
                      cfg: BeamConfig, language: str | None = None,
                      candidates: tuple[int, ...] | None = None
                      ) -> list[BeamResult]:
    """Search for the best character sequences.

    ctc_log_post: (T', V) final CTC log-posteriors (numpy).
    decode_fn:    maps a full decoder-side prefix (sos, language,
                  chars...) to a V-vector of next-token log-probs.
    candidates:   character ids to expand over; defaults to every
                  non-special token in the vocabulary.

    Returns nbest results; if nothing finished by max_len, the best
    unfinished hypothesis is returned with truncated=True.
    """
    if candidates is None:
        candidates = vocab.char_ids
    eos = vocab.eos_id
    prefix_head: tuple[int, ...] = (vocab.sos_id,)
    if language is not None:
        prefix_head = (vocab.sos_id, vocab.lang_id(language))

    live = [Hypothesis(tokens=(), ctc_state=ctc_prefix_initial(ctc_log_post),
                       att_logprob=0.0, ctc_logprob=0.0,
                       lambda_ctc=cfg.lambda_ctc)]
    finished: list[Hypothesis] = []

    for _ in range(cfg.max_len + 1):
        if not live:
            break
        extensions: list[Hypothesis] = []
        for hyp in live:
            att_next = decode_fn(prefix_head + hyp.tokens)
            psi, r_new = ctc_prefix_extend_all(ctc_log_post, hyp.ctc_state)
            for c in candidates:
                if len(hyp.tokens) >= cfg.max_len:
                    continue
                extensions.append(Hypothesis(
                    tokens=hyp.tokens + (c,),
                    ctc_state=PrefixState(r=r_new[c], last=int(c),
                                          score=float(psi[c])),
                    att_logprob=hyp.att_logprob + float(att_next[c]),
                    ctc_logprob=float(psi[c]),
                    lambda_ctc=cfg.lambda_ctc))
            finished.append(Hypothesis(
                tokens=hyp.tokens,
                ctc_state=None,
                att_logprob=hyp.att_logprob + float(att_next[eos])
                + cfg.length_penalty * len(hyp.tokens),
                ctc_logprob=ctc_complete_logprob(hyp.ctc_state),
                lambda_ctc=cfg.lambda_ctc,
                finished=True))
        extensions.sort(key=Hypothesis.sort_key)
        live = extensions[: cfg.beam_size]

    finished.sort(key=Hypothesis.sort_key)
    results = [
        BeamResult(tokens=h.tokens, joint=h.joint, ctc=h.ctc_logprob,
                   att=h.att_logprob)
        for h in finished[: cfg.nbest]
    ]
    if not results:
        live.sort(key=Hypothesis.sort_key)
        best = live[0]
        results = [BeamResult(tokens=best.tokens, joint=best.joint,
                              ctc=best.ctc_logprob, att=best.att_logprob,
                              truncated=True)]
    return results


def greedy_transcribe(ctc_log_post: np.ndarray, decode_fn, vocab: Vocab,
                      language: str | None = None,
                      max_len: int = 64) -> BeamResult:
    """Beam search with beam_size=1, nbest=1."""
    cfg = BeamConfig(beam_size=1, nbest=1, max_len=max_len)
    return joint_beam_search(ctc_log_post, decode_fn, vocab, cfg,
                             language=language)[0]
