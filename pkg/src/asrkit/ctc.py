"""CTC: loss, collapse rule, greedy decoding, and prefix scoring.

The loss is a registered autodiff primitive backed by the kernel layer
(compiled when available).  Prefix scoring is pure inference math used
by the joint beam search; it carries per-hypothesis state arrays.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ImpossibleAlignmentError, ValidationError
from .tensor import Tensor, apply_primitive, register_primitive

register_primitive("ctc_loss")


def min_frames(labels) -> int:
    """Fewest frames that admit an alignment: one per label plus one
    blank between each adjacent repeat."""
    labels = np.asarray(labels)
    if labels.size == 0:
        return 0
    repeats = int(np.sum(labels[1:] == labels[:-1]))
    return int(labels.size) + repeats


def ctc_loss(log_post: Tensor, labels) -> Tensor:
    """Negative log-probability of `labels` under the CTC model.

    log_post: (T, V) log-posteriors with blank at id 0.
    labels:   integer ids, none of them blank.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1:
        raise ValidationError("labels must be a 1-D id sequence")
    if labels.size and (labels.min() < 1 or labels.max() >= log_post.shape[1]):
        raise ValidationError(
            "labels must be non-blank ids within the vocabulary")
    T = log_post.shape[0]
    need = min_frames(labels)
    if T < need:
        raise ImpossibleAlignmentError(
            f"label of length {labels.size} needs at least {need} frames, "
            f"got {T}")
    loss_val, grad = kernels.ctc_loss_grad(
        log_post.data.astype(np.float64, copy=False), labels)
    out = np.asarray(loss_val, dtype=log_post.dtype)

    def bwd(g):
        return (g * grad.astype(log_post.dtype, copy=False),)

    return apply_primitive("ctc_loss", (log_post,), out, bwd)


def ctc_collapse(frame_ids) -> list[int]:
    """Collapse consecutive repeats, then remove blanks."""
    out = []
    prev = None
    for i in frame_ids:
        i = int(i)
        if i != prev:
            if i != 0:
                out.append(i)
            prev = i
    return out


def ctc_greedy(log_post: np.ndarray) -> list[int]:
    """Per-frame argmax (ties break to the lowest id), then collapse."""
    path = np.argmax(log_post, axis=1)
    return ctc_collapse(path)


@dataclass
class PrefixState:
    """CTC prefix-scoring state for one hypothesis prefix.

    r[t, 0] / r[t, 1] are the log-probabilities that frames 0..t emit
    exactly this prefix with the last frame non-blank / blank.
    """

    r: np.ndarray            # (T, 2) float64
    last: int                # final token id, -1 for the empty prefix
    score: float             # log prefix probability

    @property
    def empty(self) -> bool:
        return self.last < 0


def ctc_prefix_initial(log_post: np.ndarray) -> PrefixState:
    """State of the empty prefix: any run of blanks emits it."""
    log_post = np.asarray(log_post, dtype=np.float64)
    T = log_post.shape[0]
    r = np.full((T, 2), -np.inf)
    r[:, 1] = np.cumsum(log_post[:, 0])
    return PrefixState(r=r, last=-1, score=0.0)


def ctc_prefix_extend_all(log_post: np.ndarray, state: PrefixState):
    """Score every one-token extension of a prefix.

    Returns (psi: (V,) log prefix scores, r_new: (V, T, 2) state arrays).
    The blank column is meaningless (prefixes never contain blank).
    """
    return kernels.ctc_prefix_all(
        np.asarray(log_post, dtype=np.float64), state.last, state.r,
        state.empty)


def prefix_score_extend(log_post: np.ndarray, state: PrefixState,
                        token: int) -> PrefixState:
    """Extend a prefix by one non-blank token."""
    if token == 0:
        raise ImpossibleAlignmentError("cannot extend a prefix by blank")
    psi, r_new = ctc_prefix_extend_all(log_post, state)
    return PrefixState(r=r_new[token], last=int(token),
                       score=float(psi[token]))


def ctc_complete_logprob(state: PrefixState) -> float:
    """Log-probability that the CTC output equals the prefix exactly."""
    T = state.r.shape[0]
    return float(np.logaddexp(state.r[T - 1, 0], state.r[T - 1, 1]))
