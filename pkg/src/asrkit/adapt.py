"""Language adaptation of intermediate CTC posteriors.

At inference, a language mask reweights each tap's posterior toward the
target language's token set before the posterior is fed back into the
encoder: weight 1 for blank and the language's characters, a small
epsilon elsewhere, then renormalize.  A weight floor (rather than a hard
zero) keeps log-space math finite, and an all-ones mask is passed
through untouched so the neutral case is bit-exact.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .vocab import Vocab


@dataclass(frozen=True)
class LanguageMask:
    language: str
    weights: np.ndarray  # (V,) in (0, 1], blank weight always 1

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        object.__setattr__(self, "weights", w)
        if w.ndim != 1:
            raise ValidationError("mask weights must be a vector")
        if w[0] != 1.0:
            raise ValidationError("blank weight must be 1")
        if np.any(w <= 0.0) or np.any(w > 1.0):
            raise ValidationError("mask weights must lie in (0, 1]")
        if not np.any(w[1:] == 1.0):
            raise ValidationError(
                "at least one non-blank token must have weight 1")

    @property
    def neutral(self) -> bool:
        return bool(np.all(self.weights == 1.0))


def build_language_mask(language: str, vocab: Vocab,
                        epsilon: float = 1e-4) -> LanguageMask:
    """Weight 1 for blank and the language's charset, epsilon elsewhere."""
    if epsilon <= 0.0:
        raise ValidationError(
            "mask epsilon must be positive: a hard zero can leave a frame "
            "with no renormalizable mass")
    if epsilon >= 1.0:
        raise ValidationError("mask epsilon must be below 1")
    allowed = vocab.charset_ids(language)
    weights = np.full(vocab.size, epsilon, dtype=np.float64)
    weights[vocab.blank_id] = 1.0
    for i in allowed:
        weights[i] = 1.0
    return LanguageMask(language=language, weights=weights)


def neutral_mask(vocab: Vocab, language: str = "") -> LanguageMask:
    return LanguageMask(language=language,
                        weights=np.ones(vocab.size, dtype=np.float64))


def apply_adaptation(tap_log_post: np.ndarray,
                     mask: LanguageMask) -> np.ndarray:
    """Reweight per-frame posteriors by the mask and renormalize.

    Returns log posteriors of the same shape and dtype.  An all-ones
    mask returns the input array unchanged (same object), so the neutral
    case cannot drift by a single bit.
    """
    if tap_log_post.shape[-1] != mask.weights.shape[0]:
        raise ValidationError(
            f"mask has {mask.weights.shape[0]} weights but posteriors "
            f"have {tap_log_post.shape[-1]} tokens")
    if mask.neutral:
        return tap_log_post
    logw = np.log(mask.weights)
    shifted = tap_log_post.astype(np.float64) + logw
    lse = np.logaddexp.reduce(shifted, axis=-1, keepdims=True)
    return (shifted - lse).astype(tap_log_post.dtype)
