import numpy as np
import pytest

from asrkit.adapt import (LanguageMask, apply_adaptation,
                            build_language_mask, neutral_mask)
from asrkit.errors import ValidationError
from asrkit.vocab import build_vocab


@pytest.fixture
def vocab():
    return build_vocab({"en": "abcd", "de": "cdef"})


def rows(rng, n, v):
    logits = rng.normal(size=(n, v))
    return logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))


def test_neutral_mask_is_identity_object(vocab):
    rng = np.random.default_rng(0)
    lp = rows(rng, 5, vocab.size)
    mask = neutral_mask(vocab)
    assert mask.neutral
    out = apply_adaptation(lp, mask)
    assert out is lp


def test_language_mask_keeps_blank_and_charset(vocab):
    mask = build_language_mask("en", vocab, epsilon=1e-4)
    assert not mask.neutral
    w = mask.weights
    assert w[vocab.blank_id] == 1.0
    for ch in "abcd":
        assert w[vocab.id_of(ch)] == 1.0
    for ch in "ef":
        assert w[vocab.id_of(ch)] == pytest.approx(1e-4)


def test_adapted_rows_stay_normalized(vocab):
    rng = np.random.default_rng(1)
    lp = rows(rng, 7, vocab.size)
    out = apply_adaptation(lp, build_language_mask("de", vocab))
    np.testing.assert_allclose(np.exp(out).sum(axis=1), np.ones(7),
                               rtol=1e-6)


def test_adaptation_shrinks_disallowed_mass(vocab):
    rng = np.random.default_rng(2)
    lp = rows(rng, 6, vocab.size)
    out = apply_adaptation(lp, build_language_mask("en", vocab,
                                                   epsilon=1e-4))
    disallowed = [vocab.id_of("e"), vocab.id_of("f")]
    before = np.exp(lp)[:, disallowed].sum()
    after = np.exp(out)[:, disallowed].sum()
    assert after < before * 1e-2


def test_allowed_ratios_preserved(vocab):
    """Within the allowed set the reweighting cancels in the
    renormalization, so probability ratios survive."""
    rng = np.random.default_rng(3)
    lp = rows(rng, 4, vocab.size)
    out = apply_adaptation(lp, build_language_mask("en", vocab))
    a, b = vocab.id_of("a"), vocab.id_of("b")
    np.testing.assert_allclose(out[:, a] - out[:, b], lp[:, a] - lp[:, b],
                               atol=1e-9)


def test_epsilon_bounds(vocab):
    with pytest.raises(ValidationError):
        build_language_mask("en", vocab, epsilon=0.0)
    with pytest.raises(ValidationError):
        build_language_mask("en", vocab, epsilon=1.0)
    with pytest.raises(ValidationError):
        build_language_mask("en", vocab, epsilon=-1e-3)


def test_unknown_language_rejected(vocab):
    with pytest.raises(ValidationError):
        build_language_mask("xx", vocab)


def test_mask_validation(vocab):
    v = vocab.size
    bad_blank = np.full(v, 1.0)
    bad_blank[0] = 0.5
    with pytest.raises(ValidationError):
        LanguageMask(language="en", weights=bad_blank)
    zeros = np.full(v, 1.0)
    zeros[3] = 0.0
    with pytest.raises(ValidationError):
        LanguageMask(language="en", weights=zeros)
    no_allowed = np.full(v, 0.5)
    no_allowed[0] = 1.0
    with pytest.raises(ValidationError):
        LanguageMask(language="en", weights=no_allowed)


def test_shape_mismatch_rejected(vocab):
    rng = np.random.default_rng(4)
    lp = rows(rng, 3, vocab.size + 1)
    with pytest.raises(ValidationError):
        apply_adaptation(lp, build_language_mask("en", vocab))


def test_dtype_preserved(vocab):
    rng = np.random.default_rng(5)
    lp = rows(rng, 3, vocab.size).astype(np.float32)
    out = apply_adaptation(lp, build_language_mask("en", vocab))
    assert out.dtype == np.float32
