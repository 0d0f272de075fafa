"""Joint beam search against exhaustive enumeration, plus behavior on a
trained model."""

import numpy as np
import pytest

from oracles import joint_brute_force, seeded_decode_fn, tiny_vocab
from asrkit.beam import BeamConfig, greedy_transcribe, joint_beam_search
from asrkit.data import load_features
from asrkit.errors import ValidationError


def rand_log_post(rng, t=4, v=3):
    rows = rng.normal(size=(t, v))
    return rows - np.logaddexp.reduce(rows, axis=1, keepdims=True)


def exhaustive_cfg(lambda_ctc, max_len=4):
    # beam wide enough to hold every prefix of every length
    return BeamConfig(beam_size=32, lambda_ctc=lambda_ctc, max_len=max_len)


@pytest.mark.parametrize("lambda_ctc", [0.3, 0.0, 1.0])
def test_exhaustive_beam_matches_brute_force(lambda_ctc):
    vocab = tiny_vocab()
    for trial in range(30):
        rng = np.random.default_rng(1000 + trial)
        log_post = rand_log_post(rng)
        decode_fn = seeded_decode_fn(trial, vocab.size)
        got = joint_beam_search(log_post, decode_fn, vocab,
                                exhaustive_cfg(lambda_ctc))[0]
        seq, joint, ctc, att = joint_brute_force(
            log_post, decode_fn, vocab, lambda_ctc, max_len=4)
        assert got.tokens == seq, trial
        assert got.joint == pytest.approx(joint, abs=1e-9)
        assert got.ctc == pytest.approx(ctc, abs=1e-9)
        assert got.att == pytest.approx(att, abs=1e-9)


def test_joint_is_the_declared_mixture():
    vocab = tiny_vocab()
    log_post = rand_log_post(np.random.default_rng(7))
    res = joint_beam_search(log_post, seeded_decode_fn(3, vocab.size),
                            vocab, BeamConfig(beam_size=4, lambda_ctc=0.3,
                                              max_len=4))[0]
    assert res.joint == pytest.approx(0.3 * res.ctc + 0.7 * res.att,
                                      abs=1e-12)


def test_greedy_is_beam_one():
    vocab = tiny_vocab()
    for trial in range(10):
        log_post = rand_log_post(np.random.default_rng(200 + trial))
        decode_fn = seeded_decode_fn(trial, vocab.size)
        g = greedy_transcribe(log_post, decode_fn, vocab, max_len=4)
        b = joint_beam_search(log_post, decode_fn, vocab,
                              BeamConfig(beam_size=1, max_len=4))[0]
        assert g.tokens == b.tokens
        assert g.joint == b.joint


def test_search_is_deterministic():
    vocab = tiny_vocab()
    log_post = rand_log_post(np.random.default_rng(5))
    decode_fn = seeded_decode_fn(9, vocab.size)
    cfg = BeamConfig(beam_size=4, max_len=4, nbest=3)
    a = joint_beam_search(log_post, decode_fn, vocab, cfg)
    b = joint_beam_search(log_post, decode_fn, vocab, cfg)
    assert [(r.tokens, r.joint) for r in a] == [(r.tokens, r.joint)
                                                for r in b]


def test_nbest_is_sorted_and_distinct():
    vocab = tiny_vocab()
    log_post = rand_log_post(np.random.default_rng(6))
    res = joint_beam_search(log_post, seeded_decode_fn(11, vocab.size),
                            vocab, BeamConfig(beam_size=8, max_len=4,
                                              nbest=5))
    assert len(res) == 5
    joints = [r.joint for r in res]
    assert joints == sorted(joints, reverse=True)
    assert len({r.tokens for r in res}) == 5


def test_max_len_zero_returns_the_empty_sequence():
    vocab = tiny_vocab()
    res = joint_beam_search(rand_log_post(np.random.default_rng(8)),
                            seeded_decode_fn(2, vocab.size), vocab,
                            BeamConfig(beam_size=4, max_len=0))[0]
    assert res.tokens == ()
    assert not res.truncated


@pytest.mark.parametrize("bad", [
    dict(lambda_ctc=-0.1), dict(lambda_ctc=1.1), dict(beam_size=0),
    dict(nbest=0), dict(beam_size=2, nbest=3),
])
def test_config_validation(bad):
    with pytest.raises(ValidationError):
        BeamConfig(**bad)


def test_language_prompt_reaches_the_decoder():
    from asrkit.vocab import build_vocab
    vocab = build_vocab({"xx": "ab"})
    calls = []
    base = seeded_decode_fn(4, vocab.size)

    def spy(prefix):
        calls.append(tuple(int(p) for p in prefix))
        return base(prefix)

    log_post = rand_log_post(np.random.default_rng(9), v=vocab.size)
    joint_beam_search(log_post, spy, vocab, BeamConfig(beam_size=2,
                                                       max_len=2),
                      language="xx")
    head = (vocab.sos_id, vocab.lang_id("xx"))
    assert all(c[:2] == head for c in calls)
    calls.clear()
    joint_beam_search(log_post, spy, vocab, BeamConfig(beam_size=2,
                                                       max_len=2))
    assert all(c[0] == vocab.sos_id and len(c) <= 3 for c in calls)


def test_wider_beam_does_not_lose_joint_score_on_a_trained_model(
        trained_run, toy_corpus):
    model = trained_run["model"]
    deltas = []
    for utt in toy_corpus["train"][:4] + toy_corpus["held"][:4]:
        feat = load_features(toy_corpus["manifest"], utt)
        wide = model.transcribe(feat, BeamConfig(beam_size=4, max_len=24),
                                language=utt.language)[0]
        narrow = model.transcribe(feat, BeamConfig(beam_size=1, max_len=24),
                                  language=utt.language)[0]
        deltas.append(wide.joint - narrow.joint)
    assert np.mean(deltas) >= -1e-9
