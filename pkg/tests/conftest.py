"""Shared fixtures: a small bilingual corpus, one pretraining run, and
one full curriculum run reused by every test that needs a trained model."""

import json
import os
import sys
import time

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from asrkit.curriculum import build_stage_plan, run_curriculum
from asrkit.data import (LanguageSpec, SyntheticSpec, gen_synthetic_corpus,
                           load_features, load_manifest, save_manifest)
from asrkit.decoder import DecoderConfig
from asrkit.encoder import EncoderConfig
from asrkit.model import AsrModel, ModelConfig
from asrkit.ssl import Frontend, SslConfig, pretrain
from asrkit.vocab import load_vocab

# languages share the characters c and d so adaptation has something to do
CORPUS_SPEC = dict(
    languages=(LanguageSpec("en", "abcd", 0.012),
               LanguageSpec("de", "cdef", 0.012)),
    feature_dim=8,
    tokens_per_second=5,
    noise_std=0.05,
    template_scale=1.5,
    seed=11,
    utt_min_sec=1.2,
    utt_max_sec=2.4,
)

FRONTEND_CFG = dict(input_dim=8, hidden_dim=32, num_blocks=2,
                    attention_heads=2, mask_prob=0.12, mask_span=4,
                    codebook_size=8, dropout=0.1)
ENCODER_CFG = dict(input_dim=32, hidden_dim=32, num_blocks=2,
                   attention_heads=2, cgmlp_units=32, dropout=0.1)
DECODER_CFG = dict(hidden_dim=32, num_layers=1, attention_heads=2,
                   dropout=0.4)
PRETRAIN_STEPS = 300
CURRICULUM_STEPS_SCALE = 1.5
TRAIN_UTTS_PER_LANG = 10
HELD_UTTS_PER_LANG = 3


@pytest.fixture(scope="session")
def toy_corpus(tmp_path_factory):
    """Bilingual synthetic corpus split into 20 train + 6 held-out."""
    root = tmp_path_factory.mktemp("corpus")
    spec = SyntheticSpec(**CORPUS_SPEC)
    manifest, vocab_path, hours_path = gen_synthetic_corpus(spec, str(root))
    utts = load_manifest(manifest)
    by_lang = {}
    for u in utts:
        by_lang.setdefault(u.language, []).append(u)
    train, held = [], []
    for lang in sorted(by_lang):
        train.extend(by_lang[lang][:TRAIN_UTTS_PER_LANG])
        held.extend(by_lang[lang][TRAIN_UTTS_PER_LANG:
                                  TRAIN_UTTS_PER_LANG + HELD_UTTS_PER_LANG])
    train_manifest = str(root / "train.jsonl")
    save_manifest(train_manifest, train)
    return {
        "root": str(root),
        "spec": spec,
        "manifest": manifest,
        "train_manifest": train_manifest,
        "vocab_path": vocab_path,
        "hours_path": hours_path,
        "train": train,
        "held": held,
    }


@pytest.fixture(scope="session")
def pretrain_run(toy_corpus):
    """300-step self-supervised run; returns the frontend, its per-step
    metrics, and the wall time."""
    feats = [load_features(toy_corpus["manifest"], u)
             for u in toy_corpus["train"]]
    frontend = Frontend(SslConfig(**FRONTEND_CFG), seed=3)
    start = time.time()
    history = pretrain(frontend, feats, steps=PRETRAIN_STEPS, seed=3)
    elapsed = time.time() - start
    return {"frontend": frontend, "history": history, "feats": feats,
            "elapsed": elapsed, "steps": PRETRAIN_STEPS}


@pytest.fixture(scope="session")
def trained_run(toy_corpus, pretrain_run, tmp_path_factory):
    """One 7-stage toy curriculum over the 20 training utterances.

    Shared by the curriculum-contract and overfit tests; the trained
    model must not be mutated (reload from final_dir for that).
    """
    out_dir = str(tmp_path_factory.mktemp("curriculum"))
    vocab = load_vocab(toy_corpus["vocab_path"])
    cfg = ModelConfig(frontend=SslConfig(**FRONTEND_CFG),
                      encoder=EncoderConfig(**ENCODER_CFG),
                      decoder=DecoderConfig(**DECODER_CFG),
                      seed=7)
    model = AsrModel(cfg, vocab)
    model.frontend.load_state(pretrain_run["frontend"].named_state())
    plan = build_stage_plan("toy", sorted(vocab.languages),
                            steps_scale=CURRICULUM_STEPS_SCALE,
                            batch_max_frames=400)
    start = time.time()
    result = run_curriculum(model, toy_corpus["train"],
                            toy_corpus["train_manifest"], plan, seed=7,
                            out_dir=out_dir)
    elapsed = time.time() - start
    metrics = [json.loads(line) for line in open(result.metrics_path)]
    return {"model": model, "result": result, "plan": plan, "cfg": cfg,
            "vocab": vocab, "metrics": metrics, "elapsed": elapsed,
            "out_dir": out_dir, "seed": 7}
