import subprocess
import sys

import numpy as np
import pytest

from asrkit import kernels
from asrkit.kernels import pure


def random_log_post(rng, frames, vocab):
    logits = rng.normal(size=(frames, vocab))
    return logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))


compiled = pytest.importorskip("asrkit.kernels._ctc_ext",
                               reason="compiled backend not built")


@pytest.mark.parametrize("trial", range(20))
def test_ctc_loss_grad_backends_agree(trial):
    rng = np.random.default_rng(100 + trial)
    frames = int(rng.integers(4, 30))
    vocab = int(rng.integers(2, 8))
    labels = rng.integers(1, vocab, size=rng.integers(1, 4)).astype(np.int64)
    # keep the label fit feasible
    if frames < 2 * len(labels) + 1:
        frames = 2 * len(labels) + 1
    lp = random_log_post(rng, frames, vocab)
    loss_p, grad_p = pure.ctc_loss_grad(lp, labels)
    loss_c, grad_c = compiled.ctc_loss_grad(lp, labels)
    assert abs(loss_p - loss_c) < 1e-12
    np.testing.assert_allclose(grad_p, grad_c, atol=1e-12)


@pytest.mark.parametrize("trial", range(20))
def test_prefix_backends_agree(trial):
    rng = np.random.default_rng(200 + trial)
    frames = int(rng.integers(2, 20))
    vocab = int(rng.integers(2, 7))
    lp = random_log_post(rng, frames, vocab)
    r_prev = np.full((frames, 2), -np.inf)
    r_prev[:, 1] = np.cumsum(lp[:, 0])
    for last, empty in ((0, True), (1, False)):
        psi_p, rn_p = pure.ctc_prefix_all(lp, last, r_prev, empty)
        psi_c, rn_c = compiled.ctc_prefix_all(lp, last, r_prev, empty)
        np.testing.assert_allclose(psi_p, psi_c, atol=1e-12)
        np.testing.assert_allclose(rn_p, rn_c, atol=1e-12)


@pytest.mark.parametrize("trial", range(30))
def test_edit_counts_backends_agree(trial):
    rng = np.random.default_rng(300 + trial)
    ref = rng.integers(0, 4, size=rng.integers(0, 10)).tolist()
    hyp = rng.integers(0, 4, size=rng.integers(0, 10)).tolist()
    assert pure.edit_counts(ref, hyp) == compiled.edit_counts(ref, hyp)


def test_pure_env_var_selects_fallback():
    code = ("from asrkit import kernels; "
            "print(kernels.BACKEND)")
    out = subprocess.run([sys.executable, "-c", code],
                         env={"ASRKIT_PURE": "1", "PATH": "/usr/bin"},
                         capture_output=True, text=True)
    assert out.returncode == 0, out.stderr
    assert out.stdout.strip() == "pure"


def test_default_backend_reported():
    assert kernels.BACKEND in ("pure", "compiled")
    assert kernels.ctc_loss_grad is not None
    assert kernels.ctc_prefix_all is not None
    assert kernels.edit_counts is not None
