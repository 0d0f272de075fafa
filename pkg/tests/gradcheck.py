"""Central finite-difference gradient checking helpers."""

import numpy as np

from asrkit import tensor as T


def numeric_partial(f, arrays, which, index, h=1e-5):
    """Central difference of f w.r.t. arrays[which][index]."""
    plus = [a.copy() for a in arrays]
    minus = [a.copy() for a in arrays]
    plus[which][index] += h
    minus[which][index] -= h
    return (f(plus) - f(minus)) / (2.0 * h)


def check_gradients(build, arrays, tol=1e-5, max_coords=6, seed=0, h=1e-5):
    """Compare reverse-mode gradients of a scalar-valued graph against
    central differences on a subsample of coordinates.

    build: callable taking one Tensor per input array and returning a
    scalar Tensor.  All inputs are checked in 64-bit.
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    tensors = [T.Tensor(a.copy(), requires_grad=True) for a in arrays]
    loss = build(*tensors)
    T.backward(loss)

    def f(values):
        consts = [T.Tensor(v, requires_grad=True) for v in values]
        return build(*consts).item()

    rng = np.random.default_rng(seed)
    worst = 0.0
    for which, tensor in enumerate(tensors):
        grad = tensor.grad
        assert grad is not None, f"input {which} received no gradient"
        size = arrays[which].size
        count = min(max_coords, size)
        flat_picks = rng.choice(size, size=count, replace=False)
        for flat in flat_picks:
            index = np.unravel_index(int(flat), arrays[which].shape)
            num = numeric_partial(f, arrays, which, index, h=h)
            ana = float(grad[index])
            err = abs(ana - num) / max(abs(ana), abs(num), 1.0)
            worst = max(worst, err)
            assert err < tol, (
                f"input {which} coord {index}: analytic {ana:.8g} vs "
                f"numeric {num:.8g} (rel err {err:.3g} >= {tol})")
    return worst
