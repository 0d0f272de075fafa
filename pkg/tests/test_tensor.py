import numpy as np
import pytest

from gradcheck import check_gradients
from asrkit import tensor as T
from asrkit.errors import GraphConstructionError

RNG = np.random.default_rng(42)


def r(*shape):
    return RNG.normal(size=shape)


def test_registry_contains_catalog():
    names = T.registered_primitives()
    for expected in ("matmul", "add", "mul", "softmax", "log_softmax",
                     "layer_norm", "conv1d", "depthwise_conv1d", "glu",
                     "sigmoid", "swish", "relu", "embedding", "concat",
                     "slice", "sum", "mean", "cross_entropy", "dropout",
                     "transpose", "reshape"):
        assert expected in names


def test_unregistered_primitive_rejected():
    x = T.Tensor(r(3), requires_grad=True)
    with pytest.raises(GraphConstructionError):
        T.apply_primitive("no_such_op", [x], x.data.copy(), lambda g: [g])


def test_backward_requires_scalar():
    x = T.Tensor(r(3), requires_grad=True)
    with pytest.raises(GraphConstructionError):
        T.backward(x + x)


def test_backward_requires_grad():
    x = T.constant(r(3))
    y = T.sum_(x * x)
    with pytest.raises(GraphConstructionError):
        T.backward(y)


def test_no_grad_suppresses_graph():
    x = T.Tensor(r(3), requires_grad=True)
    with T.no_grad():
        y = T.sum_(x * x)
    assert not y.requires_grad


def test_grad_accumulates_across_uses():
    x = T.Tensor(np.array([2.0, 3.0]), requires_grad=True)
    y = T.sum_(x * x) + T.sum_(x * x)
    T.backward(y)
    np.testing.assert_allclose(x.grad, 4.0 * x.data)


def test_dtype_preserved():
    for dtype in (np.float32, np.float64):
        x = T.Tensor(r(4, 3).astype(dtype), requires_grad=True)
        y = T.mean(T.softmax(x))
        assert y.data.dtype == dtype
        T.backward(y)
        assert x.grad.dtype == dtype


# multipliers are bound once as default args so every finite-difference
# evaluation sees the same downstream weights
@pytest.mark.parametrize("name,builder,shapes", [
    ("matmul", lambda a, b: T.sum_(a @ b), [(3, 4), (4, 2)]),
    ("add", lambda a, b: T.sum_(a + b), [(3, 4), (3, 4)]),
    ("add_broadcast", lambda a, b: T.sum_(a + b), [(3, 4), (4,)]),
    ("mul", lambda a, b: T.sum_(a * b), [(3, 4), (3, 4)]),
    ("mul_broadcast", lambda a, b: T.sum_(a * b), [(3, 4), (1, 4)]),
    ("sub", lambda a, b: T.sum_(a - b), [(3, 4), (3, 4)]),
    ("neg", lambda a: T.sum_(-a), [(5,)]),
    ("softmax",
     lambda a, m=T.constant(r(3, 5)): T.sum_(T.softmax(a) * m), [(3, 5)]),
    ("log_softmax",
     lambda a, m=T.constant(r(3, 5)): T.sum_(T.log_softmax(a) * m),
     [(3, 5)]),
    ("layer_norm",
     lambda a, g, b, m=T.constant(r(4, 6)):
         T.sum_(T.layer_norm(a, g, b) * m),
     [(4, 6), (6,), (6,)]),
    ("sigmoid",
     lambda a, m=T.constant(r(3, 4)): T.sum_(T.sigmoid(a) * m), [(3, 4)]),
    ("swish",
     lambda a, m=T.constant(r(3, 4)): T.sum_(T.swish(a) * m), [(3, 4)]),
    ("relu",
     lambda a, m=T.constant(r(3, 4)): T.sum_(T.relu(a) * m), [(3, 4)]),
    ("glu",
     lambda a, m=T.constant(r(5, 3)): T.sum_(T.glu(a) * m), [(5, 6)]),
    ("concat",
     lambda a, b, m=T.constant(r(3, 7)):
         T.sum_(T.concat([a, b], axis=1) * m),
     [(3, 4), (3, 3)]),
    ("slice",
     lambda a, m=T.constant(r(2, 3)): T.sum_(a[1:3, 2:5] * m), [(4, 6)]),
    ("sum_axis",
     lambda a, m=T.constant(r(4,)): T.sum_(T.sum_(a, axis=0) * m),
     [(3, 4)]),
    ("mean_all", lambda a: T.mean(a), [(3, 4)]),
    ("mean_axis",
     lambda a, m=T.constant(r(3,)): T.sum_(T.mean(a, axis=1) * m),
     [(3, 4)]),
    ("transpose",
     lambda a, m=T.constant(r(4, 3)): T.sum_(a.transpose() * m), [(3, 4)]),
    ("reshape",
     lambda a, m=T.constant(r(2, 6)): T.sum_(a.reshape(2, 6) * m),
     [(3, 4)]),
])
def test_primitive_gradients(name, builder, shapes):
    check_gradients(builder, [r(*s) for s in shapes], tol=1e-5)


def test_conv1d_gradients():
    m1 = T.constant(r(6, 3))

    def build(x, w, b):
        return T.sum_(T.conv1d(x, w, b, stride=1) * m1)
    check_gradients(build, [r(6, 2), r(3, 2, 3), r(3)], tol=1e-5)

    m2 = T.constant(r(4, 3))

    def build_strided(x, w, b):
        return T.sum_(T.conv1d(x, w, b, stride=2) * m2)
    check_gradients(build_strided, [r(7, 2), r(3, 2, 3), r(3)], tol=1e-5)


def test_depthwise_conv1d_gradients():
    m = T.constant(r(6, 4))

    def build(x, w):
        return T.sum_(T.depthwise_conv1d(x, w) * m)
    check_gradients(build, [r(6, 4), r(3, 4)], tol=1e-5)


def test_embedding_gradients():
    ids = np.array([0, 2, 1, 2], dtype=np.int64)
    m = T.constant(r(4, 5))

    def build(table):
        return T.sum_(T.embedding(table, ids) * m)
    check_gradients(build, [r(3, 5)], tol=1e-5)


def test_cross_entropy_gradients():
    targets = np.array([1, 0, 3], dtype=np.int64)

    def build(logits):
        return T.cross_entropy(logits, targets)
    check_gradients(build, [r(3, 4)], tol=1e-5)


def test_cross_entropy_matches_manual():
    logits = r(5, 7)
    targets = np.array([0, 6, 3, 3, 1], dtype=np.int64)
    loss = T.cross_entropy(T.constant(logits), targets).item()
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    manual = -logp[np.arange(5), targets].mean()
    assert abs(loss - manual) < 1e-12


def test_dropout_eval_is_identity():
    x = T.Tensor(r(10, 4), requires_grad=True)
    y = T.dropout(x, 0.5, np.random.default_rng(0), training=False)
    assert y is x


def test_dropout_backward_matches_mask():
    x = T.Tensor(r(200, 4), requires_grad=True)
    y = T.dropout(x, 0.25, np.random.default_rng(7), training=True)
    kept = y.data != 0.0
    np.testing.assert_allclose(y.data[kept], x.data[kept] / 0.75)
    frac = kept.mean()
    assert 0.6 < frac < 0.9
    T.backward(T.sum_(y * T.constant(np.ones_like(x.data))))
    expected = np.where(kept, 1.0 / 0.75, 0.0)
    np.testing.assert_allclose(x.grad, expected)


def test_matmul_values():
    a, b = r(3, 4), r(4, 5)
    out = (T.constant(a) @ T.constant(b)).data
    np.testing.assert_allclose(out, a @ b, rtol=1e-12)


def test_softmax_rows_normalize():
    p = T.softmax(T.constant(r(6, 9))).data
    np.testing.assert_allclose(p.sum(axis=1), np.ones(6), rtol=1e-12)
    lp = T.log_softmax(T.constant(r(6, 9))).data
    np.testing.assert_allclose(np.exp(lp).sum(axis=1), np.ones(6),
                               rtol=1e-12)
