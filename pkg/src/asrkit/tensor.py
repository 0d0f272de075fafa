"""Dense tensors with reverse-mode automatic differentiation.

Design notes:
  * Storage is a row-major numpy array, float32 for training and float64
    for numerical-oracle tests; ops preserve the input dtype.
  * The graph is built from per-output op records (op name, inputs,
    backward rule).  backward() computes a depth-first postorder from the
    loss, which is a topological order, and visits each node exactly once.
  * Gradients accumulate additively into .grad; calling backward twice
    without zero_grad doubles the gradient, matching standard loops.
  * Only registered primitives may appear in a graph; attempting to
    record an unregistered op raises GraphConstructionError.  Other
    modules may register their own ops (the CTC loss does).
"""

import threading
from contextlib import contextmanager

import numpy as np

from .errors import GraphConstructionError

_FLOAT_DTYPES = (np.float32, np.float64)

_PRIMITIVES: set[str] = set()


def register_primitive(name: str) -> None:
    """Add an op name to the registry of graph-legal primitives."""
    _PRIMITIVES.add(name)


def registered_primitives() -> frozenset[str]:
    return frozenset(_PRIMITIVES)


for _name in (
    "matmul", "add", "mul", "softmax", "log_softmax", "layer_norm",
    "conv1d", "depthwise_conv1d", "glu", "sigmoid", "swish", "relu",
    "embedding", "concat", "slice", "sum", "mean", "cross_entropy",
    "dropout", "transpose", "reshape",
):
    register_primitive(_name)


_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference mode)."""
    prev = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled()


class _OpRecord:
    """One applied primitive: inputs and the backward rule for its output."""

    __slots__ = ("op", "inputs", "backward")

    def __init__(self, op, inputs, backward):
        self.op = op
        self.inputs = inputs
        self.backward = backward


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_entry")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._entry = None

    # -- introspection ----------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    def zero_grad(self):
        self.grad = None

    def item(self) -> float:
        if self.data.size != 1:
            raise GraphConstructionError(
                f"item() needs a single element, got shape {self.data.shape}")
        return float(self.data.reshape(()))

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, _as_tensor(other, self))

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, _as_tensor(other, self))

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, _as_tensor(-1.0, self))

    def __sub__(self, other):
        return add(self, -_as_tensor(other, self))

    def __rsub__(self, other):
        return add(_as_tensor(other, self), -self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return slice_(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def _as_tensor(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.dtype))


def constant(data, dtype=None) -> Tensor:
    arr = np.asarray(data)
    if dtype is not None:
        arr = arr.astype(dtype)
    return Tensor(arr)


def apply_primitive(name, inputs, out_data, backward) -> Tensor:
    """Record one primitive application and return its output tensor."""
    if name not in _PRIMITIVES:
        raise GraphConstructionError(f"unregistered primitive: {name!r}")
    needs = _grad_enabled() and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs)
    if needs:
        out._entry = _OpRecord(name, tuple(inputs), backward)
    return out


def backward(loss: Tensor) -> None:
    """Accumulate dLoss/dx into .grad for every requires_grad tensor
    reachable from the scalar loss."""
    if loss.data.size != 1:
        raise GraphConstructionError(
            f"backward needs a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        raise GraphConstructionError(
            "loss does not require grad; it is not connected to any parameters")

    # Depth-first postorder over the op graph (iterative: graphs get deep).
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        if node._entry is not None:
            for parent in node._entry.inputs:
                if id(parent) not in seen and parent.requires_grad:
                    stack.append((parent, False))

    messages: dict[int, np.ndarray] = {
        id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = messages.pop(id(node), None)
        if g is None:
            continue
        if node.grad is None:
            node.grad = g.copy()
        else:
            node.grad = node.grad + g
        entry = node._entry
        if entry is None:
            continue
        grads_in = entry.backward(g)
        for parent, gi in zip(entry.inputs, grads_in):
            if gi is None or not parent.requires_grad:
                continue
            gi = np.asarray(gi, dtype=parent.data.dtype)
            if gi.shape != parent.data.shape:
                gi = gi.reshape(parent.data.shape)
            acc = messages.get(id(parent))
            messages[id(parent)] = gi if acc is None else acc + gi


# ---------------------------------------------------------------------------
# primitive implementations
# ---------------------------------------------------------------------------


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum grad over axes that were broadcast to reach grad.shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise GraphConstructionError(
            f"matmul shape mismatch: {a.shape} x {b.shape}")
    out = a.data @ b.data
    ad, bd = a.data, b.data

    def bwd(g):
        return g @ bd.T, ad.T @ g

    return apply_primitive("matmul", (a, b), out, bwd)


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data + b.data
    except ValueError:
        raise GraphConstructionError(
            f"add shape mismatch: {a.shape} + {b.shape}") from None
    ash, bsh = a.data.shape, b.data.shape

    def bwd(g):
        return _unbroadcast(g, ash), _unbroadcast(g, bsh)

    return apply_primitive("add", (a, b), out, bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data * b.data
    except ValueError:
        raise GraphConstructionError(
            f"mul shape mismatch: {a.shape} * {b.shape}") from None
    ad, bd = a.data, b.data

    def bwd(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return apply_primitive("mul", (a, b), out, bwd)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if np.isnan(x.data).any():
        raise FloatingPointError("softmax input contains NaN")
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / np.sum(e, axis=axis, keepdims=True)

    def bwd(g):
        dot = np.sum(g * out, axis=axis, keepdims=True)
        return ((g - dot) * out,)

    return apply_primitive("softmax", (x,), out, bwd)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    if np.isnan(x.data).any():
        raise FloatingPointError("log_softmax input contains NaN")
    m = np.max(x.data, axis=axis, keepdims=True)
    shifted = x.data - m
    lse = np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)

    def bwd(g):
        return (g - soft * np.sum(g, axis=axis, keepdims=True),)

    return apply_primitive("log_softmax", (x,), out, bwd)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise GraphConstructionError(
            f"layer_norm affine shape mismatch: x {x.shape}, "
            f"gamma {gamma.shape}, beta {beta.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = xhat * gamma.data + beta.data
    gd = gamma.data

    def bwd(g):
        dxhat = g * gd
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = (dxhat - m1 - xhat * m2) * inv
        reduce_axes = tuple(range(g.ndim - 1))
        dgamma = (g * xhat).sum(axis=reduce_axes)
        dbeta = g.sum(axis=reduce_axes)
        return dx, dgamma, dbeta

    return apply_primitive("layer_norm", (x, gamma, beta), out, bwd)


def _same_pad(T: int, kernel: int, stride: int) -> tuple[int, int, int]:
    out_len = -(-T // stride)
    total = max((out_len - 1) * stride + kernel - T, 0)
    left = total // 2
    return out_len, left, total - left


def conv1d(x: Tensor, w: Tensor, bias: Tensor | None = None,
           stride: int = 1) -> Tensor:
    """1-D convolution over time with same-padding: (T, Cin) -> (ceil(T/stride), Cout).

    Weight layout is (kernel, Cin, Cout).
    """
    if x.ndim != 2 or w.ndim != 3 or x.shape[1] != w.shape[1]:
        raise GraphConstructionError(
            f"conv1d shape mismatch: x {x.shape}, w {w.shape}")
    T, cin = x.shape
    K, _, cout = w.shape
    out_len, pl, pr = _same_pad(T, K, stride)
    xp = np.zeros((T + pl + pr, cin), dtype=x.dtype)
    xp[pl:pl + T] = x.data
    idx = np.arange(out_len) * stride
    windows = np.stack([xp[idx + k] for k in range(K)], axis=1)  # (out, K, cin)
    out = np.tensordot(windows, w.data, axes=([1, 2], [0, 1]))
    if bias is not None:
        if bias.shape != (cout,):
            raise GraphConstructionError(
                f"conv1d bias shape mismatch: {bias.shape} for Cout={cout}")
        out = out + bias.data
    inputs = (x, w) if bias is None else (x, w, bias)
    wd = w.data

    def bwd(g):
        gw = np.tensordot(windows, g, axes=([0], [0]))  # (K, cin, cout)
        gxp = np.zeros_like(xp)
        for k in range(K):
            np.add.at(gxp, idx + k, g @ wd[k].T)
        gx = gxp[pl:pl + T]
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    return apply_primitive("conv1d", inputs, out, bwd)


def depthwise_conv1d(x: Tensor, w: Tensor, bias: Tensor | None = None) -> Tensor:
    """Per-channel 1-D convolution, stride 1, same-padding.

    Weight layout is (kernel, C).
    """
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise GraphConstructionError(
            f"depthwise_conv1d shape mismatch: x {x.shape}, w {w.shape}")
    T, C = x.shape
    K = w.shape[0]
    _, pl, pr = _same_pad(T, K, 1)
    xp = np.zeros((T + pl + pr, C), dtype=x.dtype)
    xp[pl:pl + T] = x.data
    windows = np.stack([xp[k:k + T] for k in range(K)], axis=1)  # (T, K, C)
    out = np.einsum("tkc,kc->tc", windows, w.data)
    if bias is not None:
        if bias.shape != (C,):
            raise GraphConstructionError(
                f"depthwise_conv1d bias shape mismatch: {bias.shape} for C={C}")
        out = out + bias.data
    inputs = (x, w) if bias is None else (x, w, bias)
    wd = w.data

    def bwd(g):
        gw = np.einsum("tkc,tc->kc", windows, g)
        gxp = np.zeros_like(xp)
        for k in range(K):
            gxp[k:k + T] += g * wd[k]
        gx = gxp[pl:pl + T]
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    return apply_primitive("depthwise_conv1d", inputs, out, bwd)


def glu(x: Tensor, axis: int = -1) -> Tensor:
    """Gated linear unit: split x in half along axis, a * sigmoid(b)."""
    n = x.shape[axis]
    if n % 2 != 0:
        raise GraphConstructionError(
            f"glu needs an even extent along axis {axis}, got {n}")
    a, b = np.split(x.data, 2, axis=axis)
    s = _sigmoid_np(b)
    out = a * s

    def bwd(g):
        ga = g * s
        gb = g * a * s * (1.0 - s)
        return (np.concatenate([ga, gb], axis=axis),)

    return apply_primitive("glu", (x,), out, bwd)


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x: Tensor) -> Tensor:
    out = _sigmoid_np(x.data)

    def bwd(g):
        return (g * out * (1.0 - out),)

    return apply_primitive("sigmoid", (x,), out, bwd)


def swish(x: Tensor) -> Tensor:
    s = _sigmoid_np(x.data)
    out = x.data * s
    xd = x.data

    def bwd(g):
        return (g * (s + xd * s * (1.0 - s)),)

    return apply_primitive("swish", (x,), out, bwd)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)
    mask = x.data > 0

    def bwd(g):
        return (g * mask,)

    return apply_primitive("relu", (x,), out, bwd)


def embedding(table: Tensor, ids) -> Tensor:
    """Row lookup: table (V, D) indexed by an integer array -> ids.shape + (D,).

    Doubles as a differentiable row-gather for any matrix-valued tensor.
    """
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise GraphConstructionError("embedding ids must be integers")
    if table.ndim != 2:
        raise GraphConstructionError(
            f"embedding table must be 2-D, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise GraphConstructionError(
            f"embedding id out of range for table with {table.shape[0]} rows")
    out = table.data[ids]
    V, D = table.shape

    def bwd(g):
        gt = np.zeros((V, D), dtype=g.dtype)
        np.add.at(gt, ids.ravel(), g.reshape(-1, D))
        return (gt,)

    return apply_primitive("embedding", (table,), out, bwd)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise GraphConstructionError("concat of an empty list")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise GraphConstructionError(f"concat shape mismatch: {exc}") from None
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return apply_primitive("concat", tuple(tensors), out, bwd)


def slice_(x: Tensor, key) -> Tensor:
    """Slicing with python slice objects (no steps, no fancy indexing)."""
    if not isinstance(key, tuple):
        key = (key,)
    if len(key) > x.ndim:
        raise GraphConstructionError(
            f"slice key has {len(key)} axes for a {x.ndim}-D tensor")
    for k in key:
        if not isinstance(k, slice) or (k.step not in (None, 1)):
            raise GraphConstructionError(
                "slice supports contiguous python slices only")
    out = x.data[key].copy()
    shape = x.data.shape

    def bwd(g):
        gx = np.zeros(shape, dtype=g.dtype)
        gx[key] = g
        return (gx,)

    return apply_primitive("slice", (x,), out, bwd)


def transpose(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise GraphConstructionError(
            f"transpose expects a 2-D tensor, got {x.shape}")
    out = x.data.T.copy()

    def bwd(g):
        return (g.T,)

    return apply_primitive("transpose", (x,), out, bwd)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise GraphConstructionError(
            f"cannot reshape {x.shape} to {shape}") from None
    old = x.data.shape

    def bwd(g):
        return (g.reshape(old),)

    return apply_primitive("reshape", (x,), out.copy(), bwd)


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)
    shape = x.data.shape

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return apply_primitive("sum", (x,), out, bwd)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.data.mean(axis=axis, keepdims=keepdims)
    shape = x.data.shape
    count = x.data.size if axis is None else shape[axis]

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy() / count,)

    return apply_primitive("mean", (x,), out, bwd)


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean negative log-likelihood of integer targets under row softmax."""
    targets = np.asarray(targets)
    if logits.ndim != 2 or targets.ndim != 1 or targets.shape[0] != logits.shape[0]:
        raise GraphConstructionError(
            f"cross_entropy shape mismatch: logits {logits.shape}, "
            f"targets {targets.shape}")
    if targets.size == 0:
        raise GraphConstructionError("cross_entropy on zero targets")
    if targets.min() < 0 or targets.max() >= logits.shape[1]:
        raise GraphConstructionError("cross_entropy target id out of range")
    m = logits.data.max(axis=1, keepdims=True)
    shifted = logits.data - m
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    n = targets.shape[0]
    out = np.asarray(-logp[np.arange(n), targets].mean(), dtype=logits.dtype)
    soft = np.exp(logp)

    def bwd(g):
        gl = soft.copy()
        gl[np.arange(n), targets] -= 1.0
        return (gl * (g / n),)

    return apply_primitive("cross_entropy", (logits,), out, bwd)


def dropout(x: Tensor, p: float, rng: np.random.Generator,
            training: bool) -> Tensor:
    """Inverted dropout; exact identity (same tensor) when not training."""
    if not 0.0 <= p < 1.0:
        raise GraphConstructionError(f"dropout rate must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.dtype)
    scale = 1.0 / (1.0 - p)
    out = x.data * keep * scale

    def bwd(g):
        return (g * keep * scale,)

    return apply_primitive("dropout", (x,), out, bwd)
