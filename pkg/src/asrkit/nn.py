"""Module system and shared neural building blocks."""

import numpy as np

from . import tensor as T
from .errors import CheckpointError, GraphConstructionError
from .tensor import Tensor


def glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int,
           dtype=np.float32) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Module:
    """Base class: tracks parameters, buffers, and train/eval mode.

    Submodules are discovered through instance attributes (including
    lists, tuples, and dicts of modules), so attribute definition order
    fixes parameter order deterministically.
    """

    def __init__(self):
        self._training = True

    @property
    def training(self) -> bool:
        return self._training

    def train(self, flag: bool = True):
        for m in self._walk_modules():
            m._training = flag
        return self

    def eval(self):
        return self.train(False)

    def _walk_modules(self):
        yield self
        for value in self.__dict__.values():
            yield from _modules_in(value)

    def named_parameters(self, prefix: str = ""):
        """Yield (dotted_name, Tensor) for every trainable parameter."""
        for name, value in self.__dict__.items():
            if name.startswith("_"):
                continue
            yield from _named_params_in(value, _join(prefix, name))

    def named_buffers(self, prefix: str = ""):
        """Yield (dotted_name, ndarray) for persistent non-trainable state."""
        for name, value in self.__dict__.items():
            if name.startswith("_"):
                continue
            yield from _named_buffers_in(value, _join(prefix, name))

    def named_state(self, prefix: str = ""):
        """Parameters plus buffers, as numpy arrays, for checkpointing."""
        state = {name: p.data for name, p in self.named_parameters(prefix)}
        state.update(dict(self.named_buffers(prefix)))
        return state

    def load_state(self, arrays: dict[str, np.ndarray], prefix: str = ""):
        """Copy arrays into matching parameters/buffers; ignores extras."""
        for name, p in self.named_parameters(prefix):
            if name in arrays:
                src = arrays[name]
                if src.shape != p.data.shape:
                    raise CheckpointError(
                        f"shape mismatch loading {name}: "
                        f"{src.shape} vs {p.data.shape}")
                p.data = src.astype(p.data.dtype, copy=True)
        buffer_names = {n for n, _ in self.named_buffers(prefix)}
        for name in buffer_names:
            if name in arrays:
                _assign_buffer(self, name, arrays[name], prefix)

    def zero_grad(self):
        for _, p in self.named_parameters():
            p.zero_grad()


class Buffer:
    """Persistent non-trainable array owned by a module (e.g. a codebook)."""

    __slots__ = ("value",)

    def __init__(self, value: np.ndarray):
        self.value = np.asarray(value)


def _join(prefix, name):
    return f"{prefix}.{name}" if prefix else name


def _modules_in(value):
    if isinstance(value, Module):
        yield value
        for sub in value.__dict__.values():
            yield from _modules_in(sub)
    elif isinstance(value, (list, tuple)):
        for item in value:
            yield from _modules_in(item)
    elif isinstance(value, dict):
        for item in value.values():
            yield from _modules_in(item)


def _named_params_in(value, path):
    if isinstance(value, Tensor):
        if value.requires_grad:
            yield path, value
    elif isinstance(value, Module):
        yield from value.named_parameters(path)
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _named_params_in(item, f"{path}.{i}")
    elif isinstance(value, dict):
        for key in sorted(value, key=str):
            yield from _named_params_in(value[key], f"{path}.{key}")


def _named_buffers_in(value, path):
    if isinstance(value, Buffer):
        yield path, value.value
    elif isinstance(value, Module):
        yield from value.named_buffers(path)
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _named_buffers_in(item, f"{path}.{i}")
    elif isinstance(value, dict):
        for key in sorted(value, key=str):
            yield from _named_buffers_in(value[key], f"{path}.{key}")


def _assign_buffer(module, dotted, array, prefix):
    rel = dotted[len(prefix) + 1:] if prefix else dotted
    parts = rel.split(".")
    obj = module
    for part in parts[:-1]:
        if isinstance(obj, Module):
            obj = obj.__dict__[part]
        elif isinstance(obj, (list, tuple)):
            obj = obj[int(part)]
        elif isinstance(obj, dict):
            key = part
            if key not in obj:
                key = int(part)
            obj = obj[key]
    leaf = parts[-1]
    holder = obj.__dict__[leaf] if isinstance(obj, Module) else obj[leaf]
    holder.value = np.asarray(array).astype(holder.value.dtype, copy=True)


def parameter(data: np.ndarray) -> Tensor:
    return Tensor(np.asarray(data, dtype=np.float32), requires_grad=True)


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int,
                 rng: np.random.Generator | None = None,
                 bias: bool = True, zero_init: bool = False):
        super().__init__()
        if zero_init:
            if rng is not None:
                # burn the draw so sibling layers built from the same
                # stream initialize identically with or without zeroing
                glorot(rng, (in_dim, out_dim), in_dim, out_dim)
            w = np.zeros((in_dim, out_dim), dtype=np.float32)
        else:
            if rng is None:
                raise GraphConstructionError("Linear needs an rng unless zero_init")
            w = glorot(rng, (in_dim, out_dim), in_dim, out_dim)
        self.weight = parameter(w)
        self.bias = parameter(np.zeros(out_dim, dtype=np.float32)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = T.matmul(x, self.weight)
        if self.bias is not None:
            out = out + self.bias
        return out


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.gamma = parameter(np.ones(dim, dtype=np.float32))
        self.beta = parameter(np.zeros(dim, dtype=np.float32))
        self._eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, eps=self._eps)


class Embedding(Module):
    def __init__(self, num_rows: int, dim: int, rng: np.random.Generator):
        super().__init__()
        scale = 1.0 / np.sqrt(dim)
        self.table = parameter(
            rng.normal(0.0, scale, size=(num_rows, dim)).astype(np.float32))

    def __call__(self, ids) -> Tensor:
        return T.embedding(self.table, ids)


class Dropout(Module):
    """Train-time dropout; identity in eval mode.

    The trainer reseeds .rng each step so draws depend only on
    (seed, stage, step), never on call history.
    """

    def __init__(self, p: float = 0.0):
        super().__init__()
        self.p = p
        self.rng = np.random.default_rng(0)

    def __call__(self, x: Tensor) -> Tensor:
        return T.dropout(x, self.p, self.rng, self._training)


class FeedForward(Module):
    """Position-wise feed-forward: Linear -> swish -> dropout -> Linear."""

    def __init__(self, dim: int, hidden: int, rng: np.random.Generator,
                 dropout: float = 0.0, zero_out: bool = False):
        super().__init__()
        self.lin1 = Linear(dim, hidden, rng)
        self.lin2 = Linear(hidden, dim, rng, zero_init=zero_out)
        self.drop = Dropout(dropout)

    def __call__(self, x: Tensor) -> Tensor:
        return self.lin2(self.drop(T.swish(self.lin1(x))))


class MultiHeadAttention(Module):
    """Multi-head scaled dot-product attention over single utterances.

    Self-attention may add a learned relative-position bias (one scalar
    per clipped offset and head, zero-initialized) and a causal mask.
    Cross-attention passes a separate key/value sequence and uses neither.
    """

    def __init__(self, dim: int, heads: int, rng: np.random.Generator,
                 causal: bool = False, rel_bias_radius: int | None = None,
                 dropout: float = 0.0, zero_out: bool = False):
        super().__init__()
        if dim % heads != 0:
            raise GraphConstructionError(
                f"attention dim {dim} not divisible by heads {heads}")
        self.heads = heads
        self.head_dim = dim // heads
        self.causal = causal
        self.rel_radius = rel_bias_radius
        self.wq = Linear(dim, dim, rng)
        self.wk = Linear(dim, dim, rng)
        self.wv = Linear(dim, dim, rng)
        self.wo = Linear(dim, dim, rng, zero_init=zero_out)
        if rel_bias_radius is not None:
            self.rel_table = parameter(
                np.zeros((2 * rel_bias_radius + 1, heads), dtype=np.float32))
        else:
            self.rel_table = None
        self.drop = Dropout(dropout)

    def __call__(self, x: Tensor, kv: Tensor | None = None) -> Tensor:
        source = x if kv is None else kv
        q = self.wq(x)
        k = self.wk(source)
        v = self.wv(source)
        tq, tk = q.shape[0], k.shape[0]
        scale = 1.0 / np.sqrt(self.head_dim)

        bias3 = None
        if self.rel_table is not None and kv is None:
            offsets = np.arange(tk)[None, :] - np.arange(tq)[:, None]
            ids = np.clip(offsets, -self.rel_radius, self.rel_radius) \
                + self.rel_radius
            bias3 = T.embedding(self.rel_table, ids)  # (tq, tk, heads)

        mask = None
        if self.causal:
            mask = T.constant(
                np.triu(np.full((tq, tk), -1e9, dtype=q.dtype), k=1))

        outs = []
        for h in range(self.heads):
            lo, hi = h * self.head_dim, (h + 1) * self.head_dim
            qh = q[:, lo:hi]
            kh = k[:, lo:hi]
            vh = v[:, lo:hi]
            scores = T.matmul(qh, T.transpose(kh)) * scale
            if bias3 is not None:
                scores = scores + T.reshape(bias3[:, :, h:h + 1], (tq, tk))
            if mask is not None:
                scores = scores + mask
            attn = self.drop(T.softmax(scores, axis=-1))
            outs.append(T.matmul(attn, vh))
        return self.wo(T.concat(outs, axis=1))


def sinusoidal_positions(length: int, dim: int,
                         dtype=np.float32) -> np.ndarray:
    """Fixed sin/cos position table (length, dim)."""
    pos = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(dim // 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * i / dim)
    table = np.zeros((length, dim), dtype=np.float64)
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle[:, : dim - dim // 2])
    return table.astype(dtype)
