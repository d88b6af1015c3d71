"""A small reverse-mode autodiff toolkit on top of numpy.

Only the operations needed by the policy, the discriminators and the
membership-inference attacker are provided. Every op builds a node that
knows how to push its output gradient back to its inputs; ``backward``
walks the graph in reverse topological order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping

import numpy as np

from .core import DomainError

CHECKPOINT_FORMAT = "mobgail-params"
CHECKPOINT_VERSION = 1


class Tensor:
    """Float64 array node in a computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, parents: tuple = (), backward: Callable | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def values(self) -> np.ndarray:
        """Row-major flat view of the data."""
        return self.data.reshape(-1)

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return mul(self, 1.0 / other) if not isinstance(other, Tensor) else div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward) -> Tensor:
    parents = tuple(parents)
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, parents, backward)
    return Tensor(data)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _accumulate(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    t.grad = g if t.grad is None else t.grad + g


# -- elementwise ---------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _node(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _node(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _node(a.data * b.data, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-g * a.data / b.data**2, b.shape))

    return _node(a.data / b.data, (a, b), bw)


def _unary(x: Tensor, out: np.ndarray, dydx: Callable[[], np.ndarray]) -> Tensor:
    def bw(g):
        _accumulate(x, g * dydx())

    return _node(out, (x,), bw)


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return _unary(x, out, lambda: out)


def log(x) -> Tensor:
    x = as_tensor(x)
    return _unary(x, np.log(x.data), lambda: 1.0 / x.data)


def square(x) -> Tensor:
    x = as_tensor(x)
    return _unary(x, x.data**2, lambda: 2.0 * x.data)


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    return _unary(x, out, lambda: 1.0 - out**2)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = _sigmoid(x.data)
    return _unary(x, out, lambda: out * (1.0 - out))


def softplus(x) -> Tensor:
    """log(1 + e^x), stable for large |x|."""
    x = as_tensor(x)
    out = np.logaddexp(0.0, x.data)
    return _unary(x, out, lambda: _sigmoid(x.data))


def clip(x, lo: float, hi: float) -> Tensor:
    x = as_tensor(x)
    return _unary(x, np.clip(x.data, lo, hi), lambda: ((x.data >= lo) & (x.data <= hi)).astype(float))


def minimum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    pick_a = a.data <= b.data

    def bw(g):
        _accumulate(a, _unbroadcast(np.where(pick_a, g, 0.0), a.shape))
        _accumulate(b, _unbroadcast(np.where(pick_a, 0.0, g), b.shape))

    return _node(np.minimum(a.data, b.data), (a, b), bw)


# -- reductions and shape ops -------------------------------------------


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - mirrors numpy
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(x, np.broadcast_to(g, x.shape).copy())

    return _node(out, (x,), bw)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    n = x.data.size if axis is None else x.shape[axis]
    return sum(x, axis=axis, keepdims=keepdims) * (1.0 / n)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)

    def bw(g):
        _accumulate(x, g.reshape(x.shape))

    return _node(x.data.reshape(shape), (x,), bw)


def swapaxes(x, a: int, b: int) -> Tensor:
    x = as_tensor(x)

    def bw(g):
        _accumulate(x, np.swapaxes(g, a, b))

    return _node(np.swapaxes(x.data, a, b), (x,), bw)


def concat(xs: Iterable, axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    sizes = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def bw(g):
        for x, part in zip(xs, np.split(g, sizes, axis=axis)):
            _accumulate(x, part)

    return _node(np.concatenate([x.data for x in xs], axis=axis), xs, bw)


def index(x, idx) -> Tensor:
    """Basic or advanced indexing along any axes."""
    x = as_tensor(x)

    def bw(g):
        full = np.zeros_like(x.data)
        np.add.at(full, idx, g)
        _accumulate(x, full)

    return _node(x.data[idx], (x,), bw)


def scatter_rows(ids: np.ndarray, values: np.ndarray, num_rows: int) -> np.ndarray:
    """out[i] = sum of values[j] over j with ids[j] == i, for a 2-D result."""
    ids = np.asarray(ids, dtype=np.int64).reshape(-1)
    cols = values.shape[-1]
    values = values.reshape(len(ids), cols)
    flat = (ids[:, None] * cols + np.arange(cols)).reshape(-1)
    return np.bincount(flat, weights=values.reshape(-1), minlength=num_rows * cols).reshape(num_rows, cols)


def take_rows(table, ids) -> Tensor:
    """Gather rows of a 2-D table; output shape is ids.shape + (cols,)."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)

    def bw(g):
        _accumulate(table, scatter_rows(ids, g, table.shape[0]))

    return _node(table.data[ids], (table,), bw)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _node(a.data @ b.data, (a, b), bw)


# -- softmax family -----------------------------------------------------


def _softmax(z: np.ndarray, axis: int = -1, mask: np.ndarray | None = None) -> np.ndarray:
    if mask is not None:
        z = np.where(mask, z, -np.inf)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax(x, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Softmax with max subtraction; entries where ``mask`` is False get zero weight."""
    x = as_tensor(x)
    out = _softmax(x.data, axis, mask)

    def bw(g):
        _accumulate(x, out * (g - (g * out).sum(axis=axis, keepdims=True)))

    return _node(out, (x,), bw)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))

    def bw(g):
        _accumulate(x, g - np.exp(out) * g.sum(axis=axis, keepdims=True))

    return _node(out, (x,), bw)


# -- parameters, gradients, optimizer -------------------------------------


class ParameterSet:
    """Named trainable tensors plus their gradient slots."""

    def __init__(self, arrays: Mapping[str, np.ndarray] | None = None):
        self.params: dict[str, Tensor] = {}
        self.grads: dict[str, np.ndarray] = {}
        for name, arr in (arrays or {}).items():
            self.add(name, arr)

    def add(self, name: str, arr) -> Tensor:
        t = Tensor(np.array(arr, dtype=np.float64), requires_grad=True)
        self.params[name] = t
        self.grads[name] = np.zeros_like(t.data)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def __len__(self):
        return len(self.params)

    def items(self):
        return self.params.items()

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.params.items()}

    def copy(self) -> "ParameterSet":
        return ParameterSet(self.arrays())

    def zero_grad(self):
        for name, t in self.params.items():
            t.grad = None
            self.grads[name] = np.zeros_like(t.data)

    def size(self) -> int:
        return int(np.sum([t.data.size for t in self.params.values()]))


def backward(loss: Tensor, params: ParameterSet | None = None) -> dict[str, np.ndarray] | None:
    """Fill gradient slots with d(loss)/d(param) for every parameter reached."""
    if loss.data.size != 1:
        raise DomainError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not np.isfinite(loss.data).all():
        raise FloatingPointError(f"non-finite loss {float(loss.data)}")
    if params is not None:
        for t in params.params.values():
            t.grad = None

    order, seen = [], set()
    stack = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
            if node._parents:
                node.grad = None  # intermediates are not needed after propagation

    if params is None:
        return None
    for name, t in params.params.items():
        params.grads[name] = np.zeros_like(t.data) if t.grad is None else t.grad
    return params.grads


@dataclass
class OptimizerState:
    """Adam moment accumulators."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def optimizer_step(params: ParameterSet, grads: Mapping[str, np.ndarray], state: OptimizerState) -> ParameterSet:
    """One bias-corrected adaptive-moment update, in place."""
    for name, t in params.items():
        if name not in grads:
            raise DomainError(f"missing gradient for {name}")
        if grads[name].shape != t.shape:
            raise DomainError(f"gradient shape {grads[name].shape} != parameter shape {t.shape} for {name}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1**state.step
    corr2 = 1.0 - b2**state.step
    for name, t in params.items():
        g = grads[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(t.data)
            state.v[name] = np.zeros_like(t.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        t.data -= state.lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)
    return params


# -- building blocks ------------------------------------------------------


def embed(ids, table) -> Tensor:
    """Row lookup: row i of the result is table[ids[i]]."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise DomainError(f"embedding ids must lie in [0, {table.shape[0]})")
    return take_rows(table, ids)


def linear(x, w, b=None) -> Tensor:
    out = matmul(x, w)
    return out if b is None else add(out, b)


def attention_weights(x, params: ParameterSet, prefix: str = "attn") -> Tensor:
    """Causal attention weights for a (..., L, d) input; rows sum to one."""
    x = as_tensor(x)
    q = matmul(x, params[f"{prefix}.wq"])
    k = matmul(x, params[f"{prefix}.wk"])
    d = x.shape[-1]
    logits = matmul(q, swapaxes(k, -1, -2)) * (1.0 / math.sqrt(d))
    length = x.shape[-2]
    causal = np.tril(np.ones((length, length), dtype=bool))
    return softmax(logits, axis=-1, mask=causal)


def self_attention(x, params: ParameterSet, prefix: str = "attn") -> Tensor:
    """Single-head causal self-attention with a residual connection.

    ``x`` is (L, d) or (B, L, d); position i attends to positions <= i.
    """
    x = as_tensor(x)
    w = attention_weights(x, params, prefix)
    v = matmul(x, params[f"{prefix}.wv"])
    return add(matmul(w, v), x)


def attend_last(h, windows: np.ndarray, params: ParameterSet, prefix: str = "attn",
                contiguous: bool = False, band: tuple[int, int] | None = None) -> Tensor:
    """Last-position output of ``self_attention`` for many windows at once.

    ``h`` holds one row per token; ``windows`` is an (S, L) index array into
    those rows. The key and value projections are folded into per-window
    vectors, so no token is projected at all, and the backward pass is
    written out by hand, which is what makes large batches cheap. The result equals
    ``self_attention(h[windows[s]])[-1]`` for each s.

    ``contiguous`` promises ``windows == arange(1, S*L + 1).reshape(S, L)``,
    so windows are reshaped views of the token rows and no scatter is needed.

    ``band=(B, M)`` promises that rows 1..B*M form B blocks of M rows and
    every window is a run of L consecutive rows inside one block; see
    ``_attend_band``.
    """
    h = as_tensor(h)
    wq, wk, wv = (params[f"{prefix}.{n}"] for n in ("wq", "wk", "wv"))
    windows = np.asarray(windows, dtype=np.int64)
    if band is not None:
        return _attend_band(h, windows, band, wq, wk, wv)
    S, L = windows.shape
    d, P = h.shape[-1], h.shape[0]
    scale = 1.0 / math.sqrt(d)
    if contiguous:
        if P != S * L + 1:
            raise DomainError(f"contiguous windows need {S * L + 1} token rows, got {P}")
        hw = h.data[1:].reshape(S, L, d)
    else:
        hw = np.take(h.data, windows, axis=0)                          # (S, L, d)
    h_last = hw[:, -1]
    # q.k_j = (q wk^T).h_j and sum_j w_j v_j = (sum_j w_j h_j) wv: project per window, not per token
    q = h_last @ wq.data
    qk = q @ wk.data.T
    w = _softmax((hw @ qk[:, :, None])[:, :, 0] * scale)               # (S, L)
    av = (w[:, None, :] @ hw)[:, 0, :]
    out = av @ wv.data + h_last

    def bw(g):
        if wv.requires_grad:
            _accumulate(wv, av.T @ g)
        g_av = g @ wv.data.T
        gw = (hw @ g_av[:, :, None])[:, :, 0]
        glog = w * (gw - (w * gw).sum(axis=-1, keepdims=True)) * scale
        g_qk = (glog[:, None, :] @ hw)[:, 0, :]
        if wk.requires_grad:
            _accumulate(wk, g_qk.T @ q)
        g_q = g_qk @ wk.data
        if wq.requires_grad:
            _accumulate(wq, h_last.T @ g_q)
        if not h.requires_grad:
            return
        g_hw = glog[:, :, None] * qk[:, None, :] + w[:, :, None] * g_av[:, None, :]
        g_hw[:, -1] += g + g_q @ wq.data.T
        if contiguous:
            gh = np.zeros_like(h.data)
            gh[1:] = g_hw.reshape(S * L, d)
        else:
            gh = scatter_rows(windows, g_hw, P)
        _accumulate(h, gh)

    return _node(out, (h, wq, wk, wv), bw)


def _band_mask(M: int, L: int) -> np.ndarray:
    i, j = np.arange(M)[:, None], np.arange(M)[None, :]
    return (j <= i) & (j > i - L)


def _attend_band(h: Tensor, windows: np.ndarray, band: tuple[int, int], wq: Tensor, wk: Tensor, wv: Tensor
                 ) -> Tensor:
    """Causal attention over whole blocks with a width-L band, then pick each window's last row.

    Every position of a block sees exactly the L rows of the window ending
    there, so the selected rows equal the windowed computation.
    """
    B, M = band
    S, L = windows.shape
    d, P = h.shape[-1], h.shape[0]
    if P != B * M + 1:
        raise DomainError(f"banded layout (B={B}, M={M}) needs {B * M + 1} token rows, got {P}")
    scale = 1.0 / math.sqrt(d)
    hb = h.data[1:].reshape(B, M, d)
    q, k, v = hb @ wq.data, hb @ wk.data, hb @ wv.data
    w = _softmax((q @ k.transpose(0, 2, 1)) * scale, mask=_band_mask(M, L))  # (B, M, M)
    rows = windows[:, -1] - 1
    full = (w @ v + hb).reshape(B * M, d)
    out = full[rows]

    def bw(g):
        G = scatter_rows(rows, g, B * M).reshape(B, M, d)
        gw = G @ v.transpose(0, 2, 1)
        glog = w * (gw - (w * gw).sum(axis=-1, keepdims=True)) * scale
        gq, gk, gv = glog @ k, glog.transpose(0, 2, 1) @ q, w.transpose(0, 2, 1) @ G
        flat = hb.reshape(B * M, d)
        for wt, gt in ((wq, gq), (wk, gk), (wv, gv)):
            if wt.requires_grad:
                _accumulate(wt, flat.T @ gt.reshape(B * M, d))
        if h.requires_grad:
            gh = np.zeros_like(h.data)
            gh[1:] = (G + gq @ wq.data.T + gk @ wk.data.T + gv @ wv.data.T).reshape(B * M, d)
            _accumulate(h, gh)

    return _node(out, (h, wq, wk, wv), bw)


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


# -- checkpoints ------------------------------------------------------------


def save_params(params: ParameterSet | Mapping[str, np.ndarray], path, meta: Mapping[str, str] | None = None) -> Path:
    """Write a versioned .npz container of (name, shape, values).

    Layout: one array per parameter keyed by name, plus ``__format__`` holding
    [CHECKPOINT_FORMAT, version] and ``__meta__`` holding "key=value" strings.
    """
    arrays = params.arrays() if isinstance(params, ParameterSet) else {k: np.asarray(v) for k, v in params.items()}
    for name in arrays:
        if name.startswith("__"):
            raise DomainError(f"parameter name {name!r} is reserved")
    path = Path(path)
    header = np.array([CHECKPOINT_FORMAT, str(CHECKPOINT_VERSION)])
    meta_arr = np.array([f"{k}={v}" for k, v in (meta or {}).items()], dtype=str)
    with open(path, "wb") as fh:
        np.savez(fh, __format__=header, __meta__=meta_arr, **arrays)
    return path


def load_params(path) -> tuple[ParameterSet, dict[str, str]]:
    with np.load(Path(path), allow_pickle=False) as data:
        if "__format__" not in data.files:
            raise DomainError(f"{path}: not a parameter checkpoint")
        fmt, version = data["__format__"].tolist()
        if fmt != CHECKPOINT_FORMAT or int(version) != CHECKPOINT_VERSION:
            raise DomainError(f"{path}: unsupported checkpoint format {fmt} v{version}")
        meta = dict(s.split("=", 1) for s in data["__meta__"].tolist())
        arrays = {k: data[k] for k in data.files if not k.startswith("__")}
    return ParameterSet(arrays), meta


# -- finite differences -----------------------------------------------------


def numerical_gradient(f: Callable[[], float], arr: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f`` w.r.t. ``arr`` (perturbed in place)."""
    grad = np.zeros_like(arr)
    flat, gflat = arr.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """max |a - b| / max(|a|, |b|, floor), elementwise."""
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0
