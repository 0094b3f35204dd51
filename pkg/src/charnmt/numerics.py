"""Dense tensors with reverse-mode automatic differentiation.

A `Graph` is a tape: every primitive applied while a graph is active appends
a node recording its inputs, output and a backward closure. `backward` walks
the tape once in reverse and returns a gradient for every named parameter in
the graph's `ParameterStore`.

Two precision modes exist: "wide" (float64, for gradient checks) and "narrow"
(float32, default for training). A graph is pinned to one mode; mixing dtypes
inside a graph is an error. Outside any active graph the same primitives run
in plain inference mode with no recording.
"""

from __future__ import annotations

import threading

import numpy as np

from .errors import (
    ConfigError,
    ContractError,
    DimensionError,
    DomainError,
    NonFiniteError,
)

PRECISIONS = {"wide": np.float64, "narrow": np.float32}

_state = threading.local()

_check_finite = False


def debug_checks(enabled: bool) -> None:
    """Toggle NaN/Inf detection at node boundaries (off by default)."""
    global _check_finite
    _check_finite = enabled


def _graph_stack():
    if not hasattr(_state, "graphs"):
        _state.graphs = []
    return _state.graphs


def _active():
    stack = _graph_stack()
    return stack[-1] if stack else None


class Tensor:
    """Immutable dense array. `data` is a row-major numpy array."""

    __slots__ = ("data",)

    def __init__(self, data):
        self.data = data

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"


def tensor(data, precision: str = "narrow") -> Tensor:
    """Wrap `data` as a constant leaf in the given precision."""
    return Tensor(np.asarray(data, dtype=PRECISIONS[precision]))


class ParameterStore:
    """Named tensor collection holding every learned weight.

    Insertion-ordered; names are unique. Stores are mutated only through
    `add`/`assign` by their owning (training) thread; readers treat the
    contained tensors as immutable.
    """

    def __init__(self, precision: str = "narrow"):
        if precision not in PRECISIONS:
            raise ConfigError(f"unknown precision {precision!r}")
        self.precision = precision
        self.dtype = PRECISIONS[precision]
        self._tensors: dict[str, Tensor] = {}

    def add(self, name: str, array) -> Tensor:
        if name in self._tensors:
            raise ContractError(f"parameter {name!r} already present")
        t = Tensor(np.ascontiguousarray(array, dtype=self.dtype))
        self._tensors[name] = t
        return t

    def assign(self, name: str, array) -> None:
        """Replace a parameter's value (a fresh Tensor; old ones stay valid)."""
        if name not in self._tensors:
            raise ContractError(f"unknown parameter {name!r}")
        self._tensors[name] = Tensor(np.ascontiguousarray(array, dtype=self.dtype))

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def names(self):
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    def n_values(self) -> int:
        return sum(t.data.size for t in self._tensors.values())

    def snapshot(self) -> "ParameterStore":
        copy = ParameterStore(self.precision)
        for name, t in self._tensors.items():
            copy.add(name, t.data.copy())
        return copy


class _Node:
    __slots__ = ("op", "inputs", "output", "grad_fn")

    def __init__(self, op, inputs, output, grad_fn):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.grad_fn = grad_fn


class Graph:
    """Ordered tape of primitive applications, bound to one ParameterStore.

    Nodes are appended in execution order, so the list is topologically
    sorted by construction and the backward pass visits each node exactly
    once. A graph is confined to the thread that created it.
    """

    def __init__(self, store: ParameterStore | None = None, precision: str | None = None):
        if store is not None and precision is not None and store.precision != precision:
            raise ContractError(
                f"store precision {store.precision!r} != graph precision {precision!r}"
            )
        self.store = store
        self.precision = precision or (store.precision if store else "narrow")
        self.dtype = PRECISIONS[self.precision]
        self.nodes: list[_Node] = []
        self._produced: set[int] = set()

    def __enter__(self):
        _graph_stack().append(self)
        return self

    def __exit__(self, *exc):
        popped = _graph_stack().pop()
        assert popped is self
        return False


def _record(op, inputs, out_data, grad_fn) -> Tensor:
    if _check_finite and not np.all(np.isfinite(out_data)):
        raise NonFiniteError(f"non-finite values produced by {op!r}")
    out = Tensor(out_data)
    g = _active()
    if g is not None:
        if out_data.dtype != g.dtype:
            raise ContractError(
                f"{op!r} produced dtype {out_data.dtype} inside a {g.precision} graph"
            )
        g.nodes.append(_Node(op, inputs, out, grad_fn))
        g._produced.add(id(out))
    return out


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` after a broadcasting forward op."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# --- primitives ---


def affine(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """x @ W + b with x of shape (..., n), W (n, m), b (m,)."""
    if W.ndim != 2 or x.shape[-1] != W.shape[0]:
        raise DimensionError(f"affine: x {x.shape} does not conform with W {W.shape}")
    if b.shape != (W.shape[1],):
        raise DimensionError(f"affine: bias {b.shape} does not match output columns {W.shape[1]}")
    y = np.matmul(x.data, W.data) + b.data

    def grad(dy):
        n, m = W.shape
        x2 = x.data.reshape(-1, n)
        dy2 = dy.reshape(-1, m)
        return np.matmul(dy, W.data.T), np.matmul(x2.T, dy2), dy2.sum(axis=0)

    return _record("affine", (x, W, b), y, grad)


def linear(x: Tensor, W: Tensor) -> Tensor:
    """x @ W without bias."""
    if W.ndim != 2 or x.shape[-1] != W.shape[0]:
        raise DimensionError(f"linear: x {x.shape} does not conform with W {W.shape}")
    y = np.matmul(x.data, W.data)

    def grad(dy):
        x2 = x.data.reshape(-1, W.shape[0])
        dy2 = dy.reshape(-1, W.shape[1])
        return np.matmul(dy, W.data.T), np.matmul(x2.T, dy2)

    return _record("linear", (x, W), y, grad)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _record("tanh", (x,), y, lambda dy: (dy * (1.0 - y * y),))


def sigmoid(x: Tensor) -> Tensor:
    # Split form avoids overflow for large |x| and saturates exactly at 0/1.
    d = x.data
    y = np.empty_like(d)
    pos = d >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ex = np.exp(d[~pos])
    y[~pos] = ex / (1.0 + ex)
    return _record("sigmoid", (x,), y, lambda dy: (dy * y * (1.0 - y),))


def _broadcast_shapes(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not match") from None


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shapes("add", a, b)
    y = a.data + b.data
    return _record(
        "add", (a, b), y,
        lambda dy: (_unbroadcast(dy, a.shape), _unbroadcast(dy, b.shape)),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shapes("multiply", a, b)
    y = a.data * b.data
    return _record(
        "multiply", (a, b), y,
        lambda dy: (_unbroadcast(dy * b.data, a.shape), _unbroadcast(dy * a.data, b.shape)),
    )


def one_minus(x: Tensor) -> Tensor:
    """1 - x, the (1 - g) form used by gates."""
    return _record("subtract_from_one", (x,), 1.0 - x.data, lambda dy: (-dy,))


def mul_const(x: Tensor, const: np.ndarray) -> Tensor:
    """Multiply by a non-differentiable constant (masks, scaling arrays)."""
    c = np.asarray(const, dtype=x.data.dtype)
    _broadcast_shapes("multiply", x, Tensor(c))
    y = x.data * c
    return _record("mul_const", (x,), y, lambda dy: (_unbroadcast(dy * c, x.shape),))


def scale(x: Tensor, s: float) -> Tensor:
    s = float(s)
    return _record("scale", (x,), x.data * s, lambda dy: (dy * s,))


def softmax(logits: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Probabilities along the last axis, max-subtracted for stability.

    `mask` (same shape, nonzero = valid) zeroes out invalid positions; each
    row must keep at least one valid entry.
    """
    x = logits.data
    if x.size == 0:
        raise DomainError("softmax of an empty tensor")
    if mask is not None:
        valid = np.asarray(mask, dtype=bool)
        shifted = x - np.max(np.where(valid, x, -np.inf), axis=-1, keepdims=True)
        e = np.exp(shifted) * valid
    else:
        e = np.exp(x - x.max(axis=-1, keepdims=True))
    y = e / e.sum(axis=-1, keepdims=True)

    def grad(dy):
        inner = (dy * y).sum(axis=-1, keepdims=True)
        return (y * (dy - inner),)

    return _record("softmax", (logits,), y, grad)


def log_softmax(logits: Tensor) -> Tensor:
    x = logits.data
    if x.size == 0:
        raise DomainError("log_softmax of an empty tensor")
    m = x.max(axis=-1, keepdims=True)
    lse = m + np.log(np.exp(x - m).sum(axis=-1, keepdims=True))
    y = x - lse

    def grad(dy):
        return (dy - np.exp(y) * dy.sum(axis=-1, keepdims=True),)

    return _record("log_softmax", (logits,), y, grad)


def embed(table: Tensor, ids: np.ndarray) -> Tensor:
    """Rows of an embedding table selected by integer ids."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise DimensionError(
            f"embed: ids outside [0, {table.shape[0]}) (found {int(ids.min())}..{int(ids.max())})"
        )
    y = table.data[ids]

    def grad(dy):
        dt = np.zeros_like(table.data)
        np.add.at(dt, ids, dy)
        return (dt,)

    return _record("embed", (table,), y, grad)


def concat(parts: list[Tensor]) -> Tensor:
    """Concatenate along the last axis."""
    widths = [p.shape[-1] for p in parts]
    y = np.concatenate([p.data for p in parts], axis=-1)

    def grad(dy):
        out, off = [], 0
        for w in widths:
            out.append(dy[..., off:off + w])
            off += w
        return tuple(out)

    return _record("concat", tuple(parts), y, grad)


def stack_time(rows: list[Tensor]) -> Tensor:
    """Stack T tensors of shape (B, D) into (B, T, D)."""
    y = np.stack([r.data for r in rows], axis=1)

    def grad(dy):
        return tuple(dy[:, t] for t in range(len(rows)))

    return _record("stack_time", tuple(rows), y, grad)


def attn_mix(alpha: Tensor, ctx: Tensor) -> Tensor:
    """Weighted sum of context rows: (B,T) x (B,T,D) -> (B,D)."""
    if alpha.shape != ctx.shape[:2]:
        raise DimensionError(f"attn_mix: weights {alpha.shape} vs context {ctx.shape}")
    y = np.einsum("bt,btd->bd", alpha.data, ctx.data)

    def grad(dy):
        dalpha = np.einsum("bd,btd->bt", dy, ctx.data)
        dctx = alpha.data[:, :, None] * dy[:, None, :]
        return dalpha, dctx

    return _record("attn_mix", (alpha, ctx), y, grad)


def pick(x: Tensor, ids: np.ndarray) -> Tensor:
    """Per-row element selection: (B, V), (B,) -> (B,)."""
    ids = np.asarray(ids)
    if x.ndim != 2 or ids.shape != (x.shape[0],):
        raise DimensionError(f"pick: x {x.shape} vs ids {ids.shape}")
    rows = np.arange(x.shape[0])
    y = x.data[rows, ids]

    def grad(dy):
        dx = np.zeros_like(x.data)
        dx[rows, ids] = dy
        return (dx,)

    return _record("pick", (x,), y, grad)


def reshape(x: Tensor, shape) -> Tensor:
    y = x.data.reshape(shape)
    return _record("reshape", (x,), y, lambda dy: (dy.reshape(x.shape),))


def sum_all(x: Tensor) -> Tensor:
    y = x.data.sum()
    return _record("sum", (x,), np.asarray(y, dtype=x.data.dtype),
                   lambda dy: (np.broadcast_to(dy, x.shape).astype(x.data.dtype),))


def backward(graph: Graph, loss: Tensor) -> dict[str, Tensor]:
    """Gradient of a scalar loss w.r.t. every parameter in the graph's store.

    Parameters the loss never touched map to zero tensors of matching shape.
    """
    if loss.ndim != 0:
        raise ContractError(f"loss must be scalar, got shape {loss.shape}")
    if id(loss) not in graph._produced:
        raise ContractError("loss is not a node of this graph")
    if graph.store is None:
        raise ContractError("graph has no parameter store bound")

    acc: dict[int, np.ndarray] = {id(loss): np.asarray(1.0, dtype=graph.dtype)}
    for node in reversed(graph.nodes):
        dy = acc.pop(id(node.output), None)
        if dy is None:
            continue
        for t, g in zip(node.inputs, node.grad_fn(dy)):
            if g is None:
                continue
            key = id(t)
            if key in acc:
                acc[key] = acc[key] + g
            else:
                acc[key] = g

    grads = {}
    for name, t in graph.store.items():
        g = acc.get(id(t))
        grads[name] = Tensor(g if g is not None else np.zeros_like(t.data))
    return grads
