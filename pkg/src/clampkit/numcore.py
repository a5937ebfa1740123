"""Dense tensors with tape-based reverse-mode differentiation.

Values are plain ``numpy`` arrays (float32 for training, float64 for gradient
verification). A :class:`Tape` records every operation applied to its nodes;
:meth:`Tape.backward` walks it in reverse and accumulates gradients.

The set of differentiable operations is closed and enumerated in ``OPS`` so
that gradient coverage can be checked exhaustively.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .rng import SplitMix64

FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))
MASK_VALUE = -1e9


class NumericError(ArithmeticError):
    """A computation produced NaN or Inf, or a degenerate input (zero-norm row)."""


class ShapeError(ValueError):
    pass


class TapeError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# helpers


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(*shapes):
    try:
        return np.broadcast_shapes(*shapes)
    except ValueError as exc:
        raise ShapeError(f"cannot broadcast shapes {shapes}") from exc


def _check_index(idx: np.ndarray, n: int, what: str) -> np.ndarray:
    idx = np.asarray(idx)
    if not np.issubdtype(idx.dtype, np.integer):
        raise ShapeError(f"{what}: indices must be integers, got {idx.dtype}")
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"{what}: index out of range for extent {n}")
    return idx.astype(np.int64, copy=False)


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def _expand_reduced(g, in_shape, axis, keepdims):
    axes = _axes(axis, len(in_shape))
    if not keepdims:
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, in_shape)


# ---------------------------------------------------------------------------
# op table: forward(values, attrs) -> out ; backward(g, values, out, attrs) -> grads


@dataclass(frozen=True)
class Op:
    name: str
    forward: Callable
    backward: Callable
    arity: int | None  # None = variadic


def _fw_add(v, a):
    _broadcast_shape(v[0].shape, v[1].shape)
    return v[0] + v[1]


def _bw_add(g, v, out, a):
    return [_unbroadcast(g, v[0].shape), _unbroadcast(g, v[1].shape)]


def _fw_sub(v, a):
    _broadcast_shape(v[0].shape, v[1].shape)
    return v[0] - v[1]


def _bw_sub(g, v, out, a):
    return [_unbroadcast(g, v[0].shape), _unbroadcast(-g, v[1].shape)]


def _fw_mul(v, a):
    _broadcast_shape(v[0].shape, v[1].shape)
    return v[0] * v[1]


def _bw_mul(g, v, out, a):
    return [_unbroadcast(g * v[1], v[0].shape), _unbroadcast(g * v[0], v[1].shape)]


def _fw_matmul(v, a):
    x, w = v
    if x.ndim < 2 or w.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {x.shape} @ {w.shape}")
    if x.shape[-1] != w.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {x.shape} @ {w.shape}")
    _broadcast_shape(x.shape[:-2], w.shape[:-2])
    return x @ w


def _bw_matmul(g, v, out, a):
    x, w = v
    gx = g @ np.swapaxes(w, -1, -2)
    gw = np.swapaxes(x, -1, -2) @ g
    return [_unbroadcast(gx, x.shape), _unbroadcast(gw, w.shape)]


def _bw_softmax(g, v, y, a):
    return [y * (g - (g * y).sum(axis=-1, keepdims=True))]


def _bw_log_softmax(g, v, y, a):
    return [g - np.exp(y) * g.sum(axis=-1, keepdims=True)]


def _fw_sum(v, a):
    return np.asarray(v[0].sum(axis=a.get("axis"), keepdims=a.get("keepdims", False)))


def _bw_sum(g, v, out, a):
    return [_expand_reduced(g, v[0].shape, a.get("axis"), a.get("keepdims", False)).copy()]


def _fw_mean(v, a):
    return np.asarray(v[0].mean(axis=a.get("axis"), keepdims=a.get("keepdims", False)))


def _bw_mean(g, v, out, a):
    shape = v[0].shape
    count = int(np.prod([shape[i] for i in _axes(a.get("axis"), len(shape))]))
    return [_expand_reduced(g, shape, a.get("axis"), a.get("keepdims", False)) / count]


def _fw_concat(v, a):
    axis = a.get("axis", -1)
    ref = v[0]
    for x in v[1:]:
        if x.ndim != ref.ndim:
            raise ShapeError("concat operands differ in rank")
        ax = axis % ref.ndim
        if x.shape[:ax] + x.shape[ax + 1:] != ref.shape[:ax] + ref.shape[ax + 1:]:
            raise ShapeError(f"concat shapes {ref.shape} and {x.shape} disagree off axis {axis}")
    return np.concatenate(v, axis=axis)


def _bw_concat(g, v, out, a):
    axis = a.get("axis", -1)
    cuts = np.cumsum([x.shape[axis] for x in v])[:-1]
    return list(np.split(g, cuts, axis=axis))


def _fw_gather(v, a):
    idx = _check_index(a["index"], v[0].shape[0], "gather_rows")
    return v[0][idx]


def _bw_gather(g, v, out, a):
    gx = np.zeros_like(v[0])
    np.add.at(gx, a["index"], g)
    return [gx]


def _fw_scatter(v, a):
    dest, src = v
    idx = _check_index(a["index"], dest.shape[0], "scatter_add_rows")
    if idx.shape != src.shape[:1] or src.shape[1:] != dest.shape[1:]:
        raise ShapeError(f"scatter_add_rows: src {src.shape}, index {idx.shape}, dest {dest.shape}")
    out = dest.copy()
    np.add.at(out, idx, src)
    return out


def _bw_scatter(g, v, out, a):
    return [g, g[a["index"]]]


def _fw_l2norm(v, a):
    x = v[0]
    n = np.sqrt((x * x).sum(axis=-1, keepdims=True))
    if np.any(n == 0):
        raise NumericError("l2_normalize_rows: zero row (collapsed embedding)")
    return x / n


def _bw_l2norm(g, v, y, a):
    x = v[0]
    n = np.sqrt((x * x).sum(axis=-1, keepdims=True))
    return [(g - y * (g * y).sum(axis=-1, keepdims=True)) / n]


def _fw_layer_norm(v, a):
    x, gain, bias = v
    if gain.shape != x.shape[-1:] or bias.shape != x.shape[-1:]:
        raise ShapeError(f"layer_norm_rows: gain/bias {gain.shape}/{bias.shape} vs rows {x.shape}")
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + a.get("eps", 1e-5))
    return xc * inv * gain + bias


def _bw_layer_norm(g, v, out, a):
    x, gain, bias = v
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + a.get("eps", 1e-5))
    xhat = xc * inv
    lead = tuple(range(x.ndim - 1))
    gxhat = g * gain
    gx = inv * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
    return [gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)]


def _fw_embedding(v, a):
    table = v[0]
    if table.ndim != 2:
        raise ShapeError("embedding_lookup: table must be 2-D")
    ids = _check_index(a["index"], table.shape[0], "embedding_lookup")
    return table[ids]


def _bw_embedding(g, v, out, a):
    gt = np.zeros_like(v[0])
    ids = np.asarray(a["index"]).reshape(-1)
    np.add.at(gt, ids, g.reshape(ids.size, -1))
    return [gt]


def _fw_masked_fill(v, a):
    mask = np.asarray(a["mask"], dtype=bool)
    _broadcast_shape(v[0].shape, mask.shape)
    if np.broadcast_shapes(v[0].shape, mask.shape) != v[0].shape:
        raise ShapeError("masked_fill: mask may not enlarge the input")
    return v[0] + np.where(mask, a.get("value", MASK_VALUE), 0.0).astype(v[0].dtype)


def _bw_masked_fill(g, v, out, a):
    return [g]


def _fw_cross_entropy(v, a):
    z = v[0]
    if z.ndim != 2:
        raise ShapeError("cross_entropy_rows expects a 2-D logit matrix")
    t = _check_index(a["target"], z.shape[1], "cross_entropy_rows")
    if t.shape != (z.shape[0],):
        raise ShapeError(f"cross_entropy_rows: {t.shape[0] if t.ndim else 0} targets for {z.shape[0]} rows")
    lp = _log_softmax(z)
    return np.asarray(-lp[np.arange(z.shape[0]), t].mean())


def _bw_cross_entropy(g, v, out, a):
    z = v[0]
    p = _softmax(z)
    p[np.arange(z.shape[0]), a["target"]] -= 1.0
    return [p * (g / z.shape[0])]


def _fw_transpose(v, a):
    axes = a.get("axes")
    if axes is None:
        axes = tuple(range(v[0].ndim - 2)) + (v[0].ndim - 1, v[0].ndim - 2)
    return np.transpose(v[0], axes)


def _bw_transpose(g, v, out, a):
    axes = a.get("axes")
    if axes is None:
        return [np.swapaxes(g, -1, -2)]
    return [np.transpose(g, np.argsort(axes))]


def _fw_reshape(v, a):
    try:
        return v[0].reshape(a["shape"])
    except ValueError as exc:
        raise ShapeError(str(exc)) from exc


def _bw_reshape(g, v, out, a):
    return [g.reshape(v[0].shape)]


def _unary(fw, bw):
    return (lambda v, a: fw(v[0])), (lambda g, v, y, a: [bw(g, v[0], y)])


def _softplus(x):
    return np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))


def _fw_log(x):
    if np.any(x <= 0):
        raise NumericError("log of non-positive value")
    return np.log(x)


_UNARY = {
    "row_softmax": (_softmax, None),
    "row_log_softmax": (_log_softmax, None),
    "sigmoid": (_sigmoid, lambda g, x, y: g * y * (1 - y)),
    "softplus": (_softplus, lambda g, x, y: g * _sigmoid(x)),
    "tanh": (np.tanh, lambda g, x, y: g * (1 - y * y)),
    "relu": (lambda x: np.maximum(x, 0), lambda g, x, y: g * (x > 0)),
    "exp": (np.exp, lambda g, x, y: g * y),
    "log": (_fw_log, lambda g, x, y: g / x),
}


def _build_ops() -> dict[str, Op]:
    ops = {
        "add": Op("add", _fw_add, _bw_add, 2),
        "sub": Op("sub", _fw_sub, _bw_sub, 2),
        "mul": Op("mul", _fw_mul, _bw_mul, 2),
        "matmul": Op("matmul", _fw_matmul, _bw_matmul, 2),
        "sum": Op("sum", _fw_sum, _bw_sum, 1),
        "mean": Op("mean", _fw_mean, _bw_mean, 1),
        "concat": Op("concat", _fw_concat, _bw_concat, None),
        "gather_rows": Op("gather_rows", _fw_gather, _bw_gather, 1),
        "scatter_add_rows": Op("scatter_add_rows", _fw_scatter, _bw_scatter, 2),
        "l2_normalize_rows": Op("l2_normalize_rows", _fw_l2norm, _bw_l2norm, 1),
        "layer_norm_rows": Op("layer_norm_rows", _fw_layer_norm, _bw_layer_norm, 3),
        "embedding_lookup": Op("embedding_lookup", _fw_embedding, _bw_embedding, 1),
        "masked_fill": Op("masked_fill", _fw_masked_fill, _bw_masked_fill, 1),
        "cross_entropy_rows": Op("cross_entropy_rows", _fw_cross_entropy, _bw_cross_entropy, 1),
        "transpose": Op("transpose", _fw_transpose, _bw_transpose, 1),
        "reshape": Op("reshape", _fw_reshape, _bw_reshape, 1),
    }
    ops["row_softmax"] = Op("row_softmax", lambda v, a: _softmax(v[0]), _bw_softmax, 1)
    ops["row_log_softmax"] = Op("row_log_softmax", lambda v, a: _log_softmax(v[0]), _bw_log_softmax, 1)
    for name, (fw, bw) in _UNARY.items():
        if bw is not None:
            f, b = _unary(fw, bw)
            ops[name] = Op(name, f, b, 1)
    return ops


OPS: dict[str, Op] = _build_ops()


# ---------------------------------------------------------------------------
# tape


class Node:
    """One recorded value on a :class:`Tape`."""

    __slots__ = ("tape", "index", "op", "inputs", "attrs", "value", "grad", "name")

    def __init__(self, tape, index, op, inputs, attrs, value, name=None):
        self.tape = tape
        self.index = index
        self.op = op
        self.inputs = inputs
        self.attrs = attrs
        self.value = value
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def __repr__(self):
        return f"Node(#{self.index} {self.op or 'leaf'} shape={self.shape})"

    def _lift(self, other):
        if isinstance(other, Node):
            return other
        return self.tape.const(np.asarray(other, dtype=self.dtype))

    def __add__(self, other):
        return self.tape.apply("add", self, self._lift(other))

    def __radd__(self, other):
        return self.tape.apply("add", self._lift(other), self)

    def __sub__(self, other):
        return self.tape.apply("sub", self, self._lift(other))

    def __rsub__(self, other):
        return self.tape.apply("sub", self._lift(other), self)

    def __mul__(self, other):
        return self.tape.apply("mul", self, self._lift(other))

    def __rmul__(self, other):
        return self.tape.apply("mul", self._lift(other), self)

    def __matmul__(self, other):
        return self.tape.apply("matmul", self, self._lift(other))

    def __neg__(self):
        return self.tape.apply("mul", self, self._lift(-1.0))


class Tape:
    """Append-only record of operations for one forward/backward pass.

    A tape belongs to a single thread. ``backward`` may run once; build a new
    tape for the next step.
    """

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        if self.dtype not in FLOAT_DTYPES:
            raise TypeError(f"unsupported dtype {dtype}")
        self.nodes: list[Node] = []
        self._finished = False

    def _push(self, op, inputs, attrs, value, name=None) -> Node:
        node = Node(self, len(self.nodes), op, inputs, attrs, value, name)
        self.nodes.append(node)
        return node

    def leaf(self, value, name: str | None = None) -> Node:
        value = np.array(value, dtype=self.dtype)
        if not np.all(np.isfinite(value)):
            raise NumericError(f"non-finite leaf {name or ''}")
        return self._push(None, (), {}, value, name)

    const = leaf

    def leaves(self, params: Mapping[str, np.ndarray]) -> dict[str, Node]:
        return {k: self.leaf(v, k) for k, v in params.items()}

    def apply(self, op_kind: str, *inputs: Node, **attrs) -> Node:
        if self._finished:
            raise TapeError("tape already differentiated; start a new tape")
        try:
            op = OPS[op_kind]
        except KeyError:
            raise ValueError(f"unknown op {op_kind!r}") from None
        if op.arity is not None and len(inputs) != op.arity:
            raise ShapeError(f"{op_kind} takes {op.arity} inputs, got {len(inputs)}")
        for x in inputs:
            if not isinstance(x, Node) or x.tape is not self:
                raise TapeError(f"{op_kind}: input is not a node of this tape")
            if x.dtype != self.dtype:
                raise TypeError(f"{op_kind}: dtype {x.dtype} on a {self.dtype} tape")
        out = op.forward([x.value for x in inputs], attrs)
        out = np.asarray(out, dtype=self.dtype)
        if not np.all(np.isfinite(out)):
            raise NumericError(f"non-finite output from {op_kind}")
        return self._push(op_kind, inputs, attrs, out)

    def backward(self, loss: Node) -> dict[Node, np.ndarray]:
        """Reverse sweep from a scalar ``loss``; returns node -> gradient."""
        if self._finished:
            raise TapeError("backward already called on this tape")
        if loss.tape is not self:
            raise TapeError("loss is not a node of this tape")
        if loss.value.size != 1 or loss.value.ndim != 0:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        self._finished = True
        grads: dict[int, np.ndarray] = {loss.index: np.ones_like(loss.value)}
        for node in reversed(self.nodes[: loss.index + 1]):
            g = grads.get(node.index)
            if g is None:
                continue
            node.grad = g
            if node.op is None:
                continue
            in_grads = OPS[node.op].backward(g, [x.value for x in node.inputs], node.value, node.attrs)
            for x, gx in zip(node.inputs, in_grads):
                if gx is None:
                    continue
                prev = grads.get(x.index)
                grads[x.index] = gx if prev is None else prev + gx
        return {n: n.grad for n in self.nodes if n.grad is not None}

    # thin wrappers so model code reads naturally
    def matmul(self, a, b):
        return self.apply("matmul", a, b)

    def sigmoid(self, x):
        return self.apply("sigmoid", x)

    def softplus(self, x):
        return self.apply("softplus", x)

    def exp(self, x):
        return self.apply("exp", x)

    def log(self, x):
        return self.apply("log", x)

    def relu(self, x):
        return self.apply("relu", x)

    def tanh(self, x):
        return self.apply("tanh", x)

    def softmax(self, x):
        return self.apply("row_softmax", x)

    def log_softmax(self, x):
        return self.apply("row_log_softmax", x)

    def sum(self, x, axis=None, keepdims=False):
        return self.apply("sum", x, axis=axis, keepdims=keepdims)

    def mean(self, x, axis=None, keepdims=False):
        return self.apply("mean", x, axis=axis, keepdims=keepdims)

    def concat(self, xs, axis=-1):
        return self.apply("concat", *xs, axis=axis)

    def gather_rows(self, x, index):
        return self.apply("gather_rows", x, index=np.asarray(index))

    def scatter_add_rows(self, dest, src, index):
        return self.apply("scatter_add_rows", dest, src, index=np.asarray(index))

    def l2_normalize_rows(self, x):
        return self.apply("l2_normalize_rows", x)

    def layer_norm_rows(self, x, gain, bias, eps=1e-5):
        return self.apply("layer_norm_rows", x, gain, bias, eps=eps)

    def embedding_lookup(self, table, ids):
        return self.apply("embedding_lookup", table, index=np.asarray(ids))

    def masked_fill(self, x, mask, value=MASK_VALUE):
        return self.apply("masked_fill", x, mask=mask, value=value)

    def cross_entropy_rows(self, logits, target):
        return self.apply("cross_entropy_rows", logits, target=np.asarray(target))

    def transpose(self, x, axes=None):
        return self.apply("transpose", x, axes=None if axes is None else tuple(axes))

    def reshape(self, x, shape):
        return self.apply("reshape", x, shape=tuple(shape))


def apply(tape: Tape, op_kind: str, *inputs: Node, **attrs) -> Node:
    return tape.apply(op_kind, *inputs, **attrs)


def backward(loss: Node) -> dict[Node, np.ndarray]:
    return loss.tape.backward(loss)


# ---------------------------------------------------------------------------
# gradient verification


def value_and_grad(f: Callable[[Tape, dict[str, Node]], Node],
                   params: Mapping[str, np.ndarray], dtype=np.float64):
    """Run ``f`` on a fresh tape; return (loss value, {name: gradient})."""
    tape = Tape(dtype)
    leaves = tape.leaves(params)
    loss = f(tape, leaves)
    tape.backward(loss)
    grads = {k: (n.grad if n.grad is not None else np.zeros_like(n.value)) for k, n in leaves.items()}
    return float(loss.value), grads


def finite_diff_check(f: Callable[[Tape, dict[str, Node]], Node],
                      params: Mapping[str, np.ndarray], eps: float = 1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    ``f(tape, leaves)`` must build a scalar node from the named leaves. Every
    scalar of every parameter is probed, so keep instances tiny.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    _, analytic = value_and_grad(f, params)

    def evaluate(p):
        tape = Tape(np.float64)
        value = float(f(tape, tape.leaves(p)).value)
        if not np.isfinite(value):
            raise NumericError("objective is non-finite at a probe point")
        return value

    worst = 0.0
    for name, base in params.items():
        flat = base.reshape(-1)
        for i in range(flat.size):
            probe = dict(params)
            up, down = flat.copy(), flat.copy()
            up[i] += eps
            down[i] -= eps
            probe[name] = up.reshape(base.shape)
            f_up = evaluate(probe)
            probe[name] = down.reshape(base.shape)
            f_down = evaluate(probe)
            central = (f_up - f_down) / (2 * eps)
            exact = float(analytic[name].reshape(-1)[i])
            err = abs(exact - central) / max(abs(exact), abs(central), 1e-8)
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# optimizer and initialisation


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def for_params(cls, params: Mapping[str, np.ndarray]) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()}, 0)


def adam_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray],
              state: AdamState, lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8):
    """Bias-corrected Adam. Returns ``(new_params, new_state)``; inputs are untouched."""
    if lr <= 0 or not (0 <= beta1 < 1) or not (0 <= beta2 < 1):
        raise ValueError("invalid Adam hyperparameters")
    t = state.t + 1
    new_p, new_m, new_v = {}, {}, {}
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, param {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}")
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1 - beta1) * g if m is None else beta1 * m + (1 - beta1) * g
        v = (1 - beta2) * g * g if v is None else beta2 * v + (1 - beta2) * g * g
        step = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        new_p[name] = (p - step).astype(p.dtype)
        new_m[name] = m.astype(p.dtype)
        new_v[name] = v.astype(p.dtype)
    return new_p, AdamState(new_m, new_v, t)


INIT_SCHEMES = ("zeros", "uniform", "normal", "constant")


def seeded_init(shape, scheme: str, seed: int, *, value: float = 0.0,
                fan_in: int | None = None, dtype=np.float64) -> np.ndarray:
    """Deterministic parameter initialisation from the SplitMix64 stream.

    ``uniform`` draws from +-1/sqrt(fan_in) with ``fan_in`` defaulting to
    ``shape[0]`` (weights are applied as ``x @ W``); ``normal`` uses std 0.02.
    """
    shape = tuple(int(s) for s in shape)
    if any(s < 0 for s in shape):
        raise ShapeError(f"invalid shape {shape}")
    if scheme == "zeros":
        out = np.zeros(shape)
    elif scheme == "constant":
        out = np.full(shape, float(value))
    elif scheme == "uniform":
        fan = fan_in if fan_in is not None else (shape[0] if shape else 1)
        bound = 1.0 / np.sqrt(max(fan, 1))
        out = SplitMix64(seed).uniform(shape, -bound, bound)
    elif scheme == "normal":
        out = SplitMix64(seed).normal(shape, 0.0, 0.02)
    else:
        raise ValueError(f"unknown init scheme {scheme!r}; expected one of {INIT_SCHEMES}")
    return out.astype(dtype)
