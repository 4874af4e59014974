"""Dense float64 arrays with reverse-mode differentiation on a recorded tape.

The tape is a flat, append-only list of nodes. Each node stores the name of
the operation, the ids of its inputs (``None`` for constants) and whatever
values the adjoint rule needs. :func:`backward` walks the list once in
reverse. Adjoint rules live in the :data:`VJP` registry so they can be
inspected (and, in tests, deliberately broken).

Forward-mode :class:`Dual` numbers are provided for exact scalar derivatives.
Their primal and tangent may themselves be tape variables, which is how the
1D flow differentiates through its own trace term.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, ContractError, NumericError

__all__ = [
    "Tape", "Var", "Dual", "Mlp", "VJP", "backward", "tanh", "exp", "log",
    "concat", "total", "mlp_forward", "mlp_forward_tangent", "dual_eval",
    "grad_check", "param_grads",
]


class Node:
    __slots__ = ("op", "inputs", "saved")

    def __init__(self, op, inputs, saved):
        self.op = op
        self.inputs = inputs
        self.saved = saved

    def __repr__(self):
        return f"Node({self.op!r}, inputs={self.inputs})"


class Tape:
    """Append-only record of differentiable operations."""

    def __init__(self):
        self.nodes: list[Node] = []
        self._params: dict[int, tuple[int, np.ndarray]] = {}

    def __len__(self):
        return len(self.nodes)

    def _push(self, op, inputs, saved, value) -> "Var":
        self.nodes.append(Node(op, inputs, saved))
        return Var(self, len(self.nodes) - 1, value)

    def leaf(self, value) -> "Var":
        value = np.asarray(value, dtype=np.float64)
        return self._push("leaf", (), (), value)

    def param(self, array: np.ndarray) -> "Var":
        """Leaf for a parameter array, created once per tape and then reused."""
        hit = self._params.get(id(array))
        if hit is not None and hit[1] is array:
            return Var(self, hit[0], array)
        v = self.leaf(array)
        # keep a reference so id() cannot be recycled while the tape lives
        self._params[id(array)] = (v.id, array)
        v.value = array
        return v

    def param_id(self, array: np.ndarray) -> int | None:
        hit = self._params.get(id(array))
        if hit is None or hit[1] is not array:
            return None
        return hit[0]

    def mark(self) -> int:
        return len(self.nodes)

    def truncate(self, mark: int) -> None:
        """Drop every node recorded after ``mark`` (rejected solver steps)."""
        del self.nodes[mark:]
        self._params = {k: v for k, v in self._params.items() if v[0] < mark}


class Var:
    """A value living on a tape."""

    __slots__ = ("tape", "id", "value")
    __array_ufunc__ = None  # ndarray <op> Var defers to the reflected Var method

    def __init__(self, tape: Tape, id: int, value: np.ndarray):
        self.tape = tape
        self.id = id
        self.value = value

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Var(id={self.id}, shape={self.value.shape})"

    def __add__(self, other):
        return _binary("add", self, other)

    def __radd__(self, other):
        return _binary("add", other, self)

    def __sub__(self, other):
        return _binary("sub", self, other)

    def __rsub__(self, other):
        return _binary("sub", other, self)

    def __mul__(self, other):
        return _binary("mul", self, other)

    def __rmul__(self, other):
        return _binary("mul", other, self)

    def __truediv__(self, other):
        return _binary("div", self, other)

    def __rtruediv__(self, other):
        return _binary("div", other, self)

    def __matmul__(self, other):
        return _binary("matmul", self, other)

    def __rmatmul__(self, other):
        return _binary("matmul", other, self)

    def __neg__(self):
        return self.tape._push("neg", (self.id,), (), -self.value)

    def __getitem__(self, index):
        return self.tape._push("getitem", (self.id,), (self.value.shape, index),
                               self.value[index])

    def sum(self):
        return total(self)

    def mean(self):
        return total(self) * (1.0 / self.value.size)


def _val(x):
    return x.value if isinstance(x, Var) else x


def _binary(op, a, b):
    tape = a.tape if isinstance(a, Var) else b.tape
    av, bv = _val(a), _val(b)
    if op == "add":
        out = av + bv
        saved = (np.shape(av), np.shape(bv))
    elif op == "sub":
        out = av - bv
        saved = (np.shape(av), np.shape(bv))
    elif op == "mul":
        out = av * bv
        saved = (av, bv)
    elif op == "div":
        out = av / bv
        saved = (av, bv)
    elif op == "matmul":
        if np.ndim(av) != 2 or np.ndim(bv) != 2:
            raise ContractError("matmul on the tape requires two 2-D operands")
        out = av @ bv
        saved = (av, bv)
    else:  # pragma: no cover
        raise KeyError(op)
    inputs = (a.id if isinstance(a, Var) else None,
              b.id if isinstance(b, Var) else None)
    return tape._push(op, inputs, saved, np.asarray(out, dtype=np.float64))


def _unbroadcast(g, shape):
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def _vjp_getitem(g, shape, index):
    out = np.zeros(shape)
    np.add.at(out, index, g)
    return (out,)


def _vjp_concat(g, axis, sizes):
    cuts = np.cumsum(sizes)[:-1]
    return tuple(np.split(g, cuts, axis=axis))


VJP: dict[str, Callable] = {
    "add": lambda g, sa, sb: (_unbroadcast(g, sa), _unbroadcast(g, sb)),
    "sub": lambda g, sa, sb: (_unbroadcast(g, sa), _unbroadcast(-g, sb)),
    "mul": lambda g, a, b: (_unbroadcast(g * b, np.shape(a)),
                            _unbroadcast(g * a, np.shape(b))),
    "div": lambda g, a, b: (_unbroadcast(g / b, np.shape(a)),
                            _unbroadcast(-g * a / (b * b), np.shape(b))),
    "matmul": lambda g, a, b: (g @ b.T, a.T @ g),
    "neg": lambda g: (-g,),
    "tanh": lambda g, y: (g * (1.0 - y * y),),
    "exp": lambda g, y: (g * y,),
    "log": lambda g, x: (g / x,),
    "sum": lambda g, shape: (np.full(shape, float(g)),),
    "getitem": _vjp_getitem,
    "concat": _vjp_concat,
}


def tanh(x):
    if isinstance(x, Var):
        y = np.tanh(x.value)
        return x.tape._push("tanh", (x.id,), (y,), y)
    if isinstance(x, Dual):
        y = tanh(x.primal)
        return Dual(y, x.tangent * (1.0 - y * y))
    return np.tanh(x)


def exp(x):
    if isinstance(x, Var):
        y = np.exp(x.value)
        return x.tape._push("exp", (x.id,), (y,), y)
    if isinstance(x, Dual):
        y = exp(x.primal)
        return Dual(y, x.tangent * y)
    return np.exp(x)


def log(x):
    if isinstance(x, Var):
        return x.tape._push("log", (x.id,), (x.value,), np.log(x.value))
    if isinstance(x, Dual):
        return Dual(log(x.primal), x.tangent / x.primal)
    return np.log(x)


def total(x):
    """Sum of all entries, as a scalar node when ``x`` is taped."""
    if isinstance(x, Var):
        return x.tape._push("sum", (x.id,), (x.value.shape,),
                            np.asarray(x.value.sum()))
    return np.sum(x)


def concat(parts: Sequence, axis: int = -1):
    if any(isinstance(p, Dual) for p in parts):
        parts = [p if isinstance(p, Dual) else Dual(p, np.zeros_like(p)) for p in parts]
        return Dual(concat([p.primal for p in parts], axis),
                    concat([p.tangent for p in parts], axis))
    tapes = [p.tape for p in parts if isinstance(p, Var)]
    values = [np.asarray(_val(p), dtype=np.float64) for p in parts]
    out = np.concatenate(values, axis=axis)
    if not tapes:
        return out
    axis = axis % out.ndim
    inputs = tuple(p.id if isinstance(p, Var) else None for p in parts)
    sizes = tuple(v.shape[axis] for v in values)
    return tapes[0]._push("concat", inputs, (axis, sizes), out)


def backward(tape: Tape, output: Var) -> dict[int, np.ndarray]:
    """Reverse sweep from a scalar output; returns adjoints of every reachable leaf."""
    if output.tape is not tape:
        raise ContractError("output does not belong to this tape")
    if np.size(output.value) != 1:
        raise ContractError(f"backward needs a scalar output, got shape {output.shape}")
    pending = {output.id: np.ones_like(output.value, dtype=np.float64)}
    leaves = {}
    nodes = tape.nodes
    for i in range(output.id, -1, -1):
        g = pending.pop(i, None)
        if g is None:
            continue
        node = nodes[i]
        if node.op == "leaf":
            leaves[i] = g
            continue
        grads = VJP[node.op](g, *node.saved)
        for inp, gi in zip(node.inputs, grads):
            if inp is None:
                continue
            prev = pending.get(inp)
            pending[inp] = gi if prev is None else prev + gi
    return leaves


def param_grads(tape: Tape, grads: dict[int, np.ndarray], params: Sequence[np.ndarray]):
    """Adjoints aligned with ``params``; zeros for parameters the output never touched."""
    out = []
    for p in params:
        pid = tape.param_id(p)
        g = grads.get(pid) if pid is not None else None
        out.append(np.zeros_like(p) if g is None else np.asarray(g).reshape(p.shape))
    return out


class Dual:
    """Forward-mode number ``primal + eps * tangent`` with ``eps**2 = 0``."""

    __slots__ = ("primal", "tangent")

    def __init__(self, primal, tangent=0.0):
        self.primal = primal
        self.tangent = tangent

    def __repr__(self):
        return f"Dual({self.primal!r}, {self.tangent!r})"

    @staticmethod
    def _lift(x):
        return x if isinstance(x, Dual) else Dual(x, 0.0)

    def __add__(self, other):
        o = self._lift(other)
        return Dual(self.primal + o.primal, self.tangent + o.tangent)

    __radd__ = __add__

    def __sub__(self, other):
        o = self._lift(other)
        return Dual(self.primal - o.primal, self.tangent - o.tangent)

    def __rsub__(self, other):
        return self._lift(other) - self

    def __neg__(self):
        return Dual(-self.primal, -self.tangent)

    def __mul__(self, other):
        o = self._lift(other)
        return Dual(self.primal * o.primal,
                    self.primal * o.tangent + self.tangent * o.primal)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._lift(other)
        return Dual(self.primal / o.primal,
                    (self.tangent * o.primal - self.primal * o.tangent) / (o.primal * o.primal))

    def __rtruediv__(self, other):
        return self._lift(other) / self

    def __matmul__(self, other):
        if isinstance(other, Dual):
            return Dual(self.primal @ other.primal,
                        self.primal @ other.tangent + self.tangent @ other.primal)
        return Dual(self.primal @ other, self.tangent @ other)


@dataclass
class Mlp:
    """Fully connected net ``f(z, t)``: tanh hidden layers, identity output.

    The time is concatenated to the state as the last input column, so
    ``widths[0] == dim + 1`` and ``widths[-1] == dim``.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ConfigError("weights and biases must be non-empty and paired")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ConfigError(f"layer {i}: weight {w.shape} / bias {b.shape} mismatch")
            if i and w.shape[0] != self.weights[i - 1].shape[1]:
                raise ConfigError(f"layer {i}: input width {w.shape[0]} does not chain")
        if self.widths[0] != self.widths[-1] + 1:
            raise ConfigError(
                f"input width {self.widths[0]} must equal state dim {self.widths[-1]} + 1")

    @classmethod
    def init(cls, widths: Sequence[int], rng: np.random.Generator) -> "Mlp":
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases."""
        ws, bs = [], []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            ws.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            bs.append(rng.uniform(-bound, bound, size=fan_out))
        return cls(ws, bs)

    @classmethod
    def zeros(cls, widths: Sequence[int]) -> "Mlp":
        return cls([np.zeros((a, b)) for a, b in zip(widths[:-1], widths[1:])],
                   [np.zeros(b) for b in widths[1:]])

    @property
    def widths(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def dim(self) -> int:
        return self.widths[-1]

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def with_params(self, params: Sequence[np.ndarray]) -> "Mlp":
        params = list(params)
        return Mlp(params[0::2], params[1::2], dict(self.meta))

    def copy(self) -> "Mlp":
        return self.with_params([p.copy() for p in self.params()])

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params())


def _time_column(t, batch):
    if isinstance(t, (Var, Dual)):
        return t
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 0:
        return np.full((batch, 1), float(t))
    return t.reshape(batch, 1)


def _layers(net, x, tape):
    n = len(net.weights)
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        if tape is not None:
            w, b = tape.param(w), tape.param(b)
        x = x @ w + b
        if i < n - 1:
            x = tanh(x)
        value = x.primal if isinstance(x, Dual) else x
        if not np.all(np.isfinite(_val(value))):
            raise NumericError(f"non-finite activation in layer {i}", layer=i)
    return x


def mlp_forward(net: Mlp, z, t, tape: Tape | None = None):
    """Evaluate ``f(z, t)`` for a batch ``z`` of shape (B, dim) or a single (dim,) state.

    If ``tape`` is given (or ``z`` is already a taped :class:`Var`) every
    intermediate is recorded and the net's arrays become parameter leaves.
    """
    if isinstance(z, Var) and tape is None:
        tape = z.tape
    shape = np.shape(_val(z))
    single = len(shape) == 1
    if single:
        if isinstance(z, Var):
            raise ContractError("taped states must be 2-D (batch, dim)")
        z = np.asarray(z, dtype=np.float64)[None, :]
        shape = z.shape
    if len(shape) != 2 or shape[1] != net.dim:
        raise ConfigError(f"state shape {shape} does not match net input width "
                          f"{net.widths[0]} (dim + time)")
    x = concat([z, _time_column(t, shape[0])], axis=1)
    out = _layers(net, x, tape)
    return out[0] if single else out


def mlp_forward_tangent(net: Mlp, z, t, tape: Tape | None = None):
    """Return ``(f, df/dz)`` for a 1-D state net, batched over rows of ``z``.

    Forward-mode tangent propagation; when taped, both outputs are
    differentiable with respect to the parameters.
    """
    if net.dim != 1:
        raise ContractError("exact derivative only available for 1-D state nets")
    if isinstance(z, Var) and tape is None:
        tape = z.tape
    zv = _val(z)
    batch = np.shape(zv)[0]
    x = concat([Dual(z, np.ones((batch, 1))), _time_column(t, batch)], axis=1)
    out = _layers(net, x, tape)
    return out.primal, out.tangent


def dual_eval(net: Mlp, z, t):
    """Value and exact partial derivative ``df/dz`` of a 1-D net.

    Scalars in, floats out; arrays of shape (B,) are evaluated elementwise.
    """
    if net.dim != 1:
        raise ContractError("dual_eval requires a 1-dimensional state")
    zz = np.atleast_1d(np.asarray(z, dtype=np.float64)).reshape(-1, 1)
    tt = np.asarray(t, dtype=np.float64)
    tt = tt if tt.ndim == 0 else tt.reshape(-1, 1)
    f, df = mlp_forward_tangent(net, zz, tt)
    if np.ndim(z) == 0:
        return float(f[0, 0]), float(df[0, 0])
    return f[:, 0], df[:, 0]


def grad_check(net: Mlp, loss: Callable, eps: float = 1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    ``loss(net, tape)`` must return a scalar :class:`Var` when ``tape`` is a
    :class:`Tape` and a plain number when it is ``None``.
    """
    if not 0.0 < eps <= 1e-2:
        raise ConfigError("eps must lie in (0, 1e-2]", key="eps")
    tape = Tape()
    out = loss(net, tape)
    params = net.params()
    ad = param_grads(tape, backward(tape, out), params)
    worst = 0.0
    for k, p in enumerate(params):
        for idx in np.ndindex(p.shape):
            vals = []
            for sign in (1.0, -1.0):
                trial = [q.copy() for q in params]
                trial[k][idx] += sign * eps
                vals.append(float(loss(net.with_params(trial), None)))
            fd = (vals[0] - vals[1]) / (2.0 * eps)
            worst = max(worst, abs(ad[k][idx] - fd) / (abs(fd) + 1e-12))
    return worst
