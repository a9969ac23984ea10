"""Minimal reverse-mode autodiff over dense rank-2 float64 arrays.

Every tensor is a 2-D ``numpy`` array.  Tensors that carry a node id are
recorded on a :class:`Tape`; tensors without one are constants.  Backward
rules are themselves written with the taped primitives, so running
:func:`grad` with ``create_graph=True`` records the gradient computation on
the same tape and it can be differentiated again (double backprop).
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class AutodiffError(RuntimeError):
    pass


class ShapeError(AutodiffError, ValueError):
    def __init__(self, op: str, *shapes):
        shown = ", ".join(str(s) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {shown}")
        self.op = op
        self.shapes = shapes


class DomainError(AutodiffError, ValueError):
    def __init__(self, op: str, detail: str):
        super().__init__(f"{op}: {detail}")
        self.op = op


class Tensor:
    __slots__ = ("data", "tape", "node")

    def __init__(self, data, tape: "Tape | None" = None, node: int | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim > 2:
            raise ShapeError("tensor", arr.shape)
        self.data = arr
        self.tape = tape
        self.node = node

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError("item", self.shape)
        return float(self.data[0, 0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        where = f", node={self.node}" if self.node is not None else ""
        return f"Tensor(shape={self.shape}{where})"

    def __add__(self, other):
        return add(self, _lift(other, self))

    def __radd__(self, other):
        return add(_lift(other, self), self)

    def __sub__(self, other):
        return sub(self, _lift(other, self))

    def __rsub__(self, other):
        return sub(_lift(other, self), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scalar_mul(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _lift(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.full(like.shape, float(value)))


class _Node:
    __slots__ = ("op", "inputs", "out", "saved")

    def __init__(self, op, inputs, out, saved):
        self.op = op
        self.inputs = inputs
        self.out = out
        self.saved = saved


class Tape:
    """Ordered record of primitive applications; inputs always precede outputs."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def leaf(self, data) -> Tensor:
        t = Tensor(data)
        t.tape = self
        t.node = len(self.nodes)
        self.nodes.append(_Node("leaf", (), t, None))
        return t

    def _record(self, op, inputs, data, saved) -> Tensor:
        t = Tensor.__new__(Tensor)
        t.data = data
        t.tape = self
        t.node = len(self.nodes)
        self.nodes.append(_Node(op, inputs, t, saved))
        return t


def constant(data) -> Tensor:
    return Tensor(data)


def _emit(op: str, inputs: tuple, data: np.ndarray, saved=None) -> Tensor:
    tape = None
    for t in inputs:
        if t.tape is not None:
            if tape is None:
                tape = t.tape
            elif t.tape is not tape:
                raise AutodiffError(f"{op}: inputs live on different tapes")
    if tape is None:
        out = Tensor.__new__(Tensor)
        out.data = data
        out.tape = None
        out.node = None
        return out
    return tape._record(op, inputs, data, saved)


def _same_shape(op, a: Tensor, b: Tensor):
    if a.data.shape != b.data.shape:
        raise ShapeError(op, a.shape, b.shape)


# -- primitives -------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    return _emit("matmul", (a, b), a.data @ b.data)


def transpose(a: Tensor) -> Tensor:
    return _emit("transpose", (a,), a.data.T)


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return _emit("add", (a, b), a.data + b.data)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """``x`` (n, k) plus row vector ``b`` (1, k) broadcast over rows."""
    if b.data.shape[0] != 1 or b.data.shape[1] != x.data.shape[1]:
        raise ShapeError("add_broadcast_bias", x.shape, b.shape)
    return _emit("add_bias", (x, b), x.data + b.data)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return _emit("sub", (a, b), a.data - b.data)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul_elementwise", a, b)
    return _emit("mul", (a, b), a.data * b.data)


def neg(a: Tensor) -> Tensor:
    return _emit("neg", (a,), -a.data)


def scalar_mul(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _emit("scalar_mul", (a,), a.data * c, c)


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    # derivative at exactly 0 is the left value (slope)
    slope = float(slope)
    mask = (a.data > 0.0) * (1.0 - slope)
    mask += slope
    return _emit("leaky_relu", (a,), a.data * mask, mask)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _emit("sigmoid", (a,), out)


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0.0):
        raise DomainError("log", f"non-positive input (min {a.data.min()!r})")
    return _emit("log", (a,), np.log(a.data))


def square(a: Tensor) -> Tensor:
    return _emit("square", (a,), a.data * a.data)


def abs(a: Tensor) -> Tensor:  # noqa: A001 - mirrors the primitive name
    # derivative at exactly 0 is the left value (-1)
    sign = (a.data > 0.0) * 2.0
    sign -= 1.0
    return _emit("abs", (a,), np.abs(a.data), sign)


def sqrt(a: Tensor) -> Tensor:
    if np.any(a.data < 0.0):
        raise DomainError("sqrt", f"negative input (min {a.data.min()!r})")
    return _emit("sqrt", (a,), np.sqrt(a.data))


def reciprocal(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore"):
        return _emit("reciprocal", (a,), 1.0 / a.data)


def pseudo_huber_unit(a: Tensor) -> Tensor:
    """sqrt(a^2 + 1) - 1, elementwise.

    Evaluated as a^2 / (sqrt(a^2 + 1) + 1), which avoids cancellation for small a.
    """
    sq = a.data * a.data
    return _emit("pseudo_huber", (a,), sq / (np.sqrt(sq + 1.0) + 1.0))


def sum(a: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001
    if axis is None:
        data = np.array([[a.data.sum()]])
    elif axis in (0, 1):
        data = a.data.sum(axis=axis, keepdims=True)
    else:
        raise ShapeError("sum", a.shape, f"axis={axis}")
    return _emit("sum", (a,), data, axis)


def mean(a: Tensor, axis: int | None = None) -> Tensor:
    if axis is None:
        data = np.array([[a.data.mean()]])
    elif axis in (0, 1):
        data = a.data.mean(axis=axis, keepdims=True)
    else:
        raise ShapeError("mean", a.shape, f"axis={axis}")
    return _emit("mean", (a,), data, axis)


# -- backward rules ---------------------------------------------------------
# Each rule maps (node, upstream grad, inputs, output, needed) to a tuple of
# input grads (None where not needed).  Rules only use primitives above, so
# they are taped whenever their operands are.

def _ones(rows, cols):
    return Tensor(np.ones((rows, cols)))


def _spread(g: Tensor, shape, axis):
    """Broadcast a reduced gradient back to ``shape`` via matmul with ones."""
    rows, cols = shape
    if axis is None:
        return matmul(matmul(_ones(rows, 1), g), _ones(1, cols))
    if axis == 0:
        return matmul(_ones(rows, 1), g)
    return matmul(g, _ones(1, cols))


def _vjp_matmul(node, g, ins, out, need):
    a, b = ins
    ga = matmul(g, transpose(b)) if need[0] else None
    gb = matmul(transpose(a), g) if need[1] else None
    return ga, gb


def _vjp_add_bias(node, g, ins, out, need):
    gb = matmul(_ones(1, g.data.shape[0]), g) if need[1] else None
    return g, gb


def _vjp_sigmoid(node, g, ins, out, need):
    return (mul(g, mul(out, sub(_ones(*out.shape), out))),)


def _vjp_sqrt(node, g, ins, out, need):
    return (mul(g, scalar_mul(reciprocal(out), 0.5)),)


def _vjp_pseudo_huber(node, g, ins, out, need):
    (a,) = ins
    return (mul(g, mul(a, reciprocal(add(out, _ones(*out.shape))))),)


def _vjp_sum(node, g, ins, out, need):
    return (_spread(g, ins[0].shape, node.saved),)


def _vjp_mean(node, g, ins, out, need):
    rows, cols = ins[0].shape
    axis = node.saved
    count = rows * cols if axis is None else (rows if axis == 0 else cols)
    return (scalar_mul(_spread(g, ins[0].shape, axis), 1.0 / count),)


_VJP: dict[str, Callable] = {
    "matmul": _vjp_matmul,
    "transpose": lambda n, g, ins, out, need: (transpose(g),),
    "add": lambda n, g, ins, out, need: (g, g),
    "add_bias": _vjp_add_bias,
    "sub": lambda n, g, ins, out, need: (g, neg(g) if need[1] else None),
    "mul": lambda n, g, ins, out, need: (
        mul(g, ins[1]) if need[0] else None,
        mul(g, ins[0]) if need[1] else None,
    ),
    "neg": lambda n, g, ins, out, need: (neg(g),),
    "scalar_mul": lambda n, g, ins, out, need: (scalar_mul(g, n.saved),),
    "leaky_relu": lambda n, g, ins, out, need: (mul(g, Tensor(n.saved)),),
    "abs": lambda n, g, ins, out, need: (mul(g, Tensor(n.saved)),),
    "sigmoid": _vjp_sigmoid,
    "log": lambda n, g, ins, out, need: (mul(g, reciprocal(ins[0])),),
    "square": lambda n, g, ins, out, need: (mul(g, scalar_mul(ins[0], 2.0)),),
    "sqrt": _vjp_sqrt,
    "reciprocal": lambda n, g, ins, out, need: (neg(mul(g, square(out))),),
    "pseudo_huber": _vjp_pseudo_huber,
    "sum": _vjp_sum,
    "mean": _vjp_mean,
}


def grad(
    output: Tensor,
    wrt: Sequence[Tensor],
    create_graph: bool = False,
    allow_unused: bool = True,
) -> list[Tensor]:
    """Gradients of scalar ``output`` with respect to each tensor in ``wrt``.

    With ``create_graph=True`` the returned gradients are taped and can be
    differentiated again.  Tensors that do not influence ``output`` get a
    zero gradient, or raise when ``allow_unused`` is false.
    """
    if output.data.shape != (1, 1):
        raise AutodiffError(f"backward needs a scalar (1, 1) output, got {output.shape}")
    tape = output.tape
    if tape is None:
        raise AutodiffError("backward: output is not on a tape")
    for t in wrt:
        if t.tape is not tape:
            raise AutodiffError("backward: requested tensor is not on the output's tape")

    nodes = tape.nodes
    end = output.node
    targets = {t.node for t in wrt}
    needed = bytearray(end + 1)
    for i in range(end + 1):
        if i in targets:
            needed[i] = 1
            continue
        for inp in nodes[i].inputs:
            if inp.node is not None and needed[inp.node]:
                needed[i] = 1
                break

    found: dict[int, Tensor] = {}
    if needed[end]:
        grads: dict[int, Tensor] = {end: Tensor(np.ones((1, 1)))}
        for i in range(end, -1, -1):
            g = grads.pop(i, None)
            if g is None or not needed[i]:
                continue
            if i in targets:
                found[i] = g
            node = nodes[i]
            if not node.inputs:
                continue
            need = tuple(inp.node is not None and bool(needed[inp.node]) for inp in node.inputs)
            if create_graph:
                ins, out = node.inputs, node.out
            else:
                ins = tuple(Tensor(inp.data) for inp in node.inputs)
                out = Tensor(node.out.data)
            parts = _VJP[node.op](node, g, ins, out, need)
            for inp, flag, gi in zip(node.inputs, need, parts):
                if not flag:
                    continue
                j = inp.node
                prev = grads.get(j)
                grads[j] = gi if prev is None else add(prev, gi)

    result = []
    for t in wrt:
        g = found.get(t.node)
        if g is None:
            if not allow_unused:
                raise AutodiffError(f"backward: tensor at node {t.node} is not an ancestor of the output")
            g = Tensor(np.zeros(t.shape))
        result.append(g)
    return result


def backward(loss: Tensor) -> dict[int, Tensor]:
    """Map every leaf node on ``loss``'s tape (up to ``loss``) to d loss / d leaf."""
    if loss.tape is None:
        raise AutodiffError("backward: loss is not on a tape")
    leaves = [n.out for n in loss.tape.nodes[: (loss.node or 0) + 1] if n.op == "leaf"]
    gs = grad(loss, leaves)
    return {t.node: g for t, g in zip(leaves, gs)}


def input_gradient(output: Tensor, inp: Tensor) -> Tensor:
    """d output / d inp, itself taped so it can be differentiated again."""
    return grad(output, [inp], create_graph=True, allow_unused=False)[0]


def gradient_pair(f: Callable[[Tensor], Tensor], x, eps: float = 1e-5) -> tuple[np.ndarray, np.ndarray]:
    """(taped gradient, central-difference gradient) of scalar ``f`` at ``x``.

    ``f`` is called once with a leaf on a fresh tape and then with constant
    tensors for every perturbed coordinate.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64, ndmin=2)
    tape = Tape()
    leaf = tape.leaf(base.copy())
    out = f(leaf)
    if out.tape is None:
        # f does not depend on x at all
        analytic = np.zeros_like(base)
    else:
        analytic = grad(out, [leaf])[0].data
    numeric = np.empty_like(base)
    for idx in np.ndindex(base.shape):
        hi = base.copy()
        hi[idx] += eps
        lo = base.copy()
        lo[idx] -= eps
        numeric[idx] = (f(Tensor(hi)).item() - f(Tensor(lo)).item()) / (2.0 * eps)
    return analytic, numeric


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(1e-12, np.abs(analytic) + np.abs(numeric))


def finite_difference_check(f: Callable[[Tensor], Tensor], x, eps: float = 1e-5) -> float:
    """Max relative error between the taped gradient of ``f`` and central differences."""
    analytic, numeric = gradient_pair(f, x, eps)
    return float(np.max(relative_error(analytic, numeric)))


def kink_margin(tape: Tape) -> float:
    """Smallest |input| seen by any piecewise primitive (leaky_relu, abs) on the tape."""
    margin = np.inf
    for node in tape.nodes:
        if node.op in ("leaky_relu", "abs"):
            margin = min(margin, float(np.min(np.abs(node.inputs[0].data))))
    return margin
