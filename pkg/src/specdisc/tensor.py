"""Dense float64 tensor with reverse-mode automatic differentiation.

Every differentiable operation creates a :class:`Node` holding its inputs and a
backward rule.  ``backward()`` collects the nodes reachable from a scalar loss
into a :class:`Tape` (creation order, which is a valid topological order) and
replays the rules in reverse.  After replay the tape releases its graph
references, so nothing leaks from one training step into the next.
"""

from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "Tensor",
    "Tape",
    "Node",
    "tensor",
    "zeros",
    "ones",
    "no_grad",
    "is_grad_enabled",
    "backward",
    "add",
    "sub",
    "mul",
    "scale",
    "bias_add",
    "neg",
    "matmul",
    "sum_all",
    "mean_all",
    "mse",
    "mae",
    "leaky_relu",
    "concat",
    "reshape",
    "transpose",
    "pad_trailing",
    "mask_axis",
    "index_select",
    "crop",
    "repeat_interleave",
    "embedding_lookup",
]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""

    def __init__(self, op: str, *shapes: tuple[int, ...], detail: str = ""):
        self.op = op
        self.shapes = shapes
        msg = f"{op}: incompatible shapes " + " vs ".join(str(tuple(s)) for s in shapes)
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


_state = threading.local()
_node_ids = itertools.count()


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    prev = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class Node:
    """One recorded operation: output <- op(inputs), with its backward rule.

    ``backward_fn`` maps the output gradient to a tuple of input gradients
    (``None`` for inputs that do not need one).  Which inputs receive a
    gradient is fixed when the node is created, so toggling ``requires_grad``
    afterwards does not change what this node propagates.
    """

    __slots__ = ("id", "op", "inputs", "needs", "backward_fn")

    def __init__(self, op: str, inputs: Sequence["Tensor"], backward_fn: Callable):
        self.id = next(_node_ids)
        self.op = op
        self.inputs = tuple(inputs)
        self.needs = tuple(t.requires_grad for t in self.inputs)
        self.backward_fn = backward_fn


class Tensor:
    """N-dimensional float64 array with optional gradient accumulation."""

    __slots__ = ("data", "grad", "requires_grad", "node", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.node: Node | None = None
        self.name = name

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{rg})"

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return index_select(self, index)

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mean_all(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self, retain_graph: bool = False) -> None:
        backward(self, retain_graph=retain_graph)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def zeros(*shape: int, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def ones(*shape: int, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=requires_grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(op: str, data: np.ndarray, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    needs = is_grad_enabled() and any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = needs
    out.name = None
    out.node = Node(op, inputs, backward_fn) if needs else None
    return out


# -- tape ---------------------------------------------------------------------
class Tape:
    """Ordered record of the operations between the leaves and a loss."""

    def __init__(self, entries: list[tuple[Tensor, Node]]):
        self.entries = entries

    @classmethod
    def record(cls, loss: Tensor) -> "Tape":
        seen: set[int] = set()
        entries: list[tuple[Tensor, Node]] = []
        stack = [loss]
        while stack:
            t = stack.pop()
            node = t.node
            if node is None or id(node) in seen:
                continue
            seen.add(id(node))
            entries.append((t, node))
            stack.extend(node.inputs)
        entries.sort(key=lambda e: e[1].id)
        return cls(entries)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def ops(self) -> list[str]:
        return [node.op for _, node in self.entries]

    def replay(self, seed_grad: np.ndarray) -> None:
        """Run backward rules in reverse creation order.

        Leaves accumulate into ``.grad`` across calls; interior tensors get the
        gradient of this pass only.
        """
        if not self.entries:
            return
        grads: dict[int, np.ndarray] = {id(self.entries[-1][0]): seed_grad}
        for out, node in reversed(self.entries):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            out.grad = g
            in_grads = node.backward_fn(g)
            for inp, need, ig in zip(node.inputs, node.needs, in_grads):
                if ig is None or not need:
                    continue
                if ig.shape != inp.shape:
                    raise ShapeError(f"backward[{node.op}]", ig.shape, inp.shape)
                if inp.node is None:
                    inp.grad = ig.copy() if inp.grad is None else inp.grad + ig
                else:
                    key = id(inp)
                    grads[key] = ig if key not in grads else grads[key] + ig

    def clear(self) -> None:
        for out, _ in self.entries:
            out.node = None
        self.entries = []


def backward(loss: Tensor, retain_graph: bool = False) -> Tape:
    """Accumulate d(loss)/d(leaf) into every requires_grad leaf."""
    if loss.size != 1:
        raise ValueError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return Tape([])
    if loss.node is None:
        loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1.0
        return Tape([])
    tape = Tape.record(loss)
    tape.replay(np.ones_like(loss.data))
    if not retain_graph:
        tape.clear()
    return tape


# -- elementwise ----------------------------------------------------------------
def _check_same(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ShapeError(op, a.shape, b.shape)


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    return np.full(shape, g.sum())


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same("add", a, b)
    sa, sb = a.shape, b.shape
    return _make("add", a.data + b.data, (a, b),
                 lambda g: (_reduce_to(g, sa), _reduce_to(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same("sub", a, b)
    sa, sb = a.shape, b.shape
    return _make("sub", a.data - b.data, (a, b),
                 lambda g: (_reduce_to(g, sa), _reduce_to(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same("mul", a, b)
    ad, bd = a.data, b.data
    return _make("mul", ad * bd, (a, b),
                 lambda g: (_reduce_to(g * bd, ad.shape), _reduce_to(g * ad, bd.shape)))


def bias_add(x: Tensor, b: Tensor, axis: int = -1) -> Tensor:
    """Add a 1-D bias along ``axis`` of ``x``."""
    axis = axis % x.ndim
    if b.shape != (x.shape[axis],):
        raise ShapeError("bias_add", x.shape, b.shape, detail=f"bias must match axis {axis}")
    bshape = [1] * x.ndim
    bshape[axis] = -1
    others = tuple(i for i in range(x.ndim) if i != axis)
    return _make("bias_add", x.data + b.data.reshape(bshape), (x, b), lambda g: (g, g.sum(axis=others)))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make("scale", a.data * c, (a,), lambda g: (g * c,))


def neg(a: Tensor) -> Tensor:
    return _make("neg", -a.data, (a,), lambda g: (-g,))


def leaky_relu(x: Tensor, alpha: float = 0.2) -> Tensor:
    slope = np.where(x.data >= 0, 1.0, alpha)
    return _make("leaky_relu", x.data * slope, (x,), lambda g: (g * slope,))


# -- linear algebra and reductions ---------------------------------------------
def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape, detail="inner dimensions must agree")
    ad, bd = a.data, b.data
    return _make("matmul", ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return _make("sum", np.array(x.data.sum()), (x,), lambda g: (np.full(shape, float(g)),))


def mean_all(x: Tensor) -> Tensor:
    shape, n = x.shape, x.size
    return _make("mean", np.array(x.data.mean()), (x,), lambda g: (np.full(shape, float(g) / n),))


def mse(pred: Tensor, target) -> Tensor:
    """Mean squared error; ``target`` is a constant (scalar targets broadcast)."""
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if t.shape != pred.shape and t.size != 1:
        raise ShapeError("mse", pred.shape, t.shape)
    diff = pred.data - t
    n = pred.size
    return _make("mse", np.array(np.mean(diff * diff)), (pred,),
                 lambda g: (float(g) * 2.0 / n * diff,))


def mae(pred: Tensor, target) -> Tensor:
    """Mean absolute error; subgradient 0 at exact ties."""
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if t.shape != pred.shape and t.size != 1:
        raise ShapeError("mae", pred.shape, t.shape)
    diff = pred.data - t
    n = pred.size
    return _make("mae", np.array(np.mean(np.abs(diff))), (pred,),
                 lambda g: (float(g) / n * np.sign(diff),))


# -- structural ----------------------------------------------------------------
def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    src = x.shape
    try:
        data = x.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", src, shape) from None
    return _make("reshape", data, (x,), lambda g: (g.reshape(src),))


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    axes = tuple(range(x.ndim))[::-1] if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make("transpose", np.ascontiguousarray(x.data.transpose(axes)), (x,),
                 lambda g: (np.ascontiguousarray(g.transpose(inv)),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Concatenate along ``axis`` (the channel axis by default)."""
    tensors = list(tensors)
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(
            d1 != d2 for i, (d1, d2) in enumerate(zip(t.shape, ref)) if i != axis % len(ref)
        ):
            raise ShapeError("concat", ref, t.shape, detail=f"all axes except {axis} must match")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(
            np.ascontiguousarray(np.take(g, range(bounds[i], bounds[i + 1]), axis=axis))
            for i in range(len(tensors))
        )

    return _make("concat", np.concatenate([t.data for t in tensors], axis=axis), tensors, bw)


def _is_basic(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (slice, int, np.integer)) or i is Ellipsis for i in items)


def index_select(x: Tensor, index) -> Tensor:
    src = x.shape
    data = np.array(x.data[index])
    basic = _is_basic(index)

    def bw(g):
        out = np.zeros(src)
        if basic:
            out[index] = g
        else:
            np.add.at(out, index, g)
        return (out,)

    return _make("slice", data, (x,), bw)


def mask_axis(x: Tensor, keep: np.ndarray, axis: int) -> Tensor:
    """Zero every slice along ``axis`` where ``keep`` is False."""
    keep = np.asarray(keep, dtype=np.float64)
    if keep.shape != (x.shape[axis],):
        raise ShapeError("mask", x.shape, keep.shape, detail=f"mask must match axis {axis}")
    shape = [1] * x.ndim
    shape[axis] = -1
    m = keep.reshape(shape)
    return _make("mask", x.data * m, (x,), lambda g: (g * m,))


def pad_trailing(x: Tensor, pads: Sequence[int]) -> Tensor:
    """Zero-pad the trailing edge of each axis by ``pads[axis]`` elements."""
    if len(pads) != x.ndim:
        raise ShapeError("pad", x.shape, tuple(pads))
    if not any(pads):
        return x
    src = x.shape
    data = np.pad(x.data, [(0, int(p)) for p in pads])
    sl = tuple(slice(0, s) for s in src)
    return _make("pad", data, (x,), lambda g: (np.ascontiguousarray(g[sl]),))


def crop(x: Tensor, sizes: Sequence[int]) -> Tensor:
    """Keep the leading ``sizes[axis]`` elements of each axis."""
    if len(sizes) != x.ndim or any(s > d for s, d in zip(sizes, x.shape)):
        raise ShapeError("crop", x.shape, tuple(sizes))
    if tuple(sizes) == x.shape:
        return x
    src = x.shape
    sl = tuple(slice(0, int(s)) for s in sizes)

    def bw(g):
        out = np.zeros(src)
        out[sl] = g
        return (out,)

    return _make("crop", np.ascontiguousarray(x.data[sl]), (x,), bw)


def repeat_interleave(x: Tensor, repeats: Sequence[int], axis: int = -1) -> Tensor:
    """Repeat slice ``i`` along ``axis`` ``repeats[i]`` times."""
    repeats = np.asarray(repeats, dtype=np.int64)
    axis = axis % x.ndim
    if repeats.shape != (x.shape[axis],):
        raise ShapeError("repeat", x.shape, repeats.shape, detail=f"one count per entry on axis {axis}")
    if np.any(repeats < 1):
        raise ValueError(f"repeat counts must be positive, got {repeats.tolist()}")
    starts = np.concatenate([[0], np.cumsum(repeats)[:-1]])
    return _make("repeat", np.repeat(x.data, repeats, axis=axis), (x,),
                 lambda g: (np.add.reduceat(g, starts, axis=axis),))


def embedding_lookup(table: Tensor, ids: Sequence[int]) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    vocab = table.shape[0]
    if ids.ndim != 1 or ids.size == 0:
        raise ValueError("token ids must be a non-empty 1-D sequence")
    if np.any(ids < 0) or np.any(ids >= vocab):
        raise ValueError(f"token id out of vocabulary [0, {vocab}): {ids.tolist()}")
    src = table.shape

    def bw(g):
        out = np.zeros(src)
        np.add.at(out, ids, g)
        return (out,)

    return _make("embedding", table.data[ids], (table,), bw)


def parameters_zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
