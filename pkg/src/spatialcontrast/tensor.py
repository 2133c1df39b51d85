"""Dense tensors with a reverse-mode gradient tape.

Storage is float32 unless a float64 array is handed in explicitly (the
gradient checker does this). Every op is a :class:`Function` subclass; when
any input requires a gradient the op is stamped with a monotonically
increasing sequence number, and :meth:`Tensor.backward` replays the reachable
ops in descending sequence order, i.e. reverse execution order.
"""

from __future__ import annotations

import contextlib
import itertools
import weakref
from typing import Any, Sequence

import numpy as np

from .errors import DimensionError, NumericError

_seq = itertools.count()
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


def _as_array(data: Any) -> np.ndarray:
    arr = np.asarray(data)
    if arr.dtype == np.float64:
        return arr
    return arr.astype(np.float32, copy=False)


def check_finite(arr: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(arr)):
        bad = int(np.size(arr) - np.count_nonzero(np.isfinite(arr)))
        raise NumericError(f"{where}: {bad} non-finite value(s)")


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_ctx", "name", "__weakref__")

    def __init__(self, data: Any, requires_grad: bool = False, name: str | None = None):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._ctx: Function | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag}, requires_grad={self.requires_grad})"

    # -- arithmetic -------------------------------------------------------
    def __add__(self, other):
        return Add.apply(self, _lift(other, self))

    __radd__ = __add__

    def __sub__(self, other):
        return Add.apply(self, Neg.apply(_lift(other, self)))

    def __rsub__(self, other):
        return Add.apply(_lift(other, self), Neg.apply(self))

    def __mul__(self, other):
        return Mul.apply(self, _lift(other, self))

    __rmul__ = __mul__

    def __neg__(self):
        return Neg.apply(self)

    def __getitem__(self, index):
        return Index.apply(self, index=index)

    def sum(self) -> "Tensor":
        return Sum.apply(self)

    def mean(self) -> "Tensor":
        return Sum.apply(self, scale=1.0 / max(self.data.size, 1))

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Reshape.apply(self, shape=shape)

    # -- autograd ---------------------------------------------------------
    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(t) into ``t.grad`` for every reachable ``t``."""
        if self.data.size != 1 and grad is None:
            raise DimensionError(f"backward() root must be scalar, got shape {self.shape}")
        if self._ctx is None and not self.requires_grad:
            raise DimensionError("backward() on a tensor that is not on the tape")

        seed = np.ones_like(self.data) if grad is None else np.asarray(grad, dtype=self.data.dtype)
        grads: dict[int, np.ndarray] = {id(self): seed}

        # collect reachable ops; each is visited once, newest first
        nodes: dict[int, Function] = {}
        seen: dict[int, Tensor] = {}
        stack = [self]
        while stack:
            t = stack.pop()
            seen[id(t)] = t
            ctx = t._ctx
            if ctx is None or id(ctx) in nodes:
                continue
            nodes[id(ctx)] = ctx
            stack.extend(ctx.inputs)

        for ctx in sorted(nodes.values(), key=lambda f: f.seq, reverse=True):
            out = seen.get(id(ctx.output()))
            g_out = grads.pop(id(out), None)
            if g_out is None:
                continue
            _accumulate(out, g_out)
            in_grads = ctx.backward(g_out)
            if not isinstance(in_grads, tuple):
                in_grads = (in_grads,)
            for inp, g in zip(ctx.inputs, in_grads):
                if g is None or not inp.requires_grad:
                    continue
                g = np.asarray(g)
                if g.shape != inp.shape:
                    raise DimensionError(
                        f"{type(ctx).__name__}.backward returned grad {g.shape} for input {inp.shape}"
                    )
                check_finite(g, f"{type(ctx).__name__}.backward")
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + g
                else:
                    grads[key] = g
        # whatever is left belongs to leaves (tensors without a producing op)
        for key, g in grads.items():
            _accumulate(seen[key], g)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    g = g.astype(t.data.dtype, copy=False)
    # grads are never mutated in place, so aliasing g is safe
    t.grad = g if t.grad is None else t.grad + g


def _lift(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def tensor(data: Any, requires_grad: bool = False, dtype=None) -> Tensor:
    arr = np.asarray(data, dtype=dtype) if dtype is not None else data
    return Tensor(arr, requires_grad=requires_grad)


def _dead():
    return None


class Function:
    """One recorded op. Subclasses implement ``forward`` and ``backward``.

    ``forward`` receives raw arrays plus keyword parameters and may stash
    whatever it needs on ``self``. ``backward`` receives dL/d(output) and
    returns one gradient (or None) per input.
    """

    def __init__(self, inputs: Sequence[Tensor]):
        self.inputs = tuple(inputs)
        self.seq = -1
        self.output = _dead  # weak reference; a strong one would form a cycle with out._ctx

    def forward(self, *arrays: np.ndarray, **kwargs) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray):
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs: Tensor, **kwargs) -> Tensor:
        fn = cls(inputs)
        out_data = fn.forward(*(t.data for t in inputs), **kwargs)
        check_finite(out_data, cls.__name__)
        needs = _grad_enabled and any(t.requires_grad for t in inputs)
        out = Tensor(out_data, requires_grad=needs)
        if needs:
            fn.seq = next(_seq)
            fn.output = weakref.ref(out)
            out._ctx = fn
        return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


class Add(Function):
    def forward(self, a, b):
        self.shapes = (a.shape, b.shape)
        return a + b

    def backward(self, g):
        return _unbroadcast(g, self.shapes[0]), _unbroadcast(g, self.shapes[1])


class Mul(Function):
    def forward(self, a, b):
        self.a, self.b = a, b
        return a * b

    def backward(self, g):
        return _unbroadcast(g * self.b, self.a.shape), _unbroadcast(g * self.a, self.b.shape)


class Neg(Function):
    def forward(self, a):
        return -a

    def backward(self, g):
        return -g


class Sum(Function):
    # accumulates in float64; the scalar result stays float64
    def forward(self, a, scale=1.0):
        self.shape, self.dtype, self.scale = a.shape, a.dtype, scale
        return np.asarray(a.sum(dtype=np.float64) * scale)

    def backward(self, g):
        return np.full(self.shape, float(g) * self.scale, dtype=self.dtype)


class Reshape(Function):
    def forward(self, a, shape):
        self.in_shape = a.shape
        return a.reshape(shape)

    def backward(self, g):
        return g.reshape(self.in_shape)


class Index(Function):
    def forward(self, a, index):
        self.in_shape, self.dtype, self.index = a.shape, a.dtype, index
        return np.array(a[index])

    def backward(self, g):
        out = np.zeros(self.in_shape, dtype=np.result_type(self.dtype, g.dtype))
        np.add.at(out, self.index, g)
        return out


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    return Stack.apply(*tensors, axis=axis)


class Stack(Function):
    def forward(self, *arrays, axis=0):
        self.axis = axis
        return np.stack(arrays, axis=axis)

    def backward(self, g):
        return tuple(np.take(g, i, axis=self.axis) for i in range(len(self.inputs)))
