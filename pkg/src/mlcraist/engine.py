"""Minimal reverse-mode automatic differentiation over numpy buffers.

Values are held in float32 ``Tensor`` nodes (scalar reductions may carry
float64, see ``ops.sum_all``). While a ``Tape`` is active, every operation
records a backward closure; ``Tape.backward`` replays the closures in
reverse execution order, which is a valid topological order, so each node
is visited exactly once.

Tensors are treated as immutable once produced. A tape is single-use and
single-threaded; distinct tapes may run on distinct threads (the tape
stack is thread-local).
"""

from __future__ import annotations

import threading
from typing import Callable, Iterator, Sequence

import numpy as np


class InvalidArgumentError(ValueError):
    """An operation's shape or argument contract was violated."""


_state = threading.local()
_debug_checks = False


def set_debug_checks(enabled: bool) -> None:
    """Toggle per-op finiteness assertions (slow; for debugging/tests)."""
    global _debug_checks
    _debug_checks = bool(enabled)


def _tape_stack() -> list:
    stack = getattr(_state, "stack", None)
    if stack is None:
        stack = _state.stack = []
    return stack


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """A numpy-backed value node of arbitrary rank.

    Model-level feature maps are always rank-4 ``(batch, channels, height,
    width)``; attention intermediates use other ranks internally.
    """

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=np.float32):
        arr = np.asarray(data)
        if dtype is not None and arr.dtype != dtype:
            arr = arr.astype(dtype)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


class Tape:
    """Ordered record of operations for one forward pass.

    Use as a context manager around the forward computation, then call
    ``backward(loss)`` once. Without an active tape, ops compute values
    only and keep no references (inference mode).
    """

    def __init__(self):
        self._nodes: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _tape_stack().pop()
        assert popped is self

    def __len__(self) -> int:
        return len(self._nodes)

    def record(self, out: Tensor, backward: Callable[[np.ndarray], None]) -> None:
        self._nodes.append((out, backward))

    def backward(self, loss: Tensor) -> None:
        """Seed d(loss)/d(loss)=1 and replay recorded ops in reverse.

        Single-use: the node list is released afterwards.
        """
        if loss.size != 1:
            raise InvalidArgumentError("backward requires a scalar loss")
        loss.grad = np.ones_like(loss.data)
        for out, fn in reversed(self._nodes):
            if out.grad is not None:
                fn(out.grad)
        self._nodes.clear()


def make_op(out_data: np.ndarray, inputs: Sequence[Tensor],
            backward: Callable[[np.ndarray], None]) -> Tensor:
    """Wrap an op result, recording ``backward`` if a tape is active."""
    tape = active_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs, dtype=None)
    if _debug_checks and not np.all(np.isfinite(out.data)):
        raise FloatingPointError("non-finite values produced by an operation")
    if needs:
        tape.record(out, backward)
    return out


def accumulate(t: Tensor, g: np.ndarray) -> None:
    """Add ``g`` into ``t.grad``. Never mutates ``g`` or existing grads."""
    if not t.requires_grad:
        return
    if g.dtype != t.data.dtype:
        g = g.astype(t.data.dtype)
    t.grad = g if t.grad is None else t.grad + g


class Param:
    """A named, shaped trainable tensor with gradient and Adam moment state."""

    __slots__ = ("name", "value", "m", "v", "step")

    def __init__(self, value, name: str = ""):
        arr = np.array(value, dtype=np.float32)
        self.name = name
        self.value = Tensor(arr, requires_grad=True)
        self.m = np.zeros_like(arr)
        self.v = np.zeros_like(arr)
        self.step = 0

    @property
    def data(self) -> np.ndarray:
        return self.value.data

    @property
    def grad(self) -> np.ndarray | None:
        return self.value.grad

    @property
    def shape(self) -> tuple:
        return self.value.data.shape

    def zero_grad(self) -> None:
        self.value.grad = None

    def __repr__(self) -> str:
        return f"Param({self.name or '<unnamed>'}, shape={self.shape})"


class Module:
    """Base class for weight containers.

    Parameters are enumerated recursively over instance attributes in
    insertion order, so the name-path of every Param is deterministic.
    """

    def named_params(self, prefix: str = "") -> Iterator[tuple[str, Param]]:
        yield from _walk(prefix, self)

    def params(self) -> list[Param]:
        return [p for _, p in self.named_params()]

    def zero_grad(self) -> None:
        for p in self.params():
            p.zero_grad()

    def assign_names(self, prefix: str = "") -> None:
        for path, p in self.named_params(prefix):
            p.name = path

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _join(prefix: str, leaf: str) -> str:
    return f"{prefix}.{leaf}" if prefix else leaf


def _walk(prefix: str, obj) -> Iterator[tuple[str, Param]]:
    if isinstance(obj, Param):
        yield prefix, obj
    elif isinstance(obj, Module):
        for attr, val in vars(obj).items():
            if isinstance(val, (Param, Module, list, tuple)):
                yield from _walk(_join(prefix, attr), val)
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            if isinstance(item, (Param, Module, list, tuple)):
                yield from _walk(_join(prefix, str(i)), item)


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-3,
               max_probes: int | None = None,
               rng: np.random.Generator | None = None) -> float:
    """Compare analytic and central-difference gradients of a scalar function.

    Returns ``max over probed elements of |analytic - numeric| /
    max(1, |analytic|)``. ``f`` must be deterministic and side-effect free;
    it is re-evaluated without recording for each probe. ``max_probes``
    limits the number of elements checked (all by default).
    """
    x.grad = None
    with Tape() as tape:
        y = f(x)
    if not isinstance(y, Tensor) or y.size != 1:
        raise InvalidArgumentError("grad_check requires f to return a scalar Tensor")
    tape.backward(y)
    analytic = x.grad if x.grad is not None else np.zeros_like(x.data)

    flat = x.data.reshape(-1)
    n = flat.size
    if max_probes is not None and max_probes < n:
        gen = rng if rng is not None else np.random.default_rng(0)
        idxs = gen.choice(n, size=max_probes, replace=False)
    else:
        idxs = np.arange(n)

    worst = 0.0
    aflat = analytic.reshape(-1)
    for i in idxs:
        orig = float(flat[i])
        flat[i] = orig + eps
        hi = float(flat[i])
        fp = float(f(x).data)
        flat[i] = orig - eps
        lo = float(flat[i])
        fm = float(f(x).data)
        flat[i] = orig
        numeric = (fp - fm) / (hi - lo)
        a = float(aflat[i])
        err = abs(a - numeric) / max(1.0, abs(a))
        if err > worst:
            worst = err
    return worst
