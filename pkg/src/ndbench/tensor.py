"""Reverse-mode automatic differentiation over numpy arrays.

A :class:`Tensor` wraps an ``np.ndarray`` together with an optional gradient
and a record of how it was produced.  Each primitive builds the output value
eagerly with numpy and, when gradients are enabled, attaches a closure that
maps the output cotangent back onto the operands.  ``backward()`` on a scalar
walks the tape once in reverse topological order; the tape is consumed by the
walk, so a fresh forward pass is needed before differentiating again.

Precision follows the operands: build parameters as float32 for speed runs
and float64 for finite-difference checks.  All computation is plain numpy,
so results are deterministic for a fixed thread count.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np
from scipy.special import expit

__all__ = [
    "Tensor",
    "ShapeMismatchError",
    "BackwardError",
    "MissingGradientError",
    "NonFiniteError",
    "no_grad",
    "is_grad_enabled",
    "add",
    "subtract",
    "multiply",
    "divide",
    "matmul",
    "exp",
    "log",
    "tanh",
    "sigmoid",
    "relu",
    "softplus",
    "maximum",
    "softmax",
    "layer_norm",
    "dropout",
    "concatenate",
    "transpose",
    "reshape",
    "tensor_sum",
    "tensor_mean",
    "AdamState",
    "adam_step",
    "zero_grads",
    "finite_diff_check",
]


class ShapeMismatchError(ValueError):
    """Operand shapes cannot be combined under a primitive's shape rules."""


class BackwardError(RuntimeError):
    """backward() was called on an invalid root or a consumed tape."""


class MissingGradientError(RuntimeError):
    """An optimizer step found a parameter with no accumulated gradient."""


class NonFiniteError(ArithmeticError):
    """A NaN or infinity appeared where finite values were required."""


_grad_enabled = True


@contextmanager
def no_grad():
    """Disable taping inside the block.  Forward values are unaffected."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """A numpy array with an optional gradient and tape record."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp", "_spent")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable | None = None
        self._spent = False

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _node(data: np.ndarray, parents: tuple["Tensor", ...], vjp: Callable) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out._spent = False
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._vjp = vjp
        else:
            out.requires_grad = False
            out._parents = ()
            out._vjp = None
        return out

    # -- basic introspection --------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    # -- autodiff ---------------------------------------------------------------

    def backward(self) -> None:
        """Accumulate gradients of this scalar into every tensor on its tape.

        The walk consumes the tape: parents and closures are dropped as each
        node is processed, and a second call on the same root raises
        :class:`BackwardError`.
        """
        if self._spent:
            raise BackwardError("backward() called twice on the same tape; rerun the forward pass")
        if not self.requires_grad:
            raise BackwardError("backward() root does not require gradients")
        if self.data.size != 1:
            raise BackwardError(f"backward() root must be a scalar, got shape {self.data.shape}")

        # Iterative post-order DFS: sequence models tape thousands of steps,
        # far past the default recursion limit.
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            vjp = node._vjp
            if vjp is None:
                continue
            grads = vjp(node.grad)
            for parent, pg in zip(node._parents, grads):
                if pg is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = pg
                else:
                    parent.grad = parent.grad + pg
            node._parents = ()
            node._vjp = None
        self._spent = True

    # -- operator sugar ---------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return subtract(self, other)

    def __rsub__(self, other):
        return subtract(other, self)

    def __mul__(self, other):
        return multiply(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return divide(self, other)

    def __rtruediv__(self, other):
        return divide(other, self)

    def __neg__(self):
        return multiply(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        data = self.data[key]
        if isinstance(data, np.ndarray) and data.base is not None:
            data = data.copy()
        shape = self.data.shape

        def vjp(g):
            full = np.zeros(shape, dtype=g.dtype)
            full[key] = g
            return (full,)

        return Tensor._node(np.asarray(data), (self,), vjp)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes if axes else None)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` to undo numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_data(op: str, a: Tensor, b: Tensor, fn) -> np.ndarray:
    try:
        return fn(a.data, b.data)
    except ValueError as err:
        raise ShapeMismatchError(f"{op}: operands {a.data.shape} and {b.data.shape} do not broadcast") from err


# -- elementwise arithmetic ------------------------------------------------------


def add(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _as_tensor(a, b)
    b = _as_tensor(b, a)
    data = _broadcast_data("add", a, b, np.add)

    def vjp(g):
        return (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape))

    return Tensor._node(data, (a, b), vjp)


def subtract(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _as_tensor(a, b)
    b = _as_tensor(b, a)
    data = _broadcast_data("subtract", a, b, np.subtract)

    def vjp(g):
        return (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape))

    return Tensor._node(data, (a, b), vjp)


def multiply(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _as_tensor(a, b)
    b = _as_tensor(b, a)
    data = _broadcast_data("multiply", a, b, np.multiply)

    def vjp(g):
        ga = _unbroadcast(g * b.data, a.data.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.data.shape) if b.requires_grad else None
        return (ga, gb)

    return Tensor._node(data, (a, b), vjp)


def divide(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _as_tensor(a, b)
    b = _as_tensor(b, a)
    data = _broadcast_data("divide", a, b, np.divide)

    def vjp(g):
        ga = _unbroadcast(g / b.data, a.data.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * data / b.data, b.data.shape) if b.requires_grad else None
        return (ga, gb)

    return Tensor._node(data, (a, b), vjp)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if not isinstance(a, Tensor) or not isinstance(b, Tensor):
        raise TypeError("matmul expects Tensor operands")
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeMismatchError(f"matmul: operands must be at least 2-D, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeMismatchError(f"matmul: inner dimensions differ, {a.data.shape} @ {b.data.shape}")
    data = _broadcast_data("matmul", a, b, np.matmul)

    def vjp(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, b.data.swapaxes(-1, -2)), a.data.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(a.data.swapaxes(-1, -2), g), b.data.shape)
        return (ga, gb)

    return Tensor._node(data, (a, b), vjp)


def maximum(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _as_tensor(a, b)
    b = _as_tensor(b, a)
    data = _broadcast_data("maximum", a, b, np.maximum)

    def vjp(g):
        # Ties route the gradient to the first operand.
        take_a = a.data >= b.data
        ga = _unbroadcast(np.where(take_a, g, 0.0), a.data.shape) if a.requires_grad else None
        gb = _unbroadcast(np.where(take_a, 0.0, g), b.data.shape) if b.requires_grad else None
        return (ga, gb)

    return Tensor._node(data, (a, b), vjp)


# -- elementwise nonlinearities ---------------------------------------------------


def exp(x: Tensor) -> Tensor:
    data = np.exp(x.data)

    def vjp(g):
        return (g * data,)

    return Tensor._node(data, (x,), vjp)


def log(x: Tensor) -> Tensor:
    data = np.log(x.data)

    def vjp(g):
        return (g / x.data,)

    return Tensor._node(data, (x,), vjp)


def tanh(x: Tensor) -> Tensor:
    data = np.tanh(x.data)

    def vjp(g):
        return (g * (1.0 - data * data),)

    return Tensor._node(data, (x,), vjp)


def sigmoid(x: Tensor) -> Tensor:
    data = expit(x.data)

    def vjp(g):
        return (g * data * (1.0 - data),)

    return Tensor._node(data, (x,), vjp)


def relu(x: Tensor) -> Tensor:
    data = np.maximum(x.data, 0.0)

    def vjp(g):
        return (np.where(x.data > 0.0, g, 0.0),)

    return Tensor._node(data, (x,), vjp)


def softplus(x: Tensor) -> Tensor:
    # log(1 + e^x) evaluated stably for large |x|.
    data = np.logaddexp(0.0, x.data)

    def vjp(g):
        return (g * expit(x.data),)

    return Tensor._node(data, (x,), vjp)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        return (data * (g - dot),)

    return Tensor._node(data, (x,), vjp)


def layer_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean and unit variance (no affine)."""
    mean = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    data = centered * inv

    def vjp(g):
        gm = g.mean(axis=-1, keepdims=True)
        gy = (g * data).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - data * gy),)

    return Tensor._node(data, (x,), vjp)


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None = None, train: bool = True) -> Tensor:
    """Inverted dropout; the identity when ``train`` is false or ``rate`` is 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    keep = 1.0 - rate
    mask = (rng.random(x.data.shape) >= rate).astype(x.data.dtype) / keep
    data = x.data * mask

    def vjp(g):
        return (g * mask,)

    return Tensor._node(data, (x,), vjp)


# -- shape manipulation -----------------------------------------------------------


def concatenate(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    ts = list(tensors)
    if not ts:
        raise ShapeMismatchError("concatenate: need at least one tensor")
    try:
        data = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as err:
        raise ShapeMismatchError(f"concatenate: incompatible shapes {[t.data.shape for t in ts]}") from err
    sizes = [t.data.shape[axis] for t in ts]
    bounds = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor._node(data, tuple(ts), vjp)


def transpose(x: Tensor, axes: tuple[int, ...] | None = None) -> Tensor:
    data = np.transpose(x.data, axes)
    if axes is None:
        inverse = None
    else:
        inverse = tuple(np.argsort(axes))

    def vjp(g):
        return (np.transpose(g, inverse),)

    return Tensor._node(data, (x,), vjp)


def reshape(x: Tensor, shape) -> Tensor:
    data = np.reshape(x.data, shape)
    old = x.data.shape

    def vjp(g):
        return (np.reshape(g, old),)

    return Tensor._node(data, (x,), vjp)


# -- reductions ---------------------------------------------------------------------


def tensor_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, x.data.shape).copy(),)
        gg = g
        if not keepdims:
            gg = np.expand_dims(g, axis)
        return (np.broadcast_to(gg, x.data.shape).copy(),)

    return Tensor._node(np.asarray(data), (x,), vjp)


def tensor_mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = x.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = 1
        for ax in axes:
            count *= x.data.shape[ax]
    data = x.data.mean(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g / count, x.data.shape).copy(),)
        gg = g
        if not keepdims:
            gg = np.expand_dims(g, axis)
        return (np.broadcast_to(gg / count, x.data.shape).copy(),)

    return Tensor._node(np.asarray(data), (x,), vjp)


# -- optimizer ------------------------------------------------------------------------


@dataclass
class AdamState:
    """Adam moment estimates keyed by parameter-group name."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], state: AdamState) -> None:
    """Apply one bias-corrected Adam update in place and clear gradients.

    With moments at zero the first update is about -lr * sign(grad) per
    element, so learning_rate bounds the per-step parameter movement.
    """
    missing = sorted(name for name, p in params.items() if p.grad is None)
    if missing:
        raise MissingGradientError(f"no gradient accumulated for parameter group(s): {', '.join(missing)}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1 ** t
    bias2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = p.grad
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
            state.m[name] = m
            state.v[name] = v
        else:
            v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data = p.data - state.learning_rate * (m / bias1) / (np.sqrt(v / bias2) + state.epsilon)
        p.grad = None


def zero_grads(params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None


# -- gradient checking ---------------------------------------------------------------


def finite_diff_check(fn, params: dict[str, Tensor], step: float = 1e-5) -> dict[str, float]:
    """Compare reverse-mode gradients of ``fn(params)`` with central differences.

    ``fn`` must return a scalar Tensor.  Every element of every parameter is
    perturbed by ``+-step``, so keep the parameter count small and build the
    parameters in float64; float32 truncation swamps the difference quotient.
    Returns the max relative error ``|a - n| / max(1e-12, |a| + |n|)`` per
    parameter group.
    """
    zero_grads(params)
    loss = fn(params)
    if not isinstance(loss, Tensor) or loss.data.size != 1:
        raise BackwardError("finite_diff_check needs a scalar Tensor loss")
    if not np.isfinite(loss.data).all():
        raise NonFiniteError("finite_diff_check: loss is not finite")
    loss.backward()
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }
    errors: dict[str, float] = {}
    with no_grad():
        for name, p in params.items():
            flat = p.data.reshape(-1)
            aflat = analytic[name].reshape(-1)
            worst = 0.0
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                f_plus = float(fn(params).data)
                flat[i] = orig - step
                f_minus = float(fn(params).data)
                flat[i] = orig
                numeric = (f_plus - f_minus) / (2.0 * step)
                a = float(aflat[i])
                worst = max(worst, abs(a - numeric) / max(1e-12, abs(a) + abs(numeric)))
            errors[name] = worst
    zero_grads(params)
    return errors
