"""Minimal dense tensor with reverse-mode differentiation on numpy buffers.

Every operation returns a new :class:`Tensor`. When one of its inputs requires gradients the
result remembers its parents and a backward rule; :func:`backward` replays those rules in
reverse topological order (the tape) and accumulates gradients into the leaf tensors.
"""

from __future__ import annotations

import builtins
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator, Mapping, Sequence, Union

import numpy as np

from ._errors import NonScalarLossError, ShapeMismatchError

ArrayLike = Union["Tensor", np.ndarray, np.generic, float, int, Sequence[Any]]
Backward = Callable[[np.ndarray], Sequence[Union[np.ndarray, None]]]

# a kink keeps its one-sided slope gap as the step shrinks; a smooth function loses it
KINK_GAP_RATIO = 0.25


class Tensor:
    """Float64 array that records how it was computed.

    :param data: values; always copied into a fresh float64 buffer.
    :param requires_grad: whether gradients should be accumulated into ``grad``.
    :param name: optional label, used by :class:`ParamRegistry`.
    """

    __slots__ = ("_backward", "_parents", "data", "grad", "name", "requires_grad")

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,  # noqa: FBT001, FBT002
        name: str = "",
    ) -> None:
        raw = data.data if isinstance(data, Tensor) else data
        self.data: np.ndarray = np.array(raw, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = np.zeros_like(self.data) if requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Backward | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(int(n) for n in self.data.shape)

    @property
    def ndim(self) -> int:
        return int(self.data.ndim)

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def item(self) -> float:
        if self.data.size != 1:
            msg = f"item() needs a single element, got shape {self.shape}"
            raise ValueError(msg)
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        """Copy of the values."""
        return self.data.copy()

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        grad = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{grad})"

    def __add__(self, other: ArrayLike) -> Tensor:
        return add(self, other)

    def __radd__(self, other: ArrayLike) -> Tensor:
        return add(other, self)

    def __sub__(self, other: ArrayLike) -> Tensor:
        return sub(self, other)

    def __rsub__(self, other: ArrayLike) -> Tensor:
        return sub(other, self)

    def __mul__(self, other: ArrayLike) -> Tensor:
        return mul(self, other)

    def __rmul__(self, other: ArrayLike) -> Tensor:
        return mul(other, self)

    def __truediv__(self, other: ArrayLike) -> Tensor:
        return div(self, other)

    def __rtruediv__(self, other: ArrayLike) -> Tensor:
        return div(other, self)

    def __neg__(self) -> Tensor:
        return neg(self)

    def __pow__(self, exponent: float) -> Tensor:
        return power(self, exponent)

    def __matmul__(self, other: ArrayLike) -> Tensor:
        return matmul(self, other)

    def __rmatmul__(self, other: ArrayLike) -> Tensor:
        return matmul(other, self)

    def __getitem__(self, index: Any) -> Tensor:  # noqa: ANN401
        return getitem(self, index)


def as_tensor(value: ArrayLike) -> Tensor:
    """Wrap constants; tensors are returned as they are."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _result(data: np.ndarray, parents: Sequence[Tensor], rule: Backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = ""
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = rule
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        msg = f"{op}: shapes {a.shape} and {b.shape} do not broadcast"
        raise ShapeMismatchError(msg) from None


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)

    def rule(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _result(a.data + b.data, (a, b), rule)


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)

    def rule(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _result(a.data - b.data, (a, b), rule)


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)

    def rule(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return _unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)

    return _result(a.data * b.data, (a, b), rule)


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    out = a.data / b.data

    def rule(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * out / b.data, b.data.shape),
        )

    return _result(out, (a, b), rule)


def maximum(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Elementwise maximum; ties send the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("maximum", a, b)
    take_a = a.data >= b.data

    def rule(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return (
            _unbroadcast(np.where(take_a, g, 0.0), a.data.shape),
            _unbroadcast(np.where(take_a, 0.0, g), b.data.shape),
        )

    return _result(np.maximum(a.data, b.data), (a, b), rule)


def neg(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    return _result(-x.data, (x,), lambda g: (-g,))


def exp(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return _result(out, (x,), lambda g: (g * out,))


def log(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    return _result(np.log(x.data), (x,), lambda g: (g / x.data,))


def power(x: ArrayLike, exponent: float) -> Tensor:
    x = as_tensor(x)
    return _result(
        x.data**exponent, (x,), lambda g: (g * exponent * x.data ** (exponent - 1.0),)
    )


def sqrt(x: ArrayLike) -> Tensor:
    return power(x, 0.5)


def tanh(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    return _result(out, (x,), lambda g: (g * (1.0 - out * out),))


def sigmoid(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    # Split by sign so that large magnitudes never overflow exp.
    z = np.exp(-np.abs(x.data))
    out = np.where(x.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    return _result(out, (x,), lambda g: (g * out * (1.0 - out),))


def relu(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    positive = x.data > 0
    return _result(np.where(positive, x.data, 0.0), (x,), lambda g: (np.where(positive, g, 0.0),))


def clip(x: ArrayLike, low: float, high: float) -> Tensor:
    """Clamp to ``[low, high]``; no gradient flows through clamped entries."""
    x = as_tensor(x)
    inside = (x.data >= low) & (x.data <= high)
    return _result(np.clip(x.data, low, high), (x,), lambda g: (np.where(inside, g, 0.0),))


def _normalize_axes(axis: int | tuple[int, ...] | None, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else axis
    return tuple(sorted(a % ndim for a in axes))


def sum(  # noqa: A001
    x: ArrayLike,
    axis: int | tuple[int, ...] | None = None,
    keepdims: bool = False,  # noqa: FBT001, FBT002
) -> Tensor:
    x = as_tensor(x)
    axes = _normalize_axes(axis, x.ndim)
    out = np.sum(x.data, axis=axes, keepdims=keepdims)

    def rule(g: np.ndarray) -> tuple[np.ndarray]:
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.data.shape).copy(),)

    return _result(np.asarray(out, dtype=np.float64), (x,), rule)


def mean(
    x: ArrayLike,
    axis: int | tuple[int, ...] | None = None,
    keepdims: bool = False,  # noqa: FBT001, FBT002
) -> Tensor:
    x = as_tensor(x)
    axes = _normalize_axes(axis, x.ndim)
    count = int(np.prod([x.data.shape[a] for a in axes])) if axes else 1
    return sum(x, axis=axes, keepdims=keepdims) * (1.0 / count)


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Matrix product with numpy ``matmul`` semantics (batch dimensions broadcast)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 0 or b.ndim == 0:
        msg = f"matmul: operands must be at least 1-D, got {a.shape} and {b.shape}"
        raise ShapeMismatchError(msg)
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        msg = f"matmul: cannot multiply {a.shape} by {b.shape}"
        raise ShapeMismatchError(msg) from None

    def rule(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        ad, bd = a.data, b.data
        if ad.ndim == 1 and bd.ndim == 1:
            return g * bd, g * ad
        a2 = ad[None, :] if ad.ndim == 1 else ad
        b2 = bd[:, None] if bd.ndim == 1 else bd
        g2 = np.expand_dims(g, -2) if ad.ndim == 1 else g
        g2 = np.expand_dims(g2, -1) if bd.ndim == 1 else g2
        ga = g2 @ np.swapaxes(b2, -1, -2)
        gb = np.swapaxes(a2, -1, -2) @ g2
        if ad.ndim == 1:
            ga = ga[..., 0, :]
        if bd.ndim == 1:
            gb = gb[..., 0]
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _result(out, (a, b), rule)


def reshape(x: ArrayLike, shape: tuple[int, ...]) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        msg = f"reshape: cannot reshape {x.shape} into {shape}"
        raise ShapeMismatchError(msg) from None
    return _result(out, (x,), lambda g: (g.reshape(x.data.shape),))


def broadcast_to(x: ArrayLike, shape: tuple[int, ...]) -> Tensor:
    """Tile ``x`` to ``shape`` following broadcasting rules."""
    x = as_tensor(x)
    try:
        out = np.broadcast_to(x.data, shape).copy()
    except ValueError:
        msg = f"broadcast_to: cannot broadcast {x.shape} to {shape}"
        raise ShapeMismatchError(msg) from None
    return _result(out, (x,), lambda g: (_unbroadcast(g, x.data.shape),))


def transpose(x: ArrayLike, axes: tuple[int, ...] | None = None) -> Tensor:
    x = as_tensor(x)
    perm = tuple(reversed(range(x.ndim))) if axes is None else axes
    inverse = tuple(int(i) for i in np.argsort(perm))
    return _result(np.transpose(x.data, perm), (x,), lambda g: (np.transpose(g, inverse),))


def swapaxes(x: ArrayLike, axis1: int, axis2: int) -> Tensor:
    x = as_tensor(x)
    return _result(
        np.swapaxes(x.data, axis1, axis2), (x,), lambda g: (np.swapaxes(g, axis1, axis2),)
    )


def _is_basic_index(index: Any) -> bool:  # noqa: ANN401
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(p, (int, slice, type(Ellipsis), type(None))) for p in parts)


def getitem(x: ArrayLike, index: Any) -> Tensor:  # noqa: ANN401
    """Basic and advanced indexing (slicing)."""
    x = as_tensor(x)
    out = np.array(x.data[index], dtype=np.float64)

    def rule(g: np.ndarray) -> tuple[np.ndarray]:
        full = np.zeros_like(x.data)
        if _is_basic_index(index):
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _result(out, (x,), rule)


def concat(tensors: Sequence[ArrayLike], axis: int = -1) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError:
        shapes = ", ".join(str(p.shape) for p in parts)
        msg = f"concat: incompatible shapes {shapes} along axis {axis}"
        raise ShapeMismatchError(msg) from None
    bounds = np.cumsum([p.data.shape[axis] for p in parts])[:-1]

    def rule(g: np.ndarray) -> list[np.ndarray]:
        return np.split(g, bounds, axis=axis)

    return _result(out, parts, rule)


def stack(tensors: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    try:
        out = np.stack([p.data for p in parts], axis=axis)
    except ValueError:
        shapes = ", ".join(str(p.shape) for p in parts)
        msg = f"stack: incompatible shapes {shapes}"
        raise ShapeMismatchError(msg) from None

    def rule(g: np.ndarray) -> list[np.ndarray]:
        return [np.take(g, i, axis=axis) for i in range(len(parts))]

    return _result(out, parts, rule)


def softmax(x: ArrayLike, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / np.sum(e, axis=axis, keepdims=True)

    def rule(g: np.ndarray) -> tuple[np.ndarray]:
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return _result(out, (x,), rule)


def layer_norm(x: ArrayLike, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Normalize to zero mean and unit variance along ``axis`` (no affine parameters)."""
    x = as_tensor(x)
    centred = x.data - np.mean(x.data, axis=axis, keepdims=True)
    inv_std = 1.0 / np.sqrt(np.mean(centred * centred, axis=axis, keepdims=True) + eps)
    out = centred * inv_std
    n = x.data.shape[axis]

    def rule(g: np.ndarray) -> tuple[np.ndarray]:
        g_sum = np.sum(g, axis=axis, keepdims=True)
        gy_sum = np.sum(g * out, axis=axis, keepdims=True)
        return (inv_std / n * (n * g - g_sum - out * gy_sum),)

    return _result(out, (x,), rule)


def top_k_indicator(values: np.ndarray, k: int, axis: int = -1) -> np.ndarray:
    """Boolean mask of the ``k`` largest entries along ``axis`` (ties broken by position)."""
    size = values.shape[axis]
    if k >= size:
        return np.ones(values.shape, dtype=bool)
    order = np.argsort(-values, axis=axis, kind="stable")
    keep = np.take(order, np.arange(max(k, 0)), axis=axis)
    mask = np.zeros(values.shape, dtype=bool)
    np.put_along_axis(mask, keep, values=True, axis=axis)
    return mask


def top_k_mask(x: ArrayLike, k: int, axis: int = -1) -> Tensor:
    """Zero all but the ``k`` largest entries along ``axis``.

    The mask itself is treated as a constant: kept entries pass their gradient straight
    through, dropped entries receive none.
    """
    x = as_tensor(x)
    mask = top_k_indicator(x.data, k, axis).astype(np.float64)
    return mul(x, mask)


def dropout(x: ArrayLike, rate: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when ``rng`` is ``None`` or ``rate`` is 0."""
    x = as_tensor(x)
    if rng is None or rate <= 0.0:
        return x
    keep = (rng.random(x.data.shape) >= rate).astype(np.float64) / (1.0 - rate)
    return mul(x, keep)


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack_: list[tuple[Tensor, bool]] = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        parents = node._parents  # noqa: SLF001
        stack_.extend((p, False) for p in parents if p.requires_grad and id(p) not in seen)
    return order


def backward(loss: Tensor) -> None:
    """Accumulate ``d loss / d leaf`` into every reachable leaf that requires gradients.

    :param loss: tensor with exactly one element.
    """
    if loss.data.size != 1:
        msg = f"backward needs a scalar loss, got shape {loss.shape}"
        raise NonScalarLossError(msg)
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:  # noqa: SLF001
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, parent_grad in zip(node._parents, node._backward(g)):  # noqa: SLF001
            if parent_grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + parent_grad if key in grads else parent_grad


class ParamRegistry:
    """Flat, name-addressable collection of learnable tensors."""

    def __init__(self) -> None:
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            msg = f"Parameter '{name}' is already registered."
            raise ValueError(msg)
        tensor = Tensor(value, requires_grad=True, name=name)
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: object) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self) -> list[tuple[str, Tensor]]:
        return list(self._params.items())

    def names(self) -> list[str]:
        return list(self._params)

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def num_parameters(self) -> int:
        return builtins.sum(int(t.data.size) for t in self._params.values())

    def zero_grad(self) -> None:
        for tensor in self._params.values():
            tensor.grad = np.zeros_like(tensor.data)

    def grad_norm(self) -> float:
        total = 0.0
        for tensor in self._params.values():
            if tensor.grad is not None:
                total += float(np.sum(tensor.grad * tensor.grad))
        return float(np.sqrt(total))

    def snapshot(self) -> dict[str, np.ndarray]:
        """Copies of all parameter values."""
        return {name: t.data.copy() for name, t in self._params.items()}

    def load(self, values: Mapping[str, np.ndarray]) -> None:
        """Overwrite parameter values (by name) with copies of ``values``."""
        for name, value in values.items():
            tensor = self._params[name]
            array = np.array(value, dtype=np.float64)
            if array.shape != tensor.data.shape:
                msg = f"Parameter '{name}': expected shape {tensor.shape}, got {array.shape}"
                raise ShapeMismatchError(msg)
            tensor.data = array


@dataclass
class GradCheckResult:
    """Outcome of :func:`check_gradients`."""

    max_error: float = 0.0
    checked: int = 0
    skipped: int = 0
    failures: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def _shifted(fn: Callable[[], Tensor], p: Tensor, index: tuple[Any, ...], delta: float) -> float:
    original = p.data[index]
    p.data[index] = original + delta
    try:
        return fn().item()
    finally:
        p.data[index] = original


def _within(value: float, numeric: float, rtol: float, atol: float) -> bool:
    return abs(value - numeric) <= atol + rtol * max(abs(value), abs(numeric))


def check_gradients(  # noqa: PLR0913
    fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-4,
    rtol: float = 1e-3,
    atol: float = 1e-6,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
    *,
    allow_kinks: bool = False,
) -> GradCheckResult:
    """Compare analytic gradients against central finite differences.

    :param fn: deterministic closure returning a scalar tensor built from ``params``.
    :param params: leaf tensors whose gradients are checked.
    :param max_coords: check at most this many randomly chosen coordinates per tensor.
    :param allow_kinks: skip coordinates that sit on a kink (relu, max, clip, top-k) instead
        of reporting them.

    A mismatch at step ``h`` is retried with steps down to ``h / 16``. If none agree, the
    coordinate is a kink when the gap between the one-sided slopes does not shrink with the
    step; a smooth function halves that gap every time the step is halved.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    for p in params:
        p.grad = np.zeros_like(p.data)
    base_tensor = fn()
    backward(base_tensor)
    base = base_tensor.item()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    result = GradCheckResult()
    for p, grad in zip(params, analytic):
        coords = np.arange(p.data.size)
        if max_coords is not None and p.data.size > max_coords:
            coords = np.sort(rng.choice(p.data.size, size=max_coords, replace=False))
        for flat in coords:
            index = np.unravel_index(int(flat), p.data.shape)
            value = float(grad[index])
            step = h
            plus, minus = _shifted(fn, p, index, step), _shifted(fn, p, index, -step)
            numeric = (plus - minus) / (2.0 * step)
            gap = abs(plus - 2.0 * base + minus) / step
            first_gap = gap
            while not _within(value, numeric, rtol, atol) and step > h / 16:
                step /= 2
                plus, minus = _shifted(fn, p, index, step), _shifted(fn, p, index, -step)
                numeric = (plus - minus) / (2.0 * step)
                gap = abs(plus - 2.0 * base + minus) / step
            error = abs(value - numeric)
            if not _within(value, numeric, rtol, atol):
                if allow_kinks and gap > KINK_GAP_RATIO * first_gap:
                    result.skipped += 1
                    continue
                result.failures.append(
                    f"{p.name or 'tensor'}{tuple(int(i) for i in index)}: "
                    f"analytic {value:.6g} vs numeric {numeric:.6g}"
                )
            result.checked += 1
            result.max_error = max(
                result.max_error, error / max(abs(value), abs(numeric), atol)
            )
    return result
