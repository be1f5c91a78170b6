"""Dense arrays with reverse-mode automatic differentiation.

Every operation records a closure that maps the upstream gradient to one
gradient per parent. ``Tensor.backward`` walks the recorded graph in reverse
topological order and accumulates into the ``grad`` buffers of leaf tensors.

Example:
    >>> x = Tensor(3.0, requires_grad=True)
    >>> y = Tensor(5.0, requires_grad=True)
    >>> (x * y).backward()
    >>> float(x.grad), float(y.grad)
    (5.0, 3.0)
"""

from __future__ import annotations

import contextlib
from typing import (
    Any,
    Callable,
    Dict,
    Iterator,
    List,
    Optional,
    Sequence,
    Tuple,
    Type,
    Union,
)

import numpy as np

from loasp.types.errors import ContractViolation, NumericFailureError, ShapeError

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]
ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence[Any]]

_default_dtype: Type[np.floating] = np.float64
_grad_enabled = True


def set_default_dtype(dtype: Any) -> None:
    """Select the floating-point precision for newly created tensors.

    Args:
        dtype: ``numpy.float64`` (default) or ``numpy.float32``.

    Raises:
        ContractViolation: For any other dtype.
    """
    global _default_dtype
    resolved = np.dtype(dtype)
    if resolved not in (np.dtype(np.float64), np.dtype(np.float32)):
        raise ContractViolation(f"unsupported precision {resolved}; use float64 or float32")
    _default_dtype = resolved.type


def get_default_dtype() -> Type[np.floating]:
    """Return the dtype used for new tensors."""
    return _default_dtype


def is_grad_enabled() -> bool:
    """Whether operations currently record a graph."""
    return _grad_enabled


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block (evaluation, finite differences)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` back down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, extent in enumerate(shape) if extent == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _is_basic_index(index: Any) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(
        isinstance(item, (slice, int, np.integer)) or item is Ellipsis or item is None
        for item in items
    )


class Tensor:
    """An n-dimensional floating-point array participating in differentiation.

    Attributes:
        data: The values, row-major ``numpy`` array.
        requires_grad: Whether gradients flow into this tensor.
        grad: Accumulated gradient (leaf tensors only), ``None`` before backward.
        name: Optional label used in error messages.
    """

    __array_ufunc__ = None

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        name: Optional[str] = None,
    ) -> None:
        source = data.data if isinstance(data, Tensor) else data
        self.data: np.ndarray = np.array(source, dtype=_default_dtype)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._parents: Tuple[Tensor, ...] = ()
        self._backward: Optional[BackwardFn] = None
        self._op = "leaf"

    @staticmethod
    def from_op(
        data: np.ndarray,
        parents: Sequence["Tensor"],
        backward: BackwardFn,
        op: str,
    ) -> "Tensor":
        """Wrap the result of an operation and record how to differentiate it.

        Args:
            data: The computed values.
            parents: Input tensors, in the order ``backward`` returns gradients.
            backward: Maps the upstream gradient to one gradient per parent.
            op: Operation name, reported on numeric failures.

        Raises:
            NumericFailureError: If ``data`` contains NaN or infinity.
        """
        if not np.all(np.isfinite(data)):
            raise NumericFailureError(f"non-finite value produced by '{op}'", node=op)
        out = Tensor.__new__(Tensor)
        out.data = np.asarray(data)
        out.grad = None
        out.name = None
        out._op = op
        track = _grad_enabled and any(p.requires_grad for p in parents)
        out.requires_grad = track
        out._parents = tuple(parents) if track else ()
        out._backward = backward if track else None
        return out

    # ------------------------------------------------------------------
    # Introspection

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def ndim(self) -> int:
        return int(self.data.ndim)

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        """Return the value of a single-element tensor as a Python float."""
        if self.data.size != 1:
            raise ContractViolation(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        """Return a new leaf sharing no graph history."""
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    # ------------------------------------------------------------------
    # Differentiation

    def _topological_order(self) -> List["Tensor"]:
        order: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        return order

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf with ``requires_grad``.

        Repeated calls add into existing gradients; use ``zero_grad`` to reset.

        Raises:
            ContractViolation: If this tensor is not a scalar or has no recorded graph.
            NumericFailureError: If a gradient becomes non-finite; names the node.
        """
        if self.data.size != 1:
            raise ContractViolation(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise ContractViolation("backward() called on a tensor with no recorded graph")

        grads: Dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(self._topological_order()):
            grad = grads.pop(id(node), None)
            if grad is None:
                continue
            if not np.all(np.isfinite(grad)):
                label = node.name or node._op
                raise NumericFailureError(f"non-finite gradient at '{label}'", node=label)
            if node._backward is None:
                node.grad = grad.copy() if node.grad is None else node.grad + grad
                continue
            for parent, parent_grad in zip(node._parents, node._backward(grad)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + parent_grad if key in grads else parent_grad

    # ------------------------------------------------------------------
    # Elementwise arithmetic

    def __add__(self, other: ArrayLike) -> "Tensor":
        b = as_tensor(other)
        a = self

        def backward(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

        return Tensor.from_op(a.data + b.data, (a, b), backward, "add")

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        return Tensor.from_op(-self.data, (self,), lambda g: (-g,), "neg")

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return self + (-as_tensor(other))

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return as_tensor(other) + (-self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        b = as_tensor(other)
        a = self

        def backward(g: np.ndarray) -> Tuple[Optional[np.ndarray], Optional[np.ndarray]]:
            ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
            gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
            return ga, gb

        return Tensor.from_op(a.data * b.data, (a, b), backward, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        b = as_tensor(other)
        a = self

        def backward(g: np.ndarray) -> Tuple[Optional[np.ndarray], Optional[np.ndarray]]:
            ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
            gb = _unbroadcast(-g * a.data / (b.data**2), b.shape) if b.requires_grad else None
            return ga, gb

        return Tensor.from_op(a.data / b.data, (a, b), backward, "div")

    def __pow__(self, exponent: float) -> "Tensor":
        a = self
        return Tensor.from_op(
            a.data**exponent,
            (a,),
            lambda g: (g * exponent * a.data ** (exponent - 1),),
            "pow",
        )

    def __matmul__(self, other: "Tensor") -> "Tensor":
        a, b = self, as_tensor(other)
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeError("matmul needs (n, k) @ (k, m)", [a.shape, b.shape])

        def backward(g: np.ndarray) -> Tuple[Optional[np.ndarray], Optional[np.ndarray]]:
            ga = g @ b.data.T if a.requires_grad else None
            gb = a.data.T @ g if b.requires_grad else None
            return ga, gb

        return Tensor.from_op(a.data @ b.data, (a, b), backward, "matmul")

    # ------------------------------------------------------------------
    # Reductions and views

    def sum(self, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> "Tensor":
        a = self

        def backward(g: np.ndarray) -> Tuple[np.ndarray]:
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, a.shape),)

        return Tensor.from_op(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward, "sum")

    def mean(self, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> "Tensor":
        count = self.data.size if axis is None else int(
            np.prod([self.shape[i] for i in np.atleast_1d(axis)])
        )
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape: int) -> "Tensor":
        a = self
        target = shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape
        return Tensor.from_op(
            a.data.reshape(target), (a,), lambda g: (g.reshape(a.shape),), "reshape"
        )

    def transpose(self, *axes: int) -> "Tensor":
        a = self
        order = axes if axes else tuple(reversed(range(a.ndim)))
        inverse = tuple(np.argsort(order))
        return Tensor.from_op(
            a.data.transpose(order), (a,), lambda g: (g.transpose(inverse),), "transpose"
        )

    def __getitem__(self, index: Any) -> "Tensor":
        a = self

        def backward(g: np.ndarray) -> Tuple[np.ndarray]:
            full = np.zeros_like(a.data)
            if _is_basic_index(index):
                full[index] = g
            else:
                np.add.at(full, index, g)
            return (full,)

        return Tensor.from_op(np.array(a.data[index]), (a,), backward, "index")

    # ------------------------------------------------------------------
    # Nonlinearities

    def relu(self) -> "Tensor":
        a = self
        mask = a.data > 0
        return Tensor.from_op(a.data * mask, (a,), lambda g: (g * mask,), "relu")

    def tanh(self) -> "Tensor":
        a = self
        out = np.tanh(a.data)
        return Tensor.from_op(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")

    def exp(self) -> "Tensor":
        a = self
        out = np.exp(a.data)
        return Tensor.from_op(out, (a,), lambda g: (g * out,), "exp")

    def log(self) -> "Tensor":
        a = self
        return Tensor.from_op(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


class Parameter(Tensor):
    """A learnable leaf tensor; ``requires_grad`` defaults to True."""

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = True,
        name: Optional[str] = None,
    ) -> None:
        super().__init__(data, requires_grad=requires_grad, name=name)

    def __repr__(self) -> str:
        return f"Parameter(shape={self.shape}, requires_grad={self.requires_grad})"


def as_tensor(value: ArrayLike) -> Tensor:
    """Return ``value`` unchanged if it is a Tensor, else a constant leaf."""
    return value if isinstance(value, Tensor) else Tensor(value)
