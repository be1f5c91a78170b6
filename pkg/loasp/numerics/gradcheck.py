"""Central finite differences, the oracle for every gradient test."""

from __future__ import annotations

from typing import Callable, Optional, Union

import numpy as np

from loasp.numerics.tensor import Tensor, no_grad
from loasp.types.errors import ContractViolation, NumericFailureError

ScalarFn = Callable[[Tensor], Union[Tensor, float]]


def _evaluate(fn: ScalarFn, input: Tensor) -> float:
    with no_grad():
        value = fn(input)
    result = value.item() if isinstance(value, Tensor) else float(value)
    if not np.isfinite(result):
        raise NumericFailureError("finite-difference step returned a non-finite value", node="fn")
    return result


def finite_difference_grad(
    fn: ScalarFn,
    input: Tensor,
    eps: float = 1e-6,
    indices: Optional[np.ndarray] = None,
) -> Tensor:
    """Estimate d fn / d input by central differences.

    ``input.data`` is perturbed in place and restored, so ``fn`` may ignore its
    argument and close over module parameters instead.

    Args:
        fn: Deterministic scalar-valued function.
        input: The tensor to differentiate with respect to.
        eps: Half step of the central difference.
        indices: Optional flat indices to perturb; other entries are left at 0.

    Returns:
        Tensor of the same shape as ``input``.
    """
    if eps <= 0:
        raise ContractViolation(f"eps must be positive, got {eps}")
    flat = input.data.reshape(-1)
    grad = np.zeros(flat.shape, dtype=np.float64)
    coords = range(flat.size) if indices is None else np.asarray(indices).ravel()
    for i in coords:
        original = flat[i]
        flat[i] = original + eps
        upper = _evaluate(fn, input)
        flat[i] = original - eps
        lower = _evaluate(fn, input)
        flat[i] = original
        grad[i] = (upper - lower) / (2.0 * eps)
    return Tensor(grad.reshape(input.shape))


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """Largest absolute deviation scaled by the larger gradient magnitude."""
    scale = max(float(np.max(np.abs(analytic))), float(np.max(np.abs(numeric))), floor)
    return float(np.max(np.abs(analytic - numeric))) / scale


def check_gradient(
    loss_fn: Callable[[], Tensor],
    tensor: Tensor,
    samples: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    eps: float = 1e-6,
) -> float:
    """Compare backward() with finite differences for one tensor.

    Args:
        loss_fn: Builds the scalar loss from the current parameter values.
        tensor: Leaf tensor with ``requires_grad``.
        samples: Check this many random coordinates instead of all of them.
        rng: Generator used to choose the coordinates.
        eps: Finite-difference half step.

    Returns:
        The relative error on the checked coordinates.
    """
    tensor.zero_grad()
    loss_fn().backward()
    analytic = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
    if samples is None or samples >= tensor.size:
        indices = np.arange(tensor.size)
    else:
        indices = (rng or np.random.default_rng(0)).choice(tensor.size, samples, replace=False)
    numeric = finite_difference_grad(lambda _: loss_fn(), tensor, eps=eps, indices=indices)
    return relative_error(analytic.reshape(-1)[indices], numeric.data.reshape(-1)[indices])
