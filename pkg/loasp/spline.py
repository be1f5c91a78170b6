"""B-spline basis evaluation and the learnable per-channel spline activation.

Basis functions follow the Cox–de Boor recursion::

    N_{i,0}(x) = 1 if u_i <= x < u_{i+1} else 0
    N_{i,p}(x) = (x - u_i) / (u_{i+p} - u_i) N_{i,p-1}(x)
               + (u_{i+p+1} - x) / (u_{i+p+1} - u_{i+1}) N_{i+1,p-1}(x)

with 0/0 terms taken as 0 and the last non-empty interval closed on the right,
so the basis still sums to one at the upper end of the knot range.
"""

from __future__ import annotations

import logging
from typing import Sequence, Tuple, Union

import numpy as np

from loasp.numerics.layers import Module
from loasp.numerics.tensor import Parameter, Tensor
from loasp.types.errors import ContractViolation, ShapeError, UnsupportedInitError
from loasp.types.spline import KnotVector

logger = logging.getLogger(__name__)

KnotsLike = Union[KnotVector, Sequence[float]]


def make_clamped_uniform_knots(p: int, G: int, lo: float = -1.0, hi: float = 1.0) -> KnotVector:
    """Clamped knots with ``G`` uniform intervals on [lo, hi].

    Args:
        p: Spline degree.
        G: Number of grid intervals; the basis then has G + p functions.
        lo: Lower end of the domain.
        hi: Upper end of the domain.

    Returns:
        KnotVector with p + 1 copies of each end and G - 1 interior knots.

    Raises:
        ContractViolation: If ``p < 0``, ``G < 1`` or ``lo >= hi``.

    Example:
        >>> make_clamped_uniform_knots(2, 2).knots
        [-1.0, -1.0, -1.0, 0.0, 1.0, 1.0, 1.0]
    """
    if p < 0 or G < 1 or not lo < hi:
        raise ContractViolation(f"clamped knots need p >= 0, G >= 1, lo < hi (got {p}, {G}, {lo}, {hi})")
    interior = np.linspace(lo, hi, G + 1)[1:-1]
    knots = [float(lo)] * (p + 1) + [float(v) for v in interior] + [float(hi)] * (p + 1)
    return KnotVector(degree=p, knots=knots)


def _knot_array(knots: KnotsLike) -> np.ndarray:
    if isinstance(knots, KnotVector):
        return knots.array
    return np.asarray(knots, dtype=np.float64)


def _last_span(u: np.ndarray) -> int:
    """Index of the last non-empty knot interval."""
    spans = np.nonzero(u[1:] > u[:-1])[0]
    if spans.size == 0:
        raise ContractViolation("knot sequence has no non-empty interval")
    return int(spans[-1])


def bspline_basis(i: int, p: int, x: float, knots: KnotsLike) -> float:
    """Evaluate one basis function N_{i,p}(x) by direct recursion.

    A plain knot sequence is accepted as well as a ``KnotVector``. This is the
    reference evaluation; ``basis_all`` computes all functions at once.

    Raises:
        ContractViolation: If ``i`` is outside [0, m - p).
    """
    u = _knot_array(knots)
    m = u.size - 1
    if p < 0 or not 0 <= i < m - p:
        raise ContractViolation(f"basis index {i} out of range for degree {p} and {m + 1} knots")
    last = _last_span(u)
    x = float(x)

    def recurse(j: int, d: int) -> float:
        if d == 0:
            if u[j] <= x < u[j + 1]:
                return 1.0
            return 1.0 if (j == last and x == u[-1]) else 0.0
        left_den = u[j + d] - u[j]
        right_den = u[j + d + 1] - u[j + 1]
        left = 0.0 if left_den == 0 else (x - u[j]) / left_den * recurse(j, d - 1)
        right = 0.0 if right_den == 0 else (u[j + d + 1] - x) / right_den * recurse(j + 1, d - 1)
        return float(left + right)

    return recurse(i, p)


def _degree_zero(u: np.ndarray, x: np.ndarray) -> np.ndarray:
    x = x[..., None]
    basis = ((u[:-1] <= x) & (x < u[1:])).astype(np.float64)
    at_end = x[..., 0] == u[-1]
    basis[..., _last_span(u)] = np.where(at_end, 1.0, basis[..., _last_span(u)])
    return basis


def _raise_degree(u: np.ndarray, x: np.ndarray, lower: np.ndarray, d: int) -> np.ndarray:
    """Apply one recursion step from degree d - 1 to degree d."""
    m = u.size - 1
    x = x[..., None]
    left_den = u[d:m] - u[: m - d]
    right_den = u[d + 1 :] - u[1 : m - d + 1]
    left_coef = np.where(left_den > 0, (x - u[: m - d]) / np.where(left_den > 0, left_den, 1.0), 0.0)
    right_coef = np.where(
        right_den > 0, (u[d + 1 :] - x) / np.where(right_den > 0, right_den, 1.0), 0.0
    )
    return left_coef * lower[..., :-1] + right_coef * lower[..., 1:]


def clamp_to_domain(x: np.ndarray, knots: KnotVector) -> np.ndarray:
    lo, hi = knots.domain
    return np.clip(x, lo, hi)


def basis_all(p: int, x: Union[float, np.ndarray], knots: KnotVector) -> np.ndarray:
    """All degree-``p`` basis values at ``x`` (scalar or array).

    ``x`` is clamped to the knot domain first. The arithmetic matches
    ``bspline_basis`` term by term, so the two agree exactly.

    Returns:
        Array of shape ``x.shape + (m - p,)``.
    """
    u = knots.array
    if p < 0 or p >= u.size - 1:
        raise ContractViolation(f"degree {p} invalid for {u.size} knots")
    values = clamp_to_domain(np.asarray(x, dtype=np.float64), knots)
    basis = _degree_zero(u, values)
    for d in range(1, p + 1):
        basis = _raise_degree(u, values, basis, d)
    return basis


def basis_derivative_weights(knots: KnotVector) -> np.ndarray:
    """p / (u_{j+p} - u_j) for j = 0..n, zero where the interval is empty."""
    u = knots.array
    p = knots.degree
    n = knots.num_basis
    span = u[p : p + n + 1] - u[: n + 1]
    return np.where(span > 0, p / np.where(span > 0, span, 1.0), 0.0)


def greville_abscissae(knots: KnotVector) -> np.ndarray:
    u = knots.array
    p = knots.degree
    return np.array([u[i + 1 : i + p + 1].sum() / p for i in range(knots.num_basis)])


def greville_identity_init(knots: KnotVector, channels: int) -> np.ndarray:
    """Coefficients that make every channel's spline the identity on its domain.

    Raises:
        UnsupportedInitError: At degree 0, which cannot reproduce a line.
    """
    if knots.degree == 0:
        raise UnsupportedInitError("Greville initialization needs degree >= 1")
    return np.tile(greville_abscissae(knots), (channels, 1))


def _midpoint_init(knots: KnotVector, channels: int) -> np.ndarray:
    u = knots.array
    return np.tile(0.5 * (u[:-1] + u[1:])[: knots.num_basis], (channels, 1))


class SplineActivation(Module):
    """Per-channel learnable B-spline nonlinearity with coefficients shared over space.

    Coefficients start at the Greville abscissae (identity map). Degree 0 has
    no identity initialization, so interval midpoints are used instead.

    Args:
        channels: Number of channels, one coefficient row each.
        p: Spline degree.
        u: Number of grid intervals.
        domain: Input range; values outside are clamped.
    """

    def __init__(
        self,
        channels: int,
        p: int = 3,
        u: int = 6,
        domain: Tuple[float, float] = (-1.0, 1.0),
    ) -> None:
        super().__init__()
        self.channels = channels
        self.knots = make_clamped_uniform_knots(p, u, domain[0], domain[1])
        try:
            values = greville_identity_init(self.knots, channels)
        except UnsupportedInitError:
            logger.debug("degree 0 spline: using interval midpoints as coefficients")
            values = _midpoint_init(self.knots, channels)
        self.coefficients = Parameter(values)

    @property
    def degree(self) -> int:
        return self.knots.degree

    def forward(self, x: Tensor) -> Tensor:
        return spline_eval(self, x)


def spline_eval(act: SplineActivation, input: Tensor) -> Tensor:
    """Evaluate ``act`` elementwise on an NCHW tensor.

    y[n, c, h, w] = sum_i coef[c, i] * N_{i,p}(clamp(x[n, c, h, w])). The
    gradient with respect to the input is zero where clamping was active.

    Raises:
        ShapeError: If the channel count differs from the coefficient rows.
    """
    if input.ndim != 4 or input.shape[1] != act.coefficients.shape[0]:
        raise ShapeError("spline channel mismatch", [input.shape, act.coefficients.shape])
    knots = act.knots
    coef = act.coefficients
    p = knots.degree
    basis = basis_all(p, input.data, knots)
    out = np.einsum("nchwi,ci->nchw", basis, coef.data, optimize=True).astype(input.data.dtype)
    lo, hi = knots.domain

    def backward(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        grad_coef = np.einsum("nchw,nchwi->ci", g, basis, optimize=True)
        if p == 0:
            return np.zeros_like(input.data), grad_coef
        lower = basis_all(p - 1, input.data, knots)
        c = coef.data
        n = c.shape[1]
        padded = np.zeros((c.shape[0], n + 2))
        padded[:, 1:-1] = c
        diffs = (padded[:, 1:] - padded[:, :-1]) * basis_derivative_weights(knots)
        slope = np.einsum("nchwj,cj->nchw", lower, diffs, optimize=True)
        inside = (input.data >= lo) & (input.data <= hi)
        return g * slope * inside, grad_coef

    return Tensor.from_op(out, (input, coef), backward, "spline")
