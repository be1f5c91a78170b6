"""AdamW with decoupled weight decay and the step learning-rate schedule."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from loasp.numerics.tensor import Parameter, Tensor
from loasp.types.errors import ContractViolation, NumericFailureError, ShapeError

logger = logging.getLogger(__name__)

DEFAULT_LR = 3e-3
DEFAULT_WEIGHT_DECAY = 1e-4
LOW_RANK_LR = 5e-4


@dataclass
class OptimizerState:
    """Moment buffers, step counter and hyperparameters of one AdamW run."""

    lr: float = DEFAULT_LR
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = DEFAULT_WEIGHT_DECAY
    step: int = 0
    exp_avg: List[np.ndarray] = field(default_factory=list)
    exp_avg_sq: List[np.ndarray] = field(default_factory=list)


def adamw_step(
    params: Sequence[Tensor],
    grads: Sequence[Optional[np.ndarray]],
    state: OptimizerState,
    lr: Optional[float] = None,
) -> Tuple[Sequence[Tensor], OptimizerState]:
    """Apply one AdamW update in place.

    θ ← θ − lr·m̂/(√v̂ + eps) − lr·wd·θ, with bias-corrected moments m̂ and v̂.
    Parameters whose gradient is ``None`` keep their value and moments.

    Args:
        params: Tensors to update.
        grads: One gradient per parameter (``None`` to skip).
        state: Moment buffers; allocated as zeros on the first call.
        lr: Learning rate for this step; defaults to ``state.lr``.

    Returns:
        The updated parameters and state (same objects).

    Raises:
        ShapeError: If a gradient's shape differs from its parameter.
        NumericFailureError: If a gradient is not finite; names the parameter.
    """
    if len(params) != len(grads):
        raise ContractViolation(f"got {len(params)} parameters but {len(grads)} gradients")
    if not state.exp_avg:
        state.exp_avg = [np.zeros_like(p.data) for p in params]
        state.exp_avg_sq = [np.zeros_like(p.data) for p in params]

    for index, (param, grad) in enumerate(zip(params, grads)):
        if grad is None:
            continue
        label = param.name or f"param[{index}]"
        if grad.shape != param.shape:
            raise ShapeError(f"gradient shape does not match '{label}'", [grad.shape, param.shape])
        if not np.all(np.isfinite(grad)):
            raise NumericFailureError(f"non-finite gradient for parameter '{label}'", node=label)

    state.step += 1
    rate = state.lr if lr is None else lr
    correction1 = 1.0 - state.beta1**state.step
    correction2 = 1.0 - state.beta2**state.step
    for param, grad, m, v in zip(params, grads, state.exp_avg, state.exp_avg_sq):
        if grad is None:
            continue
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad * grad
        m_hat = m / correction1
        v_hat = v / correction2
        decay = rate * state.weight_decay * param.data
        param.data -= rate * m_hat / (np.sqrt(v_hat) + state.eps) + decay
    return params, state


class AdamW:
    """Optimizer over a fixed list of parameters.

    Example:
        >>> optimizer = AdamW(model.parameters(), lr=3e-3, weight_decay=1e-4)
        >>> optimizer.zero_grad()
        >>> loss.backward()
        >>> optimizer.step()
    """

    def __init__(
        self,
        params: Sequence[Parameter],
        lr: float = DEFAULT_LR,
        betas: Tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = DEFAULT_WEIGHT_DECAY,
    ) -> None:
        self.params = [p for p in params if p.requires_grad]
        self.state = OptimizerState(
            lr=lr, beta1=betas[0], beta2=betas[1], eps=eps, weight_decay=weight_decay
        )

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self, lr: Optional[float] = None) -> None:
        adamw_step(self.params, [p.grad for p in self.params], self.state, lr=lr)


def step_lr(epoch: int, base_lr: float, period: int = 100) -> float:
    """Halve ``base_lr`` every ``period`` epochs: base_lr / 2^floor(epoch / period)."""
    if epoch < 0 or period < 1:
        raise ContractViolation(f"step_lr needs epoch >= 0 and period >= 1, got {epoch}, {period}")
    return base_lr / 2 ** (epoch // period)
