"""Module containers and the bias-free layers the plug-in blocks are built from."""

from __future__ import annotations

from typing import Any, Dict, Iterator, List, Mapping, Optional, Tuple

import numpy as np
from typing_extensions import Self

from loasp.numerics import functional as F
from loasp.numerics.tensor import Parameter, Tensor, get_default_dtype
from loasp.types.errors import CheckpointFormatError, ContractViolation, ShapeError


def gaussian_fan_in(
    rng: np.random.Generator, shape: Tuple[int, ...], fan_in: Optional[int] = None
) -> np.ndarray:
    """Draw N(0, 2/fan_in) weights; fan_in defaults to the product of all but the first axis."""
    fan = fan_in if fan_in is not None else int(np.prod(shape[1:]))
    return rng.normal(0.0, np.sqrt(2.0 / max(fan, 1)), size=shape)


class Module:
    """Base class: parameters, buffers and child modules are discovered from attributes.

    Attributes holding a ``Parameter``, a ``Module`` or a list of modules are
    traversed in assignment order, which makes ``state_dict`` keys stable.
    """

    def __init__(self) -> None:
        self.training = True
        self._buffers: Dict[str, np.ndarray] = {}

    def forward(self, *args: Any, **kwargs: Any) -> Tensor:
        raise NotImplementedError

    def __call__(self, *args: Any, **kwargs: Any) -> Tensor:
        return self.forward(*args, **kwargs)

    def _children(self) -> Iterator[Tuple[str, "Module"]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_modules(self, prefix: str = "") -> Iterator[Tuple[str, "Module"]]:
        yield prefix.rstrip("."), self
        for name, child in self._children():
            yield from child.named_modules(f"{prefix}{name}.")

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        seen = set()
        for module_name, module in self.named_modules(prefix):
            for name, value in vars(module).items():
                if isinstance(value, Parameter) and id(value) not in seen:
                    seen.add(id(value))
                    yield (f"{module_name}.{name}" if module_name else name), value

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self) -> Iterator[Tuple[str, np.ndarray]]:
        for module_name, module in self.named_modules():
            for name, value in module._buffers.items():
                yield (f"{module_name}.{name}" if module_name else name), value

    def num_parameters(self, trainable_only: bool = False) -> int:
        return sum(p.size for p in self.parameters() if p.requires_grad or not trainable_only)

    def train(self, mode: bool = True) -> Self:
        for _, module in self.named_modules():
            module.training = mode
        return self

    def eval(self) -> Self:
        return self.train(False)

    def requires_grad_(self, flag: bool = True) -> Self:
        for p in self.parameters():
            p.requires_grad = flag
        return self

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> Dict[str, np.ndarray]:
        """Copy every parameter and buffer, keyed by dotted attribute path."""
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        state.update({name: b.copy() for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state: Mapping[str, np.ndarray], strict: bool = True) -> List[str]:
        """Copy values into existing parameters and buffers in place.

        Args:
            state: Mapping produced by ``state_dict`` or a checkpoint.
            strict: Require the key sets to match exactly.

        Returns:
            Keys of this module that were absent from ``state``.

        Raises:
            CheckpointFormatError: On missing or unexpected keys when ``strict``.
            ShapeError: When a stored array has a different shape.
        """
        targets: Dict[str, np.ndarray] = {name: p.data for name, p in self.named_parameters()}
        targets.update(dict(self.named_buffers()))
        missing = [k for k in targets if k not in state]
        unexpected = [k for k in state if k not in targets]
        if strict and (missing or unexpected):
            raise CheckpointFormatError(
                f"state mismatch: missing={missing[:5]}, unexpected={unexpected[:5]}"
            )
        for key, target in targets.items():
            if key not in state:
                continue
            value = np.asarray(state[key])
            if value.shape != target.shape:
                raise ShapeError(f"stored value for '{key}' has the wrong shape", [value.shape, target.shape])
            target[...] = value
        return missing


class Identity(Module):
    """Pass-through host used when a plug-in is inspected on its own."""

    def __init__(self, channels: int, stride: int = 1) -> None:
        super().__init__()
        self.in_channels = channels
        self.out_channels = channels
        self.stride = stride

    def forward(self, x: Tensor) -> Tensor:
        if self.stride == 1:
            return x
        return x[:, :, :: self.stride, :: self.stride]


class Conv2d(Module):
    """Convolution layer; bias-free unless ``bias=True`` is requested explicitly.

    Weights are N(0, 2/fan_in) by default, N(0, init_std) when ``init_std`` is
    given, or exactly zero with ``zero_init``.
    """

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int = 1,
        stride: int = 1,
        padding: int = 0,
        groups: int = 1,
        bias: bool = False,
        rng: Optional[np.random.Generator] = None,
        zero_init: bool = False,
        init_std: Optional[float] = None,
    ) -> None:
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding
        self.groups = groups
        shape = (out_channels, in_channels // groups, kernel_size, kernel_size)
        if zero_init:
            values = np.zeros(shape)
        elif rng is None:
            raise ContractViolation("Conv2d needs an rng unless zero_init is set")
        elif init_std is not None:
            values = rng.normal(0.0, init_std, size=shape)
        else:
            values = gaussian_fan_in(rng, shape)
        self.weight = Parameter(values)
        self.bias: Optional[Parameter] = Parameter(np.zeros(out_channels)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.stride, self.padding, self.groups, self.bias)


class BatchNorm2d(Module):
    """Batch normalization state: affine parameters plus running statistics."""

    def __init__(self, num_features: int, momentum: float = 0.1, eps: float = 1e-5) -> None:
        super().__init__()
        self.num_features = num_features
        self.momentum = momentum
        self.eps = eps
        self.weight = Parameter(np.ones(num_features))
        self.bias = Parameter(np.zeros(num_features))
        dtype = get_default_dtype()
        self._buffers["running_mean"] = np.zeros(num_features, dtype=dtype)
        self._buffers["running_var"] = np.ones(num_features, dtype=dtype)

    @property
    def running_mean(self) -> np.ndarray:
        return self._buffers["running_mean"]

    @property
    def running_var(self) -> np.ndarray:
        return self._buffers["running_var"]

    def forward(self, x: Tensor) -> Tensor:
        return F.batch_norm(x, self)


class Linear(Module):
    """Fully connected classifier head, (N, in) -> (N, out)."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator) -> None:
        super().__init__()
        bound = 1.0 / np.sqrt(in_features)
        self.weight = Parameter(rng.uniform(-bound, bound, size=(out_features, in_features)))
        self.bias = Parameter(np.zeros(out_features))

    def forward(self, x: Tensor) -> Tensor:
        return x @ self.weight.transpose() + self.bias
