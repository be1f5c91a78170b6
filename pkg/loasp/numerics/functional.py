"""Differentiable layer operations on NCHW tensors."""

from __future__ import annotations

from typing import TYPE_CHECKING, Callable, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from loasp.numerics.tensor import ArrayLike, Tensor, as_tensor, get_default_dtype
from loasp.types.errors import ContractViolation, DegenerateBatchError, ShapeError

if TYPE_CHECKING:
    from loasp.numerics.layers import BatchNorm2d


def _require_ndim(x: Tensor, ndim: int, what: str) -> None:
    if x.ndim != ndim:
        raise ShapeError(f"{what} expects a {ndim}-d tensor", [x.shape])


_Grads = Tuple[Optional[np.ndarray], Optional[np.ndarray]]
_ConvBackward = Callable[[np.ndarray, bool, bool], _Grads]


def _strided_taps(i: int, j: int, stride: int, ho: int, wo: int) -> Tuple[slice, slice, slice, slice]:
    """Index of the padded-input pixels that kernel tap (i, j) reads for every output."""
    return (
        slice(None),
        slice(None),
        slice(i, i + stride * (ho - 1) + 1, stride),
        slice(j, j + stride * (wo - 1) + 1, stride),
    )


def conv2d(
    input: Tensor,
    kernel: Tensor,
    stride: int = 1,
    padding: int = 0,
    groups: int = 1,
    bias: Optional[Tensor] = None,
) -> Tensor:
    """2-D cross-correlation with zero padding.

    Unpadded 1 × 1 kernels run as one batched matrix product and depthwise
    kernels as a loop over taps; dense kernels unfold the input once and
    reuse the unfolded buffer in the backward pass.

    Args:
        input: Tensor of shape (N, C, H, W).
        kernel: Tensor of shape (O, C // groups, kh, kw).
        stride: Step between output positions.
        padding: Zero padding added on every border.
        groups: Number of channel groups (``groups == C`` is depthwise).
        bias: Optional per-output-channel shift; layers built by this package
            leave it unset except for offset predictors that opt in.

    Returns:
        Tensor of shape (N, O, Ho, Wo) with Ho = (H + 2·padding − kh) // stride + 1.

    Raises:
        ShapeError: If channel counts, groups or spatial extents are incompatible.
    """
    _require_ndim(input, 4, "conv2d input")
    _require_ndim(kernel, 4, "conv2d kernel")
    n, c, h, w = input.shape
    o, cg, kh, kw = kernel.shape
    if stride < 1 or padding < 0 or groups < 1:
        raise ContractViolation(
            f"conv2d needs stride >= 1, padding >= 0, groups >= 1 (got {stride}, {padding}, {groups})"
        )
    if c % groups or o % groups or cg != c // groups:
        raise ShapeError(
            f"conv2d channels incompatible with groups={groups}", [input.shape, kernel.shape]
        )
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError("conv2d output would be empty", [input.shape, kernel.shape])

    if kh == kw == 1 and padding == 0 and groups == 1:
        out, backward_core = _pointwise(input.data, kernel.data, stride, ho, wo)
    elif groups == c and o == c:
        out, backward_core = _depthwise(input.data, kernel.data, stride, padding, ho, wo)
    elif groups == 1:
        out, backward_core = _dense(input.data, kernel.data, stride, padding, ho, wo)
    else:
        out, backward_core = _grouped(input.data, kernel.data, stride, padding, groups, ho, wo)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)

    def backward(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        grad_input, grad_kernel = backward_core(g, input.requires_grad, kernel.requires_grad)
        grad_bias = g.sum(axis=(0, 2, 3)) if bias is not None and bias.requires_grad else None
        return grad_input, grad_kernel, grad_bias

    parents: Sequence[Tensor] = (input, kernel) if bias is None else (input, kernel, bias)
    return Tensor.from_op(out, parents, backward, "conv2d")


def _pointwise(
    x: np.ndarray, weight: np.ndarray, stride: int, ho: int, wo: int
) -> Tuple[np.ndarray, _ConvBackward]:
    n, c, h, w = x.shape
    o = weight.shape[0]
    sampled = np.ascontiguousarray(x[:, :, ::stride, ::stride]).reshape(n, c, ho * wo)
    matrix = weight.reshape(o, c)
    out = np.matmul(matrix, sampled).reshape(n, o, ho, wo)

    def backward(g: np.ndarray, need_input: bool, need_kernel: bool) -> _Grads:
        g_flat = g.reshape(n, o, ho * wo)
        grad_kernel = None
        if need_kernel:
            grad_kernel = np.einsum("nop,ncp->oc", g_flat, sampled, optimize=True).reshape(weight.shape)
        grad_input = None
        if need_input:
            grad_sampled = np.matmul(matrix.T, g_flat).reshape(n, c, ho, wo)
            if stride == 1:
                grad_input = grad_sampled
            else:
                grad_input = np.zeros_like(x)
                grad_input[:, :, ::stride, ::stride] = grad_sampled
        return grad_input, grad_kernel

    return out, backward


def _depthwise(
    x: np.ndarray, weight: np.ndarray, stride: int, padding: int, ho: int, wo: int
) -> Tuple[np.ndarray, _ConvBackward]:
    n, c, h, w = x.shape
    kh, kw = weight.shape[2:]
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    taps = weight[:, 0]
    out = np.zeros((n, c, ho, wo), dtype=np.result_type(x, weight))
    for i in range(kh):
        for j in range(kw):
            out += xp[_strided_taps(i, j, stride, ho, wo)] * taps[None, :, i, j, None, None]

    def backward(g: np.ndarray, need_input: bool, need_kernel: bool) -> _Grads:
        grad_kernel = np.zeros_like(weight) if need_kernel else None
        grad_padded = np.zeros_like(xp) if need_input else None
        for i in range(kh):
            for j in range(kw):
                index = _strided_taps(i, j, stride, ho, wo)
                if grad_kernel is not None:
                    grad_kernel[:, 0, i, j] = np.einsum("nchw,nchw->c", g, xp[index])
                if grad_padded is not None:
                    grad_padded[index] += g * taps[None, :, i, j, None, None]
        grad_input = None
        if grad_padded is not None:
            grad_input = grad_padded[:, :, padding : padding + h, padding : padding + w]
        return grad_input, grad_kernel

    return out, backward


def _scatter_windows(
    grad_windows: np.ndarray, padded_shape: Tuple[int, ...], stride: int, ho: int, wo: int
) -> np.ndarray:
    """Fold per-window gradients (N, C, Ho, Wo, kh, kw) back onto the padded input."""
    kh, kw = grad_windows.shape[-2:]
    grad_padded = np.zeros(padded_shape, dtype=grad_windows.dtype)
    for i in range(kh):
        for j in range(kw):
            grad_padded[_strided_taps(i, j, stride, ho, wo)] += grad_windows[..., i, j]
    return grad_padded


def _dense(
    x: np.ndarray, weight: np.ndarray, stride: int, padding: int, ho: int, wo: int
) -> Tuple[np.ndarray, _ConvBackward]:
    n, c, h, w = x.shape
    o, _, kh, kw = weight.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    # rows are output positions (n, y, x); columns are (c, i, j) like the flattened kernel
    columns = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    matrix = weight.reshape(o, c * kh * kw)
    out = (columns @ matrix.T).reshape(n, ho, wo, o).transpose(0, 3, 1, 2)

    def backward(g: np.ndarray, need_input: bool, need_kernel: bool) -> _Grads:
        g_rows = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, o)
        grad_kernel = (g_rows.T @ columns).reshape(weight.shape) if need_kernel else None
        grad_input = None
        if need_input:
            grad_columns = (g_rows @ matrix).reshape(n, ho, wo, c, kh, kw).transpose(0, 3, 1, 2, 4, 5)
            grad_padded = _scatter_windows(grad_columns, xp.shape, stride, ho, wo)
            grad_input = grad_padded[:, :, padding : padding + h, padding : padding + w]
        return grad_input, grad_kernel

    return out, backward


def _grouped(
    x: np.ndarray, weight: np.ndarray, stride: int, padding: int, groups: int, ho: int, wo: int
) -> Tuple[np.ndarray, _ConvBackward]:
    n, c, h, w = x.shape
    o, cg, kh, kw = weight.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    win_g = windows.reshape(n, groups, cg, ho, wo, kh, kw)
    w_g = weight.reshape(groups, o // groups, cg, kh, kw)
    out = np.einsum("ngchwij,gocij->ngohw", win_g, w_g, optimize=True).reshape(n, o, ho, wo)

    def backward(g: np.ndarray, need_input: bool, need_kernel: bool) -> _Grads:
        g_g = g.reshape(n, groups, o // groups, ho, wo)
        grad_kernel = None
        if need_kernel:
            grad_kernel = np.einsum("ngohw,ngchwij->gocij", g_g, win_g, optimize=True).reshape(weight.shape)
        grad_input = None
        if need_input:
            grad_windows = np.einsum("ngohw,gocij->ngchwij", g_g, w_g, optimize=True).reshape(
                n, c, ho, wo, kh, kw
            )
            grad_padded = _scatter_windows(grad_windows, xp.shape, stride, ho, wo)
            grad_input = grad_padded[:, :, padding : padding + h, padding : padding + w]
        return grad_input, grad_kernel

    return out, backward


def batch_norm(input: Tensor, state: "BatchNorm2d") -> Tensor:
    """Per-channel batch normalization with affine scale and shift.

    Training mode normalizes with the batch statistics and moves the running
    statistics by ``state.momentum``; inference mode uses only the running
    statistics.

    Raises:
        DegenerateBatchError: If fewer than two values per channel in training.
    """
    _require_ndim(input, 4, "batch_norm input")
    n, c, h, w = input.shape
    if c != state.num_features:
        raise ShapeError("batch_norm channel mismatch", [input.shape, (state.num_features,)])
    gamma, beta = state.weight, state.bias
    count = n * h * w
    x = input.data

    if state.training:
        if count < 2:
            raise DegenerateBatchError(
                f"batch_norm needs N·H·W >= 2 in training, got {count}", [input.shape]
            )
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        m = state.momentum
        state.running_mean[...] = (1.0 - m) * state.running_mean + m * mean
        state.running_var[...] = (1.0 - m) * state.running_var + m * var * count / (count - 1)
    else:
        mean = state.running_mean
        var = state.running_var

    inv_std = 1.0 / np.sqrt(var + state.eps)
    x_hat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = gamma.data[None, :, None, None] * x_hat + beta.data[None, :, None, None]
    training = state.training

    def backward(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        grad_gamma = (g * x_hat).sum(axis=(0, 2, 3)) if gamma.requires_grad else None
        grad_beta = g.sum(axis=(0, 2, 3)) if beta.requires_grad else None
        grad_input = None
        if input.requires_grad:
            scale = (gamma.data * inv_std)[None, :, None, None]
            if training:
                g_mean = g.mean(axis=(0, 2, 3), keepdims=True)
                gx_mean = (g * x_hat).mean(axis=(0, 2, 3), keepdims=True)
                grad_input = scale * (g - g_mean - x_hat * gx_mean)
            else:
                grad_input = scale * g
        return grad_input, grad_gamma, grad_beta

    return Tensor.from_op(out, (input, gamma, beta), backward, "batch_norm")


def bilinear_gather(
    input: Tensor,
    rows: Union[Tensor, np.ndarray],
    cols: Union[Tensor, np.ndarray],
) -> Tensor:
    """Sample every channel of ``input`` at fractional positions.

    Coordinates are clamped to [0, H−1]×[0, W−1] before interpolating the four
    nearest lattice points; the gradient with respect to a clamped coordinate
    is zero.

    Args:
        input: Tensor of shape (N, C, H, W).
        rows: Row coordinates of shape (N, *P).
        cols: Column coordinates of shape (N, *P).

    Returns:
        Tensor of shape (N, C, *P).
    """
    _require_ndim(input, 4, "bilinear_gather input")
    rows_t, cols_t = as_tensor(rows), as_tensor(cols)
    n, c, h, w = input.shape
    if rows_t.shape != cols_t.shape or rows_t.shape[0] != n:
        raise ShapeError(
            "bilinear_gather coordinates must share shape (N, ...)",
            [input.shape, rows_t.shape, cols_t.shape],
        )
    point_shape = rows_t.shape[1:]

    r = np.clip(rows_t.data, 0.0, h - 1)
    q = np.clip(cols_t.data, 0.0, w - 1)
    r_inside = (rows_t.data >= 0.0) & (rows_t.data <= h - 1)
    q_inside = (cols_t.data >= 0.0) & (cols_t.data <= w - 1)
    r0 = np.floor(r).astype(np.intp)
    q0 = np.floor(q).astype(np.intp)
    r1 = np.minimum(r0 + 1, h - 1)
    q1 = np.minimum(q0 + 1, w - 1)
    wr = r - r0
    wq = q - q0

    batch = np.broadcast_to(np.arange(n).reshape((n,) + (1,) * len(point_shape)), r0.shape)
    channels_last = input.data.transpose(0, 2, 3, 1)
    v00 = channels_last[batch, r0, q0]
    v01 = channels_last[batch, r0, q1]
    v10 = channels_last[batch, r1, q0]
    v11 = channels_last[batch, r1, q1]
    w00 = ((1.0 - wr) * (1.0 - wq))[..., None]
    w01 = ((1.0 - wr) * wq)[..., None]
    w10 = (wr * (1.0 - wq))[..., None]
    w11 = (wr * wq)[..., None]
    sampled = w00 * v00 + w01 * v01 + w10 * v10 + w11 * v11
    out = np.moveaxis(sampled, -1, 1)

    def backward(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        g_last = np.moveaxis(g, 1, -1)
        grad_input = grad_rows = grad_cols = None
        if input.requires_grad:
            size = n * h * w * c
            channel = np.arange(c)
            flat = np.zeros(size)
            for weight, rr, qq in ((w00, r0, q0), (w01, r0, q1), (w10, r1, q0), (w11, r1, q1)):
                # one slot per (batch, row, col, channel) of the channels-last input
                index = (((batch * h + rr) * w + qq)[..., None] * c + channel).ravel()
                flat += np.bincount(index, weights=(g_last * weight).ravel(), minlength=size)
            grad_input = flat.reshape(n, h, w, c).transpose(0, 3, 1, 2).astype(g.dtype, copy=False)
        if rows_t.requires_grad:
            d_row = (1.0 - wq)[..., None] * (v10 - v00) + wq[..., None] * (v11 - v01)
            grad_rows = (g_last * d_row).sum(axis=-1) * r_inside
        if cols_t.requires_grad:
            d_col = (1.0 - wr)[..., None] * (v01 - v00) + wr[..., None] * (v11 - v10)
            grad_cols = (g_last * d_col).sum(axis=-1) * q_inside
        return grad_input, grad_rows, grad_cols

    return Tensor.from_op(np.ascontiguousarray(out), (input, rows_t, cols_t), backward, "bilinear")


def bilinear_sample(feature: Tensor, coords: ArrayLike) -> Tensor:
    """Bilinearly sample a (C, H, W) feature at a list of (row, col) points.

    Args:
        feature: Tensor of shape (C, H, W).
        coords: Sequence or tensor of shape (P, 2).

    Returns:
        Tensor of shape (C, P).
    """
    _require_ndim(feature, 3, "bilinear_sample feature")
    points = as_tensor(coords)
    if points.ndim != 2 or points.shape[1] != 2:
        raise ShapeError("bilinear_sample coordinates must have shape (P, 2)", [points.shape])
    c, h, w = feature.shape
    count = points.shape[0]
    rows = points[:, 0].reshape(1, count)
    cols = points[:, 1].reshape(1, count)
    return bilinear_gather(feature.reshape(1, c, h, w), rows, cols).reshape(c, count)


def nearest_upsample(input: Tensor, factor: int) -> Tensor:
    """Replicate every pixel into a factor×factor block.

    Raises:
        ContractViolation: If ``factor < 1``.
    """
    if factor < 1:
        raise ContractViolation(f"upsample factor must be >= 1, got {factor}")
    _require_ndim(input, 4, "nearest_upsample input")
    if factor == 1:
        return input
    n, c, h, w = input.shape
    out = input.data.repeat(factor, axis=2).repeat(factor, axis=3)

    def backward(g: np.ndarray) -> Tuple[np.ndarray]:
        return (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),)

    return Tensor.from_op(out, (input,), backward, "upsample")


def pad2d(input: Tensor, top: int, bottom: int, left: int, right: int) -> Tensor:
    """Zero-pad the two spatial axes of an NCHW tensor."""
    _require_ndim(input, 4, "pad2d input")
    _, _, h, w = input.shape
    out = np.pad(input.data, ((0, 0), (0, 0), (top, bottom), (left, right)))

    def backward(g: np.ndarray) -> Tuple[np.ndarray]:
        return (g[:, :, top : top + h, left : left + w],)

    return Tensor.from_op(out, (input,), backward, "pad2d")


def match_spatial(input: Tensor, height: int, width: int) -> Tensor:
    """Center-crop or zero-pad an NCHW tensor to the requested spatial extent."""
    _, _, h, w = input.shape
    out = input
    if h > height or w > width:
        top = max(h - height, 0) // 2
        left = max(w - width, 0) // 2
        out = out[:, :, top : top + min(h, height), left : left + min(w, width)]
    _, _, h, w = out.shape
    if h < height or w < width:
        dh, dw = height - h, width - w
        out = pad2d(out, dh // 2, dh - dh // 2, dw // 2, dw - dw // 2)
    return out


def cross_entropy(logits: Tensor, labels: Sequence[int]) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under softmax(``logits``).

    Raises:
        ShapeError: If logits are not (N, C) with N labels.
        ContractViolation: If a label is outside [0, C).
    """
    _require_ndim(logits, 2, "cross_entropy logits")
    n, classes = logits.shape
    target = np.asarray(labels, dtype=np.intp)
    if target.shape != (n,):
        raise ShapeError("cross_entropy needs one label per row", [logits.shape, target.shape])
    if target.size and (target.min() < 0 or target.max() >= classes):
        raise ContractViolation(f"labels must lie in [0, {classes}), got {target.tolist()}")

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    rows = np.arange(n)
    loss = -log_probs[rows, target].mean()

    def backward(g: np.ndarray) -> Tuple[np.ndarray]:
        grad = np.exp(log_probs)
        grad[rows, target] -= 1.0
        return (grad * (g / n),)

    return Tensor.from_op(np.asarray(loss), (logits,), backward, "cross_entropy")


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax of a plain array (no graph)."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def einsum(subscripts: str, a: ArrayLike, b: ArrayLike) -> Tensor:
    """Two-operand Einstein summation, e.g. ``einsum("nckhw,ock->nohw", s, w)``.

    Every index of an operand must appear in the other operand or the output,
    which is what makes the gradient another two-operand einsum.
    """
    left, b_t = as_tensor(a), as_tensor(b)
    inputs, output = subscripts.replace(" ", "").split("->")
    sub_a, sub_b = inputs.split(",")
    for sub, other in ((sub_a, sub_b), (sub_b, sub_a)):
        missing = set(sub) - set(other) - set(output)
        if missing:
            raise ContractViolation(f"einsum index {sorted(missing)} is summed within one operand")
    out = np.einsum(subscripts, left.data, b_t.data, optimize=True)

    def backward(g: np.ndarray) -> Tuple[Optional[np.ndarray], Optional[np.ndarray]]:
        ga = (
            np.einsum(f"{output},{sub_b}->{sub_a}", g, b_t.data, optimize=True)
            if left.requires_grad
            else None
        )
        gb = (
            np.einsum(f"{output},{sub_a}->{sub_b}", g, left.data, optimize=True)
            if b_t.requires_grad
            else None
        )
        return ga, gb

    return Tensor.from_op(np.asarray(out), (left, b_t), backward, "einsum")


def constant(values: ArrayLike) -> np.ndarray:
    """Cast fixed arrays (grids, masks) to the current default precision."""
    return np.asarray(values, dtype=get_default_dtype())
