"""Dense tensor arithmetic with reverse-mode gradients.

Everything trainable in securepose (the CSI2Pose network and the forgery
detector) is built from the handful of layers in this module. A
`Tensor` wraps a numpy array and, when produced by one of the ops below,
remembers its parents plus a closure that pushes an upstream gradient back
to them. `reverse_grad` topologically sorts the graph reachable from a
scalar loss and runs those closures once each.

Layout conventions:

  - Spatial tensors are channels-last. 2D layers accept `(H, W, C)` or a
    batch `(N, H, W, C)`; 3D layers accept `(T, H, W, C)` or
    `(N, T, H, W, C)`. Kernels are `(k, k, Cin, Cout)` and
    `(kt, k, k, Cin, Cout)`.
  - Convolutions are cross-correlations (no kernel flip).
  - Ops preserve the input dtype. Model data and parameters are float32;
    `gradcheck` promotes to float64 so central differences stay meaningful.

The optimizer is RMSprop with momentum and weight decay added to the
gradient (`grad += wd * param`), matching torch's `RMSprop`:

    sq   = alpha * sq + (1 - alpha) * g^2
    buf  = momentum * buf + g / (sqrt(sq) + eps)
    p   -= lr * buf
"""

from __future__ import annotations

import math
from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from numpy.typing import NDArray

Array = NDArray[np.floating]
BackwardFn = Callable[[Array], None]

DEFAULT_DTYPE = np.float32
BN_MOMENTUM = 0.1


class ShapeError(ValueError):
    """Invalid argument: a shape or dimension mismatch between operands."""


# ============================================================
# Tensor + graph traversal
# ============================================================


class Tensor:
    """Immutable numpy-backed value that participates in the gradient graph.

    Leaf tensors (parameters, inputs) have no parents. `grad` is filled in
    by `reverse_grad` / `backward` and is otherwise `None`.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(
        self,
        data: ArrayLike,
        *,
        requires_grad: bool = False,
        parents: tuple[Tensor, ...] = (),
        backward: BackwardFn | None = None,
        dtype: np.dtype | type | None = None,
    ) -> None:
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data: Array = arr
        self.grad: Array | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents
        self._backward = backward

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def ndim(self) -> int:
        return int(self.data.ndim)

    def numpy(self) -> Array:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype})"

    def _accumulate(self, g: Array) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad = self.grad + g

    def backward(self) -> None:
        """Populate `.grad` on every tensor reachable from this scalar."""
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
        order = _topological_order(self)
        for node in order:
            node.grad = None
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # Arithmetic sugar; all of these route through the graph ops below.
    def __add__(self, other: Tensor | float | Array) -> Tensor:
        return add(self, other)

    def __radd__(self, other: float | Array) -> Tensor:
        return add(other, self)

    def __sub__(self, other: Tensor | float | Array) -> Tensor:
        return sub(self, other)

    def __rsub__(self, other: float | Array) -> Tensor:
        return sub(other, self)

    def __mul__(self, other: Tensor | float | Array) -> Tensor:
        return mul(self, other)

    def __rmul__(self, other: float | Array) -> Tensor:
        return mul(other, self)

    def __neg__(self) -> Tensor:
        return mul(self, -1.0)


ArrayLike = Tensor | Array | float | int | Sequence[float] | Sequence[Sequence[float]]


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen and parent.requires_grad:
                stack.append((parent, False))
    return order


def as_tensor(value: Tensor | ArrayLike, dtype: np.dtype | type | None = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    arr = np.asarray(value)
    if dtype is None and not np.issubdtype(arr.dtype, np.floating):
        dtype = DEFAULT_DTYPE
    return Tensor(arr, dtype=dtype)


def _operands(a: Tensor | ArrayLike, b: Tensor | ArrayLike) -> tuple[Tensor, Tensor]:
    """Wrap constants in the dtype of the tensor operand so float32 stays float32."""
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        return a, as_tensor(b, a.data.dtype)
    if isinstance(b, Tensor) and not isinstance(a, Tensor):
        return as_tensor(a, b.data.dtype), b
    return as_tensor(a), as_tensor(b)


def _node(data: Array, parents: tuple[Tensor, ...], backward: BackwardFn) -> Tensor:
    if not any(p.requires_grad for p in parents):
        return Tensor(data)
    return Tensor(data, parents=parents, backward=backward)


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    """Sum a broadcast gradient back down to `shape`."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ============================================================
# Elementwise + structural ops
# ============================================================


def add(a: Tensor | ArrayLike, b: Tensor | ArrayLike) -> Tensor:
    ta, tb = _operands(a, b)
    out = ta.data + tb.data

    def backward(g: Array) -> None:
        if ta.requires_grad:
            ta._accumulate(_unbroadcast(g, ta.shape))
        if tb.requires_grad:
            tb._accumulate(_unbroadcast(g, tb.shape))

    return _node(out, (ta, tb), backward)


def sub(a: Tensor | ArrayLike, b: Tensor | ArrayLike) -> Tensor:
    ta, tb = _operands(a, b)
    out = ta.data - tb.data

    def backward(g: Array) -> None:
        if ta.requires_grad:
            ta._accumulate(_unbroadcast(g, ta.shape))
        if tb.requires_grad:
            tb._accumulate(_unbroadcast(-g, tb.shape))

    return _node(out, (ta, tb), backward)


def mul(a: Tensor | ArrayLike, b: Tensor | ArrayLike) -> Tensor:
    ta, tb = _operands(a, b)
    out = ta.data * tb.data

    def backward(g: Array) -> None:
        if ta.requires_grad:
            ta._accumulate(_unbroadcast(g * tb.data, ta.shape))
        if tb.requires_grad:
            tb._accumulate(_unbroadcast(g * ta.data, tb.shape))

    return _node(out, (ta, tb), backward)


def square(x: Tensor) -> Tensor:
    out = x.data * x.data

    def backward(g: Array) -> None:
        x._accumulate(2.0 * g * x.data)

    return _node(out, (x,), backward)


def sum_all(x: Tensor) -> Tensor:
    """Sum of every element, as a 0-d tensor."""
    out = np.asarray(x.data.sum(), dtype=x.data.dtype)

    def backward(g: Array) -> None:
        x._accumulate(np.broadcast_to(g, x.shape))

    return _node(out, (x,), backward)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    out = x.data.reshape(tuple(shape))

    def backward(g: Array) -> None:
        x._accumulate(g.reshape(x.shape))

    return _node(out, (x,), backward)


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    order = tuple(axes)
    inverse = tuple(int(i) for i in np.argsort(order))
    out = x.data.transpose(order)

    def backward(g: Array) -> None:
        x._accumulate(g.transpose(inverse))

    return _node(out, (x,), backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("stack() needs at least one tensor")
    out = np.stack([t.data for t in tensors], axis=axis)

    def backward(g: Array) -> None:
        parts = np.moveaxis(g, axis, 0)
        for t, part in zip(tensors, parts, strict=True):
            if t.requires_grad:
                t._accumulate(part)

    return _node(out, tuple(tensors), backward)


def pad(
    x: Tensor,
    widths: Sequence[tuple[int, int]],
    mode: Literal["constant", "edge"] = "constant",
) -> Tensor:
    """`np.pad` with zero or edge-replicate filling, one `(before, after)` per axis."""
    if len(widths) != x.ndim or any(b < 0 or a < 0 for b, a in widths):
        raise ShapeError(f"pad widths {widths} do not fit a {x.ndim}-d tensor")
    if mode not in ("constant", "edge"):
        raise ValueError(f"unknown pad mode: {mode!r}")
    out = np.pad(x.data, list(widths), mode=mode)

    def backward(g: Array) -> None:
        # Un-pad one axis at a time so corner cells fold back correctly.
        for axis, ((b, a), n) in enumerate(zip(widths, x.shape, strict=True)):
            if b == 0 and a == 0:
                continue
            moved = np.moveaxis(g, axis, 0)
            core = moved[b : b + n].copy()
            if mode == "edge":
                if b:
                    core[0] += moved[:b].sum(axis=0)
                if a:
                    core[-1] += moved[b + n :].sum(axis=0)
            g = np.moveaxis(core, 0, axis)
        x._accumulate(g)

    return _node(out, (x,), backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not tensors:
        raise ShapeError("concat() needs at least one tensor")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g: Array) -> None:
        for t, part in zip(tensors, np.split(g, bounds, axis=axis), strict=True):
            if t.requires_grad:
                t._accumulate(part)

    return _node(out, tuple(tensors), backward)


# ============================================================
# Activations
# ============================================================


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = np.where(mask, x.data, 0).astype(x.data.dtype, copy=False)

    def backward(g: Array) -> None:
        x._accumulate(g * mask)

    return _node(out, (x,), backward)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)

    def backward(g: Array) -> None:
        x._accumulate(g * (1.0 - out * out))

    return _node(out, (x,), backward)


def activation(x: Tensor, kind: Literal["relu", "tanh"]) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "tanh":
        return tanh(x)
    raise ValueError(f"unknown activation kind: {kind!r}")


# ============================================================
# Convolution
# ============================================================


def _pad_or_crop(arr: Array, spatial_axes: Sequence[int], before: int, after: int) -> Array:
    """Zero-pad (positive) or crop (negative) every spatial axis."""
    if before > 0 or after > 0:
        widths = [(0, 0)] * arr.ndim
        for ax in spatial_axes:
            widths[ax] = (max(before, 0), max(after, 0))
        arr = np.pad(arr, widths)
    if before < 0 or after < 0:
        index: list[slice] = [slice(None)] * arr.ndim
        for ax in spatial_axes:
            stop = arr.shape[ax] + after if after < 0 else arr.shape[ax]
            index[ax] = slice(max(-before, 0), stop)
        arr = arr[tuple(index)]
    return arr


def _correlate(x: Array, w: Array, stride: int, padding: int) -> Array:
    """Batched N-d cross-correlation.

    `x` is `(N, *spatial, Cin)`, `w` is `(*kernel, Cin, Cout)`; the number
    of spatial dims is `w.ndim - 2`.
    """
    d = w.ndim - 2
    spatial = tuple(range(1, d + 1))
    xp = _pad_or_crop(x, spatial, padding, padding)
    windows = sliding_window_view(xp, w.shape[:d], axis=spatial)
    if stride != 1:
        index = (slice(None),) + (slice(None, None, stride),) * d
        windows = windows[index]
    # windows: (N, *out, Cin, *kernel); contract (Cin, *kernel) against w.
    w_t = np.moveaxis(w, d, 0)  # (Cin, *kernel, Cout)
    return np.tensordot(windows, w_t, axes=(list(range(d + 1, 2 * d + 2)), list(range(d + 1))))


def _conv_nd(x: Tensor, w: Tensor, stride: int, padding: int, d: int) -> Tensor:
    if stride < 1 or padding < 0:
        raise ShapeError(f"stride must be >= 1 and padding >= 0 (got {stride}, {padding})")
    if w.ndim != d + 2:
        raise ShapeError(f"conv{d}d kernels must have {d + 2} dims, got shape {w.shape}")
    batched = x.ndim == d + 2
    if x.ndim not in (d + 1, d + 2):
        raise ShapeError(f"conv{d}d input must have {d + 1} or {d + 2} dims, got {x.shape}")
    xb = x.data if batched else x.data[None]
    cin = xb.shape[-1]
    if w.shape[d] != cin:
        raise ShapeError(f"input has {cin} channels but kernel expects {w.shape[d]}")
    kernel = w.shape[:d]
    in_spatial = xb.shape[1 : d + 1]
    for size, k in zip(in_spatial, kernel, strict=True):
        if k > size + 2 * padding:
            raise ShapeError(f"kernel {kernel} does not fit padded input {in_spatial}")

    out = _correlate(xb, w.data, stride, padding).astype(x.data.dtype, copy=False)
    spatial = tuple(range(1, d + 1))

    def backward(g: Array) -> None:
        gb = g if batched else g[None]
        if w.requires_grad:
            xp = _pad_or_crop(xb, spatial, padding, padding)
            windows = sliding_window_view(xp, kernel, axis=spatial)
            if stride != 1:
                index = (slice(None),) + (slice(None, None, stride),) * d
                windows = windows[index]
            # (Cin, *kernel, Cout) -> (*kernel, Cin, Cout)
            gw = np.tensordot(windows, gb, axes=(list(range(d + 1)), list(range(d + 1))))
            w._accumulate(np.moveaxis(gw, 0, d))
        if x.requires_grad:
            # Transposed correlation: dilate by stride, pad to full, flip kernel.
            out_spatial = gb.shape[1 : d + 1]
            dilated_shape = tuple((o - 1) * stride + 1 for o in out_spatial)
            gd = np.zeros((gb.shape[0], *dilated_shape, gb.shape[-1]), dtype=gb.dtype)
            gd[(slice(None),) + (slice(None, None, stride),) * d] = gb
            for ax, (size, k, dil) in enumerate(
                zip(in_spatial, kernel, dilated_shape, strict=True), start=1
            ):
                before = k - 1 - padding
                after = size + k - 1 - dil - before
                gd = _pad_or_crop(gd, (ax,), before, after)
            flipped = w.data[(slice(None, None, -1),) * d]
            flipped = np.swapaxes(flipped, d, d + 1)
            gx = _correlate(gd, flipped, 1, 0)
            x._accumulate(gx if batched else gx[0])

    return _node(out if batched else out[0], (x, w), backward)


def conv2d(x: Tensor, kernels: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2D cross-correlation; output size `floor((dim + 2p - k) / s) + 1`."""
    return _conv_nd(x, kernels, stride, padding, 2)


def conv3d(x: Tensor, kernels: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """3D cross-correlation over `(T, H, W)`; same size rule per dimension."""
    return _conv_nd(x, kernels, stride, padding, 3)


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Broadcast a per-channel bias over the last axis."""
    if bias.shape != (x.shape[-1],):
        raise ShapeError(f"bias shape {bias.shape} does not match {x.shape[-1]} channels")
    return add(x, bias)


# ============================================================
# Resampling
# ============================================================


def interpolation_matrix(n_in: int, n_out: int, dtype: type = np.float64) -> Array:
    """Align-corners linear interpolation as an `(n_out, n_in)` matrix.

    Output sample `i` sits at input coordinate `i * (n_in - 1) / (n_out - 1)`,
    so the first and last samples of both grids coincide.
    """
    if n_in < 1 or n_out < 1:
        raise ShapeError(f"interpolation sizes must be >= 1 (got {n_in} -> {n_out})")
    mat = np.zeros((n_out, n_in), dtype=np.float64)
    if n_in == 1 or n_out == 1:
        mat[:, 0] = 1.0
        return mat.astype(dtype)
    pos = np.arange(n_out, dtype=np.float64) * (n_in - 1) / (n_out - 1)
    lo = np.minimum(np.floor(pos).astype(np.int64), n_in - 2)
    frac = pos - lo
    rows = np.arange(n_out)
    mat[rows, lo] = 1.0 - frac
    mat[rows, lo + 1] += frac
    return mat.astype(dtype)


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Align-corners bilinear resize of `(H, W, C)` or `(N, H, W, C)`."""
    batched = x.ndim == 4
    if x.ndim not in (3, 4):
        raise ShapeError(f"bilinear_resize expects 3 or 4 dims, got {x.shape}")
    xb = x.data if batched else x.data[None]
    _, h, w, _ = xb.shape
    if h < 1 or w < 1:
        raise ShapeError("bilinear_resize needs a non-empty input")
    uh = interpolation_matrix(h, out_h, xb.dtype.type)
    uw = interpolation_matrix(w, out_w, xb.dtype.type)
    out = np.einsum("ih,nhwc,jw->nijc", uh, xb, uw, optimize=True)

    def backward(g: Array) -> None:
        gb = g if batched else g[None]
        gx = np.einsum("ih,nijc,jw->nhwc", uh, gb, uw, optimize=True)
        x._accumulate(gx if batched else gx[0])

    return _node(out if batched else out[0], (x,), backward)


def bilinear_upsample2x(x: Tensor) -> Tensor:
    h, w = x.shape[-3], x.shape[-2]
    return bilinear_resize(x, 2 * h, 2 * w)


# ============================================================
# Normalisation, pooling, dense
# ============================================================


@dataclass
class BatchNormStats:
    """Running statistics for inference-mode batch norm (updated in train mode)."""

    mean: Array
    var: Array

    @classmethod
    def fresh(cls, channels: int) -> BatchNormStats:
        return cls(
            mean=np.zeros(channels, dtype=DEFAULT_DTYPE),
            var=np.ones(channels, dtype=DEFAULT_DTYPE),
        )


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    mode: Literal["train", "infer"] = "train",
    eps: float = 1e-5,
    stats: BatchNormStats | None = None,
) -> Tensor:
    """Per-channel normalisation over every axis except the last.

    Train mode uses batch statistics (biased variance) and, when `stats`
    is given, folds them into its running averages. Infer mode reads
    `stats` and is a fixed affine map.
    """
    channels = x.shape[-1]
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise ShapeError(
            f"gamma/beta shapes {gamma.shape}/{beta.shape} do not match {channels} channels"
        )
    axes = tuple(range(x.ndim - 1))

    if mode == "infer":
        if stats is None:
            raise ValueError("infer-mode batch_norm needs running statistics")
        inv_std = (1.0 / np.sqrt(stats.var.astype(x.data.dtype) + eps)).astype(x.data.dtype)
        xhat_const = (x.data - stats.mean.astype(x.data.dtype)) * inv_std
        out = gamma.data * xhat_const + beta.data

        def backward_infer(g: Array) -> None:
            if x.requires_grad:
                x._accumulate(g * gamma.data * inv_std)
            if gamma.requires_grad:
                gamma._accumulate((g * xhat_const).sum(axis=axes))
            if beta.requires_grad:
                beta._accumulate(g.sum(axis=axes))

        return _node(out.astype(x.data.dtype, copy=False), (x, gamma, beta), backward_infer)

    if mode != "train":
        raise ValueError(f"unknown batch_norm mode: {mode!r}")

    count = x.data.size // channels
    mean = x.data.mean(axis=axes)
    centered = x.data - mean
    var = (centered * centered).mean(axis=axes)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = gamma.data * xhat + beta.data

    if stats is not None:
        unbiased = var * count / max(count - 1, 1)
        stats.mean = ((1 - BN_MOMENTUM) * stats.mean + BN_MOMENTUM * mean).astype(stats.mean.dtype)
        stats.var = ((1 - BN_MOMENTUM) * stats.var + BN_MOMENTUM * unbiased).astype(
            stats.var.dtype
        )

    def backward(g: Array) -> None:
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).sum(axis=axes))
        if beta.requires_grad:
            beta._accumulate(g.sum(axis=axes))
        if x.requires_grad:
            gxhat = g * gamma.data
            total = gxhat.sum(axis=axes)
            dot = (gxhat * xhat).sum(axis=axes)
            x._accumulate((inv_std / count) * (count * gxhat - total - xhat * dot))

    return _node(out.astype(x.data.dtype, copy=False), (x, gamma, beta), backward)


def channel_max(x: Tensor) -> Tensor:
    """Max over the last (channel) axis, kept as a size-1 axis."""
    if x.shape[-1] < 1:
        raise ShapeError("channel_max needs at least one channel")
    idx = np.argmax(x.data, axis=-1)[..., None]
    out = np.take_along_axis(x.data, idx, axis=-1)

    def backward(g: Array) -> None:
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, idx, g, axis=-1)
        x._accumulate(gx)

    return _node(out, (x,), backward)


def group_channel_max(x: Tensor, groups: int) -> Tensor:
    """Max within `groups` contiguous channel groups (`groups=1` is channel_max)."""
    channels = x.shape[-1]
    if groups < 1 or channels % groups:
        raise ShapeError(f"{channels} channels cannot split into {groups} groups")
    if groups == 1:
        return channel_max(x)
    split = reshape(x, (*x.shape[:-1], groups, channels // groups))
    pooled = channel_max(split)
    return reshape(pooled, (*x.shape[:-1], groups))


def dense(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """Affine map `x @ W + b` for `(n,)` or batched `(B, n)` inputs."""
    if weights.ndim != 2 or x.shape[-1] != weights.shape[0]:
        raise ShapeError(f"dense: input {x.shape} incompatible with weights {weights.shape}")
    if bias.shape != (weights.shape[1],):
        raise ShapeError(f"dense: bias {bias.shape} does not match {weights.shape[1]} outputs")
    out = x.data @ weights.data + bias.data

    def backward(g: Array) -> None:
        if x.requires_grad:
            x._accumulate(g @ weights.data.T)
        if weights.requires_grad:
            x2 = x.data.reshape(-1, x.shape[-1])
            g2 = g.reshape(-1, weights.shape[1])
            weights._accumulate(x2.T @ g2)
        if bias.requires_grad:
            bias._accumulate(g.reshape(-1, weights.shape[1]).sum(axis=0))

    return _node(out, (x, weights, bias), backward)


# ============================================================
# Parameters, gradients, optimizer
# ============================================================


@dataclass(frozen=True)
class OptimConfig:
    """RMSprop hyper-parameters plus the step-decay learning-rate schedule."""

    lr: float = 1e-5
    weight_decay: float = 1e-6
    momentum: float = 0.9
    alpha: float = 0.99
    eps: float = 1e-8
    lr_decay: float = 0.3
    lr_decay_period: int = 5

    def __post_init__(self) -> None:
        if not self.lr > 0:
            raise ValueError(f"learning rate must be > 0, got {self.lr}")
        if self.weight_decay < 0:
            raise ValueError(f"weight decay must be >= 0, got {self.weight_decay}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if not 0 < self.alpha < 1:
            raise ValueError(f"square-average decay must be in (0, 1), got {self.alpha}")
        if not 0 < self.lr_decay <= 1:
            raise ValueError(f"lr decay factor must be in (0, 1], got {self.lr_decay}")
        if self.lr_decay_period < 1:
            raise ValueError(f"lr decay period must be >= 1, got {self.lr_decay_period}")


def scheduled_lr(cfg: OptimConfig, epoch: int) -> float:
    """Step decay: `lr * decay ** (epoch // period)` for zero-based epochs."""
    return cfg.lr * cfg.lr_decay ** (epoch // cfg.lr_decay_period)


@dataclass
class ParamSet:
    """Named trainable tensors with their RMSprop state.

    `bn_stats` holds the batch-norm running statistics, which are not
    trained but still belong in a checkpoint.
    """

    params: dict[str, Tensor] = field(default_factory=dict)
    square_avg: dict[str, Array] = field(default_factory=dict)
    momentum_buf: dict[str, Array] = field(default_factory=dict)
    bn_stats: dict[str, BatchNormStats] = field(default_factory=dict)

    def add(self, name: str, value: Array) -> Tensor:
        if name in self.params:
            raise ValueError(f"duplicate parameter name: {name}")
        t = Tensor(np.asarray(value, dtype=DEFAULT_DTYPE), requires_grad=True)
        self.params[name] = t
        self.square_avg[name] = np.zeros_like(t.data)
        self.momentum_buf[name] = np.zeros_like(t.data)
        return t

    def add_batch_norm(self, name: str, channels: int) -> None:
        self.add(f"{name}.gamma", np.ones(channels))
        self.add(f"{name}.beta", np.zeros(channels))
        self.bn_stats[name] = BatchNormStats.fresh(channels)

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: object) -> bool:
        return name in self.params

    def names(self) -> list[str]:
        return list(self.params)

    def parameter_count(self) -> int:
        return int(sum(t.data.size for t in self.params.values()))

    def state_arrays(self) -> dict[str, Array]:
        """Flat name → array view of everything a checkpoint must store."""
        out: dict[str, Array] = {name: t.data for name, t in self.params.items()}
        for name, stats in self.bn_stats.items():
            out[f"{name}.running_mean"] = stats.mean
            out[f"{name}.running_var"] = stats.var
        return out

    def load_state_arrays(self, arrays: Mapping[str, Array]) -> None:
        """Inverse of `state_arrays`; every expected name must be present."""
        for name, t in self.params.items():
            if name not in arrays:
                raise KeyError(f"missing parameter {name}")
            value = np.asarray(arrays[name], dtype=DEFAULT_DTYPE)
            if value.shape != t.shape:
                raise ShapeError(f"{name}: stored shape {value.shape} != expected {t.shape}")
            t.data = value.copy()
        for name, stats in self.bn_stats.items():
            stats.mean = np.asarray(arrays[f"{name}.running_mean"], dtype=DEFAULT_DTYPE).copy()
            stats.var = np.asarray(arrays[f"{name}.running_var"], dtype=DEFAULT_DTYPE).copy()

    def copy(self) -> ParamSet:
        out = ParamSet()
        for name, t in self.params.items():
            out.params[name] = Tensor(t.data.copy(), requires_grad=True)
            out.square_avg[name] = self.square_avg[name].copy()
            out.momentum_buf[name] = self.momentum_buf[name].copy()
        for name, stats in self.bn_stats.items():
            out.bn_stats[name] = BatchNormStats(stats.mean.copy(), stats.var.copy())
        return out


def reverse_grad(loss: Tensor, params: ParamSet) -> dict[str, Array]:
    """Gradient of a scalar loss with respect to every parameter.

    Parameters the loss does not reach get an all-zero gradient.
    """
    if loss.data.size != 1:
        raise ShapeError(f"reverse_grad needs a scalar loss, got shape {loss.shape}")
    for t in params.params.values():
        t.grad = None
    loss.backward()
    return {
        name: (np.zeros_like(t.data) if t.grad is None else t.grad.astype(t.data.dtype))
        for name, t in params.params.items()
    }


def rmsprop_step(
    params: ParamSet,
    grads: Mapping[str, Array],
    cfg: OptimConfig,
    lr: float | None = None,
) -> ParamSet:
    """One RMSprop update, in place. Returns `params` for chaining."""
    step_lr = cfg.lr if lr is None else lr
    for name, t in params.params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != t.shape:
            raise ShapeError(f"{name}: gradient shape {g.shape} != parameter shape {t.shape}")
        g = g.astype(t.data.dtype, copy=True)
        if cfg.weight_decay:
            g = g + cfg.weight_decay * t.data
        sq = cfg.alpha * params.square_avg[name] + (1.0 - cfg.alpha) * g * g
        params.square_avg[name] = sq.astype(t.data.dtype)
        avg = np.sqrt(sq) + cfg.eps
        if cfg.momentum > 0:
            buf = cfg.momentum * params.momentum_buf[name] + g / avg
            params.momentum_buf[name] = buf.astype(t.data.dtype)
            update = buf
        else:
            update = g / avg
        t.data = (t.data - step_lr * update).astype(t.data.dtype)
    return params


# ============================================================
# Initialisation + gradient checking
# ============================================================


# Gradients below this are float64 round-off of a finite difference at h = 1e-3.
GRADCHECK_NOISE = 1e-8


def he_uniform(rng: np.random.Generator, shape: Sequence[int], fan_in: int) -> Array:
    bound = math.sqrt(6.0 / max(fan_in, 1))
    return rng.uniform(-bound, bound, size=tuple(shape)).astype(DEFAULT_DTYPE)


def gradcheck(
    fn: Callable[..., Tensor],
    inputs: Iterable[Array],
    h: float = 1e-3,
) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    `fn` receives one float64 leaf Tensor per input and returns a scalar.
    Relative error is `|a - n| / max(|a|, |n|, GRADCHECK_NOISE)` elementwise,
    so a wrong gradient is caught however small it is.
    """
    arrays = [np.array(a, dtype=np.float64) for a in inputs]
    leaves = [Tensor(a, requires_grad=True, dtype=np.float64) for a in arrays]
    loss = fn(*leaves)
    loss.backward()
    worst = 0.0
    for i, leaf in enumerate(leaves):
        analytic = np.zeros_like(arrays[i]) if leaf.grad is None else leaf.grad
        numeric = np.zeros_like(arrays[i])
        flat = arrays[i].reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            plus = fn(*[Tensor(a, dtype=np.float64) for a in arrays]).item()
            flat[j] = orig - h
            minus = fn(*[Tensor(a, dtype=np.float64) for a in arrays]).item()
            flat[j] = orig
            numeric.reshape(-1)[j] = (plus - minus) / (2.0 * h)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), GRADCHECK_NOISE)
        worst = max(worst, float(np.max(np.abs(analytic - numeric) / denom)))
    return worst
