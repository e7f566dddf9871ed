"""Dense tensors with a recorded computation graph and reverse-mode gradients.

Values are numpy arrays (row-major). Every operation here records a local
backward rule; :func:`backward` walks the graph once in reverse topological
order and accumulates gradients additively across fan-out.

Broadcasting is deliberately limited to a scalar against a tensor. Operations
that need a row-vector bias (linear layers, batchnorm) have fused rules.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import BatchSizeError, ContractError, ShapeError

__all__ = [
    "Tensor",
    "as_tensor",
    "no_grad",
    "is_grad_enabled",
    "checked_mode",
    "backward",
    "add",
    "sub",
    "mul",
    "scale",
    "neg",
    "matmul",
    "linear",
    "relu",
    "l2_normalize",
    "sum",
    "mean",
    "reduce_sum_axis",
    "reduce_mean_axis",
    "reduce_max_axis",
    "concat",
    "reshape",
    "transpose",
    "conv2d",
    "maxpool2d",
    "batchnorm",
]

_GRAD_ENABLED = True
_CHECKED = False

BackwardRule = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


@contextlib.contextmanager
def no_grad():
    """Build no graph inside the block; results carry no parents."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


@contextlib.contextmanager
def checked_mode(enabled: bool = True):
    """Reject non-finite values at tensor construction inside the block."""
    global _CHECKED
    prev = _CHECKED
    _CHECKED = enabled
    try:
        yield
    finally:
        _CHECKED = prev


class Tensor:
    """An immutable array value, optionally a node in a gradient graph."""

    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.array(data, dtype=dtype, copy=True)
        if arr.dtype.kind not in "fc":
            arr = arr.astype(np.float64)
        if _CHECKED and not np.all(np.isfinite(arr)):
            raise ContractError("tensor data contains NaN or Inf")
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardRule | None = None

    @classmethod
    def from_op(
        cls,
        data: np.ndarray,
        parents: Iterable["Tensor"],
        rule: BackwardRule,
        op: str = "custom",
    ) -> "Tensor":
        """Wrap an op result; ``rule(grad_out)`` returns one gradient per parent."""
        parents = tuple(parents)
        out = cls.__new__(cls)
        if _CHECKED and not np.all(np.isfinite(data)):
            raise ContractError(f"{op} produced NaN or Inf")
        data = np.asarray(data)
        data.flags.writeable = False
        out.data = data
        out.grad = None
        out.op = op
        track = _GRAD_ENABLED and any(p.requires_grad for p in parents)
        out.requires_grad = track
        out._parents = parents if track else ()
        out._backward = rule if track else None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.requires_grad = False
        out.grad = None
        out.op = "detach"
        out._parents = ()
        out._backward = None
        return out

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division is only defined by a Python scalar")
        return scale(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


# -- backward ---------------------------------------------------------------


def _topo_order(root: Tensor) -> list[Tensor]:
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
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Tensor) -> dict[Tensor, np.ndarray]:
    """Propagate d(root)/d(leaf) to every leaf that requires a gradient.

    Returns a map leaf -> gradient and also stores it on ``leaf.grad``.
    Gradients of intermediate nodes are not retained.
    """
    if root.data.size != 1:
        raise ContractError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        return {}
    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    leaves: dict[Tensor, np.ndarray] = {}
    for node in reversed(_topo_order(root)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g
            leaves[node] = g
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            if pg.shape != p.data.shape:
                pg = pg.reshape(p.data.shape)
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return leaves


# -- elementwise ------------------------------------------------------------


def _is_scalar_tensor(t: Tensor) -> bool:
    return t.data.size == 1 and t.data.ndim <= 1


def _binary_shapes(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and not (_is_scalar_tensor(a) or _is_scalar_tensor(b)):
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _unbroadcast(g: np.ndarray, like: Tensor) -> np.ndarray:
    if g.shape == like.shape:
        return g
    return np.asarray(g.sum()).reshape(like.shape)


def add(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        a = as_tensor(a)
        c = float(b)
        return Tensor.from_op(a.data + c, (a,), lambda g: (g,), "add_scalar")
    if not isinstance(a, Tensor):
        return add(b, a)
    _binary_shapes(a, b, "add")
    return Tensor.from_op(
        a.data + b.data, (a, b), lambda g: (_unbroadcast(g, a), _unbroadcast(g, b)), "add"
    )


def neg(a: Tensor) -> Tensor:
    return Tensor.from_op(-a.data, (a,), lambda g: (-g,), "neg")


def sub(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        return add(a, -float(b))
    if not isinstance(a, Tensor):
        return add(neg(b), a)
    _binary_shapes(a, b, "sub")
    return Tensor.from_op(
        a.data - b.data, (a, b), lambda g: (_unbroadcast(g, a), _unbroadcast(-g, b)), "sub"
    )


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return Tensor.from_op(a.data * c, (a,), lambda g: (g * c,), "scale")


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        return scale(a, b)
    if not isinstance(a, Tensor):
        return scale(b, a)
    _binary_shapes(a, b, "mul")
    ad, bd = a.data, b.data
    return Tensor.from_op(
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, a), _unbroadcast(g * ad, b)),
        "mul",
    )


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return Tensor.from_op(np.maximum(a.data, 0), (a,), lambda g: (g * mask,), "relu")


def l2_normalize(a: Tensor, eps: float = 1e-12) -> Tensor:
    """Scale a vector, or each row of a matrix, to unit L2 norm.

    Norms below ``eps`` are replaced by ``eps`` so zero rows stay zero.
    """
    if a.ndim not in (1, 2):
        raise ShapeError(f"l2_normalize expects a vector or matrix, got shape {a.shape}")
    x = a.data
    norm = np.sqrt(np.sum(x * x, axis=-1, keepdims=True))
    denom = np.maximum(norm, eps)
    y = x / denom
    live = norm > eps

    def rule(g):
        proj = np.sum(g * y, axis=-1, keepdims=True)
        return (np.where(live, (g - y * proj) / denom, g / denom),)

    return Tensor.from_op(y, (a,), rule, "l2_normalize")


# -- reductions -------------------------------------------------------------


def sum(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = a.shape
    return Tensor.from_op(
        np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),), "sum"
    )


def mean(a: Tensor) -> Tensor:
    shape, n = a.shape, a.size
    return Tensor.from_op(
        np.asarray(a.data.mean()), (a,), lambda g: (np.full(shape, g / n, dtype=a.dtype),), "mean"
    )


def _check_axis(a: Tensor, axis: int) -> int:
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"axis {axis} out of range for shape {a.shape}")
    return axis % a.ndim


def reduce_sum_axis(a: Tensor, axis: int) -> Tensor:
    axis = _check_axis(a, axis)
    shape = a.shape

    def rule(g):
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return Tensor.from_op(a.data.sum(axis=axis), (a,), rule, "reduce_sum")


def reduce_mean_axis(a: Tensor, axis: int) -> Tensor:
    axis = _check_axis(a, axis)
    shape, n = a.shape, a.shape[axis]

    def rule(g):
        return (np.broadcast_to(np.expand_dims(g / n, axis), shape).copy(),)

    return Tensor.from_op(a.data.mean(axis=axis), (a,), rule, "reduce_mean")


def reduce_max_axis(a: Tensor, axis: int) -> Tensor:
    """Maximum along ``axis``; the gradient goes to the first maximal entry."""
    axis = _check_axis(a, axis)
    idx = np.expand_dims(np.argmax(a.data, axis=axis), axis)
    out = np.take_along_axis(a.data, idx, axis=axis).squeeze(axis)

    def rule(g):
        grad = np.zeros_like(a.data)
        np.put_along_axis(grad, idx, np.expand_dims(g, axis), axis=axis)
        return (grad,)

    return Tensor.from_op(out, (a,), rule, "reduce_max")


# -- structural -------------------------------------------------------------


def concat(a: Tensor, b: Tensor, axis: int) -> Tensor:
    if a.ndim != b.ndim:
        raise ShapeError(f"concat: rank mismatch {a.shape} vs {b.shape}")
    axis = _check_axis(a, axis)
    for k in range(a.ndim):
        if k != axis and a.shape[k] != b.shape[k]:
            raise ShapeError(f"concat along {axis}: incompatible shapes {a.shape} and {b.shape}")
    split = a.shape[axis]

    def rule(g):
        ga, gb = np.split(g, [split], axis=axis)
        return (ga, gb)

    return Tensor.from_op(np.concatenate([a.data, b.data], axis=axis), (a, b), rule, "concat")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {a.shape} to {shape}") from exc
    src = a.shape
    return Tensor.from_op(out, (a,), lambda g: (g.reshape(src),), "reshape")


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"transpose: {axes} is not a permutation for shape {a.shape}")
    inverse = tuple(np.argsort(axes))
    out = np.ascontiguousarray(a.data.transpose(axes))
    return Tensor.from_op(out, (a,), lambda g: (g.transpose(inverse),), "transpose")


# -- linear algebra ---------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data
    return Tensor.from_op(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g), "matmul")


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` with ``x`` (n, k), ``w`` (k, m), ``b`` (m,)."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise ShapeError(f"linear: bias {b.shape} does not match weight {w.shape}")
    xd, wd = x.data, w.data
    out = xd @ wd
    if b is not None:
        out = out + b.data

    def rule(g):
        grads = [g @ wd.T, xd.T @ g]
        if b is not None:
            grads.append(g.sum(axis=0))
        return grads

    parents = (x, w) if b is None else (x, w, b)
    return Tensor.from_op(out, parents, rule, "linear")


# -- convolutional ----------------------------------------------------------


def conv2d(x: Tensor, kernels: Tensor, bias: Tensor | None = None) -> Tensor:
    """3x3 cross-correlation, stride 1, zero padding 1 (output keeps H, W).

    ``x`` is (C_in, H, W) or batched (N, C_in, H, W); ``kernels`` is
    (C_out, C_in, 3, 3).
    """
    if kernels.ndim != 4 or kernels.shape[2:] != (3, 3):
        raise ShapeError(f"conv2d: kernels must be (C_out, C_in, 3, 3), got {kernels.shape}")
    unbatched = x.ndim == 3
    if x.ndim not in (3, 4):
        raise ShapeError(f"conv2d: input must be (C, H, W) or (N, C, H, W), got {x.shape}")
    xd = x.data[None] if unbatched else x.data
    n, c, h, w = xd.shape
    o = kernels.shape[0]
    if kernels.shape[1] != c:
        raise ShapeError(f"conv2d: input has {c} channels but kernels {kernels.shape} expect {kernels.shape[1]}")
    if bias is not None and bias.shape != (o,):
        raise ShapeError(f"conv2d: bias {bias.shape} does not match {o} output channels")
    kd = kernels.data
    # channel-major layout turns each kernel tap into one large GEMM
    xp = np.pad(xd.transpose(1, 0, 2, 3), ((0, 0), (0, 0), (1, 1), (1, 1)))
    taps = [(i, j, np.ascontiguousarray(kd[:, :, i, j])) for i in range(3) for j in range(3)]
    if c * 9 <= 64:
        # few input channels: a single GEMM over stacked shifts is cheaper
        cols = np.stack([xp[:, :, i : i + h, j : j + w] for i, j, _ in taps], axis=1)
        acc = kd.reshape(o, c * 9) @ cols.reshape(c * 9, n * h * w)
    else:
        acc = np.zeros((o, n * h * w), dtype=np.result_type(xd, kd))
        for i, j, tap in taps:
            acc += tap @ xp[:, :, i : i + h, j : j + w].reshape(c, n * h * w)
    out = np.ascontiguousarray(acc.reshape(o, n, h, w).transpose(1, 0, 2, 3))
    if bias is not None:
        out += bias.data.reshape(1, o, 1, 1)

    def rule(g):
        gm = np.ascontiguousarray((g[None] if unbatched else g).transpose(1, 0, 2, 3)).reshape(o, n * h * w)
        dxp = np.zeros_like(xp) if x.requires_grad else None
        dk = np.zeros_like(kd)
        need_dx = x.requires_grad
        for i, j, tap in taps:
            patch = xp[:, :, i : i + h, j : j + w].reshape(c, n * h * w)
            dk[:, :, i, j] = gm @ patch.T
            if need_dx:
                dxp[:, :, i : i + h, j : j + w] += (tap.T @ gm).reshape(c, n, h, w)
        dx = None
        if need_dx:
            dx = np.ascontiguousarray(dxp[:, :, 1:-1, 1:-1].transpose(1, 0, 2, 3))
            dx = dx[0] if unbatched else dx
        grads = [dx, dk]
        if bias is not None:
            grads.append(gm.sum(axis=1))
        return grads

    if unbatched:
        out = out[0]
    parents = (x, kernels) if bias is None else (x, kernels, bias)
    return Tensor.from_op(out, parents, rule, "conv2d")


def maxpool2d(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; odd trailing rows/columns are dropped.

    On ties the gradient goes to the first element in row-major window order.
    """
    unbatched = x.ndim == 3
    if x.ndim not in (3, 4):
        raise ShapeError(f"maxpool2d: input must be (C, H, W) or (N, C, H, W), got {x.shape}")
    xd = x.data[None] if unbatched else x.data
    n, c, h, w = xd.shape
    if h < 2 or w < 2:
        raise ShapeError(f"maxpool2d: spatial size must be at least 2x2, got {h}x{w}")
    h2, w2 = h // 2, w // 2
    # the four window positions in row-major scan order
    corners = [xd[:, :, di : 2 * h2 : 2, dj : 2 * w2 : 2] for di in (0, 1) for dj in (0, 1)]
    out = np.maximum(np.maximum(corners[0], corners[1]), np.maximum(corners[2], corners[3]))
    taken = np.zeros(out.shape, dtype=bool)
    masks = []
    for corner in corners:
        hit = (corner == out) & ~taken
        taken |= hit
        masks.append(hit)

    def rule(g):
        g4 = g[None] if unbatched else g
        dx = np.zeros_like(xd)
        for (di, dj), hit in zip(((0, 0), (0, 1), (1, 0), (1, 1)), masks):
            dx[:, :, di : 2 * h2 : 2, dj : 2 * w2 : 2] = g4 * hit
        return (dx[0] if unbatched else dx,)

    return Tensor.from_op(out[0] if unbatched else out, (x,), rule, "maxpool2d")


def batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray | None = None,
    running_var: np.ndarray | None = None,
    mode: str = "train",
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Batch normalization of (n, d) rows or (N, C, H, W) channels.

    In train mode the batch statistics are used and the running arrays (if
    given) are updated in place: mean and unbiased variance, weight
    ``momentum`` on the new batch. Eval mode reads the running arrays.
    """
    if x.ndim == 2:
        axes: tuple[int, ...] = (0,)
        feat = x.shape[1]
        bshape: tuple[int, ...] = (1, feat)
    elif x.ndim == 4:
        axes = (0, 2, 3)
        feat = x.shape[1]
        bshape = (1, feat, 1, 1)
    else:
        raise ShapeError(f"batchnorm: input must be (n, d) or (N, C, H, W), got {x.shape}")
    if gamma.shape != (feat,) or beta.shape != (feat,):
        raise ShapeError(f"batchnorm: gamma {gamma.shape} / beta {beta.shape} do not match {feat} features")
    xd = x.data
    count = xd.size // feat
    gd = gamma.data.reshape(bshape)
    if mode == "train":
        if count < 2:
            raise BatchSizeError(f"batchnorm in train mode needs at least 2 values per feature, got {count}")
        mu = xd.mean(axis=axes, keepdims=True)
        centered = xd - mu
        var = (centered * centered).mean(axis=axes, keepdims=True)
        if running_mean is not None:
            running_mean *= 1.0 - momentum
            running_mean += momentum * mu.reshape(feat)
        if running_var is not None:
            running_var *= 1.0 - momentum
            running_var += momentum * var.reshape(feat) * (count / (count - 1))
    elif mode == "eval":
        if running_mean is None or running_var is None:
            raise ContractError("batchnorm in eval mode needs running statistics")
        mu = running_mean.reshape(bshape).astype(xd.dtype)
        var = running_var.reshape(bshape).astype(xd.dtype)
        centered = xd - mu
    else:
        raise ContractError(f"batchnorm mode must be 'train' or 'eval', got {mode!r}")
    invstd = 1.0 / np.sqrt(var + eps)
    xhat = centered * invstd
    out = gd * xhat + beta.data.reshape(bshape)

    def rule(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        dxhat = g * gd
        if mode == "train":
            dx = invstd / count * (
                count * dxhat
                - dxhat.sum(axis=axes, keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True)
            )
        else:
            dx = dxhat * invstd
        return (dx, dgamma, dbeta)

    return Tensor.from_op(out, (x, gamma, beta), rule, "batchnorm")
