"""Reverse-mode automatic differentiation over dense float64 arrays.

Graphs are built define-by-run: every operation on a tracked :class:`Tensor`
returns a new node that remembers its parents and a closure computing the
vector-Jacobian product.  Node ids come from a global counter, so insertion
order is a topological order and ``backward`` simply sweeps ids downward.

:func:`detach` returns a value-identical leaf with no parents.  Backward
traversal has nowhere to go from it, which is how local losses are kept from
reaching layers upstream of their scope.
"""

from __future__ import annotations

import contextlib
import itertools

import numpy as np

from . import memory
from .exceptions import ContractError, DimensionError, NumericError

_ids = itertools.count()
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (evaluation, analysis)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def _check_finite(arr: np.ndarray, where: str) -> None:
    if not np.isfinite(arr).all():
        raise NumericError(f"non-finite value produced by {where}")


class Tensor:
    """An n-dimensional float64 array that can take part in a gradient graph."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_id", "_parents", "_backward", "_op", "_phase")

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        _check_finite(arr, "Tensor()")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._id = next(_ids)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self._op = "leaf"
        self._phase = None

    @classmethod
    def _result(
        cls, data: np.ndarray, parents, backward, op: str, aux_elements: int = 0, view: bool = False
    ) -> "Tensor":
        _check_finite(data, op)
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        out._id = next(_ids)
        out._op = op
        out._phase = None
        track = _grad_enabled and any(p.requires_grad for p in parents)
        out.requires_grad = track
        if track:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        ledger = memory.active_ledger()
        if ledger is not None:
            out._phase = ledger.phase
            if not view:
                ledger.alloc(("act", out._id), data.size, "activation")
            if aux_elements:
                ledger.alloc(("aux", out._id), aux_elements, "ephemeral")
        return out

    # -- basic properties ---------------------------------------------------

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
    def id(self) -> int:
        return self._id

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError("item() needs a single-element tensor")
        return float(self.data.reshape(()))

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- operators ------------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def sum(self, axis=None):
        return tsum(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def detach(self) -> "Tensor":
        return detach(self)

    def backward(self, retain_all: bool = False):
        return backward(self, retain_all=retain_all)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise DimensionError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from exc


# -- elementwise ---------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._result(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._result(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor._result(a.data * b.data, (a, b), bw, "mul")


def power(x: Tensor, exponent: float) -> Tensor:
    p = float(exponent)

    def bw(g):
        return (g * p * x.data ** (p - 1.0),)

    return Tensor._result(x.data**p, (x,), bw, "pow")


def square(x: Tensor) -> Tensor:
    def bw(g):
        return (2.0 * g * x.data,)

    return Tensor._result(x.data * x.data, (x,), bw, "square")


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)

    def bw(g):
        return (0.5 * g / out,)

    return Tensor._result(out, (x,), bw, "sqrt")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0.0  # subgradient at 0 is 0

    def bw(g):
        return (g * mask,)

    return Tensor._result(np.where(mask, x.data, 0.0), (x,), bw, "relu")


def tsum(x: Tensor, axis=None) -> Tensor:
    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return Tensor._result(np.asarray(x.data.sum(axis=axis), dtype=np.float64), (x,), bw, "sum")


# -- shape ops -----------------------------------------------------------------


def reshape(x: Tensor, shape) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {x.shape} to {shape}") from exc

    def bw(g):
        return (g.reshape(x.shape),)

    return Tensor._result(out, (x,), bw, "reshape", view=True)


def flatten(x: Tensor) -> Tensor:
    """Batch-preserving reshape ``B x ... -> B x prod(...)`` in row-major order."""
    if x.ndim < 1:
        raise DimensionError("flatten needs at least one (batch) dimension")
    return reshape(x, (x.shape[0], -1))


# -- linear algebra -------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")

    def bw(g):
        return g @ b.data.T, a.data.T @ g

    return Tensor._result(a.data @ b.data, (a, b), bw, "matmul")


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a per-feature (2-D input) or per-channel (4-D input) bias vector."""
    if b.ndim != 1:
        raise DimensionError("bias must be a vector")
    if x.ndim == 2:
        if x.shape[1] != b.shape[0]:
            raise DimensionError(f"bias of length {b.shape[0]} for {x.shape[1]} features")
        out = x.data + b.data
        axes = (0,)
    elif x.ndim == 4:
        if x.shape[1] != b.shape[0]:
            raise DimensionError(f"bias of length {b.shape[0]} for {x.shape[1]} channels")
        out = x.data + b.data[None, :, None, None]
        axes = (0, 2, 3)
    else:
        raise DimensionError(f"add_bias supports 2-D or 4-D input, got {x.shape}")

    def bw(g):
        return g, g.sum(axis=axes)

    return Tensor._result(out, (x, b), bw, "add_bias")


# -- convolution and pooling ----------------------------------------------------


def conv_output_size(size: int, kernel: int, stride: int, pad: int) -> int:
    span = size + 2 * pad - kernel
    if stride < 1:
        raise DimensionError("stride must be >= 1")
    if span < 0:
        raise DimensionError(f"kernel {kernel} larger than padded input {size + 2 * pad}")
    if span % stride:
        raise DimensionError(
            f"non-integral output size: ({size}+2*{pad}-{kernel})/{stride} + 1"
        )
    return span // stride + 1


def conv2d(x: Tensor, w: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation of ``B x C x H x W`` input with ``F x C x kH x kW`` filters."""
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv2d expects 4-D input and weight, got {x.shape}, {w.shape}")
    B, C, H, W = x.shape
    F, Cw, kh, kw = w.shape
    if C != Cw:
        raise DimensionError(f"conv2d channel mismatch: input {C}, weight {Cw}")
    Ho = conv_output_size(H, kh, stride, pad)
    Wo = conv_output_size(W, kw, stride, pad)

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # B, C, Ho, Wo, kh, kw
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(B * Ho * Wo, C * kh * kw)
    wmat = w.data.reshape(F, -1)
    out = (cols @ wmat.T).reshape(B, Ho, Wo, F).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)

    def bw(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, F)
        gw = (g2.T @ cols).reshape(w.shape)
        gcols = (g2 @ wmat).reshape(B, Ho, Wo, C, kh, kw)
        gxp = np.zeros(xp.shape)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i : i + stride * Ho : stride, j : j + stride * Wo : stride] += gcols[
                    :, :, :, :, i, j
                ].transpose(0, 3, 1, 2)
        gx = gxp[:, :, pad : pad + H, pad : pad + W] if pad else gxp
        return gx, gw

    return Tensor._result(out, (x, w), bw, "conv2d", aux_elements=cols.size)


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2.  Ties route the gradient to the first maximum."""
    if x.ndim != 4:
        raise DimensionError(f"maxpool2 expects 4-D input, got {x.shape}")
    B, C, H, W = x.shape
    if H % 2 or W % 2:
        raise DimensionError(f"maxpool2 needs even spatial size, got {H}x{W}")
    blocks = x.data.reshape(B, C, H // 2, 2, W // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, H // 2, W // 2, 4)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def bw(g):
        gb = np.zeros(blocks.shape)
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        gx = gb.reshape(B, C, H // 2, W // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, H, W)
        return (gx,)

    return Tensor._result(out, (x,), bw, "maxpool2")


# -- classification helpers -------------------------------------------------------


def log_softmax(z: Tensor) -> Tensor:
    """Row-wise log-softmax of a ``N x C`` tensor, stabilized by max subtraction."""
    if z.ndim != 2:
        raise DimensionError("log_softmax expects a 2-D tensor")
    shifted = z.data - z.data.max(axis=1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))

    def bw(g):
        return (g - np.exp(out) * g.sum(axis=1, keepdims=True),)

    return Tensor._result(out, (z,), bw, "log_softmax")


def pick(x: Tensor, index) -> Tensor:
    """Select ``x[n, index[n]]`` for every row ``n``."""
    idx = np.asarray(index, dtype=np.int64)
    if x.ndim != 2 or idx.shape != (x.shape[0],):
        raise DimensionError(f"pick needs N x C input and N indices, got {x.shape}, {idx.shape}")
    rows = np.arange(x.shape[0])

    def bw(g):
        gx = np.zeros(x.shape)
        gx[rows, idx] = g
        return (gx,)

    return Tensor._result(x.data[rows, idx], (x,), bw, "pick")


# -- distances ------------------------------------------------------------------------


def pairwise_distances(a: Tensor, eps: float = 1e-12) -> Tensor:
    """Smoothed Euclidean distance matrix ``sqrt(|a_n - a_m|^2 + eps) - sqrt(eps)``.

    The smoothing keeps the gradient defined when two rows coincide; subtracting
    ``sqrt(eps)`` keeps the diagonal exactly zero.
    """
    if a.ndim != 2:
        raise DimensionError(f"pairwise_distances expects L x D, got {a.shape}")
    diff = a.data[:, None, :] - a.data[None, :, :]
    r = np.sqrt((diff * diff).sum(axis=-1) + eps)
    out = r - np.sqrt(eps)

    def bw(g):
        coef = (g + g.T) / r
        return ((coef[:, :, None] * diff).sum(axis=1),)

    return Tensor._result(out, (a,), bw, "pairwise_distances", aux_elements=diff.size)


# -- gradient scope ---------------------------------------------------------------------


def detach(x: Tensor) -> Tensor:
    """Value-identical leaf that blocks gradient flow back to ``x``."""
    # shares storage with x, so no allocation is recorded
    out = Tensor.__new__(Tensor)
    out.data = x.data
    out.requires_grad = False
    out.grad = None
    out.name = x.name
    out._id = next(_ids)
    out._parents = ()
    out._backward = None
    out._op = "detach"
    out._phase = None
    return out


# -- backward ------------------------------------------------------------------------------


def _reachable(seed: Tensor) -> list[Tensor]:
    seen: dict[int, Tensor] = {}
    stack = [seed]
    while stack:
        node = stack.pop()
        if node._id in seen:
            continue
        seen[node._id] = node
        stack.extend(p for p in node._parents if p.requires_grad)
    return sorted(seen.values(), key=lambda t: t._id, reverse=True)


def backward(seed: Tensor, retain_all: bool = False):
    """Accumulate d(seed)/d(leaf) into ``leaf.grad`` for every tracked leaf.

    With ``retain_all`` the gradient of every reachable node is returned as a
    ``{node_id: ndarray}`` mapping, otherwise intermediate gradients are
    dropped as soon as they have been propagated.
    """
    if seed.size != 1:
        raise ContractError(f"backward seed must be scalar, got shape {seed.shape}")
    if not seed.requires_grad:
        return {} if retain_all else None

    ledger = memory.active_ledger()
    grads: dict[int, np.ndarray] = {seed._id: np.ones(seed.shape)}
    if ledger is not None:
        ledger.alloc(("grad", seed._id), 1, "ephemeral")
    kept: dict[int, np.ndarray] = {}

    for node in _reachable(seed):
        g = grads.pop(node._id, None)
        if g is None:
            continue
        if retain_all:
            kept[node._id] = g
        if ledger is not None and node._phase is not None:
            target = "bwd1" if node._phase == "fwd1" else "bwd2"
            if ledger.phase != target:
                ledger.set_phase(target)
        if node._backward is None:
            if node.grad is None:
                node.grad = np.array(g, dtype=np.float64)
                if ledger is not None:
                    ledger.alloc(("pgrad", node._id), g.size, "grad")
            else:
                node.grad = node.grad + g
            if ledger is not None:
                ledger.free(("grad", node._id))
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            if parent._id in grads:
                grads[parent._id] = grads[parent._id] + pg
            else:
                grads[parent._id] = pg
                if ledger is not None:
                    ledger.alloc(("grad", parent._id), pg.size, "ephemeral")
        if ledger is not None:
            ledger.free(("grad", node._id))
            ledger.free(("act", node._id))
            ledger.free(("aux", node._id))

    return kept if retain_all else None


def zero_grad(params) -> None:
    """Drop accumulated gradients (and release them in an active ledger)."""
    ledger = memory.active_ledger()
    for p in params:
        if p.grad is not None and ledger is not None:
            ledger.free(("pgrad", p._id))
        p.grad = None


def grad_check(f, x, h: float = 1e-6) -> float:
    """Max relative error between autodiff and central finite differences.

    ``f`` maps a Tensor to a scalar Tensor.  The error for coordinate ``i`` is
    ``|analytic_i - numeric_i| / max(1, |numeric_i|)``.
    """
    x0 = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    xt = Tensor(x0, requires_grad=True)
    y = f(xt)
    if y.size != 1:
        raise ContractError("grad_check needs a scalar-valued function")
    backward(y)
    analytic = xt.grad if xt.grad is not None else np.zeros_like(x0)

    numeric = np.zeros_like(x0)
    flat = numeric.reshape(-1)
    probe = x0.copy().reshape(-1)
    with no_grad():
        for i in range(probe.size):
            old = probe[i]
            probe[i] = old + h
            fp = f(Tensor(probe.reshape(x0.shape))).item()
            probe[i] = old - h
            fm = f(Tensor(probe.reshape(x0.shape))).item()
            probe[i] = old
            flat[i] = (fp - fm) / (2.0 * h)
    err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))
    return float(err.max()) if err.size else 0.0
