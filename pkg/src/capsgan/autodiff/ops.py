"""Differentiable ops on :class:`Tensor`.

Each op computes its forward value with numpy and attaches a closure
``backward(g) -> tuple of parent gradients``.  Broadcasting is never implicit:
elementwise binary ops require equal shapes, ``bias_add`` broadcasts a vector
over one axis, and ``broadcast_to`` / ``einsum`` are the only other ways to
combine tensors of different shapes.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .conv import col2im, conv_output_size, im2col
from .tensor import ShapeError, Tensor, as_tensor

_make = Tensor._from_op


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(op, a.shape, b.shape)


def _norm_axis(axis, ndim: int):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def _expand(g: np.ndarray, shape, axes, keepdims: bool) -> np.ndarray:
    if not keepdims:
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape)


# -- linear algebra ---------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", f"[m, k] @ [k, n] with k={a.shape[-1]}", f"{a.shape} @ {b.shape}")

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return _make(a.data @ b.data, (a, b), backward, "matmul")


def einsum(subscripts: str, *operands: Tensor) -> Tensor:
    """Explicit-output einsum, e.g. ``"bik,ijdk->bijd"``.

    Every index of an operand must appear in the output or in another operand,
    and no operand may repeat an index, so each gradient is itself an einsum.
    """
    lhs, out_sub = subscripts.replace(" ", "").split("->")
    in_subs = lhs.split(",")
    if len(in_subs) != len(operands):
        raise ShapeError("einsum", f"{len(in_subs)} operands", f"{len(operands)} operands")
    for k, sub in enumerate(in_subs):
        if len(set(sub)) != len(sub):
            raise ValueError(f"einsum: repeated index in operand {sub!r}")
        others = out_sub + "".join(s for i, s in enumerate(in_subs) if i != k)
        if not set(sub) <= set(others):
            raise ValueError(f"einsum: operand {sub!r} has an index that is summed out alone")
    try:
        value = np.einsum(subscripts, *(t.data for t in operands))
    except ValueError as exc:
        raise ShapeError("einsum", subscripts, [t.shape for t in operands]) from exc

    def backward(g):
        grads = []
        for k, t in enumerate(operands):
            if not t.requires_grad:
                grads.append(None)
                continue
            rest = [(s, o.data) for i, (s, o) in enumerate(zip(in_subs, operands)) if i != k]
            expr = ",".join([out_sub] + [s for s, _ in rest]) + "->" + in_subs[k]
            grads.append(np.einsum(expr, g, *(d for _, d in rest)))
        return tuple(grads)

    return _make(np.asarray(value, dtype=np.float64), operands, backward, "einsum")


def conv2d(x: Tensor, k: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of ``x`` [N, C, H, W] with ``k`` [F, C, kh, kw]."""
    if x.data.ndim != 4 or k.data.ndim != 4 or x.shape[1] != k.shape[1]:
        raise ShapeError("conv2d", "x [N, C, H, W] and k [F, C, kh, kw] sharing C",
                         f"x {x.shape}, k {k.shape}")
    n, c, h, w = x.shape
    f, _, kh, kw = k.shape
    ho = conv_output_size(h, kh, stride, pad)
    wo = conv_output_size(w, kw, stride, pad)
    if ho < 1 or wo < 1:
        raise ShapeError("conv2d", f"kernel {kh}x{kw} fitting padded input", x.shape)
    cols = im2col(x.data, kh, kw, stride, pad)
    kmat = k.data.reshape(f, -1)
    out = np.matmul(kmat, cols).reshape(n, f, ho, wo)

    def backward(g):
        gm = g.reshape(n, f, ho * wo)
        dk = np.einsum("nfl,nkl->fk", gm, cols).reshape(k.shape) if k.requires_grad else None
        dx = col2im(np.matmul(kmat.T, gm), x.shape, kh, kw, stride, pad) if x.requires_grad else None
        return dx, dk

    return _make(out, (x, k), backward, "conv2d")


def conv2d_transpose(y: Tensor, k: Tensor, stride: int = 1, pad: int = 0,
                     output_padding: int = 0) -> Tensor:
    """Adjoint of :func:`conv2d` with respect to its input.

    ``y`` is [N, F, Ho, Wo] and ``k`` is [F, C, kh, kw]; the result is
    [N, C, H, W] with ``H = (Ho - 1) * stride - 2 * pad + kh + output_padding``.
    """
    if y.data.ndim != 4 or k.data.ndim != 4 or y.shape[1] != k.shape[0]:
        raise ShapeError("conv2d_transpose", "y [N, F, Ho, Wo] and k [F, C, kh, kw] sharing F",
                         f"y {y.shape}, k {k.shape}")
    if not 0 <= output_padding < max(stride, 1):
        raise ValueError("conv2d_transpose: output_padding must be in [0, stride)")
    n, f, ho, wo = y.shape
    _, c, kh, kw = k.shape
    h = (ho - 1) * stride - 2 * pad + kh + output_padding
    w = (wo - 1) * stride - 2 * pad + kw + output_padding
    if h < 1 or w < 1:
        raise ShapeError("conv2d_transpose", "positive output size", (h, w))
    kmat = k.data.reshape(f, -1)
    ym = y.data.reshape(n, f, ho * wo)
    out = col2im(np.matmul(kmat.T, ym), (n, c, h, w), kh, kw, stride, pad)

    def backward(g):
        gcols = im2col(g, kh, kw, stride, pad)
        dy = np.matmul(kmat, gcols).reshape(y.shape) if y.requires_grad else None
        dk = np.einsum("nfl,nkl->fk", ym, gcols).reshape(k.shape) if k.requires_grad else None
        return dy, dk

    return _make(np.ascontiguousarray(out), (y, k), backward, "conv2d_transpose")


# -- elementwise ------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return _make(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return _make(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    return _make(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("div", a, b)
    out = a.data / b.data
    return _make(out, (a, b), lambda g: (g / b.data, -g * out / b.data), "div")


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,), "scale")


def add_scalar(a: Tensor, c: float) -> Tensor:
    return _make(a.data + float(c), (a,), lambda g: (g,), "add_scalar")


def bias_add(x: Tensor, b: Tensor, axis: int = 1) -> Tensor:
    """Add vector ``b`` along ``axis`` of ``x``, broadcasting over the rest."""
    axis = axis % x.data.ndim
    if b.data.ndim != 1 or b.shape[0] != x.shape[axis]:
        raise ShapeError("bias_add", (x.shape[axis],), b.shape)
    view = [1] * x.data.ndim
    view[axis] = -1
    other = tuple(i for i in range(x.data.ndim) if i != axis)
    return _make(x.data + b.data.reshape(view), (x, b),
                 lambda g: (g, g.sum(axis=other)), "bias_add")


def square(a: Tensor) -> Tensor:
    return _make(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,), "square")


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (0.5 * g / out,), "sqrt")


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    factor = np.where(a.data > 0, 1.0, slope)
    return _make(a.data * factor, (a,), lambda g: (g * factor,), "leaky_relu")


def max_with_scalar(a: Tensor, c: float) -> Tensor:
    """Elementwise ``max(a, c)``; ties send zero gradient to ``a``."""
    mask = a.data > c
    return _make(np.maximum(a.data, float(c)), (a,), lambda g: (g * mask,), "max_with_scalar")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def softplus(a: Tensor) -> Tensor:
    """``log(1 + exp(a))`` computed without overflow."""
    x = a.data
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))

    def backward(g):
        e = np.exp(-np.abs(x))
        sig = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
        return (g * sig,)

    return _make(out, (a,), backward, "softplus")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (a,), backward, "softmax")


# -- shape ------------------------------------------------------------------

def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError("reshape", f"{a.size} elements", tuple(shape)) from exc
    return _make(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(a.data.ndim)):
        raise ShapeError("transpose", f"permutation of {a.data.ndim} axes", axes)
    inverse = tuple(np.argsort(axes))
    return _make(np.ascontiguousarray(a.data.transpose(axes)), (a,),
                 lambda g: (g.transpose(inverse),), "transpose")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ShapeError("concat", ref, t.shape)
    sizes = [t.shape[ax] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=ax))

    return _make(np.concatenate([t.data for t in tensors], axis=ax), tensors, backward, "concat")


def broadcast_to(a: Tensor, shape: Sequence[int]) -> Tensor:
    """Numpy-rule broadcast; ``a`` must already have ``len(shape)`` dims."""
    shape = tuple(shape)
    if a.data.ndim != len(shape) or any(s != 1 and s != t for s, t in zip(a.shape, shape)):
        raise ShapeError("broadcast_to", shape, a.shape)
    axes = tuple(i for i, (s, t) in enumerate(zip(a.shape, shape)) if s == 1 and t != 1)

    def backward(g):
        return (g.sum(axis=axes, keepdims=True),)

    return _make(np.broadcast_to(a.data, shape).copy(), (a,), backward, "broadcast_to")


# -- reductions -------------------------------------------------------------

def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, a.data.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)
    return _make(np.asarray(out), (a,), lambda g: (_expand(g, a.shape, axes, keepdims),), "reduce_sum")


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, a.data.ndim)
    count = int(np.prod([a.shape[i] for i in axes]))
    out = a.data.mean(axis=axes, keepdims=keepdims)
    return _make(np.asarray(out), (a,),
                 lambda g: (_expand(g, a.shape, axes, keepdims) / count,), "reduce_mean")


def vector_norm(a: Tensor, axis: int = -1, keepdims: bool = False, eps: float = 0.0) -> Tensor:
    """Euclidean norm ``sqrt(sum(a**2) + eps)`` along one axis."""
    axes = _norm_axis(axis, a.data.ndim)
    norm = np.sqrt((a.data * a.data).sum(axis=axes, keepdims=True) + eps)
    out = norm if keepdims else np.squeeze(norm, axis=axes)

    def backward(g):
        return (_expand(g, a.shape, axes, keepdims) * a.data / norm,)

    return _make(out, (a,), backward, "vector_norm")


_KINDS = {
    "matmul": matmul,
    "einsum": einsum,
    "conv2d": conv2d,
    "conv2d_transpose": conv2d_transpose,
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "neg": neg,
    "scale": scale,
    "add_scalar": add_scalar,
    "bias_add": bias_add,
    "square": square,
    "sqrt": sqrt,
    "log": log,
    "relu": relu,
    "leaky_relu": leaky_relu,
    "max_with_scalar": max_with_scalar,
    "sigmoid": sigmoid,
    "softplus": softplus,
    "tanh": tanh,
    "softmax": softmax,
    "reshape": reshape,
    "transpose": transpose,
    "concat": concat,
    "broadcast_to": broadcast_to,
    "reduce_sum": reduce_sum,
    "reduce_mean": reduce_mean,
    "vector_norm": vector_norm,
}

OP_KINDS = tuple(_KINDS)


def forward_op(kind: str, inputs: Sequence, **attrs) -> Tensor:
    """Apply op ``kind`` to ``inputs`` by name.

    >>> forward_op("softmax", [Tensor([0.0, 0.0, 0.0])], axis=0).data
    array([0.33333333, 0.33333333, 0.33333333])
    """
    try:
        fn = _KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown op kind {kind!r}") from None
    if kind == "concat":
        return fn([as_tensor(t) for t in inputs], **attrs)
    if kind == "einsum":
        return fn(attrs.pop("subscripts"), *(as_tensor(t) for t in inputs))
    return fn(*(as_tensor(t) for t in inputs), **attrs)
