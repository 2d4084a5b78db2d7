"""Capsule layers: squash, primary capsules, routing-by-agreement, margin loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ops
from .autodiff.tensor import ShapeError, Tensor, as_tensor

SQUASH_EPS = 1e-12


@dataclass(frozen=True)
class MarginLossConfig:
    m_plus: float = 0.9
    m_minus: float = 0.1
    lam: float = 0.5

    def __post_init__(self):
        if not 0 < self.m_minus < self.m_plus < 1:
            raise ValueError("margin loss needs 0 < m_minus < m_plus < 1")
        if not self.lam > 0:
            raise ValueError("margin loss down-weight must be positive")


@dataclass
class CapsuleLayerParams:
    """Prediction transforms ``W`` of shape [I, J, d_out, d_in]."""

    W: Tensor
    routing_iters: int = 3
    agreement: str = "dot"

    def __post_init__(self):
        if self.W.data.ndim != 4:
            raise ShapeError("capsule layer", "[I, J, d_out, d_in]", self.W.shape)
        if self.routing_iters < 1:
            raise ValueError("routing_iters must be >= 1")
        if self.agreement not in ("dot", "cosine"):
            raise ValueError(f"unknown agreement measure {self.agreement!r}")

    @property
    def n_in(self) -> int:
        return self.W.shape[0]

    @property
    def n_out(self) -> int:
        return self.W.shape[1]


@dataclass
class RoutingState:
    b: np.ndarray  # logits [batch, I, J]
    c: np.ndarray  # couplings [batch, I, J]


def squash(s: Tensor, axis: int = -1, eps: float = SQUASH_EPS) -> Tensor:
    """Rescale vectors along ``axis`` to norm ``|s|^2 / (1 + |s|^2)``, keeping direction."""
    sq = ops.reduce_sum(ops.square(s), axis=axis, keepdims=True)
    norm = ops.sqrt(ops.add_scalar(sq, eps))
    factor = ops.div(sq, ops.mul(ops.add_scalar(sq, 1.0), norm))
    return ops.mul(s, ops.broadcast_to(factor, s.shape))


def primary_capsules(x: Tensor, kernel: Tensor, bias: Tensor | None = None, *,
                     capsule_dim: int, stride: int = 1, pad: int = 0) -> Tensor:
    """Convolve, then regroup channels into capsules of ``capsule_dim`` and squash.

    Output channel ``f`` belongs to capsule channel ``f // capsule_dim``; the
    capsule index runs over (capsule channel, row, column) in that order.
    Returns [batch, I, capsule_dim].
    """
    n_filters = kernel.shape[0]
    if n_filters % capsule_dim:
        raise ValueError(f"primary capsules: {n_filters} conv filters not divisible by "
                         f"capsule_dim {capsule_dim}")
    h = ops.conv2d(x, kernel, stride=stride, pad=pad)
    if bias is not None:
        h = ops.bias_add(h, bias, axis=1)
    n, _, ho, wo = h.shape
    channels = n_filters // capsule_dim
    h = ops.reshape(h, (n, channels, capsule_dim, ho, wo))
    h = ops.transpose(h, (0, 1, 3, 4, 2))
    u = ops.reshape(h, (n, channels * ho * wo, capsule_dim))
    return squash(u, axis=-1)


def routed_capsule_layer(u: Tensor, params: CapsuleLayerParams,
                         trace: list[RoutingState] | None = None) -> Tensor:
    """Dynamic routing from ``u`` [batch, I, d_in] to [batch, J, d_out].

    Routing logits start at zero on every call and the iterations stay on the
    tape, so gradients flow through every coupling update.  If ``trace`` is a
    list, the logits and couplings used at each iteration are appended to it.
    """
    W = params.W
    n_in, n_out, d_out, d_in = W.shape
    if u.data.ndim != 3 or u.shape[1] != n_in or u.shape[2] != d_in:
        raise ShapeError("routed_capsule_layer", ("batch", n_in, d_in), u.shape)
    batch = u.shape[0]
    u_hat = ops.einsum("bik,ijdk->bijd", u, W)
    b = Tensor(np.zeros((batch, n_in, n_out)))
    v = None
    for it in range(params.routing_iters):
        c = ops.softmax(b, axis=2)
        if trace is not None:
            trace.append(RoutingState(b.data.copy(), c.data.copy()))
        s = ops.einsum("bij,bijd->bjd", c, u_hat)
        v = squash(s, axis=-1)
        if it < params.routing_iters - 1:
            agree = ops.einsum("bijd,bjd->bij", u_hat, v)
            if params.agreement == "cosine":
                u_norm = ops.vector_norm(u_hat, axis=-1, eps=SQUASH_EPS)
                v_norm = ops.vector_norm(v, axis=-1, eps=SQUASH_EPS)
                denom = ops.einsum("bij,bj->bij", u_norm, v_norm)
                agree = ops.div(agree, denom)
            b = ops.add(b, agree)
    return v


def capsule_lengths(v: Tensor) -> Tensor:
    """Norm of each capsule vector: [batch, J, d] -> [batch, J]."""
    return ops.vector_norm(v, axis=-1)


def _check_targets(targets, shape) -> np.ndarray:
    t = np.asarray(targets, dtype=np.float64)
    if t.shape != tuple(shape):
        raise ShapeError("margin_loss", tuple(shape), t.shape)
    if not np.all((t == 0.0) | (t == 1.0)):
        raise ValueError("margin_loss: targets must be 0 or 1")
    return t


def margin_loss(v_norms: Tensor, targets, cfg: MarginLossConfig = MarginLossConfig()) -> Tensor:
    """Batch mean of the two-sided capsule hinge loss.

    ``sum_k T_k max(0, m+ - |v_k|)^2 + lam (1 - T_k) max(0, |v_k| - m-)^2``
    """
    v_norms = as_tensor(v_norms)
    if v_norms.data.ndim != 2:
        raise ShapeError("margin_loss", "[batch, K]", v_norms.shape)
    t = _check_targets(targets, v_norms.shape)
    present = ops.square(ops.max_with_scalar(ops.add_scalar(ops.neg(v_norms), cfg.m_plus), 0.0))
    absent = ops.square(ops.max_with_scalar(ops.add_scalar(v_norms, -cfg.m_minus), 0.0))
    per = ops.add(ops.mul(present, Tensor(t)), ops.scale(ops.mul(absent, Tensor(1.0 - t)), cfg.lam))
    return ops.reduce_mean(ops.reduce_sum(per, axis=1))
