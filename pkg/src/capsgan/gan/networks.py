"""Parameter initialisation and forward passes for both players."""

from __future__ import annotations

import numpy as np

from ..autodiff import ops
from ..autodiff.conv import conv_output_size
from ..autodiff.rng import derive_seed, normal01
from ..autodiff.tensor import ShapeError, Tensor
from ..capsnet import CapsuleLayerParams, primary_capsules, routed_capsule_layer
from .config import DiscriminatorConfig, GeneratorConfig

Params = dict[str, Tensor]


class ParameterBudgetError(ValueError):
    pass


def _init(shape, fan_in: int, std: float | None, seed: int, name: str) -> Tensor:
    scale = 1.0 / np.sqrt(fan_in) if std is None else std
    data = scale * normal01(int(np.prod(shape)), derive_seed(seed, name)).reshape(shape)
    return Tensor(data, requires_grad=True, name=name)


def _zeros(shape, name: str) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True, name=name)


def count_parameters(params: Params) -> int:
    return sum(p.size for p in params.values())


# -- generator --------------------------------------------------------------

def init_generator(cfg: GeneratorConfig, seed: int) -> Params:
    c, h, w = cfg.output_shape
    base, mid, k = cfg.base_channels, cfg.base_channels // 2, cfg.kernel_size
    proj = base * (h // 4) * (w // 4)
    return {
        "dense.w": _init((cfg.latent_dim, proj), cfg.latent_dim, cfg.init_std, seed, "g.dense.w"),
        "dense.b": _zeros((proj,), "g.dense.b"),
        "up1.k": _init((base, mid, k, k), base * k * k // 4, cfg.init_std, seed, "g.up1.k"),
        "up1.b": _zeros((mid,), "g.up1.b"),
        "up2.k": _init((mid, c, k, k), mid * k * k // 4, cfg.init_std, seed, "g.up2.k"),
        "up2.b": _zeros((c,), "g.up2.b"),
    }


def generator_forward(cfg: GeneratorConfig, p: Params, z: Tensor) -> Tensor:
    c, h, w = cfg.output_shape
    if z.data.ndim != 2 or z.shape[1] != cfg.latent_dim:
        raise ShapeError("generator", ("n", cfg.latent_dim), z.shape)
    pad = (cfg.kernel_size - 2) // 2
    x = ops.leaky_relu(ops.bias_add(ops.matmul(z, p["dense.w"]), p["dense.b"], axis=1), cfg.slope)
    x = ops.reshape(x, (z.shape[0], cfg.base_channels, h // 4, w // 4))
    x = ops.conv2d_transpose(x, p["up1.k"], stride=2, pad=pad)
    x = ops.leaky_relu(ops.bias_add(x, p["up1.b"], axis=1), cfg.slope)
    x = ops.conv2d_transpose(x, p["up2.k"], stride=2, pad=pad)
    return ops.tanh(ops.bias_add(x, p["up2.b"], axis=1))


# -- discriminator ----------------------------------------------------------

def capsule_geometry(cfg: DiscriminatorConfig) -> tuple[int, int]:
    """(number of primary capsules, spatial size after the front-end conv)."""
    _, h, w = cfg.input_shape
    h1 = conv_output_size(h, cfg.conv_kernel, cfg.conv_stride, 0)
    w1 = conv_output_size(w, cfg.conv_kernel, cfg.conv_stride, 0)
    h2 = conv_output_size(h1, cfg.primary_kernel, cfg.primary_stride, 0)
    w2 = conv_output_size(w1, cfg.primary_kernel, cfg.primary_stride, 0)
    if min(h1, w1, h2, w2) < 1:
        raise ValueError(f"capsule discriminator kernels do not fit input {cfg.input_shape}")
    return cfg.primary_channels * h2 * w2, h1


def _conv_geometry(cfg: DiscriminatorConfig) -> int:
    _, h, w = cfg.input_shape
    k = cfg.conv_kernel_size
    pad = (k - 2) // 2
    for _ in cfg.conv_channels:
        h = conv_output_size(h, k, 2, pad)
        w = conv_output_size(w, k, 2, pad)
        if min(h, w) < 1:
            raise ValueError(f"convolutional discriminator does not fit input {cfg.input_shape}")
    return cfg.conv_channels[-1] * h * w


def init_discriminator(cfg: DiscriminatorConfig, seed: int) -> Params:
    c = cfg.input_shape[0]
    std = cfg.init_std
    if cfg.variant == "capsule":
        n_caps, _ = capsule_geometry(cfg)
        k0, k1 = cfg.conv_kernel, cfg.primary_kernel
        primary_filters = cfg.primary_dim * cfg.primary_channels
        params = {
            "conv.k": _init((cfg.conv_filters, c, k0, k0), c * k0 * k0, std, seed, "d.conv.k"),
            "conv.b": _zeros((cfg.conv_filters,), "d.conv.b"),
            "primary.k": _init((primary_filters, cfg.conv_filters, k1, k1),
                               cfg.conv_filters * k1 * k1, std, seed, "d.primary.k"),
            "primary.b": _zeros((primary_filters,), "d.primary.b"),
            "caps.W": _init((n_caps, 1, cfg.final_dim, cfg.primary_dim),
                            n_caps * cfg.primary_dim, std, seed, "d.caps.W"),
        }
    else:
        params = {}
        k = cfg.conv_kernel_size
        prev = c
        for i, ch in enumerate(cfg.conv_channels):
            params[f"conv{i}.k"] = _init((ch, prev, k, k), prev * k * k, std, seed, f"d.conv{i}.k")
            params[f"conv{i}.b"] = _zeros((ch,), f"d.conv{i}.b")
            prev = ch
        flat = _conv_geometry(cfg)
        params["head.w"] = _init((flat, 1), flat, std, seed, "d.head.w")
        params["head.b"] = _zeros((1,), "d.head.b")
    total = count_parameters(params)
    if total > cfg.param_budget:
        raise ParameterBudgetError(
            f"discriminator has {total} parameters, budget is {cfg.param_budget}")
    return params


def discriminator_forward(cfg: DiscriminatorConfig, p: Params, x: Tensor) -> tuple[Tensor, Tensor | None]:
    """Return ``(scores [batch], logits [batch] or None)``.

    Capsule variant: score is the length of the single output capsule.
    Convolutional variant: score is the sigmoid of a scalar logit.
    """
    if x.data.ndim != 4 or tuple(x.shape[1:]) != cfg.input_shape:
        raise ShapeError("discriminator", ("batch", *cfg.input_shape), x.shape)
    n = x.shape[0]
    if cfg.variant == "capsule":
        h = ops.conv2d(x, p["conv.k"], stride=cfg.conv_stride)
        h = ops.leaky_relu(ops.bias_add(h, p["conv.b"], axis=1), cfg.slope)
        u = primary_capsules(h, p["primary.k"], p["primary.b"], capsule_dim=cfg.primary_dim,
                             stride=cfg.primary_stride)
        layer = CapsuleLayerParams(p["caps.W"], routing_iters=cfg.routing_iters,
                                   agreement=cfg.agreement)
        v = routed_capsule_layer(u, layer)
        score = ops.vector_norm(ops.reshape(v, (n, cfg.final_dim)), axis=-1)
        return score, None
    pad = (cfg.conv_kernel_size - 2) // 2
    h = x
    for i in range(len(cfg.conv_channels)):
        h = ops.conv2d(h, p[f"conv{i}.k"], stride=2, pad=pad)
        h = ops.leaky_relu(ops.bias_add(h, p[f"conv{i}.b"], axis=1), cfg.slope)
    h = ops.reshape(h, (n, -1))
    logit = ops.reshape(ops.bias_add(ops.matmul(h, p["head.w"]), p["head.b"], axis=1), (n,))
    return ops.sigmoid(logit), logit
