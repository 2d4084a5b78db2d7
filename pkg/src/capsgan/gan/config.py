from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

from ..capsnet import MarginLossConfig

VARIANTS = ("capsule", "convolutional")

# fields that only one discriminator variant uses
_CAPSULE_ONLY = ("conv_filters", "conv_kernel", "conv_stride", "primary_dim", "primary_channels",
                 "primary_kernel", "primary_stride", "final_dim", "routing_iters", "agreement")
_CONV_ONLY = ("conv_channels", "conv_kernel_size")


@dataclass(frozen=True)
class GeneratorConfig:
    """Dense projection followed by two stride-2 transposed convolutions.

    ``z -> dense(base_channels x H/4 x W/4) -> convT(base_channels/2) -> convT(C) -> tanh``
    with leaky ReLU between layers.  ``init_std=None`` draws weights with
    standard deviation ``1/sqrt(fan_in)``.
    """

    latent_dim: int = 100
    base_channels: int = 128
    output_shape: tuple = (1, 28, 28)
    kernel_size: int = 4
    slope: float = 0.2
    init_std: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "output_shape", tuple(int(s) for s in self.output_shape))
        c, h, w = self.output_shape
        if h % 4 or w % 4:
            raise ValueError(f"generator output {h}x{w} not reachable by two stride-2 layers")
        if self.base_channels < 2 or self.latent_dim < 1:
            raise ValueError("generator widths must be positive")
        if self.kernel_size < 2 or self.kernel_size % 2:
            raise ValueError("kernel_size must be even so stride 2 doubles the size exactly")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["output_shape"] = list(self.output_shape)
        return d


@dataclass(frozen=True)
class DiscriminatorConfig:
    variant: str = "capsule"
    input_shape: tuple = (1, 28, 28)
    slope: float = 0.2
    init_std: float | None = None
    param_budget: int = 2_000_000
    # capsule variant
    conv_filters: int = 32
    conv_kernel: int = 5
    conv_stride: int = 1
    primary_dim: int = 8
    primary_channels: int = 8
    primary_kernel: int = 5
    primary_stride: int = 2
    final_dim: int = 16
    routing_iters: int = 3
    agreement: str = "dot"
    # convolutional variant
    conv_channels: tuple = (64, 128)
    conv_kernel_size: int = 4

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        object.__setattr__(self, "conv_channels", tuple(int(s) for s in self.conv_channels))
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown discriminator variant {self.variant!r}")
        if self.routing_iters < 1:
            raise ValueError("routing_iters must be >= 1")
        if self.agreement not in ("dot", "cosine"):
            raise ValueError(f"unknown agreement {self.agreement!r}")

    def to_dict(self) -> dict:
        skip = _CONV_ONLY if self.variant == "capsule" else _CAPSULE_ONLY
        d = {k: v for k, v in asdict(self).items() if k not in skip}
        for k in ("input_shape", "conv_channels"):
            if k in d:
                d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DiscriminatorConfig":
        return cls(**d)


@dataclass(frozen=True)
class TrainingConfig:
    learning_rate: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 64
    seed: int = 0
    d_steps_per_g: int = 1
    margin: MarginLossConfig = field(default_factory=MarginLossConfig)

    def __post_init__(self):
        if isinstance(self.margin, dict):
            object.__setattr__(self, "margin", MarginLossConfig(**self.margin))
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.d_steps_per_g != 1:
            raise ValueError("only the 1:1 alternation schedule is supported")

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["margin"] = asdict(self.margin)
        return d


def mnist_configs(variant: str = "capsule"):
    """Default MNIST-scale generator and discriminator."""
    return GeneratorConfig(), DiscriminatorConfig(variant=variant)


def synthetic_configs(variant: str = "capsule", image_shape=(1, 8, 8)):
    """Small networks for the 8x8 synthetic distribution."""
    gen = GeneratorConfig(latent_dim=16, base_channels=32, output_shape=image_shape)
    disc = DiscriminatorConfig(
        variant=variant, input_shape=image_shape,
        conv_filters=16, conv_kernel=3, conv_stride=1,
        primary_dim=4, primary_channels=4, primary_kernel=3, primary_stride=1,
        final_dim=8, conv_channels=(16, 32),
    )
    return gen, disc
