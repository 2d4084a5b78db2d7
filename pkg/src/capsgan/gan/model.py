"""GAN state, adversarial objectives and the alternating training loop."""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from ..autodiff import Adam, Tensor, backward, no_grad, ops
from ..autodiff.rng import derive_seed, rng_normal
from ..capsnet import margin_loss
from ..datasets import LabeledDataset, epoch_permutation, to_signed11
from .config import DiscriminatorConfig, GeneratorConfig, TrainingConfig
from .networks import (Params, discriminator_forward, generator_forward, init_discriminator,
                       init_generator)

log = logging.getLogger(__name__)


class TrainingDivergenceError(RuntimeError):
    def __init__(self, step: int, d_loss: float, g_loss: float, last_checkpoint=None):
        self.step = step
        self.last_checkpoint = last_checkpoint
        msg = f"training diverged at step {step} (d_loss={d_loss}, g_loss={g_loss})"
        if last_checkpoint is not None:
            msg += f"; last checkpoint: {last_checkpoint}"
        super().__init__(msg)


@dataclass
class GanModel:
    generator: GeneratorConfig
    discriminator: DiscriminatorConfig
    training: TrainingConfig
    g_params: Params
    d_params: Params
    g_opt: Adam
    d_opt: Adam
    step: int = 0

    @property
    def variant(self) -> str:
        return self.discriminator.variant

    @property
    def seed(self) -> int:
        return self.training.seed

    def config_dict(self) -> dict:
        return {
            "generator": self.generator.to_dict(),
            "discriminator": self.discriminator.to_dict(),
            "training": self.training.to_dict(),
        }


@dataclass
class History:
    d_loss: list[float] = field(default_factory=list)
    g_loss: list[float] = field(default_factory=list)
    steps: list[int] = field(default_factory=list)

    def __len__(self):
        return len(self.steps)


def build_model(generator: GeneratorConfig, discriminator: DiscriminatorConfig,
                training: TrainingConfig = TrainingConfig()) -> GanModel:
    if tuple(generator.output_shape) != tuple(discriminator.input_shape):
        raise ValueError(f"generator output {generator.output_shape} does not match "
                         f"discriminator input {discriminator.input_shape}")
    seed = training.seed

    def opt():
        return Adam(lr=training.learning_rate, beta1=training.beta1, beta2=training.beta2,
                    eps=training.eps)

    return GanModel(generator, discriminator, training,
                    init_generator(generator, derive_seed(seed, "init-g")),
                    init_discriminator(discriminator, derive_seed(seed, "init-d")),
                    opt(), opt())


def _frozen(params: Params) -> Params:
    """Views of ``params`` that the tape treats as constants."""
    return {k: Tensor._from_op(p.data, (), None, "leaf") for k, p in params.items()}


def _latent(model: GanModel, n: int, seed: int) -> Tensor:
    return rng_normal((n, model.generator.latent_dim), seed)


def generate(model: GanModel, n: int, seed: int) -> np.ndarray:
    """``n`` samples in (-1, 1), shape [n, C, H, W]; deterministic in ``seed``."""
    with no_grad():
        return generator_forward(model.generator, model.g_params, _latent(model, n, seed)).data


def discriminate(model: GanModel, x: np.ndarray) -> np.ndarray:
    """Real-probability scores in [0, 1] for images in the signed range."""
    with no_grad():
        score, _ = discriminator_forward(model.discriminator, model.d_params, Tensor(x))
    return score.data


def discriminator_loss(model: GanModel, real: Tensor, fake: Tensor, d_params: Params) -> Tensor:
    cfg = model.discriminator
    real_score, real_logit = discriminator_forward(cfg, d_params, real)
    fake_score, fake_logit = discriminator_forward(cfg, d_params, fake)
    if cfg.variant == "capsule":
        m = model.training.margin
        n_real, n_fake = real.shape[0], fake.shape[0]
        return ops.add(
            margin_loss(ops.reshape(real_score, (n_real, 1)), np.ones((n_real, 1)), m),
            margin_loss(ops.reshape(fake_score, (n_fake, 1)), np.zeros((n_fake, 1)), m))
    # binary cross-entropy written on logits: -log sigmoid(l) = softplus(-l)
    return ops.add(ops.reduce_mean(ops.softplus(ops.neg(real_logit))),
                   ops.reduce_mean(ops.softplus(fake_logit)))


def generator_loss(model: GanModel, fake: Tensor, d_params: Params) -> Tensor:
    cfg = model.discriminator
    score, logit = discriminator_forward(cfg, d_params, fake)
    if cfg.variant == "capsule":
        n = fake.shape[0]
        return margin_loss(ops.reshape(score, (n, 1)), np.ones((n, 1)), model.training.margin)
    # non-saturating: minimise -log D(G(z))
    return ops.reduce_mean(ops.softplus(ops.neg(logit)))


def train_discriminator_step(model: GanModel, real_batch: np.ndarray, seed: int,
                             n_fake: int | None = None) -> float:
    """One optimizer step on the discriminator; generator weights are read only."""
    n_fake = len(real_batch) if n_fake is None else n_fake
    with no_grad():
        fake = generator_forward(model.generator, model.g_params, _latent(model, n_fake, seed))
    loss = discriminator_loss(model, Tensor(real_batch), Tensor(fake.data), model.d_params)
    grads = backward(loss, list(model.d_params.values()))
    model.d_opt.step(model.d_params, {k: grads[p] for k, p in model.d_params.items()})
    return loss.item()


def train_generator_step(model: GanModel, seed: int, n: int | None = None,
                         return_grads: bool = False):
    """One optimizer step on the generator against the current discriminator."""
    n = model.training.batch_size if n is None else n
    fake = generator_forward(model.generator, model.g_params, _latent(model, n, seed))
    loss = generator_loss(model, fake, _frozen(model.d_params))
    grads = backward(loss, list(model.g_params.values()))
    named = {k: grads[p] for k, p in model.g_params.items()}
    model.g_opt.step(model.g_params, named)
    if return_grads:
        return loss.item(), named
    return loss.item()


Callback = Callable[[GanModel, int, float, float], None]


def _batch_at(data: np.ndarray, batch_size: int, seed: int, step: int) -> np.ndarray:
    per_epoch = len(data) // batch_size
    epoch, offset = divmod(step, per_epoch)
    perm = epoch_permutation(len(data), seed, epoch)
    return data[perm[offset * batch_size:(offset + 1) * batch_size]]


def train(model: GanModel, dataset: LabeledDataset, steps: int,
          callbacks: Iterable[Callback] = ()) -> History:
    """Alternate one discriminator and one generator update per step.

    Batches and latent draws are keyed on ``model.step``, so a model restored
    from a checkpoint continues exactly as the uninterrupted run would.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    data = dataset.images if dataset.value_range == "signed11" else to_signed11(dataset.images)
    if tuple(data.shape[1:]) != tuple(model.generator.output_shape):
        raise ValueError(f"dataset images {data.shape[1:]} do not match model "
                         f"{model.generator.output_shape}")
    bs = model.training.batch_size
    if not 1 <= bs <= len(data):
        raise ValueError(f"batch_size {bs} exceeds dataset size {len(data)}")
    seed = model.training.seed
    batch_seed = derive_seed(seed, "batches")
    callbacks = list(callbacks)
    history = History()
    for _ in range(steps):
        t = model.step
        real = _batch_at(data, bs, batch_seed, t)
        d_loss = train_discriminator_step(model, real, derive_seed(seed, "d", t))
        g_loss = train_generator_step(model, derive_seed(seed, "g", t))
        if not (math.isfinite(d_loss) and math.isfinite(g_loss)):
            raise TrainingDivergenceError(t, d_loss, g_loss)
        model.step += 1
        history.steps.append(t)
        history.d_loss.append(d_loss)
        history.g_loss.append(g_loss)
        if t % 100 == 0:
            log.debug("step %d d_loss %.5f g_loss %.5f", t, d_loss, g_loss)
        for cb in callbacks:
            cb(model, t, d_loss, g_loss)
    return history


def parameter_digest(params: Params) -> str:
    h = hashlib.sha256()
    for name in sorted(params):
        h.update(name.encode())
        h.update(params[name].data.tobytes())
    return h.hexdigest()
