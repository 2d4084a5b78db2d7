from __future__ import annotations

from dataclasses import replace

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ..datasets import LabeledDataset, to_raw01, to_signed11
from ..utils.validation import check_images
from .config import DiscriminatorConfig, GeneratorConfig, TrainingConfig
from .model import build_model, discriminate, generate, train


class GAN(BaseEstimator):
    """Adversarially trained image generator with a pluggable discriminator.

    ``fit`` takes images in [0, 1] shaped [N, C, H, W]; ``sample`` returns
    images in the same range.  Set ``discriminator="capsule"`` for a capsule
    network trained with margin loss, ``"convolutional"`` for the
    cross-entropy baseline.  ``generator_config`` / ``discriminator_config``
    override architecture fields; their image shapes are taken from the data.

    Attributes
    ----------
    model_ : GanModel
    history_ : History
        Per-step discriminator and generator losses from the last ``fit``.
    """

    def __init__(self, discriminator="capsule", n_steps=2000, batch_size=64, learning_rate=2e-4,
                 beta1=0.5, beta2=0.999, generator_config=None, discriminator_config=None,
                 random_state=0):
        self.discriminator = discriminator
        self.n_steps = n_steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.generator_config = generator_config
        self.discriminator_config = discriminator_config
        self.random_state = random_state

    def _configs(self, shape, n):
        gen = self.generator_config or GeneratorConfig()
        disc = self.discriminator_config or DiscriminatorConfig()
        gen = replace(gen, output_shape=shape)
        disc = replace(disc, input_shape=shape, variant=self.discriminator)
        training = TrainingConfig(learning_rate=self.learning_rate, beta1=self.beta1,
                                  beta2=self.beta2, batch_size=min(self.batch_size, n),
                                  seed=int(self.random_state))
        return gen, disc, training

    def fit(self, X, y=None):
        X = check_images(X)
        self.model_ = build_model(*self._configs(X.shape[1:], len(X)))
        labels = np.zeros(len(X), dtype=np.int64) if y is None else np.asarray(y)
        ds = LabeledDataset(X, labels, int(labels.max()) + 1)
        self.history_ = train(self.model_, ds, self.n_steps)
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self

    def partial_fit(self, X, y=None, n_steps=1):
        """Continue training an already fitted model for ``n_steps`` more steps."""
        if not hasattr(self, "model_"):
            saved, self.n_steps = self.n_steps, n_steps
            try:
                return self.fit(X, y)
            finally:
                self.n_steps = saved
        X = check_images(X, shape=self.model_.generator.output_shape)
        ds = LabeledDataset(X, np.zeros(len(X), dtype=np.int64), 1)
        self.history_ = train(self.model_, ds, n_steps)
        return self

    def sample(self, n_samples=1, random_state=0):
        check_is_fitted(self, "model_")
        return to_raw01(generate(self.model_, n_samples, int(random_state)))

    def decision_function(self, X):
        """Discriminator score in [0, 1]: high means "real"."""
        check_is_fitted(self, "model_")
        X = check_images(X, shape=self.model_.generator.output_shape)
        return discriminate(self.model_, to_signed11(X))

    def predict(self, X):
        """1 for images the discriminator calls real, 0 for generated."""
        return (self.decision_function(X) >= 0.5).astype(np.int64)


def CapsuleGAN(**kwargs) -> GAN:
    return GAN(discriminator="capsule", **kwargs)


def ConvolutionalGAN(**kwargs) -> GAN:
    return GAN(discriminator="convolutional", **kwargs)
