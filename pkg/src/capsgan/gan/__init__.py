from .checkpoint import (CheckpointChecksumError, CheckpointError, CheckpointFormatError,
                         CheckpointTruncatedError, CheckpointVersionError, VariantMismatchError,
                         load_checkpoint, save_checkpoint)
from .config import (DiscriminatorConfig, GeneratorConfig, TrainingConfig, mnist_configs,
                     synthetic_configs)
from .estimator import GAN, CapsuleGAN, ConvolutionalGAN
from .model import (GanModel, History, TrainingDivergenceError, build_model, discriminate, generate,
                    parameter_digest, train, train_discriminator_step, train_generator_step)
from .networks import ParameterBudgetError, count_parameters

__all__ = [
    "GAN",
    "CapsuleGAN",
    "CheckpointChecksumError",
    "CheckpointError",
    "CheckpointFormatError",
    "CheckpointTruncatedError",
    "CheckpointVersionError",
    "ConvolutionalGAN",
    "DiscriminatorConfig",
    "GanModel",
    "GeneratorConfig",
    "History",
    "ParameterBudgetError",
    "TrainingConfig",
    "TrainingDivergenceError",
    "VariantMismatchError",
    "build_model",
    "count_parameters",
    "discriminate",
    "generate",
    "load_checkpoint",
    "mnist_configs",
    "parameter_digest",
    "save_checkpoint",
    "synthetic_configs",
    "train",
    "train_discriminator_step",
    "train_generator_step",
]
