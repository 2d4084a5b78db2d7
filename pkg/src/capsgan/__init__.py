"""GANs with a capsule-network discriminator trained on margin loss."""

__version__ = "0.1.0"
