"""训练目标模块"""
from .perceptual import RandomConvFeatures, PerceptualDistance
from .losses import (
    BCE_EPS,
    TERM_WEIGHTS,
    LossWeights,
    opacity_loss,
    sky_loss,
    reconstruction_loss,
    make_street_pair,
    generator_adversarial_loss,
    discriminator_adversarial_loss,
    r1_penalty,
    gan_losses,
    total_loss,
)

__all__ = [
    'RandomConvFeatures', 'PerceptualDistance',
    'BCE_EPS', 'TERM_WEIGHTS', 'LossWeights',
    'opacity_loss', 'sky_loss', 'reconstruction_loss', 'make_street_pair',
    'generator_adversarial_loss', 'discriminator_adversarial_loss', 'r1_penalty',
    'gan_losses', 'total_loss',
]
