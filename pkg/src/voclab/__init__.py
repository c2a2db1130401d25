"""Desk-scale GAN vocoder training laboratory.

Tensor autodiff core, differentiable STFT features, least-squares and
pointwise relativistic adversarial losses with top-K emphasis, downscaled
MelGAN/PWGAN-style models, a deterministic trainer, and MCD/FFE metrics.
"""

from .tensor import Tape, Tensor, backward, grad_check

__all__ = ["Tape", "Tensor", "backward", "grad_check"]
__version__ = "0.1.0"
