"""Adversarial and spectral training objectives.

Least-squares GAN baselines, multi-resolution STFT auxiliaries, and the
pointwise relativistic variants with top-K discrepancy emphasis. Score maps
are per-position discriminator outputs [B, T] (a list of maps for the
multi-scale discriminator); real and fake maps must pair pointwise, so their
shapes must match exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from . import tensor as tt
from .dsp import StftConfig, stft_magnitude
from .tensor import ShapeError, Tensor


@dataclass(frozen=True)
class PrlsConfig:
    """Weights of the pointwise relativistic objective."""

    lambda_rls: float = 0.4
    margin: float = 1.0
    lambda_adv: float = 4.0
    lambda_topk: float = 0.01
    k_fraction: float = 0.10
    enabled_after: int = 0

    def __post_init__(self):
        if min(self.lambda_rls, self.lambda_adv, self.lambda_topk) < 0:
            raise ValueError("loss weights must be >= 0")
        if not 0 < self.k_fraction <= 1:
            raise ValueError(f"k_fraction must be in (0, 1], got {self.k_fraction}")


@dataclass(frozen=True)
class MultiStftConfig:
    configs: tuple = (
        StftConfig(fft_size=512, win_length=240, hop=50),
        StftConfig(fft_size=1024, win_length=600, hop=120),
        StftConfig(fft_size=2048, win_length=1200, hop=240),
    )

    def __post_init__(self):
        if not self.configs:
            raise ValueError("need at least one STFT resolution")


def _check_map(scores, name):
    if not isinstance(scores, Tensor):
        raise TypeError(f"{name}: expected a Tensor score map")
    if scores.data.size == 0:
        raise ShapeError(f"{name}: empty score map")


def _check_pair(real, fake, name):
    _check_map(real, name)
    _check_map(fake, name)
    if real.shape != fake.shape:
        raise ShapeError(f"{name}: real {real.shape} and fake {fake.shape} must pair pointwise")


def _as_list(maps):
    return list(maps) if isinstance(maps, (list, tuple)) else [maps]


# ---------------------------------------------------------------------------
# least-squares baselines


def lsgan_adv_loss(fake_scores):
    """Generator objective: mean (1 - D(G(z)))^2."""
    _check_map(fake_scores, "lsgan_adv_loss")
    return tt.mean(tt.square(1.0 - fake_scores))


def lsgan_d_loss(real_scores, fake_scores):
    """Discriminator objective: mean (1 - D(x))^2 + mean D(G(z))^2."""
    _check_pair(real_scores, fake_scores, "lsgan_d_loss")
    return tt.mean(tt.square(1.0 - real_scores)) + tt.mean(tt.square(fake_scores))


def melgan_d_loss(real_maps, fake_maps):
    """Multi-scale discriminator objective, summed (not averaged) over scales."""
    real_maps, fake_maps = _as_list(real_maps), _as_list(fake_maps)
    if len(real_maps) != len(fake_maps):
        raise ShapeError("melgan_d_loss: scale count mismatch")
    total = lsgan_d_loss(real_maps[0], fake_maps[0])
    for r, f in zip(real_maps[1:], fake_maps[1:]):
        total = total + lsgan_d_loss(r, f)
    return total


def melgan_adv_loss(fake_maps):
    """Multi-scale generator objective, summed over scales."""
    fake_maps = _as_list(fake_maps)
    total = lsgan_adv_loss(fake_maps[0])
    for f in fake_maps[1:]:
        total = total + lsgan_adv_loss(f)
    return total


# ---------------------------------------------------------------------------
# spectral losses

LOG_MAG_FLOOR = 1e-7


def spectral_convergence(x, x_hat, cfg: StftConfig):
    """Frobenius distance of magnitudes, normalized by the reference norm."""
    ref = stft_magnitude(x, cfg)
    est = stft_magnitude(x_hat, cfg)
    denom = tt.frobenius_norm(ref)
    if denom.item() == 0.0:
        raise ValueError("spectral_convergence: reference signal has zero spectral energy")
    num = tt.frobenius_norm(ref - est)
    return tt.div(num, denom)


def log_stft_magnitude(x, x_hat, cfg: StftConfig):
    """Mean absolute difference of log magnitudes, floored at 1e-7."""
    ref = tt.log(tt.clamp_min(stft_magnitude(x, cfg), LOG_MAG_FLOOR))
    est = tt.log(tt.clamp_min(stft_magnitude(x_hat, cfg), LOG_MAG_FLOOR))
    return tt.mean(tt.absval(ref - est))


def multi_resolution_stft(x, x_hat, cfg: MultiStftConfig):
    """Average over resolutions of spectral convergence + log magnitude."""
    total = None
    for c in cfg.configs:
        term = spectral_convergence(x, x_hat, c) + log_stft_magnitude(x, x_hat, c)
        total = term if total is None else total + term
    return total * (1.0 / len(cfg.configs))


def pwgan_generator_total(x, x_hat, fake_scores, stft_cfg: MultiStftConfig, lambda_adv=4.0):
    """Spectral loss plus weighted adversarial term."""
    return multi_resolution_stft(x, x_hat, stft_cfg) + lambda_adv * lsgan_adv_loss(fake_scores)


def melgan_generator_total(x, x_hat, fake_maps, stft_cfg: MultiStftConfig, lambda_adv=4.0):
    """Spectral loss plus weighted multi-scale adversarial term."""
    return multi_resolution_stft(x, x_hat, stft_cfg) + lambda_adv * melgan_adv_loss(fake_maps)


# ---------------------------------------------------------------------------
# pointwise relativistic terms


def pointwise_relativistic_d(real, fake, margin):
    """Per-position (D(x) - D(G(z)) - m)^2, unreduced."""
    _check_pair(real, fake, "pointwise_relativistic_d")
    return tt.square(real - fake - margin)


def pointwise_relativistic_g(fake, real, margin):
    """Per-position (D(G(z)) - D(x) - m)^2, unreduced."""
    _check_pair(real, fake, "pointwise_relativistic_g")
    return tt.square(fake - real - margin)


def topk_mean(per_position, k_fraction):
    """Mean of the K largest per-position values, K = ceil(k_fraction * T).

    Selection is per example over its own score sequence (last axis), then
    averaged over the batch.
    """
    _check_map(per_position, "topk_mean")
    if not 0 < k_fraction <= 1:
        raise ValueError(f"k_fraction must be in (0, 1], got {k_fraction}")
    n = per_position.shape[-1]
    k = math.ceil(k_fraction * n)
    if k == n:
        # selection keeps everything; plain mean preserves summation order
        # so this case is bit-exact against an unsorted mean
        return tt.mean(per_position)
    return tt.mean(tt.topk_values(per_position, k))


def prls_d_total(real, fake, cfg: PrlsConfig):
    """Discriminator loss: LSGAN terms + relativistic mean + top-K emphasis.

    Multi-scale inputs are computed per scale (each with its own score
    length) and summed across scales.
    """
    reals, fakes = _as_list(real), _as_list(fake)
    if len(reals) != len(fakes):
        raise ShapeError("prls_d_total: scale count mismatch")
    total = None
    for r, f in zip(reals, fakes):
        rel = pointwise_relativistic_d(r, f, cfg.margin)
        term = (
            lsgan_d_loss(r, f)
            + cfg.lambda_rls * tt.mean(rel)
            + cfg.lambda_topk * topk_mean(rel, cfg.k_fraction)
        )
        total = term if total is None else total + term
    return total


def prls_adv_total(fake, real, cfg: PrlsConfig):
    """Generator adversarial loss: weighted LSGAN + relativistic + top-K.

    The margin pushes fake scores above real scores, mirrored from the
    discriminator side. The spectral loss is added by the caller.
    """
    reals, fakes = _as_list(real), _as_list(fake)
    if len(reals) != len(fakes):
        raise ShapeError("prls_adv_total: scale count mismatch")
    total = None
    for r, f in zip(reals, fakes):
        rel = pointwise_relativistic_g(f, r, cfg.margin)
        term = (
            cfg.lambda_adv * lsgan_adv_loss(f)
            + cfg.lambda_rls * tt.mean(rel)
            + cfg.lambda_topk * topk_mean(rel, cfg.k_fraction)
        )
        total = term if total is None else total + term
    return total
