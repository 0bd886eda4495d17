"""Loss terms: adversarial pair objectives, label-swapped generator side,
diagonal-Gaussian KL, the nested-sequence KL penalty, and total assembly.

All functions are pure and differentiable through every tensor argument.
Discriminator scores are expected to be probabilities in (0, 1); a score
that has saturated to exactly 0 or 1 makes the corresponding log diverge,
which is reported as NonFinite rather than silently clamped.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import torch

from .core import LatentGaussian
from .errors import EmptySequence, NonFinite, ShapeMismatch


def _as_tensor(x) -> torch.Tensor:
    t = torch.as_tensor(x)
    return t.double() if not t.is_floating_point() else t


def _check_finite(value: torch.Tensor, what: str) -> torch.Tensor:
    if not torch.isfinite(value).all():
        raise NonFinite(f"{what} is not finite")
    return value


def kl_diag_gaussian(p: LatentGaussian, q: LatentGaussian) -> torch.Tensor:
    """KL(p || q) between diagonal Gaussians, in closed form.

    0.5 * sum_i(-1 - log(s1_i^2 / s2_i^2) + s1_i^2 / s2_i^2
                + (mu1_i - mu2_i)^2 / s2_i^2)

    Returns a scalar for vector parameters, or one value per row for
    batched (..., Z) parameters.
    """
    mu1, lv1 = _as_tensor(p.mu), _as_tensor(p.log_var)
    mu2, lv2 = _as_tensor(q.mu), _as_tensor(q.log_var)
    if mu1.shape != mu2.shape:
        raise ShapeMismatch(
            f"latent shapes differ: {tuple(mu1.shape)} vs {tuple(mu2.shape)}"
        )
    log_ratio = lv1 - lv2
    kl = 0.5 * torch.sum(
        -1.0 - log_ratio + torch.exp(log_ratio) + (mu1 - mu2) ** 2 * torch.exp(-lv2),
        dim=-1,
    )
    return _check_finite(kl, "KL divergence")


def _pair_objective(real_scores, fake_scores, name: str) -> torch.Tensor:
    real = _as_tensor(real_scores)
    fake = _as_tensor(fake_scores)
    loss = -torch.mean(torch.log(real)) - torch.mean(torch.log1p(-fake))
    return _check_finite(loss, name)


def d1_objective(real_scores, fake_scores) -> torch.Tensor:
    """Discriminator loss over (target, latent) pairs.

    `real_scores` are D1 probabilities on encoder pairs (y, z_E), and
    `fake_scores` on generator pairs (G(z_p), z_p). Returns
    -mean log(real) - mean log(1 - fake).
    """
    return _pair_objective(real_scores, fake_scores, "d1 objective")


def d2_objective(real_scores, fake_scores) -> torch.Tensor:
    """Discriminator loss over (views, latent) pairs.

    Same functional form as d1_objective; `real_scores` come from pairs
    (v(s, x), z_E) and `fake_scores` from (v(s, x), z_H).
    """
    return _pair_objective(real_scores, fake_scores, "d2 objective")


def generator_objective(
    d1_fake_scores, d1_real_scores, d2_fake_scores, d2_real_scores
) -> torch.Tensor:
    """Label-swapped objective for the generator and both encoders.

    The generator side minimizes the discriminator objectives with the
    labels swapped (instead of ascending their gradients), i.e.
    -mean log(d1_fake) - mean log(1 - d1_real)
    -mean log(d2_fake) - mean log(1 - d2_real).
    """
    part1 = _pair_objective(d1_fake_scores, d1_real_scores, "generator objective (d1)")
    part2 = _pair_objective(d2_fake_scores, d2_real_scores, "generator objective (d2)")
    return part1 + part2


def sequence_kl_penalty(latents: Sequence[LatentGaussian]) -> torch.Tensor:
    """Uncertainty-reduction penalty along a nested view sequence.

    `latents[t]` is the view-conditional Gaussian at sequence step t, with
    step t+1 conditioning on a superset of step t's views. Sums
    KL(latents[t] || latents[t-1]) over consecutive pairs, the superset
    distribution in the first slot. Returns 0 for a single-element
    sequence; batched latents give one value per row.
    """
    latents = list(latents)
    if not latents:
        raise EmptySequence("sequence KL penalty needs at least one element")
    mu0 = _as_tensor(latents[0].mu)
    total = torch.zeros(mu0.shape[:-1], dtype=mu0.dtype)
    for prev, curr in zip(latents, latents[1:]):
        total = total + kl_diag_gaussian(curr, prev)
    return total


@dataclass(frozen=True)
class LossBreakdown:
    """Per-step scalar losses plus their generator-side total."""

    d1_loss: float
    d2_loss: float
    gen_adv_loss: float
    enc_adv_loss: float
    kl_penalty: float
    lam: float
    total_gen_side: float

    FIELDS = ("d1_loss", "d2_loss", "gen_adv_loss", "enc_adv_loss", "kl_penalty")


def assemble_losses(
    d1_loss, d2_loss, gen_adv_loss, enc_adv_loss, kl_penalty, lam: float
) -> LossBreakdown:
    """Combine loss parts into a LossBreakdown.

    total_gen_side = gen_adv_loss + enc_adv_loss + lam * kl_penalty, exactly.
    """
    if lam < 0:
        raise ValueError(f"lambda must be nonnegative, got {lam}")
    parts = {
        "d1_loss": float(d1_loss),
        "d2_loss": float(d2_loss),
        "gen_adv_loss": float(gen_adv_loss),
        "enc_adv_loss": float(enc_adv_loss),
        "kl_penalty": float(kl_penalty),
    }
    for name, value in parts.items():
        if not torch.isfinite(torch.tensor(value)):
            raise NonFinite(f"{name} is not finite: {value}")
    total = parts["gen_adv_loss"] + parts["enc_adv_loss"] + lam * parts["kl_penalty"]
    return LossBreakdown(lam=float(lam), total_gen_side=total, **parts)
