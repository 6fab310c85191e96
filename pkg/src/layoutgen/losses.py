"""The seven loss terms and the generator/discriminator totals.

Reduction conventions, pinned here and mirrored by the test oracles:
  * adversarial losses: mean over the batch per path, then mean over the
    three generation paths (reconstruction / random / shifted);
  * KL and latent-code reconstruction: sum over objects (KL also sums over
    dimensions; the latent L1 is a per-dimension mean);
  * classifier losses and image reconstruction: means.
The discriminator side of the adversarial terms is the binary cross-entropy
the discriminator minimizes; the generator side is the non-saturating
-log D(fake) form.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import torch

_EPS = 1e-7  # score clamp; keeps log() finite when a sigmoid saturates


def _weighted_sum(terms):
    """Exactly rounded for plain floats; a graph-preserving sum for tensors."""
    terms = list(terms)
    if all(not torch.is_tensor(t) for t in terms):
        return math.fsum(terms)
    return sum(terms)


class AdvLoss(NamedTuple):
    generator: torch.Tensor
    discriminator: torch.Tensor


def _bce_real_fake(score_real: torch.Tensor, score_fake: torch.Tensor) -> torch.Tensor:
    real = score_real.clamp(_EPS, 1 - _EPS)
    fake = score_fake.clamp(_EPS, 1 - _EPS)
    return -(torch.log(real).mean() + torch.log1p(-fake).mean())


def _nonsaturating(score_fake: torch.Tensor) -> torch.Tensor:
    return -torch.log(score_fake.clamp(_EPS, 1 - _EPS)).mean()


def adv_loss_image(scores_real: torch.Tensor,
                   scores_fake_rand: torch.Tensor,
                   scores_fake_rec: torch.Tensor,
                   scores_fake_shift: torch.Tensor) -> AdvLoss:
    """Image adversarial loss, averaged over the three generated images.

    Returns (generator term, discriminator term); both are minimized by
    their respective networks.
    """
    fakes = (scores_fake_rand, scores_fake_rec, scores_fake_shift)
    d = sum(_bce_real_fake(scores_real, f) for f in fakes) / 3.0
    g = sum(_nonsaturating(f) for f in fakes) / 3.0
    return AdvLoss(g, d)


def adv_loss_object(scores_real: torch.Tensor,
                    scores_fake_rand: torch.Tensor,
                    scores_fake_rec: torch.Tensor,
                    scores_fake_shift: torch.Tensor) -> AdvLoss:
    """Object-level adversarial loss over crops; the per-object average is
    the batch mean since crops arrive flattened."""
    return adv_loss_image(scores_real, scores_fake_rand, scores_fake_rec, scores_fake_shift)


def kl_loss(mu: torch.Tensor, logvar: torch.Tensor) -> torch.Tensor:
    """Sum over objects and dimensions of KL(N(mu, sigma^2) || N(0, 1))."""
    if mu.shape != logvar.shape:
        raise ValueError(f"shape mismatch: {tuple(mu.shape)} vs {tuple(logvar.shape)}")
    return 0.5 * (mu.pow(2) + logvar.exp() - 1.0 - logvar).sum()


def image_recon_loss(image: torch.Tensor, image_rec: torch.Tensor) -> torch.Tensor:
    """Mean absolute difference over all pixels/channels."""
    if image.shape != image_rec.shape:
        raise ValueError(f"shape mismatch: {tuple(image.shape)} vs {tuple(image_rec.shape)}")
    return (image - image_rec).abs().mean()


def latent_recon_loss(z: torch.Tensor, z_rand: torch.Tensor,
                      z_shift: torch.Tensor) -> torch.Tensor:
    """Sum over objects of per-dimension-mean L1 gaps to the codes
    re-estimated from the random-path and shifted-path objects."""
    if not (z.shape == z_rand.shape == z_shift.shape):
        raise ValueError("latent code sets must have equal shapes")
    per_dim = lambda a, b: (a - b).abs().mean(dim=-1).sum()
    return per_dim(z, z_rand) + per_dim(z, z_shift)


def obj_class_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean softmax cross-entropy over objects."""
    if labels.min() < 0 or labels.max() >= logits.shape[-1]:
        raise ValueError("label out of range")
    logp = torch.log_softmax(logits, dim=-1)
    return -logp.gather(-1, labels.long().unsqueeze(-1)).mean()


def attr_class_loss(logits: torch.Tensor, targets: torch.Tensor,
                    weights: torch.Tensor | None = None) -> torch.Tensor:
    """Mean over objects of the attribute-weighted BCE, summed over the
    attribute vocabulary.  weights defaults to all-ones."""
    if logits.shape != targets.shape:
        raise ValueError(f"shape mismatch: {tuple(logits.shape)} vs {tuple(targets.shape)}")
    if weights is None:
        weights = torch.ones(logits.shape[-1], dtype=logits.dtype, device=logits.device)
    if weights.shape != logits.shape[-1:]:
        raise ValueError("weights must have one entry per attribute")
    p = torch.sigmoid(logits).clamp(_EPS, 1 - _EPS)
    bce = -(targets * torch.log(p) + (1 - targets) * torch.log1p(-p))
    return (bce * weights).sum(dim=-1).mean()


def attribute_bce_weights(attribute_totals, lo: float = 0.1, hi: float = 10.0) -> torch.Tensor:
    """Inverse-frequency weights clip(median/count, lo, hi); the median is
    taken over attributes that occur at all."""
    totals = torch.as_tensor(attribute_totals, dtype=torch.float64)
    nonzero = totals[totals > 0]
    if nonzero.numel() == 0:
        return torch.ones_like(totals, dtype=torch.float32)
    med = nonzero.median()
    w = med / totals.clamp(min=1e-12)
    return w.clamp(lo, hi).float()


@dataclass
class LossWeights:
    """lambda_1..lambda_7 for (adv-img, adv-obj, obj-class, attr-class, KL,
    img-recon, latent-recon)."""

    adv_img: float = 1.0
    adv_obj: float = 1.0
    obj_cls: float = 8.0
    attr_cls: float = 2.0
    kl: float = 0.01
    img_recon: float = 5.0
    latent_recon: float = 5.0

    def __post_init__(self):
        for name, v in self.__dict__.items():
            if v < 0:
                raise ValueError(f"loss weight {name} must be nonnegative, got {v}")


def generator_total(parts: dict, weights: LossWeights):
    """lambda-weighted sum of the seven generator loss parts."""
    return _weighted_sum([
        weights.adv_img * parts["adv_img"],
        weights.adv_obj * parts["adv_obj"],
        weights.obj_cls * parts["obj_cls"],
        weights.attr_cls * parts["attr_cls"],
        weights.kl * parts["kl"],
        weights.img_recon * parts["img_recon"],
        weights.latent_recon * parts["latent_recon"],
    ])


def discriminator_total(parts: dict, weights: LossWeights):
    """-l1*adv_img - l2*adv_obj + l3*obj_cls + l4*attr_cls.

    The adversarial parts follow the minimax-value convention (quantities
    the discriminator maximizes); classifier parts are computed on real
    objects only.
    """
    return _weighted_sum([
        -weights.adv_img * parts["adv_img"],
        -weights.adv_obj * parts["adv_obj"],
        weights.obj_cls * parts["obj_cls"],
        weights.attr_cls * parts["attr_cls"],
    ])


# canonical report field order: seven sub-losses then the two totals
REPORT_FIELDS = ("adv_img", "adv_obj", "obj_cls", "attr_cls", "kl",
                 "img_recon", "latent_recon", "loss_g", "loss_d")


@dataclass
class LossReport:
    """One training step's losses.  The seven named parts are the generator
    objective's components; discriminator-side values are kept alongside."""

    adv_img: float
    adv_obj: float
    obj_cls: float
    attr_cls: float
    kl: float
    img_recon: float
    latent_recon: float
    loss_g: float
    loss_d: float
    adv_img_d: float = 0.0
    adv_obj_d: float = 0.0
    obj_cls_real: float = 0.0
    attr_cls_real: float = 0.0

    def to_dict(self) -> dict:
        return dict(self.__dict__)
