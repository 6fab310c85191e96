"""Object/attribute embedding and the per-object appearance codes.

Each object is described to the generator by a joint embedding M(w + e)
of its category word vector w and multi-hot attribute vector e, concatenated
with an appearance code z that is either prior-sampled or estimated from a
real crop by the posterior encoder.
"""
from __future__ import annotations

import numpy as np
import torch
from torch import nn

from .config import ModelConfig
from .errors import UnknownIndex

LOGVAR_CLAMP = 10.0  # |log sigma^2| bound before exponentiation


def encode_attributes(attributes, vocab_size: int) -> np.ndarray:
    """Multi-hot {0,1} vector with ones exactly at the given indices."""
    attributes = tuple(attributes)
    if len(set(attributes)) != len(attributes):
        raise UnknownIndex("attribute indices must be distinct")
    e = np.zeros(vocab_size, dtype=np.float32)
    for a in attributes:
        if not 0 <= a < vocab_size:
            raise UnknownIndex(f"attribute index {a} out of range [0, {vocab_size})")
        e[a] = 1.0
    return e


class ObjectEmbedder(nn.Module):
    """Category table plus the three-layer MLP over (w + e)."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.table = nn.Embedding(cfg.num_categories, cfg.embed_dim)
        nn.init.normal_(self.table.weight, mean=0.0, std=0.02)
        h1, h2 = cfg.mlp_hidden
        self.mlp = nn.Sequential(
            nn.Linear(cfg.embed_dim + cfg.num_attributes, h1),
            nn.LeakyReLU(0.2),
            nn.Linear(h1, h2),
            nn.LeakyReLU(0.2),
            nn.Linear(h2, cfg.embed_dim),
        )

    def forward(self, categories: torch.Tensor, attr_multihot: torch.Tensor) -> torch.Tensor:
        if attr_multihot.shape[-1] != self.cfg.num_attributes:
            raise ValueError(
                f"attribute vector width {attr_multihot.shape[-1]} != {self.cfg.num_attributes}")
        w = self.table(categories.long())
        return self.mlp(torch.cat([w, attr_multihot.to(w.dtype)], dim=-1))


def joint_embedding(category: int, e: np.ndarray, embedder: ObjectEmbedder) -> torch.Tensor:
    """Single-object convenience wrapper around ObjectEmbedder."""
    cat = torch.tensor([category])
    vec = torch.as_tensor(e, dtype=torch.float32).unsqueeze(0)
    return embedder(cat, vec).squeeze(0)


class CropEncoder(nn.Module):
    """Posterior estimator Q: object crop -> (mu, logvar) of a diagonal
    Gaussian over the appearance code.

    Four stride-2 conv blocks, global average pooling, two linear heads.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        chans = [3] + [cfg.crop_channels * (2 ** i) for i in range(4)]
        blocks = []
        for cin, cout in zip(chans[:-1], chans[1:]):
            blocks += [nn.Conv2d(cin, cout, 3, stride=2, padding=1), nn.LeakyReLU(0.2)]
        self.trunk = nn.Sequential(*blocks)
        self.mu_head = nn.Linear(chans[-1], cfg.latent_dim)
        self.logvar_head = nn.Linear(chans[-1], cfg.latent_dim)

    def forward(self, crops: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if crops.shape[-1] != self.cfg.object_size or crops.shape[-2] != self.cfg.object_size:
            raise ValueError(
                f"crop size {tuple(crops.shape[-2:])} != configured "
                f"{self.cfg.object_size}x{self.cfg.object_size}")
        feats = self.trunk(crops).mean(dim=(-2, -1))
        mu = self.mu_head(feats)
        logvar = self.logvar_head(feats).clamp(-LOGVAR_CLAMP, LOGVAR_CLAMP)
        return mu, logvar


def estimate_posterior(crop: torch.Tensor, encoder: CropEncoder) -> tuple[torch.Tensor, torch.Tensor]:
    """Single-crop wrapper; accepts (3,P,P) and returns length-d mu/logvar."""
    mu, logvar = encoder(crop.unsqueeze(0))
    return mu.squeeze(0), logvar.squeeze(0)


def reparameterize(mu: torch.Tensor, logvar: torch.Tensor, eps: torch.Tensor) -> torch.Tensor:
    """z = mu + exp(logvar/2) * eps, elementwise."""
    return mu + torch.exp(0.5 * logvar) * eps


def sample_latent_prior(m: int, rng: np.random.Generator, dim: int = 64) -> np.ndarray:
    """m i.i.d. standard-normal codes, shape (m, dim), float32."""
    if m < 1:
        raise ValueError("m must be >= 1")
    return rng.standard_normal((m, dim)).astype(np.float32)
