"""Realness discriminators, auxiliary classifiers, and object cropping.

The image discriminator scores whole canvases; the object network scores
bilinear crop-resized object patches and carries two auxiliary heads, a
category classifier and a per-attribute (multi-label) classifier.  The
three object heads can share one convolutional trunk (default) or use
separate trunks.
"""
from __future__ import annotations

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .config import ModelConfig
from .layout import Layout


def crop_boxes(images: torch.Tensor, boxes: torch.Tensor, batch_index: torch.Tensor,
               out_size: int) -> torch.Tensor:
    """Bilinear crop-resize of normalized boxes out of a batch of images.

    images: (B, 3, H, W); boxes: (N, 4) x0,y0,x1,y1 in [0, 1];
    batch_index: (N,) which image each box belongs to.  Returns (N, 3, P, P).
    Sampling points sit at output-pixel centers, matching
    F.interpolate(..., align_corners=False) on a full-image box.
    """
    n = boxes.shape[0]
    p = out_size
    dtype = images.dtype
    boxes = boxes.to(dtype)
    # per-axis sample coordinates in [0,1] within the box
    steps = (torch.arange(p, dtype=dtype, device=images.device) + 0.5) / p
    x = boxes[:, 0:1] + steps.unsqueeze(0) * (boxes[:, 2:3] - boxes[:, 0:1])  # (N, P)
    y = boxes[:, 1:2] + steps.unsqueeze(0) * (boxes[:, 3:4] - boxes[:, 1:2])
    # grid_sample with align_corners=False maps [-1,1] to the outer pixel edges
    gx = (2.0 * x - 1.0).unsqueeze(1).expand(n, p, p)
    gy = (2.0 * y - 1.0).unsqueeze(2).expand(n, p, p)
    grid = torch.stack([gx, gy], dim=-1)
    src = images[batch_index.long()]
    return F.grid_sample(src, grid, mode="bilinear", padding_mode="border",
                         align_corners=False)


def crop_objects(image: torch.Tensor, layout: Layout, object_size: int) -> torch.Tensor:
    """One (3, P, P) crop per layout object from a single (3, H, W) image,
    in layout order."""
    boxes = torch.tensor([o.bbox.as_tuple() for o in layout.objects], dtype=torch.float32)
    idx = torch.zeros(layout.m, dtype=torch.long)
    return crop_boxes(image.unsqueeze(0), boxes, idx, object_size)


def _conv_trunk(in_side: int, base: int, min_side: int = 4) -> tuple[nn.Sequential, int]:
    """Stride-2 LeakyReLU conv stack from in_side down to min_side."""
    n_stages = max(1, int(np.log2(in_side // min_side)))
    chans = [3] + [base * (2 ** i) for i in range(n_stages)]
    layers = []
    for cin, cout in zip(chans[:-1], chans[1:]):
        layers += [nn.Conv2d(cin, cout, 3, stride=2, padding=1), nn.LeakyReLU(0.2)]
    return nn.Sequential(*layers), chans[-1]


class ImageDiscriminator(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.trunk, feat = _conv_trunk(cfg.canvas_size, cfg.disc_channels)
        self.head = nn.Linear(feat, 1)

    def features(self, images: torch.Tensor) -> torch.Tensor:
        return self.trunk(images).mean(dim=(-2, -1))

    def logits(self, images: torch.Tensor) -> torch.Tensor:
        if images.dim() == 3:
            images = images.unsqueeze(0)
        if images.shape[-1] != self.cfg.canvas_size:
            raise ValueError(f"image side {images.shape[-1]} != {self.cfg.canvas_size}")
        return self.head(self.features(images)).squeeze(-1)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        """Realness score in (0, 1) per image."""
        return torch.sigmoid(self.logits(images))


def image_realness(image: torch.Tensor, disc: ImageDiscriminator) -> torch.Tensor:
    return disc(image.unsqueeze(0) if image.dim() == 3 else image).squeeze(0)


class ObjectNetwork(nn.Module):
    """Object realness discriminator plus category / attribute classifiers.

    With shared_trunk one conv trunk feeds three heads; otherwise the
    realness, category, and attribute paths each own a trunk.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        n_trunks = 1 if cfg.shared_trunk else 3
        trunks = []
        for _ in range(n_trunks):
            trunk, feat = _conv_trunk(cfg.object_size, cfg.disc_channels, min_side=2)
            trunks.append(trunk)
        self.trunks = nn.ModuleList(trunks)
        self.feat_dim = feat
        self.real_head = nn.Linear(feat, 1)
        self.cls_head = nn.Linear(feat, cfg.num_categories)
        self.attr_head = nn.Linear(feat, cfg.num_attributes)

    def _check(self, crops: torch.Tensor) -> torch.Tensor:
        if crops.dim() == 3:
            crops = crops.unsqueeze(0)
        if crops.shape[-1] != self.cfg.object_size:
            raise ValueError(f"crop side {crops.shape[-1]} != {self.cfg.object_size}")
        return crops

    def _features(self, crops: torch.Tensor, which: int) -> torch.Tensor:
        trunk = self.trunks[0 if self.cfg.shared_trunk else which]
        return trunk(crops).mean(dim=(-2, -1))

    def realness(self, crops: torch.Tensor) -> torch.Tensor:
        crops = self._check(crops)
        return torch.sigmoid(self.real_head(self._features(crops, 0))).squeeze(-1)

    def class_logits(self, crops: torch.Tensor) -> torch.Tensor:
        crops = self._check(crops)
        return self.cls_head(self._features(crops, 1))

    def attr_logits(self, crops: torch.Tensor) -> torch.Tensor:
        crops = self._check(crops)
        return self.attr_head(self._features(crops, 2))


def object_realness(crop: torch.Tensor, net: ObjectNetwork) -> torch.Tensor:
    scores = net.realness(crop.unsqueeze(0) if crop.dim() == 3 else crop)
    return scores.squeeze(0) if crop.dim() == 3 else scores


def classify_object(crop: torch.Tensor, net: ObjectNetwork) -> torch.Tensor:
    single = crop.dim() == 3
    logits = net.class_logits(crop.unsqueeze(0) if single else crop)
    return logits.squeeze(0) if single else logits


def classify_attributes(crop: torch.Tensor, net: ObjectNetwork) -> torch.Tensor:
    single = crop.dim() == 3
    logits = net.attr_logits(crop.unsqueeze(0) if single else crop)
    return logits.squeeze(0) if single else logits
