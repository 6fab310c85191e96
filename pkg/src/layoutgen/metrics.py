"""Evaluation metrics: perceptual distance, diversity, shift consistency,
classification scores, and the Fréchet feature-statistics distance.

The perceptual distance follows the channel-normalized squared-L2 recipe:
per layer, unit-normalize features along channels at every spatial cell,
take the squared L2 difference per cell, average over cells, then average
across layers.  Backbones are pluggable: any callable mapping a batch of
images to a list of per-layer feature grids works; the repo's trained
classifier trunk is the desk-scale default.
"""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg
import torch
from torch import nn

from .discriminator import ObjectNetwork, crop_objects
from .errors import EmptyInput
from .layout import Layout, ShiftSpec, shift_layout

logger = logging.getLogger(__name__)


class TrunkFeatureExtractor:
    """Per-stage activations of a strided conv trunk (deterministic)."""

    def __init__(self, trunk: nn.Sequential):
        self.trunk = trunk

    @classmethod
    def from_object_network(cls, net: ObjectNetwork) -> "TrunkFeatureExtractor":
        return cls(net.trunks[0])

    def __call__(self, images: torch.Tensor) -> list[torch.Tensor]:
        feats = []
        x = images
        with torch.no_grad():
            for layer in self.trunk:
                x = layer(x)
                if isinstance(layer, (nn.LeakyReLU, nn.ReLU)):
                    feats.append(x)
        return feats


def _channel_normalize(feats: torch.Tensor, eps: float = 1e-10) -> torch.Tensor:
    norm = feats.pow(2).sum(dim=0, keepdim=True).sqrt()
    return feats / (norm + eps)


def _layer_distances(img_a: torch.Tensor, img_b: torch.Tensor, fx) -> list[torch.Tensor]:
    """Per-layer (H_l, W_l) maps of squared L2 distance between
    channel-normalized features."""
    if img_a.shape != img_b.shape:
        raise ValueError(f"shape mismatch: {tuple(img_a.shape)} vs {tuple(img_b.shape)}")
    layers = fx(torch.stack([img_a, img_b]))
    if not layers:
        raise ValueError("feature extractor returned no layers")
    maps = []
    for feats in layers:
        fa = _channel_normalize(feats[0])
        fb = _channel_normalize(feats[1])
        maps.append((fa - fb).pow(2).sum(dim=0))
    return maps


def perceptual_distance(img_a: torch.Tensor, img_b: torch.Tensor, fx) -> float:
    """Mean over layers of the cell-averaged normalized feature distance."""
    maps = _layer_distances(img_a, img_b, fx)
    return float(sum(m.mean() for m in maps) / len(maps))


def masked_perceptual_distance(img_a: torch.Tensor, img_b: torch.Tensor, fx,
                               mask: torch.Tensor, threshold: float = 0.5) -> float:
    """perceptual_distance with cells excluded wherever the pixel mask,
    area-downsampled to each layer's resolution, falls below threshold."""
    maps = _layer_distances(img_a, img_b, fx)
    total, n_layers = 0.0, 0
    m = mask.to(img_a.dtype).unsqueeze(0).unsqueeze(0)
    for dmap in maps:
        layer_mask = torch.nn.functional.adaptive_avg_pool2d(m, dmap.shape)[0, 0]
        keep = layer_mask >= threshold
        if keep.any():
            total += float(dmap[keep].mean())
            n_layers += 1
    if n_layers == 0:
        raise ValueError("mask excludes every cell at every layer")
    return total / n_layers


def diversity_score(set_a, set_b, fx) -> tuple[float, float]:
    """Mean/std of pairwise perceptual distance over aligned image pairs."""
    set_a, set_b = list(set_a), list(set_b)
    if len(set_a) != len(set_b):
        raise ValueError(f"paired sets must have equal length, got {len(set_a)}/{len(set_b)}")
    if not set_a:
        raise EmptyInput("no image pairs")
    d = np.array([perceptual_distance(a, b, fx) for a, b in zip(set_a, set_b)])
    return float(d.mean()), float(d.std())


def _pixel_box_mask(layout: Layout, side: int) -> torch.Tensor:
    """(side, side) {0,1} map marking all object boxes."""
    from .layout import bbox_to_grid

    mask = torch.zeros(side, side)
    for obj in layout.objects:
        r0, c0, r1, c1 = bbox_to_grid(obj.bbox, side)
        mask[r0:r1, c0:c1] = 1.0
    return mask


def consistency_score(image: torch.Tensor, image_shift: torch.Tensor, layout: Layout,
                      shifts: ShiftSpec, fx, object_size: int | None = None) -> tuple[float, float]:
    """(background, foreground) consistency in [0, 1] for a shifted pair.

    fg: mean over objects of 1 - perceptual distance between the object's
    crop before and after the shift.  bg: 1 - perceptual distance over the
    region outside the union of all (original and shifted) boxes.
    """
    if image.shape != image_shift.shape:
        raise ValueError("images must share a shape")
    side = image.shape[-1]
    object_size = object_size or side // 2
    shifted = shift_layout(layout, shifts)
    crops_a = crop_objects(image, layout, object_size)
    crops_b = crop_objects(image_shift, shifted, object_size)
    fg_vals = [1.0 - perceptual_distance(a, b, fx) for a, b in zip(crops_a, crops_b)]
    fg = float(np.clip(np.mean(fg_vals), 0.0, 1.0))
    bg_mask = 1.0 - torch.clamp(_pixel_box_mask(layout, side)
                                + _pixel_box_mask(shifted, side), 0.0, 1.0)
    bg = float(np.clip(1.0 - masked_perceptual_distance(image, image_shift, fx, bg_mask),
                       0.0, 1.0))
    return bg, fg


def attribute_recall_precision(crops: torch.Tensor, gt_attribute_sets, classifier,
                               threshold: float = 0.5) -> tuple[float, float]:
    """Micro-averaged recall/precision of predicted attribute sets.

    classifier: callable crops -> (N, |A|) logits; an attribute is predicted
    present iff sigmoid(logit) > threshold.  Precision is 0 by convention
    when nothing is predicted; recall is vacuously 1 when there are no
    ground-truth attribute pairs.
    """
    gt_attribute_sets = list(gt_attribute_sets)
    if len(gt_attribute_sets) != crops.shape[0]:
        raise ValueError("one ground-truth attribute set per crop required")
    with torch.no_grad():
        logits = classifier(crops)
    pred = torch.sigmoid(logits) > threshold
    tp = fp = fn = 0
    for i, gt in enumerate(gt_attribute_sets):
        gt = set(gt)
        pred_i = set(torch.nonzero(pred[i]).flatten().tolist())
        tp += len(gt & pred_i)
        fp += len(pred_i - gt)
        fn += len(gt - pred_i)
    recall = tp / (tp + fn) if (tp + fn) > 0 else 1.0
    precision = tp / (tp + fp) if (tp + fp) > 0 else 0.0
    return float(recall), float(precision)


def object_accuracy(crops: torch.Tensor, labels, classifier) -> float:
    """Fraction of crops whose argmax class equals the label."""
    labels = torch.as_tensor(labels, dtype=torch.long)
    if crops.shape[0] == 0:
        raise EmptyInput("no crops to classify")
    if labels.shape[0] != crops.shape[0]:
        raise ValueError("one label per crop required")
    with torch.no_grad():
        logits = classifier(crops)
    return float((logits.argmax(dim=-1) == labels).float().mean())


def frechet_distance(features_a, features_b, eps: float = 1e-6) -> float:
    """||mu_a - mu_b||^2 + tr(Sa + Sb - 2 (Sa Sb)^(1/2)).

    Falls back to +eps*I regularization (reported via log) when the
    covariance product has no clean matrix square root.
    """
    a = np.asarray(features_a, dtype=np.float64)
    b = np.asarray(features_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError("feature sets must be (N, D) with equal D")
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise ValueError("need at least 2 samples per set")
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    cov_a = np.cov(a, rowvar=False)
    cov_b = np.cov(b, rowvar=False)

    def sqrt_trace(ca, cb):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            covmean, _ = scipy.linalg.sqrtm(ca @ cb, disp=False)
        if not np.all(np.isfinite(covmean)):
            return None
        if np.iscomplexobj(covmean):
            if np.abs(covmean.imag).max() > 1e-4:
                return None
            covmean = covmean.real
        return np.trace(covmean)

    tr = sqrt_trace(cov_a, cov_b)
    if tr is None:
        logger.warning("degenerate covariance; regularizing with +%g*I", eps)
        ident = np.eye(a.shape[1])
        tr = sqrt_trace(cov_a + eps * ident, cov_b + eps * ident)
        if tr is None:
            raise ValueError("covariance square root failed even after regularization")
    fd = float(mu_a @ mu_a - 2 * mu_a @ mu_b + mu_b @ mu_b
               + np.trace(cov_a) + np.trace(cov_b) - 2 * tr)
    return max(fd, 0.0)


# ---------------------------------------------------------------------------
# Feature-file adapter (externally computed backbones)
# ---------------------------------------------------------------------------

def save_feature_dump(path_base, layers: dict[str, np.ndarray]) -> None:
    """Binary dump of named layer arrays + JSON sidecar (shape/dtype/names)."""
    base = Path(path_base)
    sidecar, offset = [], 0
    with open(base.with_suffix(".bin"), "wb") as fh:
        for name, arr in layers.items():
            arr = np.ascontiguousarray(arr)
            fh.write(arr.tobytes())
            sidecar.append({"name": name, "shape": list(arr.shape),
                            "dtype": str(arr.dtype), "offset": offset})
            offset += arr.nbytes
    base.with_suffix(".json").write_text(
        json.dumps({"v": 1, "layers": sidecar}, indent=2), encoding="utf-8")


def load_feature_dump(path_base) -> dict[str, np.ndarray]:
    base = Path(path_base)
    meta = json.loads(base.with_suffix(".json").read_text(encoding="utf-8"))
    raw = base.with_suffix(".bin").read_bytes()
    out = {}
    for entry in meta["layers"]:
        size = int(np.prod(entry["shape"])) * np.dtype(entry["dtype"]).itemsize
        buf = raw[entry["offset"]:entry["offset"] + size]
        out[entry["name"]] = np.frombuffer(buf, dtype=entry["dtype"]).reshape(entry["shape"]).copy()
    return out


@dataclass
class EvalReport:
    object_accuracy: float | None = None
    attribute_recall: float | None = None
    attribute_precision: float | None = None
    diversity_mean: float | None = None
    diversity_std: float | None = None
    consistency_bg: float | None = None
    consistency_fg: float | None = None
    frechet: float | None = None

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None}


# ---------------------------------------------------------------------------
# Generation-quality harness over a dataset of layouts
# ---------------------------------------------------------------------------

def evaluate_generation(generator, classifier, layouts, latent_dim: int,
                        object_size: int, seed: int = 0,
                        threshold: float = 0.5) -> tuple[float, float, float]:
    """Generate each layout with ground-truth attributes and prior codes,
    then score the crops with an independent classifier.  Returns
    (object accuracy, attribute recall, attribute precision)."""
    from .discriminator import crop_objects
    from .generator import generate

    rng = np.random.default_rng(seed)
    crops_all, labels, gt_attrs = [], [], []
    for layout in layouts:
        z = rng.standard_normal((layout.m, latent_dim)).astype(np.float32)
        image = generate(layout, z, generator)
        crops_all.append(crop_objects(image, layout, object_size))
        labels += [o.category for o in layout.objects]
        gt_attrs += [o.attributes for o in layout.objects]
    crops = torch.cat(crops_all)
    acc = object_accuracy(crops, labels, classifier.class_logits)
    recall, precision = attribute_recall_precision(crops, gt_attrs,
                                                   classifier.attr_logits, threshold)
    return acc, recall, precision


def evaluate_consistency(generator, fx, layouts, latent_dim: int, object_size: int,
                         shift_magnitude: float = 0.3, seed: int = 0):
    """Shifted-pair consistency over layouts plus the cross-random-image
    baseline (the same score against an unrelated generated image).
    Returns (pair_bg, pair_fg, baseline_bg, baseline_fg) means."""
    from .generator import generate
    from .layout import sample_shifts

    rng = np.random.default_rng(seed)
    pair_bg, pair_fg, base_bg, base_fg = [], [], [], []
    prev = None
    for layout in layouts:
        z = rng.standard_normal((layout.m, latent_dim)).astype(np.float32)
        shifts = sample_shifts(layout, shift_magnitude,
                               np.random.Generator(np.random.PCG64(rng.integers(2**32))))
        image = generate(layout, z, generator)
        image_shift = generate(shift_layout(layout, shifts), z, generator)
        bg, fg = consistency_score(image, image_shift, layout, shifts, fx,
                                   object_size=object_size)
        pair_bg.append(bg)
        pair_fg.append(fg)
        if prev is not None:
            bg0, fg0 = consistency_score(image, prev, layout, shifts, fx,
                                         object_size=object_size)
            base_bg.append(bg0)
            base_fg.append(fg0)
        prev = image
    return (float(np.mean(pair_bg)), float(np.mean(pair_fg)),
            float(np.mean(base_bg)), float(np.mean(base_fg)))
