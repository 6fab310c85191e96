"""Image synthesis path: feature composition, object encoder, convolutional
LSTM fuser, global context encoder, and the SPADE-normalized decoder.

Per object, the joint embedding and appearance code are broadcast into the
object's box on an S x S feature canvas; encoded canvases are fused
sequentially (object order matters and is preserved from the layout), the
fused map is augmented with a pooled global context vector, and the result
is decoded back to an RGB image in [-1, 1].
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .config import ModelConfig
from .embedding import ObjectEmbedder, encode_attributes
from .errors import EmptyObjectList
from .layout import Layout, ObjectSpec, bbox_to_grid, validate_layout


# ---------------------------------------------------------------------------
# Layout tensorization
# ---------------------------------------------------------------------------

@dataclass
class LayoutBatch:
    """A batch of layouts flattened to per-object tensors.

    Objects of all layouts are concatenated; ``lengths`` records how many
    belong to each layout, in order.
    """

    categories: torch.Tensor   # (N,) long
    attributes: torch.Tensor   # (N, |A|) float multi-hot
    boxes: torch.Tensor        # (N, 4) float, normalized x0,y0,x1,y1
    lengths: torch.Tensor      # (B,) long

    @property
    def num_layouts(self) -> int:
        return len(self.lengths)

    @property
    def num_objects(self) -> int:
        return int(self.lengths.sum())

    @classmethod
    def from_layouts(cls, layouts, num_attributes: int,
                     attrs_override=None) -> "LayoutBatch":
        cats, attrs, boxes, lengths = [], [], [], []
        override = attrs_override or [None] * len(layouts)
        for layout, ov in zip(layouts, override):
            lengths.append(layout.m)
            per_obj = ov or [None] * layout.m
            for obj, obj_ov in zip(layout.objects, per_obj):
                cats.append(obj.category)
                use = obj.attributes if obj_ov is None else tuple(obj_ov)
                attrs.append(encode_attributes(use, num_attributes))
                boxes.append(obj.bbox.as_tuple())
        return cls(
            categories=torch.tensor(cats, dtype=torch.long),
            attributes=torch.tensor(np.array(attrs), dtype=torch.float32),
            boxes=torch.tensor(boxes, dtype=torch.float32),
            lengths=torch.tensor(lengths, dtype=torch.long),
        )


def box_cell_mask(box, grid_size: int, dtype=torch.float32) -> torch.Tensor:
    """(S, S) {0,1} mask of the cells a normalized box rasterizes to."""
    from .layout import BBox

    bbox = box if hasattr(box, "as_tuple") else BBox(*[float(v) for v in box])
    r0, c0, r1, c1 = bbox_to_grid(bbox, grid_size)
    mask = torch.zeros(grid_size, grid_size, dtype=dtype)
    mask[r0:r1, c0:c1] = 1.0
    return mask


def compose_feature_map(obj: ObjectSpec, v: torch.Tensor, grid_size: int) -> torch.Tensor:
    """Fill the object's box cells with v; everything else exactly zero.

    Returns (C, S, S) with C = len(v).
    """
    if grid_size < 1:
        raise ValueError("grid_size must be >= 1")
    v = torch.as_tensor(v)
    mask = box_cell_mask(obj.bbox, grid_size, dtype=v.dtype)
    return mask.unsqueeze(0) * v.view(-1, 1, 1)


def compose_batch(boxes: torch.Tensor, vectors: torch.Tensor, grid_size: int) -> torch.Tensor:
    """Batched composition: (N, 4) boxes + (N, C) vectors -> (N, C, S, S)."""
    masks = torch.stack([box_cell_mask(b, grid_size, dtype=vectors.dtype) for b in boxes])
    return masks.unsqueeze(1) * vectors.unsqueeze(-1).unsqueeze(-1)


# ---------------------------------------------------------------------------
# Network blocks
# ---------------------------------------------------------------------------

class ObjectEncoder(nn.Module):
    """Stride-2 conv stack taking composed canvases down to the fused grid."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        n_stages = int(np.log2(cfg.compose_size // cfg.fused_size))
        chans = [cfg.object_vector_dim] + [
            max(4, cfg.fused_channels >> (n_stages - 1 - i)) for i in range(n_stages)
        ]
        layers = []
        for cin, cout in zip(chans[:-1], chans[1:]):
            layers += [nn.Conv2d(cin, cout, 3, stride=2, padding=1), nn.LeakyReLU(0.2)]
        self.net = nn.Sequential(*layers)

    def forward(self, feature_canvas: torch.Tensor) -> torch.Tensor:
        if feature_canvas.dim() == 3:
            return self.net(feature_canvas.unsqueeze(0)).squeeze(0)
        return self.net(feature_canvas)


class ConvLSTMCell(nn.Module):
    def __init__(self, input_channels: int, hidden_channels: int, kernel_size: int = 3):
        super().__init__()
        self.hidden_channels = hidden_channels
        self.conv = nn.Conv2d(input_channels + hidden_channels, 4 * hidden_channels,
                              kernel_size, padding=kernel_size // 2)

    def forward(self, x, h, c):
        gates = self.conv(torch.cat([x, h], dim=1))
        i, f, o, g = torch.split(gates, self.hidden_channels, dim=1)
        c_next = torch.sigmoid(f) * c + torch.sigmoid(i) * torch.tanh(g)
        h_next = torch.sigmoid(o) * torch.tanh(c_next)
        return h_next, c_next


class ConvLSTMFuser(nn.Module):
    """Single-layer convolutional LSTM consuming encoded object maps in
    layout order from a zero initial state; the final hidden state is H."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.cell = ConvLSTMCell(cfg.fused_channels, cfg.fused_channels)

    def forward(self, sequences: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        """sequences: (B, T, C, S, S) zero-padded at the tail; lengths: (B,)."""
        b, t_max, c, s, _ = sequences.shape
        h = sequences.new_zeros(b, self.cell.hidden_channels, s, s)
        cstate = torch.zeros_like(h)
        for t in range(t_max):
            h_new, c_new = self.cell(sequences[:, t], h, cstate)
            keep = (lengths > t).to(h.dtype).view(b, 1, 1, 1)
            h = keep * h_new + (1 - keep) * h
            cstate = keep * c_new + (1 - keep) * cstate
        return h


def pack_sequences(encoded: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
    """(N, C, S, S) flat objects -> (B, T_max, C, S, S) zero-padded."""
    b = len(lengths)
    t_max = int(lengths.max())
    n, c, s, _ = encoded.shape
    out = encoded.new_zeros(b, t_max, c, s, s)
    offset = 0
    for i, m in enumerate(lengths.tolist()):
        out[i, :m] = encoded[offset:offset + m]
        offset += m
    return out


def fuse_objects(encoded, fuser: ConvLSTMFuser) -> torch.Tensor:
    """Fuse an ordered list of (C, S, S) object grids into one map H."""
    encoded = list(encoded)
    if not encoded:
        raise EmptyObjectList("cannot fuse an empty object list")
    seq = torch.stack(encoded).unsqueeze(0)
    lengths = torch.tensor([len(encoded)])
    return fuser(seq, lengths).squeeze(0)


class ContextEncoder(nn.Module):
    """Pool H into a global context vector g and concatenate it back on."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.net = nn.Sequential(
            nn.Conv2d(cfg.fused_channels, cfg.context_channels, 3, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(cfg.context_channels, cfg.context_channels, 3, stride=2, padding=1),
            nn.LeakyReLU(0.2),
        )

    def context_vector(self, fused: torch.Tensor) -> torch.Tensor:
        return self.net(fused).mean(dim=(-2, -1))

    def forward(self, fused: torch.Tensor) -> torch.Tensor:
        squeeze = fused.dim() == 3
        if squeeze:
            fused = fused.unsqueeze(0)
        g = self.context_vector(fused)
        b, _, s, _ = fused.shape
        g_map = g.unsqueeze(-1).unsqueeze(-1).expand(b, g.shape[1], s, s)
        out = torch.cat([fused, g_map], dim=1)
        return out.squeeze(0) if squeeze else out


def encode_global_context(fused: torch.Tensor, context: ContextEncoder) -> torch.Tensor:
    return context(fused)


class SpadeNorm(nn.Module):
    """Spatially-adaptive normalization conditioned on the fused map.

    The input is normalized per channel, then modulated as
    out = normalized * (1 + gamma(H)) + beta(H) with gamma/beta predicted by
    convolutions over H resized (nearest) to the input's resolution.
    norm_mode "batch" uses batch statistics while training and running
    averages in eval; "instance" uses per-sample statistics (deterministic
    and batch-size invariant).
    """

    def __init__(self, channels: int, cond_channels: int, hidden: int,
                 mode: str = "batch", eps: float = 1e-5, momentum: float = 0.1):
        super().__init__()
        self.mode = mode
        self.eps = eps
        self.momentum = momentum
        self.register_buffer("running_mean", torch.zeros(channels))
        self.register_buffer("running_var", torch.ones(channels))
        self.shared = nn.Sequential(nn.Conv2d(cond_channels, hidden, 3, padding=1), nn.ReLU())
        self.gamma = nn.Conv2d(hidden, channels, 3, padding=1)
        self.beta = nn.Conv2d(hidden, channels, 3, padding=1)

    def normalize(self, x: torch.Tensor) -> torch.Tensor:
        if self.mode == "instance":
            mean = x.mean(dim=(-2, -1), keepdim=True)
            var = x.var(dim=(-2, -1), unbiased=False, keepdim=True)
            return (x - mean) / torch.sqrt(var + self.eps)
        if self.training:
            mean = x.mean(dim=(0, 2, 3))
            var = x.var(dim=(0, 2, 3), unbiased=False)
            with torch.no_grad():
                self.running_mean.mul_(1 - self.momentum).add_(self.momentum * mean)
                self.running_var.mul_(1 - self.momentum).add_(self.momentum * var)
        else:
            mean, var = self.running_mean, self.running_var
        shape = (1, -1, 1, 1)
        return (x - mean.view(shape)) / torch.sqrt(var.view(shape) + self.eps)

    def forward(self, x: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        if cond.shape[-2:] != x.shape[-2:]:
            cond = F.interpolate(cond, size=x.shape[-2:], mode="nearest")
        a = self.shared(cond)
        return self.normalize(x) * (1 + self.gamma(a)) + self.beta(a)


def spade_modulate(x: torch.Tensor, fused: torch.Tensor, spade: SpadeNorm) -> torch.Tensor:
    squeeze = x.dim() == 3
    if squeeze:
        x, fused = x.unsqueeze(0), fused.unsqueeze(0)
    out = spade(x, fused)
    return out.squeeze(0) if squeeze else out


class Decoder(nn.Module):
    """Upsampling stack from the fused grid to canvas resolution, with a
    SPADE modulation against H after every stage; tanh output."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        n_stages = int(np.log2(cfg.canvas_size // cfg.fused_size))
        cin = cfg.fused_channels + cfg.context_channels
        spade_hidden = max(cfg.decoder_min_channels, cfg.fused_channels // 2)
        self.convs = nn.ModuleList()
        self.spades = nn.ModuleList()
        for _ in range(n_stages):
            cout = max(cfg.decoder_min_channels, cin // 2)
            self.convs.append(nn.Conv2d(cin, cout, 3, padding=1))
            self.spades.append(SpadeNorm(cout, cfg.fused_channels, spade_hidden,
                                         mode=cfg.norm_mode))
            cin = cout
        self.to_rgb = nn.Conv2d(cin, 3, 3, padding=1)

    def forward(self, context_map: torch.Tensor, fused: torch.Tensor) -> torch.Tensor:
        x = context_map
        for conv, spade in zip(self.convs, self.spades):
            x = F.interpolate(x, scale_factor=2, mode="nearest")
            x = conv(x)
            x = F.leaky_relu(spade(x, fused), 0.2)
        return torch.tanh(self.to_rgb(x))


def decode(context_map: torch.Tensor, fused: torch.Tensor, decoder: Decoder) -> torch.Tensor:
    squeeze = context_map.dim() == 3
    if squeeze:
        context_map, fused = context_map.unsqueeze(0), fused.unsqueeze(0)
    out = decoder(context_map, fused)
    return out.squeeze(0) if squeeze else out


# ---------------------------------------------------------------------------
# Full generator
# ---------------------------------------------------------------------------

class Generator(nn.Module):
    def __init__(self, cfg: ModelConfig, embedder: ObjectEmbedder | None = None):
        super().__init__()
        self.cfg = cfg
        self.embedder = embedder if embedder is not None else ObjectEmbedder(cfg)
        self.object_encoder = ObjectEncoder(cfg)
        self.fuser = ConvLSTMFuser(cfg)
        self.context = ContextEncoder(cfg)
        self.decoder = Decoder(cfg)

    def object_vectors(self, batch: LayoutBatch, z: torch.Tensor) -> torch.Tensor:
        emb = self.embedder(batch.categories, batch.attributes.to(z.dtype))
        return torch.cat([emb, z], dim=-1)

    def fused_map(self, batch: LayoutBatch, z: torch.Tensor) -> torch.Tensor:
        v = self.object_vectors(batch, z)
        canvases = compose_batch(batch.boxes, v, self.cfg.compose_size)
        encoded = self.object_encoder(canvases)
        return self.fuser(pack_sequences(encoded, batch.lengths), batch.lengths)

    def forward(self, batch: LayoutBatch, z: torch.Tensor) -> torch.Tensor:
        fused = self.fused_map(batch, z)
        return self.decoder(self.context(fused), fused)


def generate(layout: Layout, z, generator: Generator, attrs_override=None,
             train_mode: bool = False) -> torch.Tensor:
    """Run the full pipeline for one layout; returns (3, H, W) in [-1, 1].

    z is an (m, latent_dim) array or tensor; attrs_override optionally
    replaces per-object attribute sets (None entries keep the original).
    """
    cfg = generator.cfg
    validate_layout(layout, cfg.num_categories, cfg.num_attributes)
    z = torch.as_tensor(z, dtype=torch.float32)
    if z.shape != (layout.m, cfg.latent_dim):
        raise ValueError(f"latent codes must have shape ({layout.m}, {cfg.latent_dim}), "
                         f"got {tuple(z.shape)}")
    batch = LayoutBatch.from_layouts(
        [layout], cfg.num_attributes,
        attrs_override=[attrs_override] if attrs_override is not None else None)
    was_training = generator.training
    generator.train(train_mode)
    try:
        with torch.no_grad():
            image = generator(batch, z)[0]
    finally:
        generator.train(was_training)
    return image
