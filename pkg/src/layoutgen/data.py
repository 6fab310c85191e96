"""Deterministic synthetic attributed-shapes dataset, plus dataset-directory
plumbing shared with ingestion (index files, PNG IO, the LayoutDataset
loader the trainer consumes).

Rendering is pure numpy with supersampled coverage, so a layout, spec, and
seed always produce identical bytes, and integer-pixel horizontal shifts
translate rendered pixels exactly (anti-aliasing is computed from geometry
that translates with the box).
"""
from __future__ import annotations

import hashlib
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ParseError, UnknownIndex
from .layout import (
    BBox,
    Canvas,
    Layout,
    ObjectSpec,
    Vocabulary,
    parse_layout,
    serialize_layout,
    validate_layout,
)
from .prior import AttributePrior, estimate_attribute_prior

# ---------------------------------------------------------------------------
# PNG conversion: [-1, 1] float <-> [0, 255] uint8, linear
# ---------------------------------------------------------------------------

def image_to_uint8(image: np.ndarray) -> np.ndarray:
    arr = np.clip((np.asarray(image, dtype=np.float32) + 1.0) * 0.5, 0.0, 1.0)
    return np.round(arr * 255.0).astype(np.uint8)


def uint8_to_image(arr: np.ndarray) -> np.ndarray:
    return (arr.astype(np.float32) / 255.0) * 2.0 - 1.0


def to_png_bytes(image: np.ndarray) -> bytes:
    """image: (3, H, W) in [-1, 1]."""
    arr = image_to_uint8(image).transpose(1, 2, 0)
    buf = io.BytesIO()
    Image.fromarray(arr, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def from_png_bytes(data: bytes) -> np.ndarray:
    arr = np.asarray(Image.open(io.BytesIO(data)).convert("RGB"))
    return uint8_to_image(arr.transpose(2, 0, 1))


# ---------------------------------------------------------------------------
# Synthetic spec and renderer
# ---------------------------------------------------------------------------

COLOR_RGB = {
    "red": (1.0, 0.0, 0.0),
    "green": (0.0, 1.0, 0.0),
    "blue": (0.0, 0.0, 1.0),
    "yellow": (1.0, 1.0, 0.0),
    "white": (1.0, 1.0, 1.0),
}
SIZE_SCALE = {"small": 0.55, "large": 0.95}
DEFAULT_SCALE = 0.75
DEFAULT_GRAY = (0.3, 0.3, 0.3)
BACKGROUND_RANGE = (0.45, 0.7)  # neutral gray band, shade varies per scene


def _background_shade(layout: Layout) -> float:
    """Per-scene background gray, derived only from horizontal-shift-invariant
    layout features so shifted layouts render on the identical background."""
    features = tuple(
        (o.category, o.attributes, round(o.bbox.width, 6), round(o.bbox.height, 6),
         round(o.bbox.y0, 6))
        for o in layout.objects)
    digest = hashlib.sha256(repr(features).encode("utf-8")).digest()
    lo, hi = BACKGROUND_RANGE
    return lo + (hi - lo) * (int.from_bytes(digest[:4], "big") / 0xFFFFFFFF)


@dataclass(frozen=True)
class SyntheticSpec:
    shapes: tuple[str, ...] = ("rectangle", "ellipse", "triangle")
    colors: tuple[str, ...] = ("red", "green", "blue", "yellow", "white")
    sizes: tuple[str, ...] = ("small", "large")
    canvas_size: int = 32
    objects_range: tuple[int, int] = (1, 3)
    size_attr_probability: float = 0.5
    min_box_side: float = 0.15
    max_box_side: float = 0.55
    # heavily occluded objects are unlearnable, so box sampling rejects
    # placements where boxes overlap more than this fraction of either box
    max_overlap: float = 0.3
    seed: int = 0

    def categories(self) -> Vocabulary:
        return Vocabulary(self.shapes)

    def attributes(self) -> Vocabulary:
        return Vocabulary(self.colors + self.sizes)


def _coverage(shape: str, cx: float, cy: float, hw: float, hh: float,
              side: int, ss: int = 4) -> tuple[np.ndarray, tuple[int, int, int, int]]:
    """Supersampled in-shape coverage over the shape's pixel bounding region.

    Returns (coverage patch, (r0, c0, r1, c1)) in pixel coordinates.
    """
    r0 = max(int(np.floor(cy - hh)) - 1, 0)
    r1 = min(int(np.ceil(cy + hh)) + 1, side)
    c0 = max(int(np.floor(cx - hw)) - 1, 0)
    c1 = min(int(np.ceil(cx + hw)) + 1, side)
    if r0 >= r1 or c0 >= c1:
        return np.zeros((0, 0), dtype=np.float32), (r0, c0, r0, c0)
    sub = (np.arange(ss) + 0.5) / ss
    ys = (r0 + np.arange(r1 - r0))[:, None] + sub[None, :]   # (rows, ss)
    xs = (c0 + np.arange(c1 - c0))[:, None] + sub[None, :]   # (cols, ss)
    # broadcast to (rows, cols, ss, ss)
    py = ys[:, None, :, None] - cy
    px = xs[None, :, None, :] - cx
    if shape == "rectangle":
        inside = (np.abs(px) <= hw) & (np.abs(py) <= hh)
    elif shape == "ellipse":
        inside = (px / hw) ** 2 + (py / hh) ** 2 <= 1.0
    elif shape == "triangle":
        # isoceles: apex top-center, base at the bottom of the scaled box
        t = (py + hh) / (2.0 * hh)          # 0 at apex row, 1 at base
        inside = (np.abs(px) <= hw * np.clip(t, 0.0, 1.0)) & (np.abs(py) <= hh)
    else:
        raise UnknownIndex(f"unknown shape {shape!r}")
    cov = inside.mean(axis=(2, 3)).astype(np.float32)
    return cov, (r0, c0, r1, c1)


def render_synthetic(layout: Layout, spec: SyntheticSpec) -> np.ndarray:
    """Render a layout to (3, H, W) float32 in [-1, 1].

    Objects draw in layout order (later objects occlude earlier ones) over a
    neutral gray background whose shade is a deterministic, shift-invariant
    function of the scene; an object with no color attribute renders in a
    default darker gray.
    """
    categories, attributes = spec.categories(), spec.attributes()
    validate_layout(layout, len(categories), len(attributes))
    side = layout.canvas.width
    img = np.full((3, side, side), _background_shade(layout), dtype=np.float32)
    for obj in layout.objects:
        names = [attributes[a] for a in obj.attributes]
        color = DEFAULT_GRAY
        scale = DEFAULT_SCALE
        for n in names:
            if n in COLOR_RGB:
                color = COLOR_RGB[n]
            elif n in SIZE_SCALE:
                scale = SIZE_SCALE[n]
        b = obj.bbox
        cx, cy = (b.x0 + b.x1) / 2.0 * side, (b.y0 + b.y1) / 2.0 * side
        hw, hh = b.width / 2.0 * side * scale, b.height / 2.0 * side * scale
        cov, (r0, c0, r1, c1) = _coverage(categories[obj.category], cx, cy, hw, hh, side)
        if cov.size == 0:
            continue
        region = img[:, r0:r1, c0:c1]
        col = np.array(color, dtype=np.float32).reshape(3, 1, 1)
        img[:, r0:r1, c0:c1] = cov * col + (1.0 - cov) * region
    return img * 2.0 - 1.0


def _overlap_fraction(a: BBox, b: BBox) -> float:
    """Intersection area over the smaller box's area."""
    iw = max(0.0, min(a.x1, b.x1) - max(a.x0, b.x0))
    ih = max(0.0, min(a.y1, b.y1) - max(a.y0, b.y0))
    inter = iw * ih
    return inter / min(a.width * a.height, b.width * b.height)


def sample_synthetic_layout(spec: SyntheticSpec, rng: np.random.Generator) -> Layout:
    categories, attributes = spec.categories(), spec.attributes()
    m = int(rng.integers(spec.objects_range[0], spec.objects_range[1] + 1))
    objects = []
    for _ in range(m):
        for _attempt in range(50):
            w = float(rng.uniform(spec.min_box_side, spec.max_box_side))
            h = float(rng.uniform(spec.min_box_side, spec.max_box_side))
            x0 = float(rng.uniform(0.0, 1.0 - w))
            y0 = float(rng.uniform(0.0, 1.0 - h))
            bbox = BBox(x0, y0, x0 + w, y0 + h)
            if all(_overlap_fraction(bbox, o.bbox) <= spec.max_overlap for o in objects):
                break
        attrs = [attributes.index(spec.colors[int(rng.integers(len(spec.colors)))])]
        if rng.random() < spec.size_attr_probability:
            attrs.append(attributes.index(spec.sizes[int(rng.integers(len(spec.sizes)))]))
        objects.append(ObjectSpec(
            category=int(rng.integers(len(spec.shapes))),
            attributes=tuple(attrs),
            bbox=bbox,
        ))
    return Layout(Canvas(spec.canvas_size, spec.canvas_size), tuple(objects))


# ---------------------------------------------------------------------------
# Dataset directory format
# ---------------------------------------------------------------------------

@dataclass
class IndexEntry:
    id: str
    image: str
    layout: str
    split: str


@dataclass
class DatasetIndex:
    root: Path
    entries: list[IndexEntry] = field(default_factory=list)

    def split(self, name: str) -> list[IndexEntry]:
        return [e for e in self.entries if e.split == name]

    def save(self) -> None:
        doc = {"v": 1, "entries": [e.__dict__ for e in self.entries]}
        (self.root / "index.json").write_text(json.dumps(doc, indent=2) + "\n",
                                              encoding="utf-8")

    @classmethod
    def load(cls, root) -> "DatasetIndex":
        root = Path(root)
        try:
            doc = json.loads((root / "index.json").read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ParseError(f"no index.json under {root}") from None
        return cls(root, [IndexEntry(**e) for e in doc["entries"]])


def generate_synthetic_dataset(spec: SyntheticSpec, n_images: int, out_dir,
                               rng: np.random.Generator | None = None,
                               val_fraction: float = 0.1) -> DatasetIndex:
    """Sample layouts, render them, and write a full dataset directory."""
    if n_images < 1:
        raise ValueError("n_images must be >= 1")
    rng = rng if rng is not None else np.random.Generator(np.random.PCG64(spec.seed))
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "layouts").mkdir(parents=True, exist_ok=True)
    categories, attributes = spec.categories(), spec.attributes()
    n_val = int(n_images * val_fraction)
    index = DatasetIndex(out)
    all_objects = []
    for i in range(n_images):
        layout = sample_synthetic_layout(spec, rng)
        image = render_synthetic(layout, spec)
        name = f"{i:06d}"
        (out / "images" / f"{name}.png").write_bytes(to_png_bytes(image))
        (out / "layouts" / f"{name}.json").write_bytes(
            serialize_layout(layout, categories, attributes))
        split = "val" if i >= n_images - n_val else "train"
        index.entries.append(IndexEntry(name, f"images/{name}.png",
                                        f"layouts/{name}.json", split))
        if split == "train":
            all_objects += [(o.category, o.attributes) for o in layout.objects]
    categories.save(out / "vocab_categories.txt")
    attributes.save(out / "vocab_attributes.txt")
    estimate_attribute_prior(all_objects).save(out / "prior.json", categories, attributes)
    index.save()
    return index


class LayoutDataset:
    """Trainer-facing view of a dataset directory: (image, Layout) pairs."""

    def __init__(self, root, split: str = "train"):
        self.root = Path(root)
        self.categories = Vocabulary.load(self.root / "vocab_categories.txt")
        self.attributes = Vocabulary.load(self.root / "vocab_attributes.txt")
        prior_path = self.root / "prior.json"
        self.prior = (AttributePrior.load(prior_path, self.categories, self.attributes)
                      if prior_path.exists() else AttributePrior())
        index = DatasetIndex.load(self.root)
        self.entries = index.split(split) if split else list(index.entries)
        self._cache: dict[int, tuple[np.ndarray, Layout]] = {}

    def __len__(self) -> int:
        return len(self.entries)

    def layout(self, i: int) -> Layout:
        data = (self.root / self.entries[i].layout).read_bytes()
        return parse_layout(data, self.categories, self.attributes)

    def __getitem__(self, i: int) -> tuple[np.ndarray, Layout]:
        if i not in self._cache:
            entry = self.entries[i]
            image = from_png_bytes((self.root / entry.image).read_bytes())
            self._cache[i] = (image, self.layout(i))
        return self._cache[i]
