"""Layout data model: canvas, boxes, attributed objects, shifting, rasterization.

A layout is the generator's conditioning input: a square canvas plus an
ordered list of (category, attribute set, bounding box) object specs.
Coordinates are normalized to [0, 1] with (x0, y0) the top-left and
(x1, y1) the bottom-right corner.  Object order is preserved verbatim
everywhere: the fuser consumes objects sequentially and is order-sensitive.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    EmptyLayout,
    InvalidBBox,
    ParseError,
    ShiftOutOfCanvas,
    TooManyAttributes,
    TooManyObjects,
    UnknownIndex,
)

MAX_ATTRIBUTES_PER_OBJECT = 5
MAX_OBJECTS_PER_LAYOUT = 30


class Vocabulary:
    """Ordered list of unique names; index = position."""

    def __init__(self, names: Sequence[str]):
        names = tuple(str(n) for n in names)
        if len(set(names)) != len(names):
            raise ValueError("vocabulary names must be unique")
        self.names = names
        self._index = {n: i for i, n in enumerate(names)}

    def __len__(self) -> int:
        return len(self.names)

    def __getitem__(self, index: int) -> str:
        return self.names[index]

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.names == other.names

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise UnknownIndex(f"unknown vocabulary name: {name!r}") from None

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls([ln for ln in lines if ln != ""])

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.names) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class Canvas:
    width: int
    height: int

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise InvalidBBox(f"canvas sides must be positive, got {self.width}x{self.height}")
        if self.width != self.height:
            raise InvalidBBox(f"canvas must be square, got {self.width}x{self.height}")


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in normalized [0, 1] coordinates."""

    x0: float
    y0: float
    x1: float
    y1: float

    def validate(self) -> None:
        ok = 0.0 <= self.x0 < self.x1 <= 1.0 and 0.0 <= self.y0 < self.y1 <= 1.0
        if not ok or not all(math.isfinite(v) for v in (self.x0, self.y0, self.x1, self.y1)):
            raise InvalidBBox(f"bad bbox ({self.x0}, {self.y0}, {self.x1}, {self.y1})")

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x0, self.y0, self.x1, self.y1)


@dataclass(frozen=True)
class ObjectSpec:
    category: int
    attributes: tuple[int, ...]
    bbox: BBox

    def __post_init__(self):
        # canonical attribute order: ascending indices
        object.__setattr__(self, "attributes", tuple(sorted(self.attributes)))


@dataclass(frozen=True)
class Layout:
    canvas: Canvas
    objects: tuple[ObjectSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))

    @property
    def m(self) -> int:
        return len(self.objects)


@dataclass(frozen=True)
class ShiftSpec:
    """Per-object horizontal offsets in normalized units.

    Vertical offsets are intentionally not representable.
    """

    dx: tuple[float, ...]
    policy: str = "clamp"  # clamp | reject

    def __post_init__(self):
        object.__setattr__(self, "dx", tuple(float(v) for v in self.dx))
        if self.policy not in ("clamp", "reject"):
            raise ValueError(f"unknown shift policy {self.policy!r}")
        if any(abs(v) > 1.0 for v in self.dx):
            raise ValueError("shift magnitudes must be <= 1")

    def __len__(self) -> int:
        return len(self.dx)


def validate_layout(layout: Layout, num_categories: int | None = None,
                    num_attributes: int | None = None) -> None:
    """Raise unless every layout invariant holds.

    Vocabulary sizes are optional; when omitted only non-negativity of the
    indices is enforced.
    """
    if layout.m == 0:
        raise EmptyLayout("layout has no objects")
    if layout.m > MAX_OBJECTS_PER_LAYOUT:
        raise TooManyObjects(f"{layout.m} objects exceeds limit {MAX_OBJECTS_PER_LAYOUT}")
    for i, obj in enumerate(layout.objects):
        obj.bbox.validate()
        if len(obj.attributes) > MAX_ATTRIBUTES_PER_OBJECT:
            raise TooManyAttributes(
                f"object {i} has {len(obj.attributes)} attributes (max {MAX_ATTRIBUTES_PER_OBJECT})")
        if len(set(obj.attributes)) != len(obj.attributes):
            raise UnknownIndex(f"object {i} has duplicate attribute indices")
        if obj.category < 0 or (num_categories is not None and obj.category >= num_categories):
            raise UnknownIndex(f"object {i} category index {obj.category} out of range")
        for a in obj.attributes:
            if a < 0 or (num_attributes is not None and a >= num_attributes):
                raise UnknownIndex(f"object {i} attribute index {a} out of range")


def shift_layout(layout: Layout, shifts: ShiftSpec) -> Layout:
    """Translate every bbox horizontally by its dx; y coordinates untouched.

    Under the clamp policy a box that would exit the canvas is slid back so
    it touches the edge, preserving its width.  Under reject it raises.
    """
    if len(shifts) != layout.m:
        raise ValueError(f"got {len(shifts)} shifts for {layout.m} objects")
    shifted = []
    for obj, dx in zip(layout.objects, shifts.dx):
        b = obj.bbox
        if shifts.policy == "reject":
            if b.x0 + dx < 0.0 or b.x1 + dx > 1.0:
                raise ShiftOutOfCanvas(
                    f"dx={dx} moves box ({b.x0}, {b.x1}) outside the canvas")
            eff = dx
        else:
            eff = min(max(dx, -b.x0), 1.0 - b.x1)
        shifted.append(replace(obj, bbox=BBox(b.x0 + eff, b.y0, b.x1 + eff, b.y1)))
    return Layout(layout.canvas, tuple(shifted))


def sample_shifts(layout: Layout, max_magnitude: float, rng: np.random.Generator,
                  policy: str = "clamp") -> ShiftSpec:
    """Draw i.i.d. uniform per-object offsets on [-max_magnitude, +max_magnitude]."""
    if not 0.0 <= max_magnitude <= 1.0:
        raise ValueError(f"max_magnitude must be in [0, 1], got {max_magnitude}")
    if max_magnitude == 0.0:
        return ShiftSpec((0.0,) * layout.m, policy)
    dx = rng.uniform(-max_magnitude, max_magnitude, size=layout.m)
    return ShiftSpec(tuple(float(v) for v in dx), policy)


def bbox_to_grid(bbox: BBox, grid_size: int) -> tuple[int, int, int, int]:
    """Rasterize a normalized box onto an S x S cell grid.

    Returns (row0, col0, row1, col1), inclusive-exclusive.  floor/ceil so a
    valid box always owns at least one cell even on coarse grids.
    """
    if grid_size < 1:
        raise ValueError("grid_size must be >= 1")
    s = grid_size
    row0 = min(max(int(math.floor(bbox.y0 * s)), 0), s - 1)
    col0 = min(max(int(math.floor(bbox.x0 * s)), 0), s - 1)
    row1 = min(max(int(math.ceil(bbox.y1 * s)), row0 + 1), s)
    col1 = min(max(int(math.ceil(bbox.x1 * s)), col0 + 1), s)
    return (row0, col0, row1, col1)


# ---------------------------------------------------------------------------
# Layout file format (UTF-8 JSON, names resolved against vocabularies)
# ---------------------------------------------------------------------------

def layout_to_dict(layout: Layout, categories: Vocabulary, attributes: Vocabulary) -> dict:
    return {
        "canvas": {"width": layout.canvas.width, "height": layout.canvas.height},
        "objects": [
            {
                "category": categories[o.category],
                "attributes": [attributes[a] for a in o.attributes],
                "bbox": list(o.bbox.as_tuple()),
            }
            for o in layout.objects
        ],
    }


def layout_from_dict(doc: dict, categories: Vocabulary, attributes: Vocabulary) -> Layout:
    try:
        canvas = Canvas(int(doc["canvas"]["width"]), int(doc["canvas"]["height"]))
        objects = []
        for i, entry in enumerate(doc["objects"]):
            coords = entry["bbox"]
            if len(coords) != 4:
                raise ParseError(f"object {i}: bbox must have 4 coordinates")
            bbox = BBox(*(float(c) for c in coords))
            objects.append(ObjectSpec(
                category=categories.index(entry["category"]),
                attributes=tuple(attributes.index(a) for a in entry.get("attributes", [])),
                bbox=bbox,
            ))
    except (KeyError, TypeError) as exc:
        raise ParseError(f"malformed layout document: {exc!r}") from exc
    layout = Layout(canvas, tuple(objects))
    validate_layout(layout, len(categories), len(attributes))
    return layout


def parse_layout(data: bytes | str, categories: Vocabulary, attributes: Vocabulary) -> Layout:
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    return layout_from_dict(doc, categories, attributes)


def serialize_layout(layout: Layout, categories: Vocabulary, attributes: Vocabulary) -> bytes:
    """Canonical byte serialization; parse(serialize(x)) == x and
    serialize(parse(b)) == b for canonical b."""
    validate_layout(layout, len(categories), len(attributes))
    doc = layout_to_dict(layout, categories, attributes)
    return (json.dumps(doc, indent=2, sort_keys=False) + "\n").encode("utf-8")
