"""Visual Genome annotation ingestion.

Converts user-supplied VG-style object and attribute annotation files into
the repo's dataset-directory format: per-image layout JSON files, the
178/106 vocabularies, train/val/test splits, and the attribute prior
estimated from the training split.

Expected schemas (JSON):
  objects file     [{"image_id": int, "width": int, "height": int,
                     "objects": [{"object_id": int, "names": [str, ...],
                                  "x": int, "y": int, "w": int, "h": int}]}]
  attributes file  [{"image_id": int,
                     "attributes": [{"object_id": int,
                                     "attributes": [str, ...]}]}]
  image-data file  [{"image_id": int, "width": int, "height": int}]  (optional;
                    overrides/supplies per-image dimensions)
  splits file      {"train": [image_id, ...], "val": [...], "test": [...]}

Without a splits file, images are split 92/4/4 by a hash of their id (a
warning is logged; split provenance matters when comparing counts against
published numbers).
"""
from __future__ import annotations

import hashlib
import json
import logging
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

from .data import DatasetIndex, IndexEntry
from .errors import MissingAnnotationFile, SchemaError
from .layout import (
    BBox,
    Canvas,
    Layout,
    ObjectSpec,
    Vocabulary,
    serialize_layout,
)
from .prior import estimate_attribute_prior

logger = logging.getLogger(__name__)


@dataclass
class IngestConfig:
    num_categories: int = 178
    num_attributes: int = 106
    min_objects: int = 3
    max_objects: int = 30
    max_attributes_per_object: int = 5
    min_box_pixels: int = 0      # minimum box side in source pixels (0 = off)
    canvas_size: int = 64        # canvas recorded in the emitted layouts


def _load_json(path, what: str):
    path = Path(path)
    if not path.exists():
        raise MissingAnnotationFile(f"{what} file not found: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{what} file is not valid JSON: {exc}") from exc


def _top_names(counter: Counter, k: int) -> list[str]:
    """k most frequent names; ties broken lexicographically."""
    return [name for name, _ in sorted(counter.items(), key=lambda kv: (-kv[1], kv[0]))[:k]]


def ingest_visual_genome(objects_file, attributes_file, out_dir,
                         config: IngestConfig | None = None,
                         image_data_file=None, splits_file=None):
    """Returns (DatasetIndex, categories, attributes, prior) and writes the
    dataset directory (layout JSONs reference not-yet-downloaded images)."""
    config = config or IngestConfig()
    objects_doc = _load_json(objects_file, "objects")
    attributes_doc = _load_json(attributes_file, "attributes")

    dims: dict[int, tuple[int, int]] = {}
    if image_data_file is not None:
        for entry in _load_json(image_data_file, "image-data"):
            dims[int(entry["image_id"])] = (int(entry["width"]), int(entry["height"]))

    # attribute names per object id
    attr_by_object: dict[int, list[str]] = {}
    for entry in attributes_doc:
        for obj in entry.get("attributes", []):
            names = [str(a) for a in obj.get("attributes", [])]
            if names:
                attr_by_object[int(obj["object_id"])] = names

    # frequency passes over raw annotations
    category_freq: Counter = Counter()
    attribute_freq: Counter = Counter()
    for entry in objects_doc:
        for obj in entry.get("objects", []):
            names = obj.get("names") or []
            if names:
                category_freq[str(names[0])] += 1
            for a in attr_by_object.get(int(obj.get("object_id", -1)), []):
                attribute_freq[a] += 1
    categories = Vocabulary(_top_names(category_freq, config.num_categories))
    attributes = Vocabulary(_top_names(attribute_freq, config.num_attributes))
    attr_rank = {name: i for i, name in enumerate(_top_names(attribute_freq,
                                                             len(attribute_freq)))}

    split_of: dict[int, str] = {}
    if splits_file is not None:
        split_doc = _load_json(splits_file, "splits")
        for split, ids in split_doc.items():
            if split not in ("train", "val", "test"):
                raise SchemaError(f"unknown split name {split!r}")
            for i in ids:
                split_of[int(i)] = split
    else:
        logger.warning("no splits file given; falling back to hash-based 92/4/4 split")

    def hash_split(image_id: int) -> str:
        h = int(hashlib.sha1(str(image_id).encode()).hexdigest(), 16) % 100
        return "train" if h < 92 else ("val" if h < 96 else "test")

    out = Path(out_dir)
    (out / "layouts").mkdir(parents=True, exist_ok=True)
    index = DatasetIndex(out)
    train_objects = []
    for entry in objects_doc:
        try:
            image_id = int(entry["image_id"])
            width, height = dims.get(image_id) or (int(entry["width"]), int(entry["height"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"objects entry missing image_id/width/height: {exc!r}") from exc
        if splits_file is not None and image_id not in split_of:
            continue
        specs = []
        for obj in entry.get("objects", []):
            names = obj.get("names") or []
            if not names or str(names[0]) not in categories:
                continue
            try:
                x, y, w, h = (float(obj["x"]), float(obj["y"]),
                              float(obj["w"]), float(obj["h"]))
            except (KeyError, TypeError, ValueError) as exc:
                raise SchemaError(f"object in image {image_id} has bad box: {exc!r}") from exc
            if w <= 0 or h <= 0 or min(w, h) < config.min_box_pixels:
                continue
            x0, y0 = max(x, 0.0) / width, max(y, 0.0) / height
            x1, y1 = min(x + w, width) / width, min(y + h, height) / height
            if not (x0 < x1 and y0 < y1):
                continue
            attr_names = [a for a in attr_by_object.get(int(obj.get("object_id", -1)), [])
                          if a in attributes]
            # keep the globally most frequent when over the per-object cap
            attr_names = sorted(set(attr_names), key=lambda a: attr_rank[a])
            attr_names = attr_names[:config.max_attributes_per_object]
            specs.append(ObjectSpec(
                category=categories.index(str(names[0])),
                attributes=tuple(attributes.index(a) for a in attr_names),
                bbox=BBox(x0, y0, x1, y1),
            ))
        if not config.min_objects <= len(specs) <= config.max_objects:
            continue
        layout = Layout(Canvas(config.canvas_size, config.canvas_size), tuple(specs))
        split = split_of.get(image_id) if splits_file is not None else hash_split(image_id)
        name = str(image_id)
        (out / "layouts" / f"{name}.json").write_bytes(
            serialize_layout(layout, categories, attributes))
        index.entries.append(IndexEntry(name, f"images/{name}.jpg",
                                        f"layouts/{name}.json", split))
        if split == "train":
            train_objects += [(o.category, o.attributes) for o in layout.objects]

    categories.save(out / "vocab_categories.txt")
    attributes.save(out / "vocab_attributes.txt")
    prior = estimate_attribute_prior(train_objects)
    prior.save(out / "prior.json", categories, attributes)
    index.save()
    return index, categories, attributes, prior
