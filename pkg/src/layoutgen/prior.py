"""Per-category attribute co-occurrence counts.

The prior drives inference-time attribute sampling and the training-time
attribute resampling that disentangles attribute information from the
category and appearance codes.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable

import numpy as np

from .layout import Vocabulary


class AttributePrior:
    """counts[category_index][attribute_index] -> nonnegative int.

    Categories absent from the map behave as all-zero.
    """

    def __init__(self, counts: dict[int, dict[int, int]] | None = None):
        self.counts: dict[int, dict[int, int]] = {}
        for c, attrs in (counts or {}).items():
            for a, n in attrs.items():
                if n < 0:
                    raise ValueError(f"negative count for ({c}, {a})")
                if n > 0:
                    self.counts.setdefault(int(c), {})[int(a)] = int(n)

    def category_counts(self, category: int) -> dict[int, int]:
        return dict(self.counts.get(category, {}))

    def attribute_totals(self, num_attributes: int) -> np.ndarray:
        """Total count per attribute across all categories."""
        totals = np.zeros(num_attributes, dtype=np.int64)
        for attrs in self.counts.values():
            for a, n in attrs.items():
                totals[a] += n
        return totals

    def __eq__(self, other) -> bool:
        return isinstance(other, AttributePrior) and self.counts == other.counts

    # -- file format: JSON map category-name -> {attribute-name: count} -----

    def save(self, path, categories: Vocabulary, attributes: Vocabulary) -> None:
        doc = {
            categories[c]: {attributes[a]: n for a, n in sorted(attrs.items())}
            for c, attrs in sorted(self.counts.items())
        }
        Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path, categories: Vocabulary, attributes: Vocabulary) -> "AttributePrior":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        counts: dict[int, dict[int, int]] = {}
        for cname, attrs in doc.items():
            c = categories.index(cname)
            counts[c] = {attributes.index(a): int(n) for a, n in attrs.items()}
        return cls(counts)


def estimate_attribute_prior(dataset: Iterable[tuple[int, Iterable[int]]]) -> AttributePrior:
    """Count (category, attribute) co-occurrences over an object stream."""
    prior = AttributePrior()
    for category, attributes in dataset:
        for a in attributes:
            cat = prior.counts.setdefault(int(category), {})
            cat[int(a)] = cat.get(int(a), 0) + 1
    return prior


def sample_attributes(prior: AttributePrior, category: int, n: int,
                      rng: np.random.Generator) -> tuple[int, ...]:
    """Draw up to n distinct attributes without replacement, each draw
    proportional to the remaining counts.  Returns fewer than n if the
    category has fewer distinct attributes with nonzero count.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    remaining = {a: c for a, c in prior.category_counts(category).items() if c > 0}
    picked: list[int] = []
    while len(picked) < n and remaining:
        attrs = sorted(remaining)
        weights = np.array([remaining[a] for a in attrs], dtype=np.float64)
        choice = attrs[int(rng.choice(len(attrs), p=weights / weights.sum()))]
        picked.append(choice)
        del remaining[choice]
    return tuple(sorted(picked))
