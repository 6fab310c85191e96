import numpy as np
import pytest
import torch

from layoutgen.config import model_preset
from layoutgen.layout import BBox, Canvas, Layout, ObjectSpec


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(1234))


@pytest.fixture
def mini_cfg():
    return model_preset("mini")


@pytest.fixture
def desk_cfg():
    return model_preset("desk")


def make_layout(boxes, categories=None, attributes=None, canvas=64):
    categories = categories or [0] * len(boxes)
    attributes = attributes or [()] * len(boxes)
    objects = tuple(
        ObjectSpec(category=c, attributes=tuple(a), bbox=BBox(*b))
        for b, c, a in zip(boxes, categories, attributes)
    )
    return Layout(Canvas(canvas, canvas), objects)


@pytest.fixture
def two_object_layout():
    return make_layout([(0.1, 0.1, 0.4, 0.4), (0.5, 0.2, 0.9, 0.8)],
                       categories=[0, 1], attributes=[(0,), (1, 2)])


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)
