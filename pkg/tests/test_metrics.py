import math

import numpy as np
import pytest
import torch

from layoutgen.discriminator import ObjectNetwork
from layoutgen.errors import EmptyInput
from layoutgen.layout import ShiftSpec
from layoutgen.metrics import (
    TrunkFeatureExtractor,
    attribute_recall_precision,
    consistency_score,
    diversity_score,
    frechet_distance,
    load_feature_dump,
    masked_perceptual_distance,
    object_accuracy,
    perceptual_distance,
    save_feature_dump,
)

from conftest import make_layout


def identity_fx(images):
    """Synthetic one-layer extractor: the image itself is the feature grid."""
    return [images]


@pytest.fixture
def trunk_fx(desk_cfg):
    return TrunkFeatureExtractor.from_object_network(ObjectNetwork(desk_cfg))


# ---------------------------------------------------------------------------
# perceptual distance
# ---------------------------------------------------------------------------

def test_pd_zero_on_identical(trunk_fx):
    img = torch.rand(3, 16, 16) * 2 - 1
    assert perceptual_distance(img, img, trunk_fx) == 0.0


def test_pd_symmetric(trunk_fx):
    a = torch.rand(3, 16, 16) * 2 - 1
    b = torch.rand(3, 16, 16) * 2 - 1
    assert perceptual_distance(a, b, trunk_fx) == pytest.approx(
        perceptual_distance(b, a, trunk_fx), abs=1e-9)


def test_pd_nonnegative(trunk_fx):
    for seed in range(5):
        g = torch.Generator().manual_seed(seed)
        a = torch.rand(3, 16, 16, generator=g)
        b = torch.rand(3, 16, 16, generator=g)
        assert perceptual_distance(a, b, trunk_fx) >= 0.0


def test_pd_hand_case_one_layer_two_cells_two_channels():
    # features: 2 channels x 1 x 2 cells; unit-normalize per cell, squared L2,
    # mean over the 2 cells, single layer
    a = torch.tensor([[[3.0, 0.0]], [[4.0, 2.0]]])   # cells (3,4) and (0,2)
    b = torch.tensor([[[1.0, 1.0]], [[0.0, 1.0]]])   # cells (1,0) and (1,1)
    got = perceptual_distance(a, b, identity_fx)

    def norm(v):
        n = math.sqrt(sum(x * x for x in v)) + 1e-10
        return [x / n for x in v]

    cells_a = [[3.0, 4.0], [0.0, 2.0]]
    cells_b = [[1.0, 0.0], [1.0, 1.0]]
    total = 0.0
    for va, vb in zip(cells_a, cells_b):
        na, nb = norm(va), norm(vb)
        total += sum((x - y) ** 2 for x, y in zip(na, nb))
    assert got == pytest.approx(total / 2.0, abs=1e-7)


def test_pd_shape_mismatch(trunk_fx):
    with pytest.raises(ValueError):
        perceptual_distance(torch.rand(3, 16, 16), torch.rand(3, 8, 8), trunk_fx)


def test_masked_pd_excludes_cells():
    a = torch.zeros(2, 1, 4)
    b = torch.zeros(2, 1, 4)
    b[:, 0, 0] = 1.0  # only cell 0 differs
    mask = torch.ones(1, 4)
    full = masked_perceptual_distance(a, b, identity_fx, mask)
    mask[0, 0] = 0.0
    without = masked_perceptual_distance(a, b, identity_fx, mask)
    assert full > 0.0
    assert without == 0.0


def test_masked_pd_empty_mask_raises():
    a = torch.zeros(2, 1, 4)
    with pytest.raises(ValueError):
        masked_perceptual_distance(a, a, identity_fx, torch.zeros(1, 4))


# ---------------------------------------------------------------------------
# diversity
# ---------------------------------------------------------------------------

def test_diversity_identical_sets(trunk_fx):
    imgs = [torch.rand(3, 16, 16) for _ in range(3)]
    mean, std = diversity_score(imgs, list(imgs), trunk_fx)
    assert mean == 0.0 and std == 0.0


def test_diversity_two_image_hand_case():
    a = [torch.tensor([[[3.0, 0.0]], [[4.0, 2.0]]])]
    b = [torch.tensor([[[1.0, 1.0]], [[0.0, 1.0]]])]
    mean, std = diversity_score(a, b, identity_fx)
    assert mean == pytest.approx(perceptual_distance(a[0], b[0], identity_fx), abs=1e-12)
    assert std == 0.0


def test_diversity_length_mismatch(trunk_fx):
    with pytest.raises(ValueError):
        diversity_score([torch.rand(3, 16, 16)], [], trunk_fx)


# ---------------------------------------------------------------------------
# consistency
# ---------------------------------------------------------------------------

def test_consistency_zero_shift_exactly_one(trunk_fx, desk_cfg):
    layout = make_layout([(0.1, 0.1, 0.45, 0.5), (0.55, 0.3, 0.9, 0.7)],
                         canvas=desk_cfg.canvas_size)
    img = torch.rand(3, 32, 32) * 2 - 1
    bg, fg = consistency_score(img, img.clone(), layout, ShiftSpec((0.0, 0.0)),
                               trunk_fx, object_size=16)
    assert bg == 1.0 and fg == 1.0


def test_consistency_noise_below_same_image(trunk_fx, desk_cfg):
    layout = make_layout([(0.1, 0.1, 0.45, 0.5)], canvas=desk_cfg.canvas_size)
    zero = ShiftSpec((0.0,))
    g = torch.Generator().manual_seed(0)
    a = torch.rand(3, 32, 32, generator=g) * 2 - 1
    b = torch.rand(3, 32, 32, generator=g) * 2 - 1
    bg, fg = consistency_score(a, b, layout, zero, trunk_fx, object_size=16)
    same_bg, same_fg = consistency_score(a, a.clone(), layout, zero, trunk_fx,
                                         object_size=16)
    assert (same_bg, same_fg) == (1.0, 1.0)
    assert bg < same_bg and fg < same_fg
    assert 0.0 <= bg <= 1.0 and 0.0 <= fg <= 1.0


# ---------------------------------------------------------------------------
# attribute / object scores
# ---------------------------------------------------------------------------

class FixedLogits:
    def __init__(self, logits):
        self.logits = torch.as_tensor(logits, dtype=torch.float32)

    def __call__(self, crops):
        return self.logits


def test_attr_scores_oracle_classifier():
    gt = [(0,), (1, 2)]
    logits = torch.full((2, 4), -10.0)
    logits[0, 0] = 10.0
    logits[1, 1] = 10.0
    logits[1, 2] = 10.0
    crops = torch.zeros(2, 3, 4, 4)
    recall, precision = attribute_recall_precision(crops, gt, FixedLogits(logits))
    assert (recall, precision) == (1.0, 1.0)


def test_attr_scores_nothing_predicted():
    crops = torch.zeros(2, 3, 4, 4)
    recall, precision = attribute_recall_precision(
        crops, [(0,), (1,)], FixedLogits(torch.full((2, 4), -10.0)))
    assert (recall, precision) == (0.0, 0.0)


def test_attr_scores_hand_case():
    # GT {a}, {b}; predicted {a,b}, {} -> recall 1/2, precision 1/2
    logits = torch.full((2, 3), -10.0)
    logits[0, 0] = 10.0
    logits[0, 1] = 10.0
    crops = torch.zeros(2, 3, 4, 4)
    recall, precision = attribute_recall_precision(crops, [(0,), (1,)],
                                                   FixedLogits(logits))
    assert recall == pytest.approx(0.5)
    assert precision == pytest.approx(0.5)


def test_object_accuracy_perfect_and_empty():
    logits = torch.eye(4) * 10.0
    crops = torch.zeros(4, 3, 4, 4)
    assert object_accuracy(crops, [0, 1, 2, 3], FixedLogits(logits)) == 1.0
    assert object_accuracy(crops, [1, 1, 2, 3], FixedLogits(logits)) == 0.75
    with pytest.raises(EmptyInput):
        object_accuracy(torch.zeros(0, 3, 4, 4), [], FixedLogits(logits))


def test_object_accuracy_random_labels_near_chance():
    rng = np.random.default_rng(0)
    n, c = 4000, 5
    logits = torch.tensor(rng.normal(size=(n, c)), dtype=torch.float32)
    labels = rng.integers(0, c, size=n)
    acc = object_accuracy(torch.zeros(n, 3, 2, 2), labels, FixedLogits(logits))
    assert acc == pytest.approx(1.0 / c, abs=0.03)


# ---------------------------------------------------------------------------
# Frechet distance
# ---------------------------------------------------------------------------

def _whiten(x):
    x = x - x.mean(axis=0)
    cov = np.cov(x, rowvar=False)
    vals, vecs = np.linalg.eigh(cov)
    return x @ vecs @ np.diag(1.0 / np.sqrt(vals)) @ vecs.T


def test_frechet_identical_sets():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(64, 6))
    assert frechet_distance(a, a.copy()) == pytest.approx(0.0, abs=1e-6)


def test_frechet_closed_form_mean_offset():
    rng = np.random.default_rng(2)
    d = 1.7
    a = _whiten(rng.normal(size=(200, 5)))
    b = _whiten(rng.normal(size=(200, 5)))
    b[:, 0] += d
    assert frechet_distance(a, b) == pytest.approx(d * d, abs=1e-4)


def oracle_frechet_eigh(a, b):
    """Symmetric-eigendecomposition route (independent of scipy.sqrtm)."""
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    ca, cb = np.cov(a, rowvar=False), np.cov(b, rowvar=False)

    def sqrtm_sym(m):
        vals, vecs = np.linalg.eigh((m + m.T) / 2)
        vals = np.clip(vals, 0.0, None)
        return vecs @ np.diag(np.sqrt(vals)) @ vecs.T

    a_half = sqrtm_sym(ca)
    inner = sqrtm_sym(a_half @ cb @ a_half)
    diff = mu_a - mu_b
    return float(diff @ diff + np.trace(ca) + np.trace(cb) - 2 * np.trace(inner))


@pytest.mark.parametrize("seed", range(4))
def test_frechet_matches_eigendecomposition_oracle(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(60, 4)) @ rng.normal(size=(4, 4)) + rng.normal(size=4)
    b = rng.normal(size=(50, 4)) @ rng.normal(size=(4, 4)) + rng.normal(size=4)
    assert frechet_distance(a, b) == pytest.approx(oracle_frechet_eigh(a, b), abs=1e-5)


def test_frechet_rotation_invariance():
    rng = np.random.default_rng(5)
    a = rng.normal(size=(80, 5))
    b = rng.normal(size=(70, 5)) + 0.5
    q, _ = np.linalg.qr(rng.normal(size=(5, 5)))
    assert frechet_distance(a @ q, b @ q) == pytest.approx(frechet_distance(a, b), abs=1e-5)


def test_frechet_input_validation():
    with pytest.raises(ValueError):
        frechet_distance(np.zeros((1, 3)), np.zeros((5, 3)))
    with pytest.raises(ValueError):
        frechet_distance(np.zeros((5, 3)), np.zeros((5, 4)))


# ---------------------------------------------------------------------------
# feature-file adapter
# ---------------------------------------------------------------------------

def test_feature_dump_round_trip(tmp_path):
    rng = np.random.default_rng(7)
    layers = {"conv1": rng.normal(size=(4, 8)).astype(np.float32),
              "conv2": rng.normal(size=(4, 3, 2, 2)).astype(np.float64)}
    base = tmp_path / "feats"
    save_feature_dump(base, layers)
    loaded = load_feature_dump(base)
    assert set(loaded) == {"conv1", "conv2"}
    for k in layers:
        assert loaded[k].dtype == layers[k].dtype
        assert np.array_equal(loaded[k], layers[k])
