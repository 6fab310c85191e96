import json

import numpy as np
import pytest
import torch

from layoutgen.config import model_preset, training_preset
from layoutgen.data import SyntheticSpec, generate_synthetic_dataset, LayoutDataset
from layoutgen.errors import NonFiniteLoss
from layoutgen.generator import LayoutBatch
from layoutgen.losses import LossWeights, generator_total
from layoutgen.prior import AttributePrior
from layoutgen.training import (
    _batch_tensors,
    build_triple,
    disentangle_attributes,
    generator_loss_parts,
    init_trainer,
    load_checkpoint,
    load_eval_classifier,
    save_checkpoint,
    save_eval_classifier,
    train_eval_classifier,
    train_loop,
    train_step,
)

# synthetic spec matching the mini model's 3 categories / 4 attributes
MINI_SPEC = SyntheticSpec(colors=("red", "green", "blue"), sizes=("small",),
                          canvas_size=8, objects_range=(1, 2), seed=3)


def mini_training_config(**overrides):
    base = dict(model=model_preset("mini"), batch_size=2, learning_rate=1e-3,
                iterations=4, checkpoint_every=2, shift_magnitude=0.2, seed=11)
    base.update(overrides)
    return training_preset("desk", **base)


@pytest.fixture(scope="module")
def mini_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("mini_data")
    generate_synthetic_dataset(MINI_SPEC, 10, root, val_fraction=0.2)
    return LayoutDataset(root, split="train")


# ---------------------------------------------------------------------------
# attribute disentanglement
# ---------------------------------------------------------------------------

def test_disentangle_p_zero_is_identity(rng):
    prior = AttributePrior({0: {0: 5, 1: 2}})
    objs = [(0, (0,)), (0, (1,)), (0, ())]
    assert disentangle_attributes(objs, prior, 0.0, rng) == objs


def test_disentangle_p_one_resamples_all(rng):
    prior = AttributePrior({0: {2: 100}})
    objs = [(0, (0,))] * 20
    out = disentangle_attributes(objs, prior, 1.0, rng)
    assert all(attrs == (2,) for _, attrs in out)


def test_disentangle_preserves_count(rng):
    prior = AttributePrior({0: {1: 4, 2: 4, 3: 4}})
    out = disentangle_attributes([(0, (0, 1))] * 10, prior, 1.0, rng)
    assert all(len(attrs) == 2 for _, attrs in out)


def test_disentangle_replacement_fraction():
    prior = AttributePrior({0: {1: 1}})
    rng = np.random.Generator(np.random.PCG64(0))
    objs = [(0, (0,))] * 10_000
    out = disentangle_attributes(objs, prior, 0.5, rng)
    replaced = sum(attrs != (0,) for _, attrs in out) / len(out)
    assert replaced == pytest.approx(0.5, abs=0.02)


# ---------------------------------------------------------------------------
# triple construction
# ---------------------------------------------------------------------------

def test_triple_shares_latents_between_paths(mini_dataset):
    config = mini_training_config()
    state = init_trainer(config, mini_dataset.prior)
    triple = build_triple(mini_dataset[0], config, state.rngs, mini_dataset.prior)
    tensors = _batch_tensors([triple], config.model)
    real, rand, shifted, images, z, eps, index = tensors
    # sets 2 and 3 consume the same code tensor by construction
    assert z is _batch_tensors([triple], config.model)[4] or torch.equal(
        z, _batch_tensors([triple], config.model)[4])
    assert triple.z.shape == (triple.layout.m, config.model.latent_dim)


def test_triple_shift_only_changes_x(mini_dataset):
    config = mini_training_config()
    state = init_trainer(config, mini_dataset.prior)
    triple = build_triple(mini_dataset[0], config, state.rngs, mini_dataset.prior)
    for a, b in zip(triple.layout.objects, triple.shifted_layout.objects):
        assert a.category == b.category and a.attributes == b.attributes
        assert (a.bbox.y0, a.bbox.y1) == (b.bbox.y0, b.bbox.y1)


def test_triple_zero_shift_magnitude(mini_dataset):
    config = mini_training_config(shift_magnitude=0.0)
    state = init_trainer(config, mini_dataset.prior)
    triple = build_triple(mini_dataset[0], config, state.rngs, mini_dataset.prior)
    assert triple.shifted_layout == triple.layout


def test_resampling_never_touches_reconstruction_path(mini_dataset):
    """Even at p_replace=1 the reconstruction path keeps GT attributes; only
    the free-generation/shifted paths see the resampled sets."""
    config = mini_training_config(p_replace=1.0)
    state = init_trainer(config, mini_dataset.prior)
    image, layout = mini_dataset[0]
    triple = build_triple((image, layout), config, state.rngs, mini_dataset.prior)
    real, rand, shifted, *_ = _batch_tensors([triple], config.model)
    gt = LayoutBatch.from_layouts([layout], config.model.num_attributes)
    assert torch.equal(real.attributes, gt.attributes)
    assert [tuple(a) for a in triple.attrs_sampled] == [
        tuple(torch.nonzero(row).flatten().tolist()) for row in rand.attributes]
    assert torch.equal(rand.attributes, shifted.attributes)


# ---------------------------------------------------------------------------
# train_step
# ---------------------------------------------------------------------------

def run_steps(config, dataset, n):
    state = init_trainer(config, dataset.prior)
    reports = []
    for _ in range(n):
        idx = state.rngs["data"].integers(0, len(dataset), size=config.batch_size)
        triples = [build_triple(dataset[int(i)], config, state.rngs, dataset.prior)
                   for i in idx]
        reports.append(train_step(triples, state))
    return state, reports


def test_train_step_deterministic(mini_dataset):
    config = mini_training_config()
    _, a = run_steps(config, mini_dataset, 3)
    _, b = run_steps(config, mini_dataset, 3)
    for ra, rb in zip(a, b):
        assert ra.to_dict() == rb.to_dict()  # bit-identical floats


def test_train_step_losses_finite_and_totals_consistent(mini_dataset):
    config = mini_training_config()
    _, reports = run_steps(config, mini_dataset, 2)
    for r in reports:
        d = r.to_dict()
        assert all(np.isfinite(v) for v in d.values())
        parts = {k: d[k] for k in ("adv_img", "adv_obj", "obj_cls", "attr_cls",
                                   "kl", "img_recon", "latent_recon")}
        assert r.loss_g == pytest.approx(generator_total(parts, config.weights),
                                         rel=1e-6)


def test_phase_order_d_before_g(mini_dataset, monkeypatch):
    config = mini_training_config()
    state = init_trainer(config, mini_dataset.prior)
    order = []
    orig_d, orig_g = state.opt_d.step, state.opt_g.step
    monkeypatch.setattr(state.opt_d, "step", lambda *a, **k: (order.append("d"), orig_d()))
    monkeypatch.setattr(state.opt_g, "step", lambda *a, **k: (order.append("g"), orig_g()))
    idx = state.rngs["data"].integers(0, len(mini_dataset), size=config.batch_size)
    triples = [build_triple(mini_dataset[int(i)], config, state.rngs, mini_dataset.prior)
               for i in idx]
    train_step(triples, state)
    assert order == ["d", "g"]
    assert state.d_updates == state.g_updates == 1


def test_generator_grads_ignore_zeroed_recon_terms(mini_dataset):
    """With kl/img/latent weights at 0, the generator gradient equals the
    gradient of the remaining four weighted parts."""
    config = mini_training_config()
    state = init_trainer(config, mini_dataset.prior)
    idx = state.rngs["data"].integers(0, len(mini_dataset), size=2)
    triples = [build_triple(mini_dataset[int(i)], config, state.rngs, mini_dataset.prior)
               for i in idx]
    tensors = _batch_tensors(triples, config.model)
    params = state.bundle.g_parameters()
    zeroed = LossWeights(kl=0.0, img_recon=0.0, latent_recon=0.0)

    def grads_of(total_fn):
        for p in params:
            p.grad = None
        parts = generator_loss_parts(state.bundle, tensors, state.attr_weights,
                                     config.model)
        total_fn(parts).backward()
        return [p.grad.clone() if p.grad is not None else torch.zeros_like(p)
                for p in params]

    state.bundle.train()
    torch.manual_seed(0)
    full = grads_of(lambda parts: generator_total(parts, zeroed))
    torch.manual_seed(0)
    partial = grads_of(lambda parts: (
        zeroed.adv_img * parts["adv_img"] + zeroed.adv_obj * parts["adv_obj"]
        + zeroed.obj_cls * parts["obj_cls"] + zeroed.attr_cls * parts["attr_cls"]))
    for a, b in zip(full, partial):
        assert torch.allclose(a, b, atol=1e-9)


def test_non_finite_loss_names_term(mini_dataset):
    config = mini_training_config()
    state = init_trainer(config, mini_dataset.prior)
    with torch.no_grad():
        state.bundle.generator.decoder.to_rgb.weight.fill_(float("nan"))
    idx = state.rngs["data"].integers(0, len(mini_dataset), size=2)
    triples = [build_triple(mini_dataset[int(i)], config, state.rngs, mini_dataset.prior)
               for i in idx]
    with pytest.raises(NonFiniteLoss) as exc:
        train_step(triples, state)
    assert exc.value.term


# ---------------------------------------------------------------------------
# loop, logging, resume
# ---------------------------------------------------------------------------

def read_jsonl(path):
    return [json.loads(line) for line in path.read_text().splitlines()]


def test_train_loop_logs_and_checkpoints(mini_dataset, tmp_path):
    config = mini_training_config(iterations=4, checkpoint_every=2)
    ckpts = train_loop(config, mini_dataset, tmp_path)
    lines = read_jsonl(tmp_path / "metrics.jsonl")
    assert len(lines) == 4
    required = {"adv_img", "adv_obj", "obj_cls", "attr_cls", "kl", "img_recon",
                "latent_recon", "loss_g", "loss_d"}
    for line in lines:
        assert required <= set(line)
    assert len(ckpts) == 2  # iterations 2 and 4


def test_train_loop_seed_reproducibility(mini_dataset, tmp_path):
    config = mini_training_config(iterations=4)
    train_loop(config, mini_dataset, tmp_path / "a")
    train_loop(config, mini_dataset, tmp_path / "b")
    assert ((tmp_path / "a" / "metrics.jsonl").read_bytes()
            == (tmp_path / "b" / "metrics.jsonl").read_bytes())


def test_resume_matches_uninterrupted(mini_dataset, tmp_path):
    config = mini_training_config(iterations=6, checkpoint_every=3)
    train_loop(config, mini_dataset, tmp_path / "full")
    full = read_jsonl(tmp_path / "full" / "metrics.jsonl")

    half = mini_training_config(iterations=3, checkpoint_every=3)
    train_loop(half, mini_dataset, tmp_path / "part")
    resumed_cfg = mini_training_config(iterations=6, checkpoint_every=3)
    train_loop(resumed_cfg, mini_dataset, tmp_path / "part",
               resume=tmp_path / "part" / "ckpt_0000003.zip")
    part = read_jsonl(tmp_path / "part" / "metrics.jsonl")
    assert part == full  # bitwise-identical float sequences


def test_checkpoint_state_round_trip(mini_dataset, tmp_path):
    config = mini_training_config(iterations=2)
    state, _ = run_steps(config, mini_dataset, 2)
    path = tmp_path / "ckpt.zip"
    save_checkpoint(path, state)
    loaded = load_checkpoint(path)
    assert loaded.iteration == state.iteration
    for k, v in state.bundle.state_dict().items():
        assert torch.equal(loaded.bundle.state_dict()[k], v), k
    # Adam moments restored exactly
    sd_a = state.opt_g.state_dict()["state"]
    sd_b = loaded.opt_g.state_dict()["state"]
    assert sd_a.keys() == sd_b.keys()
    for k in sd_a:
        for field in sd_a[k]:
            assert torch.equal(torch.as_tensor(sd_a[k][field]),
                               torch.as_tensor(sd_b[k][field]))
    assert loaded.rngs.state() == state.rngs.state()


def test_eval_classifier_save_load(mini_dataset, tmp_path):
    net = train_eval_classifier(mini_dataset, model_preset("mini"), iterations=3,
                                batch_size=4)
    path = tmp_path / "cls.zip"
    save_eval_classifier(path, net)
    loaded = load_eval_classifier(path)
    crops = torch.rand(2, 3, 4, 4)
    assert torch.equal(net.class_logits(crops), loaded.class_logits(crops))
