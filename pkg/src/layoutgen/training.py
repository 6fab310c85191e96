"""Three-path adversarial training.

Every step builds, per example, three aligned inputs: the reconstruction
path (original layout, posterior codes), the free-generation path (original
layout, prior codes), and the reconfiguration path (horizontally shifted
layout, the same prior codes).  Discriminators and auxiliary classifiers
update first on real data and detached fakes; the generator, embedder, and
posterior encoder then update on freshly generated images.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch
from torch import nn

from . import losses as L
from .checkpoint import load_archive, save_archive
from .config import ModelConfig, TrainingConfig
from .discriminator import ImageDiscriminator, ObjectNetwork, crop_boxes
from .embedding import CropEncoder, sample_latent_prior
from .errors import NonFiniteLoss
from .generator import Generator, LayoutBatch
from .layout import Layout, sample_shifts, shift_layout
from .prior import AttributePrior, sample_attributes


class ModelBundle(nn.Module):
    """All learnable components, under stable hierarchical names."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.generator = Generator(cfg)
        self.crop_encoder = CropEncoder(cfg)
        self.image_disc = ImageDiscriminator(cfg)
        self.object_net = ObjectNetwork(cfg)

    def g_parameters(self):
        return list(self.generator.parameters()) + list(self.crop_encoder.parameters())

    def d_parameters(self):
        return list(self.image_disc.parameters()) + list(self.object_net.parameters())


class RngBundle:
    """Named numpy generators so every sampling concern has its own stream."""

    NAMES = ("data", "shifts", "latents", "eps", "attrs")

    def __init__(self, seed: int):
        seqs = np.random.SeedSequence(seed).spawn(len(self.NAMES))
        self.streams = {n: np.random.Generator(np.random.PCG64(s))
                        for n, s in zip(self.NAMES, seqs)}

    def __getitem__(self, name: str) -> np.random.Generator:
        return self.streams[name]

    def state(self) -> dict:
        return {n: g.bit_generator.state for n, g in self.streams.items()}

    def restore(self, state: dict) -> None:
        for n, s in state.items():
            self.streams[n].bit_generator.state = s


def disentangle_attributes(objects, prior: AttributePrior, p_replace: float,
                           rng: np.random.Generator):
    """Independently replace each (category, attributes) pair's attribute set
    with a prior-sampled one of the same size, with probability p_replace.

    Returns the new list of (category, attributes) pairs.  Used only on the
    free-generation and reconfiguration paths; the reconstruction path keeps
    ground-truth attributes.
    """
    if not 0.0 <= p_replace <= 1.0:
        raise ValueError("p_replace must be in [0, 1]")
    out = []
    for category, attrs in objects:
        if p_replace > 0.0 and rng.random() < p_replace:
            attrs = sample_attributes(prior, category, len(attrs), rng)
        out.append((category, tuple(attrs)))
    return out


@dataclass
class TrainingTriple:
    """One example's aligned inputs for the three generation paths.

    The prior codes z are shared between the free-generation and
    reconfiguration paths by construction; eps is the standard-normal draw
    for reparameterized posterior sampling, fixed here so both training
    phases see the same z_r.
    """

    image: torch.Tensor            # (3, H, W) in [-1, 1]
    layout: Layout                 # ground-truth layout (Set 1 conditioning)
    attrs_sampled: list            # per-object attribute tuples for Sets 2/3
    z: torch.Tensor                # (m, latent_dim) prior codes, shared by Sets 2/3
    eps: torch.Tensor              # (m, latent_dim) reparameterization noise
    shifted_layout: Layout         # Set 3 layout (x-translated boxes)
    shifts: tuple


def build_triple(example, config: TrainingConfig, rngs: RngBundle,
                 prior: AttributePrior) -> TrainingTriple:
    image, layout = example
    cfg = config.model
    z = torch.from_numpy(sample_latent_prior(layout.m, rngs["latents"], cfg.latent_dim))
    eps = torch.from_numpy(
        rngs["eps"].standard_normal((layout.m, cfg.latent_dim)).astype(np.float32))
    pairs = [(o.category, o.attributes) for o in layout.objects]
    resampled = disentangle_attributes(pairs, prior, config.p_replace, rngs["attrs"])
    shifts = sample_shifts(layout, config.shift_magnitude, rngs["shifts"])
    return TrainingTriple(
        image=torch.as_tensor(image, dtype=torch.float32),
        layout=layout,
        attrs_sampled=[a for _, a in resampled],
        z=z,
        eps=eps,
        shifted_layout=shift_layout(layout, shifts),
        shifts=shifts.dx,
    )


@dataclass
class TrainerState:
    config: TrainingConfig
    bundle: ModelBundle
    opt_g: torch.optim.Adam
    opt_d: torch.optim.Adam
    rngs: RngBundle
    attr_weights: torch.Tensor
    iteration: int = 0
    d_updates: int = 0
    g_updates: int = 0


def init_trainer(config: TrainingConfig, prior: AttributePrior) -> TrainerState:
    if config.deterministic:
        torch.use_deterministic_algorithms(True)
    torch.manual_seed(config.seed)
    bundle = ModelBundle(config.model)
    opt_g = torch.optim.Adam(bundle.g_parameters(), lr=config.learning_rate,
                             betas=config.adam_betas)
    opt_d = torch.optim.Adam(bundle.d_parameters(), lr=config.learning_rate,
                             betas=config.adam_betas)
    attr_weights = L.attribute_bce_weights(
        prior.attribute_totals(config.model.num_attributes))
    return TrainerState(config, bundle, opt_g, opt_d, RngBundle(config.seed),
                        attr_weights)


def _batch_tensors(triples: list[TrainingTriple], cfg: ModelConfig):
    """Assemble the per-path layout batches and stacked tensors."""
    layouts = [t.layout for t in triples]
    real = LayoutBatch.from_layouts(layouts, cfg.num_attributes)
    rand = LayoutBatch.from_layouts(layouts, cfg.num_attributes,
                                    attrs_override=[t.attrs_sampled for t in triples])
    shifted = LayoutBatch.from_layouts([t.shifted_layout for t in triples],
                                       cfg.num_attributes,
                                       attrs_override=[t.attrs_sampled for t in triples])
    images = torch.stack([t.image for t in triples])
    z = torch.cat([t.z for t in triples])
    eps = torch.cat([t.eps for t in triples])
    index = torch.repeat_interleave(torch.arange(len(triples)), real.lengths)
    return real, rand, shifted, images, z, eps, index


def _generate_paths(bundle: ModelBundle, real: LayoutBatch, rand: LayoutBatch,
                    shifted: LayoutBatch, images, z, eps, index, cfg: ModelConfig):
    """Posterior estimation plus the three generated images."""
    real_crops = crop_boxes(images, real.boxes, index, cfg.object_size)
    mu, logvar = bundle.crop_encoder(real_crops)
    z_r = mu + torch.exp(0.5 * logvar) * eps
    img_rec = bundle.generator(real, z_r)
    img_rand = bundle.generator(rand, z)
    img_shift = bundle.generator(shifted, z)
    return real_crops, mu, logvar, img_rec, img_rand, img_shift


def _check_finite(parts: dict) -> None:
    for name, value in parts.items():
        v = float(value.detach() if torch.is_tensor(value) else value)
        if not np.isfinite(v):
            raise NonFiniteLoss(name, v)


def _fake_crops(images_by_path: dict, real, rand, shifted, index, cfg: ModelConfig):
    boxes = {"rec": real.boxes, "rand": rand.boxes, "shift": shifted.boxes}
    return {p: crop_boxes(images_by_path[p], boxes[p], index, cfg.object_size)
            for p in ("rec", "rand", "shift")}


def discriminator_loss_parts(bundle: ModelBundle, tensors, attr_weights,
                             cfg: ModelConfig) -> dict:
    """D-side losses on real data and detached fakes; adversarial entries are
    the BCE the discriminator minimizes."""
    real, rand, shifted, images, z, eps, index = tensors
    with torch.no_grad():
        real_crops, _mu, _logvar, img_rec, img_rand, img_shift = _generate_paths(
            bundle, real, rand, shifted, images, z, eps, index, cfg)
    fakes = _fake_crops({"rec": img_rec, "rand": img_rand, "shift": img_shift},
                        real, rand, shifted, index, cfg)
    adv_img_d = L.adv_loss_image(bundle.image_disc(images),
                                 bundle.image_disc(img_rand),
                                 bundle.image_disc(img_rec),
                                 bundle.image_disc(img_shift)).discriminator
    adv_obj_d = L.adv_loss_object(bundle.object_net.realness(real_crops),
                                  bundle.object_net.realness(fakes["rand"]),
                                  bundle.object_net.realness(fakes["rec"]),
                                  bundle.object_net.realness(fakes["shift"])).discriminator
    obj_cls_real = L.obj_class_loss(bundle.object_net.class_logits(real_crops),
                                    real.categories)
    attr_cls_real = L.attr_class_loss(bundle.object_net.attr_logits(real_crops),
                                      real.attributes, attr_weights)
    return {"adv_img_d": adv_img_d, "adv_obj_d": adv_obj_d,
            "obj_cls_real": obj_cls_real, "attr_cls_real": attr_cls_real}


def generator_loss_parts(bundle: ModelBundle, tensors, attr_weights,
                         cfg: ModelConfig) -> dict:
    """The seven generator loss parts, differentiable through the generator,
    embedder, and posterior encoder."""
    real, rand, shifted, images, z, eps, index = tensors
    b = len(real.lengths)
    real_crops, mu, logvar, img_rec, img_rand, img_shift = _generate_paths(
        bundle, real, rand, shifted, images, z, eps, index, cfg)
    fakes = _fake_crops({"rec": img_rec, "rand": img_rand, "shift": img_shift},
                        real, rand, shifted, index, cfg)
    attr_targets = {"rec": real.attributes, "rand": rand.attributes,
                    "shift": shifted.attributes}
    adv_img_g = L.adv_loss_image(bundle.image_disc(images).detach(),
                                 bundle.image_disc(img_rand),
                                 bundle.image_disc(img_rec),
                                 bundle.image_disc(img_shift)).generator
    adv_obj_g = L.adv_loss_object(bundle.object_net.realness(real_crops).detach(),
                                  bundle.object_net.realness(fakes["rand"]),
                                  bundle.object_net.realness(fakes["rec"]),
                                  bundle.object_net.realness(fakes["shift"])).generator
    obj_cls_g = sum(L.obj_class_loss(bundle.object_net.class_logits(fakes[p]),
                                     real.categories)
                    for p in ("rec", "rand", "shift")) / 3.0
    attr_cls_g = sum(L.attr_class_loss(bundle.object_net.attr_logits(fakes[p]),
                                       attr_targets[p], attr_weights)
                     for p in ("rec", "rand", "shift")) / 3.0
    kl = L.kl_loss(mu, logvar) / b
    img_recon = L.image_recon_loss(images, img_rec)
    z_rand_hat = bundle.crop_encoder(fakes["rand"])[0]
    z_shift_hat = bundle.crop_encoder(fakes["shift"])[0]
    latent_recon = L.latent_recon_loss(z, z_rand_hat, z_shift_hat) / b
    return {"adv_img": adv_img_g, "adv_obj": adv_obj_g, "obj_cls": obj_cls_g,
            "attr_cls": attr_cls_g, "kl": kl, "img_recon": img_recon,
            "latent_recon": latent_recon}


def train_step(triples: list[TrainingTriple], state: TrainerState) -> L.LossReport:
    cfg = state.config.model
    weights = state.config.weights
    bundle = state.bundle
    bundle.train()
    tensors = _batch_tensors(triples, cfg)

    # ---- phase 1: classifiers and discriminators --------------------------
    d = discriminator_loss_parts(bundle, tensors, state.attr_weights, cfg)
    _check_finite(d)
    loss_d = L.discriminator_total(
        {"adv_img": -d["adv_img_d"], "adv_obj": -d["adv_obj_d"],
         "obj_cls": d["obj_cls_real"], "attr_cls": d["attr_cls_real"]}, weights)
    state.opt_d.zero_grad(set_to_none=True)
    loss_d.backward()
    if state.config.grad_clip > 0:
        nn.utils.clip_grad_norm_(bundle.d_parameters(), state.config.grad_clip)
    state.opt_d.step()
    state.d_updates += 1

    # ---- phase 2: generator, embedder, posterior encoder ------------------
    g_parts = generator_loss_parts(bundle, tensors, state.attr_weights, cfg)
    _check_finite(g_parts)
    loss_g = L.generator_total(g_parts, weights)
    state.opt_g.zero_grad(set_to_none=True)
    loss_g.backward()
    if state.config.grad_clip > 0:
        nn.utils.clip_grad_norm_(bundle.g_parameters(), state.config.grad_clip)
    state.opt_g.step()
    state.g_updates += 1
    state.iteration += 1

    adv_img_g, adv_obj_g = g_parts["adv_img"], g_parts["adv_obj"]
    obj_cls_g, attr_cls_g = g_parts["obj_cls"], g_parts["attr_cls"]
    kl, img_recon = g_parts["kl"], g_parts["img_recon"]
    latent_recon = g_parts["latent_recon"]
    adv_img_d, adv_obj_d = d["adv_img_d"], d["adv_obj_d"]
    obj_cls_real, attr_cls_real = d["obj_cls_real"], d["attr_cls_real"]

    val = lambda t: float(t.detach())
    return L.LossReport(
        adv_img=val(adv_img_g), adv_obj=val(adv_obj_g), obj_cls=val(obj_cls_g),
        attr_cls=val(attr_cls_g), kl=val(kl), img_recon=val(img_recon),
        latent_recon=val(latent_recon), loss_g=val(loss_g), loss_d=val(loss_d),
        adv_img_d=val(adv_img_d), adv_obj_d=val(adv_obj_d),
        obj_cls_real=val(obj_cls_real), attr_cls_real=val(attr_cls_real),
    )


# ---------------------------------------------------------------------------
# Checkpointing
# ---------------------------------------------------------------------------

def _optimizer_arrays(opt: torch.optim.Adam, prefix: str) -> dict[str, np.ndarray]:
    arrays = {}
    for idx, st in opt.state_dict()["state"].items():
        for key, val in st.items():
            arrays[f"{prefix}/{idx}/{key}"] = np.asarray(
                val.detach().numpy() if torch.is_tensor(val) else val)
    return arrays


def _restore_optimizer(opt: torch.optim.Adam, arrays: dict[str, np.ndarray],
                       prefix: str) -> None:
    sd = opt.state_dict()
    state: dict[int, dict] = {}
    for name, arr in arrays.items():
        if not name.startswith(prefix + "/"):
            continue
        _, idx, key = name.split("/", 2)
        entry = state.setdefault(int(idx), {})
        entry[key] = torch.from_numpy(arr.copy())
    sd["state"] = state
    opt.load_state_dict(sd)


def save_checkpoint(path, state: TrainerState) -> None:
    arrays = {f"model/{k}": v.detach().numpy() for k, v in state.bundle.state_dict().items()}
    arrays.update(_optimizer_arrays(state.opt_g, "opt_g"))
    arrays.update(_optimizer_arrays(state.opt_d, "opt_d"))
    arrays["torch_rng"] = torch.get_rng_state().numpy()
    manifest = {
        "v": 1,
        "iteration": state.iteration,
        "d_updates": state.d_updates,
        "g_updates": state.g_updates,
        "config": state.config.to_dict(),
        "config_hash": state.config.config_hash(),
        "numpy_rng": state.rngs.state(),
        "attr_weights": state.attr_weights.tolist(),
    }
    save_archive(path, arrays, manifest)


def load_checkpoint(path) -> TrainerState:
    arrays, manifest = load_archive(path)
    config = TrainingConfig.from_dict(manifest["config"])
    bundle = ModelBundle(config.model)
    model_state = {k[len("model/"):]: torch.from_numpy(v.copy())
                   for k, v in arrays.items() if k.startswith("model/")}
    bundle.load_state_dict(model_state)
    opt_g = torch.optim.Adam(bundle.g_parameters(), lr=config.learning_rate,
                             betas=config.adam_betas)
    opt_d = torch.optim.Adam(bundle.d_parameters(), lr=config.learning_rate,
                             betas=config.adam_betas)
    _restore_optimizer(opt_g, arrays, "opt_g")
    _restore_optimizer(opt_d, arrays, "opt_d")
    rngs = RngBundle(config.seed)
    rngs.restore(manifest["numpy_rng"])
    if "torch_rng" in arrays:
        torch.set_rng_state(torch.from_numpy(arrays["torch_rng"].copy()))
    if config.deterministic:
        torch.use_deterministic_algorithms(True)
    state = TrainerState(config, bundle, opt_g, opt_d, rngs,
                         torch.tensor(manifest["attr_weights"], dtype=torch.float32),
                         iteration=manifest["iteration"],
                         d_updates=manifest["d_updates"],
                         g_updates=manifest["g_updates"])
    return state


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

def train_loop(config: TrainingConfig, dataset, out_dir,
               resume=None, prior: AttributePrior | None = None,
               log_file=None) -> list[Path]:
    """Run (or resume) training; returns the list of checkpoint paths.

    dataset: sequence of (image, Layout) with an optional ``prior``
    attribute (used for attribute resampling unless one is passed in).
    Metrics stream to <out_dir>/metrics.jsonl, one JSON object per step.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    prior = prior if prior is not None else getattr(dataset, "prior", AttributePrior())
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if resume is not None:
        state = load_checkpoint(resume)
        state.config = config = replace(config, model=state.config.model)
    else:
        state = init_trainer(config, prior)
    log_path = Path(log_file) if log_file else out_dir / "metrics.jsonl"
    ckpts: list[Path] = []
    with open(log_path, "a", encoding="utf-8") as log:
        while state.iteration < config.iterations:
            idx = state.rngs["data"].integers(0, len(dataset), size=config.batch_size)
            triples = [build_triple(dataset[int(i)], config, state.rngs, prior)
                       for i in idx]
            report = train_step(triples, state)
            if state.iteration % config.log_every == 0:
                line = {"iteration": state.iteration, **report.to_dict()}
                log.write(json.dumps(line) + "\n")
                log.flush()
            if (state.iteration % config.checkpoint_every == 0
                    or state.iteration >= config.iterations):
                path = out_dir / f"ckpt_{state.iteration:07d}.zip"
                save_checkpoint(path, state)
                ckpts.append(path)
    return ckpts


# ---------------------------------------------------------------------------
# Stand-alone evaluation classifier (never sees generator gradients)
# ---------------------------------------------------------------------------

def save_eval_classifier(path, net: ObjectNetwork) -> None:
    from dataclasses import asdict

    arrays = {f"model/{k}": v.detach().numpy() for k, v in net.state_dict().items()}
    save_archive(path, arrays, {"v": 1, "kind": "eval_classifier",
                                "model_config": asdict(net.cfg)})


def load_eval_classifier(path) -> ObjectNetwork:
    arrays, manifest = load_archive(path)
    cfg = ModelConfig(**manifest["model_config"])
    net = ObjectNetwork(cfg)
    net.load_state_dict({k[len("model/"):]: torch.from_numpy(v.copy())
                         for k, v in arrays.items() if k.startswith("model/")})
    net.eval()
    return net


def train_eval_classifier(dataset, cfg: ModelConfig, iterations: int = 1500,
                          batch_size: int = 48, lr: float = 1.5e-3,
                          seed: int = 7) -> ObjectNetwork:
    """Train an independent object/attribute classifier on real crops.

    Steps the learning rate down 10x for the last quarter of training."""
    torch.manual_seed(seed)
    rng = np.random.Generator(np.random.PCG64(seed))
    net = ObjectNetwork(cfg)
    opt = torch.optim.Adam(net.parameters(), lr=lr)
    for it in range(iterations):
        if it == (3 * iterations) // 4:
            for group in opt.param_groups:
                group["lr"] = lr * 0.1
        idx = rng.integers(0, len(dataset), size=batch_size)
        images, layouts = zip(*(dataset[int(i)] for i in idx))
        batch = LayoutBatch.from_layouts(layouts, cfg.num_attributes)
        stacked = torch.stack([torch.as_tensor(im, dtype=torch.float32) for im in images])
        index = torch.repeat_interleave(torch.arange(len(layouts)), batch.lengths)
        crops = crop_boxes(stacked, batch.boxes, index, cfg.object_size)
        loss = (L.obj_class_loss(net.class_logits(crops), batch.categories)
                + L.attr_class_loss(net.attr_logits(crops), batch.attributes))
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
    net.eval()
    return net
