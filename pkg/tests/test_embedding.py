import numpy as np
import pytest
import torch

from layoutgen.config import model_preset
from layoutgen.embedding import (
    CropEncoder,
    ObjectEmbedder,
    encode_attributes,
    estimate_posterior,
    joint_embedding,
    reparameterize,
    sample_latent_prior,
)
from layoutgen.errors import UnknownIndex


def test_encode_attributes_definition():
    e = encode_attributes({2, 5}, 8)
    assert e.tolist() == [0, 0, 1, 0, 0, 1, 0, 0]


def test_encode_attributes_empty_is_zero_vector():
    assert encode_attributes((), 8).sum() == 0.0


def test_encode_attributes_idempotent():
    assert np.array_equal(encode_attributes({2}, 8), encode_attributes({2}, 8))


def test_encode_attributes_out_of_range():
    with pytest.raises(UnknownIndex):
        encode_attributes({8}, 8)


def test_encode_attributes_injective_on_sets():
    seen = {}
    for a in range(6):
        for b in range(a + 1, 6):
            key = encode_attributes({a, b}, 6).tobytes()
            assert key not in seen
            seen[key] = (a, b)


def test_joint_embedding_shapes_paper_config():
    cfg = model_preset("paper64")  # 64-dim embedding, 106 attributes
    emb = ObjectEmbedder(cfg)
    out = joint_embedding(3, encode_attributes({1, 4}, 106), emb)
    assert out.shape == (64,)


def test_joint_embedding_deterministic(mini_cfg):
    emb = ObjectEmbedder(mini_cfg)
    e = encode_attributes({1}, mini_cfg.num_attributes)
    a = joint_embedding(0, e, emb)
    b = joint_embedding(0, e, emb)
    assert torch.equal(a, b)


def test_joint_embedding_sensitive_to_attribute_bit(mini_cfg):
    emb = ObjectEmbedder(mini_cfg)
    a = joint_embedding(0, encode_attributes({1}, mini_cfg.num_attributes), emb)
    b = joint_embedding(0, encode_attributes({1, 2}, mini_cfg.num_attributes), emb)
    assert (a - b).abs().max().item() > 0.0


def test_joint_embedding_batch_invariance(mini_cfg):
    emb = ObjectEmbedder(mini_cfg)
    cats = torch.tensor([0, 1, 2])
    attrs = torch.stack([torch.as_tensor(encode_attributes({i}, mini_cfg.num_attributes))
                         for i in range(3)])
    batched = emb(cats, attrs)
    singles = torch.stack([emb(cats[i:i + 1], attrs[i:i + 1]).squeeze(0) for i in range(3)])
    assert torch.allclose(batched, singles, atol=1e-7)


def test_sample_latent_prior_moments():
    rng = np.random.Generator(np.random.PCG64(0))
    z = sample_latent_prior(1600, rng, dim=64)  # > 10^5 scalars
    assert z.shape == (1600, 64)
    assert abs(z.mean()) < 0.02
    assert abs(z.std() - 1.0) < 0.02


def test_sample_latent_prior_deterministic():
    a = sample_latent_prior(3, np.random.Generator(np.random.PCG64(4)), dim=16)
    b = sample_latent_prior(3, np.random.Generator(np.random.PCG64(4)), dim=16)
    assert np.array_equal(a, b)
    assert a.shape == (3, 16)


def test_sample_latent_prior_requires_positive_m(rng):
    with pytest.raises(ValueError):
        sample_latent_prior(0, rng)


def test_posterior_output_shapes():
    cfg = model_preset("desk")  # 16x16 objects at the desk canvas
    enc = CropEncoder(cfg)
    mu, logvar = estimate_posterior(torch.rand(3, 16, 16) * 2 - 1, enc)
    assert mu.shape == (cfg.latent_dim,) and logvar.shape == (cfg.latent_dim,)


def test_posterior_paper_crop_size():
    cfg = model_preset("paper64")
    enc = CropEncoder(cfg)
    mu, logvar = enc(torch.rand(2, 3, 32, 32))
    assert mu.shape == (2, 64) and logvar.shape == (2, 64)


def test_posterior_rejects_wrong_size(desk_cfg):
    with pytest.raises(ValueError):
        CropEncoder(desk_cfg)(torch.rand(1, 3, 8, 8))


def test_posterior_deterministic_and_input_sensitive(desk_cfg):
    enc = CropEncoder(desk_cfg)
    a = torch.rand(3, 16, 16)
    mu1, _ = estimate_posterior(a, enc)
    mu2, _ = estimate_posterior(a, enc)
    assert torch.equal(mu1, mu2)
    mu3, _ = estimate_posterior(torch.rand(3, 16, 16), enc)
    assert (mu1 - mu3).abs().max().item() > 0.0


def test_posterior_logvar_clamped(desk_cfg):
    enc = CropEncoder(desk_cfg)
    with torch.no_grad():
        enc.logvar_head.weight.zero_()
        enc.logvar_head.bias.fill_(999.0)
    _, logvar = enc(torch.rand(1, 3, 16, 16))
    assert logvar.max().item() <= 10.0


def test_reparameterize_closed_forms():
    e = torch.randn(4)
    z = reparameterize(torch.zeros(4), torch.zeros(4), e)
    assert torch.equal(z, e)
    z = reparameterize(torch.ones(2), torch.full((2,), float(np.log(4.0))),
                       torch.full((2,), 0.5))
    assert torch.allclose(z, torch.full((2,), 2.0))
    mu = torch.randn(4)
    assert torch.equal(reparameterize(mu, torch.randn(4), torch.zeros(4)), mu)


def test_reparameterize_affine_in_eps():
    rng = np.random.default_rng(2)
    mu = torch.tensor(rng.normal(size=6))
    logvar = torch.tensor(rng.normal(size=6))
    e1 = torch.tensor(rng.normal(size=6))
    e2 = torch.tensor(rng.normal(size=6))
    a = 2.7
    lhs = reparameterize(mu, logvar, a * e1 + e2)
    rhs = a * (reparameterize(mu, logvar, e1) - mu) + reparameterize(mu, logvar, e2)
    assert torch.allclose(lhs, rhs, atol=1e-9)
