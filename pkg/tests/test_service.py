import base64

import pytest
from fastapi.testclient import TestClient

from layoutgen.config import model_preset, training_preset
from layoutgen.data import LayoutDataset, SyntheticSpec, generate_synthetic_dataset
from layoutgen.service import create_app, load_serving_context
from layoutgen.training import train_loop

SPEC = SyntheticSpec(colors=("red", "green", "blue"), sizes=("small",),
                     canvas_size=8, objects_range=(1, 2), seed=5)


@pytest.fixture(scope="module")
def served_model_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("serve")
    data_dir = root / "data"
    out_dir = root / "out"
    generate_synthetic_dataset(SPEC, 8, data_dir, val_fraction=0.0)
    dataset = LayoutDataset(data_dir, split="train")
    config = training_preset(
        "desk", model=model_preset("mini"), batch_size=2, iterations=2,
        checkpoint_every=2, seed=3)
    train_loop(config, dataset, out_dir)
    for name in ("vocab_categories.txt", "vocab_attributes.txt", "prior.json"):
        (out_dir / name).write_bytes((data_dir / name).read_bytes())
    return out_dir


@pytest.fixture(scope="module")
def client(served_model_dir):
    ctx = load_serving_context(served_model_dir)
    return TestClient(create_app(ctx))


def layout_doc(with_attributes=True):
    objects = [
        {"category": "rectangle", "attributes": ["red"], "bbox": [0.1, 0.1, 0.5, 0.6]},
        {"category": "ellipse", "attributes": ["green"], "bbox": [0.5, 0.3, 0.9, 0.8]},
    ]
    if not with_attributes:
        del objects[1]["attributes"]
    return {"canvas": {"width": 8, "height": 8}, "objects": objects}


def test_healthz_and_model(client):
    assert client.get("/healthz").json() == {"v": 1, "status": "ok", "model_loaded": True}
    doc = client.get("/model").json()
    assert doc["v"] == 1 and doc["checkpoint_hash"] and doc["config_hash"]
    assert doc["config"]["canvas_size"] == 8


def test_vocab_matches_served_checkpoint(client):
    doc = client.get("/vocab").json()
    assert doc["categories"] == ["rectangle", "ellipse", "triangle"]
    assert doc["attributes"] == ["red", "green", "blue", "small"]
    assert doc == client.get("/vocab").json()  # stable ordering


def test_generate_deterministic_bytes(client):
    req = {"v": 1, "layout": layout_doc(), "seed": 42}
    a = client.post("/generate", json=req).json()
    b = client.post("/generate", json=req).json()
    assert a["image_png_base64"] == b["image_png_base64"]
    assert a["object_seeds"] == b["object_seeds"]
    # seeds stay inside JavaScript's exactly-representable integer range
    assert all(0 <= s < 2**53 for s in a["object_seeds"])


def test_generate_echoed_seeds_reproduce(client):
    first = client.post("/generate", json={"v": 1, "layout": layout_doc(), "seed": 7}).json()
    echo = {
        "v": 1,
        "layout": layout_doc(),
        "seed": first["seed"],
        "object_seeds": first["object_seeds"],
    }
    second = client.post("/generate", json=echo).json()
    assert second["image_png_base64"] == first["image_png_base64"]


def test_generate_samples_missing_attributes(client):
    req = {"v": 1, "layout": layout_doc(with_attributes=False), "seed": 9}
    resp = client.post("/generate", json=req).json()
    assert resp["resolved_attributes"][0] == ["red"]   # explicit attribute kept
    assert isinstance(resp["resolved_attributes"][1], list)  # sampled and reported
    # echoing the resolved attributes reproduces the image exactly
    doc = layout_doc()
    doc["objects"][1]["attributes"] = resp["resolved_attributes"][1]
    echo = {"v": 1, "layout": doc, "seed": resp["seed"],
            "object_seeds": resp["object_seeds"]}
    again = client.post("/generate", json=echo).json()
    assert again["image_png_base64"] == resp["image_png_base64"]


def test_generate_invalid_bbox_error_code(client):
    doc = layout_doc()
    doc["objects"][0]["bbox"] = [0.7, 0.1, 0.2, 0.6]  # x1 < x0
    resp = client.post("/generate", json={"v": 1, "layout": doc})
    assert resp.status_code == 400
    body = resp.json()
    assert body["error"]["code"] == "InvalidBBox"
    assert "image_png_base64" not in body


def test_generate_unknown_attribute_name(client):
    doc = layout_doc()
    doc["objects"][0]["attributes"] = ["sparkly"]
    resp = client.post("/generate", json={"v": 1, "layout": doc})
    assert resp.status_code == 400
    assert resp.json()["error"]["code"] == "UnknownIndex"


def test_pair_zero_shift_identical_images(client):
    req = {"v": 1,
           "request": {"v": 1, "layout": layout_doc(), "seed": 11},
           "shifts": {"dx": [0.0, 0.0], "policy": "clamp"}}
    resp = client.post("/generate/pair", json=req).json()
    assert resp["original"]["image_png_base64"] == resp["shifted"]["image_png_base64"]
    assert resp["consistency"] == {"bg": 1.0, "fg": 1.0}


def test_pair_shares_seeds(client):
    req = {"v": 1,
           "request": {"v": 1, "layout": layout_doc(), "seed": 12},
           "shifts": {"dx": [0.1, -0.05], "policy": "clamp"}}
    resp = client.post("/generate/pair", json=req).json()
    assert resp["original"]["object_seeds"] == resp["shifted"]["object_seeds"]
    assert resp["original"]["image_png_base64"] != resp["shifted"]["image_png_base64"]
    assert 0.0 <= resp["consistency"]["bg"] <= 1.0
    assert 0.0 <= resp["consistency"]["fg"] <= 1.0


def test_pair_rejects_bad_shift_count(client):
    req = {"v": 1,
           "request": {"v": 1, "layout": layout_doc(), "seed": 1},
           "shifts": {"dx": [0.1], "policy": "clamp"}}
    assert client.post("/generate/pair", json=req).status_code == 400


def test_unloaded_service_returns_503():
    bare = TestClient(create_app(None))
    assert bare.get("/vocab").status_code == 503
    assert bare.post("/generate", json={"v": 1, "layout": layout_doc()}).status_code == 503
    assert bare.get("/healthz").json()["model_loaded"] is False


def test_png_payload_decodes(client):
    from layoutgen.data import from_png_bytes

    resp = client.post("/generate", json={"v": 1, "layout": layout_doc(), "seed": 2}).json()
    img = from_png_bytes(base64.b64decode(resp["image_png_base64"]))
    assert img.shape == (3, 8, 8)


def test_service_never_mutates_parameters(served_model_dir):
    import torch

    from layoutgen.service import load_serving_context

    ctx = load_serving_context(served_model_dir)
    before = {k: v.clone() for k, v in ctx.bundle.state_dict().items()}
    local = TestClient(create_app(ctx))
    local.post("/generate", json={"v": 1, "layout": layout_doc(), "seed": 5})
    local.post("/generate/pair", json={
        "v": 1, "request": {"v": 1, "layout": layout_doc(), "seed": 5},
        "shifts": {"dx": [0.1, 0.0], "policy": "clamp"}})
    after = ctx.bundle.state_dict()
    assert all(torch.equal(before[k], after[k]) for k in before)
