"""JSON-over-HTTP inference service: generation, shifted pairs, vocab.

Latent codes never cross the wire; requests carry integer seeds and the
response echoes the seeds and attributes actually used, so any response can
be reproduced exactly by sending them back.
"""
from __future__ import annotations

import base64
import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .data import to_png_bytes
from .errors import LayoutGenError
from .generator import generate
from .layout import Layout, ShiftSpec, Vocabulary, layout_from_dict, shift_layout
from .metrics import TrunkFeatureExtractor, consistency_score
from .prior import AttributePrior, sample_attributes
from .training import ModelBundle, load_checkpoint


@dataclass
class ServingContext:
    bundle: ModelBundle
    categories: Vocabulary
    attributes: Vocabulary
    prior: AttributePrior
    checkpoint_hash: str
    config_hash: str

    @property
    def cfg(self):
        return self.bundle.cfg

    def feature_extractor(self):
        return TrunkFeatureExtractor.from_object_network(self.bundle.object_net)


def load_serving_context(model_dir, checkpoint=None) -> ServingContext:
    """model_dir holds vocab_categories.txt, vocab_attributes.txt, prior.json
    and one or more ckpt_*.zip archives (latest wins unless one is named)."""
    model_dir = Path(model_dir)
    if checkpoint is None:
        ckpts = sorted(model_dir.glob("ckpt_*.zip"))
        if not ckpts:
            raise FileNotFoundError(f"no ckpt_*.zip under {model_dir}")
        checkpoint = ckpts[-1]
    state = load_checkpoint(checkpoint)
    state.bundle.eval()
    categories = Vocabulary.load(model_dir / "vocab_categories.txt")
    attributes = Vocabulary.load(model_dir / "vocab_attributes.txt")
    prior_path = model_dir / "prior.json"
    prior = (AttributePrior.load(prior_path, categories, attributes)
             if prior_path.exists() else AttributePrior())
    ckpt_hash = hashlib.sha256(Path(checkpoint).read_bytes()).hexdigest()[:16]
    return ServingContext(state.bundle, categories, attributes, prior,
                          ckpt_hash, state.config.config_hash())


# ---------------------------------------------------------------------------
# Wire schemas (all versioned with "v")
# ---------------------------------------------------------------------------

class GenerateRequest(BaseModel):
    v: int = 1
    layout: dict
    seed: Optional[int] = None
    object_seeds: Optional[list[Optional[int]]] = None


class ShiftModel(BaseModel):
    dx: list[float]
    policy: str = "clamp"


class PairRequest(BaseModel):
    v: int = 1
    request: GenerateRequest
    shifts: ShiftModel


def _derive_object_seeds(global_seed: int, m: int) -> list[int]:
    # uint32 keeps seeds inside JavaScript's safe-integer range so browser
    # clients can echo them back without precision loss
    children = np.random.SeedSequence(global_seed).spawn(m)
    return [int(c.generate_state(1, dtype=np.uint32)[0]) for c in children]


def _codes_from_seeds(seeds: list[int], dim: int) -> np.ndarray:
    rows = [np.random.Generator(np.random.PCG64(s)).standard_normal(dim).astype(np.float32)
            for s in seeds]
    return np.stack(rows)


def _resolve_request(ctx: ServingContext, req: GenerateRequest):
    """Returns (layout, z, object_seeds, resolved attribute names, seed)."""
    doc = req.layout
    if not isinstance(doc, dict) or "objects" not in doc:
        raise LayoutGenError("layout must be an object with canvas/objects")
    # objects that omit the "attributes" key entirely get prior-sampled ones
    needs_sampling = [not isinstance(o, dict) or "attributes" not in o
                      for o in doc.get("objects", [])]
    layout = layout_from_dict(doc, ctx.categories, ctx.attributes)
    seed = req.seed if req.seed is not None else int(np.random.SeedSequence().entropy % (2**32))
    object_seeds = _derive_object_seeds(seed, layout.m)
    if req.object_seeds is not None:
        if len(req.object_seeds) != layout.m:
            raise LayoutGenError(f"object_seeds length {len(req.object_seeds)} != m={layout.m}")
        object_seeds = [own if own is not None else derived
                        for own, derived in zip(req.object_seeds, object_seeds)]
    attr_rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence(entropy=seed, spawn_key=(0xA77,))))
    objects = list(layout.objects)
    for i, (obj, sample_me) in enumerate(zip(objects, needs_sampling)):
        if sample_me:
            n = 1 if ctx.prior.category_counts(obj.category) else 0
            sampled = sample_attributes(ctx.prior, obj.category, n, attr_rng)
            from dataclasses import replace
            objects[i] = replace(obj, attributes=sampled)
    layout = Layout(layout.canvas, tuple(objects))
    z = _codes_from_seeds(object_seeds, ctx.cfg.latent_dim)
    attr_names = [[ctx.attributes[a] for a in o.attributes] for o in layout.objects]
    return layout, z, object_seeds, attr_names, seed


def _generate_response(ctx: ServingContext, layout: Layout, z: np.ndarray,
                       object_seeds, attr_names, seed: int) -> dict:
    image = generate(layout, z, ctx.bundle.generator)
    return {
        "v": 1,
        "image_png_base64": base64.b64encode(to_png_bytes(image.numpy())).decode("ascii"),
        "seed": seed,
        "object_seeds": list(object_seeds),
        "resolved_attributes": attr_names,
        "model": {"checkpoint_hash": ctx.checkpoint_hash, "config_hash": ctx.config_hash},
    }, image


def create_app(context: ServingContext | None = None) -> FastAPI:
    app = FastAPI(title="layoutgen")
    app.state.ctx = context
    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
                       allow_headers=["*"])

    @app.exception_handler(LayoutGenError)
    async def _layout_error(_req: Request, exc: LayoutGenError):
        return JSONResponse(status_code=400,
                            content={"v": 1, "error": {"code": exc.code, "message": str(exc)}})

    def ctx_or_503():
        if app.state.ctx is None:
            raise _NoModel()
        return app.state.ctx

    class _NoModel(Exception):
        pass

    @app.exception_handler(_NoModel)
    async def _no_model(_req: Request, _exc: _NoModel):
        return JSONResponse(status_code=503,
                            content={"v": 1, "error": {"code": "NoModelLoaded",
                                                       "message": "no checkpoint is loaded"}})

    @app.get("/healthz")
    async def healthz():
        return {"v": 1, "status": "ok", "model_loaded": app.state.ctx is not None}

    @app.get("/model")
    async def model_info():
        from dataclasses import asdict

        ctx = ctx_or_503()
        return {"v": 1, "checkpoint_hash": ctx.checkpoint_hash,
                "config_hash": ctx.config_hash,
                "canvas_size": ctx.cfg.canvas_size,
                "object_size": ctx.cfg.object_size,
                "config": asdict(ctx.cfg)}

    @app.get("/vocab")
    async def vocab():
        ctx = ctx_or_503()
        totals = ctx.prior.attribute_totals(len(ctx.attributes))
        return {
            "v": 1,
            "categories": list(ctx.categories.names),
            "attributes": list(ctx.attributes.names),
            "prior_summary": {
                "attribute_totals": {ctx.attributes[i]: int(n)
                                     for i, n in enumerate(totals) if n > 0},
            },
        }

    @app.post("/generate")
    async def generate_endpoint(req: GenerateRequest):
        ctx = ctx_or_503()
        layout, z, seeds, attr_names, seed = _resolve_request(ctx, req)
        body, _ = _generate_response(ctx, layout, z, seeds, attr_names, seed)
        return body

    @app.post("/generate/pair")
    async def generate_pair(req: PairRequest):
        ctx = ctx_or_503()
        layout, z, seeds, attr_names, seed = _resolve_request(ctx, req.request)
        shifts = ShiftSpec(tuple(req.shifts.dx), req.shifts.policy)
        if len(shifts) != layout.m:
            raise LayoutGenError(f"got {len(shifts)} shifts for m={layout.m}")
        shifted = shift_layout(layout, shifts)
        original, img_a = _generate_response(ctx, layout, z, seeds, attr_names, seed)
        shifted_body, img_b = _generate_response(ctx, shifted, z, seeds, attr_names, seed)
        bg, fg = consistency_score(img_a, img_b, layout, shifts,
                                   ctx.feature_extractor(),
                                   object_size=ctx.cfg.object_size)
        return {"v": 1, "original": original, "shifted": shifted_body,
                "consistency": {"bg": bg, "fg": fg}}

    return app
