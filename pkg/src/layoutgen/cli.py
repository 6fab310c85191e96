"""Command-line entry points: synth, ingest-vg, train, evaluate, serve."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import torch

from .config import TrainingConfig, training_preset
from .data import (
    LayoutDataset,
    SyntheticSpec,
    from_png_bytes,
    generate_synthetic_dataset,
)
from .layout import Vocabulary, parse_layout
from .metrics import (
    EvalReport,
    TrunkFeatureExtractor,
    attribute_recall_precision,
    diversity_score,
    object_accuracy,
)
from .vg import IngestConfig, ingest_visual_genome


def _cmd_synth(args) -> int:
    spec = SyntheticSpec()
    if args.spec:
        doc = json.loads(Path(args.spec).read_text(encoding="utf-8"))
        doc = {k: tuple(v) if isinstance(v, list) else v for k, v in doc.items()}
        spec = SyntheticSpec(**doc)
    index = generate_synthetic_dataset(spec, args.n, args.out)
    print(f"wrote {len(index.entries)} examples to {args.out}")
    return 0


def _cmd_ingest_vg(args) -> int:
    config = IngestConfig(num_categories=args.categories, num_attributes=args.attributes)
    index, cats, attrs, _prior = ingest_visual_genome(
        args.objects, args.attr_file, args.out, config=config,
        image_data_file=args.image_data, splits_file=args.splits)
    sizes = {s: len(index.split(s)) for s in ("train", "val", "test")}
    print(f"ingested {len(index.entries)} images "
          f"(train={sizes['train']}, val={sizes['val']}, test={sizes['test']}); "
          f"{len(cats)} categories, {len(attrs)} attributes")
    return 0


def _cmd_train(args) -> int:
    from dataclasses import replace

    from .training import train_loop

    if args.config:
        config = TrainingConfig.from_json(Path(args.config).read_text(encoding="utf-8"))
    else:
        config = training_preset(args.preset)
    dataset = LayoutDataset(args.data, split="train")
    model = replace(config.model, num_categories=len(dataset.categories),
                    num_attributes=len(dataset.attributes))
    config = replace(config, model=model)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name in ("vocab_categories.txt", "vocab_attributes.txt", "prior.json"):
        src = Path(args.data) / name
        if src.exists():
            (out / name).write_bytes(src.read_bytes())
    (out / "config.json").write_text(config.to_json(), encoding="utf-8")
    ckpts = train_loop(config, dataset, out, resume=args.resume)
    print(f"trained to iteration {config.iterations}; checkpoints: "
          + ", ".join(str(c) for c in ckpts[-3:]))
    return 0


def _load_image_layout_pairs(images_dir, layouts_dir, categories, attributes):
    images, layouts = [], []
    for img_path in sorted(Path(images_dir).glob("*.png")):
        layout_path = Path(layouts_dir) / (img_path.stem + ".json")
        if not layout_path.exists():
            continue
        images.append(torch.from_numpy(from_png_bytes(img_path.read_bytes())))
        layouts.append(parse_layout(layout_path.read_bytes(), categories, attributes))
    return images, layouts


def _cmd_evaluate(args) -> int:
    from .discriminator import crop_objects
    from .training import load_eval_classifier

    vocab_dir = Path(args.vocab_dir) if args.vocab_dir else Path(args.layouts).parent
    categories = Vocabulary.load(vocab_dir / "vocab_categories.txt")
    attributes = Vocabulary.load(vocab_dir / "vocab_attributes.txt")
    net = load_eval_classifier(args.ckpt)
    images, layouts = _load_image_layout_pairs(args.images, args.layouts,
                                               categories, attributes)
    if not images:
        print("no (image, layout) pairs found", file=sys.stderr)
        return 1
    crops, labels, gt_attrs = [], [], []
    for image, layout in zip(images, layouts):
        crops.append(crop_objects(image, layout, net.cfg.object_size))
        labels += [o.category for o in layout.objects]
        gt_attrs += [o.attributes for o in layout.objects]
    crops = torch.cat(crops)
    report = EvalReport()
    report.object_accuracy = object_accuracy(crops, labels, net.class_logits)
    recall, precision = attribute_recall_precision(crops, gt_attrs, net.attr_logits,
                                                   threshold=args.threshold)
    report.attribute_recall, report.attribute_precision = recall, precision
    if args.images_b:
        images_b, _ = _load_image_layout_pairs(args.images_b, args.layouts,
                                               categories, attributes)
        fx = TrunkFeatureExtractor.from_object_network(net)
        n = min(len(images), len(images_b))
        report.diversity_mean, report.diversity_std = diversity_score(
            images[:n], images_b[:n], fx)
    Path(args.report).write_text(json.dumps(report.to_dict(), indent=2) + "\n",
                                 encoding="utf-8")
    print(json.dumps(report.to_dict(), indent=2))
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app, load_serving_context

    ctx = load_serving_context(args.model, checkpoint=args.checkpoint)
    app = create_app(ctx)
    if args.static:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=args.static, html=True), name="ui")
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="layoutgen")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate the synthetic shapes dataset")
    sp.add_argument("--spec", default=None, help="JSON file of SyntheticSpec fields")
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=_cmd_synth)

    sp = sub.add_parser("ingest-vg", help="convert Visual Genome annotations")
    sp.add_argument("--objects", required=True)
    sp.add_argument("--attributes", dest="attr_file", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--image-data", default=None)
    sp.add_argument("--splits", default=None)
    sp.add_argument("--categories", type=int, default=178)
    sp.add_argument("--num-attributes", dest="attributes", type=int, default=106)
    sp.set_defaults(func=_cmd_ingest_vg)

    sp = sub.add_parser("train", help="run the three-path training loop")
    sp.add_argument("--config", default=None, help="TrainingConfig JSON file")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--resume", default=None)
    sp.add_argument("--preset", default="desk", choices=["desk", "paper64", "paper128"])
    sp.set_defaults(func=_cmd_train)

    sp = sub.add_parser("evaluate", help="score generated images against layouts")
    sp.add_argument("--images", required=True)
    sp.add_argument("--layouts", required=True)
    sp.add_argument("--ckpt", required=True, help="eval classifier archive")
    sp.add_argument("--report", required=True)
    sp.add_argument("--images-b", default=None, help="paired set for diversity")
    sp.add_argument("--vocab-dir", default=None)
    sp.add_argument("--threshold", type=float, default=0.5)
    sp.set_defaults(func=_cmd_evaluate)

    sp = sub.add_parser("serve", help="run the inference HTTP service")
    sp.add_argument("--model", required=True, help="directory with ckpt + vocab files")
    sp.add_argument("--checkpoint", default=None)
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--port", type=int, default=8000)
    sp.add_argument("--static", default=None, help="serve a built frontend from this dir")
    sp.set_defaults(func=_cmd_serve)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
