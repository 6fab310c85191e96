"""Pilot for the desk-scale acceptance run: train classifier + GAN, then
measure attribute recall/precision, object accuracy, and consistency margins
at several step counts.  Not part of the test suite; the frozen acceptance
settings in tests/test_acceptance.py come from this run."""
import json
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

import torch

from layoutgen.config import training_preset
from layoutgen.data import LayoutDataset, SyntheticSpec, generate_synthetic_dataset
from layoutgen.discriminator import crop_boxes
from layoutgen.generator import LayoutBatch
from layoutgen.metrics import (
    TrunkFeatureExtractor,
    attribute_recall_precision,
    evaluate_consistency,
    evaluate_generation,
    object_accuracy,
)
from layoutgen.training import build_triple, init_trainer, train_eval_classifier, train_step


def real_crop_scores(val, classifier, cfg):
    crops, labels, gt = [], [], []
    for i in range(len(val)):
        image, layout = val[i]
        batch = LayoutBatch.from_layouts([layout], cfg.num_attributes)
        idx = torch.zeros(layout.m, dtype=torch.long)
        crops.append(crop_boxes(torch.as_tensor(image).unsqueeze(0), batch.boxes,
                                idx, cfg.object_size))
        labels += [o.category for o in layout.objects]
        gt += [o.attributes for o in layout.objects]
    crops = torch.cat(crops)
    acc = object_accuracy(crops, labels, classifier.class_logits)
    rec, prec = attribute_recall_precision(crops, gt, classifier.attr_logits)
    return acc, rec, prec


def main():
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("/tmp/pilot")
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    spec = SyntheticSpec(canvas_size=32, objects_range=(1, 3), seed=100,
                         min_box_side=0.25, max_box_side=0.6)
    data_dir = out / "data"
    if not (data_dir / "index.json").exists():
        generate_synthetic_dataset(spec, 600, data_dir, val_fraction=0.08)
    train = LayoutDataset(data_dir, split="train")
    val = LayoutDataset(data_dir, split="val")
    print(f"[{time.time()-t0:6.1f}s] dataset: {len(train)} train / {len(val)} val")

    config = training_preset("desk", iterations=2000, seed=1)
    classifier = train_eval_classifier(train, config.model, seed=7)
    acc, rec, prec = real_crop_scores(val, classifier, config.model)
    print(f"[{time.time()-t0:6.1f}s] classifier on REAL val crops: "
          f"acc={acc:.3f} rec={rec:.3f} prec={prec:.3f}")

    state = init_trainer(config, train.prior)
    fx = TrunkFeatureExtractor.from_object_network(classifier)
    val_layouts = [val[i][1] for i in range(len(val))]
    history = []
    for step in range(1, config.iterations + 1):
        idx = state.rngs["data"].integers(0, len(train), size=config.batch_size)
        triples = [build_triple(train[int(i)], config, state.rngs, train.prior)
                   for i in idx]
        report = train_step(triples, state)
        if step % 250 == 0 or step == config.iterations:
            state.bundle.eval()
            cfg = config.model
            acc, rec, prec = evaluate_generation(
                state.bundle.generator, classifier, val_layouts[:40],
                cfg.latent_dim, cfg.object_size, seed=5)
            bg, fg, bbg, bfg = evaluate_consistency(
                state.bundle.generator, fx, val_layouts[:20],
                cfg.latent_dim, cfg.object_size, seed=6)
            state.bundle.train()
            line = dict(step=step, acc=round(acc, 3), rec=round(rec, 3),
                        prec=round(prec, 3), bg=round(bg, 3), fg=round(fg, 3),
                        base_bg=round(bbg, 3), base_fg=round(bfg, 3),
                        loss_g=round(report.loss_g, 2), loss_d=round(report.loss_d, 2),
                        img_recon=round(report.img_recon, 3),
                        t=round(time.time() - t0, 1))
            history.append(line)
            print(f"[{time.time()-t0:6.1f}s]", json.dumps(line), flush=True)
    (out / "history.json").write_text(json.dumps(history, indent=2))
    print("done in", round(time.time() - t0, 1), "s")


if __name__ == "__main__":
    main()
