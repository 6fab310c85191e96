"""Checkpoint archive: one zip of named .npy arrays plus a JSON manifest.

The same container is shared repo-wide (model weights, optimizer moments,
rng states).  Arrays keep their hierarchical dotted names; the manifest
carries iteration, config, config hash, and anything JSON-serializable.
"""
from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np

MANIFEST_NAME = "manifest.json"


def save_archive(path, arrays: dict[str, np.ndarray], manifest: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        zf.writestr(MANIFEST_NAME, json.dumps(manifest, indent=2, sort_keys=True))
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.save(buf, np.asarray(arrays[name]))
            zf.writestr(f"arrays/{name}.npy", buf.getvalue())


def load_archive(path) -> tuple[dict[str, np.ndarray], dict]:
    arrays: dict[str, np.ndarray] = {}
    with zipfile.ZipFile(Path(path), "r") as zf:
        manifest = json.loads(zf.read(MANIFEST_NAME).decode("utf-8"))
        for info in zf.infolist():
            if info.filename.startswith("arrays/") and info.filename.endswith(".npy"):
                name = info.filename[len("arrays/"):-len(".npy")]
                arrays[name] = np.load(io.BytesIO(zf.read(info)))
    return arrays, manifest
