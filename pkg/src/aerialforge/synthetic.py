"""Deterministic synthetic demo corpus.

Four small sources (two instance-annotated, two semantic) with simple colored
shapes, written as an input manifest plus PNGs. Used by the CLI demo and the
end-to-end tests; everything derives from the seed.
"""

import json
import os

import cv2
import numpy as np

SEMANTIC_LEGEND = {1: "building", 2: "water", 3: "forest", 4: "agriculture"}

_CATEGORY_COLORS = {
    "plane": (235, 235, 235),  # light
    "ship": (40, 45, 200),     # blue
    "vehicle": (200, 40, 40),  # red
}


def _instance_source(rng, size):
    """Gray background with colored rectangles; returns image + COCO pieces."""
    img = np.full((size, size, 3), 110, dtype=np.uint8)
    annotations = []
    n = int(rng.integers(6, 10))
    categories = list(_CATEGORY_COLORS)
    for k in range(n):
        category = categories[int(rng.integers(len(categories)))]
        w = int(rng.integers(24, 70))
        h = int(rng.integers(24, 70))
        x = int(rng.integers(0, size - w))
        y = int(rng.integers(0, size - h))
        color = _CATEGORY_COLORS[category]
        img[y : y + h, x : x + w] = color
        poly = [float(x), float(y), float(x + w), float(y),
                float(x + w), float(y + h), float(x), float(y + h)]
        annotations.append({"category": category, "segmentation": [poly]})
    noise = rng.integers(-8, 9, size=img.shape)
    img = np.clip(img.astype(np.int32) + noise, 0, 255).astype(np.uint8)
    return img, annotations


def _semantic_source(rng, size):
    """Quadrant-style semantic raster with a couple of building/water blobs."""
    img = np.full((size, size, 3), 90, dtype=np.uint8)
    raster = np.zeros((size, size), dtype=np.uint8)
    half = size // 2
    raster[:half, :half] = 3  # forest
    raster[half:, :half] = 4  # agriculture
    img[:half, :half] = (40, 120, 50)
    img[half:, :half] = (170, 150, 80)
    for _ in range(int(rng.integers(2, 5))):
        w = int(rng.integers(60, 160))
        h = int(rng.integers(60, 160))
        x = int(rng.integers(half, size - w)) if size - w > half else half
        y = int(rng.integers(0, size - h))
        cls = 1 if rng.random() < 0.5 else 2
        raster[y : y + h, x : x + w] = cls
        img[y : y + h, x : x + w] = (180, 180, 185) if cls == 1 else (35, 60, 170)
    noise = rng.integers(-6, 7, size=img.shape)
    img = np.clip(img.astype(np.int32) + noise, 0, 255).astype(np.uint8)
    return img, raster


def write_demo_corpus(out_dir: str, seed: int = 7) -> str:
    """Write the 4-image synthetic corpus; returns the manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(seed)
    entries = []

    category_ids = {name: i + 1 for i, name in enumerate(_CATEGORY_COLORS)}
    for idx in range(2):
        source_id = f"synth_inst_{idx}"
        img, anns = _instance_source(rng, 864)
        img_path = os.path.join(out_dir, f"{source_id}.png")
        cv2.imwrite(img_path, cv2.cvtColor(img, cv2.COLOR_RGB2BGR))
        coco = {
            "images": [{"id": source_id, "file_name": f"{source_id}.png",
                        "width": 864, "height": 864}],
            "categories": [{"id": i, "name": n} for n, i in category_ids.items()],
            "annotations": [
                {
                    "id": k + 1,
                    "image_id": source_id,
                    "category_id": category_ids[a["category"]],
                    "segmentation": a["segmentation"],
                }
                for k, a in enumerate(anns)
            ],
        }
        ann_path = os.path.join(out_dir, f"{source_id}_coco.json")
        with open(ann_path, "w") as f:
            json.dump(coco, f, indent=1, sort_keys=True)
        entries.append(
            {"id": source_id, "type": "instance",
             "image": f"{source_id}.png", "annotations": f"{source_id}_coco.json"}
        )

    for idx in range(2):
        source_id = f"synth_sem_{idx}"
        img, raster = _semantic_source(rng, 1024)
        cv2.imwrite(os.path.join(out_dir, f"{source_id}.png"),
                    cv2.cvtColor(img, cv2.COLOR_RGB2BGR))
        cv2.imwrite(os.path.join(out_dir, f"{source_id}_labels.png"), raster)
        entries.append(
            {
                "id": source_id, "type": "semantic",
                "image": f"{source_id}.png",
                "labels": f"{source_id}_labels.png",
                "legend": {str(k): v for k, v in SEMANTIC_LEGEND.items()},
            }
        )

    manifest_path = os.path.join(out_dir, "sources.json")
    with open(manifest_path, "w") as f:
        json.dump({"sources": entries}, f, indent=1, sort_keys=True)
    return manifest_path
