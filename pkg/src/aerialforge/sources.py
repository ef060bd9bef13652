"""Loading source images from the input manifest.

The manifest is JSON listing sources with RGB paths and either a COCO-style
annotation file (polygons or uncompressed column-major RLE) or a per-image
label-raster PNG with a class-id legend.
"""

import json
import os

import cv2
import numpy as np

from .rle import RleMask, rle_decode
from .tiling import InstanceAnnotation, SourceImage


def read_rgb(path: str) -> np.ndarray:
    img = cv2.imread(path, cv2.IMREAD_COLOR)
    if img is None:
        raise FileNotFoundError(f"cannot read image {path}")
    return cv2.cvtColor(img, cv2.COLOR_BGR2RGB)


def write_rgb(path: str, img: np.ndarray):
    if not cv2.imwrite(path, cv2.cvtColor(img, cv2.COLOR_RGB2BGR)):
        raise IOError(f"cannot write image {path}")


def _polygon_mask(segmentation: list, height: int, width: int) -> np.ndarray:
    mask = np.zeros((height, width), dtype=np.uint8)
    for poly in segmentation:
        pts = np.asarray(poly, dtype=np.float64).reshape(-1, 2)
        cv2.fillPoly(mask, [np.round(pts).astype(np.int32)], 1)
    return mask


def _segmentation_mask(seg, height: int, width: int) -> np.ndarray:
    if isinstance(seg, dict):
        return rle_decode(RleMask(size=tuple(seg["size"]), counts=list(seg["counts"])))
    return _polygon_mask(seg, height, width)


def load_coco_annotations(path: str) -> dict:
    """Per-image instance annotations from a COCO-style file.

    Returns {image file id: [InstanceAnnotation, ...]}.
    """
    with open(path) as f:
        coco = json.load(f)
    categories = {c["id"]: c["name"] for c in coco.get("categories", [])}
    images = {i["id"]: i for i in coco.get("images", [])}
    per_image = {}
    for ann in coco.get("annotations", []):
        info = images[ann["image_id"]]
        mask = _segmentation_mask(ann["segmentation"], info["height"], info["width"])
        per_image.setdefault(ann["image_id"], []).append(
            InstanceAnnotation(
                id=str(ann["id"]),
                category=categories.get(ann["category_id"], str(ann["category_id"])),
                mask=mask,
            )
        )
    return per_image


def load_sources(manifest_path: str) -> list:
    """All SourceImage entries from an input manifest, ordered by id."""
    with open(manifest_path) as f:
        manifest = json.load(f)
    base = os.path.dirname(os.path.abspath(manifest_path))

    def resolve(p):
        return p if os.path.isabs(p) else os.path.join(base, p)

    sources = []
    for entry in manifest["sources"]:
        pixels = read_rgb(resolve(entry["image"]))
        if entry["type"] == "instance":
            coco = load_coco_annotations(resolve(entry["annotations"]))
            image_id = entry.get("coco_image_id", entry["id"])
            anns = []
            for key, value in coco.items():
                if str(key) == str(image_id):
                    anns = value
            sources.append(SourceImage(id=entry["id"], pixels=pixels, annotations=anns))
        elif entry["type"] == "semantic":
            raster = cv2.imread(resolve(entry["labels"]), cv2.IMREAD_UNCHANGED)
            if raster is None:
                raise FileNotFoundError(f"cannot read label raster {entry['labels']}")
            if raster.ndim == 3:
                raster = raster[..., 0]
            legend = {int(k): v for k, v in entry["legend"].items()}
            sources.append(
                SourceImage(
                    id=entry["id"], pixels=pixels,
                    label_raster=raster.astype(np.int32), legend=legend,
                )
            )
        else:
            raise ValueError(f"source {entry['id']}: unknown type {entry['type']!r}")
    sources.sort(key=lambda s: s.id)
    return sources
