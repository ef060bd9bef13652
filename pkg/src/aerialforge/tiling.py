"""Tiling and normalization of source imagery to 480x480 patches.

Instance-annotated sources are cut with a sliding window (default stride 384),
semantic sources are resized directly. Selected semantic classes are promoted
to pseudo-instances via connected-component analysis.
"""

from dataclasses import dataclass, field
from typing import Optional

import cv2
import numpy as np
from scipy import ndimage

TILE_SIZE = 480
DEFAULT_STRIDE = 384

# Components smaller than this many pixels make un-describable targets.
MIN_COMPONENT_AREA = 100

# Instances clipped below this fraction of their original area are dropped
# from the tile.
MIN_CLIP_FRACTION = 0.2

# Semantic classes promoted to pseudo-instances by default.
DEFAULT_PROMOTE_CLASSES = ("building", "water")

# 8-connectivity: diagonal building corners stay joined.
_CC_STRUCTURE = np.ones((3, 3), dtype=bool)


@dataclass
class InstanceAnnotation:
    id: str
    category: str
    mask: np.ndarray  # binary, full source resolution


@dataclass
class SourceImage:
    id: str
    pixels: np.ndarray  # HxWx3 uint8 RGB
    annotations: list = field(default_factory=list)
    label_raster: Optional[np.ndarray] = None  # HxW class ids
    legend: Optional[dict] = None  # class id -> class name

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]


@dataclass
class Tile:
    id: str
    source_id: str
    origin: tuple  # (x, y) offset in the source image
    pixels: np.ndarray  # 480x480x3 uint8
    annotations: list = field(default_factory=list)
    label_raster: Optional[np.ndarray] = None
    legend: Optional[dict] = None


@dataclass
class PseudoInstance:
    class_name: str
    mask: np.ndarray  # binary 480x480
    area: int


def window_offsets(dim: int, window: int = TILE_SIZE, stride: int = DEFAULT_STRIDE) -> list:
    """Sliding-window offsets along one axis.

    Multiples of the stride, with the final offset snapped to ``dim - window``
    so the union of windows covers the whole axis.
    """
    if dim < window:
        raise ValueError(f"axis dimension {dim} smaller than window {window}")
    offsets = list(range(0, dim - window + 1, stride))
    if offsets[-1] != dim - window:
        offsets.append(dim - window)
    return offsets


def reflect_pad_to_window(img: SourceImage, window: int = TILE_SIZE) -> SourceImage:
    """Reflect-pad a source smaller than the window; padding carries no annotations."""
    pad_y = max(0, window - img.height)
    pad_x = max(0, window - img.width)
    if pad_y == 0 and pad_x == 0:
        return img
    pixels = cv2.copyMakeBorder(img.pixels, 0, pad_y, 0, pad_x, cv2.BORDER_REFLECT_101)
    anns = []
    for ann in img.annotations:
        mask = np.zeros(pixels.shape[:2], dtype=np.uint8)
        mask[: ann.mask.shape[0], : ann.mask.shape[1]] = ann.mask
        anns.append(InstanceAnnotation(ann.id, ann.category, mask))
    raster = None
    if img.label_raster is not None:
        raster = cv2.copyMakeBorder(
            img.label_raster, 0, pad_y, 0, pad_x, cv2.BORDER_REFLECT_101
        )
    return SourceImage(img.id, pixels, anns, raster, img.legend)


def tile_instance_image(
    img: SourceImage,
    window: int = TILE_SIZE,
    stride: int = DEFAULT_STRIDE,
    min_clip_fraction: float = MIN_CLIP_FRACTION,
) -> list:
    """Cut an instance-annotated source into window-sized tiles.

    Only tiles containing at least one surviving clipped instance are kept.
    Instances reduced below ``min_clip_fraction`` of their original area in a
    tile are dropped from that tile.
    """
    if img.pixels.ndim != 3 or img.pixels.shape[2] != 3:
        raise ValueError(f"source {img.id}: expected 3-channel RGB input")
    if not img.annotations:
        return []
    img = reflect_pad_to_window(img, window)

    orig_areas = {ann.id: int(ann.mask.sum()) for ann in img.annotations}
    tiles = []
    for y in window_offsets(img.height, window, stride):
        for x in window_offsets(img.width, window, stride):
            clipped = []
            for ann in img.annotations:
                sub = ann.mask[y : y + window, x : x + window]
                area = int(sub.sum())
                if area == 0:
                    continue
                if area < min_clip_fraction * orig_areas[ann.id]:
                    continue
                clipped.append(InstanceAnnotation(ann.id, ann.category, sub.copy()))
            if not clipped:
                continue
            tiles.append(
                Tile(
                    id=f"{img.id}_x{x}_y{y}",
                    source_id=img.id,
                    origin=(x, y),
                    pixels=img.pixels[y : y + window, x : x + window].copy(),
                    annotations=clipped,
                )
            )
    tiles.sort(key=lambda t: (t.source_id, t.origin[1], t.origin[0]))
    return tiles


def resize_semantic_image(img: SourceImage, size: int = TILE_SIZE) -> Tile:
    """Resize a semantic source to the tile size.

    RGB is resampled bilinearly; the label raster uses nearest-neighbor so no
    new class ids appear.
    """
    if img.label_raster is None:
        raise ValueError(f"source {img.id}: no label raster")
    if img.label_raster.shape[:2] != img.pixels.shape[:2]:
        raise ValueError(
            f"source {img.id}: raster shape {img.label_raster.shape[:2]} does not "
            f"match image shape {img.pixels.shape[:2]}"
        )
    pixels = cv2.resize(img.pixels, (size, size), interpolation=cv2.INTER_LINEAR)
    raster = cv2.resize(
        img.label_raster.astype(np.int32), (size, size), interpolation=cv2.INTER_NEAREST
    )
    return Tile(
        id=f"{img.id}_r", source_id=img.id, origin=(0, 0),
        pixels=pixels, label_raster=raster, legend=img.legend,
    )


def extract_pseudo_instances(
    tile: Tile,
    promote: tuple = DEFAULT_PROMOTE_CLASSES,
    min_component_area: int = MIN_COMPONENT_AREA,
) -> list:
    """Promote connected components of selected semantic classes to pseudo-instances."""
    if tile.label_raster is None:
        raise ValueError(f"tile {tile.id}: no semantic raster")
    legend = tile.legend or {}
    name_to_id = {v: k for k, v in legend.items()}
    out = []
    for name in promote:
        class_id = name_to_id.get(name)
        if class_id is None:
            continue
        binary = tile.label_raster == class_id
        labels, n = ndimage.label(binary, structure=_CC_STRUCTURE)
        for i in range(1, n + 1):
            mask = (labels == i).astype(np.uint8)
            area = int(mask.sum())
            if area < min_component_area:
                continue
            out.append(PseudoInstance(class_name=name, mask=mask, area=area))
    return out


def semantic_region_classes(tile: Tile, promote: tuple = DEFAULT_PROMOTE_CLASSES) -> list:
    """Non-promoted semantic classes present in a tile, with their masks."""
    if tile.label_raster is None:
        return []
    legend = tile.legend or {}
    regions = []
    for class_id, name in sorted(legend.items()):
        if name in promote:
            continue
        mask = (tile.label_raster == class_id).astype(np.uint8)
        if mask.sum() == 0:
            continue
        regions.append((name, mask))
    return regions
