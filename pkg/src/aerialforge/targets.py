"""Target construction and rule-cue extraction for a single tile.

Targets are single instances, DBSCAN clusters of 2-8 same-category instances,
per-category class groups, and semantic regions. Cues cover grid position,
extreme position, color, and eight-way directional relations.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import cv2
import numpy as np
from scipy import ndimage

from .tiling import TILE_SIZE, Tile, extract_pseudo_instances, semantic_region_classes

DEFAULT_EPS = 50.0
DEFAULT_MIN_PTS = 2
MAX_CLUSTER_SIZE = 8
DEFAULT_RELATION_MAX_DIST = 200.0

GRID_LABELS = [
    ["top-left", "top-center", "top-right"],
    ["center-left", "center", "center-right"],
    ["bottom-left", "bottom-center", "bottom-right"],
]

# Counter-clockwise from +x, in image coordinates (y grows downward).
DIRECTION_LABELS = [
    "right", "top-right", "top", "top-left",
    "left", "bottom-left", "bottom", "bottom-right",
]

EXTREME_LABELS = ("topmost", "bottommost", "leftmost", "rightmost")

# Mixed colors on these categories are not useful for identification.
NO_COLOR_CATEGORIES = {"building", "water"}

# HSV hue bins in degrees, half-open; red wraps around 360.
HUE_BINS = [
    ("red", 345.0, 15.0),
    ("orange", 15.0, 45.0),
    ("yellow", 45.0, 75.0),
    ("green", 75.0, 165.0),
    ("blue", 165.0, 255.0),
    ("purple", 255.0, 345.0),
]

ACHROMATIC_DOMINANCE = 0.70
CHROMATIC_DOMINANCE = 0.60


@dataclass
class Target:
    id: str
    kind: str  # instance | cluster | class_group | semantic_region
    category: str
    mask: np.ndarray  # binary 480x480
    bbox: tuple  # (x0, y0, x1, y1), inclusive pixel bounds
    members: list = field(default_factory=list)

    @property
    def center(self):
        x0, y0, x1, y1 = self.bbox
        return ((x0 + x1) / 2.0, (y0 + y1) / 2.0)


@dataclass
class CueSet:
    category_name: str
    grid_cell: str
    extreme_flags: list = field(default_factory=list)
    color: Optional[str] = None
    relations: list = field(default_factory=list)  # (direction, neighbor target id)


def mask_bbox(mask: np.ndarray) -> tuple:
    ys, xs = np.nonzero(mask)
    if len(xs) == 0:
        raise ValueError("empty mask has no bbox")
    return (int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max()))


def _boundary_pixels(mask: np.ndarray) -> np.ndarray:
    """Coordinates (y, x) of mask pixels adjacent to background."""
    eroded = ndimage.binary_erosion(mask.astype(bool), structure=np.ones((3, 3), bool))
    boundary = mask.astype(bool) & ~eroded
    return np.argwhere(boundary)


def edge_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Minimum Euclidean distance between the boundaries of two masks.

    Zero if the masks touch or overlap.
    """
    if a.sum() == 0 or b.sum() == 0:
        raise ValueError("edge_distance requires non-empty masks")
    if np.any(a.astype(bool) & b.astype(bool)):
        return 0.0
    pa = _boundary_pixels(a).astype(np.float64)
    pb = _boundary_pixels(b).astype(np.float64)
    # Chunked brute force; masks are tile-sized so boundary sets stay small.
    best = math.inf
    for chunk in np.array_split(pa, max(1, len(pa) // 2048)):
        d2 = ((chunk[:, None, :] - pb[None, :, :]) ** 2).sum(axis=2)
        best = min(best, float(d2.min()))
    return math.sqrt(best)


def _dbscan(dist: np.ndarray, eps: float, min_pts: int) -> list:
    """Plain DBSCAN on a precomputed distance matrix; returns member-index sets."""
    n = dist.shape[0]
    neighbors = [set(np.nonzero(dist[i] <= eps)[0].tolist()) for i in range(n)]
    core = [i for i in range(n) if len(neighbors[i]) >= min_pts]
    labels = [-1] * n
    cluster = 0
    for seed in core:
        if labels[seed] != -1:
            continue
        labels[seed] = cluster
        frontier = [seed]
        while frontier:
            i = frontier.pop()
            for j in neighbors[i]:
                if labels[j] == -1:
                    labels[j] = cluster
                    if len(neighbors[j]) >= min_pts:
                        frontier.append(j)
        cluster += 1
    groups = []
    for c in range(cluster):
        groups.append(sorted(i for i in range(n) if labels[i] == c))
    return groups


def build_targets(
    tile: Tile,
    eps: float = DEFAULT_EPS,
    min_pts: int = DEFAULT_MIN_PTS,
    promote: tuple = ("building", "water"),
) -> list:
    """All addressable targets in a tile, ordered deterministically."""
    instances = list(tile.annotations)
    if tile.label_raster is not None:
        for i, pi in enumerate(extract_pseudo_instances(tile, promote=promote)):
            instances.append(_PseudoAnn(f"p{i}", pi.class_name, pi.mask))
    instances.sort(key=lambda a: str(a.id))

    targets = []
    counter = 0

    def next_id():
        nonlocal counter
        counter += 1
        return f"{tile.id}_t{counter:03d}"

    inst_targets = {}
    for ann in instances:
        t = Target(
            id=next_id(), kind="instance", category=ann.category,
            mask=ann.mask.astype(np.uint8), bbox=mask_bbox(ann.mask),
        )
        inst_targets[ann.id] = t
        targets.append(t)

    by_category = {}
    for ann in instances:
        by_category.setdefault(ann.category, []).append(ann)

    for category in sorted(by_category):
        anns = by_category[category]
        if len(anns) < 2:
            continue
        dist = np.zeros((len(anns), len(anns)))
        for i in range(len(anns)):
            for j in range(i + 1, len(anns)):
                d = edge_distance(anns[i].mask, anns[j].mask)
                dist[i, j] = dist[j, i] = d
        for group in _dbscan(dist, eps, min_pts):
            if len(group) < 2 or len(group) > MAX_CLUSTER_SIZE:
                continue
            mask = np.zeros_like(anns[0].mask, dtype=np.uint8)
            for i in group:
                mask |= anns[i].mask.astype(np.uint8)
            targets.append(
                Target(
                    id=next_id(), kind="cluster", category=category,
                    mask=mask, bbox=mask_bbox(mask),
                    members=[inst_targets[anns[i].id].id for i in group],
                )
            )
        group_mask = np.zeros_like(anns[0].mask, dtype=np.uint8)
        for ann in anns:
            group_mask |= ann.mask.astype(np.uint8)
        targets.append(
            Target(
                id=next_id(), kind="class_group", category=category,
                mask=group_mask, bbox=mask_bbox(group_mask),
                members=[inst_targets[a.id].id for a in anns],
            )
        )

    for name, mask in semantic_region_classes(tile, promote=promote):
        targets.append(
            Target(
                id=next_id(), kind="semantic_region", category=name,
                mask=mask.astype(np.uint8), bbox=mask_bbox(mask),
            )
        )
    return targets


@dataclass
class _PseudoAnn:
    id: str
    category: str
    mask: np.ndarray


def grid_position(bbox: tuple, tile_size: int = TILE_SIZE) -> str:
    """3x3 grid cell containing the bbox center.

    Per-axis bins are left-closed/right-open except the final bin.
    """
    cx = (bbox[0] + bbox[2]) / 2.0
    cy = (bbox[1] + bbox[3]) / 2.0
    third = tile_size / 3.0
    col = min(int(cx // third), 2)
    row = min(int(cy // third), 2)
    return GRID_LABELS[row][col]


def extreme_flags(targets: list) -> dict:
    """Unique per-direction extreme flags for same-category instance targets.

    Requires at least 2 instances; axis ties yield no flag for that direction.
    """
    flags = {t.id: [] for t in targets}
    if len(targets) < 2:
        return flags
    keys = {
        "topmost": (lambda t: t.center[1], min),
        "bottommost": (lambda t: t.center[1], max),
        "leftmost": (lambda t: t.center[0], min),
        "rightmost": (lambda t: t.center[0], max),
    }
    for name in EXTREME_LABELS:
        key, pick = keys[name]
        extreme = pick(key(t) for t in targets)
        winners = [t for t in targets if key(t) == extreme]
        if len(winners) == 1:
            flags[winners[0].id].append(name)
    return flags


def _hue_label(hue_deg: np.ndarray) -> np.ndarray:
    """Bin index per pixel for hue in degrees."""
    out = np.full(hue_deg.shape, -1, dtype=np.int8)
    for idx, (_, lo, hi) in enumerate(HUE_BINS):
        if lo > hi:  # wraps around 360
            sel = (hue_deg >= lo) | (hue_deg < hi)
        else:
            sel = (hue_deg >= lo) & (hue_deg < hi)
        out[sel] = idx
    return out


def color_classify(pixels: np.ndarray, mask: np.ndarray, category: str) -> Optional[str]:
    """Dominant color label under a mask, or None when no threshold is met.

    Achromatic "light"/"dark" needs 70% dominance; a chromatic label needs a
    single hue bin covering 60% of the chromatic pixels. Buildings and water
    never receive a color cue.
    """
    if category in NO_COLOR_CATEGORIES:
        return None
    sel = mask.astype(bool)
    if not sel.any():
        raise ValueError("color_classify requires a non-empty mask")
    hsv = cv2.cvtColor(pixels, cv2.COLOR_RGB2HSV)
    h = hsv[..., 0][sel].astype(np.float64) * 2.0  # OpenCV hue is [0,180)
    s = hsv[..., 1][sel].astype(np.float64) / 255.0
    v = hsv[..., 2][sel].astype(np.float64) / 255.0

    n = len(h)
    light = (s <= 0.2) & (v >= 0.85)
    dark = v <= 0.25
    if light.sum() / n >= ACHROMATIC_DOMINANCE:
        return "light"
    if dark.sum() / n >= ACHROMATIC_DOMINANCE:
        return "dark"

    chromatic = ~(light | dark)
    n_chrom = chromatic.sum()
    if n_chrom == 0:
        return None
    bins = _hue_label(h[chromatic])
    for idx, (name, _, _) in enumerate(HUE_BINS):
        if (bins == idx).sum() / n_chrom >= CHROMATIC_DOMINANCE:
            return name
    return None


def direction_label(dx: float, dy: float) -> str:
    """Quantize an offset into one of eight 45-degree sectors.

    Image coordinates: y grows downward, so "top" means negative dy. Sector
    bins are [d-22.5, d+22.5); an exact boundary goes counter-clockwise.
    """
    angle = math.degrees(math.atan2(-dy, dx)) % 360.0
    sector = int((angle + 22.5) // 45.0) % 8
    return DIRECTION_LABELS[sector]


def directional_relations(
    subject: Target, others: list, max_dist: float = DEFAULT_RELATION_MAX_DIST
) -> list:
    """Relations (direction-from-neighbor, neighbor id) for nearby instances."""
    sx, sy = subject.center
    relations = []
    for other in others:
        if other.id == subject.id or other.kind != "instance":
            continue
        ox, oy = other.center
        if math.hypot(sx - ox, sy - oy) > max_dist:
            continue
        relations.append((direction_label(sx - ox, sy - oy), other.id))
    return relations


def extract_cues(
    tile: Tile,
    targets: list,
    max_dist: float = DEFAULT_RELATION_MAX_DIST,
) -> dict:
    """CueSet per target id for one tile."""
    instance_targets = [t for t in targets if t.kind == "instance"]
    by_category = {}
    for t in instance_targets:
        by_category.setdefault(t.category, []).append(t)
    flags = {}
    for cat_targets in by_category.values():
        flags.update(extreme_flags(cat_targets))

    cues = {}
    for t in targets:
        color = None
        relations = []
        if t.kind == "instance":
            color = color_classify(tile.pixels, t.mask, t.category)
            relations = directional_relations(t, instance_targets, max_dist)
        cues[t.id] = CueSet(
            category_name=t.category,
            grid_cell=grid_position(t.bbox),
            extreme_flags=flags.get(t.id, []),
            color=color,
            relations=relations,
        )
    return cues
