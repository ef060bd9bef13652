"""Dataset manifest serialization, split assignment, and statistics.

The manifest is JSON (sharded at 10k images) with PNG tiles on disk. Splits
are assigned per SOURCE image so overlapping tiles never leak across splits.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .rle import RleMask, rle_decode, rle_encode

SCHEMA_VERSION = 1
IMAGES_PER_SHARD = 10000

INSTANCE_KINDS = ("instance", "cluster", "class_group")


@dataclass
class ManifestImage:
    id: str
    file: str
    split: str
    source_dataset: str
    source_id: str
    filter: dict = None  # {"kind", "seed", "file"} when degraded


@dataclass
class ManifestTarget:
    id: str
    image_id: str
    kind: str
    category: str
    rle: RleMask
    bbox: tuple


@dataclass
class ManifestExpression:
    id: str
    target_id: str
    text: str
    source: str


@dataclass
class Manifest:
    images: list = field(default_factory=list)
    targets: list = field(default_factory=list)
    expressions: list = field(default_factory=list)
    version: int = SCHEMA_VERSION


class IntegrityError(ValueError):
    pass


def validate_manifest(m: Manifest):
    """Referential integrity: expression -> target -> image, targets non-orphaned."""
    image_ids = {i.id for i in m.images}
    target_ids = set()
    for t in m.targets:
        if t.image_id not in image_ids:
            raise IntegrityError(f"target {t.id} references missing image {t.image_id}")
        target_ids.add(t.id)
    expr_targets = set()
    for e in m.expressions:
        if e.target_id not in target_ids:
            raise IntegrityError(f"expression {e.id} references missing target {e.target_id}")
        expr_targets.add(e.target_id)
    for t in m.targets:
        if t.id not in expr_targets:
            raise IntegrityError(f"target {t.id} has no expressions")


def assign_splits(source_ids: list, test_fraction: float, seed: int) -> dict:
    """Deterministic train/test split at source-image granularity.

    A seeded shuffle of the unique sources takes the first round(n * fraction)
    as test, so every tile of one source lands in the same split.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must be in (0, 1)")
    sources = sorted(set(source_ids))
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(sources))
    n_test = int(round(len(sources) * test_fraction))
    test = {sources[i] for i in order[:n_test]}
    return {s: ("test" if s in test else "train") for s in sources}


def compute_stats(m: Manifest) -> dict:
    """Counts by expression source and target kind, plus per-category and
    word-frequency distributions. Raises on dangling references."""
    validate_manifest(m)
    kind_by_target = {t.id: t.kind for t in m.targets}

    by_source = {"rule": 0, "llm_language": 0, "llm_visual": 0}
    by_kind = {"instance_level": 0, "semantic": 0}
    by_split = {"train": 0, "test": 0}
    image_split = {i.id: i.split for i in m.images}
    target_image = {t.id: t.image_id for t in m.targets}
    per_category = {}
    word_freq = {}

    for e in m.expressions:
        by_source[e.source] = by_source.get(e.source, 0) + 1
        kind = kind_by_target[e.target_id]
        key = "instance_level" if kind in INSTANCE_KINDS else "semantic"
        by_kind[key] += 1
        split = image_split[target_image[e.target_id]]
        by_split[split] = by_split.get(split, 0) + 1
        for word in e.text.lower().split():
            word_freq[word] = word_freq.get(word, 0) + 1

    for t in m.targets:
        per_category[t.category] = per_category.get(t.category, 0) + 1

    total = len(m.expressions)
    assert sum(by_source.values()) == total
    assert sum(by_kind.values()) == total
    return {
        "images": len(m.images),
        "targets": len(m.targets),
        "total_expressions": total,
        "expressions_by_source": by_source,
        "expressions_by_kind": by_kind,
        "expressions_by_split": by_split,
        "targets_by_category": dict(sorted(per_category.items())),
        "word_frequencies": dict(
            sorted(word_freq.items(), key=lambda kv: (-kv[1], kv[0]))[:200]
        ),
    }


def _image_to_json(i: ManifestImage) -> dict:
    d = {
        "id": i.id, "file": i.file, "split": i.split,
        "source_dataset": i.source_dataset, "source_id": i.source_id,
    }
    if i.filter:
        d["filter"] = i.filter
    return d


def manifest_to_json(m: Manifest) -> dict:
    return {
        "schema_version": m.version,
        "images": [_image_to_json(i) for i in m.images],
        "targets": [
            {
                "id": t.id, "image_id": t.image_id, "kind": t.kind,
                "category": t.category,
                "mask": {"size": list(t.rle.size), "counts": t.rle.counts},
                "bbox": list(t.bbox),
            }
            for t in m.targets
        ],
        "expressions": [
            {"id": e.id, "target_id": e.target_id, "text": e.text, "source": e.source}
            for e in m.expressions
        ],
    }


def manifest_from_json(d: dict) -> Manifest:
    m = Manifest(version=d.get("schema_version", SCHEMA_VERSION))
    for i in d.get("images", []):
        m.images.append(
            ManifestImage(
                id=i["id"], file=i["file"], split=i["split"],
                source_dataset=i.get("source_dataset", ""),
                source_id=i.get("source_id", ""), filter=i.get("filter"),
            )
        )
    for t in d.get("targets", []):
        m.targets.append(
            ManifestTarget(
                id=t["id"], image_id=t["image_id"], kind=t["kind"],
                category=t["category"],
                rle=RleMask(size=tuple(t["mask"]["size"]), counts=t["mask"]["counts"]),
                bbox=tuple(t["bbox"]),
            )
        )
    for e in d.get("expressions", []):
        m.expressions.append(
            ManifestExpression(
                id=e["id"], target_id=e["target_id"], text=e["text"], source=e["source"]
            )
        )
    return m


def save_manifest(m: Manifest, out_dir: str, name: str = "manifest") -> list:
    """Write the manifest, sharded every 10k images; returns written paths."""
    os.makedirs(out_dir, exist_ok=True)
    shards = []
    n_shards = max(1, -(-len(m.images) // IMAGES_PER_SHARD))
    if n_shards == 1:
        path = os.path.join(out_dir, f"{name}.json")
        _dump_json(manifest_to_json(m), path)
        return [path]
    image_ids_by_shard = [
        {i.id for i in m.images[k * IMAGES_PER_SHARD : (k + 1) * IMAGES_PER_SHARD]}
        for k in range(n_shards)
    ]
    for k, ids in enumerate(image_ids_by_shard):
        sub = Manifest(
            images=[i for i in m.images if i.id in ids],
            targets=[t for t in m.targets if t.image_id in ids],
        )
        target_ids = {t.id for t in sub.targets}
        sub.expressions = [e for e in m.expressions if e.target_id in target_ids]
        path = os.path.join(out_dir, f"{name}.{k:04d}.json")
        _dump_json(manifest_to_json(sub), path)
        shards.append(path)
    return shards


def load_manifest(path: str) -> Manifest:
    with open(path) as f:
        return manifest_from_json(json.load(f))


def target_mask(t: ManifestTarget) -> np.ndarray:
    return rle_decode(t.rle)


def make_target(target_id, image_id, kind, category, mask, bbox) -> ManifestTarget:
    return ManifestTarget(
        id=target_id, image_id=image_id, kind=kind, category=category,
        rle=rle_encode(mask), bbox=tuple(bbox),
    )


def _dump_json(obj, path):
    tmp = path + ".tmp"
    with open(tmp, "w") as f:
        json.dump(obj, f, indent=1, sort_keys=True)
        f.write("\n")
    os.replace(tmp, path)
