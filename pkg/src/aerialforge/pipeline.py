"""End-to-end pipeline: tile -> targets -> generate -> dedupe -> [enhance]
-> export -> stats.

Each stage writes a JSON checkpoint under the output directory and is skipped
on resume when its output already exists. All merges are sorted so results do
not depend on worker count.
"""

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import dataset, expressions, filters, sources, targets, tiling
from .config import PipelineConfig
from .enhancer import (
    EndpointConfig, EnhancerClient, PromptPayload, render_guides,
    validate_enhancement,
)
from .rle import RleMask, rle_decode, rle_encode

log = logging.getLogger("aerialforge")


class StageError(RuntimeError):
    def __init__(self, stage, item, cause):
        super().__init__(f"stage {stage!r} failed on {item!r}: {cause}")
        self.stage = stage
        self.item = item


def _dump(obj, path):
    tmp = path + ".tmp"
    with open(tmp, "w") as f:
        json.dump(obj, f, indent=1, sort_keys=True)
        f.write("\n")
    os.replace(tmp, path)


def _load(path):
    with open(path) as f:
        return json.load(f)


def _log_stage(stage, **counters):
    log.info(json.dumps({"stage": stage, **counters}, sort_keys=True))


# ---------------------------------------------------------------- tile stage

def _tile_one_source(args):
    src_id, manifest_path, out_dir, window, stride, min_clip = args
    src = next(s for s in sources.load_sources(manifest_path) if s.id == src_id)
    tile_dir = os.path.join(out_dir, "tiles")
    entries = []
    if src.label_raster is not None:
        tile = tiling.resize_semantic_image(src, window)
        sources.write_rgb(os.path.join(tile_dir, f"{tile.id}.png"), tile.pixels)
        import cv2
        cv2.imwrite(
            os.path.join(tile_dir, f"{tile.id}_labels.png"),
            tile.label_raster.astype(np.uint8),
        )
        entries.append(
            {
                "id": tile.id, "source_id": src.id, "origin": list(tile.origin),
                "file": f"tiles/{tile.id}.png",
                "labels": f"tiles/{tile.id}_labels.png",
                "legend": {str(k): v for k, v in (tile.legend or {}).items()},
                "annotations": [],
            }
        )
    else:
        for tile in tiling.tile_instance_image(src, window, stride, min_clip):
            sources.write_rgb(os.path.join(tile_dir, f"{tile.id}.png"), tile.pixels)
            anns = []
            for ann in tile.annotations:
                r = rle_encode(ann.mask)
                anns.append(
                    {"id": str(ann.id), "category": ann.category,
                     "rle": {"size": list(r.size), "counts": r.counts}}
                )
            entries.append(
                {
                    "id": tile.id, "source_id": src.id, "origin": list(tile.origin),
                    "file": f"tiles/{tile.id}.png", "annotations": anns,
                }
            )
    return entries


def stage_tile(cfg: PipelineConfig) -> str:
    out = os.path.join(cfg.out_dir, "tiles.json")
    if os.path.exists(out):
        return out
    os.makedirs(os.path.join(cfg.out_dir, "tiles"), exist_ok=True)
    try:
        src_ids = [s.id for s in sources.load_sources(cfg.manifest)]
    except Exception as exc:
        raise StageError("tile", cfg.manifest, exc)
    jobs = [
        (sid, cfg.manifest, cfg.out_dir, cfg.window, cfg.stride, cfg.min_clip_fraction)
        for sid in src_ids
    ]
    try:
        if cfg.workers > 1:
            with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
                per_source = list(pool.map(_tile_one_source, jobs))
        else:
            per_source = [_tile_one_source(j) for j in jobs]
    except Exception as exc:
        raise StageError("tile", cfg.manifest, exc)
    entries = [e for group in per_source for e in group]
    entries.sort(key=lambda e: (e["source_id"], e["origin"][1], e["origin"][0]))
    _dump({"tiles": entries}, out)
    _log_stage("tile", sources=len(src_ids), tiles=len(entries))
    return out


# ------------------------------------------------------------- target stage

def _load_tile(entry, out_dir):
    pixels = sources.read_rgb(os.path.join(out_dir, entry["file"]))
    anns = [
        tiling.InstanceAnnotation(
            id=a["id"], category=a["category"],
            mask=rle_decode(RleMask(tuple(a["rle"]["size"]), a["rle"]["counts"])),
        )
        for a in entry["annotations"]
    ]
    raster = None
    legend = None
    if entry.get("labels"):
        import cv2
        raster = cv2.imread(os.path.join(out_dir, entry["labels"]), cv2.IMREAD_UNCHANGED)
        raster = raster.astype(np.int32)
        legend = {int(k): v for k, v in entry.get("legend", {}).items()}
    return tiling.Tile(
        id=entry["id"], source_id=entry["source_id"], origin=tuple(entry["origin"]),
        pixels=pixels, annotations=anns, label_raster=raster, legend=legend,
    )


def _targets_one_tile(args):
    entry, out_dir, eps, min_pts, max_dist, promote = args
    tile = _load_tile(entry, out_dir)
    tile_targets = targets.build_targets(tile, eps, min_pts, tuple(promote))
    cues = targets.extract_cues(tile, tile_targets, max_dist)
    out = []
    for t in tile_targets:
        r = rle_encode(t.mask)
        c = cues[t.id]
        out.append(
            {
                "id": t.id, "tile_id": tile.id, "kind": t.kind,
                "category": t.category, "bbox": list(t.bbox),
                "members": t.members,
                "rle": {"size": list(r.size), "counts": r.counts},
                "cues": {
                    "grid_cell": c.grid_cell,
                    "extreme_flags": list(c.extreme_flags),
                    "color": c.color,
                    "relations": [[d, n] for d, n in c.relations],
                },
            }
        )
    return out


def stage_targets(cfg: PipelineConfig) -> str:
    out = os.path.join(cfg.out_dir, "targets.json")
    if os.path.exists(out):
        return out
    tiles = _load(stage_tile(cfg))["tiles"]
    jobs = [
        (e, cfg.out_dir, cfg.eps, cfg.min_pts, cfg.relation_max_dist, cfg.promote_classes)
        for e in tiles
    ]
    try:
        if cfg.workers > 1:
            with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
                per_tile = list(pool.map(_targets_one_tile, jobs))
        else:
            per_tile = [_targets_one_tile(j) for j in jobs]
    except Exception as exc:
        raise StageError("targets", "tiles", exc)
    all_targets = [t for group in per_tile for t in group]
    all_targets.sort(key=lambda t: t["id"])
    _dump({"targets": all_targets}, out)
    _log_stage("targets", targets=len(all_targets))
    return out


# --------------------------------------------------- generate / dedupe stages

def _target_from_record(rec):
    return targets.Target(
        id=rec["id"], kind=rec["kind"], category=rec["category"],
        mask=rle_decode(RleMask(tuple(rec["rle"]["size"]), rec["rle"]["counts"])),
        bbox=tuple(rec["bbox"]), members=list(rec["members"]),
    )


def stage_generate(cfg: PipelineConfig) -> str:
    out = os.path.join(cfg.out_dir, "expressions_raw.json")
    if os.path.exists(out):
        return out
    records = _load(stage_targets(cfg))["targets"]
    cat_by_id = {r["id"]: r["category"] for r in records}
    exprs = []
    for rec in records:
        cues = targets.CueSet(
            category_name=rec["category"],
            grid_cell=rec["cues"]["grid_cell"],
            extreme_flags=rec["cues"]["extreme_flags"],
            color=rec["cues"]["color"],
            relations=[
                (d, n, cat_by_id.get(n, rec["category"]))
                for d, n in rec["cues"]["relations"]
            ],
        )
        target = targets.Target(
            id=rec["id"], kind=rec["kind"], category=rec["category"],
            mask=np.zeros((1, 1)), bbox=tuple(rec["bbox"]), members=rec["members"],
        )
        for e in expressions.generate_rule_expressions(target, cues):
            exprs.append(
                {"target_id": e.target_id, "tile_id": rec["tile_id"],
                 "text": e.text, "source": "rule"}
            )
    _dump({"expressions": exprs}, out)
    _log_stage("generate", expressions=len(exprs))
    return out


def stage_dedupe(cfg: PipelineConfig) -> str:
    out = os.path.join(cfg.out_dir, "expressions.json")
    if os.path.exists(out):
        return out
    raw = _load(stage_generate(cfg))["expressions"]
    by_tile = {}
    for e in raw:
        by_tile.setdefault(e["tile_id"], []).append(e)
    kept = []
    for tile_id in sorted(by_tile):
        tile_exprs = [
            expressions.Expression(e["text"], e["target_id"], e["source"])
            for e in by_tile[tile_id]
        ]
        for e in expressions.dedupe_image(tile_exprs):
            kept.append(
                {"target_id": e.target_id, "tile_id": tile_id,
                 "text": e.text, "source": e.source}
            )
    for i, e in enumerate(kept):
        e["id"] = f"e{i + 1:07d}"
    _dump({"expressions": kept}, out)
    _log_stage("dedupe", raw=len(raw), kept=len(kept))
    return out


# ------------------------------------------------------------- enhance stage

def stage_enhance(cfg: PipelineConfig) -> str:
    out = os.path.join(cfg.out_dir, "enhanced.json")
    if os.path.exists(out):
        return out
    exprs = _load(stage_dedupe(cfg))["expressions"]
    records = {r["id"]: r for r in _load(stage_targets(cfg))["targets"]}
    tiles = {e["id"]: e for e in _load(stage_tile(cfg))["tiles"]}

    by_target = {}
    for e in exprs:
        by_target.setdefault(e["target_id"], []).append(e)
    texts_by_tile = {}
    for e in exprs:
        texts_by_tile.setdefault(e["tile_id"], set()).add(e["text"])

    endpoint = EndpointConfig(
        url=cfg.enhancer_url or os.environ.get("ENHANCER_URL", ""),
        model=cfg.enhancer_model or os.environ.get("ENHANCER_MODEL", ""),
        api_key=cfg.enhancer_key or os.environ.get("ENHANCER_KEY", ""),
    )
    if not endpoint.url:
        raise StageError("enhance", "config", "no enhancer endpoint configured")
    client = EnhancerClient(endpoint, cfg.cache_dir, cfg.enhancer_concurrency)

    payloads = []
    for target_id in sorted(by_target):
        rec = records[target_id]
        tile = _load_tile(tiles[rec["tile_id"]], cfg.out_dir)
        guides = render_guides(tile, _target_from_record(rec))
        payloads.append(
            PromptPayload(
                target_id=target_id,
                task1_inputs=[e["text"] for e in by_target[target_id]],
                guide_images=guides,
            )
        )
    results = client.enhance_batch(payloads)

    enhanced = {}
    seen_by_tile = {k: set(v) for k, v in texts_by_tile.items()}
    failed = 0
    for result in results:
        rec = records[result.target_id]
        if result.failed:
            failed += 1
            continue
        validate_enhancement(result, seen_by_tile[rec["tile_id"]])
        seen_by_tile[rec["tile_id"]].update(result.valid_language)
        seen_by_tile[rec["tile_id"]].update(result.valid_visual)
        enhanced[result.target_id] = {
            "language": result.valid_language,
            "visual": result.valid_visual,
        }
    _dump({"enhanced": enhanced}, out)
    _log_stage("enhance", targets=len(payloads), failed=failed,
               requests=client.request_count)
    return out


# -------------------------------------------------------------- export stage

def stage_export(cfg: PipelineConfig, skip_enhance: bool = True) -> str:
    out = os.path.join(cfg.out_dir, "manifest.json")
    if os.path.exists(out):
        return out
    tiles = _load(stage_tile(cfg))["tiles"]
    records = _load(stage_targets(cfg))["targets"]
    exprs = _load(stage_dedupe(cfg))["expressions"]
    enhanced = {}
    if not skip_enhance:
        enhanced = _load(stage_enhance(cfg))["enhanced"]

    referenced = {e["target_id"] for e in exprs}
    splits = dataset.assign_splits(
        [t["source_id"] for t in tiles], cfg.test_fraction, cfg.seed
    )

    m = dataset.Manifest()
    tile_kind = {}
    for entry in tiles:
        tile_kind[entry["id"]] = "semantic" if entry.get("labels") else "instance"
        split = splits[entry["source_id"]]
        provenance = None
        if split == "train" and cfg.p_filter > 0:
            rng = np.random.default_rng(filters.image_stream_seed(cfg.seed, entry["id"]))
            spec = filters.sample_filter(rng, cfg.p_filter)
            if spec.kind != "none":
                suffix = {"grayscale": "_bw", "grayscale_grain": "_grain",
                          "sepia_noise": "_sepia"}[spec.kind]
                spec.gamma = cfg.gamma
                spec.contrast = cfg.contrast
                spec.grain_sigma = cfg.grain_sigma
                spec.noise_high = cfg.noise_high
                spec.seed = filters.image_stream_seed(cfg.seed, entry["id"] + suffix)
                rgb = sources.read_rgb(os.path.join(cfg.out_dir, entry["file"]))
                degraded = filters.apply(spec, rgb)
                filtered_file = entry["file"].replace(".png", f"{suffix}.png")
                sources.write_rgb(os.path.join(cfg.out_dir, filtered_file), degraded)
                provenance = {"kind": spec.kind, "seed": spec.seed,
                              "file": filtered_file}
        m.images.append(
            dataset.ManifestImage(
                id=entry["id"], file=entry["file"], split=split,
                source_dataset=tile_kind[entry["id"]], source_id=entry["source_id"],
                filter=provenance,
            )
        )

    for rec in records:
        if rec["id"] not in referenced:
            continue  # all of this target's expressions were ambiguous
        m.targets.append(
            dataset.ManifestTarget(
                id=rec["id"], image_id=rec["tile_id"], kind=rec["kind"],
                category=rec["category"],
                rle=RleMask(tuple(rec["rle"]["size"]), rec["rle"]["counts"]),
                bbox=tuple(rec["bbox"]),
            )
        )

    for e in exprs:
        m.expressions.append(
            dataset.ManifestExpression(
                id=e["id"], target_id=e["target_id"], text=e["text"], source="rule"
            )
        )
    counter = len(m.expressions)
    for target_id in sorted(enhanced):
        if target_id not in referenced:
            continue
        for source, key in (("llm_language", "language"), ("llm_visual", "visual")):
            for text in enhanced[target_id][key]:
                counter += 1
                m.expressions.append(
                    dataset.ManifestExpression(
                        id=f"e{counter:07d}", target_id=target_id,
                        text=text, source=source,
                    )
                )

    dataset.validate_manifest(m)
    dataset.save_manifest(m, cfg.out_dir)
    _log_stage("export", images=len(m.images), targets=len(m.targets),
               expressions=len(m.expressions))
    return out


def stage_stats(cfg: PipelineConfig) -> str:
    out = os.path.join(cfg.out_dir, "stats.json")
    if os.path.exists(out):
        return out
    m = dataset.load_manifest(os.path.join(cfg.out_dir, "manifest.json"))
    stats = dataset.compute_stats(m)
    _dump(stats, out)
    _log_stage("stats", total=stats["total_expressions"])
    return out


def run_pipeline(cfg: PipelineConfig, skip_enhance: bool = True) -> dict:
    """Run every stage in order; returns the stats report."""
    os.makedirs(cfg.out_dir, exist_ok=True)
    stage_tile(cfg)
    stage_targets(cfg)
    stage_generate(cfg)
    stage_dedupe(cfg)
    if not skip_enhance:
        stage_enhance(cfg)
    stage_export(cfg, skip_enhance=skip_enhance)
    stage_stats(cfg)
    return _load(os.path.join(cfg.out_dir, "stats.json"))
