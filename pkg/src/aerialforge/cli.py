"""``forge`` command line interface.

Subcommands: tile, targets, generate, dedupe, enhance, filter, export, stats,
eval, run, demo. Exit codes: 0 ok, 2 config error, 3 stage failure.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import dataset, filters, metrics, pipeline, sources, synthetic
from .config import ConfigError, load_config
from .rle import RleMask, rle_decode

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3


def _add_common(p):
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--manifest", help="input source manifest")
    p.add_argument("--out", dest="out_dir", help="output directory")
    p.add_argument("--cache", dest="cache_dir", help="enhancement cache directory")
    p.add_argument("--seed", type=int, help="global seed")
    p.add_argument("--workers", type=int, help="worker count")


def _build_parser():
    parser = argparse.ArgumentParser(prog="forge")
    sub = parser.add_subparsers(dest="command", required=True)

    for name in ("tile", "targets", "generate", "dedupe", "export", "stats", "run"):
        p = sub.add_parser(name)
        _add_common(p)
        if name == "tile":
            p.add_argument("--window", type=int)
            p.add_argument("--stride", type=int)
        if name == "run":
            p.add_argument("--skip-enhance", action="store_true")
        if name == "stats":
            p.add_argument("--format", choices=("text", "json"), default="text")

    p = sub.add_parser("enhance")
    _add_common(p)
    p.add_argument("--concurrency", type=int, dest="enhancer_concurrency")
    p.add_argument("--dry-run-cost", action="store_true",
                   help="print the estimated request cost and exit")

    p = sub.add_parser("filter")
    p.add_argument("--kind", required=True, choices=filters.FILTER_KINDS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", dest="outfile", required=True)

    p = sub.add_parser("eval")
    p.add_argument("--gt", required=True, help="dataset manifest with ground truth")
    p.add_argument("--pred", required=True, help="directory of per-expression predictions")
    p.add_argument("--report", choices=("text", "json"), default="text")

    p = sub.add_parser("demo")
    p.add_argument("--out", dest="out_dir", required=True)
    p.add_argument("--seed", type=int, default=7)
    return parser


def _config_from_args(args):
    overrides = {
        k: v
        for k, v in vars(args).items()
        if k not in ("command", "config", "skip_enhance", "format", "dry_run_cost")
        and v is not None
    }
    return load_config(getattr(args, "config", None), overrides)


def cmd_eval(args) -> int:
    m = dataset.load_manifest(args.gt)
    image_by_id = {i.id: i for i in m.images}
    target_by_id = {t.id: t for t in m.targets}
    samples = []
    for e in m.expressions:
        target = target_by_id[e.target_id]
        pred = _read_prediction(args.pred, e.id, target.rle.size)
        if pred is None:
            continue
        image = image_by_id[target.image_id]
        condition = "historic" if image.filter else "clean"
        samples.append(
            metrics.EvalSample(
                expression_id=e.id, gt=dataset.target_mask(target),
                pred=pred, condition=condition,
            )
        )
    if not samples:
        print("error: no predictions found", file=sys.stderr)
        return EXIT_STAGE
    report = metrics.evaluate(samples)
    if args.report == "json":
        print(json.dumps(report, indent=1, sort_keys=True))
    else:
        for name, row in report.items():
            if row is None:
                continue
            passes = "  ".join(
                f"{k}={row[k]:.4f}" for k in row if k.startswith("pass@")
            )
            print(f"{name:>9}  n={row['n']:<6} mIoU={row['miou']:.4f} "
                  f"oIoU={row['oiou']:.4f}  {passes}")
    return EXIT_OK


def _read_prediction(pred_dir, expression_id, size):
    png = os.path.join(pred_dir, expression_id + ".png")
    if os.path.exists(png):
        import cv2
        img = cv2.imread(png, cv2.IMREAD_GRAYSCALE)
        return (img > 0).astype(np.uint8)
    rle_path = os.path.join(pred_dir, expression_id + ".json")
    if os.path.exists(rle_path):
        with open(rle_path) as f:
            d = json.load(f)
        return rle_decode(RleMask(tuple(d["size"]), d["counts"]))
    return None


def cmd_filter(args) -> int:
    rgb = sources.read_rgb(args.infile)
    spec = filters.FilterSpec(kind=args.kind, seed=args.seed)
    sources.write_rgb(args.outfile, filters.apply(spec, rgb))
    return EXIT_OK


def cmd_stats(args) -> int:
    cfg = _config_from_args(args)
    path = os.path.join(cfg.out_dir, "manifest.json")
    if args.manifest:
        path = args.manifest
    stats = dataset.compute_stats(dataset.load_manifest(path))
    if args.format == "json":
        print(json.dumps(stats, indent=1, sort_keys=True))
    else:
        print(f"images:      {stats['images']}")
        print(f"targets:     {stats['targets']}")
        print(f"expressions: {stats['total_expressions']}")
        for key, count in stats["expressions_by_source"].items():
            print(f"  {key:<14} {count}")
        for key, count in stats["expressions_by_kind"].items():
            print(f"  {key:<14} {count}")
    return EXIT_OK


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    args = _build_parser().parse_args(argv)

    try:
        if args.command == "demo":
            path = synthetic.write_demo_corpus(args.out_dir, args.seed)
            print(path)
            return EXIT_OK
        if args.command == "filter":
            return cmd_filter(args)
        if args.command == "eval":
            return cmd_eval(args)
        if args.command == "stats":
            return cmd_stats(args)

        cfg = _config_from_args(args)
        if args.command == "tile":
            pipeline.stage_tile(cfg)
        elif args.command == "targets":
            pipeline.stage_targets(cfg)
        elif args.command == "generate":
            pipeline.stage_generate(cfg)
        elif args.command == "dedupe":
            pipeline.stage_dedupe(cfg)
        elif args.command == "enhance":
            if args.dry_run_cost:
                from .enhancer import CostModel, estimate_cost
                exprs = pipeline._load(pipeline.stage_dedupe(cfg))["expressions"]
                n = len({e["target_id"] for e in exprs})
                o3 = CostModel(2.00, 8.00, 1670.8, 2173.3)
                print(f"targets: {n}, estimated o3 cost: ${estimate_cost(n, o3):.2f}")
            else:
                pipeline.stage_enhance(cfg)
        elif args.command == "export":
            pipeline.stage_export(cfg)
        elif args.command == "run":
            skip = getattr(args, "skip_enhance", False)
            endpoint = cfg.enhancer_url or os.environ.get("ENHANCER_URL", "")
            stats = pipeline.run_pipeline(cfg, skip_enhance=skip or not endpoint)
            print(json.dumps(
                {"total_expressions": stats["total_expressions"],
                 "images": stats["images"], "targets": stats["targets"]},
                sort_keys=True))
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except pipeline.StageError as exc:
        print(f"stage failure: {exc}", file=sys.stderr)
        return EXIT_STAGE


def entrypoint():
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
