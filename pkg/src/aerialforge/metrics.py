"""Segmentation metrics: IoU, mean IoU, overall IoU, and Pass@tau."""

from dataclasses import dataclass

import numpy as np


@dataclass
class EvalSample:
    expression_id: str
    gt: np.ndarray
    pred: np.ndarray
    condition: str = "clean"  # clean | historic


def iou(gt: np.ndarray, pred: np.ndarray) -> float:
    """Intersection over union; 1.0 when both masks are empty."""
    if gt.shape != pred.shape:
        raise ValueError(f"mask shape mismatch: {gt.shape} vs {pred.shape}")
    gt = gt.astype(bool)
    pred = pred.astype(bool)
    union = int(np.logical_or(gt, pred).sum())
    if union == 0:
        return 1.0
    inter = int(np.logical_and(gt, pred).sum())
    return inter / union


def _intersection_union(sample: EvalSample):
    gt = sample.gt.astype(bool)
    pred = sample.pred.astype(bool)
    return int(np.logical_and(gt, pred).sum()), int(np.logical_or(gt, pred).sum())


def miou(samples: list) -> float:
    """Mean of per-sample IoU."""
    if not samples:
        raise ValueError("miou requires at least one sample")
    return float(np.mean([iou(s.gt, s.pred) for s in samples]))


def oiou(samples: list) -> float:
    """Sum of intersections over sum of unions."""
    if not samples:
        raise ValueError("oiou requires at least one sample")
    inter = 0
    union = 0
    for s in samples:
        i, u = _intersection_union(s)
        inter += i
        union += u
    if union == 0:
        return 1.0
    return inter / union


def pass_at(samples: list, tau: float) -> float:
    """Fraction of samples whose IoU meets or exceeds tau."""
    if not 0.0 < tau <= 1.0:
        raise ValueError("tau must be in (0, 1]")
    if not samples:
        return 0.0
    hits = sum(1 for s in samples if iou(s.gt, s.pred) >= tau)
    return hits / len(samples)


def evaluate(samples: list, taus=(0.5, 0.7, 0.9)) -> dict:
    """Full report with clean/historic breakdowns, Table-style row layout."""
    def row(subset):
        if not subset:
            return None
        r = {"n": len(subset), "miou": miou(subset), "oiou": oiou(subset)}
        for tau in taus:
            r[f"pass@{tau}"] = pass_at(subset, tau)
        return r

    report = {"all": row(samples)}
    for condition in ("clean", "historic"):
        subset = [s for s in samples if s.condition == condition]
        if subset:
            report[condition] = row(subset)
    return report
