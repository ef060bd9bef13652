"""Run-length encoding of binary masks.

Column-major scan, counts alternate background/foreground starting with
background, so an all-foreground mask encodes as [0, h*w].
"""

from dataclasses import dataclass

import numpy as np


@dataclass
class RleMask:
    size: tuple  # (height, width)
    counts: list


def rle_encode(mask: np.ndarray) -> RleMask:
    h, w = mask.shape
    flat = np.asarray(mask, dtype=np.uint8).flatten(order="F")
    counts = []
    if flat.size == 0:
        return RleMask(size=(h, w), counts=counts)
    change = np.nonzero(np.diff(flat))[0] + 1
    run_bounds = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(run_bounds).tolist()
    if flat[0] == 1:  # must start with a background count
        runs = [0] + runs
    return RleMask(size=(h, w), counts=[int(r) for r in runs])


def rle_decode(rle: RleMask) -> np.ndarray:
    h, w = rle.size
    total = sum(rle.counts)
    if any(c < 0 for c in rle.counts):
        raise ValueError("negative run length")
    if total != h * w:
        raise ValueError(f"run lengths sum to {total}, expected {h * w}")
    counts = np.asarray(rle.counts, dtype=np.int64)
    values = np.zeros(len(counts), dtype=np.uint8)
    values[1::2] = 1
    flat = np.repeat(values, counts)
    return flat.reshape((h, w), order="F")
