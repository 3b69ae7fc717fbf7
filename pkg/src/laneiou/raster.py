"""Pixel-mask lane IoU, the quantity the benchmark metric actually measures.

Lanes are stroked as fixed-width polylines with round joins and caps: a pixel
whose integer center lies strictly closer than ``width_px / 2`` to the
polyline is set. No anti-aliasing, so output is deterministic.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DegenerateLaneError, MaskError
from .lane_model import Lane, RowGrid

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MaskSpec:
    width_px: float = 30.0
    resolution: tuple[int, int] = (1640, 590)

    def __post_init__(self):
        if self.width_px < 1:
            raise ValueError("width_px must be >= 1")
        w, h = self.resolution
        if w <= 0 or h <= 0:
            raise ValueError("resolution must be positive")
        object.__setattr__(self, "resolution", (int(w), int(h)))

    def scaled(self, factor: float) -> "MaskSpec":
        w, h = self.resolution
        return MaskSpec(self.width_px * factor, (round(w * factor), round(h * factor)))


CULANE_MASK = MaskSpec(30.0, (1640, 590))
CURVELANES_MASK = MaskSpec(5.0, (224, 224))


@dataclass(frozen=True, eq=False)
class LaneMask:
    """Binary bitmap, shape (height, width); ``bbox`` is (r0, r1, c0, c1) half-open, or None when empty."""

    bitmap: np.ndarray
    bbox: Optional[tuple[int, int, int, int]] = None

    @property
    def resolution(self) -> tuple[int, int]:
        h, w = self.bitmap.shape
        return w, h

    @property
    def area(self) -> int:
        return int(np.count_nonzero(self.bitmap))

    def is_empty(self) -> bool:
        return self.bbox is None


def rasterize_points(points: np.ndarray, spec: MaskSpec) -> LaneMask:
    """Stroke a polyline given in mask pixel coordinates."""
    w, h = spec.resolution
    bitmap = np.zeros((h, w), dtype=bool)
    pts = np.asarray(points, dtype=float)
    radius = spec.width_px / 2
    r2 = radius * radius
    for (x0, y0), (x1, y1) in zip(pts[:-1], pts[1:]):
        c0 = max(int(np.floor(min(x0, x1) - radius)), 0)
        c1 = min(int(np.ceil(max(x0, x1) + radius)) + 1, w)
        r0 = max(int(np.floor(min(y0, y1) - radius)), 0)
        r1 = min(int(np.ceil(max(y0, y1) + radius)) + 1, h)
        if c0 >= c1 or r0 >= r1:
            continue
        cx = np.arange(c0, c1, dtype=float)[None, :]
        cy = np.arange(r0, r1, dtype=float)[:, None]
        sx, sy = x1 - x0, y1 - y0
        seg2 = sx * sx + sy * sy
        if seg2 > 0:
            t = np.clip(((cx - x0) * sx + (cy - y0) * sy) / seg2, 0.0, 1.0)
        else:
            t = 0.0
        ex = cx - (x0 + t * sx)
        ey = cy - (y0 + t * sy)
        bitmap[r0:r1, c0:c1] |= ex * ex + ey * ey < r2
    return LaneMask(bitmap, _bbox(bitmap))


def rasterize(lane: Lane, grid: RowGrid, spec: MaskSpec = CULANE_MASK) -> LaneMask:
    if lane.n_rows != grid.n_rows:
        raise ValueError(f"lane has {lane.n_rows} rows but grid has {grid.n_rows}")
    if lane.n_valid < 2:
        raise DegenerateLaneError(f"lane needs at least 2 valid rows, got {lane.n_valid}")
    w, h = spec.resolution
    pts = np.stack([lane.xs[lane.valid] * w, grid.ys_norm[lane.valid] * h], axis=1)
    mask = rasterize_points(pts, spec)
    if mask.is_empty():
        log.warning("lane lies entirely outside the %dx%d frame; mask is empty", w, h)
    return mask


def mask_iou(a: LaneMask, b: LaneMask) -> float:
    if a.bitmap.shape != b.bitmap.shape:
        raise MaskError(f"resolution mismatch: {a.resolution} vs {b.resolution}")
    if a.bbox is None and b.bbox is None:
        raise MaskError("both masks are empty")
    if a.bbox is None or b.bbox is None:
        return 0.0
    r0, r1 = min(a.bbox[0], b.bbox[0]), max(a.bbox[1], b.bbox[1])
    c0, c1 = min(a.bbox[2], b.bbox[2]), max(a.bbox[3], b.bbox[3])
    wa = a.bitmap[r0:r1, c0:c1]
    wb = b.bitmap[r0:r1, c0:c1]
    inter = np.count_nonzero(wa & wb)
    union = np.count_nonzero(wa | wb)
    return inter / union


def mask_iou_matrix(pred_masks, gt_masks) -> np.ndarray:
    out = np.zeros((len(pred_masks), len(gt_masks)))
    for j, pm in enumerate(pred_masks):
        for i, gm in enumerate(gt_masks):
            out[j, i] = mask_iou(pm, gm) if not (pm.is_empty() and gm.is_empty()) else 0.0
    return out


def write_pgm(mask: LaneMask, path: str | Path) -> None:
    """Binary PGM (P5, maxval 255) for eyeballing masks."""
    h, w = mask.bitmap.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write((mask.bitmap.astype(np.uint8) * 255).tobytes())


def read_pgm(path: str | Path) -> LaneMask:
    data = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        m = re.compile(rb"\s*(\S+)").match(data, pos)
        if m is None:
            raise MaskError(f"{path}: truncated PGM header")
        fields.append(m.group(1))
        pos = m.end()
    if fields[0] != b"P5" or int(fields[3]) != 255:
        raise MaskError(f"{path}: not an 8-bit binary PGM")
    w, h = int(fields[1]), int(fields[2])
    pixels = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos + 1).reshape(h, w)
    bitmap = pixels > 0
    return LaneMask(bitmap, _bbox(bitmap))


def _bbox(bitmap: np.ndarray):
    rows = np.flatnonzero(bitmap.any(axis=1))
    if rows.size == 0:
        return None
    cols = np.flatnonzero(bitmap.any(axis=0))
    return (int(rows[0]), int(rows[-1]) + 1, int(cols[0]), int(cols[-1]) + 1)
