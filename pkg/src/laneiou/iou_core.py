"""Row-wise lane similarity: LaneIoU, the constant-width LineIoU, and the LaneIoU gradient."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateLaneError, UndefinedIoUError
from .lane_model import Lane, RowGrid, local_widths

LANE_IOU = "lane_iou"
LINE_IOU = "line_iou"
MODES = (LANE_IOU, LINE_IOU)

#: value stored in an IoU matrix for pairs whose IoU is undefined
UNDEFINED_IOU = -1.0


@dataclass(frozen=True)
class IoUConfig:
    w_lane: float = 15 / 800
    mode: str = LANE_IOU
    clip_to_image: bool = False

    def __post_init__(self):
        if not self.w_lane > 0:
            raise ValueError(f"w_lane must be positive, got {self.w_lane}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")


@dataclass(frozen=True, eq=False)
class IoUMatrix:
    """Dense (predictions x ground truths) similarity matrix."""

    values: np.ndarray
    mode: str

    @property
    def shape(self):
        return self.values.shape


def half_widths(lane: Lane, grid: RowGrid, cfg: IoUConfig) -> np.ndarray:
    if cfg.mode == LANE_IOU:
        return local_widths(lane, grid, cfg.w_lane)
    if lane.n_valid < 2:
        raise DegenerateLaneError(f"lane needs at least 2 valid rows, got {lane.n_valid}")
    return np.where(lane.valid, cfg.w_lane / 2, 0.0)


def _stack(lanes: Sequence[Lane], grid: RowGrid, cfg: IoUConfig):
    n = len(lanes)
    xs = np.zeros((n, grid.n_rows))
    valid = np.zeros((n, grid.n_rows), dtype=bool)
    widths = np.zeros((n, grid.n_rows))
    ok = np.ones(n, dtype=bool)
    for k, lane in enumerate(lanes):
        if lane.n_rows != grid.n_rows:
            raise ValueError(f"lane has {lane.n_rows} rows but grid has {grid.n_rows}")
        try:
            widths[k] = half_widths(lane, grid, cfg)
        except DegenerateLaneError:
            ok[k] = False
            continue
        valid[k] = lane.valid
        xs[k] = np.where(lane.valid, lane.xs, 0.0)
    return xs, valid, widths, ok


def _edges(xs, widths, clip):
    left, right = xs - widths, xs + widths
    if clip:
        left, right = np.clip(left, 0.0, 1.0), np.clip(right, 0.0, 1.0)
    return left, right


def _row_terms(xp, vp, wp, xq, vq, wq, clip):
    """Per-row intersection and union; all arrays broadcast over a trailing row axis."""
    lp, rp = _edges(xp, wp, clip)
    lq, rq = _edges(xq, wq, clip)
    both = vp & vq
    inter = np.where(both, np.minimum(rp, rq) - np.maximum(lp, lq), 0.0)
    union = np.where(
        both,
        np.maximum(rp, rq) - np.minimum(lp, lq),
        np.where(vp, rp - lp, np.where(vq, rq - lq, 0.0)),
    )
    return inter, union


def _pair_arrays(p: Lane, q: Lane, grid: RowGrid, cfg: IoUConfig):
    xs, valid, widths, ok = _stack([p, q], grid, cfg)
    if not ok.all():
        raise UndefinedIoUError("both lanes need at least 2 valid rows")
    return xs, valid, widths


def lane_iou(p: Lane, q: Lane, grid: RowGrid, cfg: IoUConfig = IoUConfig()) -> float:
    """Sum of per-row intersections over sum of per-row unions.

    On rows both lanes share, the intersection is negative when the virtual
    lanes do not overlap. Rows covered by one lane add its full width to the
    union only. The result lies in [-1, 1].
    """
    xs, valid, widths = _pair_arrays(p, q, grid, cfg)
    inter, union = _row_terms(xs[0], valid[0], widths[0], xs[1], valid[1], widths[1], cfg.clip_to_image)
    total_u = union.sum()
    if total_u <= 0:
        raise UndefinedIoUError("union of the two lanes is empty")
    return float(inter.sum() / total_u)


def line_iou(p: Lane, q: Lane, grid: RowGrid, w_lane: float = 15 / 800, clip_to_image: bool = False) -> float:
    return lane_iou(p, q, grid, IoUConfig(w_lane, LINE_IOU, clip_to_image))


def iou_matrix(preds: Sequence[Lane], gts: Sequence[Lane], grid: RowGrid,
               cfg: IoUConfig = IoUConfig()) -> IoUMatrix:
    """values[j, i] = lane_iou(preds[j], gts[i]); undefined pairs hold ``UNDEFINED_IOU``."""
    m, n = len(preds), len(gts)
    if m == 0 or n == 0:
        return IoUMatrix(np.zeros((m, n)), cfg.mode)
    xp, vp, wp, okp = _stack(preds, grid, cfg)
    xq, vq, wq, okq = _stack(gts, grid, cfg)
    inter, union = _row_terms(
        xp[:, None], vp[:, None], wp[:, None],
        xq[None], vq[None], wq[None],
        cfg.clip_to_image,
    )
    total_i = inter.sum(-1)
    total_u = union.sum(-1)
    defined = (total_u > 0) & okp[:, None] & okq[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        values = np.where(defined, total_i / np.where(defined, total_u, 1.0), UNDEFINED_IOU)
    return IoUMatrix(values, cfg.mode)


def _tie_step(a, b):
    """1 where a < b, 0.5 on ties, 0 otherwise."""
    return np.where(a < b, 1.0, np.where(a == b, 0.5, 0.0))


def lane_iou_grad(p: Lane, q: Lane, grid: RowGrid, cfg: IoUConfig = IoUConfig()) -> np.ndarray:
    """Subgradient of ``lane_iou(p, q)`` with respect to ``p.xs``.

    Widths are held fixed (no gradient through the tilt correction). Ties in
    the min/max edges split the subgradient evenly. Rows where ``p`` is
    invalid get 0.
    """
    xs, valid, widths = _pair_arrays(p, q, grid, cfg)
    clip = cfg.clip_to_image
    inter, union = _row_terms(xs[0], valid[0], widths[0], xs[1], valid[1], widths[1], clip)
    total_i, total_u = inter.sum(), union.sum()
    if total_u <= 0:
        raise UndefinedIoUError("union of the two lanes is empty")

    lp, rp = _edges(xs[0], widths[0], clip)
    lq, rq = _edges(xs[1], widths[1], clip)
    if clip:
        raw_l, raw_r = xs[0] - widths[0], xs[0] + widths[0]
        dl = ((raw_l > 0) & (raw_l < 1)).astype(float)
        dr = ((raw_r > 0) & (raw_r < 1)).astype(float)
    else:
        dl = dr = np.ones(grid.n_rows)

    both = valid[0] & valid[1]
    only_p = valid[0] & ~valid[1]
    d_inter = np.where(both, _tie_step(rp, rq) * dr - _tie_step(lq, lp) * dl, 0.0)
    d_union = np.where(
        both,
        _tie_step(rq, rp) * dr - _tie_step(lp, lq) * dl,
        np.where(only_p, dr - dl, 0.0),
    )
    return (d_inter * total_u - total_i * d_union) / total_u**2


def lane_iou_loss(p: Lane, q: Lane, grid: RowGrid, cfg: IoUConfig = IoUConfig()) -> tuple[float, np.ndarray]:
    """``1 - lane_iou`` and its gradient with respect to ``p.xs``."""
    return 1.0 - lane_iou(p, q, grid, cfg), -lane_iou_grad(p, q, grid, cfg)
