"""Dynamic-k training sample assignment driven by lane similarity.

Each GT gets ``k_i = clamp(floor(sum of positive IoUs), 1, k_max)`` predictions,
chosen as the ``k_i`` cheapest under
``cost = -minmax_normalized_iou + lambda * focal_cost(confidence)``.
A prediction picked by several GTs keeps only its cheapest pair.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .iou_core import IoUConfig, LANE_IOU, LINE_IOU, iou_matrix
from .lane_model import Lane, RowGrid, lane_angle

BASELINE = "baseline"
SIMILARITIES = {LANE_IOU: LANE_IOU, BASELINE: LINE_IOU}

ANGLE_CSV_COLUMNS = ("angle_bin_start_deg", "mean_assign_count", "mean_conf_l1_error", "n_gts")


@dataclass(frozen=True)
class AssignConfig:
    """``k_similarity`` / ``cost_similarity`` override ``similarity`` per stage for ablations."""

    k_max: int = 4
    w_lane_k: float = 15 / 800
    w_lane_cost: float = 60 / 800
    lam: float = 1.0
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    similarity: str = LANE_IOU
    k_similarity: Optional[str] = None
    cost_similarity: Optional[str] = None

    def __post_init__(self):
        if self.k_max < 1:
            raise ValueError("k_max must be >= 1")
        if self.w_lane_k <= 0 or self.w_lane_cost <= 0:
            raise ValueError("widths must be positive")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        for s in (self.similarity, self.k_similarity, self.cost_similarity):
            if s is not None and s not in SIMILARITIES:
                raise ValueError(f"similarity must be one of {tuple(SIMILARITIES)}, got {s!r}")

    def iou_config(self, stage: str) -> IoUConfig:
        if stage == "k":
            sim, w = self.k_similarity or self.similarity, self.w_lane_k
        else:
            sim, w = self.cost_similarity or self.similarity, self.w_lane_cost
        return IoUConfig(w, SIMILARITIES[sim], clip_to_image=False)


CULANE_ASSIGN = AssignConfig()
CURVELANES_ASSIGN = AssignConfig(w_lane_k=5 / 224, w_lane_cost=20 / 224, lam=2.5)


@dataclass
class AssignmentResult:
    k: np.ndarray
    pairs: list[tuple[int, int, float]]  # (prediction j, gt i, cost), sorted by j

    def counts(self) -> np.ndarray:
        """Number of predictions actually assigned to each GT."""
        out = np.zeros(len(self.k), dtype=int)
        for _, i, _ in self.pairs:
            out[i] += 1
        return out

    def gt_of(self, m: int) -> np.ndarray:
        """GT index per prediction, -1 for negatives."""
        out = np.full(m, -1)
        for j, i, _ in self.pairs:
            out[j] = i
        return out


def dynamic_k(iou: np.ndarray, k_max: int) -> np.ndarray:
    iou = np.asarray(iou, dtype=float)
    total = np.maximum(iou, 0.0).sum(axis=0)
    return np.clip(np.floor(total), 1, k_max).astype(int)


def focal_cost(conf, alpha: float = 0.25, gamma: float = 2.0, eps: float = 1e-7):
    """Focal loss of the confidence against a positive label, ``-alpha (1-p)^gamma log p``."""
    p = np.clip(np.asarray(conf, dtype=float), eps, 1 - eps)
    out = -alpha * (1 - p) ** gamma * np.log(p)
    return float(out) if out.ndim == 0 else out


def normalize_columns(iou: np.ndarray) -> np.ndarray:
    iou = np.asarray(iou, dtype=float)
    if iou.shape[0] == 1:
        return np.ones_like(iou)
    lo = iou.min(axis=0, keepdims=True)
    hi = iou.max(axis=0, keepdims=True)
    return np.clip((iou - lo) / (hi - lo + 1e-9), 0.0, 1.0)


def cost_matrix(iou_cost: np.ndarray, confs: Sequence[float], cfg: AssignConfig = CULANE_ASSIGN) -> np.ndarray:
    cls = focal_cost(np.asarray(confs, dtype=float), cfg.focal_alpha, cfg.focal_gamma)
    return -normalize_columns(iou_cost) + cfg.lam * np.reshape(cls, (-1, 1))


def select(cost: np.ndarray, k: np.ndarray) -> AssignmentResult:
    """Per-GT top-k by cost (stable: lower prediction index wins ties), then conflict resolution."""
    m, n = cost.shape
    best: dict[int, tuple[float, int]] = {}
    for i in range(n):
        order = np.argsort(cost[:, i], kind="stable")[: min(int(k[i]), m)]
        for j in order:
            cand = (float(cost[j, i]), i)
            if j not in best or cand < best[j]:
                best[int(j)] = cand
    pairs = [(j, i, c) for j, (c, i) in sorted(best.items())]
    return AssignmentResult(np.asarray(k, dtype=int), pairs)


def assign(preds: Sequence[Lane], gts: Sequence[Lane], confs: Optional[Sequence[float]], grid: RowGrid,
           cfg: AssignConfig = CULANE_ASSIGN) -> AssignmentResult:
    """Assign predictions to GTs; ``confs`` defaults to each prediction's own confidence."""
    if confs is None:
        confs = [p.confidence for p in preds]
    n = len(gts)
    if len(preds) == 0:
        return AssignmentResult(np.ones(n, dtype=int), [])
    k = dynamic_k(iou_matrix(preds, gts, grid, cfg.iou_config("k")).values, cfg.k_max)
    cost = cost_matrix(iou_matrix(preds, gts, grid, cfg.iou_config("cost")).values, confs, cfg)
    return select(cost, k)


@dataclass
class AngleBinStats:
    bin_start: np.ndarray
    mean_assign_count: np.ndarray
    mean_conf_l1_error: np.ndarray  # NaN where no prediction fell in the bin
    n_gts: np.ndarray

    def rows(self) -> list[dict]:
        return [
            {
                "angle_bin_start_deg": float(b),
                "mean_assign_count": float(c),
                "mean_conf_l1_error": None if np.isnan(e) else float(e),
                "n_gts": int(g),
            }
            for b, c, e, g in zip(self.bin_start, self.mean_assign_count, self.mean_conf_l1_error, self.n_gts)
        ]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(ANGLE_CSV_COLUMNS)
        for r in self.rows():
            w.writerow(["" if r[c] is None else repr(r[c]) if isinstance(r[c], float) else r[c]
                        for c in ANGLE_CSV_COLUMNS])
        return buf.getvalue()

    def count_variance(self, lo: float = 20.0, hi: float = 160.0) -> float:
        """Population variance of per-bin mean assignment counts for bins inside [lo, hi)."""
        sel = (self.bin_start >= lo) & (self.bin_start < hi)
        return float(np.var(self.mean_assign_count[sel]))


def angle_bin_stats(gt_angles: Sequence[float], assign_counts: Sequence[float], bin_width_deg: float = 10.0,
                    pred_angles: Optional[Sequence[float]] = None,
                    conf_errors: Optional[Sequence[float]] = None) -> AngleBinStats:
    """Bin per-GT assignment counts, and optionally per-prediction |confidence - metric IoU|, by lane angle.

    Bins with no GT are dropped.
    """
    gt_angles = np.asarray(gt_angles, dtype=float)
    assign_counts = np.asarray(assign_counts, dtype=float)
    nb = int(np.ceil(180.0 / bin_width_deg))
    gb = np.clip((gt_angles // bin_width_deg).astype(int), 0, nb - 1)
    n_gts = np.bincount(gb, minlength=nb)
    sums = np.bincount(gb, weights=assign_counts, minlength=nb)
    err_mean = np.full(nb, np.nan)
    if pred_angles is not None and len(pred_angles):
        pa = np.asarray(pred_angles, dtype=float)
        pb = np.clip((pa // bin_width_deg).astype(int), 0, nb - 1)
        n_p = np.bincount(pb, minlength=nb)
        e_sum = np.bincount(pb, weights=np.asarray(conf_errors, dtype=float), minlength=nb)
        has = n_p > 0
        err_mean[has] = e_sum[has] / n_p[has]
    keep = n_gts > 0
    return AngleBinStats(
        np.arange(nb)[keep] * bin_width_deg,
        sums[keep] / n_gts[keep],
        err_mean[keep],
        n_gts[keep],
    )


@dataclass
class AssignFrame:
    anchors: list[Lane]
    gts: list[Lane]


def collect_assignment_stats(frames: Iterable[AssignFrame], grid: RowGrid, cfg: AssignConfig = CULANE_ASSIGN,
                             bin_width_deg: float = 10.0) -> AngleBinStats:
    """Run ``assign`` on every frame and bin the per-GT assignment counts by fitted GT angle."""
    angles, counts = [], []
    for frame in frames:
        result = assign(frame.anchors, frame.gts, None, grid, cfg)
        angles.extend(lane_angle(g, grid) for g in frame.gts)
        counts.extend(result.counts())
    return angle_bin_stats(angles, counts, bin_width_deg)
