"""Synthetic lane data and the analysis harnesses built on it.

GT lanes are quadratic curves ``x(u) = x0 + u cot(theta) + kappa u^2 / H`` where
``u`` is the upward distance from the lane's bottom end in reference pixels.
Predictions are GTs pushed through their fitted anchor with jittered start,
angle and length, plus optional row-wise noise and spurious lanes. Every frame
draws from its own ``default_rng((seed, frame_index))`` stream, so generating
any subset of frames gives the same lanes as generating all of them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .assigner import AssignFrame
from .evaluator import EvalConfig, EvalFrame, EvalReport, evaluate
from .iou_core import IoUConfig, LANE_IOU, LINE_IOU, lane_iou
from .lane_model import AnchorParams, Lane, RowGrid, fit_anchor, lane_angle, render_anchor, truncate_to_frame
from .raster import CULANE_MASK, MaskSpec, mask_iou, mask_iou_matrix, rasterize

METRIC_GRID = RowGrid(72, 1640, 590)
ASSIGN_GRID = RowGrid(72, 800, 320)

ORACLE_MODES = ("confidence", "anchor", "length")
CORRELATION_COLUMNS = ("angle_deg", "mask_iou", "lane_iou", "line_iou")

MIN_ROWS = 6
_MAX_TRIES = 200


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_frames: int = 100
    n_videos: int = 10
    lanes_per_frame: tuple[int, int] = (2, 4)
    angle_range: tuple[float, float] = (25.0, 155.0)
    curvature_range: tuple[float, float] = (-0.3, 0.3)
    top_range: tuple[float, float] = (0.35, 0.55)
    bottom_range: tuple[float, float] = (0.9, 1.0)
    x_jitter: float = 0.0  # px, std of start-point shift
    angle_jitter: float = 0.0  # degrees, std
    length_jitter: float = 0.0  # fraction of height, std
    dx_jitter: float = 0.0  # px, amplitude of smooth row-wise noise
    conf_noise: float = 0.0  # std of Gaussian noise on confidence
    fp_rate: float = 0.0  # expected spurious predictions per frame
    extra_preds_per_gt: int = 0  # additional, worse-localized candidates per GT
    extra_scale: float = 3.0  # jitter multiplier for the extra candidates
    categories: tuple[str, ...] = ()
    grid: RowGrid = METRIC_GRID
    mask_spec: MaskSpec = CULANE_MASK

    def __post_init__(self):
        lo, hi = self.lanes_per_frame
        if not 0 <= lo <= hi:
            raise ValueError(f"bad lanes_per_frame {self.lanes_per_frame}")
        a0, a1 = self.angle_range
        if not 0 < a0 <= a1 < 180:
            raise ValueError(f"angle range must lie inside (0, 180), got {self.angle_range}")
        for name in ("curvature_range", "top_range", "bottom_range"):
            r = getattr(self, name)
            if r[0] > r[1]:
                raise ValueError(f"{name} is empty: {r}")
        if not (0 <= self.top_range[0] and self.top_range[1] < self.bottom_range[0] and self.bottom_range[1] <= 1):
            raise ValueError("top_range must lie above bottom_range inside [0, 1]")
        if self.extra_preds_per_gt < 0 or self.extra_scale < 0:
            raise ValueError("extra_preds_per_gt and extra_scale must be >= 0")
        if self.n_frames < 0 or self.n_videos < 1:
            raise ValueError("n_frames must be >= 0 and n_videos >= 1")
        for name in ("x_jitter", "angle_jitter", "length_jitter", "dx_jitter", "conf_noise", "fp_rate"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @property
    def noiseless(self) -> bool:
        return not (self.x_jitter or self.angle_jitter or self.length_jitter or self.dx_jitter)


def quadratic_lane(grid: RowGrid, x0: float, theta: float, kappa: float, top: float, bottom: float,
                   confidence: float = 1.0) -> Lane:
    """Sample one quadratic curve on ``grid``; ``x0`` is normalized, ``top``/``bottom`` normalized y."""
    cot = 1.0 / math.tan(math.radians(theta))
    u = bottom * grid.ref_height - grid.ys
    x_px = x0 * grid.ref_width + u * cot + kappa * u * u / grid.ref_height
    valid = (grid.ys_norm >= top - 1e-9) & (grid.ys_norm <= bottom + 1e-9)
    xs, valid = truncate_to_frame(np.where(valid, x_px / grid.ref_width, np.nan), valid)
    return Lane(xs, valid, confidence)


def random_lane(rng: np.random.Generator, cfg: SynthConfig) -> Lane:
    for _ in range(_MAX_TRIES):
        lane = quadratic_lane(
            cfg.grid,
            rng.uniform(0.05, 0.95),
            rng.uniform(*cfg.angle_range),
            rng.uniform(*cfg.curvature_range),
            rng.uniform(*cfg.top_range),
            rng.uniform(*cfg.bottom_range),
        )
        if lane.n_valid >= MIN_ROWS:
            return lane
    raise ValueError("synthetic ranges never produce a lane with enough in-frame rows")


def _smooth_noise(rng: np.random.Generator, n: int, amplitude: float) -> np.ndarray:
    if amplitude == 0:
        return np.zeros(n)
    t = np.linspace(0, 1, n)
    k = rng.normal(size=3)
    return amplitude * (k[0] * np.sin(math.pi * t) + k[1] * np.sin(2 * math.pi * t) + k[2] * np.sin(3 * math.pi * t)) / 2


def perturb(rng: np.random.Generator, gt: Lane, cfg: SynthConfig, scale: float = 1.0) -> Optional[Lane]:
    """A prediction derived from ``gt``; None when the perturbed lane leaves the frame."""
    if cfg.noiseless:
        return Lane(gt.xs, gt.valid)
    grid = cfg.grid
    a = fit_anchor(gt, grid)
    theta = float(np.clip(a.theta_a + rng.normal(0, scale * cfg.angle_jitter), 1.0, 179.0))
    length = max(a.length + rng.normal(0, scale * cfg.length_jitter), 2.0 / (grid.n_rows - 1))
    dx = a.dx + _smooth_noise(rng, grid.n_rows, scale * cfg.dx_jitter / grid.ref_width)
    x_a = a.x_a + rng.normal(0, scale * cfg.x_jitter) / grid.ref_width
    params = AnchorParams(x_a, a.y_a, theta, length, dx)
    lane = render_anchor(params, grid)
    return lane if lane.n_valid >= 2 else None


def _noisy_conf(rng: np.random.Generator, iou: float, sigma: float) -> float:
    return float(np.clip(iou + (rng.normal(0, sigma) if sigma else 0.0), 0.0, 1.0))


def generate_frame(cfg: SynthConfig, index: int) -> EvalFrame:
    rng = np.random.default_rng((cfg.seed, index))
    video = f"video_{index * cfg.n_videos // max(cfg.n_frames, 1):03d}"
    n_gt = int(rng.integers(cfg.lanes_per_frame[0], cfg.lanes_per_frame[1] + 1))
    gts = [random_lane(rng, cfg) for _ in range(n_gt)]

    raw = [perturb(rng, g, cfg) for g in gts]
    raw += [perturb(rng, g, cfg, cfg.extra_scale) for g in gts for _ in range(cfg.extra_preds_per_gt)]
    raw = [p for p in raw if p is not None]
    raw += [random_lane(rng, cfg) for _ in range(int(rng.poisson(cfg.fp_rate)) if cfg.fp_rate else 0)]
    if raw and gts:
        ious = mask_iou_matrix([rasterize(p, cfg.grid, cfg.mask_spec) for p in raw],
                               [rasterize(g, cfg.grid, cfg.mask_spec) for g in gts]).max(axis=1)
    else:
        ious = np.zeros(len(raw))
    preds = [p.with_confidence(_noisy_conf(rng, float(v), cfg.conf_noise)) for p, v in zip(raw, ious)]
    category = cfg.categories[int(rng.integers(len(cfg.categories)))] if cfg.categories else None
    return EvalFrame(f"{video}/{index:05d}.jpg", preds, gts, category, video)


def generate(cfg: SynthConfig) -> list[EvalFrame]:
    return [generate_frame(cfg, k) for k in range(cfg.n_frames)]


def _best_gt(frame: EvalFrame, grid: RowGrid, spec: MaskSpec) -> tuple[np.ndarray, np.ndarray]:
    if not frame.preds or not frame.gts:
        return np.full(len(frame.preds), -1), np.zeros(len(frame.preds))
    ious = mask_iou_matrix([rasterize(p, grid, spec) for p in frame.preds],
                           [rasterize(g, grid, spec) for g in frame.gts])
    best = ious.argmax(axis=1)
    return np.where(ious.max(axis=1) > 0, best, -1), ious.max(axis=1)


def _oracle_lane(pred: Lane, gt: Lane, mode: str, grid: RowGrid) -> Lane:
    p = fit_anchor(pred, grid)
    g = fit_anchor(gt, grid)
    if mode == "anchor":
        params = AnchorParams(g.x_a, g.y_a, g.theta_a, p.length, p.dx)
    else:
        # extend the predicted ray to the GT's start row and take the GT's extent
        cot = 1.0 / math.tan(math.radians(p.theta_a))
        shift = (p.y_a - g.y_a) * grid.ref_height * cot / grid.ref_width
        params = AnchorParams(p.x_a + shift, g.y_a, p.theta_a, g.length, p.dx)
    lane = render_anchor(params, grid, pred.confidence)
    return lane if lane.n_valid >= 2 else pred


def apply_oracle(frames: Sequence[EvalFrame], mode: str, grid: RowGrid, spec: MaskSpec = CULANE_MASK) -> list[EvalFrame]:
    """Replace one prediction component with its GT-derived value.

    ``confidence``: the score becomes the best mask IoU over the frame's GTs.
    ``anchor``: start point and angle come from the best GT's fitted anchor;
    the row-wise residuals and length are kept. ``length``: only the vertical
    extent is taken from the best GT. Predictions overlapping no GT are left alone.
    """
    if mode not in ORACLE_MODES:
        raise ValueError(f"mode must be one of {ORACLE_MODES}, got {mode!r}")
    out = []
    for frame in frames:
        best, best_iou = _best_gt(frame, grid, spec)
        if mode == "confidence":
            preds = [p.with_confidence(float(v)) for p, v in zip(frame.preds, best_iou)]
        else:
            preds = [p if b < 0 else _oracle_lane(p, frame.gts[b], mode, grid) for p, b in zip(frame.preds, best)]
        out.append(replace(frame, preds=preds))
    return out


def oracle_experiment(frames: Sequence[EvalFrame], mode: Optional[str], grid: RowGrid, cfg: EvalConfig) -> EvalReport:
    """Evaluate after applying an oracle; ``mode=None`` evaluates the raw predictions."""
    if mode is not None:
        frames = apply_oracle(frames, mode, grid, cfg.mask_spec)
    return evaluate(frames, replace(cfg, grid=grid))


def generate_pairs(seed: int, n: int, grid: RowGrid = METRIC_GRID, angle_range=(20.0, 160.0),
                   max_offset_px: float = 35.0, angle_jitter: float = 3.0,
                   top_range=(0.3, 0.6), length_jitter: float = 0.05) -> list[tuple[Lane, Lane]]:
    """Straight (prediction, GT) pairs with perpendicular offsets up to ``max_offset_px``."""
    rng = np.random.default_rng(seed)
    pairs = []
    while len(pairs) < n:
        theta = rng.uniform(*angle_range)
        top = rng.uniform(*top_range)
        x0 = rng.uniform(0.25, 0.75)
        off = rng.uniform(-max_offset_px, max_offset_px) / math.sin(math.radians(theta)) / grid.ref_width
        d_theta = rng.uniform(-angle_jitter, angle_jitter)
        d_len = rng.uniform(-length_jitter, length_jitter) if length_jitter else 0.0
        gt = render_anchor(AnchorParams(x0, 1.0, theta, 1.0 - top), grid)
        pred = render_anchor(AnchorParams(x0 + off, 1.0, theta + d_theta, 1.0 - top + d_len), grid)
        if gt.n_valid >= MIN_ROWS and pred.n_valid >= MIN_ROWS:
            pairs.append((pred, gt))
    return pairs


@dataclass
class CorrelationResult:
    rows: list[dict]
    pearson_lane_iou: float
    pearson_line_iou: float
    n_skipped: int = 0

    def summary(self) -> dict:
        return {
            "n_pairs": len(self.rows),
            "n_skipped": self.n_skipped,
            "pearson_lane_iou": self.pearson_lane_iou,
            "pearson_line_iou": self.pearson_line_iou,
        }


def _pearson(a, b) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    if len(a) < 2 or a.std() == 0 or b.std() == 0:
        return float("nan")
    return float(np.corrcoef(a, b)[0, 1])


def correlation_study(pairs: Sequence[tuple[Lane, Lane]], grid: RowGrid = METRIC_GRID,
                      spec: MaskSpec = CULANE_MASK, w_lane: Optional[float] = None) -> CorrelationResult:
    """Compare LaneIoU and LineIoU against mask IoU pair by pair.

    ``w_lane`` defaults to the mask stroke width as a fraction of mask width,
    and image-edge clipping is on, so LaneIoU targets the metric directly.
    """
    w = spec.width_px / spec.resolution[0] if w_lane is None else w_lane
    lane_cfg = IoUConfig(w, LANE_IOU, True)
    line_cfg = IoUConfig(w, LINE_IOU, True)
    rows, skipped = [], 0
    for pred, gt in pairs:
        try:
            m = mask_iou(rasterize(pred, grid, spec), rasterize(gt, grid, spec))
            a = lane_iou(pred, gt, grid, lane_cfg)
            b = lane_iou(pred, gt, grid, line_cfg)
            angle = lane_angle(gt, grid)
        except ValueError:
            skipped += 1
            continue
        rows.append({"angle_deg": angle, "mask_iou": m, "lane_iou": a, "line_iou": b})
    m = [r["mask_iou"] for r in rows]
    return CorrelationResult(
        rows,
        _pearson([r["lane_iou"] for r in rows], m),
        _pearson([r["line_iou"] for r in rows], m),
        skipped,
    )


def generate_anchor_frames(seed: int, n_gts: int, grid: RowGrid = ASSIGN_GRID, angle_range=(20.0, 160.0),
                           n_anchors: int = 24, max_offset_px: float = 30.0, angle_jitter: float = 2.0,
                           conf_range=(0.2, 0.8)) -> list[AssignFrame]:
    """One straight GT per frame with a fan of anchors whose perpendicular offsets are uniform.

    Offsets are measured perpendicular to the GT so the anchor cloud looks the
    same at every lane angle.
    """
    rng = np.random.default_rng(seed)
    frames = []
    while len(frames) < n_gts:
        theta = rng.uniform(*angle_range)
        length = rng.uniform(0.6, 0.9)
        cot = 1.0 / math.tan(math.radians(theta))
        travel = length * grid.ref_height * cot / grid.ref_width
        lo, hi = max(0.05, 0.05 - travel), min(0.95, 0.95 - travel)
        if lo >= hi:
            continue
        x0 = rng.uniform(lo, hi)
        gt = render_anchor(AnchorParams(x0, 1.0, theta, length), grid)
        if gt.n_valid < MIN_ROWS:
            continue
        sin = math.sin(math.radians(theta))
        anchors = []
        for _ in range(n_anchors):
            off = rng.uniform(-max_offset_px, max_offset_px) / sin / grid.ref_width
            th = float(np.clip(theta + rng.uniform(-angle_jitter, angle_jitter), 1.0, 179.0))
            lane = render_anchor(AnchorParams(x0 + off, 1.0, th, length), grid, rng.uniform(*conf_range))
            if lane.n_valid >= 2:
                anchors.append(lane)
        frames.append(AssignFrame(anchors, [gt]))
    return frames
