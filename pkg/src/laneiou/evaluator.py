"""Benchmark protocol: one-to-one matching, TP/FP/FN, F1, threshold sweeps and cross-validation."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import DatasetError
from .iou_core import IoUConfig, LANE_IOU, iou_matrix
from .lane_model import Lane, RowGrid
from .raster import CULANE_MASK, MaskSpec, mask_iou_matrix, rasterize

MASK_ORACLE = "mask_oracle"
BACKENDS = (MASK_ORACLE, LANE_IOU)

CSV_COLUMNS = ("threshold", "t_iou", "tp", "fp", "fn", "precision", "recall", "f1", "category")
ALL = "all"


@dataclass(frozen=True)
class EvalConfig:
    """``iou_backend='lane_iou'`` is a fast approximation; the mask oracle is the metric."""

    t_iou: tuple[float, ...] = (0.5, 0.75)
    iou_backend: str = MASK_ORACLE
    mask_spec: MaskSpec = CULANE_MASK
    conf_threshold: float = 0.0
    grid: RowGrid = RowGrid(72, 1640, 590)

    def __post_init__(self):
        object.__setattr__(self, "t_iou", tuple(float(t) for t in self.t_iou))
        if not self.t_iou or any(not 0 < t <= 1 for t in self.t_iou):
            raise ValueError(f"IoU thresholds must lie in (0, 1], got {self.t_iou}")
        if self.iou_backend not in BACKENDS:
            raise ValueError(f"iou_backend must be one of {BACKENDS}")

    @property
    def lane_iou_config(self) -> IoUConfig:
        return IoUConfig(self.mask_spec.width_px / self.mask_spec.resolution[0], LANE_IOU, True)


@dataclass
class EvalFrame:
    key: str
    preds: list[Lane]
    gts: list[Lane]
    category: Optional[str] = None
    video: Optional[str] = None


@dataclass
class Counts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __add__(self, other: "Counts") -> "Counts":
        return Counts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    @property
    def n_gt(self) -> int:
        return self.tp + self.fn

    @property
    def precision(self) -> float:
        d = self.tp + self.fp
        return self.tp / d if d else 0.0

    @property
    def recall(self) -> float:
        d = self.tp + self.fn
        return self.tp / d if d else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0


@dataclass
class EvalReport:
    conf_threshold: float
    overall: dict[float, Counts]
    categories: dict[str, dict[float, Counts]] = field(default_factory=dict)

    @property
    def t_ious(self) -> tuple[float, ...]:
        return tuple(self.overall)

    def f1(self, t_iou: float = 0.5) -> float:
        return self.overall[t_iou].f1

    def precision(self, t_iou: float = 0.5) -> float:
        return self.overall[t_iou].precision

    def recall(self, t_iou: float = 0.5) -> float:
        return self.overall[t_iou].recall

    def rows(self) -> list[dict]:
        """Flat rows in ``CSV_COLUMNS`` order.

        Categories without any GT lane carry ``f1=None``; only their FP count
        is meaningful.
        """
        out = []
        groups = [(ALL, self.overall)] + sorted(self.categories.items())
        for name, per_t in groups:
            for t, c in per_t.items():
                no_gt = name != ALL and c.n_gt == 0
                out.append({
                    "threshold": self.conf_threshold,
                    "t_iou": t,
                    "tp": c.tp,
                    "fp": c.fp,
                    "fn": c.fn,
                    "precision": c.precision,
                    "recall": c.recall,
                    "f1": None if no_gt else c.f1,
                    "category": name,
                })
        return out

    def to_dict(self) -> dict:
        def enc(per_t):
            return [{"t_iou": t, "tp": c.tp, "fp": c.fp, "fn": c.fn} for t, c in per_t.items()]

        return {
            "conf_threshold": self.conf_threshold,
            "overall": enc(self.overall),
            "categories": {k: enc(v) for k, v in sorted(self.categories.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        def dec(items):
            return {float(e["t_iou"]): Counts(int(e["tp"]), int(e["fp"]), int(e["fn"])) for e in items}

        return cls(
            float(d["conf_threshold"]),
            dec(d["overall"]),
            {k: dec(v) for k, v in d.get("categories", {}).items()},
        )


def frame_iou_matrix(preds: Sequence[Lane], gts: Sequence[Lane], cfg: EvalConfig) -> np.ndarray:
    if not preds or not gts:
        return np.zeros((len(preds), len(gts)))
    if cfg.iou_backend == LANE_IOU:
        return iou_matrix(preds, gts, cfg.grid, cfg.lane_iou_config).values
    pm = [rasterize(p, cfg.grid, cfg.mask_spec) for p in preds]
    gm = [rasterize(g, cfg.grid, cfg.mask_spec) for g in gts]
    return mask_iou_matrix(pm, gm)


def count_matches(ious: np.ndarray, t_ious: Iterable[float]) -> dict[float, Counts]:
    """Max-total-IoU one-to-one matching, then count matched pairs strictly above each threshold."""
    m, n = ious.shape
    if m and n:
        rows, cols = linear_sum_assignment(ious, maximize=True)
        matched = ious[rows, cols]
    else:
        matched = np.zeros(0)
    out = {}
    for t in t_ious:
        tp = int(np.count_nonzero(matched > t))
        out[t] = Counts(tp, m - tp, n - tp)
    return out


def match_frame(preds: Sequence[Lane], gts: Sequence[Lane], cfg: EvalConfig = EvalConfig()) -> dict[float, Counts]:
    return count_matches(frame_iou_matrix(preds, gts, cfg), cfg.t_iou)


def _map(fn, items, jobs: int):
    if jobs <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))


def _kept(frame: EvalFrame, threshold: float) -> list[Lane]:
    return [p for p in frame.preds if p.confidence >= threshold]


def _frame_counts(frame: EvalFrame, cfg: EvalConfig) -> dict[float, Counts]:
    return match_frame(_kept(frame, cfg.conf_threshold), frame.gts, cfg)


def _frame_matrix(frame: EvalFrame, cfg: EvalConfig) -> np.ndarray:
    return frame_iou_matrix(frame.preds, frame.gts, cfg)


def _reduce(frames: Sequence[EvalFrame], per_frame: Sequence[dict], cfg: EvalConfig) -> EvalReport:
    overall = {t: Counts() for t in cfg.t_iou}
    categories: dict[str, dict[float, Counts]] = {}
    for frame, counts in zip(frames, per_frame):
        for t, c in counts.items():
            overall[t] = overall[t] + c
        if frame.category is not None:
            cat = categories.setdefault(frame.category, {t: Counts() for t in cfg.t_iou})
            for t, c in counts.items():
                cat[t] = cat[t] + c
    return EvalReport(cfg.conf_threshold, overall, categories)


def evaluate(frames: Iterable[EvalFrame], cfg: EvalConfig = EvalConfig(), jobs: int = 1) -> EvalReport:
    frames = list(frames)
    per_frame = _map(partial(_frame_counts, cfg=cfg), frames, jobs)
    return _reduce(frames, per_frame, cfg)


def _check_sorted(thresholds: Sequence[float]) -> list[float]:
    thresholds = [float(t) for t in thresholds]
    if not thresholds:
        raise ValueError("need at least one confidence threshold")
    if any(b < a for a, b in zip(thresholds, thresholds[1:])):
        raise ValueError("thresholds must be sorted ascending")
    return thresholds


def _sweep_cached(frames, matrices, cfg, thresholds) -> list[tuple[float, EvalReport]]:
    out = []
    for thr in thresholds:
        per_frame = []
        for frame, mat in zip(frames, matrices):
            keep = [j for j, p in enumerate(frame.preds) if p.confidence >= thr]
            per_frame.append(count_matches(mat[keep], cfg.t_iou))
        report = _reduce(frames, per_frame, cfg)
        report.conf_threshold = thr
        out.append((thr, report))
    return out


def threshold_sweep(frames: Iterable[EvalFrame], cfg: EvalConfig, thresholds: Sequence[float],
                    jobs: int = 1) -> list[tuple[float, EvalReport]]:
    """Evaluate at every confidence threshold, computing each frame's IoU matrix only once."""
    frames = list(frames)
    thresholds = _check_sorted(thresholds)
    matrices = _map(partial(_frame_matrix, cfg=cfg), frames, jobs)
    return _sweep_cached(frames, matrices, cfg, thresholds)


@dataclass
class FoldSplit:
    folds: dict[str, int]
    seed: int
    n_folds: int

    def members(self, fold: int) -> list[str]:
        return [v for v, f in self.folds.items() if f == fold]


def make_fold_split(videos: Iterable[str], n_folds: int = 5, seed: int = 0) -> FoldSplit:
    """Shuffle the distinct video ids with ``seed`` and deal them round-robin into folds."""
    unique = sorted(set(videos))
    if len(unique) < n_folds:
        raise DatasetError(f"{len(unique)} videos cannot fill {n_folds} folds")
    order = np.random.default_rng(seed).permutation(len(unique))
    return FoldSplit({unique[k]: pos % n_folds for pos, k in enumerate(order)}, seed, n_folds)


@dataclass
class CrossvalResult:
    threshold: float
    thresholds: list[float]
    fold_f1: np.ndarray  # (n_folds, n_thresholds)
    mean_f1: np.ndarray
    split: FoldSplit
    t_iou: float


def crossval_threshold(frames: Iterable[EvalFrame], cfg: EvalConfig, thresholds: Sequence[float],
                       n_folds: int = 5, seed: int = 0, t_iou: Optional[float] = None,
                       jobs: int = 1) -> CrossvalResult:
    """Pick the confidence threshold maximizing F1 averaged over video-grouped folds.

    Ties go to the smallest threshold.
    """
    frames = list(frames)
    thresholds = _check_sorted(thresholds)
    t_iou = cfg.t_iou[0] if t_iou is None else t_iou
    if t_iou not in cfg.t_iou:
        raise ValueError(f"t_iou {t_iou} is not among the configured thresholds {cfg.t_iou}")
    missing = [f.key for f in frames if f.video is None]
    if missing:
        raise DatasetError(f"frames without a video id: {missing[:5]}")
    split = make_fold_split((f.video for f in frames), n_folds, seed)
    matrices = _map(partial(_frame_matrix, cfg=cfg), frames, jobs)

    fold_f1 = np.zeros((n_folds, len(thresholds)))
    for k in range(n_folds):
        idx = [i for i, f in enumerate(frames) if split.folds[f.video] == k]
        sweep = _sweep_cached([frames[i] for i in idx], [matrices[i] for i in idx], cfg, thresholds)
        fold_f1[k] = [rep.f1(t_iou) for _, rep in sweep]
    mean_f1 = fold_f1.mean(axis=0)
    best = int(np.argmax(mean_f1))  # first maximum = smallest threshold
    return CrossvalResult(thresholds[best], thresholds, fold_f1, mean_f1, split, t_iou)


@dataclass(frozen=True)
class MetricSummary:
    mean: float
    std: float
    n: int


def multi_seed_report(reports: Sequence[EvalReport]) -> dict[str, MetricSummary]:
    """Sample mean and (n-1)-denominator std of precision, recall and F1 per IoU threshold.

    Keys look like ``"f1@0.5"``. With a single report the std is 0.
    """
    if not reports:
        raise ValueError("need at least one report")
    out = {}
    for t in reports[0].t_ious:
        for metric in ("precision", "recall", "f1"):
            vals = [getattr(r.overall[t], metric) for r in reports]
            mean = math.fsum(vals) / len(vals)
            std = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
            out[f"{metric}@{t:g}"] = MetricSummary(mean, std, len(vals))
    return out
