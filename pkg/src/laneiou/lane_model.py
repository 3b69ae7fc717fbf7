"""Row-anchored lane representation and its geometry helpers.

A lane is stored as one normalized x-coordinate per fixed image row. Row ``i``
of a :class:`RowGrid` sits at pixel ``y = ref_height * i / (n_rows - 1)``, so
row 0 is the top of the image and the last row is the bottom. Angle and width
math is carried out in the grid's reference pixel frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import DegenerateAnchorError, DegenerateLaneError, InvalidAnnotationError

# tolerance used when deciding whether a rendered x lies inside [0, 1]
_RANGE_TOL = 1e-9


@dataclass(frozen=True)
class RowGrid:
    n_rows: int = 72
    ref_width: float = 800.0
    ref_height: float = 320.0

    def __post_init__(self):
        if int(self.n_rows) != self.n_rows or self.n_rows < 2:
            raise ValueError(f"n_rows must be an integer >= 2, got {self.n_rows}")
        if self.ref_width <= 0 or self.ref_height <= 0:
            raise ValueError("reference resolution must be positive")

    @property
    def rows(self) -> np.ndarray:
        return np.arange(self.n_rows)

    @property
    def ys(self) -> np.ndarray:
        """Pixel y of every row in the reference frame."""
        return self.ref_height * self.rows / (self.n_rows - 1)

    @property
    def ys_norm(self) -> np.ndarray:
        return self.rows / (self.n_rows - 1)


@dataclass(frozen=True, eq=False)
class Lane:
    """x per row in [0, 1] image-width units, a contiguous validity mask and a score.

    Invalid rows hold NaN and are never read by the similarity functions.
    """

    xs: np.ndarray
    valid: np.ndarray
    confidence: float = 1.0

    def __post_init__(self):
        xs = np.array(self.xs, dtype=float)
        valid = np.array(self.valid, dtype=bool)
        if xs.ndim != 1 or xs.shape != valid.shape:
            raise ValueError("xs and valid must be 1-D arrays of equal length")
        if not np.all(np.isfinite(xs[valid])):
            raise ValueError("valid rows must carry finite x values")
        idx = np.flatnonzero(valid)
        if idx.size and idx[-1] - idx[0] + 1 != idx.size:
            raise ValueError("valid rows must form one contiguous run")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence}")
        xs[~valid] = np.nan
        xs.flags.writeable = False
        valid.flags.writeable = False
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "valid", valid)
        object.__setattr__(self, "confidence", float(self.confidence))

    @property
    def n_rows(self) -> int:
        return self.xs.shape[0]

    @property
    def n_valid(self) -> int:
        return int(self.valid.sum())

    @property
    def span(self) -> tuple[int, int]:
        """First and last valid row index (inclusive)."""
        idx = np.flatnonzero(self.valid)
        if idx.size == 0:
            raise DegenerateLaneError("lane has no valid rows")
        return int(idx[0]), int(idx[-1])

    def with_confidence(self, confidence: float) -> "Lane":
        return replace(self, confidence=confidence)

    def points(self, grid: RowGrid) -> np.ndarray:
        """(k, 2) array of (x, y) reference-frame pixel points on valid rows, top to bottom."""
        _check_grid(self, grid)
        return np.stack([self.xs[self.valid] * grid.ref_width, grid.ys[self.valid]], axis=1)

    def __repr__(self):
        if self.n_valid:
            a, b = self.span
            return f"Lane(rows {a}..{b} of {self.n_rows}, conf={self.confidence:.3f})"
        return f"Lane(empty, {self.n_rows} rows)"


@dataclass(frozen=True, eq=False)
class AnchorParams:
    """Straight anchor ray plus per-row horizontal residuals.

    ``theta_a`` is in degrees in the reference pixel frame, 90 = vertical,
    below 90 leaning right as the lane goes up. ``length`` is the vertical
    extent above the start point as a fraction of image height. ``dx`` is
    indexed by absolute row.
    """

    x_a: float
    y_a: float
    theta_a: float
    length: float
    dx: Optional[np.ndarray] = field(default=None)


@dataclass(frozen=True, eq=False)
class Polyline:
    points: np.ndarray
    image_width: float
    image_height: float

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 2)
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)


def _check_grid(lane: Lane, grid: RowGrid) -> None:
    if lane.n_rows != grid.n_rows:
        raise ValueError(f"lane has {lane.n_rows} rows but grid has {grid.n_rows}")


def _longest_run(mask: np.ndarray) -> np.ndarray:
    """Keep only the longest run of True values; ties go to the run nearest the bottom."""
    out = np.zeros_like(mask)
    best_start, best_len = 0, 0
    start = None
    for i, v in enumerate(list(mask) + [False]):
        if v and start is None:
            start = i
        elif not v and start is not None:
            if i - start >= best_len:
                best_start, best_len = start, i - start
            start = None
    out[best_start:best_start + best_len] = True
    return out


def truncate_to_frame(xs: np.ndarray, valid: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Invalidate out-of-image rows, keeping the longest contiguous in-frame run."""
    inside = valid & (xs >= -_RANGE_TOL) & (xs <= 1 + _RANGE_TOL)
    keep = _longest_run(inside)
    return np.clip(np.where(keep, xs, np.nan), 0.0, 1.0), keep


def resample_to_grid(poly: Polyline, grid: RowGrid, confidence: float = 1.0) -> Lane:
    """Linearly interpolate a pixel polyline at every grid row inside its y-span.

    Rows whose interpolated x falls outside the image are dropped, keeping the
    longest contiguous in-frame run.
    """
    pts = poly.points
    if len(pts) < 2:
        raise InvalidAnnotationError(f"polyline needs at least 2 points, got {len(pts)}")
    if pts[0, 1] < pts[-1, 1]:
        pts = pts[::-1]
    y = pts[:, 1]
    if not np.all(np.diff(y) < 0):
        raise InvalidAnnotationError("polyline y must be strictly monotone")

    row_y = poly.image_height * grid.rows / (grid.n_rows - 1)
    eps = 1e-9 * poly.image_height
    valid = (row_y >= y[-1] - eps) & (row_y <= y[0] + eps)
    x = np.interp(row_y, y[::-1], pts[::-1, 0])
    xs = np.where(valid, x / poly.image_width, np.nan)
    xs, valid = truncate_to_frame(xs, valid)
    return Lane(xs, valid, confidence)


def lane_to_polyline(lane: Lane, grid: RowGrid) -> Polyline:
    return Polyline(lane.points(grid)[::-1], grid.ref_width, grid.ref_height)


def local_widths(lane: Lane, grid: RowGrid, w_lane: float) -> np.ndarray:
    """Per-row half-widths widened by the local lane tilt.

    ``w_i = (w_lane / 2) * sqrt(dx^2 + dy^2) / dy`` with central differences on
    interior rows and one-sided differences at the two ends, in reference
    pixels. Returned in normalized width units; invalid rows are 0.
    """
    _check_grid(lane, grid)
    idx = np.flatnonzero(lane.valid)
    if idx.size < 2:
        raise DegenerateLaneError(f"lane needs at least 2 valid rows, got {idx.size}")
    x = lane.xs[idx] * grid.ref_width
    y = grid.ys[idx]
    dx = np.empty_like(x)
    dy = np.empty_like(y)
    dx[1:-1] = x[2:] - x[:-2]
    dy[1:-1] = y[2:] - y[:-2]
    dx[0], dy[0] = x[1] - x[0], y[1] - y[0]
    dx[-1], dy[-1] = x[-1] - x[-2], y[-1] - y[-2]
    out = np.zeros(lane.n_rows)
    out[idx] = (w_lane / 2) * (np.hypot(dx, dy) / dy)
    return out


def _ray_xs(params: AnchorParams, grid: RowGrid) -> np.ndarray:
    theta = math.radians(params.theta_a)
    cot = math.cos(theta) / math.sin(theta)
    x_px = params.x_a * grid.ref_width + (params.y_a * grid.ref_height - grid.ys) * cot
    return x_px / grid.ref_width


def render_anchor(params: AnchorParams, grid: RowGrid, confidence: float = 1.0) -> Lane:
    if not 0.0 < params.theta_a < 180.0:
        raise DegenerateAnchorError(f"theta_a must be in (0, 180), got {params.theta_a}")
    if not params.length > 0:
        raise DegenerateAnchorError(f"anchor length must be positive, got {params.length}")
    dx = np.zeros(grid.n_rows) if params.dx is None else np.asarray(params.dx, dtype=float)
    if dx.shape != (grid.n_rows,):
        raise ValueError(f"dx must have {grid.n_rows} entries")

    scale = grid.n_rows - 1
    top, bottom = (params.y_a - params.length) * scale, params.y_a * scale
    valid = (grid.rows >= top - 1e-6) & (grid.rows <= bottom + 1e-6)
    xs = np.where(valid, _ray_xs(params, grid) + dx, np.nan)
    xs, valid = truncate_to_frame(xs, valid)
    return Lane(xs, valid, confidence)


def fit_anchor(lane: Lane, grid: RowGrid) -> AnchorParams:
    """Least-squares straight anchor through the lane's valid rows.

    The start point is the bottom-most valid point and ``dx`` holds the exact
    residuals, so ``render_anchor(fit_anchor(lane))`` reproduces the lane.
    """
    _check_grid(lane, grid)
    idx = np.flatnonzero(lane.valid)
    if idx.size < 2:
        raise DegenerateLaneError(f"lane needs at least 2 valid rows, got {idx.size}")
    x = lane.xs[idx] * grid.ref_width
    y = grid.ys[idx]
    yc = y - y.mean()
    slope = float(np.dot(yc, x - x.mean()) / np.dot(yc, yc))
    theta = math.degrees(math.atan2(1.0, -slope))

    scale = grid.n_rows - 1
    start, end = int(idx[0]), int(idx[-1])
    params = AnchorParams(
        x_a=float(lane.xs[end]),
        y_a=end / scale,
        theta_a=theta,
        length=(end - start) / scale,
    )
    dx = np.zeros(grid.n_rows)
    dx[idx] = lane.xs[idx] - _ray_xs(params, grid)[idx]
    return replace(params, dx=dx)


def lane_angle(lane: Lane, grid: RowGrid) -> float:
    """Fitted lane angle in degrees (90 = vertical)."""
    return fit_anchor(lane, grid).theta_a
