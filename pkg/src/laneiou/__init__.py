"""Lane similarity (LaneIoU), mask-based lane evaluation and dynamic-k sample assignment."""

from .assigner import AssignConfig, AssignmentResult, assign, dynamic_k
from .errors import (
    DatasetError, DegenerateAnchorError, DegenerateLaneError, InvalidAnnotationError, LaneIoUError, MaskError,
    ParseError, SchemaError, UndefinedIoUError,
)
from .evaluator import EvalConfig, EvalFrame, EvalReport, crossval_threshold, evaluate, match_frame
from .iou_core import IoUConfig, iou_matrix, lane_iou, lane_iou_grad, lane_iou_loss, line_iou
from .lane_model import AnchorParams, Lane, Polyline, RowGrid, fit_anchor, local_widths, render_anchor, resample_to_grid
from .raster import CULANE_MASK, CURVELANES_MASK, LaneMask, MaskSpec, mask_iou, rasterize

__version__ = "0.1.0"

__all__ = [
    "AnchorParams", "AssignConfig", "AssignmentResult", "CULANE_MASK", "CURVELANES_MASK", "DatasetError",
    "DegenerateAnchorError", "DegenerateLaneError", "EvalConfig", "EvalFrame", "EvalReport", "InvalidAnnotationError",
    "IoUConfig", "Lane", "LaneIoUError", "LaneMask", "MaskError", "MaskSpec", "ParseError", "Polyline", "RowGrid",
    "SchemaError", "UndefinedIoUError", "assign", "crossval_threshold", "dynamic_k", "evaluate", "fit_anchor",
    "iou_matrix", "lane_iou", "lane_iou_grad", "lane_iou_loss", "line_iou", "local_widths", "mask_iou", "match_frame",
    "rasterize", "render_anchor", "resample_to_grid",
]
