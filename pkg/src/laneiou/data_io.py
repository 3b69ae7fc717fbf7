"""CULane-style annotation I/O, prediction dumps, frame filtering and report files.

Prediction dump JSON (schema ``laneiou.predictions`` version 1)::

    {"schema": "laneiou.predictions", "version": 1,
     "image_width": 1640, "image_height": 590,
     "frames": {"driver_xx/video.MP4/00000.jpg":
                   [{"points": [[x, y], ...], "confidence": 0.93}, ...]}}

Report JSON uses schema ``laneiou.report`` version 1 and wraps
:meth:`EvalReport.to_dict`. Mean-pixel sidecars are two-column CSVs
``path,mean`` with a header row.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import posixpath
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import DatasetError, ParseError, SchemaError
from .evaluator import CSV_COLUMNS, EvalReport
from .lane_model import Polyline

log = logging.getLogger(__name__)

CULANE_SIZE = (1640, 590)
DUMP_SCHEMA = "laneiou.predictions"
REPORT_SCHEMA = "laneiou.report"
SCHEMA_VERSION = 1


@dataclass
class FrameRecord:
    path: str
    video: str
    lanes: list[Polyline] = field(default_factory=list)
    category: Optional[str] = None
    mean_pixel: Optional[float] = None


@dataclass
class PredictionDump:
    frames: dict[str, list[tuple[Polyline, float]]]
    image_width: float = CULANE_SIZE[0]
    image_height: float = CULANE_SIZE[1]


def parse_lines_file(text: str, image_size: tuple[float, float] = CULANE_SIZE) -> list[Polyline]:
    """Parse a ``.lines.txt`` annotation: one lane per line, alternating ``x y`` values.

    Points with negative x are the format's missing-point marker and are
    dropped. Lanes left with fewer than 2 points are skipped.
    """
    w, h = image_size
    out, dropped = [], 0
    for lineno, line in enumerate(text.splitlines(), start=1):
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) % 2:
            raise ParseError(f"odd number of coordinates ({len(tokens)})", line=lineno)
        try:
            vals = np.array([float(t) for t in tokens]).reshape(-1, 2)
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno) from None
        vals = vals[vals[:, 0] >= 0]
        if len(vals) < 2:
            dropped += 1
            continue
        out.append(Polyline(vals, w, h))
    if dropped:
        log.warning("dropped %d lane(s) with fewer than 2 usable points", dropped)
    return out


def format_lines_file(lanes: Iterable[Polyline]) -> str:
    return "".join(" ".join(f"{x!r} {y!r}" for x, y in p.points.tolist()) + "\n" for p in lanes)


def video_id(path: str) -> str:
    return posixpath.dirname(path)


def _normalize_path(path: str) -> str:
    return path.strip().lstrip("/")


def parse_list_file(text: str) -> list[FrameRecord]:
    """One image path per line (extra columns ignored); duplicates are rejected."""
    records, seen = [], {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        tokens = line.split()
        if not tokens:
            continue
        path = _normalize_path(tokens[0])
        if path in seen:
            raise ParseError(f"duplicate path {path!r} (first on line {seen[path]})", line=lineno)
        seen[path] = lineno
        records.append(FrameRecord(path, video_id(path)))
    return records


def format_list_file(records: Iterable[FrameRecord]) -> str:
    return "".join(f"/{r.path}\n" for r in records)


def annotation_path(root: str | Path, image_path: str) -> Path:
    stem = image_path.rsplit(".", 1)[0]
    return Path(root) / f"{stem}.lines.txt"


def load_annotations(records: Sequence[FrameRecord], root: str | Path,
                     image_size: tuple[float, float] = CULANE_SIZE) -> list[FrameRecord]:
    missing = []
    for rec in records:
        p = annotation_path(root, rec.path)
        if not p.exists():
            missing.append(str(p))
            continue
        rec.lanes = parse_lines_file(p.read_text(), image_size)
    if missing:
        raise DatasetError(f"{len(missing)} annotation file(s) missing, e.g. {missing[:3]}")
    return records


def assign_categories(records: Sequence[FrameRecord], category_lists: dict[str, str]) -> None:
    """Tag records from per-category list files (name -> list-file text)."""
    index = {r.path: r for r in records}
    for name, text in category_lists.items():
        for stub in parse_list_file(text):
            if stub.path in index:
                index[stub.path].category = name


def read_mean_sidecar(text: str) -> dict[str, float]:
    reader = csv.reader(io.StringIO(text))
    out = {}
    for lineno, row in enumerate(reader, start=1):
        if not row or (lineno == 1 and row[0].strip() == "path"):
            continue
        if len(row) < 2:
            raise ParseError("expected 'path,mean'", line=lineno)
        try:
            out[_normalize_path(row[0])] = float(row[1])
        except ValueError:
            raise ParseError(f"bad mean value {row[1]!r}", line=lineno) from None
    return out


def write_mean_sidecar(means: dict[str, float]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["path", "mean"])
    for path, m in means.items():
        w.writerow([path, repr(float(m))])
    return buf.getvalue()


def pil_mean_pixel(path: str | Path) -> float:
    """Mean over all pixels and channels of the decoded image."""
    from PIL import Image

    with Image.open(path) as im:
        return float(np.asarray(im, dtype=np.float64).mean())


def compute_mean_pixels(records: Sequence[FrameRecord], image_root: str | Path,
                        reader: Callable[[Path], float] = pil_mean_pixel) -> None:
    for rec in records:
        rec.mean_pixel = reader(Path(image_root) / rec.path)


def filter_redundant(records: Sequence[FrameRecord], threshold: float = 15.0) -> list[FrameRecord]:
    """Drop frames whose mean pixel value moved less than ``threshold`` from the previous frame.

    Differences are taken against the original predecessor in the same video,
    not the previous survivor. The first frame of each video is always kept.
    """
    missing = [r.path for r in records if r.mean_pixel is None]
    if missing:
        raise DatasetError(f"missing mean pixel value for {len(missing)} frame(s): {missing[:10]}")
    kept, last = [], {}
    for rec in records:
        prev = last.get(rec.video)
        if prev is None or abs(rec.mean_pixel - prev) >= threshold:
            kept.append(rec)
        last[rec.video] = rec.mean_pixel
    return kept


def group_by_video(records: Iterable[FrameRecord]) -> dict[str, list[FrameRecord]]:
    out: dict[str, list[FrameRecord]] = {}
    for r in records:
        out.setdefault(r.video, []).append(r)
    return out


def _loads(text: str, what: str) -> dict:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed {what} JSON: {exc.msg}", line=exc.lineno, offset=exc.pos) from None
    if not isinstance(data, dict):
        raise SchemaError(f"{what} JSON must be an object")
    return data


def _check_schema(data: dict, schema: str) -> None:
    if data.get("schema") != schema:
        raise SchemaError(f"expected schema {schema!r}, got {data.get('schema')!r}")
    if data.get("version") != SCHEMA_VERSION:
        raise SchemaError(f"{schema}: unsupported version {data.get('version')!r} (expected {SCHEMA_VERSION})")


def dump_to_json(dump: PredictionDump) -> str:
    frames = {
        key: [{"points": poly.points.tolist(), "confidence": float(conf)} for poly, conf in lanes]
        for key, lanes in dump.frames.items()
    }
    return json.dumps({
        "schema": DUMP_SCHEMA,
        "version": SCHEMA_VERSION,
        "image_width": dump.image_width,
        "image_height": dump.image_height,
        "frames": frames,
    }, indent=1, sort_keys=True)


def dump_from_json(text: str) -> PredictionDump:
    data = _loads(text, "prediction dump")
    _check_schema(data, DUMP_SCHEMA)
    w, h = data["image_width"], data["image_height"]
    frames = {}
    for key, lanes in data["frames"].items():
        entries = []
        for lane in lanes:
            conf = float(lane["confidence"])
            if not 0.0 <= conf <= 1.0:
                raise SchemaError(f"{key}: confidence {conf} outside [0, 1]")
            entries.append((Polyline(lane["points"], w, h), conf))
        frames[_normalize_path(key)] = entries
    return PredictionDump(frames, w, h)


def save_dump(dump: PredictionDump, path: str | Path) -> None:
    Path(path).write_text(dump_to_json(dump))


def load_dump(path: str | Path) -> PredictionDump:
    return dump_from_json(Path(path).read_text())


def report_to_json(report: EvalReport) -> str:
    return json.dumps({"schema": REPORT_SCHEMA, "version": SCHEMA_VERSION, **report.to_dict()},
                      indent=1, sort_keys=True)


def report_from_json(text: str) -> EvalReport:
    data = _loads(text, "report")
    _check_schema(data, REPORT_SCHEMA)
    return EvalReport.from_dict(data)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ""
    return str(v)


def rows_to_csv(rows: Iterable[dict], columns: Sequence[str] = CSV_COLUMNS) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    return buf.getvalue()


def reports_to_csv(reports: Iterable[EvalReport]) -> str:
    return rows_to_csv(row for rep in reports for row in rep.rows())


def csv_to_rows(text: str) -> list[dict]:
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
        raise SchemaError(f"unexpected CSV columns {reader.fieldnames}")
    out = []
    for r in reader:
        out.append({
            "threshold": float(r["threshold"]),
            "t_iou": float(r["t_iou"]),
            "tp": int(r["tp"]),
            "fp": int(r["fp"]),
            "fn": int(r["fn"]),
            "precision": float(r["precision"]),
            "recall": float(r["recall"]),
            "f1": float(r["f1"]) if r["f1"] else None,
            "category": r["category"],
        })
    return out


def parse_curvelanes_json(text: str, image_size: tuple[float, float]) -> list[Polyline]:
    """Convert a CurveLanes label (``{"Lines": [[{"x": .., "y": ..}, ...], ...]}``) to polylines."""
    data = _loads(text, "CurveLanes label")
    w, h = image_size
    out = []
    for lane in data.get("Lines", []):
        pts = [(float(p["x"]), float(p["y"])) for p in lane]
        pts = [p for p in pts if p[0] >= 0]
        if len(pts) >= 2:
            out.append(Polyline(sorted(pts, key=lambda p: -p[1]), w, h))
    return out
