"""``laneiou`` command line: evaluation, threshold selection, frame filtering and analysis harnesses.

Every subcommand writes its primary outputs to ``--out`` and prints a short
summary. Exit codes: 0 success, 2 input error, 3 internal error. Errors are
reported on stderr as one JSON object.

``--config FILE`` reads a JSON object whose keys are option names (dashes or
underscores); its values override the command-line flags.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from . import data_io
from .assigner import BASELINE, AssignConfig, CULANE_ASSIGN, CURVELANES_ASSIGN, collect_assignment_stats
from .errors import DatasetError, LaneIoUError
from .evaluator import BACKENDS, MASK_ORACLE, EvalConfig, EvalFrame, crossval_threshold, evaluate
from .iou_core import LANE_IOU
from .lane_model import RowGrid, lane_to_polyline, resample_to_grid
from .raster import MaskSpec
from .synth_bench import (
    ASSIGN_GRID, CORRELATION_COLUMNS, ORACLE_MODES, SynthConfig, apply_oracle, correlation_study, generate,
    generate_anchor_frames, generate_pairs, oracle_experiment,
)

log = logging.getLogger("laneiou")

EXIT_OK, EXIT_INPUT, EXIT_INTERNAL = 0, 2, 3
DEFAULT_THRESHOLDS = "0.05:0.95:0.05"


class InputError(LaneIoUError):
    pass


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _dumps(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def parse_thresholds(spec: str) -> list[float]:
    """``"a:b:step"`` (inclusive of b) or a comma-separated list."""
    try:
        if ":" in spec:
            a, b, step = (float(v) for v in spec.split(":"))
            n = int(round((b - a) / step)) + 1
            return [round(a + k * step, 10) for k in range(n)]
        return sorted(float(v) for v in spec.split(","))
    except ValueError:
        raise InputError(f"cannot parse thresholds {spec!r}") from None


def _eval_config(args, conf_threshold: Optional[float] = None) -> EvalConfig:
    w, h = args.mask_res
    return EvalConfig(
        t_iou=tuple(args.t_iou),
        iou_backend=args.backend,
        mask_spec=MaskSpec(args.mask_width, (w, h)),
        conf_threshold=args.conf_threshold if conf_threshold is None else conf_threshold,
        grid=RowGrid(args.rows, w, h),
    )


def _read_text(path) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None


def load_frames(args, cfg: EvalConfig) -> list[EvalFrame]:
    """Join a list file, its ``.lines.txt`` annotations and a prediction dump into eval frames.

    Listed frames absent from the dump have no predictions; dump frames absent
    from the list are an error.
    """
    records = data_io.parse_list_file(_read_text(args.list))
    data_io.load_annotations(records, args.gt_root, cfg.mask_spec.resolution)
    if args.category:
        lists = {}
        for item in args.category:
            name, _, path = item.partition("=")
            lists[name] = _read_text(path)
        data_io.assign_categories(records, lists)
    dump = data_io.dump_from_json(_read_text(args.pred))
    listed = {r.path for r in records}
    extra = sorted(set(dump.frames) - listed)
    if extra:
        raise DatasetError(f"{len(extra)} prediction frame(s) not in the list file, e.g. {extra[:3]}")

    grid, frames, bad = cfg.grid, [], 0
    for rec in records:
        gts = [resample_to_grid(p, grid) for p in rec.lanes]
        preds = []
        for poly, conf in dump.frames.get(rec.path, []):
            try:
                preds.append(resample_to_grid(poly, grid, conf))
            except LaneIoUError:
                bad += 1
        frames.append(EvalFrame(rec.path, preds, gts, rec.category, rec.video))
    if bad:
        log.warning("skipped %d prediction(s) that could not be resampled", bad)
    return frames


def cmd_evaluate(args) -> int:
    cfg = _eval_config(args)
    report = evaluate(load_frames(args, cfg), cfg, args.jobs)
    out = Path(args.out)
    _write(out / "report.json", data_io.report_to_json(report) + "\n")
    _write(out / "report.csv", data_io.reports_to_csv([report]))
    for t in cfg.t_iou:
        c = report.overall[t]
        print(f"IoU>{t:g}: precision {c.precision:.4f} recall {c.recall:.4f} F1 {c.f1:.4f}")
    return EXIT_OK


def cmd_crossval(args) -> int:
    cfg = _eval_config(args)
    thresholds = parse_thresholds(args.thresholds)
    res = crossval_threshold(load_frames(args, cfg), cfg, thresholds, args.folds, args.seed, jobs=args.jobs)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["threshold", *[f"fold_{k}" for k in range(args.folds)], "mean_f1"])
    for j, thr in enumerate(res.thresholds):
        w.writerow([repr(thr), *[repr(float(v)) for v in res.fold_f1[:, j]], repr(float(res.mean_f1[j]))])
    out = Path(args.out)
    _write(out / "crossval.csv", buf.getvalue())
    _write(out / "crossval.json", _dumps({
        "threshold": res.threshold,
        "t_iou": res.t_iou,
        "seed": args.seed,
        "n_folds": args.folds,
        "folds": res.split.folds,
    }))
    print(f"best threshold {res.threshold:g} (mean F1 {res.mean_f1.max():.4f})")
    return EXIT_OK


def cmd_filter(args) -> int:
    records = data_io.parse_list_file(_read_text(args.list))
    means = data_io.read_mean_sidecar(_read_text(args.means))
    for r in records:
        r.mean_pixel = means.get(r.path)
    kept = data_io.filter_redundant(records, args.threshold)
    _write(Path(args.out), data_io.format_list_file(kept))
    print(f"kept {len(kept)} of {len(records)} frames")
    return EXIT_OK


def cmd_correlate(args) -> int:
    cfg = _eval_config(args)
    pairs = generate_pairs(args.seed, args.n_pairs, cfg.grid)
    res = correlation_study(pairs, cfg.grid, cfg.mask_spec)
    out = Path(args.out)
    _write(out / "correlation.csv", data_io.rows_to_csv(res.rows, CORRELATION_COLUMNS))
    _write(out / "correlation_summary.json", _dumps(res.summary()))
    print(f"pearson r: lane_iou {res.pearson_lane_iou:.4f}, line_iou {res.pearson_line_iou:.4f}")
    return EXIT_OK


def _assign_config(args, similarity: str) -> AssignConfig:
    base = CURVELANES_ASSIGN if args.preset == "curvelanes" else CULANE_ASSIGN
    overrides = {k: v for k, v in (("k_max", args.k_max), ("w_lane_k", args.w_lane_k),
                                   ("w_lane_cost", args.w_lane_cost), ("lam", args.lam)) if v is not None}
    return replace(base, similarity=similarity, **overrides)


def cmd_assign_stats(args) -> int:
    sims = [LANE_IOU, BASELINE] if args.similarity == "both" else [args.similarity]
    frames = generate_anchor_frames(args.seed, args.n_gts, ASSIGN_GRID)
    out = Path(args.out)
    summary = {}
    for sim in sims:
        stats = collect_assignment_stats(frames, ASSIGN_GRID, _assign_config(args, sim), args.bin_width)
        _write(out / f"assign_stats_{sim}.csv", stats.to_csv())
        summary[sim] = stats.count_variance(20.0, 160.0)
        print(f"{sim}: across-bin variance of mean assignment count {summary[sim]:.6f}")
    _write(out / "assign_stats_summary.json", _dumps({"seed": args.seed, "count_variance": summary}))
    if len(sims) == 2:
        lo = min(summary, key=summary.get)
        print(f"lower variance: {lo}")
    return EXIT_OK


def _synth_config(args, cfg: EvalConfig) -> SynthConfig:
    noise = dict(x_jitter=args.x_jitter, angle_jitter=args.angle_jitter, length_jitter=args.length_jitter,
                 dx_jitter=args.dx_jitter, conf_noise=args.conf_noise, fp_rate=args.fp_rate,
                 extra_preds_per_gt=args.extra_preds)
    if args.noiseless:
        noise = dict.fromkeys(noise, 0)
    return SynthConfig(seed=args.seed, n_frames=args.n_frames, n_videos=args.n_videos,
                       grid=cfg.grid, mask_spec=cfg.mask_spec, **noise)


def cmd_oracle(args) -> int:
    cfg = _eval_config(args)
    if args.pred:
        frames = load_frames(args, cfg)
    else:
        frames = generate(_synth_config(args, cfg))
    modes = ["raw", *ORACLE_MODES] if args.mode == "all" else [args.mode]
    thresholds = parse_thresholds(args.thresholds)
    rows, summary = [], {}
    for mode in modes:
        m = None if mode == "raw" else mode
        thr = args.conf_threshold
        if args.crossval:
            modded = frames if m is None else apply_oracle(frames, m, cfg.grid, cfg.mask_spec)
            thr = crossval_threshold(modded, cfg, thresholds, args.folds, args.seed).threshold
        report = oracle_experiment(frames, m, cfg.grid, replace(cfg, conf_threshold=thr))
        for row in report.rows():
            rows.append({"mode": mode, **row})
        summary[mode] = {"threshold": thr, **{f"f1@{t:g}": report.f1(t) for t in cfg.t_iou}}
        print(f"{mode}: F1@{cfg.t_iou[0]:g} {report.f1(cfg.t_iou[0]):.4f} (threshold {thr:g})")
    out = Path(args.out)
    _write(out / "oracle.csv", data_io.rows_to_csv(rows, ("mode", *data_io.CSV_COLUMNS)))
    _write(out / "oracle.json", _dumps(summary))
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = _eval_config(args)
    frames = generate(_synth_config(args, cfg))
    out = Path(args.out)
    grid = cfg.grid
    records = []
    dump = data_io.PredictionDump({}, grid.ref_width, grid.ref_height)
    for f in frames:
        _write(data_io.annotation_path(out / "gt", f.key),
               data_io.format_lines_file(lane_to_polyline(g, grid) for g in f.gts))
        dump.frames[f.key] = [(lane_to_polyline(p, grid), p.confidence) for p in f.preds if p.n_valid >= 2]
        records.append(data_io.FrameRecord(f.key, f.video))
    _write(out / "list.txt", data_io.format_list_file(records))
    _write(out / "predictions.json", data_io.dump_to_json(dump) + "\n")
    print(f"wrote {len(frames)} frames to {out}")
    return EXIT_OK


def _add_eval_options(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("metric")
    g.add_argument("--mask-width", type=float, default=30.0,
                   help="lane stroke width in pixels; 30 is the CULane benchmark setting (CurveLanes uses 5 at 224x224)")
    g.add_argument("--mask-res", type=int, nargs=2, default=[1640, 590], metavar=("W", "H"),
                   help="metric image resolution; 1640x590 is the CULane benchmark setting")
    g.add_argument("--rows", type=int, default=72, help="row anchors per lane")
    g.add_argument("--t-iou", type=float, nargs="+", default=[0.5, 0.75],
                   help="IoU thresholds for a true positive (strictly greater than); 0.5 is the CULane benchmark setting")
    g.add_argument("--conf-threshold", type=float, default=0.0, help="keep predictions with confidence >= this")
    g.add_argument("--backend", choices=BACKENDS, default=MASK_ORACLE,
                   help="IoU used for matching: rasterized masks (the benchmark metric) or the fast lane_iou approximation")


def _add_data_options(p: argparse.ArgumentParser, required: bool = True) -> None:
    g = p.add_argument_group("data")
    g.add_argument("--pred", required=required, help="prediction dump JSON")
    g.add_argument("--gt-root", required=required, help="directory holding the .lines.txt annotations")
    g.add_argument("--list", required=required, help="list file of image paths")
    g.add_argument("--category", action="append", metavar="NAME=LIST",
                   help="per-category list file (repeatable), e.g. night=test_split/test7_night.txt")


def _add_synth_options(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("synthetic data")
    g.add_argument("--n-frames", type=int, default=150)
    g.add_argument("--n-videos", type=int, default=15)
    g.add_argument("--x-jitter", type=float, default=2.0, help="horizontal start jitter in pixels")
    g.add_argument("--angle-jitter", type=float, default=3.0, help="lane angle jitter in degrees")
    g.add_argument("--length-jitter", type=float, default=0.01, help="length jitter as a fraction of image height")
    g.add_argument("--dx-jitter", type=float, default=2.0, help="smooth per-row jitter in pixels")
    g.add_argument("--conf-noise", type=float, default=0.3, help="std of Gaussian noise added to true IoU for confidence")
    g.add_argument("--fp-rate", type=float, default=0.5, help="mean number of spurious lanes per frame")
    g.add_argument("--extra-preds", type=int, default=1, help="extra noisier candidates per GT lane")
    g.add_argument("--noiseless", action="store_true", help="predictions equal to the GT lanes")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="laneiou", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--config", help="JSON file of option overrides (applied after flags)")
    parser.add_argument("--jobs", type=int, default=1, help="worker processes for per-frame work")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("evaluate", help="F1 of a prediction dump against CULane-format annotations", formatter_class=fmt)
    _add_data_options(p)
    _add_eval_options(p)
    p.add_argument("--out", default="out", help="output directory for report.json and report.csv")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("crossval-threshold", help="pick a confidence threshold by video-grouped k-fold CV",
                       formatter_class=fmt)
    _add_data_options(p)
    _add_eval_options(p)
    p.add_argument("--folds", type=int, default=5, help="folds over video ids; 5 matches the CULane protocol")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--thresholds", default=DEFAULT_THRESHOLDS, help="start:stop:step or comma list")
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_crossval)

    p = sub.add_parser("filter-frames", help="drop near-duplicate frames by mean pixel difference", formatter_class=fmt)
    p.add_argument("--list", required=True)
    p.add_argument("--means", required=True, help="CSV sidecar with columns path,mean")
    p.add_argument("--threshold", type=float, default=15.0,
                   help="minimum mean pixel change from the previous frame; 15 is the CULane training-set setting")
    p.add_argument("--out", required=True, help="filtered list file to write")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("correlate", help="LaneIoU and LineIoU vs mask IoU on synthetic straight pairs",
                       formatter_class=fmt)
    _add_eval_options(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-pairs", type=int, default=2000)
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("assign-stats", help="mean assignment count per GT angle bin", formatter_class=fmt)
    p.add_argument("--similarity", choices=[LANE_IOU, BASELINE, "both"], default="both",
                   help="baseline = constant-width LineIoU")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-gts", type=int, default=400)
    p.add_argument("--bin-width", type=float, default=10.0, help="angle bin width in degrees")
    p.add_argument("--preset", choices=["culane", "curvelanes"], default="culane",
                   help="culane: widths 15/800 and 60/800, lambda 1; curvelanes: 5/224, 20/224, lambda 2.5")
    p.add_argument("--k-max", type=int, help="cap on dynamic k (preset default 4)")
    p.add_argument("--w-lane-k", type=float, help="virtual lane width for dynamic k, fraction of image width")
    p.add_argument("--w-lane-cost", type=float, help="virtual lane width for the cost, fraction of image width")
    p.add_argument("--lam", type=float, help="weight of the classification cost")
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_assign_stats)

    p = sub.add_parser("oracle", help="F1 after replacing one prediction component by its GT value",
                       formatter_class=fmt)
    p.add_argument("--mode", choices=["raw", *ORACLE_MODES, "all"], default="all")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--crossval", action="store_true", help="choose each mode's threshold by cross-validation")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--thresholds", default=DEFAULT_THRESHOLDS)
    _add_data_options(p, required=False)
    _add_eval_options(p)
    _add_synth_options(p)
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("synth", help="write a synthetic CULane-format dataset and prediction dump",
                       formatter_class=fmt)
    p.add_argument("--seed", type=int, default=0)
    _add_eval_options(p)
    _add_synth_options(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def apply_config(args, path: str) -> None:
    try:
        data = json.loads(_read_text(path))
    except json.JSONDecodeError as exc:
        raise InputError(f"malformed config JSON at byte {exc.pos}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise InputError("config must be a JSON object")
    for key, value in data.items():
        dest = key.replace("-", "_")
        if dest in ("command", "func", "config") or not hasattr(args, dest):
            raise InputError(f"unknown config key {key!r} for {args.command}")
        setattr(args, dest, value)


def _fail(code: int, exc: BaseException) -> int:
    sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}) + "\n")
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.config:
            apply_config(args, args.config)
        return args.func(args)
    except (LaneIoUError, OSError) as exc:
        return _fail(EXIT_INPUT, exc)
    except Exception as exc:  # anything else is a bug
        log.debug("internal error", exc_info=True)
        return _fail(EXIT_INTERNAL, exc)


if __name__ == "__main__":
    sys.exit(main())
