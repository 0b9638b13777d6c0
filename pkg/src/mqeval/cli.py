"""Command-line front end: ``schedule``, ``downsample``, ``evaluate``, ``rd-curve``.

Exit codes: 0 success, 2 usage error, 3 data/format error, 4 external-tool error.
"""

from __future__ import annotations

import argparse
import csv
import io
import datetime
import hashlib
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction
from typing import Optional

from mqeval import __version__
from mqeval.matched_eval import EvaluationError, MatchedResult, evaluate_matched
from mqeval.metrics import DEFAULT_CAP_DB, ExternalToolError, MetricError, make_kernel
from mqeval.rd import (
    ManifestError,
    RdPoint,
    RdTable,
    find_crossings,
    parse_manifest,
    render_svg,
    table_to_csv,
)
from mqeval.resample import METHODS, downsample
from mqeval.schedule import derive_pair, generate_schedule, parse_rate
from mqeval.video_io import RawGeometry, VideoFormatError, open_sequence, write_sequence

log = logging.getLogger("mqeval")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_TOOL = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _rate_str(rate) -> str:
    rate = Fraction(rate)
    return str(rate.numerator) if rate.denominator == 1 else f"{rate.numerator}/{rate.denominator}"


def _jsonable(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return "inf" if obj > 0 else "-inf" if obj < 0 else "nan"
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, Fraction):
        return _rate_str(obj)
    return obj


def _dump_json(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=False) + "\n"


def _write_text(path: str, text: str) -> None:
    if path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", newline="") as fh:
            fh.write(text)


def _sha256(path: str) -> Optional[str]:
    if path == "-":
        return None
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _geometry(args, rate=None) -> Optional[RawGeometry]:
    if args.width is None or args.height is None:
        return None
    return RawGeometry(args.width, args.height, args.bitdepth, args.chroma, rate)


def _open(path: str, args, rate=None):
    rate = parse_rate(rate) if rate is not None else None
    return open_sequence(path, geometry=_geometry(args, rate), frame_rate=rate, max_frames=args.max_frames)


def _add_geometry(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("headerless YUV geometry")
    g.add_argument("--width", type=int)
    g.add_argument("--height", type=int)
    g.add_argument("--bitdepth", type=int, choices=(8, 10), default=8)
    g.add_argument("--chroma", choices=("420", "422", "444", "mono"), default="420")
    g.add_argument("--fps", help="frame rate of the (reference) input, e.g. 120 or 30000/1001")
    g.add_argument("--max-frames", type=int, help="read at most this many frames per input")


def _add_metric(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("metric")
    g.add_argument("--metric", action="append", choices=("psnr", "ssim", "external"),
                   help="metric to compute (repeatable; default psnr)")
    g.add_argument("--pooling", choices=("frame", "mse"), default="frame",
                   help="psnr pooling: mean of per-frame dB (frame) or dB of mean MSE (mse)")
    g.add_argument("--planes", default="y", help="planes to score, letters from 'yuv' (default y)")
    g.add_argument("--cap-db", type=float, default=DEFAULT_CAP_DB,
                   help="per-frame PSNR used for identical pairs in frame pooling")
    g.add_argument("--command", help="external metric command template with {ref} {dist} {width} {height}")
    g.add_argument("--jobs", type=int, default=1)
    g.add_argument("--deterministic", action="store_true", help="omit timestamps from reports")


def _kernels(args):
    metrics = args.metric or ["psnr"]
    out = []
    for m in dict.fromkeys(metrics):
        try:
            out.append(make_kernel(m, args.pooling if m == "psnr" else "frame", args.planes, args.cap_db, args.command))
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    return out


def cmd_schedule(args) -> int:
    try:
        pair = derive_pair(args.f_ref, args.f_down)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    sched = generate_schedule(pair)
    if args.json:
        sys.stdout.write(json.dumps(sched.as_dict()) + "\n")
        return EXIT_OK
    p = pair.as_dict()
    print(f"f_ref={p['f_ref']} Hz  f_down={p['f_down']} Hz  f_lcm={p['f_lcm']} Hz  d={p['factor']}")
    print(f"N_ref={pair.n_ref}  N_down={pair.n_down}  N_V={pair.n_virtual}")
    width = max(len(str(v)) for v in sched.w + sched.h + sched.l)
    for name, vec in (("w", sched.w), ("h", sched.h), ("l", sched.l)):
        print(f"{name}: " + " ".join(str(v).rjust(width) for v in vec))
    return EXIT_OK


def cmd_downsample(args) -> int:
    info, frames = _open(args.input, args, args.fps)
    try:
        target = parse_rate(args.to)
        pair = derive_pair(info.frame_rate, target)
    except (TypeError, ValueError) as exc:
        frames.close()
        raise UsageError(str(exc)) from exc
    out_info = info.replace(frame_rate=target, frame_count=None)
    counter = {"n": 0}

    def counted():
        for f in downsample(frames, pair, args.method):
            counter["n"] += 1
            yield f

    with frames:
        nbytes = write_sequence(out_info, counted(), args.output, args.format)
    summary = (f"{args.output}: {counter['n']} frames at {_rate_str(target)} Hz "
               f"(d={_rate_str(pair.factor)}, {args.method}), {nbytes} bytes")
    print(summary, file=sys.stderr if args.output == "-" else sys.stdout)
    return EXIT_OK


def _input_record(path: str, info) -> dict:
    return {
        "path": path,
        "sha256": _sha256(path),
        "width": info.width,
        "height": info.height,
        "bit_depth": info.bit_depth,
        "chroma": info.chroma,
        "frame_rate": _rate_str(info.frame_rate),
        "frame_count": info.frame_count,
    }


def evaluate_files(ref_path: str, dist_path: str, kernel, args, ref_rate=None, dist_rate=None,
                   jobs: int = 1) -> tuple[MatchedResult, dict, dict]:
    ref_info, ref_frames = _open(ref_path, args, ref_rate)
    try:
        dist_info, dist_frames = _open(dist_path, args, dist_rate)
    except BaseException:
        ref_frames.close()
        raise
    with ref_frames, dist_frames:
        try:
            pair = derive_pair(ref_info.frame_rate, dist_info.frame_rate)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        result = evaluate_matched(ref_frames, dist_frames, kernel, pair, jobs=jobs)
    return result, _input_record(ref_path, ref_info), _input_record(dist_path, dist_info)


def _result_csv(results: list[MatchedResult]) -> str:

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(["metric", "score", "f_ref", "f_down", "factor", "clusters", "pairs_evaluated", "infinite", "capped"])
    for r in results:
        p = r.pair.as_dict()
        score = r.score if math.isfinite(r.score) else "inf"
        w.writerow([r.metric, score, p["f_ref"], p["f_down"], p["factor"], r.clusters, r.pairs_evaluated,
                    int(r.infinite), int(r.capped)])
    return buf.getvalue()


def _format_score(r: MatchedResult) -> str:
    if r.infinite:
        return "inf"
    unit = " dB" if r.metric == "psnr" else ""
    return f"{r.score:.4f}{unit}" + (" (cap used)" if r.capped else "")


def cmd_evaluate(args) -> int:
    kernels = _kernels(args)
    results = []
    ref_rec = dist_rec = None
    for kernel in kernels:
        result, ref_rec, dist_rec = evaluate_files(
            args.reference, args.distorted, kernel, args, args.fps, args.dist_fps, jobs=args.jobs
        )
        results.append(result)
    report = {
        "tool": "mqeval",
        "version": __version__,
        "reference": ref_rec,
        "distorted": dist_rec,
        "results": [r.as_dict() for r in results],
    }
    if not args.deterministic:
        report["created"] = datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")
    if args.json:
        _write_text(args.json, _dump_json(report))
    if args.csv:
        _write_text(args.csv, _result_csv(results))
    if args.json != "-" and args.csv != "-":
        for r in results:
            print(f"m{r.metric.upper()}: {_format_score(r)}  (d={r.pair.as_dict()['factor']}, "
                  f"{r.clusters} clusters, {r.pairs_evaluated} frame pairs)")
    return EXIT_OK


def cmd_rd_curve(args) -> int:
    try:
        with open(args.manifest) as fh:
            text = fh.read()
    except OSError as exc:
        raise ManifestError(f"cannot read manifest: {exc}") from exc
    entries = parse_manifest(text, os.path.dirname(os.path.abspath(args.manifest)))
    kernels_for = lambda: _kernels(args)  # noqa: E731  (fresh kernels per point: external caches are per run)
    metric_names = [k.name for k in kernels_for()]

    def run(entry, jobs):
        out = []
        for kernel in kernels_for():
            try:
                result, _, dist_rec = evaluate_files(entry.ref, entry.decoded, kernel, args,
                                                     entry.ref_rate or args.fps, entry.rate, jobs=jobs)
            except (VideoFormatError, MetricError, ValueError, OSError) as exc:
                raise type(exc)(f"manifest line {entry.line} ({entry.label}): {exc}") from exc
            except (EvaluationError, ExternalToolError) as exc:
                raise EvaluationError(f"manifest line {entry.line} ({entry.label}): {exc}") from exc
            out.append(RdPoint(entry.label, dist_rec["frame_rate"], entry.file_size_bits, result.metric, result.score))
        return out

    if len(entries) >= args.jobs:
        with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
            nested = list(pool.map(lambda e: run(e, 1), entries))
    else:
        nested = [run(e, args.jobs) for e in entries]

    reports = []
    for k, metric in enumerate(metric_names):
        table = RdTable.from_points(pts[k] for pts in nested)
        reports.append((metric, table))
    csv_text = "".join(
        table_to_csv(t) if i == 0 else table_to_csv(t).split("\r\n", 1)[1] for i, (_, t) in enumerate(reports)
    )
    _write_text(args.csv, csv_text)
    if args.svg:
        metric, table = reports[0]
        _write_text(args.svg, render_svg(table, metric))
    crossings = {metric: [c.as_dict() for c in find_crossings(table)] for metric, table in reports}
    if args.json:
        _write_text(args.json, _dump_json({"tool": "mqeval", "version": __version__, "crossings": crossings}))
    for metric, found in crossings.items():
        print(f"{metric}: {len(found)} curve intersection(s)")
        for c in found:
            lo, hi = c["bracket_bits"]
            print(f"  {c['curves'][0]} x {c['curves'][1]} between {lo:.0f} and {hi:.0f} bits "
                  f"(at ~{c['size_bits']:.0f} bits, score {c['score']:.4f})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mqeval", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"mqeval {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command_name", required=True)

    p = sub.add_parser("schedule", help="print cluster weights and frame indices for two frame rates")
    p.add_argument("f_ref")
    p.add_argument("f_down")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("downsample", help="temporally downsample a raw video")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--to", required=True, help="target frame rate")
    p.add_argument("--method", choices=METHODS, default="average")
    p.add_argument("--format", choices=("y4m", "yuv"), help="output format (default from extension)")
    _add_geometry(p)
    p.set_defaults(func=cmd_downsample)

    p = sub.add_parser("evaluate", help="matched quality of a downsampled video against its reference")
    p.add_argument("reference")
    p.add_argument("distorted")
    p.add_argument("--dist-fps", help="frame rate of a headerless distorted input")
    p.add_argument("--json", nargs="?", const="-", help="write JSON report (default stdout)")
    p.add_argument("--csv", nargs="?", const="-", help="write CSV summary (default stdout)")
    _add_geometry(p)
    _add_metric(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("rd-curve", help="evaluate a manifest of encoded points into RD curves")
    p.add_argument("manifest")
    p.add_argument("--csv", required=True, help="output CSV path ('-' for stdout)")
    p.add_argument("--svg", help="optional SVG plot path")
    p.add_argument("--json", help="optional JSON file with detected curve intersections")
    _add_geometry(p)
    _add_metric(p)
    p.set_defaults(func=cmd_rd_curve)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    logging.captureWarnings(True)
    if getattr(args, "jobs", 1) < 1:
        print("mqeval: error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"mqeval: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ExternalToolError as exc:
        print(f"mqeval: external tool error: {exc}", file=sys.stderr)
        return EXIT_TOOL
    except EvaluationError as exc:
        cause = exc.__cause__
        while cause is not None and not isinstance(cause, ExternalToolError):
            cause = cause.__cause__
        print(f"mqeval: error: {exc}", file=sys.stderr)
        return EXIT_TOOL if cause is not None else EXIT_DATA
    except (VideoFormatError, MetricError, ManifestError, ValueError, OSError) as exc:
        print(f"mqeval: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    finally:
        logging.captureWarnings(False)


if __name__ == "__main__":
    sys.exit(main())
