"""Rate-distortion tables: manifest parsing, CSV round trip, curve crossings, SVG plot.

Manifest format: one point per line, whitespace-separated ``key=value``
fields (shell quoting allowed), ``#`` starts a comment::

    # label   downsampled+decoded video       reference        size source
    label=120Hz decoded=dec/120_crf18.y4m ref=golf_120.y4m bitstream=enc/120_crf18.hevc setting=crf18
    label=60Hz  decoded=dec/60_crf18.y4m  ref=golf_120.y4m size_bits=1843200 setting=crf18

Keys: ``label``, ``decoded`` and ``ref`` are required, plus exactly one of
``bitstream`` (its byte size is used), ``size_bits`` or ``size_bytes``.
``rate``/``ref_rate`` override the frame rates of headerless inputs;
``setting`` is a free-form rate-control tag. Relative paths are resolved
against the manifest's directory.
"""

from __future__ import annotations

import csv
import io
import math
import os
import shlex
from dataclasses import dataclass, field
from html import escape
from typing import Iterable, Optional

CSV_COLUMNS = ("label", "rate_hz", "file_size_bits", "metric", "score")
MANIFEST_KEYS = {"label", "decoded", "ref", "bitstream", "size_bits", "size_bytes", "rate", "ref_rate", "setting"}


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    line: int
    label: str
    decoded: str
    ref: str
    file_size_bits: int
    rate: Optional[str] = None
    ref_rate: Optional[str] = None
    setting: str = ""


def parse_manifest(text: str, base_dir: str = ".") -> list[ManifestEntry]:
    entries = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            tokens = shlex.split(line)
        except ValueError as exc:
            raise ManifestError(f"line {lineno}: {exc}") from exc
        fields = {}
        for tok in tokens:
            key, sep, value = tok.partition("=")
            if not sep or not value:
                raise ManifestError(f"line {lineno}: expected key=value, got {tok!r}")
            if key not in MANIFEST_KEYS:
                raise ManifestError(f"line {lineno}: unknown field {key!r}")
            if key in fields:
                raise ManifestError(f"line {lineno}: duplicate field {key!r}")
            fields[key] = value
        for key in ("label", "decoded", "ref"):
            if key not in fields:
                raise ManifestError(f"line {lineno}: missing required field {key!r}")
        sources = [k for k in ("bitstream", "size_bits", "size_bytes") if k in fields]
        if len(sources) != 1:
            raise ManifestError(f"line {lineno}: give exactly one of bitstream, size_bits, size_bytes")

        def resolve(path: str) -> str:
            return path if os.path.isabs(path) or path == "-" else os.path.join(base_dir, path)

        if "bitstream" in fields:
            path = resolve(fields["bitstream"])
            try:
                bits = os.path.getsize(path) * 8
            except OSError as exc:
                raise ManifestError(f"line {lineno}: cannot stat bitstream {path}: {exc}") from exc
        else:
            key = sources[0]
            try:
                bits = int(fields[key]) * (8 if key == "size_bytes" else 1)
            except ValueError as exc:
                raise ManifestError(f"line {lineno}: {key} must be an integer") from exc
        if bits <= 0:
            raise ManifestError(f"line {lineno}: file size must be positive")
        entries.append(
            ManifestEntry(
                line=lineno,
                label=fields["label"],
                decoded=resolve(fields["decoded"]),
                ref=resolve(fields["ref"]),
                file_size_bits=bits,
                rate=fields.get("rate"),
                ref_rate=fields.get("ref_rate"),
                setting=fields.get("setting", ""),
            )
        )
    if not entries:
        raise ManifestError("no points in manifest")
    return entries


@dataclass(frozen=True)
class RdPoint:
    label: str
    rate_hz: str
    file_size_bits: int
    metric: str
    score: float

    def __post_init__(self):
        if self.file_size_bits <= 0:
            raise ValueError(f"{self.label}: file size must be positive")


@dataclass
class RdCurve:
    label: str
    points: list[RdPoint] = field(default_factory=list)

    @property
    def sizes(self) -> list[int]:
        return [p.file_size_bits for p in self.points]

    @property
    def scores(self) -> list[float]:
        return [p.score for p in self.points]


@dataclass
class RdTable:
    curves: list[RdCurve]

    @classmethod
    def from_points(cls, points: Iterable[RdPoint]) -> "RdTable":
        by_label: dict[str, list[RdPoint]] = {}
        for p in points:
            by_label.setdefault(p.label, []).append(p)
        curves = []
        for label, pts in by_label.items():
            pts = sorted(pts, key=lambda p: p.file_size_bits)
            for a, b in zip(pts, pts[1:]):
                if a.file_size_bits == b.file_size_bits:
                    raise ValueError(f"curve {label!r}: duplicate file size {a.file_size_bits}")
            curves.append(RdCurve(label, pts))
        return cls(curves)

    def points(self) -> list[RdPoint]:
        return [p for c in self.curves for p in c.points]

    def __eq__(self, other):
        if not isinstance(other, RdTable):
            return NotImplemented
        return [(c.label, c.points) for c in self.curves] == [(c.label, c.points) for c in other.curves]


def _fmt_score(x: float) -> str:
    return repr(float(x)) if math.isfinite(x) else ("inf" if x > 0 else "-inf" if x < 0 else "nan")


def table_to_csv(table: RdTable) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(CSV_COLUMNS)
    for p in table.points():
        writer.writerow([p.label, p.rate_hz, p.file_size_bits, p.metric, _fmt_score(p.score)])
    return buf.getvalue()


def table_from_csv(text: str) -> RdTable:
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
        raise ValueError(f"unexpected CSV columns {reader.fieldnames}; expected {list(CSV_COLUMNS)}")
    points = [
        RdPoint(row["label"], row["rate_hz"], int(row["file_size_bits"]), row["metric"], float(row["score"]))
        for row in reader
    ]
    return RdTable.from_points(points)


@dataclass(frozen=True)
class Crossing:
    first: str
    second: str
    size_low: float
    size_high: float
    size_bits: float
    score: float

    def as_dict(self) -> dict:
        return {
            "curves": [self.first, self.second],
            "bracket_bits": [self.size_low, self.size_high],
            "size_bits": self.size_bits,
            "score": self.score,
        }


def _interp(xs: list[float], ys: list[float], x: float) -> float:
    for k in range(len(xs) - 1):
        if xs[k] <= x <= xs[k + 1]:
            t = (x - xs[k]) / (xs[k + 1] - xs[k])
            return ys[k] + t * (ys[k + 1] - ys[k])
    raise ValueError(f"{x} outside [{xs[0]}, {xs[-1]}]")


def curve_crossings(a: RdCurve, b: RdCurve) -> list[Crossing]:
    """Points where two piecewise-linear RD curves swap order over their common size range.

    Touching without swapping order is not a crossing.
    """
    xa = [float(s) for s in a.sizes]
    xb = [float(s) for s in b.sizes]
    ya, yb = a.scores, b.scores
    if len(xa) < 2 or len(xb) < 2 or not all(map(math.isfinite, ya + yb)):
        return []
    lo, hi = max(xa[0], xb[0]), min(xa[-1], xb[-1])
    if lo >= hi:
        return []
    grid = sorted({x for x in xa + xb if lo <= x <= hi})
    diffs = [_interp(xa, ya, x) - _interp(xb, yb, x) for x in grid]
    out = []
    sign, since = 0, None
    for k, d in enumerate(diffs):
        s = (d > 0) - (d < 0)
        if s == 0:
            continue
        if sign and s != sign:
            j = since
            # Locate the zero between the last nonzero sample j and sample k.
            if k == j + 1:
                t = diffs[j] / (diffs[j] - diffs[k])
                x = grid[j] + t * (grid[k] - grid[j])
            else:
                x = grid[j + 1]
            out.append(Crossing(a.label, b.label, grid[j], grid[k], x, _interp(xa, ya, x)))
        sign, since = s, k
    return out


def find_crossings(table: RdTable) -> list[Crossing]:
    found = []
    for i, a in enumerate(table.curves):
        for b in table.curves[i + 1 :]:
            found.extend(curve_crossings(a, b))
    return found


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw)
    start = math.ceil(lo / step) * step
    ticks = []
    t = start
    while t <= hi + step * 1e-9:
        ticks.append(round(t, 10))
        t += step
    return ticks


def render_svg(table: RdTable, metric: str = "score", width: int = 640, height: int = 420) -> str:
    """Line plot: file size in Mbit (10^6 bits) against score, one polyline per curve."""
    left, right, top, bottom = 64, 130, 20, 50
    pts = [(p.file_size_bits / 1e6, p.score) for p in table.points() if math.isfinite(p.score)]
    if not pts:
        xmin, xmax, ymin, ymax = 0.0, 1.0, 0.0, 1.0
    else:
        xs, ys = zip(*pts)
        xmin, xmax = min(xs), max(xs)
        ymin, ymax = min(ys), max(ys)
    if xmax == xmin:
        xmin, xmax = xmin - 0.5, xmax + 0.5
    if ymax == ymin:
        ymin, ymax = ymin - 0.5, ymax + 0.5
    pad = 0.05 * (ymax - ymin)
    ymin, ymax = ymin - pad, ymax + pad
    pw, ph = width - left - right, height - top - bottom

    def sx(x):
        return left + (x - xmin) / (xmax - xmin) * pw

    def sy(y):
        return top + ph - (y - ymin) / (ymax - ymin) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#000"/>',
    ]
    for t in _ticks(xmin, xmax):
        x = sx(t)
        out.append(f'<line x1="{x:.2f}" y1="{top + ph}" x2="{x:.2f}" y2="{top + ph + 4}" stroke="#000"/>')
        out.append(f'<text x="{x:.2f}" y="{top + ph + 16}" text-anchor="middle">{t:g}</text>')
    for t in _ticks(ymin, ymax):
        y = sy(t)
        out.append(f'<line x1="{left - 4}" y1="{y:.2f}" x2="{left}" y2="{y:.2f}" stroke="#000"/>')
        out.append(f'<text x="{left - 6}" y="{y + 4:.2f}" text-anchor="end">{t:g}</text>')
    out.append(f'<text x="{left + pw / 2}" y="{height - 12}" text-anchor="middle">File size [Mbit]</text>')
    out.append(
        f'<text x="14" y="{top + ph / 2}" text-anchor="middle" '
        f'transform="rotate(-90 14 {top + ph / 2})">{escape(metric)}</text>'
    )
    for k, curve in enumerate(table.curves):
        color = _PALETTE[k % len(_PALETTE)]
        coords = " ".join(
            f"{sx(p.file_size_bits / 1e6):.2f},{sy(p.score):.2f}" for p in curve.points if math.isfinite(p.score)
        )
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>')
        ly = top + 14 + 16 * k
        out.append(f'<line x1="{width - right + 10}" y1="{ly - 4}" x2="{width - right + 30}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{width - right + 36}" y="{ly}">{escape(curve.label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
