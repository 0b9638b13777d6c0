"""Frame-pair quality kernels.

Every kernel splits scoring into three steps so that pooling can be done by
the evaluator without knowing the metric:

``measure(ref, dist)``
    raw per-pair quantity (MSE over the squared peak for PSNR, the index for SSIM)
``contribution(raw)``
    the value that gets weighted and averaged
``finalize(mean)``
    turns the pooled mean into the reported score

``score(ref, dist)`` is the plain per-frame metric built from the same pieces.
"""

from __future__ import annotations

import json
import math
import os
import shlex
import subprocess
import tempfile
import threading
from fractions import Fraction
from typing import Optional, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from mqeval.video_io import Frame, SequenceInfo, write_sequence

DEFAULT_CAP_DB = 100.0
POOLING_MODES = ("frame", "mse")
# Combined-plane weights (Y, U, V).
PLANE_WEIGHTS = {"y": 6, "u": 1, "v": 1}
_PLANE_INDEX = {"y": 0, "u": 1, "v": 2}

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


class MetricError(ValueError):
    """Frames cannot be compared (geometry, bit depth or size problems)."""


class ExternalToolError(RuntimeError):
    """An external metric command failed or produced unusable output."""


def _check_pair(ref: Frame, dist: Frame) -> None:
    if ref.geometry != dist.geometry:
        raise MetricError(f"frame geometry mismatch: {ref.geometry} vs {dist.geometry}")


def _select_planes(frame: Frame, planes: str) -> list[tuple[str, int]]:
    planes = planes.lower()
    if not planes or any(c not in _PLANE_INDEX for c in planes):
        raise MetricError(f"invalid plane set {planes!r}; use letters from 'yuv'")
    out = []
    for c in dict.fromkeys(planes):
        idx = _PLANE_INDEX[c]
        if idx >= len(frame.planes):
            raise MetricError(f"plane {c!r} not present in {frame.chroma} frame")
        out.append((c, idx))
    return out


def _db(mse: float, peak: int) -> float:
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def mse(ref: Frame, dist: Frame, planes: str = "y") -> float:
    """Mean squared error over the plane set; several planes are combined 6:1:1 (Y:U:V)."""
    _check_pair(ref, dist)
    total = 0.0
    weight = 0
    for c, idx in _select_planes(ref, planes):
        d = ref.planes[idx].astype(np.int64) - dist.planes[idx].astype(np.int64)
        err = int(np.einsum("ij,ij->", d, d)) / d.size
        total += PLANE_WEIGHTS[c] * err
        weight += PLANE_WEIGHTS[c]
    return total / weight


def psnr(ref: Frame, dist: Frame, planes: str = "y") -> float:
    """PSNR in dB with peak ``2**bit_depth - 1``; ``inf`` for identical planes."""
    return _db(mse(ref, dist, planes), (1 << ref.bit_depth) - 1)


def psnr_per_plane(ref: Frame, dist: Frame, planes: str = "yuv") -> dict[str, float]:
    return {c: psnr(ref, dist, c) for c, _ in _select_planes(ref, planes)}


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalized 1-D Gaussian taps; the 2-D window is their outer product."""
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img: np.ndarray, taps: np.ndarray) -> np.ndarray:
    n = taps.size
    rows = sliding_window_view(img, n, axis=0) @ taps
    return sliding_window_view(rows, n, axis=1) @ taps


def ssim_map(a: np.ndarray, b: np.ndarray, bit_depth: int = 8, window: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Local SSIM over every full window position (no padding)."""
    if a.shape != b.shape:
        raise MetricError(f"plane shape mismatch: {a.shape} vs {b.shape}")
    if a.shape[0] < window or a.shape[1] < window:
        raise MetricError(f"plane {a.shape[1]}x{a.shape[0]} is smaller than the {window}x{window} SSIM window")
    peak = (1 << bit_depth) - 1
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    taps = gaussian_window(window, sigma)
    x = a.astype(np.float64)
    y = b.astype(np.float64)
    mu_x = _filter_valid(x, taps)
    mu_y = _filter_valid(y, taps)
    mu_xx = mu_x * mu_x
    mu_yy = mu_y * mu_y
    mu_xy = mu_x * mu_y
    var_x = _filter_valid(x * x, taps) - mu_xx
    var_y = _filter_valid(y * y, taps) - mu_yy
    cov = _filter_valid(x * y, taps) - mu_xy
    num = (2 * mu_xy + c1) * (2 * cov + c2)
    den = (mu_xx + mu_yy + c1) * (var_x + var_y + c2)
    return num / den


def ssim(ref: Frame, dist: Frame, planes: str = "y") -> float:
    """Mean SSIM (11x11 Gaussian window, sigma 1.5); several planes are combined 6:1:1."""
    _check_pair(ref, dist)
    total = 0.0
    weight = 0
    for c, idx in _select_planes(ref, planes):
        s = float(ssim_map(ref.planes[idx], dist.planes[idx], ref.bit_depth).mean())
        total += PLANE_WEIGHTS[c] * s
        weight += PLANE_WEIGHTS[c]
    return total / weight


class MetricKernel:
    """Base class for frame-pair kernels; see the module docstring for the protocol."""

    name = "metric"
    higher_is_better = True
    bounds: tuple[float, float] = (-math.inf, math.inf)
    pooling = "frame"
    perfect: Optional[float] = None

    def measure(self, ref: Frame, dist: Frame) -> float:
        raise NotImplementedError

    def contribution(self, raw: float) -> float:
        return raw

    def finalize(self, pooled: float) -> float:
        return pooled

    def is_perfect(self, raw: float) -> bool:
        return False

    def score(self, ref: Frame, dist: Frame) -> float:
        raw = self.measure(ref, dist)
        if self.is_perfect(raw) and self.perfect is not None:
            return self.perfect
        return self.finalize(self.contribution(raw))

    def settings(self) -> dict:
        return {"name": self.name, "pooling": self.pooling}


class PSNRKernel(MetricKernel):
    """PSNR with either per-frame dB pooling or MSE pooling.

    In ``frame`` pooling an identical pair contributes ``cap_db`` so a single
    perfect frame does not swamp the mean; the evaluator reports ``inf`` only
    when every pooled pair is identical.
    """

    name = "psnr"
    bounds = (0.0, math.inf)
    perfect = math.inf

    def __init__(self, pooling: str = "frame", planes: str = "y", cap_db: float = DEFAULT_CAP_DB):
        if pooling not in POOLING_MODES:
            raise ValueError(f"unknown pooling {pooling!r}; expected one of {POOLING_MODES}")
        self.pooling = pooling
        self.planes = planes
        self.cap_db = float(cap_db)

    def measure(self, ref: Frame, dist: Frame) -> float:
        """MSE relative to the squared peak, so pooling is independent of bit depth."""
        peak = (1 << ref.bit_depth) - 1
        return mse(ref, dist, self.planes) / (peak * peak)

    def is_perfect(self, raw: float) -> bool:
        return raw == 0

    def contribution(self, raw: float) -> float:
        if self.pooling == "mse":
            return raw
        if raw == 0:
            return self.cap_db
        return -10.0 * math.log10(raw)

    def finalize(self, pooled: float) -> float:
        if self.pooling == "mse":
            return math.inf if pooled == 0 else -10.0 * math.log10(pooled)
        return pooled

    def settings(self) -> dict:
        return {"name": self.name, "pooling": self.pooling, "planes": self.planes, "cap_db": self.cap_db}


class SSIMKernel(MetricKernel):
    name = "ssim"
    bounds = (-1.0, 1.0)
    perfect = 1.0

    def __init__(self, planes: str = "y"):
        self.planes = planes

    def measure(self, ref: Frame, dist: Frame) -> float:
        return ssim(ref, dist, self.planes)

    def is_perfect(self, raw: float) -> bool:
        return raw == 1.0

    def settings(self) -> dict:
        return {"name": self.name, "pooling": self.pooling, "planes": self.planes}


def parse_tool_output(text: str) -> Union[float, list[float]]:
    """Read a score from tool stdout: a JSON number, a JSON list of per-frame numbers,
    a JSON object with a ``frames``/``scores`` list, or a plain number (last non-empty line)."""
    stripped = text.strip()
    if not stripped:
        raise ExternalToolError("external metric produced no output")
    try:
        data = json.loads(stripped)
    except json.JSONDecodeError:
        data = None
    if isinstance(data, dict):
        for key in ("frames", "scores"):
            if key in data:
                data = data[key]
                break
        else:
            raise ExternalToolError(f"JSON output lacks a 'frames' or 'scores' list: {stripped[:80]!r}")
    if isinstance(data, list):
        try:
            return [float(v) for v in data]
        except (TypeError, ValueError) as exc:
            raise ExternalToolError(f"non-numeric entry in per-frame list: {stripped[:80]!r}") from exc
    if isinstance(data, (int, float)) and not isinstance(data, bool):
        return float(data)
    last = stripped.splitlines()[-1].strip()
    try:
        return float(last)
    except ValueError as exc:
        raise ExternalToolError(f"cannot parse metric output: {last[:80]!r}") from exc


def external_metric(template: str, ref_path: str, dist_path: str, width: int = 0, height: int = 0,
                    timeout: Optional[float] = None) -> Union[float, list[float]]:
    """Run one external metric invocation and parse its stdout."""
    cmd = [
        arg.format(ref=ref_path, dist=dist_path, width=width, height=height)
        for arg in shlex.split(template)
    ]
    try:
        proc = subprocess.run(cmd, capture_output=True, text=True, timeout=timeout)
    except FileNotFoundError as exc:
        raise ExternalToolError(f"external metric tool not found: {cmd[0]}") from exc
    except subprocess.TimeoutExpired as exc:
        raise ExternalToolError(f"external metric timed out after {timeout}s: {cmd[0]}") from exc
    if proc.returncode != 0:
        raise ExternalToolError(f"{cmd[0]} exited with status {proc.returncode}: {proc.stderr.strip()[:200]}")
    return parse_tool_output(proc.stdout)


class ExternalKernel(MetricKernel):
    """Scores each frame pair by running an external command on two one-frame Y4M files.

    Results are cached by (reference index, downsampled index) so each
    co-occurring pair is scored once; ``calls`` counts actual invocations.
    """

    name = "external"

    def __init__(self, template: str, name: str = "external", timeout: Optional[float] = None,
                 bounds: tuple[float, float] = (-math.inf, math.inf), max_procs: int = 4):
        if "{ref}" not in template or "{dist}" not in template:
            raise ValueError("external command template needs {ref} and {dist} placeholders")
        self.template = template
        self.name = name
        self.timeout = timeout
        self.bounds = bounds
        self.calls = 0
        self._cache: dict[tuple[int, int], float] = {}
        self._lock = threading.Lock()
        self._procs = threading.BoundedSemaphore(max_procs)

    def clear_cache(self) -> None:
        with self._lock:
            self._cache.clear()

    def measure(self, ref: Frame, dist: Frame) -> float:
        _check_pair(ref, dist)
        key = (ref.index, dist.index)
        with self._lock:
            if key in self._cache:
                return self._cache[key]
        with self._procs, tempfile.TemporaryDirectory(prefix="mqeval-") as tmp:
            paths = []
            for tag, frame in (("ref", ref), ("dist", dist)):
                path = os.path.join(tmp, f"{tag}.y4m")
                info = SequenceInfo(frame.width, frame.height, frame.bit_depth, frame.chroma, Fraction(1), 1)
                write_sequence(info, [frame], path, "y4m")
                paths.append(path)
            out = external_metric(self.template, paths[0], paths[1], ref.width, ref.height, self.timeout)
        if isinstance(out, list):
            if len(out) != 1:
                raise ExternalToolError(f"expected one score for a single frame pair, got {len(out)}")
            out = out[0]
        with self._lock:
            self.calls += 1
            self._cache[key] = out
        return out

    def settings(self) -> dict:
        return {"name": self.name, "pooling": self.pooling, "command": self.template}


class CountingKernel(MetricKernel):
    """Wraps a kernel and counts ``measure`` calls (thread-safe)."""

    def __init__(self, inner: MetricKernel):
        self.inner = inner
        self.name = inner.name
        self.bounds = inner.bounds
        self.pooling = inner.pooling
        self.perfect = inner.perfect
        self.higher_is_better = inner.higher_is_better
        self.calls = 0
        self.pairs: list[tuple[int, int]] = []
        self._lock = threading.Lock()

    def measure(self, ref: Frame, dist: Frame) -> float:
        with self._lock:
            self.calls += 1
            self.pairs.append((ref.index, dist.index))
        return self.inner.measure(ref, dist)

    def contribution(self, raw):
        return self.inner.contribution(raw)

    def finalize(self, pooled):
        return self.inner.finalize(pooled)

    def is_perfect(self, raw):
        return self.inner.is_perfect(raw)

    def settings(self):
        return self.inner.settings()


def make_kernel(metric: str, pooling: str = "frame", planes: str = "y", cap_db: float = DEFAULT_CAP_DB,
                command: Optional[str] = None) -> MetricKernel:
    metric = metric.lower()
    if metric == "psnr":
        return PSNRKernel(pooling, planes, cap_db)
    if pooling != "frame":
        raise ValueError(f"pooling {pooling!r} is only defined for psnr")
    if metric == "ssim":
        return SSIMKernel(planes)
    if metric == "external":
        if not command:
            raise ValueError("metric 'external' needs a command template")
        return ExternalKernel(command)
    raise ValueError(f"unknown metric {metric!r}")


__all__: Sequence[str] = [
    "CountingKernel",
    "DEFAULT_CAP_DB",
    "ExternalKernel",
    "ExternalToolError",
    "MetricError",
    "MetricKernel",
    "PSNRKernel",
    "SSIMKernel",
    "external_metric",
    "gaussian_window",
    "make_kernel",
    "mse",
    "parse_tool_output",
    "psnr",
    "psnr_per_plane",
    "ssim",
    "ssim_map",
]
