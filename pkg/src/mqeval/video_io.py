"""Streaming reader/writer for Y4M and headerless planar YUV.

Frames are read one at a time; nothing here holds more than the frame being
decoded. 10-bit samples are little-endian 16-bit words on disk.
"""

from __future__ import annotations

import io
import logging
import os
import sys
import warnings
from dataclasses import dataclass
from fractions import Fraction
from typing import BinaryIO, Iterable, Iterator, Optional, Union

import numpy as np

from mqeval.schedule import parse_rate

log = logging.getLogger(__name__)

Y4M_MAGIC = b"YUV4MPEG2"
FRAME_MARKER = b"FRAME"
CHROMA_FORMATS = ("420", "422", "444", "mono")

# Y4M colour-space tags and what they decode to.
_Y4M_TAGS = {
    "420": ("420", 8),
    "420jpeg": ("420", 8),
    "420paldv": ("420", 8),
    "420mpeg2": ("420", 8),
    "422": ("422", 8),
    "444": ("444", 8),
    "mono": ("mono", 8),
    "420p10": ("420", 10),
    "422p10": ("422", 10),
    "444p10": ("444", 10),
    "mono10": ("mono", 10),
}

Source = Union[str, os.PathLike, BinaryIO]


class VideoFormatError(ValueError):
    """Malformed or inconsistent raw video data."""


def plane_shapes(width: int, height: int, chroma: str) -> tuple[tuple[int, int], ...]:
    """(rows, cols) of each plane for the given chroma layout."""
    if chroma == "mono":
        return ((height, width),)
    if chroma == "420":
        c = (-(-height // 2), -(-width // 2))
    elif chroma == "422":
        c = (height, -(-width // 2))
    elif chroma == "444":
        c = (height, width)
    else:
        raise VideoFormatError(f"unsupported chroma format {chroma!r}")
    return ((height, width), c, c)


def _dtype(bit_depth: int) -> np.dtype:
    if bit_depth == 8:
        return np.dtype(np.uint8)
    if bit_depth == 10:
        return np.dtype("<u2")
    raise VideoFormatError(f"unsupported bit depth {bit_depth} (8 or 10)")


@dataclass(frozen=True)
class Frame:
    """One decoded picture; ``planes`` are row-major 2-D arrays (Y first)."""

    width: int
    height: int
    bit_depth: int
    chroma: str
    planes: tuple[np.ndarray, ...]
    index: int = 0

    def __post_init__(self):
        shapes = plane_shapes(self.width, self.height, self.chroma)
        if len(self.planes) != len(shapes):
            raise VideoFormatError(f"expected {len(shapes)} planes for {self.chroma}, got {len(self.planes)}")
        for p, shape in zip(self.planes, shapes):
            if p.shape != shape:
                raise VideoFormatError(f"plane shape {p.shape} does not match {shape} for {self.chroma}")

    @property
    def luma(self) -> np.ndarray:
        return self.planes[0]

    @property
    def geometry(self) -> tuple[int, int, int, str]:
        return (self.width, self.height, self.bit_depth, self.chroma)

    @property
    def nbytes(self) -> int:
        return sum(p.size for p in self.planes) * _dtype(self.bit_depth).itemsize

    @classmethod
    def from_planes(cls, planes, bit_depth: int = 8, chroma: Optional[str] = None, index: int = 0) -> "Frame":
        """Build a frame from array-likes, inferring chroma from the plane shapes when not given."""
        dt = _dtype(bit_depth)
        arrs = tuple(np.ascontiguousarray(np.asarray(p), dtype=dt) for p in planes)
        height, width = arrs[0].shape
        if chroma is None:
            chroma = _infer_chroma(width, height, arrs)
        for p in arrs:
            if p.size and int(p.max()) >= 1 << bit_depth:
                raise VideoFormatError(f"sample value exceeds {bit_depth}-bit range")
        for p in arrs:
            p.flags.writeable = False
        return cls(width, height, bit_depth, chroma, arrs, index)

    def with_index(self, index: int) -> "Frame":
        return Frame(self.width, self.height, self.bit_depth, self.chroma, self.planes, index)


def _infer_chroma(width: int, height: int, planes) -> str:
    if len(planes) == 1:
        return "mono"
    for chroma in ("420", "422", "444"):
        if plane_shapes(width, height, chroma)[1] == planes[1].shape:
            return chroma
    raise VideoFormatError(f"cannot infer chroma layout from plane shapes {[p.shape for p in planes]}")


@dataclass(frozen=True)
class SequenceInfo:
    width: int
    height: int
    bit_depth: int
    chroma: str
    frame_rate: Fraction
    frame_count: Optional[int] = None
    source: str = ""

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise VideoFormatError(f"invalid dimensions {self.width}x{self.height}")
        _dtype(self.bit_depth)
        plane_shapes(self.width, self.height, self.chroma)
        if self.frame_rate <= 0:
            raise VideoFormatError(f"invalid frame rate {self.frame_rate}")
        if self.frame_count is not None and self.frame_count < 0:
            raise VideoFormatError(f"invalid frame count {self.frame_count}")

    @property
    def frame_bytes(self) -> int:
        n = sum(r * c for r, c in plane_shapes(self.width, self.height, self.chroma))
        return n * _dtype(self.bit_depth).itemsize

    @property
    def geometry(self) -> tuple[int, int, int, str]:
        return (self.width, self.height, self.bit_depth, self.chroma)

    def replace(self, **changes) -> "SequenceInfo":
        fields = dict(
            width=self.width,
            height=self.height,
            bit_depth=self.bit_depth,
            chroma=self.chroma,
            frame_rate=self.frame_rate,
            frame_count=self.frame_count,
            source=self.source,
        )
        fields.update(changes)
        return SequenceInfo(**fields)


@dataclass
class RawGeometry:
    """Geometry for headerless YUV input; Y4M input carries its own."""

    width: int
    height: int
    bit_depth: int = 8
    chroma: str = "420"
    frame_rate: Optional[Fraction] = None


def _detect_format(name: str, head: bytes, hint: Optional[str]) -> str:
    if hint:
        hint = hint.lower()
        if hint not in ("y4m", "yuv"):
            raise VideoFormatError(f"unknown format {hint!r} (y4m or yuv)")
        return hint
    if head.startswith(Y4M_MAGIC) or name.lower().endswith(".y4m"):
        return "y4m"
    return "yuv"


def parse_y4m_header(line: bytes) -> dict:
    """Decode a Y4M stream header line (without the trailing newline)."""
    tokens = line.split(b" ")
    if tokens[0] != Y4M_MAGIC:
        raise VideoFormatError("missing YUV4MPEG2 signature")
    out = {"chroma": "420", "bit_depth": 8}
    for tok in tokens[1:]:
        if not tok:
            continue
        key, val = chr(tok[0]), tok[1:].decode("ascii", "replace")
        try:
            if key == "W":
                out["width"] = int(val)
            elif key == "H":
                out["height"] = int(val)
            elif key == "F":
                num, den = val.split(":")
                out["frame_rate"] = Fraction(int(num), int(den))
            elif key == "C":
                if val not in _Y4M_TAGS:
                    raise VideoFormatError(f"unsupported chroma tag C{val}")
                out["chroma"], out["bit_depth"] = _Y4M_TAGS[val]
            elif key == "I" and val not in ("p", "?"):
                log.warning("interlace tag I%s ignored; treating frames as progressive", val)
        except (ValueError, ZeroDivisionError) as exc:
            if isinstance(exc, VideoFormatError):
                raise
            raise VideoFormatError(f"malformed Y4M header token {tok!r}") from exc
    for key in ("width", "height", "frame_rate"):
        if key not in out:
            raise VideoFormatError(f"Y4M header lacks {key}")
    return out


def y4m_header(info: SequenceInfo) -> bytes:
    tag = info.chroma if info.bit_depth == 8 else ("mono10" if info.chroma == "mono" else f"{info.chroma}p10")
    rate = Fraction(info.frame_rate)
    return f"YUV4MPEG2 W{info.width} H{info.height} F{rate.numerator}:{rate.denominator} Ip C{tag}\n".encode()


def _read_line(stream: BinaryIO, limit: int = 4096) -> bytes:
    line = stream.readline(limit)
    if line and not line.endswith(b"\n"):
        raise VideoFormatError("unterminated Y4M header line")
    return line[:-1]


def _read_exact(stream: BinaryIO, n: int) -> bytes:
    buf = stream.read(n)
    if len(buf) == n or not buf:
        return buf
    chunks = [buf]
    got = len(buf)
    while got < n:
        more = stream.read(n - got)
        if not more:
            break
        chunks.append(more)
        got += len(more)
    return b"".join(chunks)


class _Replay:
    """Non-seekable stream with bytes already consumed pushed back in front."""

    def __init__(self, head: bytes, stream: BinaryIO):
        self._head = head
        self._stream = stream

    @property
    def closed(self) -> bool:
        return self._stream.closed

    def close(self) -> None:
        self._stream.close()

    def seekable(self) -> bool:
        return False

    def read(self, n: int = -1) -> bytes:
        if n < 0:
            data, self._head = self._head + self._stream.read(), b""
            return data
        head, self._head = self._head[:n], self._head[n:]
        if len(head) < n:
            head += _read_exact(self._stream, n - len(head))
        return head

    def readline(self, limit: int = -1) -> bytes:
        if self._head:
            cut = self._head.find(b"\n")
            if cut >= 0 and (limit < 0 or cut < limit):
                line, self._head = self._head[: cut + 1], self._head[cut + 1 :]
                return line
            line, self._head = self._head, b""
            rest = limit - len(line) if limit >= 0 else -1
            return line + (self._stream.readline(rest) if rest != 0 else b"")
        return self._stream.readline(limit)


def _peek(stream: BinaryIO, n: int) -> tuple[bytes, BinaryIO]:
    """First ``n`` bytes of ``stream`` without consuming them; may return a wrapped stream."""
    try:
        if stream.seekable():
            pos = stream.tell()
            head = stream.read(n)
            stream.seek(pos)
            return head, stream
    except (OSError, AttributeError):
        pass
    if hasattr(stream, "peek"):
        head = stream.peek(n)[:n]
        if len(head) >= n:
            return head, stream
    head = _read_exact(stream, n)
    return head, _Replay(head, stream)


def _stream_size(stream: BinaryIO) -> Optional[int]:
    try:
        if not stream.seekable():
            return None
        pos = stream.tell()
        end = stream.seek(0, io.SEEK_END)
        stream.seek(pos)
        return end - pos
    except (OSError, AttributeError, ValueError):
        return None


class FrameReader:
    """Sequential, single-consumer frame iterator over an open stream."""

    def __init__(self, stream: BinaryIO, info: SequenceInfo, y4m: bool, owns: bool, max_frames: Optional[int] = None):
        self._stream = stream
        self.info = info
        self._y4m = y4m
        self._owns = owns
        self._max = max_frames
        self._shapes = plane_shapes(info.width, info.height, info.chroma)
        self._dtype = _dtype(info.bit_depth)
        self._count = 0
        self._done = False

    def __iter__(self) -> Iterator[Frame]:
        return self

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def close(self):
        if self._owns and not self._stream.closed:
            self._stream.close()

    def _finish(self):
        self._done = True
        self.close()

    def __next__(self) -> Frame:
        if self._done or (self._max is not None and self._count >= self._max):
            self._finish()
            raise StopIteration
        try:
            frame = self._read_frame()
        except BaseException:
            self._finish()
            raise
        if frame is None:
            self._finish()
            raise StopIteration
        self._count += 1
        return frame

    def _read_frame(self) -> Optional[Frame]:
        size = self.info.frame_bytes
        if self._y4m:
            marker = _read_line(self._stream)
            if not marker:
                return None
            if not marker.startswith(FRAME_MARKER):
                raise VideoFormatError(f"expected FRAME marker before frame {self._count}, got {marker[:16]!r}")
        data = _read_exact(self._stream, size)
        if not data:
            if self._y4m:
                raise VideoFormatError(f"truncated frame {self._count}: FRAME marker without payload")
            return None
        if len(data) != size:
            raise VideoFormatError(f"trailing {len(data)} bytes: incomplete frame {self._count} (frame size {size})")
        flat = np.frombuffer(data, dtype=self._dtype)
        planes = []
        offset = 0
        for rows, cols in self._shapes:
            p = flat[offset : offset + rows * cols].reshape(rows, cols)
            offset += rows * cols
            planes.append(p)
        if self.info.bit_depth != 8 and any(int(p.max()) >= 1 << self.info.bit_depth for p in planes if p.size):
            raise VideoFormatError(f"frame {self._count}: sample exceeds {self.info.bit_depth}-bit range")
        return Frame(self.info.width, self.info.height, self.info.bit_depth, self.info.chroma, tuple(planes), self._count)


def open_sequence(
    source: Source,
    format_hint: Optional[str] = None,
    geometry: Optional[RawGeometry] = None,
    frame_rate=None,
    max_frames: Optional[int] = None,
) -> tuple[SequenceInfo, FrameReader]:
    """Open a Y4M or headerless YUV source for sequential reading.

    ``source`` is a path, ``"-"`` for stdin, or a binary stream. A Y4M frame
    rate wins over ``frame_rate`` (a warning is issued on conflict). Raw YUV
    needs ``geometry`` including a frame rate, or ``frame_rate`` separately.
    """
    owns = False
    if isinstance(source, (str, os.PathLike)):
        name = os.fspath(source)
        if name == "-":
            stream = sys.stdin.buffer
        else:
            stream = open(name, "rb")
            owns = True
    else:
        stream = source
        name = getattr(source, "name", "<stream>")
        name = name if isinstance(name, str) else "<stream>"

    try:
        head, stream = _peek(stream, len(Y4M_MAGIC))
        fmt = _detect_format(name, head, format_hint)
        override = parse_rate(frame_rate) if frame_rate is not None else None
        if fmt == "y4m":
            line = _read_line(stream)
            hdr = parse_y4m_header(line)
            if override is not None and override != hdr["frame_rate"]:
                warnings.warn(
                    f"{name}: header frame rate {hdr['frame_rate']} overrides requested {override}",
                    stacklevel=2,
                )
            info = SequenceInfo(
                hdr["width"], hdr["height"], hdr["bit_depth"], hdr["chroma"], hdr["frame_rate"], None, name
            )
            remaining = _stream_size(stream)
            if remaining is not None:
                per = info.frame_bytes + len(FRAME_MARKER) + 1
                if remaining % per == 0:
                    info = info.replace(frame_count=remaining // per)
        else:
            if geometry is None:
                raise VideoFormatError(f"{name}: headerless YUV needs explicit width/height/bit depth/chroma")
            rate = override if override is not None else geometry.frame_rate
            if rate is None:
                raise VideoFormatError(f"{name}: headerless YUV needs a frame rate")
            info = SequenceInfo(
                geometry.width, geometry.height, geometry.bit_depth, geometry.chroma, parse_rate(rate), None, name
            )
            remaining = _stream_size(stream)
            if remaining is not None:
                trailing = remaining % info.frame_bytes
                if trailing:
                    raise VideoFormatError(
                        f"{name}: trailing {trailing} bytes (file size is not a multiple of the "
                        f"{info.frame_bytes}-byte frame size)"
                    )
                info = info.replace(frame_count=remaining // info.frame_bytes)
    except BaseException:
        if owns:
            stream.close()
        raise

    if max_frames is not None and info.frame_count is not None:
        info = info.replace(frame_count=min(info.frame_count, max_frames))
    return info, FrameReader(stream, info, fmt == "y4m", owns, max_frames)


def write_sequence(
    info: SequenceInfo,
    frames: Iterable[Frame],
    dest: Source,
    format: Optional[str] = None,
) -> int:
    """Write ``frames`` to ``dest`` as Y4M or raw YUV; returns the number of bytes written."""
    owns = False
    if isinstance(dest, (str, os.PathLike)):
        name = os.fspath(dest)
        if name == "-":
            stream = sys.stdout.buffer
        else:
            stream = open(name, "wb")
            owns = True
    else:
        stream = dest
        name = "<stream>"
    if format is None:
        format = "y4m" if name.lower().endswith(".y4m") else "yuv"
    format = format.lower()
    if format not in ("y4m", "yuv"):
        raise VideoFormatError(f"unknown format {format!r} (y4m or yuv)")

    dt = _dtype(info.bit_depth)
    written = 0
    try:
        if format == "y4m":
            hdr = y4m_header(info)
            stream.write(hdr)
            written += len(hdr)
        for n, frame in enumerate(frames):
            if frame.geometry != info.geometry:
                raise VideoFormatError(f"frame {n}: geometry {frame.geometry} differs from stream {info.geometry}")
            if format == "y4m":
                stream.write(FRAME_MARKER + b"\n")
                written += len(FRAME_MARKER) + 1
            for p in frame.planes:
                buf = np.ascontiguousarray(p, dtype=dt).tobytes()
                stream.write(buf)
                written += len(buf)
        stream.flush()
    finally:
        if owns:
            stream.close()
    return written


def read_all(source: Source, **kwargs) -> tuple[SequenceInfo, list[Frame]]:
    """Convenience for small inputs: open and materialize every frame."""
    info, reader = open_sequence(source, **kwargs)
    with reader:
        frames = list(reader)
    return info.replace(frame_count=len(frames)), frames


__all__ = [
    "CHROMA_FORMATS",
    "Frame",
    "FrameReader",
    "RawGeometry",
    "SequenceInfo",
    "VideoFormatError",
    "open_sequence",
    "parse_y4m_header",
    "plane_shapes",
    "read_all",
    "write_sequence",
    "y4m_header",
]
