import io
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_frames
from mqeval.video_io import (
    Frame,
    RawGeometry,
    SequenceInfo,
    VideoFormatError,
    open_sequence,
    parse_y4m_header,
    plane_shapes,
    read_all,
    write_sequence,
)


def _y4m_bytes(header, payloads):
    return header + b"".join(b"FRAME\n" + p for p in payloads)


def test_plane_shapes():
    assert plane_shapes(8, 8, "420") == ((8, 8), (4, 4), (4, 4))
    assert plane_shapes(7, 5, "420") == ((5, 7), (3, 4), (3, 4))
    assert plane_shapes(7, 5, "422") == ((5, 7), (5, 4), (5, 4))
    assert plane_shapes(7, 5, "444") == ((5, 7), (5, 7), (5, 7))
    assert plane_shapes(7, 5, "mono") == ((5, 7),)


def test_read_y4m_header_example(tmp_path):
    payloads = [bytes([i]) * 96 for i in range(3)]
    path = tmp_path / "a.y4m"
    path.write_bytes(_y4m_bytes(b"YUV4MPEG2 W8 H8 F3:1 C420\n", payloads))
    info, frames = open_sequence(path)
    assert (info.width, info.height, info.bit_depth, info.chroma) == (8, 8, 8, "420")
    assert info.frame_rate == Fraction(3) and info.frame_count == 3
    got = list(frames)
    assert [f.index for f in got] == [0, 1, 2]
    assert int(got[2].planes[1][0, 0]) == 2


def test_y4m_header_variants():
    h = parse_y4m_header(b"YUV4MPEG2 W1920 H1080 F30000:1001 Ip A1:1 C420p10 XYSCSS=420P10")
    assert (h["width"], h["height"], h["bit_depth"], h["chroma"]) == (1920, 1080, 10, "420")
    assert h["frame_rate"] == Fraction(30000, 1001)
    assert parse_y4m_header(b"YUV4MPEG2 W2 H2 F25:1")["chroma"] == "420"
    assert parse_y4m_header(b"YUV4MPEG2 W2 H2 F25:1 Cmono")["chroma"] == "mono"


@pytest.mark.parametrize(
    "line",
    [b"YUV4MPEG W8 H8 F1:1", b"YUV4MPEG2 W8 F1:1", b"YUV4MPEG2 W8 H8 F1:0", b"YUV4MPEG2 W8 H8 F1:1 C411", b"YUV4MPEG2 Wx H8 F1:1"],
)
def test_bad_headers(line):
    with pytest.raises(VideoFormatError):
        parse_y4m_header(line)


def test_raw_frame_count(tmp_path):
    path = tmp_path / "a.yuv"
    path.write_bytes(bytes(192))
    info, frames = open_sequence(path, geometry=RawGeometry(8, 8, 8, "mono", Fraction(30)))
    assert info.frame_count == 3
    assert len(list(frames)) == 3


def test_raw_trailing_bytes(tmp_path):
    path = tmp_path / "a.yuv"
    path.write_bytes(bytes(200))
    with pytest.raises(VideoFormatError, match="trailing 8 bytes"):
        open_sequence(path, geometry=RawGeometry(8, 8, 8, "mono", Fraction(30)))


def test_raw_needs_geometry(tmp_path):
    path = tmp_path / "a.yuv"
    path.write_bytes(bytes(64))
    with pytest.raises(VideoFormatError):
        open_sequence(path)
    with pytest.raises(VideoFormatError):
        open_sequence(path, geometry=RawGeometry(8, 8, 8, "mono"))


def test_write_raw_size(tmp_path, rng):
    frames = random_frames(rng, 2, 8, 8, "420")
    info = SequenceInfo(8, 8, 8, "420", Fraction(30), 2)
    assert write_sequence(info, frames, tmp_path / "a.yuv") == 192
    assert (tmp_path / "a.yuv").stat().st_size == 192


def test_write_y4m_bytes(tmp_path, rng):
    frames = random_frames(rng, 2, 8, 8, "420")
    info = SequenceInfo(8, 8, 8, "420", Fraction(30), 2)
    header = b"YUV4MPEG2 W8 H8 F30:1 Ip C420\n"
    n = write_sequence(info, frames, tmp_path / "a.y4m")
    # Oracle: the byte layout assembled by hand.
    expected = _y4m_bytes(header, [b"".join(p.tobytes() for p in f.planes) for f in frames])
    assert n == 192 + len(header) + 2 * len(b"FRAME\n")
    assert (tmp_path / "a.y4m").read_bytes() == expected


def test_ten_bit_is_little_endian(tmp_path):
    f = Frame.from_planes([np.array([[0x0123, 0x03FF]])], bit_depth=10)
    info = SequenceInfo(2, 1, 10, "mono", Fraction(1), 1)
    write_sequence(info, [f], tmp_path / "a.yuv")
    assert (tmp_path / "a.yuv").read_bytes() == b"\x23\x01\xff\x03"


def test_ten_bit_range_checked(tmp_path):
    (tmp_path / "a.yuv").write_bytes(b"\x00\x04")
    _, frames = open_sequence(tmp_path / "a.yuv", geometry=RawGeometry(1, 1, 10, "mono", Fraction(1)))
    with pytest.raises(VideoFormatError):
        list(frames)
    with pytest.raises(VideoFormatError):
        Frame.from_planes([np.array([[1024]])], bit_depth=10)


def test_frame_rate_conflict_warns_and_header_wins(tmp_path):
    path = tmp_path / "a.y4m"
    path.write_bytes(_y4m_bytes(b"YUV4MPEG2 W2 H2 F50:1 Cmono\n", [bytes(4)]))
    with pytest.warns(UserWarning, match="overrides"):
        info, frames = open_sequence(path, frame_rate=60)
    frames.close()
    assert info.frame_rate == 50


def test_truncated_y4m_frame(tmp_path):
    path = tmp_path / "a.y4m"
    path.write_bytes(b"YUV4MPEG2 W2 H2 F1:1 Cmono\nFRAME\n\x00\x00\x00\x00FRAME\n\x00")
    info, frames = open_sequence(path)
    assert info.frame_count is None
    with pytest.raises(VideoFormatError):
        list(frames)


def test_geometry_mismatch_on_write(tmp_path, rng):
    info = SequenceInfo(8, 8, 8, "420", Fraction(30))
    with pytest.raises(VideoFormatError):
        write_sequence(info, random_frames(rng, 1, 8, 8, "mono"), tmp_path / "a.yuv")


def test_non_seekable_stream_reads_without_count(rng):
    frames = random_frames(rng, 3, 4, 4, "mono")
    buf = io.BytesIO()
    info = SequenceInfo(4, 4, 8, "mono", Fraction(24))
    write_sequence(info, frames, buf, "y4m")

    class Pipe(io.RawIOBase):
        def __init__(self, data):
            self._buf = io.BytesIO(data)

        def readable(self):
            return True

        def readinto(self, b):
            chunk = self._buf.read(min(len(b), 5))
            b[: len(chunk)] = chunk
            return len(chunk)

    got_info, reader = open_sequence(io.BufferedReader(Pipe(buf.getvalue())))
    assert got_info.frame_count is None
    got = list(reader)
    assert len(got) == 3
    assert all(np.array_equal(a.luma, b.luma) for a, b in zip(frames, got))


def test_max_frames(tmp_path, rng):
    info = SequenceInfo(4, 4, 8, "mono", Fraction(24))
    write_sequence(info, random_frames(rng, 5, 4, 4, "mono"), tmp_path / "a.y4m")
    got_info, frames = read_all(tmp_path / "a.y4m", max_frames=2)
    assert got_info.frame_count == 2 and len(frames) == 2


def test_frames_are_immutable(tmp_path, rng):
    info = SequenceInfo(4, 4, 8, "mono", Fraction(24))
    write_sequence(info, random_frames(rng, 1, 4, 4, "mono"), tmp_path / "a.y4m")
    _, frames = read_all(tmp_path / "a.y4m")
    with pytest.raises(ValueError):
        frames[0].luma[0, 0] = 1


def test_reader_is_lazy(tmp_path, rng):
    info = SequenceInfo(4, 4, 8, "mono", Fraction(24))
    write_sequence(info, random_frames(rng, 4, 4, 4, "mono"), tmp_path / "a.y4m")
    _, frames = open_sequence(tmp_path / "a.y4m")
    first = next(frames)
    assert first.index == 0
    assert frames._stream.tell() == len(b"YUV4MPEG2 W4 H4 F24:1 Ip Cmono\n") + 6 + 16
    frames.close()


@settings(max_examples=60, deadline=None)
@given(
    width=st.integers(1, 9),
    height=st.integers(1, 9),
    count=st.integers(1, 4),
    chroma=st.sampled_from(["420", "422", "444", "mono"]),
    bit_depth=st.sampled_from([8, 10]),
    fmt=st.sampled_from(["y4m", "yuv"]),
    seed=st.integers(0, 2**32 - 1),
)
def test_round_trip_property(width, height, count, chroma, bit_depth, fmt, seed):
    rng = np.random.default_rng(seed)
    frames = random_frames(rng, count, width, height, chroma, bit_depth)
    info = SequenceInfo(width, height, bit_depth, chroma, Fraction(120), count)
    buf = io.BytesIO()
    write_sequence(info, frames, buf, fmt)
    buf.seek(0)
    geometry = RawGeometry(width, height, bit_depth, chroma, Fraction(120))
    got_info, reader = open_sequence(buf, format_hint=fmt, geometry=geometry)
    got = list(reader)
    assert got_info.geometry == info.geometry and got_info.frame_count == count
    assert len(got) == count
    for a, b in zip(frames, got):
        for pa, pb in zip(a.planes, b.planes):
            assert np.array_equal(pa, pb)
