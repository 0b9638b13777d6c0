import sys

import numpy as np
import pytest

from mqeval.video_io import Frame, plane_shapes


def const_frame(value, size=16, index=0, bit_depth=8):
    return Frame.from_planes([np.full((size, size), value)], bit_depth=bit_depth, index=index)


def random_frames(rng, count, width=16, height=16, chroma="mono", bit_depth=8):
    hi = 1 << bit_depth
    frames = []
    for i in range(count):
        planes = [rng.integers(0, hi, size=shape) for shape in plane_shapes(width, height, chroma)]
        frames.append(Frame.from_planes(planes, bit_depth=bit_depth, chroma=chroma, index=i))
    return frames


def gradient_sequence(frames=120, size=64, speed=2):
    """Diagonal sawtooth gradient moving ``speed`` pixels per frame to the right."""
    y, x = np.mgrid[0:size, 0:size]
    return [
        Frame.from_planes([((x - speed * t + y) % 128) * 2], index=t)
        for t in range(frames)
    ]


def oracle_schedule(n_ref, n_down):
    """Group the common-grid slots of one cluster by (reference frame, downsampled frame)."""
    triples = []
    for t in range(n_ref * n_down):
        h, l = t // n_down + 1, t // n_ref + 1
        if triples and tuple(triples[-1][1:]) == (h, l):
            triples[-1][0] += 1
        else:
            triples.append([1, h, l])
    return [tuple(x) for x in triples]


@pytest.fixture
def rng():
    return np.random.default_rng(20200526)


@pytest.fixture
def stub_tool(tmp_path):
    """Write a python script and return a command prefix that runs it."""

    def make(body, name="stub.py"):
        path = tmp_path / name
        path.write_text("import sys, json\n" + body)
        return f"{sys.executable} {path}"

    return make
