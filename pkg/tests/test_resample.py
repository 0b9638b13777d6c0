import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import const_frame, random_frames
from mqeval.resample import downsample, drop_indices, overlap_matrix
from mqeval.schedule import TruncationWarning, derive_pair, generate_schedule
from mqeval.video_io import Frame


def values(frames):
    return [int(f.luma[0, 0]) for f in frames]


def slot_average_oracle(frames, pair):
    """Expand to the common grid and box-average each output interval (half-up rounding)."""
    out = []
    clusters = len(frames) // pair.n_ref
    for c in range(clusters):
        chunk = frames[c * pair.n_ref : (c + 1) * pair.n_ref]
        slots = [chunk[t // pair.n_down] for t in range(pair.n_virtual)]
        for j in range(pair.n_down):
            covered = slots[j * pair.n_ref : (j + 1) * pair.n_ref]
            planes = []
            for p in range(len(chunk[0].planes)):
                total = sum(f.planes[p].astype(np.int64) for f in covered)
                planes.append(np.floor(total / pair.n_ref + 0.5).astype(np.int64))
            out.append(planes)
    return out


def test_constant_average():
    pair = derive_pair(4, 1)
    out = list(downsample([const_frame(77, index=i) for i in range(4)], pair, "average"))
    assert values(out) == [77]


def test_two_to_one_mean():
    out = list(downsample([const_frame(10), const_frame(20)], derive_pair(2, 1), "average"))
    assert values(out) == [15]


def test_three_to_two_average():
    frames = [const_frame(v, index=i) for i, v in enumerate((10, 20, 30))]
    out = list(downsample(frames, derive_pair(3, 2), "average"))
    assert values(out) == [13, 27]
    assert [f.index for f in out] == [0, 1]


def test_three_to_two_drop():
    frames = [const_frame(v, index=i) for i, v in enumerate((1, 2, 3))]
    assert values(downsample(frames, derive_pair(3, 2), "drop")) == [1, 2]


def test_drop_integer_factor_is_every_dth():
    frames = [const_frame(i, index=i) for i in range(12)]
    assert values(downsample(frames, derive_pair(4, 1), "drop")) == [0, 4, 8]


def test_drop_indices_match_stamp_enumeration():
    for n_ref in range(1, 25):
        for n_down in range(1, n_ref + 1):
            if math.gcd(n_ref, n_down) != 1:
                continue
            pair = derive_pair(n_ref, n_down)
            starts = [j * pair.n_ref for j in range(pair.n_down)]
            assert drop_indices(pair) == [t // pair.n_down for t in starts]


def test_rounding_half_away_from_zero():
    # 1 and 2 average to 1.5 -> 2; 0 and 1 -> 0.5 -> 1
    frames = [const_frame(1), const_frame(2), const_frame(0), const_frame(1)]
    assert values(downsample(frames, derive_pair(2, 1), "average")) == [2, 1]


def test_overlap_matrix_is_cooccurrence():
    for n_ref, n_down in [(3, 2), (6, 5), (24, 5), (12, 5), (7, 3), (1, 1), (8, 1)]:
        pair = derive_pair(n_ref, n_down)
        m = overlap_matrix(generate_schedule(pair))
        expected = np.zeros_like(m)
        for t in range(pair.n_virtual):
            expected[t // n_ref, t // n_down] += 1
        assert np.array_equal(m, expected)
        assert (m.sum(axis=1) == n_ref).all() and (m.sum(axis=0) == n_down).all()


@pytest.mark.parametrize("d", [2, 3, 4, 8])
def test_integer_average_is_plain_mean(d, rng):
    frames = random_frames(rng, 3 * d, 8, 8, "420")
    out = list(downsample(frames, derive_pair(d, 1), "average"))
    assert len(out) == 3
    for j, f in enumerate(out):
        group = frames[j * d : (j + 1) * d]
        for p in range(3):
            mean = sum(g.planes[p].astype(np.int64) for g in group) / d
            assert np.array_equal(f.planes[p], np.floor(mean + 0.5).astype(np.uint8))


@settings(max_examples=40, deadline=None)
@given(n_ref=st.integers(1, 12), n_down=st.integers(1, 12), seed=st.integers(0, 2**32 - 1),
       bit_depth=st.sampled_from([8, 10]))
def test_average_matches_slot_oracle(n_ref, n_down, seed, bit_depth):
    n_ref, n_down = max(n_ref, n_down), min(n_ref, n_down)
    pair = derive_pair(n_ref, n_down)
    rng = np.random.default_rng(seed)
    frames = random_frames(rng, 2 * pair.n_ref, 6, 4, "420", bit_depth)
    out = list(downsample(frames, pair, "average"))
    expected = slot_average_oracle(frames, pair)
    assert len(out) == 2 * pair.n_down
    for f, planes in zip(out, expected):
        assert f.bit_depth == bit_depth
        for a, b in zip(f.planes, planes):
            assert np.array_equal(a, b)


@pytest.mark.parametrize("method", ["drop", "average"])
@pytest.mark.parametrize("rates", [(3, 2), (120, 100), (120, 25), (5, 1)])
def test_constant_sequences_are_fixed_points(method, rates):
    pair = derive_pair(*rates)
    frames = [Frame.from_planes([np.full((4, 4), 123), np.full((2, 2), 7), np.full((2, 2), 250)], index=i)
              for i in range(2 * pair.n_ref)]
    out = list(downsample(frames, pair, method))
    assert len(out) == 2 * pair.n_down
    for f in out:
        assert all(np.array_equal(a, b) for a, b in zip(f.planes, frames[0].planes))


def test_output_length_and_truncation():
    pair = derive_pair(120, 100)
    frames = [const_frame(0, size=2, index=i) for i in range(15)]
    with pytest.warns(TruncationWarning):
        out = list(downsample(frames, pair, "average"))
    assert len(out) == 10


def test_too_short():
    with pytest.raises(ValueError, match="shorter than one cluster"):
        list(downsample([const_frame(0)], derive_pair(3, 2)))


def test_unknown_method():
    with pytest.raises(ValueError):
        list(downsample([const_frame(0)], derive_pair(1, 1), "nearest"))
