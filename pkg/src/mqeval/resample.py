"""Temporal downsampling by any rational factor.

Works one cluster at a time: ``n_ref`` input frames in, ``n_down`` frames out.
"""

from __future__ import annotations

import warnings
from itertools import islice
from typing import Iterable, Iterator

import numpy as np

from mqeval.schedule import ClusterSchedule, FrameRatePair, TruncationWarning, generate_schedule
from mqeval.video_io import Frame

METHODS = ("drop", "average")


def overlap_matrix(schedule: ClusterSchedule) -> np.ndarray:
    """Shared common-grid slots between output frame ``j`` (row) and input frame ``k`` (column).

    Rows sum to ``n_ref``, columns to ``n_down``.
    """
    pair = schedule.pair
    m = np.zeros((pair.n_down, pair.n_ref), dtype=np.int64)
    for w, h, l in schedule.entries():  # noqa: E741
        m[l - 1, h - 1] += w
    return m


def drop_indices(pair: FrameRatePair) -> list[int]:
    """0-based input frame shown at the start of each output frame within a cluster."""
    return [j * pair.n_ref // pair.n_down for j in range(pair.n_down)]


def _average(frames: list[Frame], weights: np.ndarray, total: int, index: int) -> Frame:
    planes = []
    for p in range(len(frames[0].planes)):
        acc = np.zeros(frames[0].planes[p].shape, dtype=np.int64)
        for k, wk in enumerate(weights):
            if wk:
                acc += int(wk) * frames[k].planes[p].astype(np.int64)
        # Round half away from zero; samples are non-negative.
        out = (2 * acc + total) // (2 * total)
        planes.append(out)
    f0 = frames[0]
    return Frame.from_planes(planes, f0.bit_depth, f0.chroma, index)


def downsample(frames: Iterable[Frame], pair: FrameRatePair, method: str = "average") -> Iterator[Frame]:
    """Yield the sequence at ``pair.f_down``; output length is ``clusters * n_down``.

    ``average`` blends the input frames overlapping each output frame's display
    interval, weighted by overlap; ``drop`` keeps the input frame showing at the
    output frame's start time. Trailing frames short of a cluster are dropped
    with a :class:`TruncationWarning`.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    weights = overlap_matrix(generate_schedule(pair))
    picks = drop_indices(pair)
    it = iter(frames)
    out_index = 0
    clusters = 0
    while True:
        chunk = list(islice(it, pair.n_ref))
        if len(chunk) < pair.n_ref:
            if clusters == 0:
                raise ValueError(f"input shorter than one cluster ({len(chunk)} < {pair.n_ref} frames)")
            if chunk:
                warnings.warn(
                    f"dropping {len(chunk)} trailing frames that do not fill a cluster of {pair.n_ref}",
                    TruncationWarning,
                    stacklevel=2,
                )
            return
        for j in range(pair.n_down):
            if method == "drop":
                yield chunk[picks[j]].with_index(out_index)
            else:
                yield _average(chunk, weights[j], pair.n_ref, out_index)
            out_index += 1
        clusters += 1
