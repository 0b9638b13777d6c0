"""Cluster arithmetic for a pair of frame rates.

Two sequences at rates ``f_ref`` and ``f_down`` line up on a common grid at
``f_lcm = lcm(f_ref, f_down)``. Between two coinciding time stamps lies a
cluster holding ``n_ref`` reference frames and ``n_down`` downsampled frames,
i.e. ``n_virtual = n_ref * n_down`` slots on the common grid.

Indices in :class:`ClusterSchedule` are 1-based; use :func:`frame_positions`
to turn them into 0-based buffer positions.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from fractions import Fraction
from typing import Union

Rate = Union[int, Fraction, str]


class TruncationWarning(UserWarning):
    """Frames past the last whole cluster were ignored."""


def parse_rate(value: Rate) -> Fraction:
    """Parse a frame rate given as ``int``, ``Fraction`` or a string such as ``"30000/1001"``.

    Binary floats are rejected because they cannot express broadcast rates exactly.
    """
    if isinstance(value, bool) or isinstance(value, float):
        raise TypeError(f"frame rate must be exact (int, Fraction or 'num/den' string), got {value!r}")
    if isinstance(value, str):
        text = value.strip()
        if ":" in text:
            text = text.replace(":", "/")
        try:
            rate = Fraction(text)
        except (ValueError, ZeroDivisionError) as exc:
            raise ValueError(f"invalid frame rate {value!r}") from exc
    else:
        rate = Fraction(value)
    if rate <= 0:
        raise ValueError(f"frame rate must be positive, got {value!r}")
    return rate


def _rate_str(rate: Fraction) -> str:
    return str(rate.numerator) if rate.denominator == 1 else f"{rate.numerator}/{rate.denominator}"


@dataclass(frozen=True)
class FrameRatePair:
    f_ref: Fraction
    f_down: Fraction
    g: Fraction
    f_lcm: Fraction
    n_ref: int
    n_down: int

    @property
    def n_virtual(self) -> int:
        return self.n_ref * self.n_down

    @property
    def factor(self) -> Fraction:
        """Downsampling factor ``f_ref / f_down`` in lowest terms."""
        return Fraction(self.n_ref, self.n_down)

    @property
    def is_integer_factor(self) -> bool:
        return self.n_down == 1

    def as_dict(self) -> dict:
        return {
            "f_ref": _rate_str(self.f_ref),
            "f_down": _rate_str(self.f_down),
            "gcd": _rate_str(self.g),
            "f_lcm": _rate_str(self.f_lcm),
            "n_ref": self.n_ref,
            "n_down": self.n_down,
            "n_virtual": self.n_virtual,
            "factor": _rate_str(self.factor),
        }


def derive_pair(f_ref: Rate, f_down: Rate) -> FrameRatePair:
    """Derive GCD, LCM and per-cluster frame counts for a reference/downsampled rate pair.

    >>> p = derive_pair(3, 2)
    >>> (p.n_ref, p.n_down, p.n_virtual, p.f_lcm)
    (3, 2, 6, Fraction(6, 1))
    """
    ref = parse_rate(f_ref)
    down = parse_rate(f_down)
    if down > ref:
        raise ValueError(f"f_down must not exceed f_ref (got f_ref={_rate_str(ref)}, f_down={_rate_str(down)})")
    # Bring both rates onto a common denominator so the GCD is exact.
    den = math.lcm(ref.denominator, down.denominator)
    a = ref.numerator * (den // ref.denominator)
    b = down.numerator * (den // down.denominator)
    k = math.gcd(a, b)
    return FrameRatePair(
        f_ref=ref,
        f_down=down,
        g=Fraction(k, den),
        f_lcm=Fraction(a // k * b, den),
        n_ref=a // k,
        n_down=b // k,
    )


def cluster_count(pair: FrameRatePair, frames_ref: int, frames_down: int) -> int:
    """Number of whole clusters covered by both sequences.

    Sequences of unequal duration or with a partial trailing cluster are
    truncated; a :class:`TruncationWarning` reports the dropped frames.
    """
    if frames_ref < pair.n_ref or frames_down < pair.n_down:
        raise ValueError(
            f"sequences shorter than one cluster: need at least {pair.n_ref} reference and "
            f"{pair.n_down} downsampled frames, got {frames_ref} and {frames_down}"
        )
    count = min(frames_ref // pair.n_ref, frames_down // pair.n_down)
    extra_ref = frames_ref - count * pair.n_ref
    extra_down = frames_down - count * pair.n_down
    if extra_ref or extra_down:
        warnings.warn(
            f"truncating to {count} whole clusters: ignoring {extra_ref} reference and "
            f"{extra_down} downsampled trailing frames",
            TruncationWarning,
            stacklevel=2,
        )
    return count


@dataclass(frozen=True)
class ClusterSchedule:
    pair: FrameRatePair
    w: tuple[int, ...]
    h: tuple[int, ...]
    l: tuple[int, ...]  # noqa: E741

    def __len__(self) -> int:
        return len(self.w)

    def entries(self):
        return zip(self.w, self.h, self.l)

    def as_dict(self) -> dict:
        return {"w": list(self.w), "h": list(self.h), "l": list(self.l), **self.pair.as_dict()}


def generate_schedule(pair: FrameRatePair) -> ClusterSchedule:
    """Walk the shared time stamps of one cluster and emit (weight, ref index, down index).

    Each step closes the display interval of whichever frame ends first; the
    weight is the number of common-grid slots since the previous stamp. On a
    tie (only at the cluster end) the downsampled index advances.
    """
    n_ref, n_down = pair.n_ref, pair.n_down
    steps = n_ref + n_down - 1
    w: list[int] = []
    h: list[int] = []
    l: list[int] = []  # noqa: E741
    last_stamp = 0
    last_ref = last_down = 1
    for _ in range(steps):
        l.append(last_down)
        h.append(last_ref)
        if n_down * last_ref < n_ref * last_down:
            next_stamp = n_down * last_ref
            last_ref += 1
        else:
            next_stamp = n_ref * last_down
            last_down += 1
        w.append(next_stamp - last_stamp)
        last_stamp = next_stamp
    return ClusterSchedule(pair=pair, w=tuple(w), h=tuple(h), l=tuple(l))


def frame_positions(cluster: int, h: int, l: int, pair: FrameRatePair) -> tuple[int, int]:  # noqa: E741
    """Map 1-based in-cluster indices of cluster ``cluster`` (0-based) to 0-based frame positions."""
    if not (1 <= h <= pair.n_ref and 1 <= l <= pair.n_down):
        raise IndexError(f"in-cluster index out of range: h={h}, l={l} for {pair.n_ref}/{pair.n_down}")
    return cluster * pair.n_ref + h - 1, cluster * pair.n_down + l - 1
