"""Matched quality evaluation between a reference and a temporally downsampled sequence.

Both inputs are consumed cluster by cluster: ``n_ref`` reference and
``n_down`` downsampled frames at a time. Each co-occurring frame pair is
scored once and weighted by the number of common-grid slots it spans; the
cluster sum is normalized by ``n_virtual`` and the sequence score is the mean
over clusters.

:func:`evaluate_padded` (integer factors only) and :func:`evaluate_oracle`
(explicit expansion to the common rate) are slower reference paths.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import islice
from typing import Iterable, Iterator, Optional, Union

from mqeval.metrics import MetricError, MetricKernel
from mqeval.schedule import (
    ClusterSchedule,
    FrameRatePair,
    TruncationWarning,
    derive_pair,
    frame_positions,
    generate_schedule,
)
from mqeval.video_io import Frame


class EvaluationError(RuntimeError):
    """A kernel failed on a specific frame pair; the original error is chained."""


@dataclass
class MatchedResult:
    metric: str
    score: float
    cluster_scores: list[float]
    pair: FrameRatePair
    clusters: int
    pairs_evaluated: int
    infinite: bool = False
    capped: bool = False
    settings: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "metric": self.metric,
            "score": self.score,
            "cluster_scores": list(self.cluster_scores),
            "pair": self.pair.as_dict(),
            "clusters": self.clusters,
            "pairs_evaluated": self.pairs_evaluated,
            "infinite": self.infinite,
            "capped": self.capped,
            "kernel": dict(self.settings),
        }


def _as_pair(pair: Union[FrameRatePair, tuple]) -> FrameRatePair:
    if isinstance(pair, FrameRatePair):
        return pair
    return derive_pair(*pair)


def _clusters(reference: Iterable[Frame], downsampled: Iterable[Frame], pair: FrameRatePair,
              max_clusters: Optional[int] = None) -> Iterator[tuple[int, list[Frame], list[Frame]]]:
    """Yield ``(cluster, ref_frames, down_frames)``; warns about leftover frames."""
    ref_it, down_it = iter(reference), iter(downsampled)
    n = 0
    while max_clusters is None or n < max_clusters:
        ref = list(islice(ref_it, pair.n_ref))
        down = list(islice(down_it, pair.n_down))
        if len(ref) < pair.n_ref or len(down) < pair.n_down:
            if n == 0:
                raise ValueError(
                    f"sequences shorter than one cluster: need {pair.n_ref} reference and {pair.n_down} "
                    f"downsampled frames, got {len(ref)} and {len(down)}"
                )
            extra_ref = len(ref) + sum(1 for _ in ref_it)
            extra_down = len(down) + sum(1 for _ in down_it)
            if extra_ref or extra_down:
                warnings.warn(
                    f"truncating to {n} whole clusters: ignoring {extra_ref} reference and "
                    f"{extra_down} downsampled trailing frames",
                    TruncationWarning,
                    stacklevel=3,
                )
            return
        if n == 0 and ref[0].geometry != down[0].geometry:
            raise MetricError(f"geometry mismatch: reference {ref[0].geometry} vs downsampled {down[0].geometry}")
        yield n, ref, down
        n += 1


def _measure(kernel: MetricKernel, ref: Frame, down: Frame, where: str) -> float:
    try:
        return kernel.measure(ref, down)
    except MetricError:
        raise
    except Exception as exc:
        raise EvaluationError(f"{kernel.name} failed at {where}: {exc}") from exc


def _score_cluster(n: int, ref: list[Frame], down: list[Frame], schedule: ClusterSchedule,
                   kernel: MetricKernel) -> tuple[float, bool, bool]:
    """Weighted cluster sum over ``n_virtual``; also whether every pair / any pair was perfect."""
    pair = schedule.pair
    o_ref, o_down = n * pair.n_ref, n * pair.n_down
    q = 0.0
    all_perfect = True
    any_perfect = False
    for w, h, l in schedule.entries():  # noqa: E741
        i, j = frame_positions(n, h, l, pair)
        raw = _measure(kernel, ref[i - o_ref], down[j - o_down], f"cluster {n}, reference frame {i}, downsampled frame {j}")
        perfect = kernel.is_perfect(raw)
        all_perfect &= perfect
        any_perfect |= perfect
        q += w * kernel.contribution(raw)
    return q / pair.n_virtual, all_perfect, any_perfect


def _pool(kernel: MetricKernel, cluster_values: list[tuple[float, bool, bool]]) -> tuple[float, list[float], bool, bool]:
    """Mean over clusters, then the kernel's final transform."""
    values = [v for v, _, _ in cluster_values]
    infinite = all(p for _, p, _ in cluster_values) and kernel.perfect is not None
    capped = any(a for _, _, a in cluster_values) and not infinite
    per_cluster = [kernel.perfect if p and kernel.perfect is not None else kernel.finalize(v)
                   for v, p, _ in cluster_values]
    if infinite:
        return kernel.perfect, per_cluster, True, False
    return kernel.finalize(math.fsum(values) / len(values)), per_cluster, False, capped


def evaluate_matched(reference: Iterable[Frame], downsampled: Iterable[Frame], kernel: MetricKernel,
                     pair: Union[FrameRatePair, tuple], jobs: int = 1,
                     max_clusters: Optional[int] = None) -> MatchedResult:
    """Score ``downsampled`` against ``reference`` at rates ``pair``.

    QM arguments are always (reference frame, downsampled frame). With
    ``jobs > 1`` clusters are scored on a thread pool; results are reduced in
    cluster order so the score does not depend on ``jobs``.
    """
    pair = _as_pair(pair)
    schedule = generate_schedule(pair)
    clusters = _clusters(reference, downsampled, pair, max_clusters)
    if jobs <= 1:
        results = [_score_cluster(n, ref, down, schedule, kernel) for n, ref, down in clusters]
    else:
        results = []
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            pending = []
            for n, ref, down in clusters:
                pending.append(pool.submit(_score_cluster, n, ref, down, schedule, kernel))
                # Bound the number of clusters held in memory.
                while len(pending) >= 2 * jobs:
                    results.append(pending.pop(0).result())
            results.extend(f.result() for f in pending)
    score, per_cluster, infinite, capped = _pool(kernel, results)
    return MatchedResult(
        metric=kernel.name,
        score=score,
        cluster_scores=per_cluster,
        pair=pair,
        clusters=len(results),
        pairs_evaluated=len(results) * len(schedule),
        infinite=infinite,
        capped=capped,
        settings=kernel.settings(),
    )


def evaluate_padded(reference: Iterable[Frame], downsampled: Iterable[Frame], kernel: MetricKernel,
                    pair: Union[FrameRatePair, tuple]) -> float:
    """Integer-factor baseline: each downsampled frame is repeated ``d`` times and
    compared with the ``d`` reference frames it covers."""
    pair = _as_pair(pair)
    factor = pair.f_ref / pair.f_down
    if factor.denominator != 1:
        raise ValueError(f"padding evaluation needs an integer factor, got {factor}")
    d = factor.numerator
    ref_it = iter(reference)
    groups = []
    for j, down in enumerate(downsampled):
        refs = list(islice(ref_it, d))
        if len(refs) < d:
            break
        total = 0.0
        all_perfect = True
        any_perfect = False
        for k, ref in enumerate(refs):
            raw = _measure(kernel, ref, down, f"reference frame {j * d + k}, downsampled frame {j}")
            all_perfect &= kernel.is_perfect(raw)
            any_perfect |= kernel.is_perfect(raw)
            total += kernel.contribution(raw)
        groups.append((total / d, all_perfect, any_perfect))
    if not groups:
        raise ValueError("sequences shorter than one downsampled frame period")
    return _pool(kernel, groups)[0]


def evaluate_oracle(reference: Iterable[Frame], downsampled: Iterable[Frame], kernel: MetricKernel,
                    pair: Union[FrameRatePair, tuple]) -> float:
    """Expand both sequences to the common rate by repeating frames and average
    the metric uniformly over every common-grid slot. Test-sized inputs only."""
    pair = _as_pair(pair)
    ref = list(reference)
    down = list(downsampled)
    clusters = min(len(ref) // pair.n_ref, len(down) // pair.n_down)
    if clusters == 0:
        raise ValueError("sequences shorter than one cluster")
    slots = clusters * pair.n_virtual
    virtual_ref = [ref[t // pair.n_down] for t in range(slots)]
    virtual_down = [down[t // pair.n_ref] for t in range(slots)]
    contributions = []
    perfect = []
    for t, (a, b) in enumerate(zip(virtual_ref, virtual_down)):
        raw = _measure(kernel, a, b, f"virtual slot {t}")
        perfect.append(kernel.is_perfect(raw))
        contributions.append(kernel.contribution(raw))
    if all(perfect) and kernel.perfect is not None:
        return kernel.perfect
    return kernel.finalize(math.fsum(contributions) / slots)


def evaluate_sequences(ref_info, ref_frames, down_info, down_frames, kernel: MetricKernel,
                       jobs: int = 1, max_clusters: Optional[int] = None) -> MatchedResult:
    """:func:`evaluate_matched` with the rate pair taken from two :class:`SequenceInfo`."""
    pair = derive_pair(Fraction(ref_info.frame_rate), Fraction(down_info.frame_rate))
    return evaluate_matched(ref_frames, down_frames, kernel, pair, jobs=jobs, max_clusters=max_clusters)


__all__ = [
    "EvaluationError",
    "MatchedResult",
    "evaluate_matched",
    "evaluate_oracle",
    "evaluate_padded",
    "evaluate_sequences",
]
