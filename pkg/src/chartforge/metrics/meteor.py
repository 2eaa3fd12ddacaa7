"""Unigram alignment score with a fragmentation penalty.

Given candidate and reference token sequences, the score aligns tokens by
exact match (maximizing the number of matched pairs, then keeping the
alignment as contiguous as possible), and combines precision and recall::

    P = m / |candidate|        R = m / |reference|
    Fmean = P * R / (alpha * P + (1 - alpha) * R)
    penalty = gamma * (chunks / m) ** beta
    score = Fmean * (1 - penalty)          (0 when m = 0)

where ``m`` is the matched-pair count and ``chunks`` the number of maximal
runs that are contiguous in both sequences.  Chunk minimization selects
the longest common fragment first (leftmost on ties), which is exact on
typical code pairs and never changes ``m``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence


class EmptySequenceError(ValueError):
    pass


@dataclass(frozen=True)
class MeteorParams:
    alpha: float = 0.9
    beta: float = 3.0
    gamma: float = 0.5

    def __post_init__(self) -> None:
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must be in (0, 1)")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if not 0 <= self.gamma <= 1:
            raise ValueError("gamma must be in [0, 1]")


def _longest_common_fragment(
    candidate: Sequence[str],
    reference: Sequence[str],
    cand_free: list[bool],
    ref_free: list[bool],
) -> tuple[int, int, int]:
    """Longest run of free, equal tokens; ties break to the smallest
    (candidate, reference) start.  Returns (cand_start, ref_start, length),
    length 0 when nothing matches."""
    best = (0, 0, 0)
    n, m = len(candidate), len(reference)
    # lengths[j] = match run ending at (i-1, j-1) from the previous row
    prev = [0] * (m + 1)
    for i in range(n):
        cur = [0] * (m + 1)
        if cand_free[i]:
            token = candidate[i]
            for j in range(m):
                if ref_free[j] and reference[j] == token:
                    run = prev[j] + 1
                    cur[j + 1] = run
                    if run > best[2]:
                        best = (i - run + 1, j - run + 1, run)
        prev = cur
    return best


def _align(candidate: Sequence[str], reference: Sequence[str]) -> list[tuple[int, int]]:
    """Greedy longest-fragment alignment over exact token matches."""
    cand_free = [True] * len(candidate)
    ref_free = [True] * len(reference)
    pairs: list[tuple[int, int]] = []
    while True:
        ci, ri, length = _longest_common_fragment(candidate, reference, cand_free, ref_free)
        if length == 0:
            break
        for offset in range(length):
            cand_free[ci + offset] = False
            ref_free[ri + offset] = False
            pairs.append((ci + offset, ri + offset))
        if length == 1:
            # Only single-token matches remain; finish them in one pass.
            remaining: dict[str, list[int]] = {}
            for j, free in enumerate(ref_free):
                if free:
                    remaining.setdefault(reference[j], []).append(j)
            for i, free in enumerate(cand_free):
                if free and remaining.get(candidate[i]):
                    j = remaining[candidate[i]].pop(0)
                    cand_free[i] = False
                    ref_free[j] = False
                    pairs.append((i, j))
            break
    pairs.sort()
    return pairs


def _count_chunks(pairs: list[tuple[int, int]]) -> int:
    chunks = 0
    prev_ci, prev_ri = None, None
    for ci, ri in pairs:
        if prev_ci != ci - 1 or prev_ri != ri - 1:
            chunks += 1
        prev_ci, prev_ri = ci, ri
    return chunks


def meteor(
    candidate: Sequence[str],
    reference: Sequence[str],
    params: MeteorParams = MeteorParams(),
) -> float:
    """Score a candidate token sequence against a reference, in [0, 1]."""
    if not candidate or not reference:
        raise EmptySequenceError("both token sequences must be non-empty")
    pairs = _align(candidate, reference)
    m = len(pairs)
    if m == 0:
        return 0.0
    precision = m / len(candidate)
    recall = m / len(reference)
    fmean = (precision * recall) / (
        params.alpha * precision + (1 - params.alpha) * recall
    )
    chunks = _count_chunks(pairs)
    penalty = params.gamma * (chunks / m) ** params.beta
    return fmean * (1 - penalty)
