"""Circular clock algebra over the tick ring [0, tau_max).

All clock and record values live on an integer ring; the operations here
give them a consistent arithmetic (modular add/subtract), a symmetric
distance, and an ordering/median convention based on cutting the ring at
its largest empty arc.  Everything is exact integer arithmetic.
"""

from __future__ import annotations

from collections.abc import Iterable, Sequence

from .errors import ConfigurationError

__all__ = [
    "check_ring_value",
    "wrap_add",
    "wrap_sub",
    "ring_dist",
    "circ_sort",
    "ring_med",
]


def check_ring_value(v: int, tau_max: int) -> None:
    if tau_max < 2:
        raise ConfigurationError(f"ring modulus must be >= 2, got {tau_max}")
    if not (0 <= v < tau_max):
        raise ConfigurationError(f"value {v} outside ring [0, {tau_max})")


def wrap_add(a: int, b: int, tau_max: int) -> int:
    """(a + b) mod tau_max."""
    check_ring_value(a, tau_max)
    check_ring_value(b, tau_max)
    return (a + b) % tau_max


def wrap_sub(a: int, b: int, tau_max: int) -> int:
    """(a - b) mod tau_max, always non-negative."""
    check_ring_value(a, tau_max)
    check_ring_value(b, tau_max)
    return (a - b) % tau_max


def ring_dist(a: int, b: int, tau_max: int) -> int:
    """Symmetric ring distance min{a - b, b - a} (mod tau_max)."""
    check_ring_value(a, tau_max)
    check_ring_value(b, tau_max)
    d = (a - b) % tau_max
    return min(d, tau_max - d)


def circ_sort(values: Iterable[int], tau_max: int) -> list[int]:
    """Order ring values along the arc that excludes the largest gap.

    The ring is cut at the largest gap between adjacent values; ties are
    broken by choosing the cut after which the first output value is
    smallest.  The result is ascending along the remaining arc, which makes
    "median" and "trim extremes" well defined for clustered circular values.
    """
    vals = sorted(values)
    n = len(vals)
    if n == 0:
        raise ValueError("circ_sort of an empty multiset")
    for v in vals:
        check_ring_value(v, tau_max)
    # Gap after index j runs from vals[j] to its cyclic successor.
    best_j = None
    best_gap = -1
    best_start = None
    for j in range(n):
        nxt = vals[(j + 1) % n]
        gap = (nxt - vals[j]) % tau_max
        if gap > best_gap or (gap == best_gap and nxt < best_start):
            best_gap, best_j, best_start = gap, j, nxt
    cut = (best_j + 1) % n
    return vals[cut:] + vals[:cut]


def ring_med(values: Iterable[int], tau_max: int) -> int:
    """Ring median: the lower-middle element of the circularly sorted values.

    Always returns an attained input value, so equality tests against the
    median are meaningful.
    """
    ordered = circ_sort(values, tau_max)
    return ordered[(len(ordered) - 1) // 2]


def unwrap(ordered: Sequence[int], tau_max: int) -> list[int]:
    """Offsets of circularly sorted values from the arc start."""
    if not ordered:
        raise ValueError("unwrap of an empty sequence")
    start = ordered[0]
    return [(v - start) % tau_max for v in ordered]
