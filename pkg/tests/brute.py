"""Exhaustive reference solvers shared by the tests."""

from __future__ import annotations

import itertools
import math

import numpy as np


def brute_force_assignment(cost, maximize=False):
    """Best matching of size min(n, m) by enumeration.

    Forbidden (non-finite) pairs are minimised first and dropped; ties go to
    the lexicographically smallest sorted pair list.
    """
    cost = np.asarray(cost, dtype=float)
    n, m = cost.shape
    if n == 0 or m == 0:
        return (), 0.0
    best_key, best_pairs = None, ()
    if n <= m:
        candidates = (tuple(zip(range(n), cols)) for cols in itertools.permutations(range(m), n))
    else:
        candidates = (
            tuple(sorted(zip(rows, range(m)))) for rows in itertools.permutations(range(n), m)
        )
    for pairs in candidates:
        kept = tuple(p for p in pairs if math.isfinite(cost[p]))
        value = math.fsum(cost[p] for p in kept)
        key = (len(pairs) - len(kept), -value if maximize else value, kept)
        if best_key is None or key < best_key:
            best_key, best_pairs = key, kept
    return best_pairs, math.fsum(cost[p] for p in best_pairs)
