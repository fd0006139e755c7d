"""Rectangular linear sum assignment (Jonker-Volgenant shortest augmenting path).

Non-finite entries (``nan``, ``+inf``, ``-inf``) mark forbidden pairs. The
solver first minimises the number of forbidden pairs it is forced to use and
then optimises the objective; forced forbidden pairs are dropped from the
result. Among equally optimal matchings the lexicographically smallest list
of ``(row, col)`` pairs is returned.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

FORBIDDEN = math.nan


@dataclass(frozen=True)
class AssignmentResult:
    pairs: Tuple[Tuple[int, int], ...]
    objective: float

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def as_dict(self) -> dict:
        return dict(self.pairs)


def _jv_square(cost: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Minimise a finite square cost matrix.

    Returns ``(col4row, u, v)`` with row duals ``u`` and column duals ``v`` such
    that ``cost - u[:, None] - v[None, :] >= 0`` with equality on the matching.
    """
    n = cost.shape[0]
    u = np.zeros(n)
    v = np.zeros(n)
    col4row = np.full(n, -1, dtype=np.int64)
    row4col = np.full(n, -1, dtype=np.int64)

    for cur_row in range(n):
        shortest = np.full(n, np.inf)
        path = np.full(n, -1, dtype=np.int64)
        visited_cols = np.zeros(n, dtype=bool)
        visited_rows: List[int] = []
        min_val = 0.0
        i = cur_row
        sink = -1
        while sink < 0:
            visited_rows.append(i)
            reduced = min_val + cost[i] - u[i] - v
            better = (~visited_cols) & (reduced < shortest)
            shortest[better] = reduced[better]
            path[better] = i

            masked = np.where(visited_cols, np.inf, shortest)
            lowest = masked.min()
            ties = np.flatnonzero(masked == lowest)
            free = ties[row4col[ties] < 0]
            j = int(free[0]) if len(free) else int(ties[0])

            min_val = float(lowest)
            visited_cols[j] = True
            if row4col[j] < 0:
                sink = j
            else:
                i = int(row4col[j])

        u[cur_row] += min_val
        for r in visited_rows[1:]:
            u[r] += min_val - shortest[col4row[r]]
        v[visited_cols] -= min_val - shortest[visited_cols]

        j = sink
        while True:
            i = int(path[j])
            row4col[j] = i
            col4row[i], j = j, int(col4row[i])
            if i == cur_row:
                break
    return col4row, u, v


def _penalised(cost: np.ndarray) -> Tuple[np.ndarray, np.ndarray, float]:
    """Replace forbidden entries by a penalty larger than any feasible gain."""
    allowed = np.isfinite(cost)
    finite = cost[allowed]
    if finite.size:
        spread = float(finite.max() - finite.min())
        anchor = float(np.abs(finite).max())
    else:
        spread = anchor = 0.0
    big = (spread + 1.0) * (min(cost.shape) + 1) + anchor
    return np.where(allowed, cost, big), allowed, big


def _pad_square(cost: np.ndarray) -> np.ndarray:
    n, m = cost.shape
    k = max(n, m)
    padded = np.zeros((k, k))
    padded[:n, :m] = cost
    return padded


def _objective(cost: np.ndarray, pairs: Sequence[Tuple[int, int]]) -> float:
    return math.fsum(float(cost[r, c]) for r, c in pairs)


def _matching_key(signed: np.ndarray, allowed: np.ndarray, col4row: np.ndarray) -> Tuple[int, float]:
    """(forbidden pairs used, exact objective of the allowed ones); smaller is better."""
    n, m = signed.shape
    used = [(r, int(col4row[r])) for r in range(n) if col4row[r] < m]
    forbidden = sum(1 for p in used if not allowed[p])
    return forbidden, math.fsum(float(signed[p]) for p in used if allowed[p])


def solve_assignment(cost, maximize: bool = False) -> AssignmentResult:
    """Optimal one-to-one matching of size ``min(n_rows, n_cols)``.

    >>> solve_assignment([[0.7]], maximize=True).pairs
    ((0, 0),)
    """
    cost = np.array(cost, dtype=float)
    if cost.ndim != 2:
        raise ValueError(f"cost matrix must be 2D, got shape {cost.shape}")
    n, m = cost.shape
    if n == 0 or m == 0:
        return AssignmentResult((), 0.0)

    signed = -cost if maximize else cost
    penalised, allowed, big = _penalised(signed)
    work = _pad_square(penalised)
    k = work.shape[0]

    col4row, u, v = _jv_square(work)
    best = _matching_key(signed, allowed, col4row)

    # Any optimal matching only uses edges that are tight under optimal duals,
    # so only those alternatives need an explicit re-solve.
    tol = 1e-9 * (1.0 + float(np.abs(work).max()))
    tight = (work - u[:, None] - v[None, :]) <= tol
    huge = 4.0 * big * k + 1.0
    fixed: List[Tuple[int, Optional[int]]] = []

    # Options per row in lexicographic order of the reported pairs: allowed
    # columns ascending, then "unmatched" (a forbidden or padded column).
    for r in range(n):
        current = int(col4row[r])
        current_opt = current if current < m and allowed[r, current] else None
        options: List[Optional[int]] = [c for c in range(m) if allowed[r, c]]
        options.append(None)
        unmatched_cols = np.ones(k, dtype=bool)
        unmatched_cols[:m] = ~allowed[r]
        # every tight option is re-solved and compared exactly: floating-point
        # duals cannot separate differences far below the matrix magnitude
        ranked = []
        for idx, opt in enumerate(options):
            if opt == current_opt:
                ranked.append((best, idx, col4row))
                continue
            if opt is not None and not tight[r, opt]:
                continue
            if opt is None and not tight[r, unmatched_cols].any():
                continue
            trial = _constrained(work, allowed, fixed + [(r, opt)], m, huge)
            t_col4row, _, _ = _jv_square(trial)
            if any(trial[i, t_col4row[i]] >= huge for i in range(k)):
                continue
            ranked.append((_matching_key(signed, allowed, t_col4row), idx, t_col4row))
        best, _, col4row = min(ranked, key=lambda t: (t[0], t[1]))
        chosen = int(col4row[r])
        fixed.append((r, chosen if chosen < m and allowed[r, chosen] else None))

    pairs = tuple(
        (r, int(col4row[r])) for r in range(n) if col4row[r] < m and allowed[r, col4row[r]]
    )
    return AssignmentResult(pairs, _objective(cost, pairs))


def _constrained(work: np.ndarray, allowed: np.ndarray, fixed, m: int, huge: float) -> np.ndarray:
    trial = work.copy()
    for r, c in fixed:
        if c is None:
            trial[r, :m][allowed[r]] = huge
        else:
            keep = trial[r, c]
            trial[r, :] = huge
            trial[:, c] = huge
            trial[r, c] = keep
    return trial
