"""Dense two-phase primal simplex for the small LPs used as geometric oracles.

Solves  min c'u  s.t.  A u >= b  with u free.  Free variables are split, a
surplus column is added per row and phase one runs on artificial variables.
Bland's rule is used throughout, so the method is deterministic and cannot
cycle.  Intended for problems with at most a few hundred rows/columns.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

OPTIMAL = "optimal"
UNBOUNDED = "unbounded"
INFEASIBLE = "infeasible"

_PIVOT_TOL = 1e-9
_MAX_PIVOTS = 100_000


class SimplexError(Exception):
    """Raised when the pivot budget is exhausted without a verdict."""


@dataclass(frozen=True)
class LPResult:
    status: str
    value: float | None
    x: np.ndarray | None
    pivots: int

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


def _pivot(tableau: np.ndarray, basis: np.ndarray, row: int, col: int) -> None:
    tableau[row] /= tableau[row, col]
    for r in range(tableau.shape[0]):
        if r != row and abs(tableau[r, col]) > 0.0:
            tableau[r] -= tableau[r, col] * tableau[row]
    basis[row] = col


def _run_simplex(tableau: np.ndarray, basis: np.ndarray, ncols: int,
                 budget: int) -> tuple[str, int]:
    """Iterate on the tableau until optimality or unboundedness.

    The last tableau row holds reduced costs, the last column the rhs.
    Returns the verdict and the number of pivots spent.
    """
    pivots = 0
    m = tableau.shape[0] - 1
    while True:
        # Bland: entering variable is the lowest index with negative reduced cost.
        col = -1
        for j in range(ncols):
            if tableau[-1, j] < -_PIVOT_TOL:
                col = j
                break
        if col < 0:
            return OPTIMAL, pivots
        # Ratio test; ties broken by smallest basis index (Bland).
        row, best, best_basis = -1, np.inf, -1
        for i in range(m):
            a = tableau[i, col]
            if a > _PIVOT_TOL:
                ratio = tableau[i, -1] / a
                if ratio < best - _PIVOT_TOL or (
                        abs(ratio - best) <= _PIVOT_TOL and basis[i] < best_basis):
                    row, best, best_basis = i, ratio, basis[i]
        if row < 0:
            return UNBOUNDED, pivots
        _pivot(tableau, basis, row, col)
        pivots += 1
        if pivots > budget:
            raise SimplexError("pivot budget exhausted")


def solve_lp(cost: np.ndarray, a: np.ndarray, b: np.ndarray,
             max_pivots: int = _MAX_PIVOTS) -> LPResult:
    """Minimize ``cost @ u`` over ``{u : a @ u >= b}`` with ``u`` free.

    Returns an :class:`LPResult` whose status is one of ``optimal`` /
    ``unbounded`` / ``infeasible``.  Raises :class:`SimplexError` only when
    the pivot budget runs out.
    """
    cost = np.asarray(cost, dtype=float)
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.asarray(b, dtype=float)
    n = cost.shape[0]
    if a.size == 0:
        a = a.reshape(0, n)
    m = a.shape[0]
    if a.shape[1] != n or b.shape[0] != m:
        raise ValueError("inconsistent LP dimensions")

    if m == 0:
        # Unconstrained: optimal only for a zero objective.
        if np.all(cost == 0.0):
            return LPResult(OPTIMAL, 0.0, np.zeros(n), 0)
        return LPResult(UNBOUNDED, None, None, 0)

    # Standard form: u = p - q with p, q >= 0 and surplus s >= 0,
    # giving  [A, -A, -I] [p; q; s] = b.
    eq = np.hstack([a, -a, -np.eye(m)])
    rhs = b.copy()
    neg = rhs < 0.0
    eq[neg] *= -1.0
    rhs[neg] *= -1.0

    ncols = 2 * n + m
    total = ncols + m  # plus artificials
    tableau = np.zeros((m + 1, total + 1))
    tableau[:m, :ncols] = eq
    tableau[:m, ncols:total] = np.eye(m)
    tableau[:m, -1] = rhs
    basis = np.arange(ncols, total)

    # Phase one: minimize the artificial sum.
    tableau[-1, ncols:total] = 1.0
    for i in range(m):
        tableau[-1] -= tableau[i]
    status, used = _run_simplex(tableau, basis, ncols, max_pivots)
    if status != OPTIMAL:
        raise SimplexError("phase one did not reach optimality")
    if tableau[-1, -1] < -1e-7:
        return LPResult(INFEASIBLE, None, None, used)

    # Drive leftover artificials out of the basis; drop redundant rows.
    keep = np.ones(m, dtype=bool)
    for i in range(m):
        if basis[i] >= ncols:
            piv = -1
            for j in range(ncols):
                if abs(tableau[i, j]) > 1e-7:
                    piv = j
                    break
            if piv >= 0:
                _pivot(tableau, basis, i, piv)
            else:
                keep[i] = False
    if not keep.all():
        tableau = np.vstack([tableau[:m][keep], tableau[-1:]])
        basis = basis[keep]
        m = int(keep.sum())

    # Phase two on the original objective.
    tableau[:, ncols:total] = 0.0
    tableau[-1, :] = 0.0
    tableau[-1, :n] = cost
    tableau[-1, n:2 * n] = -cost
    for i in range(m):
        cb = tableau[-1, basis[i]]
        if cb != 0.0:
            tableau[-1] -= cb * tableau[i]
    status, used2 = _run_simplex(tableau, basis, ncols, max_pivots - used)
    pivots = used + used2
    if status == UNBOUNDED:
        return LPResult(UNBOUNDED, None, None, pivots)

    full = np.zeros(ncols)
    for i in range(m):
        if basis[i] < ncols:
            full[basis[i]] = tableau[i, -1]
    u = full[:n] - full[n:2 * n]
    return LPResult(OPTIMAL, float(cost @ u), u, pivots)
