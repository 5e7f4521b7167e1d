"""Dense two-phase tableau simplex.

Solves ``min c.x  s.t.  A_ub x <= b_ub,  A_eq x = b_eq,  x >= 0`` exactly up
to floating point.  Entering variables follow Dantzig's rule and switch to
Bland's rule after a run of degenerate pivots, which rules out cycling.
Desk-scale only: the whole tableau is kept in memory.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["LPResult", "solve_lp"]

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"

_EPS = 1e-9
_PIVOT_EPS = 1e-11


@dataclass
class LPResult:
    status: str
    x: np.ndarray | None
    fun: float | None
    pivots: int = 0

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


class _Tableau:
    def __init__(self, T: np.ndarray, basis: np.ndarray, degenerate_limit: int):
        self.T = T
        self.basis = basis
        self.degenerate_limit = degenerate_limit
        self.pivots = 0

    def pivot(self, r: int, col: int) -> None:
        T = self.T
        T[r] /= T[r, col]
        colv = T[:, col].copy()
        colv[r] = 0.0
        nz = np.flatnonzero(np.abs(colv) > 0)
        T[nz] -= np.outer(colv[nz], T[r])
        self.basis[r] = col
        self.pivots += 1

    def run(self, allowed: np.ndarray, max_pivots: int) -> str:
        """Optimise the objective row (last row) over columns in ``allowed``."""
        T = self.T
        m = T.shape[0] - 1
        bland = False
        degenerate = 0
        while True:
            obj = T[-1, :-1]
            cand = np.flatnonzero(allowed & (obj < -_EPS))
            if cand.size == 0:
                return OPTIMAL
            if bland:
                col = int(cand[0])
            else:
                col = int(cand[np.argmin(obj[cand])])
            a = T[:m, col]
            rows = np.flatnonzero(a > _PIVOT_EPS)
            if rows.size == 0:
                return UNBOUNDED
            ratios = T[rows, -1] / a[rows]
            best = ratios.min()
            ties = rows[ratios <= best + _EPS * max(1.0, abs(best))]
            # Bland's row rule: smallest basic variable index among ties
            r = int(ties[np.argmin(self.basis[ties])])
            if best <= _EPS:
                degenerate += 1
                if degenerate > self.degenerate_limit:
                    bland = True
            else:
                degenerate = 0
                bland = False
            self.pivot(r, col)
            if self.pivots > max_pivots:
                raise RuntimeError("simplex pivot limit exceeded")


def solve_lp(
    c: np.ndarray,
    A_ub: np.ndarray | None = None,
    b_ub: np.ndarray | None = None,
    A_eq: np.ndarray | None = None,
    b_eq: np.ndarray | None = None,
    *,
    degenerate_limit: int = 50,
    max_pivots: int = 1_000_000,
) -> LPResult:
    """Minimise ``c @ x`` over the nonnegative orthant subject to the rows given.

    Returns an :class:`LPResult` whose ``status`` is ``"optimal"``,
    ``"infeasible"`` or ``"unbounded"``.  Infeasibility is a status, never
    an exception.
    """
    c = np.asarray(c, dtype=float)
    nvar = c.size
    A_ub = np.zeros((0, nvar)) if A_ub is None else np.asarray(A_ub, dtype=float).reshape(-1, nvar)
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float).ravel()
    A_eq = np.zeros((0, nvar)) if A_eq is None else np.asarray(A_eq, dtype=float).reshape(-1, nvar)
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float).ravel()
    m_ub, m_eq = A_ub.shape[0], A_eq.shape[0]
    m = m_ub + m_eq

    if m == 0:
        if np.any(c < -_EPS):
            return LPResult(UNBOUNDED, None, None)
        return LPResult(OPTIMAL, np.zeros(nvar), 0.0)

    # standard form: [x | slacks] with equality rows, rhs made nonnegative
    ncol = nvar + m_ub
    A = np.zeros((m, ncol))
    A[:m_ub, :nvar] = A_ub
    A[:m_ub, nvar:] = np.eye(m_ub)
    A[m_ub:, :nvar] = A_eq
    b = np.concatenate([b_ub, b_eq])
    neg = b < 0
    A[neg] *= -1.0
    b[neg] *= -1.0

    # phase 1: artificials on every row
    T = np.zeros((m + 1, ncol + m + 1))
    T[:m, :ncol] = A
    T[:m, ncol : ncol + m] = np.eye(m)
    T[:m, -1] = b
    T[-1, :ncol] = -A.sum(axis=0)
    T[-1, -1] = -b.sum()
    tab = _Tableau(T, np.arange(ncol, ncol + m), degenerate_limit)
    allowed = np.zeros(ncol + m, dtype=bool)
    allowed[:ncol] = True
    tab.run(allowed, max_pivots)
    if -T[-1, -1] > _EPS * max(1.0, b.sum()):
        return LPResult(INFEASIBLE, None, None, tab.pivots)

    # drive remaining artificials out of the basis; drop redundant rows
    keep = np.ones(m, dtype=bool)
    for r in range(m):
        if tab.basis[r] >= ncol:
            row = T[r, :ncol]
            nz = np.flatnonzero(np.abs(row) > 1e-9)
            if nz.size:
                tab.pivot(r, int(nz[0]))
            else:
                keep[r] = False
    rows = np.flatnonzero(keep)
    T2 = np.zeros((rows.size + 1, ncol + 1))
    T2[:-1, :ncol] = T[rows, :ncol]
    T2[:-1, -1] = T[rows, -1]
    basis = tab.basis[rows].copy()
    cost = np.concatenate([c, np.zeros(m_ub)])
    T2[-1, :ncol] = cost
    T2[-1, -1] = 0.0
    for r, bcol in enumerate(basis):
        if cost[bcol] != 0.0:
            T2[-1] -= cost[bcol] * T2[r]
    tab2 = _Tableau(T2, basis, degenerate_limit)
    tab2.pivots = tab.pivots
    status = tab2.run(np.ones(ncol, dtype=bool), max_pivots)
    if status == UNBOUNDED:
        return LPResult(UNBOUNDED, None, None, tab2.pivots)

    # recompute the basic solution from the original rows to shed pivot drift
    B = A[rows][:, tab2.basis]
    try:
        xb = np.linalg.solve(B, b[rows])
    except np.linalg.LinAlgError:
        xb = T2[:-1, -1]
    if np.any(xb < -1e-7):
        xb = T2[:-1, -1]
    xb = np.where(np.abs(xb) < 1e-12, 0.0, xb)
    xb = np.maximum(xb, 0.0)
    full = np.zeros(ncol)
    full[tab2.basis] = xb
    x = full[:nvar]
    return LPResult(OPTIMAL, x, float(c @ x), tab2.pivots)
