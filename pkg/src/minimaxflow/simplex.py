"""Dense two-phase tableau simplex with Bland's anti-cycling rule.

Sized for the small programs built in :mod:`minimaxflow.lp` (a few hundred
rows at most). Pivoting is deterministic: smallest eligible column enters,
ties in the ratio test leave by smallest basic index.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"


@dataclass
class LPResult:
    status: str
    x: np.ndarray | None
    objective: float
    iterations: int
    infeasible_rows: list[int] = field(default_factory=list)


def _pivot(T, r, j):
    T[r] /= T[r, j]
    col = T[:, j].copy()
    col[r] = 0.0
    T -= np.outer(col, T[r])


def _run(T, basis, cost, allowed, tol, max_iter):
    m = T.shape[0]
    n = T.shape[1] - 1
    it = 0
    while it < max_iter:
        reduced = cost - cost[basis] @ T[:, :n]
        cand = np.flatnonzero((reduced < -tol) & allowed)
        if cand.size == 0:
            return OPTIMAL, it
        j = cand[0]
        col = T[:, j]
        pos = col > tol
        if not pos.any():
            return UNBOUNDED, it
        ratios = np.full(m, np.inf)
        ratios[pos] = T[pos, n] / col[pos]
        rmin = ratios.min()
        ties = np.flatnonzero(ratios <= rmin + tol * max(1.0, abs(rmin)))
        r = ties[np.argmin(np.asarray(basis)[ties])]
        _pivot(T, r, j)
        basis[r] = j
        it += 1
    raise RuntimeError(f"simplex did not terminate within {max_iter} pivots")


def linprog(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, bounds=None, tol=1e-9, max_iter=None) -> LPResult:
    """Minimize ``c @ x`` subject to ``A_ub x <= b_ub``, ``A_eq x = b_eq``, bounds.

    ``bounds`` is a list of ``(lo, hi)``; ``lo`` may be ``-inf`` (the variable
    is split into two nonnegative parts) and ``hi`` may be ``inf``. Default is
    ``(0, inf)`` for every variable.
    """
    c = np.asarray(c, dtype=float)
    nx = c.size
    A_ub = np.zeros((0, nx)) if A_ub is None else np.atleast_2d(np.asarray(A_ub, dtype=float))
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float)
    A_eq = np.zeros((0, nx)) if A_eq is None else np.atleast_2d(np.asarray(A_eq, dtype=float))
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float)
    bounds = [(0.0, np.inf)] * nx if bounds is None else [(float(lo), float(hi)) for lo, hi in bounds]

    # x = shift + S y, y >= 0
    cols = []
    shift = np.zeros(nx)
    extra_ub_rows = []
    for k, (lo, hi) in enumerate(bounds):
        if lo > hi:
            return LPResult(INFEASIBLE, None, np.nan, 0, [])
        if np.isfinite(lo):
            shift[k] = lo
            cols.append((k, 1.0))
            if np.isfinite(hi):
                extra_ub_rows.append((len(cols) - 1, None, hi - lo))
        else:
            cols.append((k, 1.0))
            cols.append((k, -1.0))
            if np.isfinite(hi):
                extra_ub_rows.append((len(cols) - 2, len(cols) - 1, hi))
    ny = len(cols)
    S = np.zeros((nx, ny))
    for q, (k, s) in enumerate(cols):
        S[k, q] = s

    ub_A = [A_ub @ S]
    ub_b = [b_ub - A_ub @ shift]
    if extra_ub_rows:
        R = np.zeros((len(extra_ub_rows), ny))
        rb = np.zeros(len(extra_ub_rows))
        for r, (qp, qm, val) in enumerate(extra_ub_rows):
            R[r, qp] = 1.0
            if qm is not None:
                R[r, qm] = -1.0
            rb[r] = val
        ub_A.append(R)
        ub_b.append(rb)
    Aub = np.vstack(ub_A)
    bub = np.concatenate(ub_b)
    Aeq = A_eq @ S
    beq = b_eq - A_eq @ shift

    m_ub, m_eq = Aub.shape[0], Aeq.shape[0]
    m = m_ub + m_eq
    n_slack = m_ub
    # artificials for equality rows and for <= rows with negative rhs
    needs_art = [bub[r] < 0 for r in range(m_ub)] + [True] * m_eq
    n_art = sum(needs_art)
    n = ny + n_slack + n_art
    T = np.zeros((m, n + 1))
    T[:m_ub, :ny] = Aub
    T[:m_ub, ny : ny + m_ub] = np.eye(m_ub)
    T[:m_ub, n] = bub
    T[m_ub:, :ny] = Aeq
    T[m_ub:, n] = beq
    basis = []
    a = ny + n_slack
    art_cols = []
    for r in range(m):
        if T[r, n] < 0:
            T[r] *= -1
        if needs_art[r]:
            T[r, a] = 1.0
            basis.append(a)
            art_cols.append(a)
            a += 1
        else:
            basis.append(ny + r)
    if max_iter is None:
        max_iter = 50 * (m + n) + 100

    iters = 0
    allowed = np.ones(n, dtype=bool)
    if n_art:
        cost1 = np.zeros(n)
        cost1[art_cols] = 1.0
        _, it1 = _run(T, basis, cost1, allowed, tol, max_iter)
        iters += it1
        infeas = float(cost1[basis] @ T[:, n])
        scale = max(1.0, float(np.abs(np.concatenate([bub, beq])).max(initial=0.0)))
        if infeas > 1e-7 * scale:
            rows = [r for r in range(m) if basis[r] in art_cols and T[r, n] > tol]
            return LPResult(INFEASIBLE, None, np.nan, iters, rows)
        # drive zero-level artificials out of the basis; drop redundant rows
        keep = []
        art_set = set(art_cols)
        for r in range(m):
            if basis[r] in art_set:
                nz = [j for j in range(ny + n_slack) if abs(T[r, j]) > 1e-9]
                if nz:
                    _pivot(T, r, nz[0])
                    basis[r] = nz[0]
                    keep.append(r)
            else:
                keep.append(r)
        T = T[keep]
        basis = [basis[r] for r in keep]
        allowed[art_cols] = False

    cost2 = np.zeros(n)
    cost2[:ny] = c @ S
    status, it2 = _run(T, basis, cost2, allowed, tol, max_iter)
    iters += it2
    if status != OPTIMAL:
        return LPResult(status, None, np.nan, iters)
    y = np.zeros(n)
    y[basis] = T[:, n]
    x = shift + S @ y[:ny]
    return LPResult(OPTIMAL, x, float(c @ x), iters)
