"""Small convex QPs with many two-sided linear constraints.

Solves ``min_a  c - 2 b.a + a.G.a``  subject to  ``lo <= M a <= hi``
with projected gradient descent (Armijo backtracking).  Euclidean
projections onto the polyhedron use Dykstra's alternating projections,
visiting only the half-spaces that are violated or carry a correction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError

REL_DECREASE_TOL = 1e-10
GAP_TOL = 1e-9


@dataclass
class QPResult:
    x: np.ndarray
    value: float
    iterations: int
    gap: float


def _dykstra(y, M, lo, hi, row_sq, tol=1e-13, max_sweeps=20000):
    """Euclidean projection of ``y`` onto ``{x : lo <= M x <= hi}``."""
    x = y.copy()
    # half-space k < K is the upper bound of row k, k >= K the lower bound
    corr: dict[int, np.ndarray] = {}
    K = M.shape[0]
    scale = 1.0 + float(np.max(np.abs(hi))) + float(np.max(np.abs(lo)))
    for _ in range(max_sweeps):
        v = M @ x
        viol = np.concatenate([np.nonzero(v > hi + tol * scale)[0],
                               np.nonzero(v < lo - tol * scale)[0] + K])
        active = sorted(set(viol.tolist()) | set(corr))
        if viol.size == 0 and not corr:
            return x
        moved = 0.0
        for h in active:
            row = h % K
            q = corr.get(h)
            z = x + q if q is not None else x
            m = M[row]
            val = m @ z
            if h < K:
                excess = val - hi[row]
                step = excess / row_sq[row] if excess > 0 else 0.0
            else:
                excess = lo[row] - val
                step = -excess / row_sq[row] if excess > 0 else 0.0
            new_x = z - step * m if step != 0.0 else z
            new_q = z - new_x
            if np.any(new_q):
                corr[h] = new_q
            else:
                corr.pop(h, None)
            moved = max(moved, float(np.max(np.abs(new_x - x))))
            x = new_x
        if viol.size == 0 and moved <= tol * (1.0 + float(np.max(np.abs(x)))):
            return x
    return x


def _restore_feasibility(x, M, lo, hi):
    """Shrink ``x`` toward the origin (strictly feasible) until no bound is violated."""
    v = M @ x
    t = 1.0
    up = v > hi
    if np.any(up):
        t = min(t, float(np.min(hi[up] / v[up])))
    dn = v < lo
    if np.any(dn):
        t = min(t, float(np.min(lo[dn] / v[dn])))
    return x * t


def project_polyhedron(y, M, lo, hi):
    row_sq = np.einsum("ij,ij->i", M, M)
    x = _dykstra(np.asarray(y, dtype=float), M, lo, hi, row_sq)
    return _restore_feasibility(x, M, lo, hi)


def solve_qp(G, b, c, M, lo, hi, x0, max_iter=20000):
    """Minimise the quadratic over the polyhedron starting from a feasible ``x0``.

    Projected gradient with Barzilai-Borwein trial steps and Armijo
    backtracking along the projection arc.  Stops when the gradient-mapping
    gap falls below ``GAP_TOL`` or the relative objective decrease of a step
    falls below ``REL_DECREASE_TOL``.  Requires ``lo < 0 < hi`` so that the
    origin is strictly feasible.
    """
    G = np.asarray(G, dtype=float)
    b = np.asarray(b, dtype=float)
    row_sq = np.einsum("ij,ij->i", M, M)

    def f(a):
        return float(c - 2.0 * b @ a + a @ G @ a)

    def proj(a):
        return _restore_feasibility(_dykstra(a, M, lo, hi, row_sq), M, lo, hi)

    x = proj(np.asarray(x0, dtype=float))
    fx = f(x)
    L = max(2.0 * float(np.max(np.linalg.eigvalsh(G))), 1e-300)
    t_min, t_max = 1e-10 / L, 1e10 / L
    t = 1.0 / L
    gap = np.inf
    for it in range(1, max_iter + 1):
        grad = 2.0 * (G @ x - b)
        step = t
        while True:
            x_new = proj(x - step * grad)
            d = x_new - x
            f_new = f(x_new)
            if f_new <= fx + 1e-4 * (grad @ d) or step <= t_min:
                break
            step *= 0.5
        gap = float(np.linalg.norm(d) / step) / max(1.0, float(np.linalg.norm(grad)))
        decrease = fx - f_new
        if decrease < 0:
            return QPResult(x, fx, it, gap)
        sy = 2.0 * float(d @ G @ d)
        t = float(np.clip(d @ d / sy, t_min, t_max)) if sy > 0 else t_max
        x, fx = x_new, f_new
        if gap < GAP_TOL or decrease < REL_DECREASE_TOL * max(abs(fx), 1e-300):
            return QPResult(x, fx, it, gap)
    raise ConvergenceError(
        f"projected gradient did not converge in {max_iter} iterations (gap {gap:.3g})",
        best=x,
        gap=gap,
        iterations=max_iter,
    )
