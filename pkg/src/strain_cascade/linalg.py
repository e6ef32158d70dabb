"""Small dense linear algebra: Z-matrix solves, irreducibility, stability modulus.

Everything here operates on tiny matrices (patch counts), so the
implementations favour verifiable simplicity: LAPACK partial-pivot
solves behind a residual check, boolean BFS for strong connectivity,
and shifted power iteration for the dominant eigenvalue of a Metzler
matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "StabilityResult",
    "ZMatrixError",
    "SolveError",
    "PowerIterationError",
    "solve_z",
    "is_irreducible",
    "stability_modulus",
]


class ZMatrixError(ValueError):
    """Input violates the Z-matrix / diagonal-dominance preconditions."""


class SolveError(RuntimeError):
    """Linear solve failed to reach the required residual (near-singular)."""


class PowerIterationError(RuntimeError):
    """Power iteration hit the iteration cap before the residual tolerance.

    Attributes:
        best: best eigenvalue estimate reached.
        residual: infinity norm of L v - s v at the best iterate.
        iterations: number of iterations performed.
    """

    def __init__(self, best: float, residual: float, iterations: int):
        super().__init__(
            f"power iteration did not converge: best estimate {best!r}, "
            f"residual {residual:.3e} after {iterations} iterations"
        )
        self.best = best
        self.residual = residual
        self.iterations = iterations


@dataclass
class StabilityResult:
    """Dominant eigenvalue of a Metzler matrix with its Perron vector.

    The eigenvector is componentwise positive (matrix irreducible) and
    normalized to sum 1; `iterations` counts power-iteration sweeps.
    """

    modulus: float
    eigenvector: np.ndarray
    iterations: int


def _as_square(m) -> np.ndarray:
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    return a


def solve_z(a, rhs) -> np.ndarray:
    """Solve A x = rhs for a strictly diagonally dominant Z-matrix A.

    Preconditions: off-diagonals <= 0, diagonal > 0, strict diagonal
    dominance by rows or by columns (the total-population matrix built
    from the model is column-dominant with margin b^l > 0), rhs > 0.
    Such a matrix is a nonsingular M-matrix with positive inverse, so
    the solution is componentwise positive.

    Returns x with ||A x - rhs||_inf <= 1e-12 * ||rhs||_inf, refining
    iteratively if the first solve is not good enough.

    Raises:
        ZMatrixError: a precondition fails (message names the index).
        SolveError: the residual target is unreachable (singular to
            working precision).
    """
    a = _as_square(a)
    p = a.shape[0]
    rhs = np.asarray(rhs, dtype=np.float64)
    if rhs.shape != (p,):
        raise ValueError(f"rhs has shape {rhs.shape}, expected ({p},)")
    if not np.isfinite(a).all() or not np.isfinite(rhs).all():
        raise ZMatrixError("non-finite entries")
    if (rhs <= 0).any():
        i = int(np.nonzero(rhs <= 0)[0][0])
        raise ZMatrixError(f"rhs[{i}] = {rhs[i]!r} is not positive")

    off = a - np.diag(np.diag(a))
    if (off > 0).any():
        i, j = np.argwhere(off > 0)[0]
        raise ZMatrixError(f"entry ({i},{j}) = {a[i, j]!r} positive off-diagonal")
    d = np.diag(a)
    if (d <= 0).any():
        i = int(np.nonzero(d <= 0)[0][0])
        raise ZMatrixError(f"diagonal ({i},{i}) = {d[i]!r} is not positive")

    off_abs = np.abs(off)
    row_ok = d > off_abs.sum(axis=1)
    col_ok = d > off_abs.sum(axis=0)
    if not (row_ok.all() or col_ok.all()):
        i = int(np.nonzero(~row_ok)[0][0])
        raise ZMatrixError(
            f"row {i} fails strict diagonal dominance "
            f"(and no column dominance either)"
        )

    target = 1e-12 * np.abs(rhs).max()
    x = np.linalg.solve(a, rhs)
    for _ in range(4):
        r = rhs - a @ x
        if np.abs(r).max() <= target:
            break
        x = x + np.linalg.solve(a, r)
    else:
        r = rhs - a @ x
        if np.abs(r).max() > target:
            raise SolveError(
                f"residual {np.abs(r).max():.3e} exceeds target {target:.3e}"
            )
    if (x <= 0).any():
        raise SolveError("solution not componentwise positive; inputs inconsistent")
    return x


def is_irreducible(m) -> bool:
    """True iff the directed graph on nonzero off-diagonals is strongly connected.

    A 1x1 matrix counts as irreducible.  Strong connectivity is checked
    by breadth-first reachability from node 0 in the graph and in its
    transpose.
    """
    a = _as_square(m)
    p = a.shape[0]
    if p == 1:
        return True
    adj = a != 0.0
    np.fill_diagonal(adj, False)

    def reaches_all(g: np.ndarray) -> bool:
        seen = np.zeros(p, dtype=bool)
        seen[0] = True
        frontier = [0]
        while frontier:
            nxt = []
            for u in frontier:
                for w in np.nonzero(g[:, u])[0]:
                    if not seen[w]:
                        seen[w] = True
                        nxt.append(int(w))
            frontier = nxt
        return bool(seen.all())

    # columns of adj are out-edges under the m[l][i] = i->l orientation;
    # strong connectivity itself does not depend on the orientation choice
    return reaches_all(adj) and reaches_all(adj.T)


def stability_modulus(l, tol: float = 1e-12,
                      max_iterations: int = 100_000) -> StabilityResult:
    """Stability modulus s(L) = max Re(eigenvalue) of a Metzler matrix.

    Shifts by sigma = 1 + max|L_ll| to a nonnegative primitive matrix,
    power-iterates to its Perron root with Collatz-Wielandt bracketing,
    then un-shifts.  For irreducible L the result is a simple real
    eigenvalue with a positive eigenvector (returned normalized to
    sum 1).  Termination: ||L v - s v||_inf <= tol.

    Raises:
        ValueError: L has a negative off-diagonal entry (not Metzler).
        PowerIterationError: iteration cap hit; carries diagnostics.
    """
    a = _as_square(l)
    p = a.shape[0]
    off = a - np.diag(np.diag(a))
    if (off < 0).any():
        i, j = np.argwhere(off < 0)[0]
        raise ValueError(f"not Metzler: entry ({i},{j}) = {a[i, j]!r} negative")

    if p == 1:
        return StabilityResult(float(a[0, 0]), np.ones(1), 0)

    sigma = 1.0 + np.abs(np.diag(a)).max()
    shifted = a + sigma * np.eye(p)

    # Collatz-Wielandt: for v > 0 the Perron root lies between the min
    # and max of (P v)/v, so a small bracket certifies the eigenvalue
    # even when the eigenvector is badly graded; bracket <= tol also
    # implies ||L v - s v||_inf <= tol for v normalized to sum 1.  The
    # bracket cannot shrink below round-off in the matvec (~eps * root),
    # so the effective tolerance is floored there.
    eps = np.finfo(np.float64).eps
    v = np.full(p, 1.0 / p)
    w = shifted @ v
    est = float("nan")
    spread = float("inf")
    for it in range(1, max_iterations + 1):
        ratios = w / v
        lo, hi = ratios.min(), ratios.max()
        est = 0.5 * (lo + hi)
        spread = hi - lo
        if spread <= max(tol, 32.0 * eps * max(1.0, abs(est))):
            return StabilityResult(float(est - sigma), v / v.sum(), it)
        total = w.sum()
        if not np.isfinite(total) or total <= 0:
            raise PowerIterationError(float(est - sigma), float(spread), it)
        v = w / total
        w = shifted @ v
    raise PowerIterationError(float(est - sigma), float(spread), max_iterations)
