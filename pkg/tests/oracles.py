"""Independent reference solvers used only by the tests.

``enumerate_optimum`` never touches the package solver: it walks every sign
pattern of the l1 coordinates and every active subset of the inequality
rows, solves the equality-constrained quadratic on that face, and keeps the
best point that is feasible and consistent with its sign pattern. For a
strictly convex objective the optimum is the minimizer of its own face, so
the best candidate is the global optimum.
"""

from __future__ import annotations

import itertools

import numpy as np


def enumerate_optimum(Q, c, A, b, H, h, cols, lam, tol=1e-9):
    """Minimize 1/2 x'Qx + c'x + lam * sum |x[cols]| s.t. Ax <= b, Hx = h."""
    Q = np.asarray(Q, float)
    c = np.asarray(c, float)
    n = c.size
    A = np.asarray(A, float).reshape(-1, n)
    b = np.asarray(b, float).reshape(-1)
    H = np.asarray(H, float).reshape(-1, n)
    h = np.asarray(h, float).reshape(-1)
    m = A.shape[0]
    best_x, best_val = None, np.inf
    for signs in itertools.product((-1, 0, 1), repeat=len(cols)):
        lin = c.copy()
        zero_rows = []
        for j, sg in zip(cols, signs):
            if sg == 0:
                e = np.zeros(n)
                e[j] = 1.0
                zero_rows.append(e)
            else:
                lin[j] += lam * sg
        base_eq = [H] + ([np.array(zero_rows)] if zero_rows else [])
        base_rhs = [h, np.zeros(len(zero_rows))]
        for k in range(m + 1):
            if H.shape[0] + len(zero_rows) + k > n:
                break
            for act in itertools.combinations(range(m), k):
                E = np.vstack(base_eq + [A[list(act)]])
                f = np.concatenate(base_rhs + [b[list(act)]])
                x = _equality_qp(Q, lin, E, f)
                if x is None:
                    continue
                if m and (A @ x - b).max() > tol:
                    continue
                if H.shape[0] and np.abs(H @ x - h).max() > tol:
                    continue
                if any(sg * x[j] < -tol for j, sg in zip(cols, signs)):
                    continue
                val = 0.5 * x @ Q @ x + c @ x + lam * np.abs(x[list(cols)]).sum()
                if val < best_val:
                    best_x, best_val = x, val
    return best_x, best_val


def _equality_qp(Q, c, E, f):
    n = c.size
    k = E.shape[0]
    K = np.block([[Q, E.T], [E, np.zeros((k, k))]])
    rhs = np.concatenate([-c, f])
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(sol)) or np.abs(K @ sol - rhs).max() > 1e-8 * (1 + np.abs(rhs).max()):
        return None
    return sol[:n]


def program_optimum(program, tighten=True):
    """Enumeration oracle applied to a RegularizedProgram (all rows stacked)."""
    shift = program.zeta if tighten else 0.0
    A = np.vstack([program.screenable.A, program.immutable.A])
    b = np.concatenate([program.screenable.b - shift, program.immutable.b])
    H, h = program.equality
    cols = list(program.S_columns) if program.n_sparse else []
    return enumerate_optimum(program.Q, program.c, A, b, H, h, cols, program.lam)


def finite_difference(f, x, step=1e-6):
    x = np.asarray(x, float)
    out = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        out[i] = (f(x + e) - f(x - e)) / (2 * step)
    return out
