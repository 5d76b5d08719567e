"""Dense convex QP engine.

Solves

    minimize    1/2 x'Px + q'x
    subject to  Gx <= h
                Ax  = b

with a Mehrotra predictor-corrector interior point method followed by an
active-set polish step. P must be positive semidefinite. Sizes here are a
few hundred variables at most, so everything is dense.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import warnings

import numpy as np
import scipy.linalg as sla
from scipy.optimize import linprog

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAX_ITER = "max_iter"


@dataclass
class QPData:
    P: np.ndarray
    q: np.ndarray
    G: np.ndarray
    h: np.ndarray
    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        n = self.q.shape[0]
        self.P = np.asarray(self.P, dtype=float).reshape(n, n)
        self.G = np.asarray(self.G, dtype=float).reshape(-1, n)
        self.h = np.asarray(self.h, dtype=float).reshape(-1)
        self.A = np.asarray(self.A, dtype=float).reshape(-1, n)
        self.b = np.asarray(self.b, dtype=float).reshape(-1)

    @property
    def n(self) -> int:
        return self.q.shape[0]

    @property
    def m(self) -> int:
        return self.G.shape[0]

    @property
    def p(self) -> int:
        return self.A.shape[0]

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.P @ x + self.q @ x)

    def residual(self, x, z, y) -> float:
        """Max-norm KKT residual of a primal-dual triple."""
        rd = self.P @ x + self.q + self.G.T @ z + self.A.T @ y
        parts = [np.abs(rd).max(initial=0.0)]
        if self.m:
            slack = self.h - self.G @ x
            parts.append(np.maximum(-slack, 0.0).max())
            parts.append(np.maximum(-z, 0.0).max())
            parts.append(np.abs(z * slack).max())
        if self.p:
            parts.append(np.abs(self.A @ x - self.b).max())
        return float(max(parts))


@dataclass
class QPResult:
    x: np.ndarray
    z: np.ndarray
    y: np.ndarray
    status: str
    iterations: int
    residual: float
    polished: bool = False
    info: dict = field(default_factory=dict)


def _kkt_solve(K, A, rhs_x, rhs_y, reg=1e-12):
    """Solve [[K, A'], [A, 0]] [dx; dy] = [rhs_x; rhs_y] with light regularization."""
    n = K.shape[0]
    p = A.shape[0]
    if p == 0:
        Kr = K + reg * np.eye(n)
        try:
            cf = sla.cho_factor(Kr, check_finite=False)
            dx = sla.cho_solve(cf, rhs_x, check_finite=False)
            dx = dx + sla.cho_solve(cf, rhs_x - K @ dx, check_finite=False)
        except np.linalg.LinAlgError:
            dx = np.linalg.lstsq(Kr, rhs_x, rcond=None)[0]
        return dx, np.zeros(0)
    M = np.block([[K + reg * np.eye(n), A.T], [A, -reg * np.eye(p)]])
    rhs = np.concatenate([rhs_x, rhs_y])
    try:
        lu = sla.lu_factor(M, check_finite=False)
        sol = sla.lu_solve(lu, rhs, check_finite=False)
        M0 = np.block([[K, A.T], [A, np.zeros((p, p))]])
        for _ in range(2):
            sol = sol + sla.lu_solve(lu, rhs - M0 @ sol, check_finite=False)
    except (np.linalg.LinAlgError, ValueError):
        sol = np.linalg.lstsq(M, rhs, rcond=None)[0]
    return sol[:n], sol[n:]


def _max_step(v, dv):
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-v[neg] / dv[neg])))


def interior_point(qp: QPData, tol=1e-10, max_iter=100) -> QPResult:
    n, m, p = qp.n, qp.m, qp.p
    P, q, G, h, A, b = qp.P, qp.q, qp.G, qp.h, qp.A, qp.b

    if m == 0:
        x, y = _kkt_solve(P, A, -q, b)
        res = qp.residual(x, np.zeros(0), y)
        return QPResult(x, np.zeros(0), y, OPTIMAL, 1, res)

    # Initial point: minimize 1/2 x'Px + q'x + 1/2||s||^2 with Gx + s = h.
    x, y = _kkt_solve(P + G.T @ G, A, -q + G.T @ h, b)
    s = h - G @ x
    z = -s.copy()
    alpha_p = -s.min()
    if alpha_p >= -1e-8:
        s = s + 1.0 + alpha_p
    alpha_d = -z.min()
    if alpha_d >= -1e-8:
        z = z + 1.0 + alpha_d

    scale_d = 1.0 + np.abs(q).max(initial=0.0)
    scale_p = 1.0 + max(np.abs(h).max(initial=0.0), np.abs(b).max(initial=0.0))
    status = MAX_ITER
    it = 0
    best, best_merit, stalled = None, np.inf, 0
    for it in range(1, max_iter + 1):
        rd = P @ x + q + G.T @ z + A.T @ y
        rp = A @ x - b
        rg = G @ x + s - h
        mu = float(s @ z) / m
        if not np.all(np.isfinite(x)) or np.abs(z).max() > 1e13 * scale_d:
            break
        merit = max(np.abs(rd).max() / scale_d, np.abs(rg).max(initial=0.0) / scale_p,
                    np.abs(rp).max(initial=0.0) / scale_p, mu)
        if merit < best_merit:
            best, best_merit, stalled = (x, s, z, y, it), merit, 0
        else:
            stalled += 1
        if merit <= tol:
            status = OPTIMAL
            break
        if stalled >= 5:
            # late iterations lose accuracy once the scaling z/s is extreme; keep the best one
            break

        d = z / s
        K = P + (G.T * d) @ G

        def newton(rsz):
            rhs_x = -rd - G.T @ ((z * rg - rsz) / s)
            dx, dy = _kkt_solve(K, A, rhs_x, -rp)
            dz = d * (G @ dx) + (z * rg - rsz) / s
            ds = -rg - G @ dx
            return dx, ds, dz, dy

        # predictor
        dx_a, ds_a, dz_a, _ = newton(s * z)
        a_aff = min(_max_step(s, ds_a), _max_step(z, dz_a))
        mu_aff = float((s + a_aff * ds_a) @ (z + a_aff * dz_a)) / m
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
        # corrector
        dx, ds, dz, dy = newton(s * z + ds_a * dz_a - sigma * mu)
        alpha = min(0.99 * min(_max_step(s, ds), _max_step(z, dz)), 1.0)
        if float((s + alpha * ds) @ (z + alpha * dz)) / m > mu and a_aff < 0.5:
            # a short affine step makes the second-order correction unreliable and
            # it can cycle; take a plain centered Newton step instead
            dx, ds, dz, dy = newton(s * z - max(sigma, 0.3) * mu)
            alpha = min(0.99 * min(_max_step(s, ds), _max_step(z, dz)), 1.0)
        x = x + alpha * dx
        s = s + alpha * ds
        z = z + alpha * dz
        y = y + alpha * dy
        s = np.maximum(s, 1e-300)
        z = np.maximum(z, 1e-300)

    if best is not None and status != OPTIMAL:
        x, s, z, y, _ = best
    res = qp.residual(x, z, y)
    return QPResult(x, z, y, status, it, res, info={"s": s})


_POLISH_REFINE = 5
_POLISH_ROUNDS = 5


def _equality_kkt(qp: QPData, active):
    """Solve the QP with rows ``active`` of G held at equality."""
    n, m = qp.n, qp.m
    Ga = qp.G[active]
    Aeq = np.vstack([qp.A, Ga])
    beq = np.concatenate([qp.b, qp.h[active]])
    k = Aeq.shape[0]
    M = np.block([[qp.P, Aeq.T], [Aeq, np.zeros((k, k))]])
    rhs = np.concatenate([-qp.q, beq])
    scale = max(1.0, np.abs(M).max())
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", sla.LinAlgWarning)
            lu = sla.lu_factor(M, check_finite=False)
            refine = 1
            if np.min(np.abs(np.diag(lu[0]))) < 1e-14 * scale:
                # dependent active rows: the quasi-definite regularization keeps the
                # factorization valid and refinement against M removes its bias
                delta = 1e-10 * scale
                idx = np.arange(n + k)
                Mreg = M.copy()
                Mreg[idx, idx] += np.where(idx < n, delta, -delta)
                lu = sla.lu_factor(Mreg, check_finite=False)
                refine = _POLISH_REFINE
        sol = sla.lu_solve(lu, rhs, check_finite=False)
        for _ in range(refine):
            sol = sol + sla.lu_solve(lu, rhs - M @ sol, check_finite=False)
    except (np.linalg.LinAlgError, ValueError):
        return None
    if not np.all(np.isfinite(sol)):
        return None
    z = np.zeros(m)
    z[active] = sol[n + qp.p:]
    return sol[:n], z, sol[n:n + qp.p]


def polish(qp: QPData, result: QPResult, active=None, tol=1e-9):
    """Re-solve the equality-constrained QP on a guessed active set.

    The guess is corrected for a few rounds (violated rows added, rows with
    negative multipliers dropped), which handles weakly active rows that
    the interior point iterate cannot classify. Returns a new QPResult if
    the polished point is primal and dual feasible and has a smaller KKT
    residual, otherwise None.
    """
    m = qp.m
    if active is None:
        s = result.info.get("s", qp.h - qp.G @ result.x)
        active = np.flatnonzero(result.z > s) if m else np.zeros(0, int)
    active = np.asarray(active, dtype=int)
    for _ in range(_POLISH_ROUNDS):
        out = _equality_kkt(qp, active)
        if out is None:
            return None
        x, z, y = out
        violated = np.flatnonzero(qp.G @ x - qp.h > tol) if m else np.zeros(0, int)
        negative = np.flatnonzero(z < -tol)
        if violated.size == 0 and negative.size == 0:
            break
        active = np.union1d(np.setdiff1d(active, negative), violated)
    else:
        return None
    z = np.maximum(z, 0.0)
    res = qp.residual(x, z, y)
    prev = result.residual if np.isfinite(result.residual) else np.inf
    if res > max(prev, tol):
        return None
    return QPResult(x, z, y, OPTIMAL, result.iterations + 1, res, polished=True)


def is_infeasible(qp: QPData) -> bool:
    """Phase-one LP check for an empty feasible set."""
    if qp.m == 0 and qp.p == 0:
        return False
    lp = linprog(np.zeros(qp.n),
                 A_ub=qp.G if qp.m else None, b_ub=qp.h if qp.m else None,
                 A_eq=qp.A if qp.p else None, b_eq=qp.b if qp.p else None,
                 bounds=[(None, None)] * qp.n, method="highs")
    return lp.status == 2


def solve_qp(qp: QPData, tol=1e-10, max_iter=100, active_guess=None,
             kkt_tol=1e-9) -> QPResult:
    """Solve a convex QP; try ``active_guess`` first when given."""
    if active_guess is not None:
        guess = QPResult(np.zeros(qp.n), np.zeros(qp.m), np.zeros(qp.p),
                         MAX_ITER, 0, np.inf)
        warm = polish(qp, guess, active=active_guess, tol=kkt_tol)
        if warm is not None and warm.residual <= kkt_tol:
            warm.info["warm"] = True
            return warm

    result = interior_point(qp, tol=tol, max_iter=max_iter)
    polished = polish(qp, result, tol=kkt_tol)
    if polished is not None:
        result = polished
    if result.status != OPTIMAL and result.residual <= kkt_tol:
        result.status = OPTIMAL
    if result.status != OPTIMAL and is_infeasible(qp):
        result.status = INFEASIBLE
    return result
