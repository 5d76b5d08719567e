"""Explicit dual of the tightened epigraph program.

In minimization form the dual is

    d(y) = 1/2 v'Q^{-1}v + mu'(b_s - zeta) + eta'b_i + nu'h,
    v    = c + A_s'mu + A_i'eta + H'nu + S'g,

over mu >= 0, eta >= 0, nu free, |g|_inf <= lam. The stationary point of the
Lagrangian is theta_hat(y) = -Q^{-1} v.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg as sla

from .problem import RegularizedProgram
from .qp import QPData, solve_qp

FEAS_TOL = 1e-12


class DualSolveError(RuntimeError):
    def __init__(self, message, residual):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual


@dataclass
class DualPoint:
    mu: np.ndarray
    eta: np.ndarray
    nu: np.ndarray
    g: np.ndarray

    def __post_init__(self):
        for name in ("mu", "eta", "nu", "g"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float).reshape(-1))

    @property
    def sizes(self) -> tuple:
        return (self.mu.size, self.eta.size, self.nu.size, self.g.size)

    def stack(self) -> np.ndarray:
        return np.concatenate([self.mu, self.eta, self.nu, self.g])

    @classmethod
    def from_stacked(cls, y, sizes) -> "DualPoint":
        y = np.asarray(y, dtype=float)
        if y.size != sum(sizes):
            raise ValueError(f"dual vector has length {y.size}, expected {sum(sizes)}")
        cuts = np.cumsum(sizes)[:-1]
        return cls(*np.split(y, cuts))

    @classmethod
    def zeros(cls, sizes) -> "DualPoint":
        return cls.from_stacked(np.zeros(sum(sizes)), sizes)

    def is_feasible(self, lam, tol=FEAS_TOL) -> bool:
        return bool(np.all(self.mu >= -tol) and np.all(self.eta >= -tol)
                    and np.all(np.abs(self.g) <= lam + tol))

    def copy(self) -> "DualPoint":
        return DualPoint(self.mu.copy(), self.eta.copy(), self.nu.copy(), self.g.copy())


class DualObjective:
    """Dual of ``program`` (tightened by its zeta) with cached factorization.

    ``rho_bar``/``rho_underbar`` are the extreme eigenvalues of the true dual
    Hessian M'Q^{-1}M. When the smallest one is numerically zero the dual is
    not strongly convex and :func:`gap` reports +inf.
    """

    def __init__(self, program: RegularizedProgram, tighten=True, rank_tol=1e-10):
        self.program = program
        pr = program
        n = pr.n
        self.lam = pr.lam
        q = pr.n_sparse
        H, h = pr.equality
        S = pr.S if q else np.zeros((0, n))
        self.M = np.hstack([pr.screenable.A.T, pr.immutable.A.T, H.T, S.T]).reshape(n, -1)
        shift = pr.zeta if tighten else 0.0
        self.offsets = np.concatenate([pr.screenable.b - shift, pr.immutable.b, h, np.zeros(q)])
        self.sizes = (pr.n_screenable, pr.n_immutable, pr.n_equality, q)
        self.c = pr.c
        self.factor = sla.cho_factor(pr.Q, lower=True)
        self.rank_tol = rank_tol

    @property
    def dim(self) -> int:
        return int(sum(self.sizes))

    # Q^{-1} helpers --------------------------------------------------------
    def qinv(self, x):
        return sla.cho_solve(self.factor, x)

    @cached_property
    def W(self) -> np.ndarray:
        """L^{-1} M with Q = L L', so the dual Hessian is W'W."""
        L = np.tril(self.factor[0])
        return sla.solve_triangular(L, self.M, lower=True)

    @cached_property
    def _rho(self) -> tuple:
        n, d = self.M.shape
        if d == 0:
            return 0.0, 0.0
        sv = np.linalg.svd(self.W, compute_uv=False)
        top = float(sv[0] ** 2) if sv.size else 0.0
        low = float(sv[-1] ** 2) if d <= n else 0.0
        return top, low

    @property
    def rho_bar(self) -> float:
        return self._rho[0]

    @property
    def rho_underbar(self) -> float:
        return self._rho[1]

    @property
    def strongly_convex(self) -> bool:
        if self.dim == 0 or self.dim > self.M.shape[0]:
            return False
        return self.rho_underbar > self.rank_tol * max(1.0, self.rho_bar)

    # evaluation ------------------------------------------------------------
    def _vec(self, y) -> np.ndarray:
        if isinstance(y, DualPoint):
            if y.sizes != self.sizes:
                raise ValueError(f"dual point has block sizes {y.sizes}, expected {self.sizes}")
            return y.stack()
        y = np.asarray(y, dtype=float).reshape(-1)
        if y.size != self.dim:
            raise ValueError(f"dual vector has length {y.size}, expected {self.dim}")
        return y

    def point(self, y) -> DualPoint:
        return DualPoint.from_stacked(self._vec(y), self.sizes)

    def v(self, y) -> np.ndarray:
        return self.c + self.M @ self._vec(y)

    def theta_hat(self, y) -> np.ndarray:
        return -self.qinv(self.v(y))

    def primal_objective(self, theta) -> float:
        return self.program.objective(theta)


def dual_value(obj: DualObjective, y) -> float:
    yv = obj._vec(y)
    v = obj.c + obj.M @ yv
    return float(0.5 * v @ obj.qinv(v) + obj.offsets @ yv)


def dual_gradient(obj: DualObjective, y) -> np.ndarray:
    """Gradient M'Q^{-1}v + offsets = -(constraint values at theta_hat(y))."""
    yv = obj._vec(y)
    return obj.M.T @ obj.qinv(obj.c + obj.M @ yv) + obj.offsets


def project_dual(y, sizes, lam) -> DualPoint:
    """Euclidean projection onto mu >= 0, eta >= 0, |g| <= lam."""
    if isinstance(y, DualPoint):
        y = y.stack()
    p = DualPoint.from_stacked(np.array(y, dtype=float), sizes)
    p.mu = np.maximum(p.mu, 0.0)
    p.eta = np.maximum(p.eta, 0.0)
    p.g = np.clip(p.g, -lam, lam)
    return p


def projected_gradient(obj: DualObjective, y) -> np.ndarray:
    point = obj.point(y)
    if not point.is_feasible(obj.lam, tol=1e-9):
        raise ValueError("projected gradient needs a dual-feasible point")
    yv = point.stack()
    step = project_dual(yv - dual_gradient(obj, yv), obj.sizes, obj.lam).stack()
    return yv - step


def gap(obj: DualObjective, y) -> float:
    """Upper bound ((1 + rho_bar) / rho_underbar) * ||projected gradient|| on
    the distance to the dual optimum; +inf when the dual is not strongly convex."""
    pg = projected_gradient(obj, y)
    if obj.dim == 0:
        return 0.0
    if not obj.strongly_convex:
        return float("inf")
    return float((1.0 + obj.rho_bar) / obj.rho_underbar * np.linalg.norm(pg))


def primal_radius(obj: DualObjective, y, theta_feasible) -> float:
    """Radius r with ||theta* - theta_hat(y)||_Q <= r.

    Uses 1/2||theta* - theta_hat||_Q^2 <= p* + d(y) <= P(theta_f) + d(y) for a
    point ``theta_feasible`` feasible for the tightened program. The bound is
    attained when theta_f is optimal and y differs from y* only on active
    rows, so the radius is rounded up to absorb the cancellation in p + d and
    the rounding of the later ball tests.
    """
    p = obj.primal_objective(theta_feasible)
    d = dual_value(obj, y)
    duality_gap = max(p + d, 0.0) + 1e-13 * (1.0 + abs(p) + abs(d))
    r = np.sqrt(2.0 * duality_gap)
    return float(r + 1e-9 * (1.0 + r))


@dataclass
class ReducedDual:
    point: DualPoint
    singular: bool
    free: np.ndarray


def solve_reduced_unconstrained(obj: DualObjective, keep_mu, pinned_g=(), g_signs=None) -> ReducedDual:
    """Minimize d over (mu_r, eta, nu, g_r) with the rest fixed, ignoring bounds.

    Screened-out mu entries are fixed at 0; entries of g listed in ``pinned_g``
    are fixed at +/-lam. Without explicit ``g_signs`` each pinned entry takes
    the sign of [S theta_hat] at a first solve with those entries at zero
    (minimizing d in that coordinate), ties resolved to +lam. The returned
    point is lifted but not projected.
    """
    c_n, m_n, p_n, q_n = obj.sizes
    keep_mu = np.asarray(sorted(set(int(i) for i in keep_mu)), dtype=int)
    pinned = np.asarray(sorted(set(int(i) for i in pinned_g)), dtype=int)
    g_free = np.setdiff1d(np.arange(q_n), pinned)
    off_g = c_n + m_n + p_n
    free = np.concatenate([keep_mu, np.arange(c_n, off_g), off_g + g_free]).astype(int)
    y = np.zeros(obj.dim)

    W = obj.W
    Wf = W[:, free]
    Hff = Wf.T @ Wf
    singular = False
    cf = None
    if free.size:
        try:
            cf = sla.cho_factor(Hff, lower=True)
            d = np.abs(np.diag(cf[0]))
            if d.min() <= 1e-7 * max(1.0, d.max()):
                cf = None
        except np.linalg.LinAlgError:
            cf = None
        singular = cf is None
    L = np.tril(obj.factor[0])
    base = sla.solve_triangular(L, obj.c, lower=True)

    def solve_free(y_fixed):
        r = base + W @ y_fixed
        rhs = -(Wf.T @ r + obj.offsets[free])
        if cf is not None:
            return sla.cho_solve(cf, rhs)
        # rank-revealing QR: any minimizer of the singular reduced dual will do
        return sla.lstsq(Hff, rhs, cond=1e-12, lapack_driver="gelsy", check_finite=False)[0]

    if free.size:
        y[free] = solve_free(y)
    if pinned.size:
        if g_signs is None:
            sv = (obj.M.T @ obj.theta_hat(y))[off_g + pinned]
            g_signs = np.where(sv >= 0, 1.0, -1.0)
        y[off_g + pinned] = obj.lam * np.asarray(g_signs, dtype=float)
        if free.size:
            y_fixed = np.zeros(obj.dim)
            y_fixed[off_g + pinned] = y[off_g + pinned]
            y[free] = solve_free(y_fixed)
    return ReducedDual(DualPoint.from_stacked(y, obj.sizes), singular, free)


def dual_qp(obj: DualObjective) -> QPData:
    """The dual as an explicit QP over the stacked dual vector (constant dropped)."""
    c_n, m_n, p_n, q_n = obj.sizes
    d = obj.dim
    W = obj.W
    L = np.tril(obj.factor[0])
    r0 = sla.solve_triangular(L, obj.c, lower=True)
    P = W.T @ W
    lin = W.T @ r0 + obj.offsets
    rows, rhs = [], []
    nonneg = c_n + m_n
    if nonneg:
        rows.append(-np.eye(d)[:nonneg])
        rhs.append(np.zeros(nonneg))
    if q_n:
        Eg = np.eye(d)[c_n + m_n + p_n:]
        rows += [Eg, -Eg]
        rhs += [obj.lam * np.ones(q_n), obj.lam * np.ones(q_n)]
    G = np.vstack(rows) if rows else np.zeros((0, d))
    h = np.concatenate(rhs) if rhs else np.zeros(0)
    return QPData(P, lin, G, h, np.zeros((0, d)), np.zeros(0))


def dual_residual(obj: DualObjective, y) -> float:
    """Norm of the projected gradient; zero exactly at dual optima."""
    return float(np.linalg.norm(projected_gradient(obj, y)))


def solve_dual_exact(obj: DualObjective, tol=1e-9, max_iter=100_000) -> DualPoint:
    """Solve the constrained dual QP to projected-gradient residual <= tol.

    Interior point plus active-set polish, then projected-gradient steps with
    backtracking if the residual is still above ``tol``.
    """
    if obj.dim == 0:
        return DualPoint.zeros(obj.sizes)
    qp = dual_qp(obj)
    res = solve_qp(qp, tol=1e-12, max_iter=200)
    y = project_dual(res.x, obj.sizes, obj.lam).stack()
    r = dual_residual(obj, y)
    if r <= tol:
        return DualPoint.from_stacked(y, obj.sizes)

    step = 1.0 / max(obj.rho_bar, 1e-12)
    f = dual_value(obj, y)
    for _ in range(max_iter):
        grad = dual_gradient(obj, y)
        t = step
        while True:
            y_new = project_dual(y - t * grad, obj.sizes, obj.lam).stack()
            f_new = dual_value(obj, y_new)
            diff = y_new - y
            if f_new <= f + grad @ diff + 0.5 / t * diff @ diff + 1e-15 or t < 1e-20:
                break
            t *= 0.5
        y, f = y_new, f_new
        r = dual_residual(obj, y)
        if r <= tol:
            return DualPoint.from_stacked(y, obj.sizes)
    raise DualSolveError("dual solve hit the iteration cap", r)
