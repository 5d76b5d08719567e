"""Safe screening of screenable rows and sparsified variables.

Two certificates are applied to a dual-feasible point y_hat:

* distance certificate: when the dual is strongly convex, gap(y_hat) bounds
  ||y_hat - y*||, so |mu_i*| <= |mu_hat_i| + gap and |g_j*| <= |g_hat_j| + gap;
* radius certificate: given a point feasible for the tightened program,
  ||theta* - theta_hat(y_hat)||_Q <= r, which proves rows strictly inactive
  (mu_i* = 0) and, for coordinates touched only by such rows, bounds g_j*.

Both are applied together with the predicted class (mu_class == 0,
g_class == 0) unless ``certificate_only`` is set.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dual import (DualObjective, DualPoint, gap as dual_gap, primal_radius, project_dual,
                   solve_reduced_unconstrained, dual_value)
from .problem import RegularizedProgram, epsilon_crit
from . import solver as primal

log = logging.getLogger(__name__)

EPS_FLAG = "epsilon exceeds critical"


@dataclass
class DualClass:
    """Binary support prediction: mu_class[i] = 1 means mu_i > 0 expected,
    g_class[j] = 1 means |g_j| = lam expected."""

    mu_class: np.ndarray
    g_class: np.ndarray

    def __post_init__(self):
        self.mu_class = np.asarray(self.mu_class, dtype=int).reshape(-1)
        self.g_class = np.asarray(self.g_class, dtype=int).reshape(-1)
        for arr in (self.mu_class, self.g_class):
            if arr.size and not np.all((arr == 0) | (arr == 1)):
                raise ValueError("dual classes must be 0/1")

    @classmethod
    def ones(cls, n_mu, n_g) -> "DualClass":
        return cls(np.ones(n_mu, int), np.ones(n_g, int))

    @classmethod
    def zeros(cls, n_mu, n_g) -> "DualClass":
        return cls(np.zeros(n_mu, int), np.zeros(n_g, int))

    @classmethod
    def from_dual(cls, y: DualPoint, lam, mu_tol=1e-6, g_tol=1e-6) -> "DualClass":
        return cls((y.mu > mu_tol).astype(int), (np.abs(y.g) >= lam - g_tol).astype(int))


@dataclass
class ScreenSets:
    I: np.ndarray
    K: np.ndarray
    gap_used: float
    certified: bool
    radius_used: float = float("inf")
    flags: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"I": self.I.tolist(), "K": self.K.tolist(), "gap": self.gap_used,
                "radius": self.radius_used, "certified": self.certified, "flags": list(self.flags)}


@dataclass
class ReducedProgram:
    program: RegularizedProgram
    E: np.ndarray
    kept_constraints: np.ndarray
    kept_sparse: np.ndarray
    kept_coords: np.ndarray

    def embed(self, theta_bar) -> np.ndarray:
        return self.E @ np.asarray(theta_bar, dtype=float)


def _class_zero(cls_arr, n, certificate_only):
    if certificate_only or cls_arr is None:
        return np.ones(n, dtype=bool)
    return np.asarray(cls_arr) == 0


def screen_variables(hat_y: DualPoint, dual_class: Optional[DualClass], gap, lam,
                     certificate_only=False) -> np.ndarray:
    """Indices j with |g_hat_j| + gap < lam and g_class_j = 0."""
    g = hat_y.g
    if g.size == 0 or not np.isfinite(gap):
        return np.zeros(0, dtype=int)
    ok = (np.abs(g) + gap < lam) & _class_zero(None if dual_class is None else dual_class.g_class,
                                               g.size, certificate_only)
    return np.flatnonzero(ok)


def screen_constraints(hat_y: DualPoint, dual_class: Optional[DualClass], gap, epsilon, zeta,
                       eps_crit, certificate_only=False):
    """Indices i with |mu_hat_i| + gap <= epsilon / zeta and mu_class_i = 0.

    Returns ``(indices, flags)``; when epsilon exceeds ``eps_crit`` nothing is
    screened and the flag list says so.
    """
    mu = hat_y.mu
    if epsilon > eps_crit:
        return np.zeros(0, dtype=int), [EPS_FLAG]
    if mu.size == 0 or not np.isfinite(gap):
        return np.zeros(0, dtype=int), []
    ok = (np.abs(mu) + gap <= epsilon / zeta) & _class_zero(
        None if dual_class is None else dual_class.mu_class, mu.size, certificate_only)
    return np.flatnonzero(ok), []


def screen_by_radius(obj: DualObjective, y: DualPoint, radius, dual_class=None,
                     certificate_only=False):
    """Rows and variables certified by the ball ||theta - theta_hat(y)||_Q <= radius.

    A screenable row is removable when its tightened value stays strictly
    negative on the whole ball. A variable j is removable when every row
    touching its coordinate is certified strictly inactive, no equality row
    touches it, and |[Q theta + c]_col| < lam over the ball.
    """
    pr = obj.program
    c_n, m_n, p_n, q_n = obj.sizes
    if not np.isfinite(radius):
        return np.zeros(0, int), np.zeros(0, int)
    center = obj.theta_hat(y)
    W = obj.W
    qn = np.linalg.norm(W, axis=0)  # Q^{-1}-norms of the constraint rows
    shift = pr.zeta
    inact_s = pr.screenable.values(center) + shift + radius * qn[:c_n] < 0
    inact_i = pr.immutable.values(center) + radius * qn[c_n:c_n + m_n] < 0

    mu_ok = inact_s & _class_zero(None if dual_class is None else dual_class.mu_class,
                                  c_n, certificate_only)
    K = np.flatnonzero(mu_ok)
    if q_n == 0:
        return K, np.zeros(0, int)

    cols = pr.S_columns
    touch_s = pr.screenable.A[:, cols] != 0
    touch_i = pr.immutable.A[:, cols] != 0
    H = pr.equality[0]
    blocked = (touch_s & ~inact_s[:, None]).any(axis=0) | (touch_i & ~inact_i[:, None]).any(axis=0)
    if H.shape[0]:
        blocked |= (H[:, cols] != 0).any(axis=0)
    grad = (pr.Q @ center + pr.c)[cols]
    diag = np.sqrt(np.diag(pr.Q)[cols])
    var_ok = (~blocked) & (np.abs(grad) + radius * diag < pr.lam)
    var_ok &= _class_zero(None if dual_class is None else dual_class.g_class, q_n, certificate_only)
    return K, np.flatnonzero(var_ok)


def build_reduction(program: RegularizedProgram, I, K) -> ReducedProgram:
    """Drop screenable rows in K and fix the coordinates selected by S rows in I
    to zero (column deletion through the embedding E)."""
    pr = program
    n = pr.n
    I = np.asarray(sorted(set(int(i) for i in I)), dtype=int)
    K = np.asarray(sorted(set(int(k) for k in K)), dtype=int)
    q_all = pr.S.shape[0]
    if I.size and (pr.n_sparse == 0 or I.max() >= q_all):
        raise ValueError("variable index set out of range")
    if K.size and K.max() >= pr.n_screenable:
        raise ValueError("constraint index set out of range")
    removed = pr.S_columns[I] if I.size else np.zeros(0, int)
    kept_coords = np.setdiff1d(np.arange(n), removed)
    E = np.eye(n)[:, kept_coords]
    kept_rows = np.setdiff1d(np.arange(pr.n_screenable), K)
    kept_sparse = np.setdiff1d(np.arange(q_all), I)

    H, h = pr.equality
    Hr = H[:, kept_coords]
    dead = np.flatnonzero(~Hr.any(axis=1) & (np.abs(h) > 1e-12))
    if dead.size:
        raise ValueError(f"reduction leaves equality rows {dead.tolist()} inconsistent")

    S_kept = pr.S[kept_sparse][:, kept_coords]
    reduced = RegularizedProgram.build(
        pr.Q[np.ix_(kept_coords, kept_coords)], pr.c[kept_coords],
        pr.screenable.A[kept_rows][:, kept_coords], pr.screenable.b[kept_rows],
        pr.immutable.A[:, kept_coords], pr.immutable.b, Hr, h, S_kept,
        lam=pr.lam, zeta=pr.zeta, epsilon=pr.epsilon)
    return ReducedProgram(reduced, E, kept_rows, kept_sparse, kept_coords)


def lift_reduced_dual(program: RegularizedProgram, reduced: ReducedProgram, sol) -> DualPoint:
    """Full-size dual from a reduced primal solve: removed rows get mu = 0 and
    removed variables get the clipped stationarity value of g."""
    pr = program
    mu = np.zeros(pr.n_screenable)
    mu[reduced.kept_constraints] = np.maximum(sol.dual.mu, 0.0)
    eta = np.maximum(sol.dual.eta, 0.0)
    nu = sol.dual.nu
    q = pr.n_sparse
    g = np.zeros(q)
    if q:
        g[reduced.kept_sparse] = sol.dual.g
        theta = reduced.embed(sol.theta)
        H = pr.equality[0]
        r = pr.Q @ theta + pr.c + pr.screenable.A.T @ mu + pr.immutable.A.T @ eta + H.T @ nu
        removed = np.setdiff1d(np.arange(q), reduced.kept_sparse)
        g[removed] = -r[pr.S_columns[removed]]
        g = np.clip(g, -pr.lam, pr.lam)
    return DualPoint(mu, eta, nu, g)


def approximate_dual(program: RegularizedProgram, keep_mu, pinned_g=()):
    """Projected solution of the reduced unconstrained dual.

    Builds the dual objective, minimizes it over the kept multipliers with
    the pinned gains fixed at +/-lam and projects onto the dual domain.
    Keeping every multiplier and pinning nothing gives the full-dimensional
    unconstrained approximation. Returns ``(objective, reduced, projected)``.
    """
    obj = DualObjective(program)
    red = solve_reduced_unconstrained(obj, keep_mu, pinned_g)
    return obj, red, project_dual(red.point, obj.sizes, program.lam)


def _resolve_class(predictor, features, program):
    q = program.n_sparse
    if predictor is None:
        return DualClass.ones(program.n_screenable, q)
    if isinstance(predictor, DualClass):
        return predictor
    if hasattr(predictor, "predict"):
        return predictor.predict(features)
    return predictor(features)


def shield_step(program: RegularizedProgram, predictor=None, features=None, *,
                solver=primal.solve, certificate_only=False, verify=True,
                warm=None, max_rounds=3):
    """One certified screening + reduced solve.

    Steps: predict classes, solve the classifier-reduced unconstrained dual,
    lift and project, compute the gap, screen, build and solve the reduced
    program. With ``verify`` the predicted reduction is also solved and, once
    its embedded solution is feasible for the tightened program, used as the
    feasible point of the radius certificate. Dropped rows that the candidate
    violates are restored, for at most ``max_rounds`` candidate solves.

    Returns ``(solution, screen_sets, diagnostics)``; ``solution.theta`` is in
    full coordinates.
    """
    pr = program
    diag = {"fallback": False, "flags": []}
    t0 = time.perf_counter()
    dual_class = _resolve_class(predictor, features, pr)
    if dual_class.mu_class.size != pr.n_screenable or dual_class.g_class.size != pr.n_sparse:
        raise ValueError("predicted classes do not match the program dimensions")
    t1 = time.perf_counter()

    keep_mu = np.arange(pr.n_screenable) if certificate_only else np.flatnonzero(dual_class.mu_class == 1)
    pinned = np.zeros(0, int) if certificate_only else np.flatnonzero(dual_class.g_class == 1)
    obj, red, hat = approximate_dual(pr, keep_mu, pinned)
    t2 = time.perf_counter()

    ecrit = epsilon_crit(pr)
    gap_val = dual_gap(obj, hat)
    K, flags = screen_constraints(hat, dual_class, gap_val, pr.epsilon, pr.zeta, ecrit, certificate_only)
    I = screen_variables(hat, dual_class, gap_val, pr.lam, certificate_only)
    diag["flags"] += flags
    if flags:
        log.warning("epsilon %.3g exceeds critical %.3g; screening disabled", pr.epsilon, ecrit)
    t3 = time.perf_counter()

    radius = float("inf")
    reuse = None
    if verify and EPS_FLAG not in flags:
        K_pred = np.flatnonzero(_class_zero(dual_class.mu_class, pr.n_screenable, certificate_only))
        I_pred = np.flatnonzero(_class_zero(dual_class.g_class, pr.n_sparse, certificate_only))
        H = pr.equality[0]
        if I_pred.size and H.shape[0]:
            # coordinates in an equality row are never radius-certified; keep them in the candidate
            I_pred = I_pred[~(H[:, pr.S_columns[I_pred]] != 0).any(axis=0)]
        for _ in range(max_rounds):
            if set(K_pred) <= set(K) and set(I_pred) <= set(I):
                break
            cand = build_reduction(pr, I_pred, K_pred)
            sol_c = solver(cand, warm=_reduce_warm(warm, cand))
            if not sol_c.optimal:
                diag["flags"].append("candidate infeasible")
                break
            theta_f = cand.embed(sol_c.theta)
            missed = K_pred[pr.screenable.values(theta_f)[K_pred] + pr.zeta > 1e-9]
            if missed.size:
                # the predictor dropped rows the candidate violates: put them back and retry
                diag["flags"].append("candidate infeasible")
                K_pred = np.setdiff1d(K_pred, missed)
                continue
            y_c = lift_reduced_dual(pr, cand, sol_c)
            y_best = min((y_c, hat), key=lambda y: dual_value(obj, y))
            radius = primal_radius(obj, y_best, theta_f)
            K2, I2 = screen_by_radius(obj, y_best, radius, dual_class, certificate_only)
            K = np.union1d(K, K2).astype(int)
            I = np.union1d(I, I2).astype(int)
            if np.array_equal(K, K_pred) and np.array_equal(I, I_pred):
                reuse = (cand, sol_c)
            break
    t4 = time.perf_counter()

    sets = ScreenSets(I, K, gap_val, certified=True, radius_used=radius, flags=list(diag["flags"]))
    if reuse is not None:
        reduced, sol = reuse
    else:
        reduced = build_reduction(pr, I, K)
        sol = solver(reduced, warm=_reduce_warm(warm, reduced))
    theta = reduced.embed(sol.theta)
    diag["reduced_theta"] = theta
    diag["reduced_status"] = sol.status
    t5 = time.perf_counter()

    if not sol.optimal:
        diag["fallback"] = True
        diag["flags"].append("reduced infeasible")
    elif K.size and (pr.screenable.A[K] @ theta - pr.screenable.b[K]).max() > 1e-9:
        diag["fallback"] = True
        diag["flags"].append("removed row violated")
    if diag["fallback"]:
        full = solver(pr, warm=warm)
        sol = full
        theta = full.theta
    sol.theta_full = theta
    t6 = time.perf_counter()

    diag.update({
        "t_classifier": t1 - t0, "t_dual_approx": t2 - t1, "t_gap": t3 - t2,
        "t_certificate": t4 - t3, "t_reduced_solve": (t5 - t4) + (t6 - t5),
        "t_total": t6 - t0, "gap": gap_val, "radius": radius, "eps_crit": ecrit,
        "dual_singular": red.singular, "reused_candidate": reuse is not None,
        "n_kept_constraints": int(pr.n_screenable - K.size),
        "n_kept_sparse": int(pr.n_sparse - I.size),
    })
    sets.flags = list(diag["flags"])
    return sol, sets, diag


def _reduce_warm(warm, reduced: ReducedProgram):
    if warm is None or getattr(warm, "theta", None) is None:
        return None
    theta = np.asarray(warm.theta)
    if theta.shape[0] != reduced.E.shape[0]:
        return None
    return primal.Solution(theta[reduced.kept_coords], None, 0.0, primal.MAX_ITER, 0)
