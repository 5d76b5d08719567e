"""Primal solves of the epigraph QP and KKT residuals used as test oracles."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .dual import DualPoint
from .problem import EpigraphProgram, RegularizedProgram
from .qp import INFEASIBLE, MAX_ITER, OPTIMAL, solve_qp  # noqa: F401

__all__ = ["Solution", "solve", "kkt_residual", "kkt_report", "HorizonLayout", "shift_warm_start",
           "OPTIMAL", "INFEASIBLE", "MAX_ITER"]


@dataclass
class Solution:
    theta: np.ndarray
    s: np.ndarray
    objective: float
    status: str
    iterations: int
    dual: Optional[DualPoint] = None
    residual: float = float("nan")
    theta_full: Optional[np.ndarray] = None

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


def _active_guess(qp, theta, s, tol=1e-7):
    x = np.concatenate([theta, s])
    slack = qp.h - qp.G @ x
    return np.flatnonzero(slack <= tol * (1.0 + np.abs(qp.h)))


def solve(program, warm: Optional[Solution] = None, tighten=True, tol=1e-10) -> Solution:
    """Solve the epigraph form of ``program`` (or a ReducedProgram).

    ``tighten=False`` solves the untightened program (screenable rows <= b).
    A warm start is used as an active-set guess; if the guess does not verify
    the interior point method runs from scratch.
    """
    reduced = None
    if hasattr(program, "embed"):
        reduced, program = program, program.program
    pr: RegularizedProgram = program
    if pr.n == 0:
        sol = _solve_empty(pr, tighten)
        if reduced is not None:
            sol.theta_full = reduced.embed(sol.theta)
        return sol
    epi = EpigraphProgram(pr)
    qp = epi.qp(tighten=tighten)
    n, q = pr.n, pr.n_sparse

    guess = None
    if warm is not None and warm.theta is not None and warm.theta.shape == (n,):
        S = pr.S if q else np.zeros((0, n))
        guess = _active_guess(qp, warm.theta, np.abs(S @ warm.theta))
    res = solve_qp(qp, tol=tol, active_guess=guess)

    theta = res.x[:n]
    s = res.x[n:]
    sl = epi.row_slices()
    z = res.z
    dual = DualPoint(z[sl["screenable"]], z[sl["immutable"]], res.y,
                     z[sl["epi_pos"]] - z[sl["epi_neg"]])
    sol = Solution(theta, s, pr.objective(theta), res.status, res.iterations, dual, res.residual)
    if reduced is not None:
        sol.theta_full = reduced.embed(theta)
    return sol


def _solve_empty(pr: RegularizedProgram, tighten) -> Solution:
    """All coordinates fixed: only constant rows remain to be checked."""
    theta = np.zeros(0)
    ok = pr.max_violation(theta, tighten=tighten) <= 1e-12
    dual = DualPoint(np.zeros(pr.n_screenable), np.zeros(pr.n_immutable),
                     np.zeros(pr.n_equality), np.zeros(pr.n_sparse))
    return Solution(theta, np.zeros(pr.n_sparse), 0.0, OPTIMAL if ok else INFEASIBLE, 0, dual,
                    0.0 if ok else float("inf"))


def kkt_residual(program: RegularizedProgram, theta, s, y: DualPoint, tighten=True) -> float:
    """Max over stationarity, feasibility, complementarity and the support
    identity |g'S theta - lam ||S theta||_1| of the epigraph program."""
    return float(max(kkt_report(program, theta, s, y, tighten).values()))


def kkt_report(program: RegularizedProgram, theta, s, y: DualPoint, tighten=True) -> dict:
    """The individual optimality residuals behind :func:`kkt_residual`."""
    pr = program
    theta = np.asarray(theta, dtype=float)
    q = pr.n_sparse
    S = pr.S if q else np.zeros((0, pr.n))
    St = S @ theta
    s = np.abs(St) if s is None else np.asarray(s, dtype=float)
    H, h = pr.equality
    lam = pr.lam
    shift = pr.zeta if tighten else 0.0

    stat = pr.Q @ theta + pr.c + pr.screenable.A.T @ y.mu + pr.immutable.A.T @ y.eta \
        + H.T @ y.nu + S.T @ y.g
    fs = pr.screenable.values(theta) + shift
    fi = pr.immutable.values(theta)
    g1 = 0.5 * (lam + y.g)
    g2 = 0.5 * (lam - y.g)
    parts = {
        "stationarity": np.abs(stat).max(initial=0.0),
        "screenable_feasibility": np.maximum(fs, 0).max(initial=0.0),
        "immutable_feasibility": np.maximum(fi, 0).max(initial=0.0),
        "equality_feasibility": np.abs(H @ theta - h).max(initial=0.0),
        "epigraph_feasibility": max(np.maximum(np.abs(St) - s, 0).max(initial=0.0),
                                    np.maximum(-s, 0).max(initial=0.0)),
        "dual_feasibility": max(np.maximum(-y.mu, 0).max(initial=0.0),
                                np.maximum(-y.eta, 0).max(initial=0.0),
                                np.maximum(np.abs(y.g) - lam, 0).max(initial=0.0)),
        "complementarity": max(np.abs(y.mu * fs).max(initial=0.0),
                               np.abs(y.eta * fi).max(initial=0.0),
                               np.abs(g1 * (St - s)).max(initial=0.0),
                               np.abs(g2 * (-St - s)).max(initial=0.0)),
        "support_identity": abs(float(y.g @ St) - lam * float(np.abs(St).sum())),
    }
    return {k: float(v) for k, v in parts.items()}


@dataclass(frozen=True)
class HorizonLayout:
    """Indices of theta belonging to each horizon stage (equal-sized blocks)."""

    stages: tuple

    def __post_init__(self):
        stages = tuple(np.asarray(s, dtype=int) for s in self.stages)
        sizes = {s.size for s in stages}
        if len(sizes) > 1:
            raise ValueError(f"stage blocks must have equal sizes, got {sorted(sizes)}")
        object.__setattr__(self, "stages", stages)

    @property
    def n_stages(self) -> int:
        return len(self.stages)

    @classmethod
    def contiguous(cls, n_stages, block) -> "HorizonLayout":
        return cls(tuple(np.arange(k * block, (k + 1) * block) for k in range(n_stages)))


def shift_warm_start(previous: Solution, layout: HorizonLayout,
                     S: Optional[np.ndarray] = None) -> Solution:
    """Move stage-k blocks to stage k-1 and repeat the terminal block."""
    theta = np.asarray(previous.theta, dtype=float)
    covered = np.concatenate(layout.stages) if layout.n_stages else np.zeros(0, int)
    if covered.size and covered.max() >= theta.size:
        raise ValueError(f"layout indexes past theta of length {theta.size}")
    new = theta.copy()
    for k in range(layout.n_stages - 1):
        new[layout.stages[k]] = theta[layout.stages[k + 1]]
    s = np.abs(S @ new) if S is not None else np.zeros(0)
    return replace(previous, theta=new, s=s, dual=None, theta_full=None)

