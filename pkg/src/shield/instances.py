"""Small named instances and a seeded generator of Slater-feasible programs."""

from __future__ import annotations

import numpy as np

from .problem import RegularizedProgram, epsilon_crit


def t0() -> RegularizedProgram:
    """Q = I2, c = 0, no constraints, lam = 1, both coordinates sparsified."""
    return RegularizedProgram.build(np.eye(2), np.zeros(2), S=np.eye(2), lam=1.0, zeta=0.5, epsilon=0.1)


def d1() -> RegularizedProgram:
    """1-D lasso with a far bound: theta <= 5, optimum theta = 2."""
    return RegularizedProgram.build([[1.0]], [-3.0], A_s=[[1.0]], b_s=[5.0], S=[[1.0]],
                                    lam=1.0, zeta=0.5, epsilon=0.1)


def d2() -> RegularizedProgram:
    """1-D lasso with an active bound: theta <= 1, tightened optimum theta = 0.5."""
    return RegularizedProgram.build([[1.0]], [-3.0], A_s=[[1.0]], b_s=[1.0], S=[[1.0]],
                                    lam=1.0, zeta=0.5, epsilon=0.1)


def random_program(rng, n=None, n_screen=None, n_immut=None, n_eq=None, n_sparse=None,
                   lam=None, zeta=0.5, epsilon=None, full_rank_dual=False,
                   max_n=30, max_screen=100, max_dual_condition=1e6) -> RegularizedProgram:
    """Random strongly convex program with a strictly feasible point.

    Every row is satisfied with margin at a hidden point theta0 (after
    tightening), so Slater's condition holds. ``full_rank_dual`` keeps the
    number of dual variables at most n and redraws the data until the dual
    Hessian has condition number at most ``max_dual_condition``.
    ``epsilon`` defaults to half of the critical tolerance.
    """
    rng = np.random.default_rng(rng)
    n = int(rng.integers(2, max_n + 1)) if n is None else n
    if full_rank_dual:
        budget = n - 1  # one dual slot is reserved for a screenable row
        n_sparse = int(rng.integers(0, budget // 2 + 1)) if n_sparse is None else n_sparse
        budget -= n_sparse
        n_eq = int(rng.integers(0, min(2, budget) + 1)) if n_eq is None else n_eq
        budget -= n_eq
        n_immut = int(rng.integers(0, budget // 3 + 1)) if n_immut is None else n_immut
        budget -= n_immut
        n_screen = 1 + int(rng.integers(0, budget + 1)) if n_screen is None else n_screen
    else:
        n_screen = int(rng.integers(1, max_screen + 1)) if n_screen is None else n_screen
        n_immut = int(rng.integers(0, 2 * n + 1)) if n_immut is None else n_immut
        n_eq = int(rng.integers(0, min(3, n - 1) + 1)) if n_eq is None else n_eq
        n_sparse = int(rng.integers(0, n + 1)) if n_sparse is None else n_sparse
    for _ in range(100):
        prog = _draw(rng, n, n_screen, n_immut, n_eq, n_sparse, lam, zeta)
        if not full_rank_dual or _dual_condition(prog) <= max_dual_condition:
            break
    else:
        raise RuntimeError("could not draw a program with a well-conditioned dual")
    if epsilon is None:
        epsilon = 0.5 * epsilon_crit(prog)
    return prog.with_params(epsilon=float(epsilon))


def _dual_condition(prog) -> float:
    from .dual import DualObjective
    obj = DualObjective(prog)
    return obj.rho_bar / obj.rho_underbar if obj.rho_underbar > 0 else np.inf


def _draw(rng, n, n_screen, n_immut, n_eq, n_sparse, lam, zeta) -> RegularizedProgram:
    B = rng.standard_normal((n, n))
    Q = B @ B.T / n + rng.uniform(0.2, 2.0) * np.eye(n)
    theta0 = rng.standard_normal(n)
    A_s = rng.standard_normal((n_screen, n))
    A_s /= np.linalg.norm(A_s, axis=1, keepdims=True)
    A_s *= rng.uniform(0.5, 2.0, size=(n_screen, 1))
    b_s = A_s @ theta0 + zeta + rng.exponential(1.0, n_screen) + 0.05
    A_i = rng.standard_normal((n_immut, n))
    b_i = A_i @ theta0 + rng.exponential(1.0, n_immut) + 0.05
    H = rng.standard_normal((n_eq, n))
    h = H @ theta0
    cols = rng.choice(n, size=n_sparse, replace=False)
    S = np.zeros((n_sparse, n))
    S[np.arange(n_sparse), cols] = 1.0
    # pull the unconstrained minimizer away from theta0 so rows become active
    target = theta0 + rng.standard_normal(n) * rng.uniform(0.5, 4.0)
    c = -Q @ target
    lam = float(rng.uniform(0.05, 2.0)) if lam is None else lam
    return RegularizedProgram.build(Q, c, A_s, b_s, A_i, b_i, H, h, S, lam=lam, zeta=zeta, epsilon=1.0)
