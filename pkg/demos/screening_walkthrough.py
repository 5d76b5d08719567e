"""
Screening a one-dimensional lasso step by step
==============================================

The program

    minimize   1/2 theta^2 - 2 theta + |theta|
    subject to theta <= 1          (screenable)

is small enough to solve by hand. Screenable rows are tightened by a margin
zeta = 0.5, so the solver enforces theta <= 0.5. Without the constraint the
soft-threshold solution is theta = 1, so the tightened row binds and
theta* = 0.5. We walk through the dual objects that decide
what can be removed.
"""

import numpy as np

from shield.dual import DualObjective, dual_value, gap, project_dual, solve_dual_exact
from shield.problem import RegularizedProgram, epsilon_crit
from shield.screening import DualClass, shield_step
from shield.solver import solve

###############################################################################
# Build the program. ``zeta`` is the margin by which screenable rows are
# tightened and ``epsilon`` the screening tolerance; it must stay below the
# critical value for certificates to be valid.

program = RegularizedProgram.build([[1.0]], [-2.0], A_s=[[1.0]], b_s=[1.0], S=[[1.0]],
                                   lam=1.0, zeta=0.5, epsilon=0.1)
print("critical epsilon:", epsilon_crit(program))

full = solve(program)
print("theta* =", full.theta, " objective =", full.objective)

###############################################################################
# The exact dual. The multiplier of the row is positive (the row binds) and
# the l1 multiplier sits at its bound lam, so theta* is nonzero.

obj = DualObjective(program)
y_star = solve_dual_exact(obj)
print("mu* =", y_star.mu, " g* =", y_star.g)
print("strong duality p* + d* =", full.objective + dual_value(obj, y_star))

###############################################################################
# Here the dual Hessian is singular (the row and the l1 term act on the same
# coordinate), so the gap bound is infinite and nothing is certified from it.
# A point away from the optimum shows the same.

y = project_dual(np.array([0.3, 0.2]), obj.sizes, program.lam)
print("gap at a rough dual point:", gap(obj, y))

###############################################################################
# shield_step returns the exact optimum whatever the predictor says. The
# adversarial class claims the row is slack and theta is zero. The candidate
# built from that claim (theta pinned at 0) is feasible but not optimal, so
# the primal ball it yields has radius 1 and certifies nothing: both the row
# and the variable stay in the program.

for name, cls in (("all active", DualClass.ones(1, 1)), ("adversarial", DualClass.zeros(1, 1))):
    sol, sets, diag = shield_step(program, cls)
    print(f"{name:12s} K={sets.K.tolist()} I={sets.I.tolist()} theta={sol.theta_full} "
          f"radius={diag['radius']:.3f}")
