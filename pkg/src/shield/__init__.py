"""Certified safe screening for l1-regularized strongly convex quadratic programs."""

from .dual import DualObjective, DualPoint, gap, project_dual, solve_dual_exact
from .problem import RegularizedProgram, epsilon_crit, tighten, validate
from .screening import DualClass, ScreenSets, build_reduction, shield_step
from .solver import Solution, kkt_residual, solve

__all__ = ["DualObjective", "DualPoint", "gap", "project_dual", "solve_dual_exact",
           "RegularizedProgram", "epsilon_crit", "tighten", "validate", "DualClass",
           "ScreenSets", "build_reduction", "shield_step", "Solution", "kkt_residual", "solve"]
