"""Closed-loop obstacle-avoidance MPC built on RegularizedProgram.

The ego vehicle is a 2-D double integrator. The decision vector is

    theta = [v_0 .. v_{N-1} (2 entries each),
             K[a, m, j] for agent a, mode m, step j (2 entries each)]

where v_j are nominal accelerations and K are diagonal affine disturbance
feedback gains. Under mode m of agent a the applied input is
v_j + K[a, m, j] * w[a, m, j], with w the deviation of that mode's predicted
obstacle position from the mode average. The l1 term acts on the gains only.

Each (agent, mode, step) contributes one screenable halfspace row: the ego
position under that mode must lie on the far side of a line tangent to the
obstacle disc, with the normal taken from the obstacle towards the previous
plan. Input and road bounds are immutable rows.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .predictor import TrainingSample, collect
from .problem import RegularizedProgram, epsilon_crit
from .screening import shield_step
from .solver import HorizonLayout, Solution, shift_warm_start, solve

log = logging.getLogger(__name__)

FALLBACK_NORMAL = np.array([1.0, 0.0])


@dataclass(frozen=True)
class LinearSystem:
    """Double integrator with state (px, py, vx, vy) and acceleration input."""

    dt: float = 0.1
    u_max: float = 4.0
    y_max: float = 5.25

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("time step must be positive")

    @property
    def A(self) -> np.ndarray:
        A = np.eye(4)
        A[0, 2] = A[1, 3] = self.dt
        return A

    @property
    def B(self) -> np.ndarray:
        dt = self.dt
        return np.vstack([0.5 * dt * dt * np.eye(2), dt * np.eye(2)])

    def step(self, x, u) -> np.ndarray:
        return self.A @ x + self.B @ u


@dataclass(frozen=True)
class MPCParams:
    lam: float = 100.0
    zeta: float = 0.5
    epsilon: float = 0.01
    N: int = 14
    v_ref: float = 10.0
    y_ref: float = 0.0
    w_y: float = 1.0
    w_vx: float = 1.0
    w_vy: float = 1.0
    w_u: float = 1.0
    w_gain: float = 1.0
    r_safe: float = 1.5
    r_growth: float = 0.02
    r_collide: float = 1.0


@dataclass
class AgentSpec:
    """Agent moving at constant velocity; mode m drifts sideways at
    m * drift_rate (m/s) along ``drift_dir`` up to ``drift_cap`` metres."""

    x: float
    y: float
    vx: float
    vy: float = 0.0
    drift_dir: float = -1.0
    drift_rate: float = 0.6
    drift_cap: float = 1.6
    true_mode: int = 0


@dataclass
class Scenario:
    seed: int
    V: int
    M: int
    N: int
    agents: list
    ego: tuple = (0.0, 0.0, 10.0, 0.0)

    def to_dict(self) -> dict:
        return {"seed": self.seed, "V": self.V, "M": self.M, "N": self.N,
                "ego": list(self.ego), "agents": [asdict(a) for a in self.agents]}

    @classmethod
    def from_dict(cls, d) -> "Scenario":
        agents = [AgentSpec(**a) for a in d.get("agents", [])]
        return cls(int(d.get("seed", 0)), int(d.get("V", len(agents))), int(d["M"]), int(d["N"]),
                   agents, tuple(d.get("ego", (0.0, 0.0, 10.0, 0.0))))


def generate_scenario(seed, V=3, M=2, N=14) -> Scenario:
    """Agents in the left lane, spread longitudinally, each with a random true mode."""
    rng = np.random.default_rng(seed)
    agents = []
    xs = np.sort(rng.uniform(-10.0, 30.0, size=V))
    for k in range(1, V):
        xs[k] = max(xs[k], xs[k - 1] + 8.0)
    for a in range(V):
        agents.append(AgentSpec(x=float(xs[a]), y=3.5, vx=float(rng.uniform(7.0, 11.0)),
                                drift_rate=float(rng.uniform(0.6, 1.2)),
                                drift_cap=float(rng.uniform(1.5, 2.5)),
                                true_mode=int(rng.integers(0, M))))
    return Scenario(int(seed), V, M, N, agents)


def save_scenario(scenario: Scenario, path) -> None:
    with open(path, "w") as fh:
        json.dump(scenario.to_dict(), fh, indent=1)


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        return Scenario.from_dict(json.load(fh))


@dataclass
class ScenarioState:
    """Snapshot at one control step: ego state, predictions
    ``obstacles[a, m, k]`` for k = 0..N (k = 0 is the current position),
    disc radii ``radii[a, m, k-1]`` and mode weights."""

    ego: np.ndarray
    obstacles: np.ndarray
    radii: np.ndarray
    mode_weights: np.ndarray

    def features(self) -> np.ndarray:
        """Relative displacements obstacle minus ego over steps 1..N."""
        return (self.obstacles[:, :, 1:, :] - self.ego[:2]).reshape(-1)


@dataclass(frozen=True)
class PolicyLayout:
    V: int
    M: int
    N: int

    @property
    def n_inputs(self) -> int:
        return 2 * self.N

    @property
    def n_gains(self) -> int:
        return 2 * self.V * self.M * self.N

    @property
    def n(self) -> int:
        return self.n_inputs + self.n_gains

    def input_index(self, j) -> np.ndarray:
        return np.array([2 * j, 2 * j + 1])

    def gain_index(self, a, m, j) -> np.ndarray:
        base = self.n_inputs + 2 * ((a * self.M + m) * self.N + j)
        return np.array([base, base + 1])

    def S(self) -> np.ndarray:
        S = np.zeros((self.n_gains, self.n))
        S[np.arange(self.n_gains), self.n_inputs + np.arange(self.n_gains)] = 1.0
        return S

    def horizon(self) -> HorizonLayout:
        stages = []
        for j in range(self.N):
            idx = [self.input_index(j)]
            idx += [self.gain_index(a, m, j) for a in range(self.V) for m in range(self.M)]
            stages.append(np.concatenate(idx))
        return HorizonLayout(tuple(stages))


class AgentWorld:
    """True agent motion and multi-modal predictions."""

    def __init__(self, scenario: Scenario, dt: float):
        self.scenario = scenario
        self.dt = dt
        self.t = 0.0

    def _drift(self, agent: AgentSpec, mode: int, t: float) -> float:
        return min(mode * agent.drift_rate * t, agent.drift_cap)

    def positions(self, t=None) -> np.ndarray:
        t = self.t if t is None else t
        out = np.zeros((len(self.scenario.agents), 2))
        for a, ag in enumerate(self.scenario.agents):
            out[a] = [ag.x + ag.vx * t, ag.y + ag.vy * t + ag.drift_dir * self._drift(ag, ag.true_mode, t)]
        return out

    def predictions(self, N: int) -> np.ndarray:
        """obstacles[a, m, k]: current position plus mode m's displacement after k steps."""
        sc = self.scenario
        cur = self.positions()
        out = np.zeros((len(sc.agents), sc.M, N + 1, 2))
        for a, ag in enumerate(sc.agents):
            done = self._drift(ag, ag.true_mode, self.t)
            for m in range(sc.M):
                for k in range(N + 1):
                    tk = k * self.dt
                    lateral = min(m * ag.drift_rate * tk, max(ag.drift_cap - done, 0.0)) if m else 0.0
                    out[a, m, k] = cur[a] + [ag.vx * tk, ag.vy * tk + ag.drift_dir * lateral]
        return out

    def advance(self) -> None:
        self.t += self.dt


def scenario_state(world: AgentWorld, ego, params: MPCParams) -> ScenarioState:
    sc = world.scenario
    N = params.N
    obstacles = world.predictions(N)
    radii = params.r_safe + params.r_growth * np.arange(1, N + 1)
    radii = np.broadcast_to(radii, (len(sc.agents), sc.M, N)).copy()
    return ScenarioState(np.asarray(ego, dtype=float), obstacles, radii, np.full(sc.M, 1.0 / sc.M))


def _position_maps(system: LinearSystem, N: int):
    """coef[k-1, j] multiplies the input at step j in the position at step k,
    vcoef[k-1, j] does the same for velocity."""
    dt = system.dt
    coef = np.zeros((N, N))
    vcoef = np.zeros((N, N))
    for k in range(1, N + 1):
        for j in range(k):
            coef[k - 1, j] = (k - j - 0.5) * dt * dt
            vcoef[k - 1, j] = dt
    return coef, vcoef


def plan_positions(system: LinearSystem, ego, theta, N) -> np.ndarray:
    """Nominal ego positions at steps 1..N for input sequence theta[:2N]."""
    coef, _ = _position_maps(system, N)
    v = np.asarray(theta[:2 * N]).reshape(N, 2)
    k = np.arange(1, N + 1)[:, None]
    return ego[:2] + k * system.dt * ego[2:] + coef @ v


def build_step_program(system: LinearSystem, state: ScenarioState, layout: PolicyLayout,
                       params: MPCParams, plan: Optional[np.ndarray] = None) -> RegularizedProgram:
    """Assemble the per-step program; ``plan`` holds the previous nominal ego
    positions (N x 2) used to orient the collision halfspaces."""
    N, V, M = layout.N, layout.V, layout.M
    n = layout.n
    ego = state.ego
    dt = system.dt
    coef, vcoef = _position_maps(system, N)
    steps = np.arange(1, N + 1)
    free_pos = ego[:2] + steps[:, None] * dt * ego[2:]
    free_vel = np.tile(ego[2:], (N, 1))
    if plan is None:
        plan = free_pos

    # Jx[k-1] maps theta to the x-position at step k (nominal part), etc.
    Jx = np.zeros((N, n))
    Jy = np.zeros((N, n))
    Jvx = np.zeros((N, n))
    Jvy = np.zeros((N, n))
    Jx[:, 0:2 * N:2] = coef
    Jy[:, 1:2 * N:2] = coef
    Jvx[:, 0:2 * N:2] = vcoef
    Jvy[:, 1:2 * N:2] = vcoef

    # cost: weighted least squares in tracking residuals plus input and gain penalties
    F = np.vstack([Jy, Jvx, Jvy])
    f0 = np.concatenate([free_pos[:, 1] - params.y_ref, free_vel[:, 0] - params.v_ref, free_vel[:, 1]])
    w = np.concatenate([np.full(N, params.w_y), np.full(N, params.w_vx), np.full(N, params.w_vy)])
    diag = np.concatenate([np.full(2 * N, params.w_u), np.full(layout.n_gains, params.w_gain)])
    Q = 2.0 * (F.T @ (w[:, None] * F)) + 2.0 * np.diag(diag)
    Q = 0.5 * (Q + Q.T)
    c = 2.0 * F.T @ (w * f0)

    obst = state.obstacles
    A_s = np.zeros((V * M * N, n))
    b_s = np.zeros(V * M * N)
    if V:
        mean = obst.mean(axis=1)
        for a in range(V):
            for m in range(M):
                r0 = (a * M + m) * N
                o = obst[a, m, 1:]
                d = plan - o
                dn = np.linalg.norm(d, axis=1)
                bad = dn < 1e-9
                if bad.any():
                    log.warning("plan meets obstacle %d mode %d at steps %s; using fallback normal",
                                a, m, (np.flatnonzero(bad) + 1).tolist())
                nrm = np.where(bad[:, None], FALLBACK_NORMAL, d / np.where(bad, 1.0, dn)[:, None])
                dev = obst[a, m, :N] - mean[a, :N]  # w[a, m, j] for j = 0..N-1
                rows = slice(r0, r0 + N)
                A_s[rows] = -(nrm[:, :1] * Jx + nrm[:, 1:] * Jy)
                g0 = layout.gain_index(a, m, 0)[0]
                gains = -coef[:, :, None] * nrm[:, None, :] * dev[None, :, :]
                A_s[rows, g0:g0 + 2 * N] = gains.reshape(N, 2 * N)
                b_s[rows] = (np.einsum("ij,ij->i", nrm, free_pos - o) - state.radii[a, m])

    # input box on the nominal accelerations, then road edges on the nominal positions
    E = np.eye(2 * N, n)
    A_i = np.vstack([np.stack([E, -E], axis=1).reshape(4 * N, n),
                     np.stack([Jy, -Jy], axis=1).reshape(2 * N, n)])
    b_i = np.concatenate([np.full(4 * N, system.u_max),
                          np.stack([system.y_max - free_pos[:, 1], system.y_max + free_pos[:, 1]],
                                   axis=1).ravel()])
    return RegularizedProgram.build(Q, c, A_s, b_s, A_i, b_i,
                                    S=layout.S(), lam=params.lam, zeta=params.zeta,
                                    epsilon=params.epsilon)


# metrics ---------------------------------------------------------------------

STEP_COLUMNS = ["policy", "seed", "step", "feasible", "collision", "violation", "enforced_pct",
                "adf_kept_pct", "t_classifier", "t_dual_approx", "t_gap", "t_reduced_solve",
                "t_total", "fallback", "x", "y"]
SUMMARY_COLUMNS = ["policy", "seed", "steps", "feasible", "collision", "violations",
                   "Avg. Constraints Enforced (%)", "Avg. ADF Kept (%)",
                   "Avg. Classifier Query Time", "Avg. Dual Approx. Time",
                   "Avg. Total Computation Time", "Median Total Computation Time"]


@dataclass
class StepMetrics:
    policy: str
    seed: int
    step: int
    feasible: bool
    collision: bool
    violation: float
    enforced_pct: float
    adf_kept_pct: float
    t_classifier: float = 0.0
    t_dual_approx: float = 0.0
    t_gap: float = 0.0
    t_reduced_solve: float = 0.0
    t_total: float = 0.0
    fallback: bool = False
    x: float = 0.0
    y: float = 0.0


@dataclass
class RunMetrics:
    policy: str
    seed: int
    steps: list = field(default_factory=list)
    feasible: bool = True
    collision: bool = False
    terminated_at: Optional[int] = None

    @property
    def violations(self) -> int:
        return int(sum(s.violation > 1e-8 for s in self.steps))

    @property
    def trajectory(self) -> np.ndarray:
        return np.array([[s.x, s.y] for s in self.steps]).reshape(-1, 2)

    def summary(self) -> dict:
        st = self.steps
        mean = (lambda key: float(np.mean([getattr(s, key) for s in st]))) if st else (lambda key: float("nan"))
        return {
            "policy": self.policy, "seed": self.seed, "steps": len(st),
            "feasible": 100.0 if self.feasible else 0.0,
            "collision": 100.0 if self.collision else 0.0,
            "violations": self.violations,
            "Avg. Constraints Enforced (%)": mean("enforced_pct"),
            "Avg. ADF Kept (%)": mean("adf_kept_pct"),
            "Avg. Classifier Query Time": mean("t_classifier"),
            "Avg. Dual Approx. Time": mean("t_dual_approx"),
            "Avg. Total Computation Time": mean("t_total"),
            "Median Total Computation Time": float(np.median([s.t_total for s in st])) if st else float("nan"),
        }


def ade(run_a: RunMetrics, run_b: RunMetrics) -> float:
    """Average displacement between two closed-loop ego trajectories."""
    n = min(len(run_a.steps), len(run_b.steps))
    if n == 0:
        return float("nan")
    return float(np.linalg.norm(run_a.trajectory[:n] - run_b.trajectory[:n], axis=1).mean())


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.12g}"
    return v


def write_csv(records: Sequence[dict], columns, fh) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(columns)
    for rec in records:
        writer.writerow([_fmt(rec[c]) for c in columns])


def steps_csv(runs: Sequence[RunMetrics]) -> str:
    buf = io.StringIO()
    write_csv([asdict(s) for r in runs for s in r.steps], STEP_COLUMNS, buf)
    return buf.getvalue()


# closed loop -----------------------------------------------------------------

def _pct(kept, total) -> float:
    return 100.0 if total == 0 else 100.0 * kept / total


def simulate(policy: str, scenario, steps: int = 50, params: MPCParams = MPCParams(),
             predictor=None, system: LinearSystem = LinearSystem(),
             on_step=None) -> RunMetrics:
    """Closed-loop rollout applying the first nominal input at every step.

    ``policy`` is "full" (untightened full program), "tightened" (full
    tightened program, used to log training data) or "reduced" (shield_step
    on the tightened program with ``predictor``; None means all classes
    active). ``scenario`` is a Scenario or a seed. ``on_step(state,
    program, solution)`` is called after each solve, e.g. to log samples.
    """
    if policy not in ("full", "tightened", "reduced"):
        raise ValueError("policy must be 'full', 'tightened' or 'reduced'")
    sc = scenario if isinstance(scenario, Scenario) else generate_scenario(int(scenario), N=params.N)
    layout = PolicyLayout(len(sc.agents), sc.M, params.N)
    horizon = layout.horizon()
    world = AgentWorld(sc, system.dt)
    ego = np.array(sc.ego, dtype=float)
    run = RunMetrics(policy, sc.seed)
    warm: Optional[Solution] = None

    for t in range(steps):
        state = scenario_state(world, ego, params)
        plan = None if warm is None else plan_positions(system, ego, warm.theta, params.N)
        program = build_step_program(system, state, layout, params, plan)
        m = StepMetrics(policy, sc.seed, t, True, False, 0.0, 100.0, 100.0)
        if policy != "reduced":
            t0 = time.perf_counter()
            sol = solve(program, warm=warm, tighten=policy == "tightened")
            m.t_total = m.t_reduced_solve = time.perf_counter() - t0
            theta = sol.theta
        else:
            if program.epsilon > epsilon_crit(program):
                log.warning("seed %s step %d: epsilon above critical value, no screening", sc.seed, t)
            sol, sets, diag = shield_step(program, predictor, state.features(), warm=warm)
            theta = sol.theta_full
            m.enforced_pct = _pct(program.n_screenable - sets.K.size, program.n_screenable)
            m.adf_kept_pct = _pct(program.n_sparse - sets.I.size, program.n_sparse)
            m.t_classifier = diag["t_classifier"]
            m.t_dual_approx = diag["t_dual_approx"]
            m.t_gap = diag["t_gap"] + diag["t_certificate"]
            m.t_reduced_solve = diag["t_reduced_solve"]
            m.t_total = diag["t_total"]
            m.fallback = diag["fallback"]
        if not sol.optimal:
            m.feasible = False
            run.feasible = False
            run.terminated_at = t
            run.steps.append(m)
            log.warning("%s arm infeasible at step %d (seed %s)", policy, t, sc.seed)
            break
        if program.n_screenable:
            m.violation = max(float(program.screenable.values(theta).max()), 0.0)
        if on_step is not None:
            on_step(state, program, sol)

        ego = system.step(ego, theta[:2])
        world.advance()
        agents = world.positions()
        if agents.size and np.linalg.norm(agents - ego[:2], axis=1).min() < params.r_collide:
            m.collision = True
            run.collision = True
        m.x, m.y = float(ego[0]), float(ego[1])
        run.steps.append(m)
        warm = shift_warm_start(Solution(theta, None, 0.0, sol.status, 0), horizon)
    return run


def collect_samples(seeds: Sequence, steps: int = 50, params: MPCParams = MPCParams()) -> list:
    """Training samples from tightened full-program rollouts.

    Labels come from the primal-dual pair returned by the full solve at each
    step (an exact dual of the tightened program).
    """
    logged = []

    def keep(state, program, sol):
        logged.append((state.features(), program, sol.dual))

    for seed in seeds:
        simulate("tightened", seed, steps, params, on_step=keep)
    duals = {id(pr): y for _, pr, y in logged}
    return collect([(z, pr) for z, pr, _ in logged], exact_dual_solver=lambda pr: duals[id(pr)])


def permute_agents(samples: Sequence, V: int, M: int) -> list:
    """Every agent relabelling of each sample (the identity included).

    A step program is unchanged up to row and column order when agents are
    renamed, and features, row labels and gain labels all share the
    agent-major block layout, so permuting the V blocks of M modes gives a
    sample of the same family with consistent labels.
    """
    out = []
    for perm in itertools.permutations(range(V)):
        order = np.array([a * M + m for a in perm for m in range(M)], dtype=int)

        def relabel(v):
            return v.reshape(V * M, -1)[order].reshape(-1) if v.size else v

        out += [TrainingSample(relabel(s.feature), relabel(s.mu_label), relabel(s.g_label))
                for s in samples]
    return out


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("SHIELD_THREADS", "1")))
    except ValueError:
        return 1


def sweep(epsilons: Sequence[float], lambdas: Sequence[float], scenarios: Sequence,
          steps: int = 50, params: MPCParams = MPCParams(), predictor=None) -> list:
    """Reduced-arm runs over the (epsilon, lambda) grid averaged over scenarios.

    Returns one row per grid point with the keep rates, average total time
    and feasible / collision percentages. SHIELD_THREADS caps the number of
    worker threads.
    """
    jobs = [(e, l, s) for e in epsilons for l in lambdas for s in scenarios]

    def run(job):
        e, l, s = job
        p = MPCParams(**{**asdict(params), "epsilon": float(e), "lam": float(l)})
        return simulate("reduced", s, steps, p, predictor)

    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        results = list(pool.map(run, jobs))
    rows = []
    for e in epsilons:
        for l in lambdas:
            runs = [r for (je, jl, _), r in zip(jobs, results) if je == e and jl == l]
            sums = [r.summary() for r in runs]
            rows.append({
                "epsilon": float(e), "lambda": float(l),
                "Constraint Keep (%)": float(np.mean([s["Avg. Constraints Enforced (%)"] for s in sums])),
                "ADF Keep (%)": float(np.mean([s["Avg. ADF Kept (%)"] for s in sums])),
                "Avg. Total Computation Time": float(np.mean([s["Avg. Total Computation Time"] for s in sums])),
                "Feasible (%)": float(np.mean([s["feasible"] for s in sums])),
                "Collision (%)": float(np.mean([s["collision"] for s in sums])),
            })
    return rows


SWEEP_COLUMNS = ["epsilon", "lambda", "Constraint Keep (%)", "ADF Keep (%)",
                 "Avg. Total Computation Time", "Feasible (%)", "Collision (%)"]
