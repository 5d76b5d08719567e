"""l1-regularized strongly convex QPs with screenable and immutable rows.

The program is

    minimize    1/2 theta'Q theta + c'theta + lam * ||S theta||_1
    subject to  A_s theta <= b_s - zeta      (screenable, tightened)
                A_i theta <= b_i             (immutable)
                H theta    = h

All constraints are affine, so the Lipschitz constant of a screenable row is
its Euclidean norm and the dual is an explicit QP.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from .qp import QPData

FORMAT_VERSION = "shield-v1"


class ProgramFormatError(ValueError):
    """Raised when a serialized program cannot be parsed."""

    def __init__(self, message, line=None, column=None):
        if line is not None:
            message = f"line {line}, column {column}: {message}"
        super().__init__(message)
        self.line = line
        self.column = column


@dataclass(frozen=True)
class ConstraintBlock:
    """Rows ``A theta - b <= 0``; ``lipschitz`` is always the row norm."""

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        b = np.asarray(self.b, dtype=float).reshape(-1)
        if A.ndim != 2:
            A = np.atleast_2d(A) if A.size else A.reshape(0, 0)
        if A.shape[0] != b.shape[0]:
            raise ValueError(f"constraint block has {A.shape[0]} rows but {b.shape[0]} offsets")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @classmethod
    def empty(cls, n: int) -> "ConstraintBlock":
        return cls(np.zeros((0, n)), np.zeros(0))

    @property
    def rows(self) -> int:
        return self.A.shape[0]

    @cached_property
    def lipschitz(self) -> np.ndarray:
        return np.linalg.norm(self.A, axis=1)

    def values(self, theta) -> np.ndarray:
        return self.A @ theta - self.b


def _as_rows(A, n) -> np.ndarray:
    """Coerce to a (rows, n) float matrix; also accepts (k, 0) when n == 0."""
    A = np.asarray(A, dtype=float)
    if A.ndim == 2 and A.shape[1] == n:
        return A
    if n == 0:
        return np.zeros((0, 0))
    return A.reshape(-1, n)


@dataclass(frozen=True)
class RegularizedProgram:
    Q: np.ndarray
    c: np.ndarray
    screenable: ConstraintBlock
    immutable: ConstraintBlock
    equality: tuple
    S: np.ndarray
    lam: float
    zeta: float
    epsilon: float

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        c = np.asarray(self.c, dtype=float).reshape(-1)
        n = c.shape[0]
        H, h = self.equality if self.equality is not None else (None, None)
        H = np.zeros((0, n)) if H is None else _as_rows(H, n)
        h = np.zeros(0) if h is None else np.asarray(h, dtype=float).reshape(-1)
        S = _as_rows(self.S, n)
        screenable = self.screenable if self.screenable is not None else ConstraintBlock.empty(n)
        immutable = self.immutable if self.immutable is not None else ConstraintBlock.empty(n)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "equality", (H, h))
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "screenable", screenable)
        object.__setattr__(self, "immutable", immutable)
        object.__setattr__(self, "lam", float(self.lam))
        object.__setattr__(self, "zeta", float(self.zeta))
        object.__setattr__(self, "epsilon", float(self.epsilon))

    @classmethod
    def build(cls, Q, c, A_s=None, b_s=None, A_i=None, b_i=None, H=None, h=None,
              S=None, lam=0.0, zeta=0.5, epsilon=0.01) -> "RegularizedProgram":
        c = np.asarray(c, dtype=float).reshape(-1)
        n = c.shape[0]

        def block(A, b):
            if A is None:
                return ConstraintBlock.empty(n)
            return ConstraintBlock(_as_rows(A, n), b)

        if S is None:
            S = np.zeros((0, n))
        return cls(Q, c, block(A_s, b_s), block(A_i, b_i), (H, h), S, lam, zeta, epsilon)

    # dimensions -----------------------------------------------------------
    @property
    def n(self) -> int:
        return self.c.shape[0]

    @property
    def n_screenable(self) -> int:
        return self.screenable.rows

    @property
    def n_immutable(self) -> int:
        return self.immutable.rows

    @property
    def n_equality(self) -> int:
        return self.equality[0].shape[0]

    @property
    def n_sparse(self) -> int:
        """Number of l1 terms; zero when lam == 0 (no g block)."""
        return self.S.shape[0] if self.lam > 0 else 0

    @cached_property
    def S_columns(self) -> np.ndarray:
        """Coordinate selected by each row of S (requires unit rows)."""
        return np.argmax(self.S, axis=1) if self.S.shape[0] else np.zeros(0, dtype=int)

    # spectral data of Q, computed once ------------------------------------
    @cached_property
    def _eigvals(self) -> np.ndarray:
        sym = 0.5 * (self.Q + self.Q.T)
        return np.linalg.eigvalsh(sym) if self.n else np.array([1.0])

    @property
    def sigma_min(self) -> float:
        return float(self._eigvals[0])

    @property
    def sigma_max(self) -> float:
        return float(self._eigvals[-1])

    # evaluation -----------------------------------------------------------
    def smooth_objective(self, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        return float(0.5 * theta @ self.Q @ theta + self.c @ theta)

    def objective(self, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        reg = self.lam * np.abs(self.S @ theta).sum() if self.S.shape[0] else 0.0
        return self.smooth_objective(theta) + float(reg)

    def max_violation(self, theta, tighten=True) -> float:
        """Largest constraint violation (0 when feasible)."""
        theta = np.asarray(theta, dtype=float)
        shift = self.zeta if tighten else 0.0
        parts = [0.0]
        if self.n_screenable:
            parts.append((self.screenable.values(theta) + shift).max())
        if self.n_immutable:
            parts.append(self.immutable.values(theta).max())
        if self.n_equality:
            H, h = self.equality
            parts.append(np.abs(H @ theta - h).max())
        return float(max(parts))

    def with_params(self, **kwargs) -> "RegularizedProgram":
        return replace(self, **kwargs)


@dataclass
class ValidationReport:
    problems: list = field(default_factory=list)

    def __bool__(self):
        return not self.problems

    @property
    def ok(self) -> bool:
        return not self.problems

    def __contains__(self, text):
        return any(text in p for p in self.problems)

    def __str__(self):
        return "ok" if self.ok else "; ".join(self.problems)


def validate(program: RegularizedProgram, sym_tol=1e-9) -> ValidationReport:
    report = ValidationReport()
    Q, n = program.Q, program.n
    if Q.shape != (n, n):
        report.problems.append(f"Q has shape {Q.shape}, expected {(n, n)}")
        return report
    if not np.all(np.isfinite(Q)) or not np.all(np.isfinite(program.c)):
        report.problems.append("non-finite entries in Q or c")
        return report
    if np.abs(Q - Q.T).max(initial=0.0) > sym_tol * max(1.0, np.abs(Q).max(initial=0.0)):
        report.problems.append("Q is not symmetric")
    if n and program.sigma_min <= 0:
        report.problems.append(f"Q is not positive definite (smallest eigenvalue {program.sigma_min:.3g})")

    S = program.S
    if S.shape[0]:
        unit = np.all((S == 0) | (S == 1), axis=1) & (S.sum(axis=1) == 1)
        if not np.all(unit):
            report.problems.append(f"S rows {np.flatnonzero(~unit).tolist()} are not unit rows")
        elif len(set(program.S_columns.tolist())) != S.shape[0]:
            report.problems.append("S rows select repeated coordinates")

    if not program.lam >= 0:
        report.problems.append("lambda must be nonnegative")
    if not program.zeta > 0:
        report.problems.append("zeta must be positive")
    if not program.epsilon > 0:
        report.problems.append("epsilon must be positive")

    for name, blk in (("screenable", program.screenable), ("immutable", program.immutable)):
        if blk.A.shape[1] != n:
            report.problems.append(f"{name} block has {blk.A.shape[1]} columns, expected {n}")
        elif not np.all(np.isfinite(blk.A)) or not np.all(np.isfinite(blk.b)):
            report.problems.append(f"non-finite entries in {name} block")
    if program.n_screenable and program.screenable.A.shape[1] == n:
        zero = np.flatnonzero(program.screenable.lipschitz == 0)
        if zero.size:
            report.problems.append(f"zero Lipschitz constant in screenable rows {zero.tolist()}")
    H, h = program.equality
    if H.shape[0] != h.shape[0]:
        report.problems.append("equality block H and h disagree in length")
    return report


def epsilon_crit(program: RegularizedProgram) -> float:
    """Largest cost tolerance keeping bounded-suboptimal points feasible for the
    original screenable rows: sigma_min/2 * min_i (zeta / L_i)^2."""
    if program.n_screenable == 0:
        return float("inf")
    L = program.screenable.lipschitz.max()
    if L == 0:
        return float("inf")
    return 0.5 * program.sigma_min * (program.zeta / L) ** 2


def tighten(program: RegularizedProgram, amount=None) -> RegularizedProgram:
    """Copy with screenable offsets shifted down by ``amount`` (default zeta).

    The ``zeta`` field of the copy is left unchanged.
    """
    amount = program.zeta if amount is None else float(amount)
    blk = program.screenable
    if blk.rows == 0:
        return program
    return replace(program, screenable=ConstraintBlock(blk.A.copy(), blk.b - amount))


@dataclass(frozen=True)
class EpigraphProgram:
    """Smooth QP over (theta, s) replacing ||S theta||_1 by slack rows.

    The 3q epigraph rows are ``S theta - s <= 0``, ``-S theta - s <= 0`` and
    ``-s <= 0``. The last group is implied by the first two and is dropped by
    :meth:`qp` unless asked for; dropping it keeps the active-set KKT systems
    nonsingular at exact zeros.
    """

    base: RegularizedProgram

    @property
    def n_vars(self) -> int:
        return self.base.n + self.base.n_sparse

    def qp(self, tighten=True, drop_redundant=True) -> QPData:
        pr = self.base
        n, q = pr.n, pr.n_sparse
        S = pr.S if q else np.zeros((0, n))
        Iq = np.eye(q)
        P = np.zeros((n + q, n + q))
        P[:n, :n] = pr.Q
        lin = np.concatenate([pr.c, pr.lam * np.ones(q)])
        shift = pr.zeta if tighten else 0.0
        rows = [np.hstack([pr.screenable.A, np.zeros((pr.n_screenable, q))]),
                np.hstack([pr.immutable.A, np.zeros((pr.n_immutable, q))]),
                np.hstack([S, -Iq]),
                np.hstack([-S, -Iq])]
        rhs = [pr.screenable.b - shift, pr.immutable.b, np.zeros(q), np.zeros(q)]
        if not drop_redundant:
            rows.append(np.hstack([np.zeros((q, n)), -Iq]))
            rhs.append(np.zeros(q))
        H, h = pr.equality
        return QPData(P, lin, np.vstack(rows), np.concatenate(rhs),
                      np.hstack([H, np.zeros((H.shape[0], q))]), h)

    def row_slices(self) -> dict:
        pr = self.base
        c, mi, q = pr.n_screenable, pr.n_immutable, pr.n_sparse
        return {"screenable": slice(0, c), "immutable": slice(c, c + mi),
                "epi_pos": slice(c + mi, c + mi + q),
                "epi_neg": slice(c + mi + q, c + mi + 2 * q)}


# serialization --------------------------------------------------------------

def _block_dict(blk: ConstraintBlock) -> dict:
    return {"A": blk.A.tolist(), "b": blk.b.tolist()}


def program_to_dict(program: RegularizedProgram) -> dict:
    H, h = program.equality
    return {
        "version": FORMAT_VERSION,
        "Q": program.Q.tolist(),
        "c": program.c.tolist(),
        "screenable": _block_dict(program.screenable),
        "immutable": _block_dict(program.immutable),
        "equality": {"H": H.tolist(), "h": h.tolist()},
        "S_rows": program.S_columns.tolist(),
        "lambda": program.lam,
        "zeta": program.zeta,
        "epsilon": program.epsilon,
    }


def program_from_dict(doc: dict) -> RegularizedProgram:
    if not isinstance(doc, dict):
        raise ProgramFormatError("top level must be an object")
    if doc.get("version") != FORMAT_VERSION:
        raise ProgramFormatError(f"unsupported version {doc.get('version')!r}, expected {FORMAT_VERSION!r}")
    missing = [k for k in ("Q", "c", "lambda", "zeta", "epsilon") if k not in doc]
    if missing:
        raise ProgramFormatError(f"missing keys {missing}")
    try:
        c = np.asarray(doc["c"], dtype=float).reshape(-1)
        n = c.shape[0]
        Q = np.asarray(doc["Q"], dtype=float).reshape(n, n)

        def block(key):
            d = doc.get(key) or {}
            A = np.asarray(d.get("A", []), dtype=float).reshape(-1, n)
            return ConstraintBlock(A, np.asarray(d.get("b", []), dtype=float))

        eq = doc.get("equality") or {}
        H = np.asarray(eq.get("H", []), dtype=float).reshape(-1, n)
        h = np.asarray(eq.get("h", []), dtype=float).reshape(-1)
        cols = [int(j) for j in doc.get("S_rows", [])]
        S = np.zeros((len(cols), n))
        S[np.arange(len(cols)), cols] = 1.0
        return RegularizedProgram(Q, c, block("screenable"), block("immutable"), (H, h), S,
                                  float(doc["lambda"]), float(doc["zeta"]), float(doc["epsilon"]))
    except (TypeError, ValueError, IndexError) as exc:
        if isinstance(exc, ProgramFormatError):
            raise
        raise ProgramFormatError(f"bad array data: {exc}") from exc


def dumps(program: RegularizedProgram) -> str:
    return json.dumps(program_to_dict(program), indent=1)


def loads(text: str) -> RegularizedProgram:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProgramFormatError(exc.msg, exc.lineno, exc.colno) from exc
    return program_from_dict(doc)


def load(path) -> RegularizedProgram:
    with open(path) as fh:
        return loads(fh.read())


def dump(program: RegularizedProgram, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps(program))
