"""Linear programs in row form and a deterministic two-phase simplex.

Programs are maximizations over bounded variables with ``<=`` and ``=`` rows.
The built-in solver is a dense tableau simplex using Bland's lowest-index rule
for both entering and leaving variables, which makes the returned vertex a pure
function of the input. ``method="highs"`` delegates to HiGHS dual simplex for
large programs.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

FEAS_TOL = 1e-7
OPT_TOL = 1e-7
PIVOT_TOL = 1e-10


class MalformedProgram(ValueError):
    pass


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"


LE = "<="
EQ = "="


@dataclass(frozen=True)
class LinearProgram:
    """maximize ``objective @ x`` s.t. ``A x (<=|=) rhs`` and ``lower <= x <= upper``.

    ``A`` may be a dense array or a scipy sparse matrix; the simplex densifies
    it, HiGHS consumes it as is.
    """

    objective: np.ndarray
    A: object
    senses: tuple[str, ...]
    rhs: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    names: tuple[str, ...] | None = None

    @property
    def n_vars(self) -> int:
        return len(self.objective)

    @property
    def n_rows(self) -> int:
        return len(self.rhs)

    @classmethod
    def from_rows(
        cls,
        objective: Sequence[float],
        constraints: Iterable[tuple[Sequence[float], str, float]] = (),
        bounds: Sequence[tuple[float, float]] | None = None,
    ) -> "LinearProgram":
        obj = np.asarray(objective, dtype=float)
        rows, senses, rhs = [], [], []
        for row, rel, b in constraints:
            rows.append(np.asarray(row, dtype=float))
            senses.append(rel)
            rhs.append(float(b))
        v = len(obj)
        if any(len(r) != v for r in rows):
            raise MalformedProgram(f"every row needs {v} coefficients")
        A = np.array(rows, dtype=float).reshape(len(rows), v) if rows else np.zeros((0, v))
        if bounds is None:
            lo, hi = np.zeros(v), np.full(v, np.inf)
        else:
            lo = np.array([b[0] for b in bounds], dtype=float)
            hi = np.array([np.inf if b[1] is None else b[1] for b in bounds], dtype=float)
        lp = cls(obj, A, tuple(senses), np.asarray(rhs, dtype=float), lo, hi)
        lp.validate()
        return lp

    def dense(self) -> np.ndarray:
        return self.A.toarray() if sp.issparse(self.A) else np.asarray(self.A, dtype=float)

    def validate(self) -> None:
        v = self.n_vars
        shape = self.A.shape
        if shape[1] != v:
            raise MalformedProgram(f"row length {shape[1]} != variable count {v}")
        if shape[0] != len(self.rhs) or len(self.senses) != len(self.rhs):
            raise MalformedProgram("row, sense and rhs counts differ")
        if not np.all(np.isfinite(self.rhs)):
            raise MalformedProgram("rhs must be finite")
        if not np.all(np.isfinite(self.objective)):
            raise MalformedProgram("objective must be finite")
        bad = [s for s in self.senses if s not in (LE, EQ)]
        if bad:
            raise MalformedProgram(f"unknown relation {bad[0]!r}")
        if len(self.lower) != v or len(self.upper) != v:
            raise MalformedProgram("bounds length mismatch")
        if np.any(~np.isfinite(self.lower)) or np.any(self.lower > self.upper):
            raise MalformedProgram("bounds need finite lo <= hi")

    def to_text(self) -> str:
        """MPS-flavoured plain-text dump for eyeballing small programs."""
        names = self.names or tuple(f"x{j}" for j in range(self.n_vars))
        out = ["NAME lp", "OBJSENSE MAX", "ROWS"]
        A = self.dense()
        for r, s in enumerate(self.senses):
            out.append(f" {'L' if s == LE else 'E'}  R{r}")
        out.append("COLUMNS")
        for j, name in enumerate(names):
            if self.objective[j]:
                out.append(f"    {name}  OBJ  {self.objective[j]:.17g}")
            for r in np.nonzero(A[:, j])[0]:
                out.append(f"    {name}  R{r}  {A[r, j]:.17g}")
        out.append("RHS")
        for r, b in enumerate(self.rhs):
            if b:
                out.append(f"    RHS  R{r}  {b:.17g}")
        out.append("BOUNDS")
        for j, name in enumerate(names):
            lo, hi = self.lower[j], self.upper[j]
            if lo == hi:
                out.append(f" FX BND  {name}  {lo:.17g}")
                continue
            if lo:
                out.append(f" LO BND  {name}  {lo:.17g}")
            if math.isfinite(hi):
                out.append(f" UP BND  {name}  {hi:.17g}")
        out.append("ENDATA")
        return "\n".join(out) + "\n"


@dataclass(frozen=True)
class LpSolution:
    status: Status
    x: np.ndarray
    objective_value: float
    iterations: int

    @property
    def ok(self) -> bool:
        return self.status is Status.OPTIMAL


def _normalized(lp: LinearProgram) -> tuple[np.ndarray, np.ndarray]:
    A = lp.dense()
    scale = np.abs(A).max(axis=1) if A.size else np.zeros(0)
    scale = np.where(scale > 0, scale, 1.0)
    return A / scale[:, None], lp.rhs / scale


def check_feasible(lp: LinearProgram, x: Sequence[float]) -> float:
    """Largest signed violation over rows and bounds; ``<= 0`` means feasible.

    Rows are divided by their max-abs coefficient first. Equality rows report
    ``|a.x - b|``.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (lp.n_vars,):
        raise ValueError(f"x has shape {x.shape}, expected ({lp.n_vars},)")
    A, b = _normalized(lp)
    ax = A @ x - b
    eq = np.array([s == EQ for s in lp.senses], dtype=bool)
    viol = np.where(eq, np.abs(ax), ax)
    parts = [viol, lp.lower - x]
    finite = np.isfinite(lp.upper)
    parts.append(x[finite] - lp.upper[finite])
    allv = np.concatenate(parts)
    return float(allv.max()) if allv.size else 0.0


def solve(lp: LinearProgram, method: str = "simplex", max_iter: int = 100_000) -> LpSolution:
    lp.validate()
    if method == "simplex":
        return _simplex(lp, max_iter)
    if method == "highs":
        return _highs(lp)
    raise ValueError(f"unknown method {method!r}")


# -- HiGHS ----------------------------------------------------------------------

def _highs(lp: LinearProgram) -> LpSolution:
    from scipy.optimize import linprog

    A = sp.csr_matrix(lp.A) if not sp.issparse(lp.A) else lp.A.tocsr()
    le = np.array([s == LE for s in lp.senses], dtype=bool)
    kw = {}
    if le.any():
        kw["A_ub"], kw["b_ub"] = A[np.nonzero(le)[0]], lp.rhs[le]
    if (~le).any():
        kw["A_eq"], kw["b_eq"] = A[np.nonzero(~le)[0]], lp.rhs[~le]
    bounds = np.column_stack([lp.lower, np.where(np.isfinite(lp.upper), lp.upper, np.nan)])
    bounds = [(lo, None if np.isnan(hi) else hi) for lo, hi in bounds]
    res = linprog(-lp.objective, bounds=bounds, method="highs-ds", **kw)
    nit = int(getattr(res, "nit", 0) or 0)
    if res.status == 2:
        return LpSolution(Status.INFEASIBLE, np.zeros(lp.n_vars), math.nan, nit)
    if res.status == 3:
        return LpSolution(Status.UNBOUNDED, np.zeros(lp.n_vars), math.inf, nit)
    if res.status != 0:
        raise RuntimeError(f"HiGHS failed: {res.message}")
    x = np.asarray(res.x, dtype=float)
    return LpSolution(Status.OPTIMAL, x, float(lp.objective @ x), nit)


# -- tableau simplex ------------------------------------------------------------

class _Tableau:
    """Dense tableau; last column is the rhs, last row is the reduced-cost row."""

    def __init__(self, T: np.ndarray, basis: list[int]):
        self.T = T
        self.basis = basis
        self.iterations = 0

    def pivot(self, r: int, c: int) -> None:
        T = self.T
        T[r] /= T[r, c]
        col = T[:, c].copy()
        col[r] = 0.0
        T -= np.outer(col, T[r])
        T[:, c] = 0.0
        T[r, c] = 1.0
        self.basis[r] = c
        self.iterations += 1

    def run(self, allowed: np.ndarray, max_iter: int) -> str:
        """Maximize the objective encoded in the last row (stored as -c)."""
        T = self.T
        m = T.shape[0] - 1
        while True:
            if self.iterations >= max_iter:
                raise RuntimeError("simplex iteration limit reached")
            cost = T[-1, :-1]
            cand = np.nonzero((cost < -OPT_TOL * 1e-2) & allowed)[0]
            if cand.size == 0:
                return "optimal"
            c = int(cand[0])
            col = T[:m, c]
            pos = col > PIVOT_TOL
            if not pos.any():
                return "unbounded"
            ratios = np.full(m, np.inf)
            ratios[pos] = T[:m, -1][pos] / col[pos]
            best = ratios.min()
            ties = np.nonzero(ratios <= best + 1e-12 * max(1.0, abs(best)))[0]
            r = min(ties, key=lambda k: self.basis[k])
            self.pivot(int(r), c)


def _simplex(lp: LinearProgram, max_iter: int) -> LpSolution:
    v = lp.n_vars
    A, b = _normalized(lp)
    lo, hi = lp.lower, lp.upper
    # shift x = lo + y so every variable is y >= 0
    b = b - A @ lo
    rows = [A]
    rhs = [b]
    senses = list(lp.senses)
    fin = np.nonzero(np.isfinite(hi))[0]
    if fin.size:
        U = np.zeros((fin.size, v))
        U[np.arange(fin.size), fin] = 1.0
        rows.append(U)
        rhs.append(hi[fin] - lo[fin])
        senses += [LE] * fin.size
    A = np.vstack(rows) if rows else np.zeros((0, v))
    b = np.concatenate(rhs) if rhs else np.zeros(0)
    m = len(b)
    is_le = np.array([s == LE for s in senses], dtype=bool)

    # flip rows with negative rhs; a flipped <= row becomes >= and gets a surplus
    sign = np.where(b < 0, -1.0, 1.0)
    A = A * sign[:, None]
    b = b * sign
    n_slack = int(is_le.sum())
    slack_sign = sign[is_le]  # +1 slack, -1 surplus
    need_art = ~(is_le & (sign > 0))
    n_art = int(need_art.sum())
    ncol = v + n_slack + n_art
    T = np.zeros((m + 1, ncol + 1))
    T[:m, :v] = A
    slack_rows = np.nonzero(is_le)[0]
    T[slack_rows, v + np.arange(n_slack)] = slack_sign
    art_rows = np.nonzero(need_art)[0]
    T[art_rows, v + n_slack + np.arange(n_art)] = 1.0
    T[:m, -1] = b
    basis = [-1] * m
    for k, r in enumerate(slack_rows):
        if slack_sign[k] > 0:
            basis[r] = v + k
    for k, r in enumerate(art_rows):
        basis[r] = v + n_slack + k
    tab = _Tableau(T, basis)

    allowed = np.ones(ncol, dtype=bool)
    if n_art:
        # phase 1: maximize -sum(artificials)
        T[-1, :] = 0.0
        T[-1, v + n_slack:ncol] = 1.0
        for r in art_rows:
            T[-1] -= T[r]
        tab.run(allowed, max_iter)
        if -T[-1, -1] > FEAS_TOL * max(1.0, np.abs(b).max(initial=0.0)):
            return LpSolution(Status.INFEASIBLE, np.zeros(v), math.nan, tab.iterations)
        # drive artificials out of the basis; drop rows that are redundant
        keep = np.ones(m + 1, dtype=bool)
        for r in range(m):
            if tab.basis[r] >= v + n_slack:
                nz = np.nonzero(np.abs(T[r, : v + n_slack]) > PIVOT_TOL)[0]
                if nz.size:
                    tab.pivot(r, int(nz[0]))
                else:
                    keep[r] = False
        if not keep.all():
            tab.T = T = T[keep]
            tab.basis = [bv for bv, k in zip(tab.basis, keep[:-1]) if k]
        allowed[v + n_slack:] = False
        T[:, v + n_slack:ncol] = 0.0

    # phase 2 objective row: -c, then eliminate basic columns
    T[-1, :] = 0.0
    T[-1, :v] = -lp.objective
    for r, bv in enumerate(tab.basis):
        if T[-1, bv] != 0.0:
            T[-1] -= T[-1, bv] * T[r]
    status = tab.run(allowed, max_iter)
    if status == "unbounded":
        return LpSolution(Status.UNBOUNDED, np.zeros(v), math.inf, tab.iterations)
    y = np.zeros(ncol)
    for r, bv in enumerate(tab.basis):
        y[bv] = T[r, -1]
    x = lo + y[:v]
    x = np.where(np.abs(x) < 1e-15, 0.0, x)
    return LpSolution(Status.OPTIMAL, x, float(lp.objective @ x), tab.iterations)
