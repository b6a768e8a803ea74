"""Thin LP/ILP layer over scipy's HiGHS bindings."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, linprog, milp
from scipy.sparse import csc_matrix, csr_matrix, hstack

try:  # optional: enables warm-started incremental solves
    import highspy
except ImportError:  # pragma: no cover - exercised only without highspy
    highspy = None

BACKENDS = {"highs": "highs", "highs-ds": "highs-ds", "highs-ipm": "highs-ipm"}
DEFAULT_BACKEND = "highs-ds"
ENV_VAR = "LACG_BACKEND"


class BackendError(RuntimeError):
    pass


def resolve_backend(name: str | None = None) -> str:
    name = name or os.environ.get(ENV_VAR) or DEFAULT_BACKEND
    if name not in BACKENDS:
        raise BackendError(f"unknown LP backend {name!r}; choose from {sorted(BACKENDS)}")
    return name


@dataclass
class LinearModel:
    """min c'x over x >= 0 subject to rows of the form a'x (>=|=|<=) b."""

    cost: list = field(default_factory=list)
    kinds: list = field(default_factory=list)  # "C" continuous, "I" integer
    rows: list = field(default_factory=list)  # (coeffs dict, sense, rhs)
    names: list = field(default_factory=list)
    warm_start: object = None  # accepted for API symmetry; HiGHS via scipy ignores it

    @property
    def n_vars(self):
        return len(self.cost)

    def add_var(self, cost, kind="C", name=None) -> int:
        self.cost.append(float(cost))
        self.kinds.append(kind)
        self.names.append(name or f"x{len(self.cost) - 1}")
        return len(self.cost) - 1

    def add_row(self, coeffs: dict, sense: str, rhs) -> int:
        if sense not in (">=", "=", "<="):
            raise ValueError(f"bad sense {sense!r}")
        self.rows.append((coeffs, sense, float(rhs)))
        return len(self.rows) - 1


@dataclass
class SparseModel:
    """Same problem as LinearModel, already in matrix form.  ``sense`` holds
    one of ">=", "=", "<=" per row of ``A``."""

    cost: np.ndarray
    A: csr_matrix
    sense: np.ndarray
    rhs: np.ndarray
    kinds: np.ndarray | None = None  # per variable, default all "C"

    @property
    def n_vars(self):
        return len(self.cost)

    @property
    def n_rows(self):
        return self.A.shape[0]


def to_sparse(model) -> SparseModel:
    if isinstance(model, SparseModel):
        return model
    data, ri, ci = [], [], []
    for i, (coeffs, _, _) in enumerate(model.rows):
        for j, a in coeffs.items():
            data.append(float(a))
            ri.append(i)
            ci.append(j)
    A = csr_matrix((data, (ri, ci)), shape=(len(model.rows), model.n_vars))
    return SparseModel(np.array(model.cost, dtype=float), A,
                       np.array([r[1] for r in model.rows], dtype=object),
                       np.array([r[2] for r in model.rows], dtype=float),
                       np.array(model.kinds, dtype=object))


@dataclass
class Solution:
    status: str
    objective: float | None
    x: np.ndarray | None
    duals: list | None = None
    bound: float | None = None
    message: str = ""


_LP_STATUS = {0: "optimal", 1: "iteration_limit", 2: "infeasible", 3: "unbounded", 4: "error"}


def solve_lp(model, backend: str | None = None) -> Solution:
    """Solve the continuous relaxation; duals are returned per row with the
    sign convention d(objective)/d(rhs)."""
    method = BACKENDS[resolve_backend(backend)]
    m = to_sparse(model)
    if m.n_vars == 0:
        infeasible = any(s in (">=", "=") and b > 0 for s, b in zip(m.sense, m.rhs))
        return Solution("infeasible" if infeasible else "optimal", None if infeasible else 0.0,
                        np.zeros(0), [0.0] * m.n_rows)
    ge = np.flatnonzero(m.sense == ">=")
    le = np.flatnonzero(m.sense == "<=")
    eq = np.flatnonzero(m.sense == "=")
    ub = np.concatenate([ge, le])
    sign = np.concatenate([-np.ones(len(ge)), np.ones(len(le))])
    A_ub = m.A[ub].multiply(sign[:, None]).tocsr() if len(ub) else None
    res = linprog(
        m.cost,
        A_ub=A_ub,
        b_ub=sign * m.rhs[ub] if len(ub) else None,
        A_eq=m.A[eq] if len(eq) else None,
        b_eq=m.rhs[eq] if len(eq) else None,
        bounds=(0, None),
        method=method,
    )
    status = _LP_STATUS.get(res.status, "error")
    if status != "optimal":
        return Solution(status, None, None, None, message=res.message)
    duals = np.zeros(m.n_rows)
    if len(ub):
        duals[ub] = sign * np.asarray(res.ineqlin.marginals)
    if len(eq):
        duals[eq] = res.eqlin.marginals
    return Solution("optimal", float(res.fun), np.asarray(res.x), duals.tolist())


def solve_ilp(model, backend: str | None = None, time_limit: float | None = None) -> Solution:
    """Integer solve; on timeout returns the incumbent with the best bound."""
    resolve_backend(backend)
    m = to_sparse(model)
    n = m.n_vars
    if n == 0:
        return solve_lp(m, backend)
    lo = np.where(m.sense == "<=", -np.inf, m.rhs)
    hi = np.where(m.sense == ">=", np.inf, m.rhs)
    cons = [LinearConstraint(m.A, lo, hi)] if m.n_rows else []
    kinds = m.kinds if m.kinds is not None else np.array(["C"] * n, dtype=object)
    integrality = np.array([1 if k in ("I", "B") else 0 for k in kinds])
    ub = np.array([1.0 if k == "B" else np.inf for k in kinds])
    options = {"disp": False}
    if time_limit is not None:
        options["time_limit"] = float(time_limit)
    res = milp(m.cost, constraints=cons, integrality=integrality,
               bounds=Bounds(np.zeros(n), ub), options=options)
    bound = getattr(res, "mip_dual_bound", None)
    if res.x is None:
        status = {2: "infeasible", 3: "unbounded"}.get(res.status, "error" if res.status != 1 else "time_limit")
        return Solution(status, None, None, bound=bound, message=res.message)
    status = "optimal" if res.status == 0 else "time_limit"
    return Solution(status, float(res.fun), np.asarray(res.x), bound=bound, message=res.message)


class IncrementalLP:
    """An LP that only grows: rows and columns are appended between solves.

    With highspy available the HiGHS instance is kept alive, so each solve
    starts from the previous basis.  Otherwise every solve is a cold
    ``solve_lp`` on the accumulated matrix; results agree either way."""

    def __init__(self, backend: str | None = None, warm: bool = True):
        self.backend = resolve_backend(backend)
        self.warm = warm and highspy is not None
        self.n_rows = 0
        self.n_cols = 0
        self._lo: list = []
        self._hi: list = []
        self._cost: list = []
        self._cols: list = []  # csc blocks, cold path only
        if self.warm:
            h = highspy.Highs()
            h.setOptionValue("output_flag", False)
            if self.backend == "highs-ds":
                h.setOptionValue("solver", "simplex")
            elif self.backend == "highs-ipm":
                h.setOptionValue("solver", "ipm")
            self._h = h

    def add_rows(self, lower, upper):
        """Empty rows ``lower <= a'x <= upper``; use +-inf for one-sided."""
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        k = len(lower)
        if not k:
            return
        if self.warm:
            inf = highspy.kHighsInf
            self._h.addRows(k, np.clip(lower, -inf, inf), np.clip(upper, -inf, inf), 0,
                            np.zeros(k, dtype=np.int32), np.zeros(0, dtype=np.int32), np.zeros(0))
        self._lo.extend(lower.tolist())
        self._hi.extend(upper.tolist())
        self.n_rows += k

    def add_cols(self, cost, A):
        """Columns with objective ``cost`` and coefficients ``A`` (existing
        rows x new columns, any scipy sparse format); bounds ``x >= 0``."""
        cost = np.asarray(cost, dtype=float)
        k = len(cost)
        if not k:
            return
        A = csc_matrix(A, shape=(self.n_rows, k))
        A.sort_indices()
        if self.warm:
            self._h.addCols(k, cost, np.zeros(k), np.full(k, highspy.kHighsInf), A.nnz,
                            A.indptr[:-1].astype(np.int32), A.indices.astype(np.int32), A.data.astype(float))
        else:
            self._cols.append(A)
        self._cost.extend(cost.tolist())
        self.n_cols += k

    def solve(self) -> Solution:
        if not self.warm:
            return solve_lp(self._as_sparse(), self.backend)
        h = self._h
        h.run()
        status = h.modelStatusToString(h.getModelStatus())
        if status != "Optimal":
            return Solution(status.lower(), None, None, None, message=status)
        sol = h.getSolution()
        return Solution("optimal", float(h.getInfo().objective_function_value),
                        np.asarray(sol.col_value), list(sol.row_dual))

    def _as_sparse(self) -> SparseModel:
        blocks = [csc_matrix(b, shape=(self.n_rows, b.shape[1])) for b in self._cols]
        A = hstack(blocks).tocsr() if blocks else csr_matrix((self.n_rows, 0))
        lo, hi = np.array(self._lo), np.array(self._hi)
        sense = np.where(lo == hi, "=", np.where(np.isinf(hi), ">=", "<=")).astype(object)
        rhs = np.where(np.isinf(hi), lo, hi)
        return SparseModel(np.array(self._cost), A, sense, rhs)


def write_lp(model: LinearModel, path) -> None:
    """Dump in CPLEX LP text format."""

    def term(a, name):
        return f"{'+' if a >= 0 else '-'} {abs(a):.12g} {name}"

    lines = ["\\ generated model", "Minimize", " obj: " + " ".join(
        term(c, model.names[j]) for j, c in enumerate(model.cost)) or " obj: 0", "Subject To"]
    for i, (coeffs, sense, b) in enumerate(model.rows):
        body = " ".join(term(a, model.names[j]) for j, a in sorted(coeffs.items())) or "0 x0"
        lines.append(f" r{i}: {body} {sense} {b:.12g}")
    ints = [model.names[j] for j, k in enumerate(model.kinds) if k in ("I", "B")]
    bins = [model.names[j] for j, k in enumerate(model.kinds) if k == "B"]
    if ints:
        lines += ["General", " " + " ".join(n for n in ints if n not in bins)]
    if bins:
        lines += ["Binary", " " + " ".join(bins)]
    lines.append("End")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
