"""Solver seam: map a :class:`ConicProgram` to a conic solver and back.

The production backend is cvxpy + Clarabel (interior point).  Whatever the
solver reports, feasibility is re-checked here by evaluating every constraint
at the returned point.  ``ReferenceBackend`` is a derivative-free search for
tiny programs, used to cross-check the production route in tests.
"""
from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np
from scipy.optimize import minimize

from .relaxation import ConicProgram

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
NEAR_OPTIMAL = "near-optimal"
INFEASIBLE = "infeasible"
NUMERIC_FAILURE = "numeric-failure"


@dataclass(frozen=True)
class SolveSettings:
    feas_tol: float = 1e-8
    gap_tol: float = 1e-8
    max_iter: int = 500
    verbose: bool = False
    solver: str = "CLARABEL"

    def __post_init__(self):
        if self.feas_tol <= 0 or self.gap_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iter <= 0:
            raise ValueError("max_iter must be positive")


@dataclass
class RawSolution:
    status: str
    values: dict[str, np.ndarray]
    objective: float
    solve_time: float
    iterations: int
    residuals: dict[str, float] = field(default_factory=dict)
    solver_status: str = ""
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status in (OPTIMAL, NEAR_OPTIMAL)

    @property
    def max_residual(self) -> float:
        return max(self.residuals.values(), default=0.0)

    def worst_block(self) -> str | None:
        if not self.residuals:
            return None
        return max(self.residuals, key=self.residuals.get)


def _sym_min_eig(X: np.ndarray) -> float:
    X = np.asarray(X, float)
    return float(np.linalg.eigvalsh(0.5 * (X + X.T))[0])


def constraint_residual(con: cp.Constraint) -> float:
    """Violation of a single constraint at the current variable values, scaled
    by the magnitude of its data so that one threshold fits all blocks.
    """
    if isinstance(con, cp.constraints.Zero):
        r = np.abs(con.expr.value)
        scale = 1.0
    elif isinstance(con, cp.constraints.Equality):
        lhs, rhs = con.args[0].value, con.args[1].value
        r = np.abs(np.asarray(lhs) - np.asarray(rhs))
        scale = 1.0 + max(np.max(np.abs(lhs)), np.max(np.abs(rhs)))
    elif isinstance(con, cp.constraints.Inequality):
        lhs, rhs = con.args[0].value, con.args[1].value
        r = np.maximum(np.asarray(lhs) - np.asarray(rhs), 0.0)
        scale = 1.0 + max(np.max(np.abs(lhs)), np.max(np.abs(rhs)))
    elif isinstance(con, cp.constraints.NonPos):
        r = np.maximum(con.expr.value, 0.0)
        scale = 1.0
    elif isinstance(con, cp.constraints.PSD):
        X = np.asarray(con.expr.value)
        r = max(-_sym_min_eig(X), 0.0)
        scale = 1.0 + np.max(np.abs(X))
    elif isinstance(con, cp.constraints.SOC):
        t = np.atleast_1d(con.args[0].value)
        X = np.asarray(con.args[1].value).reshape(t.size, -1) if t.size > 1 else \
            np.asarray(con.args[1].value).reshape(1, -1)
        r = np.maximum(np.linalg.norm(X, axis=1) - t, 0.0)
        scale = 1.0 + np.max(np.abs(t))
    else:  # pragma: no cover - cone types not produced by this package
        r = np.atleast_1d(con.violation())
        scale = 1.0
    return float(np.max(r) / scale) if np.size(r) else 0.0


def check_residuals(program: ConicProgram) -> dict[str, float]:
    out = {}
    for name, cons in program.blocks.items():
        out[name] = max((constraint_residual(c) for c in cons), default=0.0)
    return out


def _clarabel_opts(s: SolveSettings) -> dict:
    return dict(tol_feas=s.feas_tol, tol_gap_abs=s.gap_tol, tol_gap_rel=s.gap_tol,
                max_iter=s.max_iter)


def solve(program: ConicProgram, settings: SolveSettings | None = None) -> RawSolution:
    """Solve with the production backend and verify the result independently.

    ``optimal`` is only returned when every constraint block has scaled residual
    at most ``10 * feas_tol``; otherwise a solver-optimal point is surfaced as
    ``near-optimal`` together with its residuals.
    """
    settings = settings or SolveSettings()
    prob = program.problem()
    opts = _clarabel_opts(settings) if settings.solver == "CLARABEL" else {}
    t0 = time.perf_counter()
    try:
        with warnings.catch_warnings():
            # inaccuracy is reported through the residual check as near-optimal
            warnings.filterwarnings("ignore", message="Solution may be inaccurate")
            prob.solve(solver=settings.solver, verbose=settings.verbose, **opts)
    except cp.error.SolverError as exc:
        return RawSolution(NUMERIC_FAILURE, {}, float("nan"), time.perf_counter() - t0, 0,
                           solver_status="error", message=str(exc))
    elapsed = time.perf_counter() - t0
    stats = prob.solver_stats
    iters = int(getattr(stats, "num_iters", 0) or 0)
    st = prob.status
    if st in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE, cp.UNBOUNDED, cp.UNBOUNDED_INACCURATE):
        return RawSolution(INFEASIBLE, {}, float("nan"), elapsed, iters, solver_status=st,
                           message=f"solver reports {st}")
    if st not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE) or prob.value is None:
        return RawSolution(NUMERIC_FAILURE, {}, float("nan"), elapsed, iters, solver_status=st,
                           message=f"solver returned status {st}")
    # variables that no constraint or active term touches are left unset
    values = {k: np.array(v.value, dtype=float) for k, v in program.variables.items()
              if v.value is not None}
    res = check_residuals(program)
    worst = max(res.values(), default=0.0)
    status = OPTIMAL if (st == cp.OPTIMAL and worst <= 10 * settings.feas_tol) else NEAR_OPTIMAL
    if status == NEAR_OPTIMAL:
        log.info("near-optimal: worst residual %.2e in %s", worst, max(res, key=res.get))
    return RawSolution(status, values, float(prob.value), elapsed, iters, res, solver_status=st)


class ReferenceBackend:
    """Derivative-free exact-penalty search over the flattened variables.

    Only meant for programs with a handful of scalar unknowns.  A coarse grid
    seeds Nelder-Mead on ``objective + rho * total violation`` with ``rho``
    increased until the violation vanishes.
    """

    def __init__(self, box: float = 5.0, grid: int = 5, max_unknowns: int = 6):
        self.box, self.grid, self.max_unknowns = box, grid, max_unknowns

    def solve(self, program: ConicProgram) -> RawSolution:
        vars_ = list(program.variables.values())
        sizes = [int(v.size) for v in vars_]
        n = sum(sizes)
        if n > self.max_unknowns:
            raise ValueError(f"reference backend limited to {self.max_unknowns} unknowns, got {n}")
        prob = program.problem()
        cons = program.constraints

        def assign(x):
            off = 0
            for v, s in zip(vars_, sizes):
                chunk = x[off: off + s]
                if v.attributes.get("symmetric"):
                    # fill from the flat column-major vector and symmetrise
                    k = v.shape[0]
                    M = chunk.reshape(k, k, order="F")
                    v.value = 0.5 * (M + M.T)
                else:
                    v.value = chunk.reshape(v.shape, order="F") if v.shape else chunk[0]
                off += s

        def viol(x):
            assign(x)
            return sum(float(np.sum(np.abs(np.atleast_1d(c.violation())))) for c in cons)

        def merit(x, rho):
            assign(x)
            return float(prob.objective.value) + rho * viol(x)

        t0 = time.perf_counter()
        axes = [np.linspace(-self.box, self.box, self.grid)] * n
        pts = np.array(np.meshgrid(*axes)).reshape(n, -1).T
        rho = 1e2
        best = min(pts, key=lambda x: merit(x, rho))
        it = 0
        for rho in (1e2, 1e4, 1e6):
            # restarts from fresh simplices get Nelder-Mead off penalty kinks
            for size in (1.0, 0.3, 0.1, 0.03, 0.01):
                simplex = np.vstack([best, best + size * self.box * np.eye(n) / self.grid])
                r = minimize(merit, best, args=(rho,), method="Nelder-Mead",
                             options=dict(xatol=1e-10, fatol=1e-12, maxfev=4000,
                                          initial_simplex=simplex))
                best, it = r.x, it + r.nit
        assign(best)
        v = viol(best)
        values = {k: np.array(var.value, dtype=float) for k, var in program.variables.items()}
        status = OPTIMAL if v < 1e-6 else INFEASIBLE
        return RawSolution(status, values, float(prob.objective.value), time.perf_counter() - t0,
                           it, {"total": v}, solver_status="reference")
