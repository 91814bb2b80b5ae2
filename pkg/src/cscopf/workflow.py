"""End-to-end stages: relaxed OPF, base point, C-SCOPF solve and its report."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np

from .case_model import CaseSystem, build_matrices, complex_voltage
from .dae import (DynamicState, JacobianAffine, init_operating_point, jacobian_affine,
                  speed_in_rad_per_s)
from .recovery import (ErrorReport, SolutionBundle, StabilityCheck, compute_error_report,
                       verify_stability)
from .relaxation import (BasePoint, ConicProgram, ParkBounds, assemble_cscopf,
                         build_relaxed_opf)
from .solver import RawSolution, SolveSettings, solve

log = logging.getLogger(__name__)

DEFAULT_GAMMA = (10.0, 1e4, 1e4, 1e4, 1e4)
DEFAULT_SWEEP = tuple(float(x) for x in np.logspace(-2, 2, 9))
OPF_TRACE_WEIGHT = 10.0


class SolveFailed(RuntimeError):
    def __init__(self, stage: str, raw: RawSolution):
        block = raw.worst_block()
        where = f", worst block {block!r}" if block else ""
        super().__init__(f"{stage}: {raw.status} ({raw.message or raw.solver_status}){where}")
        self.stage, self.raw = stage, raw


@dataclass
class StageResult:
    bundle: SolutionBundle
    raw: RawSolution
    timing: dict = field(default_factory=dict)


def solve_relaxed_opf(case: CaseSystem, settings: SolveSettings | None = None, mats=None,
                      trace_weight: float = OPF_TRACE_WEIGHT) -> StageResult:
    """SDP-relaxed OPF with objective ``cost + trace_weight * Tr{W}``.

    The trace term is ``h2`` about ``V_o = 0``; a small weight removes the
    residual rank that the plain relaxation leaves on some cases at negligible
    cost.  The reported ``V`` is the decomposed ``V^w`` (the vector variable is
    otherwise only loosely tied to ``W``).
    """
    if trace_weight < 0:
        raise ValueError("trace_weight must be non-negative")
    mats = mats or build_matrices(case)
    t0 = time.perf_counter()
    prog = build_relaxed_opf(ConicProgram(name=f"opf-{case.name}"), case, mats)
    if trace_weight > 0:
        prog.add_term("trace", cp.trace(prog["W"]), trace_weight)
    timing = {"build": time.perf_counter() - t0}
    raw = solve(prog, settings)
    if not raw.ok:
        raise SolveFailed("relaxed OPF", raw)
    timing["solve"] = raw.solve_time
    t0 = time.perf_counter()
    b = SolutionBundle.from_raw("opf", raw, case, meta={"trace_weight": trace_weight})
    b.values["V"] = b.V_w.copy()
    timing["recover"] = time.perf_counter() - t0
    return StageResult(b, raw, timing)


def stability_jacobian(case: CaseSystem, mats=None) -> JacobianAffine:
    """Reference-reduced Jacobian with speeds in rad/s, as used inside the program.

    In per-unit speed the constant base-frequency entries dominate
    ``||vec(Z + J)||`` and hide its dependence on the operating point; the
    rescaling is a similarity transform, so the spectrum is unchanged.
    """
    jac = jacobian_affine(case, mats).reference_reduced(case.reference_gen, case.n_gen)
    return jac.scaled(speed_in_rad_per_s(jac))


def equilibrium(case: CaseSystem, b: SolutionBundle) -> DynamicState:
    return init_operating_point(case, complex_voltage(b.V_w), b.P_g, b.Q_g)


def base_point(case: CaseSystem, opf: SolutionBundle) -> tuple[BasePoint, DynamicState]:
    """Penalty anchor and machine equilibrium behind a relaxed-OPF solution."""
    st = equilibrium(case, opf)
    bp = BasePoint(V=opf.V_w.copy(), V_dq=np.concatenate([st.Vd, st.Vq]),
                   u=np.sin(st.delta), v=np.cos(st.delta), E_f=st.E_f.copy())
    return bp, st


def solve_cscopf(case: CaseSystem, opf: SolutionBundle, gamma=DEFAULT_GAMMA,
                 mode: str = "penalty-only", settings: SolveSettings | None = None,
                 eps: float = 1e-6, mats=None, jac=None,
                 angle_window: float | None = None) -> StageResult:
    """Solve the C-SCOPF program around the relaxed-OPF point ``opf``.

    ``angle_window`` (rad) tightens the McCormick boxes of the Park relaxation
    to the base rotor and bus angles plus or minus the window; ``None`` keeps
    the default boxes.
    """
    mats = mats or build_matrices(case)
    t0 = time.perf_counter()
    base, _ = base_point(case, opf)
    jac = jac or stability_jacobian(case, mats)
    bounds = None
    if angle_window:
        bounds = ParkBounds.around(case, base.V, np.arctan2(base.u, base.v), angle_window)
    prog = assemble_cscopf(case, mats, jac, gamma, mode, base, eps=eps, bounds=bounds)
    timing = {"build": time.perf_counter() - t0}
    raw = solve(prog, settings)
    if not raw.ok:
        raise SolveFailed("C-SCOPF", raw)
    timing["solve"] = raw.solve_time
    t0 = time.perf_counter()
    meta = {"gamma": list(map(float, gamma)), "mode": mode, "eps": eps,
            "angle_window": angle_window,
            # terms with zero weight never reach the solver and stay unset
            "terms": {k: None if e.value is None else float(e.value)
                      for k, (_, e) in prog.terms.items()}}
    b = SolutionBundle.from_raw("scopf", raw, case, E_f=base.E_f, meta=meta)
    timing["recover"] = time.perf_counter() - t0
    return StageResult(b, raw, timing)


def report(case: CaseSystem, sol: SolutionBundle, base: SolutionBundle, mats=None,
           timing: dict | None = None) -> tuple[ErrorReport, StabilityCheck]:
    t0 = time.perf_counter()
    chk = verify_stability(case, sol, mats)
    rep = compute_error_report(sol, base, case, chk)
    rep.timing = dict(timing or {})
    rep.timing["verify"] = time.perf_counter() - t0
    return rep, chk
