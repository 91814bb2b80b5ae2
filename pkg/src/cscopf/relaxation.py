"""Convex program for the convexified stability-constrained OPF.

All fragments write into a :class:`ConicProgram`, a thin named container over
cvxpy variables, constraint blocks and weighted objective terms.  The lifted
quantities are

* ``W ~ V V^T`` over ``V = [V_x; V_y]`` (network voltages),
* ``W_dq ~ V_dq V_dq^T`` over ``V_dq = [V_d; V_q]`` (machine-frame terminal voltages),
* ``U_u ~ u^2``, ``U_v ~ v^2`` for ``u = sin(delta)``, ``v = cos(delta)``,
* ``M ~ Z^T Z + J^T J`` for the Lyapunov certificate.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import cvxpy as cp
import numpy as np
import scipy.sparse as sp

from .case_model import CaseSystem, NetworkMatrices
from .dae import JacobianAffine, MachineParams

MODES = ("penalty-only", "constraint", "zeta")


class ProgramBuildError(ValueError):
    pass


@dataclass
class ConicProgram:
    """Named variables, named constraint blocks and a weighted objective."""

    name: str = "program"
    variables: dict[str, cp.Variable] = field(default_factory=dict)
    expressions: dict[str, cp.Expression] = field(default_factory=dict)
    blocks: dict[str, list[cp.Constraint]] = field(default_factory=dict)
    terms: dict[str, tuple[float, cp.Expression]] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def var(self, name: str, shape=(), **kw) -> cp.Variable:
        if name in self.variables:
            raise ProgramBuildError(f"variable {name!r} defined twice")
        v = cp.Variable(shape, name=name, **kw)
        self.variables[name] = v
        return v

    def add(self, block: str, constraints) -> None:
        if isinstance(constraints, cp.Constraint):
            constraints = [constraints]
        self.blocks.setdefault(block, []).extend(constraints)

    def add_term(self, name: str, expr: cp.Expression, weight: float = 1.0) -> None:
        if weight < 0:
            raise ProgramBuildError(f"negative weight for {name}")
        self.terms[name] = (float(weight), expr)

    def __getitem__(self, name: str):
        if name in self.variables:
            return self.variables[name]
        return self.expressions[name]

    def __contains__(self, name: str) -> bool:
        return name in self.variables or name in self.expressions

    @property
    def constraints(self) -> list[cp.Constraint]:
        return [c for cs in self.blocks.values() for c in cs]

    @property
    def objective(self) -> cp.Expression:
        parts = [w * e for w, e in self.terms.values() if w != 0]
        return cp.sum(cp.hstack(parts)) if parts else cp.Constant(0.0)

    def problem(self) -> cp.Problem:
        return cp.Problem(cp.Minimize(self.objective), self.constraints)

    def dump(self, path=None, solver: str = "CLARABEL") -> dict:
        """Canonical conic data ``min c^T x + d  s.t.  b - A x in K``.

        Fields: ``c``, ``d``, ``b`` (dense lists); ``A`` as COO triplets
        ``{shape, row, col, val}``; ``cones`` with counts ``zero``,
        ``nonneg``, ``soc`` (list of sizes) and ``psd`` (list of orders, each
        cone stored as its scaled lower triangle); ``variables`` maps names to
        ``[offset, size]`` in ``x``.  Symmetric variables occupy only their
        upper triangle, column by column.
        """
        data, _, _ = self.problem().get_problem_data(solver)
        A = sp.coo_matrix(data["A"])
        dims = data["dims"]
        inv = data[cp.settings.PARAM_PROB].var_id_to_col
        n_x = len(data["c"])
        starts = sorted((int(inv[v.id]), name) for name, v in self.variables.items() if v.id in inv)
        ends = [o for o, _ in starts[1:]] + [n_x]
        offsets = {name: [o, e - o] for (o, name), e in zip(starts, ends)}
        out = {
            "name": self.name,
            "c": np.asarray(data["c"]).tolist(),
            "d": float(np.asarray(data.get("offset", 0.0))),
            "b": np.asarray(data["b"]).tolist(),
            "A": {"shape": list(A.shape), "row": A.row.tolist(), "col": A.col.tolist(),
                  "val": A.data.tolist()},
            "cones": {"zero": int(dims.zero), "nonneg": int(dims.nonneg),
                      "soc": [int(s) for s in dims.soc], "psd": [int(s) for s in dims.psd]},
            "variables": offsets,
        }
        if path is not None:
            Path(path).write_text(json.dumps(out))
        return out


def schur_block(X, x) -> cp.Expression:
    """``[[X, x], [x^T, 1]]``, PSD iff ``X - x x^T`` is PSD."""
    col = cp.reshape(x, (x.shape[0], 1), order="F")
    return cp.bmat([[X, col], [col.T, np.ones((1, 1))]])


def _traces(stack: sp.csr_matrix, W) -> cp.Expression:
    return stack @ cp.vec(W, order="F")


def build_relaxed_opf(prog: ConicProgram, case: CaseSystem, mats: NetworkMatrices) -> ConicProgram:
    """SDP relaxation of AC OPF: injections, generation and voltage bounds,
    SOC flow limits and ``[[W, V], [V^T, 1]] >= 0``.
    """
    nb, ng = case.n_bus, case.n_gen
    s = case.slack
    W = prog.var("W", (2 * nb, 2 * nb), symmetric=True)
    V = prog.var("V", 2 * nb)
    Pg = prog.var("P_g", ng)
    Qg = prog.var("Q_g", ng)
    C = case.gen_incidence
    P_inj = _traces(mats.stacked("Yk"), W)
    Q_inj = _traces(mats.stacked("Yk_bar"), W)
    prog.expressions["P_inj"] = P_inj
    prog.expressions["Q_inj"] = Q_inj
    prog.add("power_balance", [P_inj == C @ Pg - case.P_d, Q_inj == C @ Qg - case.Q_d])
    prog.add("generation_limits", [
        Pg >= case.array("P_min"), Pg <= case.array("P_max"),
        Qg >= case.array("Q_min"), Qg <= case.array("Q_max"),
    ])
    vmag2 = _traces(mats.stacked("Mk"), W)
    prog.add("voltage_limits", [vmag2 >= case.array("V_min", "buses") ** 2,
                                vmag2 <= case.array("V_max", "buses") ** 2])
    smax = case.array("S_max", "branches") if case.branches else np.zeros(0)
    lim = np.flatnonzero(smax > 0)
    if lim.size:
        flows = []
        for tag in ("kl", "lk"):
            P = _traces(mats.stacked(f"Y{tag}"), W)
            Q = _traces(mats.stacked(f"Y{tag}_bar"), W)
            for j in lim:
                flows.append(cp.SOC(cp.Constant(smax[j]), cp.hstack([P[j], Q[j]])))
        prog.add("flow_limits", flows)
    prog.add("lifting_W", [schur_block(W, V) >> 0])
    # the real embedding is invariant under rotation; fix the slack angle
    prog.add("angle_reference", [W[nb + s, nb + s] == 0, V[nb + s] == 0, V[s] >= 0])
    c2, c1, c0 = case.array("c2"), case.array("c1"), case.array("c0")
    cost = cp.sum(cp.multiply(c2, cp.square(Pg))) + c1 @ Pg + c0.sum()
    prog.expressions["cost"] = cost
    prog.add_term("cost", cost)
    prog.meta.update(n_bus=nb, n_gen=ng, base_mva=case.base_mva)
    return prog


def stator_coefficients(case: CaseSystem, E_f):
    """Coefficients of the relaxed stator-network equalities.

    ``P_g = a_d V_d + k_p W_dq[i, m]`` and
    ``Q_g = a_d V_q - W_dq[i, i]/x_q - W_dq[m, m]/x_d`` with ``a_d = E_f/x_d``
    and ``k_p = (x_d - x_q)/(x_d x_q)``.
    """
    mp = MachineParams.from_case(case)
    E_f = np.asarray(E_f, float)
    return E_f / mp.x_d, (mp.x_d - mp.x_q) / (mp.x_d * mp.x_q), 1 / mp.x_q, 1 / mp.x_d


def build_stator_coupling(prog: ConicProgram, case: CaseSystem, E_f) -> ConicProgram:
    """Lifted stator-network equilibrium with ``W_dq >= V_dq V_dq^T``.

    ``E_f`` is held at the base operating point so the equalities stay linear.
    """
    ng = case.n_gen
    if "P_g" not in prog:
        raise ProgramBuildError("relaxed OPF must be built before the stator coupling")
    Wdq = prog.var("W_dq", (2 * ng, 2 * ng), symmetric=True)
    Vdq = prog.var("V_dq", 2 * ng)
    a_d, k_p, iq, idd = stator_coefficients(case, E_f)
    i = np.arange(ng)
    m = i + ng
    Pg, Qg = prog["P_g"], prog["Q_g"]
    prog.add("stator_P", [Pg == cp.multiply(a_d, Vdq[:ng]) + cp.multiply(k_p, Wdq[i, m])])
    prog.add("stator_Q", [Qg == cp.multiply(a_d, Vdq[ng:]) - cp.multiply(iq, Wdq[i, i])
                          - cp.multiply(idd, Wdq[m, m])])
    prog.add("lifting_Wdq", [schur_block(Wdq, Vdq) >> 0])
    # same sign ambiguity as W; V_q of the first machine is positive at any sane point
    prog.add("dq_reference", [Vdq[ng] >= 0])
    prog.meta["E_f"] = np.asarray(E_f, float).tolist()
    return prog


def _mul(c, x):
    if isinstance(x, cp.Expression) and np.ndim(c) > 0:
        return cp.multiply(c, x)
    return c * x


@dataclass(frozen=True)
class McCormickEnvelope:
    """Convex hull of ``w = a b`` over ``[a_l, a_u] x [b_l, b_u]``.

    Bounds may be scalars or arrays (one box per element).
    """

    a_l: object
    a_u: object
    b_l: object
    b_u: object

    def __post_init__(self):
        if np.any(np.asarray(self.a_l) > np.asarray(self.a_u)) or \
                np.any(np.asarray(self.b_l) > np.asarray(self.b_u)):
            raise ProgramBuildError("inverted McCormick bounds")

    def _planes(self, a, b):
        al, au, bl, bu = self.a_l, self.a_u, self.b_l, self.b_u
        lo1 = _mul(al, b) + _mul(bl, a) - al * bl
        lo2 = _mul(au, b) + _mul(bu, a) - au * bu
        hi1 = _mul(au, b) + _mul(bl, a) - au * bl
        hi2 = _mul(bu, a) + _mul(al, b) - al * bu
        return lo1, lo2, hi1, hi2

    def inequalities(self, a, b, w) -> list:
        """The four envelope inequalities (works for cvxpy or numeric operands)."""
        lo1, lo2, hi1, hi2 = self._planes(a, b)
        return [w >= lo1, w >= lo2, w <= hi1, w <= hi2]

    def _numeric_planes(self, a, b):
        # factored form: exact wherever a factor vanishes, i.e. on the tight faces
        a, b = np.asarray(a, float), np.asarray(b, float)
        al, au, bl, bu = self.a_l, self.a_u, self.b_l, self.b_u
        ab = a * b
        return (ab - (a - al) * (b - bl), ab - (au - a) * (bu - b),
                ab + (au - a) * (b - bl), ab + (a - al) * (bu - b))

    def lower(self, a, b):
        lo1, lo2, _, _ = self._numeric_planes(a, b)
        return np.maximum(lo1, lo2)

    def upper(self, a, b):
        _, _, hi1, hi2 = self._numeric_planes(a, b)
        return np.minimum(hi1, hi2)

    def contains(self, a, b, w, tol: float = 0.0) -> np.ndarray:
        return (self.lower(a, b) - tol <= w) & (w <= self.upper(a, b) + tol)


def mccormick_envelope(a_bounds, b_bounds) -> McCormickEnvelope:
    return McCormickEnvelope(a_bounds[0], a_bounds[1], b_bounds[0], b_bounds[1])


def _sin_range(lo, hi):
    """Exact range of ``sin`` over ``[lo, hi]`` (elementwise)."""
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    s_lo = np.minimum(np.sin(lo), np.sin(hi))
    s_hi = np.maximum(np.sin(lo), np.sin(hi))
    # an interior maximum/minimum exists when pi/2 + 2k pi (resp. -pi/2) lies inside
    has_max = np.floor((hi - np.pi / 2) / (2 * np.pi)) >= np.ceil((lo - np.pi / 2) / (2 * np.pi))
    has_min = np.floor((hi + np.pi / 2) / (2 * np.pi)) >= np.ceil((lo + np.pi / 2) / (2 * np.pi))
    return np.where(has_min, -1.0, s_lo), np.where(has_max, 1.0, s_hi)


@dataclass(frozen=True)
class ParkBounds:
    """Per-generator boxes for ``V_x``, ``V_y`` at the generator bus and ``u``, ``v``."""

    vx: tuple[np.ndarray, np.ndarray]
    vy: tuple[np.ndarray, np.ndarray]
    u: tuple[np.ndarray, np.ndarray]
    v: tuple[np.ndarray, np.ndarray]

    @classmethod
    def from_case(cls, case: CaseSystem) -> "ParkBounds":
        """Default boxes: ``|V_x|, |V_y| <= V_max`` and ``u, v in [-1, 1]``."""
        vmax = case.array("V_max", "buses")[case.gen_bus]
        one = np.ones(case.n_gen)
        return cls((-vmax, vmax), (-vmax, vmax), (-one, one), (-one, one))

    @classmethod
    def around(cls, case: CaseSystem, V, delta, angle_window: float,
               voltage_window: float | None = None) -> "ParkBounds":
        """Boxes tightened to ``delta +- angle_window`` and the network
        voltage rotated by at most the same angle, magnitudes within limits.
        """
        if angle_window <= 0:
            raise ProgramBuildError("angle window must be positive")
        nb, gb = case.n_bus, case.gen_bus
        V = np.asarray(V, float)
        delta = np.asarray(delta, float)
        u = _sin_range(delta - angle_window, delta + angle_window)
        v = _sin_range(delta + np.pi / 2 - angle_window, delta + np.pi / 2 + angle_window)
        theta = np.arctan2(V[nb + gb], V[gb])
        vmin = case.array("V_min", "buses")[gb]
        vmax = case.array("V_max", "buses")[gb]
        if voltage_window is not None:
            mag = np.hypot(V[gb], V[nb + gb])
            vmin = np.maximum(vmin, mag - voltage_window)
            vmax = np.minimum(vmax, mag + voltage_window)
        cx = _sin_range(theta + np.pi / 2 - angle_window, theta + np.pi / 2 + angle_window)
        cy = _sin_range(theta - angle_window, theta + angle_window)
        # |V| in [vmin, vmax] times cos/sin range: corners of the product box
        vx = (np.minimum(vmin * cx[0], vmax * cx[0]), np.maximum(vmin * cx[1], vmax * cx[1]))
        vy = (np.minimum(vmin * cy[0], vmax * cy[0]), np.maximum(vmin * cy[1], vmax * cy[1]))
        return cls(vx, vy, u, v)


def build_park_mccormick(prog: ConicProgram, case: CaseSystem, bounds: ParkBounds | None = None,
                         gen_bus=None) -> ConicProgram:
    """Relaxed Park transform, trigonometric identity and the ``W``/``W_dq`` trace link.

    ``V_d = V_x u - V_y v`` and ``V_q = V_x v + V_y u`` with each bilinear product
    replaced by a McCormick proxy.
    """
    gb = case.gen_bus if gen_bus is None else np.asarray(gen_bus)
    ng, nb = case.n_gen, case.n_bus
    if gb is None or len(gb) != ng:
        raise ProgramBuildError("generator-bus map missing or of wrong length")
    if not {"V", "W", "V_dq", "W_dq"} <= set(prog.variables):
        raise ProgramBuildError("Park relaxation needs the OPF and stator fragments")
    bounds = bounds or ParkBounds.from_case(case)
    V, W, Vdq, Wdq = prog["V"], prog["W"], prog["V_dq"], prog["W_dq"]
    u = prog.var("u", ng)
    v = prog.var("v", ng)
    Uu = prog.var("U_u", ng)
    Uv = prog.var("U_v", ng)
    prox = {k: prog.var(f"mc_{k}", ng) for k in ("xu", "yv", "xv", "yu")}
    Vx, Vy = V[gb], V[nb + gb]
    prog.add("park_boxes", [Vx >= bounds.vx[0], Vx <= bounds.vx[1],
                            Vy >= bounds.vy[0], Vy <= bounds.vy[1],
                            u >= bounds.u[0], u <= bounds.u[1],
                            v >= bounds.v[0], v <= bounds.v[1]])
    cons = []
    for key, (a, ab, b, bb) in {"xu": (Vx, bounds.vx, u, bounds.u),
                                "yv": (Vy, bounds.vy, v, bounds.v),
                                "xv": (Vx, bounds.vx, v, bounds.v),
                                "yu": (Vy, bounds.vy, u, bounds.u)}.items():
        cons += mccormick_envelope(ab, bb).inequalities(a, b, prox[key])
    prog.add("park_mccormick", cons)
    prog.add("park", [Vdq[:ng] == prox["xu"] - prox["yv"], Vdq[ng:] == prox["xv"] + prox["yu"]])
    prog.add("trig", [Uu + Uv == 1, Uu >= cp.square(u), Uv >= cp.square(v)])
    i = np.arange(ng)
    prog.add("dq_magnitude", [Wdq[i, i] + Wdq[i + ng, i + ng] == W[gb, gb] + W[nb + gb, nb + gb]])
    return prog


def jacobian_coordinates(prog: ConicProgram, case: CaseSystem) -> cp.Expression:
    """The Jacobian coordinates ``p`` as affine expressions of program variables.

    ``E'_q`` and ``E'_d`` follow the equilibrium relations of the transient
    voltages with ``E_f`` held at the base point.
    """
    ng, nb = case.n_gen, case.n_bus
    mp = MachineParams.from_case(case)
    E_f = np.asarray(prog.meta["E_f"])
    V, Vdq = prog["V"], prog["V_dq"]
    Vd, Vq = Vdq[:ng], Vdq[ng:]
    Eq = cp.multiply(1 - mp.xp_d / mp.x_d, Vq) + mp.xp_d * E_f / mp.x_d
    Ed = cp.multiply((mp.x_q - mp.xp_q) / mp.x_q, Vd)
    return cp.hstack([prog["u"], prog["v"], Eq, Ed, V[:nb], V[nb:], Vd, Vq])


def coordinate_audit(jac: JacobianAffine, case: CaseSystem) -> list[dict]:
    """How every Jacobian coordinate enters the program, and which entries depend on it."""
    ng = case.n_gen
    src = {"u": ("u", "McCormick-bounded variable, |u| <= 1; u^2 lifted as U_u"),
           "v": ("v", "McCormick-bounded variable, |v| <= 1; v^2 lifted as U_v"),
           "Eq_p": ("(1 - x'_d/x_d) V_q + x'_d E_f/x_d", "affine in V_dq, E_f fixed at base"),
           "Ed_p": ("(x_q - x'_q) V_d / x_q", "affine in V_dq"),
           "Vx": ("V[k]", "exact"), "Vy": ("V[n_bus + k]", "exact"),
           "Vd": ("V_dq[i]", "exact"), "Vq": ("V_dq[n_gen + i]", "exact")}
    rows = []
    nnz = np.diff(jac.sens.indptr)
    for k, name in enumerate(jac.coord_names):
        base = name.split("[")[0]
        expr, note = src[base]
        rows.append({"coordinate": name, "program_expression": expr, "treatment": note,
                     "jacobian_entries": int(nnz[k])})
    assert len(rows) == 6 * ng + 2 * case.n_bus
    return rows


def jacobian_expression(prog: ConicProgram, jac: JacobianAffine, case: CaseSystem) -> cp.Expression:
    p = jacobian_coordinates(prog, case)
    if p.shape[0] != jac.sens.shape[1]:
        raise ProgramBuildError(
            f"Jacobian has {jac.sens.shape[1]} coordinates, program provides {p.shape[0]}")
    N = jac.size
    return jac.J0 + cp.reshape(jac.sens @ p, (N, N), order="C")


def build_bmi_blocks(prog: ConicProgram, jac: JacobianAffine, mode: str = "penalty-only",
                     eps: float = 1e-6, J=None) -> ConicProgram:
    """Lyapunov matrix ``Z = [[P, 0], [R, Q]]`` and, in constraint modes, the
    lifted BMI blocks ``L1 = [[M, (J+Z)^T], [J+Z, I]]`` and
    ``L2 = [[M, Z^T, J^T], [Z, I, 0], [J, 0, I]]``.

    ``J`` is either a numeric matrix or an affine cvxpy expression of the
    program variables.  With a numeric ``J`` the BMI is linear in ``Z`` and the
    exact condition ``J^T Z + Z^T J <= 0`` is added as well.
    """
    if mode not in MODES:
        raise ProgramBuildError(f"unknown stability mode {mode!r}")
    if J is None:
        J = prog.expressions["J"]
    N, n = jac.size, jac.n
    if tuple(J.shape) != (N, N):
        raise ProgramBuildError(f"J is {J.shape}, expected {(N, N)}")
    m = N - n
    P = prog.var("Z_P", (n, n), symmetric=True)
    R = prog.var("Z_R", (m, n))
    Q = prog.var("Z_Q", (m, m))
    Z = cp.bmat([[P, np.zeros((n, m))], [R, Q]])
    prog.expressions["Z"] = Z
    prog.expressions["J"] = J
    prog.add("lyapunov_P", [P - eps * np.eye(n) >> 0])
    prog.meta.update(mode=mode, eps=eps, n_dyn=n, n_alg=m)
    if mode == "penalty-only":
        return prog
    M = prog.var("M", (N, N), symmetric=True)
    I = np.eye(N)
    O = np.zeros((N, N))
    JZ = J + Z
    L1 = cp.bmat([[M, JZ.T], [JZ, I]])
    L2 = cp.bmat([[M, Z.T, J.T], [Z, I, O], [J, O, I]])
    prog.expressions["L2"] = L2
    prog.add("bmi_L1", [_sym(L1) >> 0])
    prog.add("bmi_L2", [_sym(L2) >> 0])
    if isinstance(J, np.ndarray) or (isinstance(J, cp.Expression) and J.is_constant()):
        Jc = J if isinstance(J, np.ndarray) else J.value
        F = Jc.T @ Z + Z.T @ Jc
        prog.add("bmi_exact", [_sym(F) << 0])
    return prog


def _sym(X):
    # cvxpy's PSD constraint wants a symmetric expression; these are symmetric by construction
    return 0.5 * (X + X.T)


@dataclass(frozen=True)
class BasePoint:
    """Known operating point the penalties pull towards."""

    V: np.ndarray
    V_dq: np.ndarray
    u: np.ndarray
    v: np.ndarray
    E_f: np.ndarray


@dataclass
class PenaltyTerms:
    h1: cp.Expression | None
    h2: cp.Expression
    h3: cp.Expression
    h4: cp.Expression
    h5: cp.Expression

    def as_tuple(self):
        return self.h1, self.h2, self.h3, self.h4, self.h5


def build_penalties(prog: ConicProgram, base: BasePoint | None) -> PenaltyTerms:
    """``h1 = ||vec(Z + J)||`` and the lifted distance surrogates ``h2 .. h5``."""
    if base is None:
        raise ProgramBuildError("penalties need a base solution")
    V, W = prog["V"], prog["W"]
    Vdq, Wdq = prog["V_dq"], prog["W_dq"]
    Vo, Vdqo = np.asarray(base.V), np.asarray(base.V_dq)
    h1 = None
    if "Z" in prog.expressions:
        h1 = cp.norm(cp.vec(prog["Z"] + prog["J"], order="F"), 2)
        prog.expressions["h1"] = h1
    h2 = cp.trace(W) - 2 * Vo @ V + Vo @ Vo
    h3 = cp.trace(Wdq) - 2 * Vdqo @ Vdq + Vdqo @ Vdqo
    uo, vo = np.asarray(base.u), np.asarray(base.v)
    h4 = cp.sum(prog["U_u"] - 2 * cp.multiply(uo, prog["u"]) + uo**2)
    h5 = cp.sum(prog["U_v"] - 2 * cp.multiply(vo, prog["v"]) + vo**2)
    for k, e in zip(("h2", "h3", "h4", "h5"), (h2, h3, h4, h5)):
        prog.expressions[k] = e
    return PenaltyTerms(h1, h2, h3, h4, h5)


def build_zeta_variant(prog: ConicProgram) -> cp.Variable:
    """``zeta I - L2 >= 0``; minimizing ``zeta`` bounds the largest eigenvalue of ``L2``."""
    if "L2" not in prog.expressions:
        raise ProgramBuildError("zeta variant needs the L2 block (constraint or zeta mode)")
    L2 = prog.expressions["L2"]
    zeta = prog.var("zeta")
    prog.add("zeta_epigraph", [zeta * np.eye(L2.shape[0]) - _sym(L2) >> 0])
    return zeta


def assemble_cscopf(case: CaseSystem, mats: NetworkMatrices, jac: JacobianAffine,
                    gamma, mode: str, base: BasePoint, eps: float = 1e-6,
                    bounds: ParkBounds | None = None) -> ConicProgram:
    """Relaxed OPF, stator coupling, Park/trig relaxations, Lyapunov structure and
    the weighted objective ``cost + sum_n gamma_n h_n``.

    In ``zeta`` mode the epigraph variable replaces ``h1`` under weight
    ``gamma_1``.
    """
    gamma = np.asarray(gamma, float)
    if gamma.shape != (5,) or np.any(gamma < 0) or not np.all(np.isfinite(gamma)):
        raise ProgramBuildError("gamma must be five finite non-negative weights")
    if mode not in MODES:
        raise ProgramBuildError(f"unknown stability mode {mode!r}")
    prog = ConicProgram(name=f"cscopf-{case.name}")
    build_relaxed_opf(prog, case, mats)
    build_stator_coupling(prog, case, base.E_f)
    build_park_mccormick(prog, case, bounds)
    J = jacobian_expression(prog, jac, case)
    build_bmi_blocks(prog, jac, mode=mode, eps=eps, J=J)
    pen = build_penalties(prog, base)
    if mode == "zeta":
        prog.add_term("zeta", build_zeta_variant(prog), gamma[0])
    else:
        prog.add_term("h1", pen.h1, gamma[0])
    for k, w, e in zip(("h2", "h3", "h4", "h5"), gamma[1:], pen.as_tuple()[1:]):
        prog.add_term(k, e, w)
    prog.meta["gamma"] = gamma.tolist()
    return prog
