"""Post-processing of solved programs: rank-one recovery, gap metrics and an
independent small-signal verdict.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .case_model import CaseSystem, NetworkMatrices, build_matrices, complex_voltage
from .dae import (DynamicState, MachineParams, init_operating_point, jacobian_affine,
                  reduced_jacobian, spectral_abscissa, transient_voltages)

FORMAT_VERSION = 1


class DegenerateMatrixError(ValueError):
    pass


class SolutionVersionError(ValueError):
    """Solution file written by an incompatible version or for another case."""


@dataclass(frozen=True)
class RankOne:
    vector: np.ndarray
    ratio: float  # lambda_2 / lambda_1
    degenerate: bool

    @property
    def percent(self) -> float:
        return 100.0 * self.ratio


def rank_one_decompose(W, ref: int = 0, degenerate_ratio: float = 0.5) -> RankOne:
    """Leading-eigenvector approximation ``W ~ w w^T`` with ``w[ref] >= 0``.

    ``ratio = lambda_2 / lambda_1``; a ratio above ``degenerate_ratio`` marks
    the leading direction as ambiguous.
    """
    W = np.asarray(W, float)
    lam, U = np.linalg.eigh(0.5 * (W + W.T))
    if lam[-1] <= 0:
        raise DegenerateMatrixError("largest eigenvalue is not positive")
    w = np.sqrt(lam[-1]) * U[:, -1]
    if w[ref] < 0 or (w[ref] == 0 and w[np.argmax(np.abs(w))] < 0):
        w = -w
    ratio = max(lam[-2], 0.0) / lam[-1] if lam.size > 1 else 0.0
    return RankOne(w, float(ratio), bool(ratio > degenerate_ratio))


@dataclass
class SolutionBundle:
    """Named solution values plus their rank-one decompositions."""

    kind: str  # "opf" or "scopf"
    values: dict[str, np.ndarray]
    objective: float
    cost: float
    E_f: np.ndarray | None = None
    meta: dict = field(default_factory=dict)
    V_w: np.ndarray | None = None
    V_dq_w: np.ndarray | None = None
    eps_w: float = 0.0
    eps_w_dq: float | None = None

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        return self.values.get(key, default)

    @property
    def P_g(self) -> np.ndarray:
        return self.values["P_g"]

    @property
    def Q_g(self) -> np.ndarray:
        return self.values["Q_g"]

    @classmethod
    def from_raw(cls, kind: str, raw, case: CaseSystem, E_f=None, meta=None) -> "SolutionBundle":
        v = dict(raw.values)
        if {"Z_P", "Z_R", "Z_Q"} <= set(v):
            P, R, Q = v["Z_P"], v["Z_R"], v["Z_Q"]
            v["Z"] = np.block([[P, np.zeros((P.shape[0], Q.shape[1]))], [R, Q]])
        b = cls(kind=kind, values=v, objective=raw.objective,
                cost=case.generation_cost(v["P_g"]),
                E_f=None if E_f is None else np.asarray(E_f, float), meta=dict(meta or {}))
        b.decompose(case)
        return b

    def decompose(self, case: CaseSystem) -> None:
        r = rank_one_decompose(self.values["W"], ref=case.slack)
        self.V_w, self.eps_w = r.vector, r.percent
        if "W_dq" in self.values:
            # V_q of the first machine carries the sign convention
            r = rank_one_decompose(self.values["W_dq"], ref=case.n_gen)
            self.V_dq_w, self.eps_w_dq = r.vector, r.percent

    def loss(self, case: CaseSystem) -> float:
        """Real power loss in MW."""
        return float((self.P_g.sum() - case.P_d.sum()) * case.base_mva)

    def to_dict(self, case: CaseSystem) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "package_version": __version__,
            "case": case.name,
            "case_fingerprint": case.fingerprint(),
            "kind": self.kind,
            "objective": self.objective,
            "cost": self.cost,
            "E_f": None if self.E_f is None else self.E_f.tolist(),
            "meta": self.meta,
            "values": {k: np.asarray(x).tolist() for k, x in self.values.items() if k != "Z"},
        }

    @classmethod
    def from_dict(cls, data: dict, case: CaseSystem) -> "SolutionBundle":
        if data.get("format_version") != FORMAT_VERSION:
            raise SolutionVersionError(
                f"solution format {data.get('format_version')!r}, expected {FORMAT_VERSION}")
        if data.get("case_fingerprint") != case.fingerprint():
            raise SolutionVersionError("solution was produced for a different case")
        try:
            values = {k: np.asarray(x, float) for k, x in data["values"].items()}
            if {"Z_P", "Z_R", "Z_Q"} <= set(values):
                P, R, Q = values["Z_P"], values["Z_R"], values["Z_Q"]
                values["Z"] = np.block([[P, np.zeros((P.shape[0], Q.shape[1]))], [R, Q]])
            b = cls(kind=data["kind"], values=values, objective=float(data["objective"]),
                    cost=float(data["cost"]),
                    E_f=None if data.get("E_f") is None else np.asarray(data["E_f"], float),
                    meta=data.get("meta", {}))
        except (KeyError, TypeError, ValueError) as exc:
            raise SolutionVersionError(f"malformed solution file: {exc}") from None
        b.decompose(case)
        return b

    def save(self, path, case: CaseSystem) -> None:
        Path(path).write_text(json.dumps(self.to_dict(case)))

    @classmethod
    def load(cls, path, case: CaseSystem) -> "SolutionBundle":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise SolutionVersionError(f"{path}: not a solution file ({exc})") from None
        return cls.from_dict(data, case)


@dataclass(frozen=True)
class StabilityCheck:
    sigma_max: float
    sigma0_max: float
    gap: float
    n_rhp: int
    n_marginal: int
    sigma_reinit: float
    n_rhp_reinit: int
    eigenvalues: np.ndarray = field(repr=False, compare=False, default=None)

    @property
    def verdict(self) -> str:
        """``stable`` only when the program point, its decomposition and the
        re-initialized equilibrium all have every eigenvalue in the open left
        half-plane.
        """
        sig = (self.sigma_max, self.sigma0_max, self.sigma_reinit)
        if self.n_rhp or self.n_rhp_reinit or any(s > 0 for s in sig):
            return "unstable"
        if self.n_marginal or any(s >= 0 for s in sig):
            return "marginal"
        return "stable"


def _state(case: CaseSystem, E_f, Vxy, Vdq, u, v) -> DynamicState:
    ng, nb = case.n_gen, case.n_bus
    mp = MachineParams.from_case(case)
    Vd, Vq = Vdq[:ng], Vdq[ng:]
    Eq, Ed = transient_voltages(mp, E_f, Vd, Vq)
    return DynamicState(delta=np.arctan2(u, v), omega=np.zeros(ng), Eq_p=Eq, Ed_p=Ed, E_f=E_f,
                        Vx=Vxy[:nb], Vy=Vxy[nb:], Vd=Vd, Vq=Vq, P_m=np.zeros(ng))


def coords_of(case: CaseSystem, E_f, Vxy, Vdq, u, v) -> np.ndarray:
    """Jacobian coordinates ``p`` for possibly inconsistent program values.

    ``u`` and ``v`` are used as given (not renormalised), matching how the
    program evaluates ``J``.
    """
    s = _state(case, np.asarray(E_f), np.asarray(Vxy), np.asarray(Vdq), u, v)
    return np.concatenate([u, v, s.Eq_p, s.Ed_p, s.Vx, s.Vy, s.Vd, s.Vq])


def spectrum_at(case: CaseSystem, p: np.ndarray, mats: NetworkMatrices | None = None, jac=None):
    jac = jac or jacobian_affine(case, mats).reference_reduced(case.reference_gen, case.n_gen)
    J = jac.evaluate(p)
    return spectral_abscissa(reduced_jacobian(J, jac.n)), J


def verify_stability(case: CaseSystem, sol: SolutionBundle,
                     mats: NetworkMatrices | None = None) -> StabilityCheck:
    """Spectral abscissa at the program point, at its rank-one decomposition and
    at the equilibrium re-initialized from ``(V^w, P_g, Q_g)``.
    """
    mats = mats or build_matrices(case)
    jac = jacobian_affine(case, mats).reference_reduced(case.reference_gen, case.n_gen)
    Vw = sol.V_w
    re = init_operating_point(case, complex_voltage(Vw), sol.P_g, sol.Q_g)
    spec_re, _ = spectrum_at(case, re.coords, jac=jac)
    if "V_dq" in sol.values and sol.E_f is not None:
        u, v = sol["u"], sol["v"]
        spec, _ = spectrum_at(case, coords_of(case, sol.E_f, sol["V"], sol["V_dq"], u, v), jac=jac)
        u0 = np.sign(u) * np.sqrt(np.maximum(sol["U_u"], 0))
        v0 = np.sign(v) * np.sqrt(np.maximum(sol["U_v"], 0))
        spec0, _ = spectrum_at(case, coords_of(case, sol.E_f, Vw, sol.V_dq_w, u0, v0), jac=jac)
    else:
        # plain OPF has no machine variables: both program routes use the equilibrium
        spec = spec0 = spec_re
    return StabilityCheck(spec.sigma_max, spec0.sigma_max, abs(spec.sigma_max - spec0.sigma_max),
                          spec.n_rhp, spec.n_marginal, spec_re.sigma_max, spec_re.n_rhp,
                          spec.eigenvalues)


def _mse(x) -> float:
    x = np.asarray(x, float)
    return float(np.mean(x**2)) if x.size else 0.0


def park_residual(case: CaseSystem, Vxy, Vdq, u, v) -> np.ndarray:
    ng, nb = case.n_gen, case.n_bus
    gb = case.gen_bus
    x, y = np.asarray(Vxy)[gb], np.asarray(Vxy)[nb + gb]
    return np.concatenate([Vdq[:ng] - (x * u - y * v), Vdq[ng:] - (x * v + y * u)])


@dataclass
class ErrorReport:
    cost: float
    loss_mw: float
    delta_p: float
    delta_loss_mw: float
    eps_w: float
    eps_w_dq: float | None
    eps_V: float
    eps_Vdq: float | None
    eps_p: float | None
    eps_p_decomposed: float | None
    eps_uv: float | None
    sigma_max: float | None = None
    sigma0_max: float | None = None
    gap: float | None = None
    n_rhp: int | None = None
    sigma_reinit: float | None = None
    verdict: str | None = None
    timing: dict = field(default_factory=dict)

    COLUMNS = ("sigma_max", "delta_p", "eps_w", "eps_w_dq", "eps_p", "eps_uv", "delta_loss_mw",
               "sigma0_max", "gap", "cost", "loss_mw", "eps_V", "eps_Vdq", "eps_p_decomposed",
               "n_rhp", "sigma_reinit", "verdict")

    def row(self) -> dict:
        d = asdict(self)
        return {k: d[k] for k in self.COLUMNS}

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=self.COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerow(self.row())
        return buf.getvalue()


def compute_error_report(sol: SolutionBundle, base: SolutionBundle, case: CaseSystem,
                         stability: StabilityCheck | None = None) -> ErrorReport:
    """Relaxation-gap metrics of ``sol`` and its cost/loss change against ``base``.

    Magnitude errors compare the lifted magnitudes ``sqrt(W_kk + W_ll)`` with
    those of the decomposed vector; Park and trigonometric errors use the
    program's vector variables (``eps_p_decomposed`` uses ``V^w``, ``V_dq^w``).
    """
    nb, ng = case.n_bus, case.n_gen
    W = sol["W"]
    d = np.diag(W)
    lifted = np.sqrt(np.maximum(d[:nb] + d[nb:], 0))
    Vw = sol.V_w
    eps_V = _mse(lifted - np.hypot(Vw[:nb], Vw[nb:]))
    eps_Vdq = eps_p = eps_pw = eps_uv = None
    if "W_dq" in sol.values:
        dq = np.diag(sol["W_dq"])
        Vq_w = sol.V_dq_w
        eps_Vdq = _mse(np.sqrt(np.maximum(dq[:ng] + dq[ng:], 0)) - np.hypot(Vq_w[:ng], Vq_w[ng:]))
        u, v = sol["u"], sol["v"]
        eps_p = _mse(park_residual(case, sol["V"], sol["V_dq"], u, v))
        eps_pw = _mse(park_residual(case, Vw, Vq_w, u, v))
        eps_uv = _mse(u**2 + v**2 - 1)
    rep = ErrorReport(
        cost=sol.cost, loss_mw=sol.loss(case),
        delta_p=100.0 * (sol.cost - base.cost) / base.cost,
        delta_loss_mw=sol.loss(case) - base.loss(case),
        eps_w=sol.eps_w, eps_w_dq=sol.eps_w_dq, eps_V=eps_V, eps_Vdq=eps_Vdq,
        eps_p=eps_p, eps_p_decomposed=eps_pw, eps_uv=eps_uv)
    if stability is not None:
        rep.sigma_max = stability.sigma_max
        rep.sigma0_max = stability.sigma0_max
        rep.gap = stability.gap
        rep.n_rhp = stability.n_rhp
        rep.sigma_reinit = stability.sigma_reinit
        rep.verdict = stability.verdict
    return rep
