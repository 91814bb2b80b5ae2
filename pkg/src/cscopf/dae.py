"""Structure-preserving DAE of IV-order machines and its small-signal analysis.

Model (per generator ``i`` at bus ``k``, all quantities in pu, time in s)::

    I_d = (E'_q - V_q) / x'_d            I_q = (V_d - E'_d) / x'_q
    P_e = V_d I_d + V_q I_q              Q_e = V_q I_d - V_d I_q

    d(delta)/dt = w_b * omega
    d(omega)/dt = (P_m - P_e - D omega) / (2 H)
    d(E'_q)/dt  = (E_f - E'_q - (x_d - x'_d) I_d) / T'_d0
    d(E'_d)/dt  = (-E'_d + (x_q - x'_q) I_q) / T'_q0

Algebraic equations: active/reactive balance at every bus (constant-power
loads, injections as quadratic forms of ``[V_x; V_y]``) and the Park relations
``V_d = V_x sin(delta) - V_y cos(delta)``, ``V_q = V_x cos(delta) + V_y sin(delta)``.

Ordering: ``x = [delta, omega, E'_q, E'_d]`` (blocks of ``n_gen``) and
``y = [V_x, V_y, V_d, V_q]``.  Writing ``u = sin(delta)``, ``v = cos(delta)``
and using the Park relations at equilibrium, every Jacobian entry is affine in
the operating-point coordinates ``p = [u, v, E'_q, E'_d, V_x, V_y, V_d, V_q]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from .case_model import CaseSystem, NetworkMatrices, build_matrices

OMEGA_B = 2 * np.pi * 60.0
RCOND_MIN = 1e-10


class InitializationError(ValueError):
    """No valid machine steady state for the requested terminal conditions."""


class SingularAlgebraicError(np.linalg.LinAlgError):
    """Algebraic Jacobian block is singular (impasse point)."""


class EigenSolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class MachineParams:
    H: np.ndarray
    D: np.ndarray
    x_d: np.ndarray
    x_q: np.ndarray
    xp_d: np.ndarray
    xp_q: np.ndarray
    T_d0: np.ndarray
    T_q0: np.ndarray

    @classmethod
    def from_case(cls, case: CaseSystem) -> "MachineParams":
        a = case.array
        return cls(H=a("H"), D=a("D"), x_d=a("x_d"), x_q=a("x_q"),
                   xp_d=a("x_d_prime"), xp_q=a("x_q_prime"),
                   T_d0=a("T_d0_prime"), T_q0=a("T_q0_prime"))


@dataclass(frozen=True)
class DynamicState:
    """An operating point of the DAE (equilibrium when built by ``init_operating_point``)."""

    delta: np.ndarray
    omega: np.ndarray
    Eq_p: np.ndarray
    Ed_p: np.ndarray
    E_f: np.ndarray
    Vx: np.ndarray
    Vy: np.ndarray
    Vd: np.ndarray
    Vq: np.ndarray
    P_m: np.ndarray

    @property
    def x(self) -> np.ndarray:
        return np.concatenate([self.delta, self.omega, self.Eq_p, self.Ed_p])

    @property
    def y(self) -> np.ndarray:
        return np.concatenate([self.Vx, self.Vy, self.Vd, self.Vq])

    @property
    def z(self) -> np.ndarray:
        return np.concatenate([self.x, self.y])

    @property
    def coords(self) -> np.ndarray:
        """Operating-point coordinates ``p`` in which the Jacobian is affine."""
        return np.concatenate([np.sin(self.delta), np.cos(self.delta), self.Eq_p,
                               self.Ed_p, self.Vx, self.Vy, self.Vd, self.Vq])

    def with_z(self, z: np.ndarray) -> "DynamicState":
        ng, nb = self.delta.size, self.Vx.size
        parts = np.split(np.asarray(z, float), np.cumsum([ng] * 4 + [nb, nb, ng]))
        return DynamicState(delta=parts[0], omega=parts[1], Eq_p=parts[2], Ed_p=parts[3],
                            E_f=self.E_f, Vx=parts[4], Vy=parts[5], Vd=parts[6],
                            Vq=parts[7], P_m=self.P_m)


def transient_voltages(mp: MachineParams, E_f, Vd, Vq):
    """Equilibrium ``(E'_q, E'_d)`` for given excitation and d-q terminal voltage."""
    Eq_p = Vq + mp.xp_d * (E_f - Vq) / mp.x_d
    Ed_p = (mp.x_q - mp.xp_q) * Vd / mp.x_q
    return Eq_p, Ed_p


def init_operating_point(case: CaseSystem, V, P_g, Q_g, ef_max: float | None = None) -> DynamicState:
    """Machine steady state behind the terminal conditions ``V`` (complex), ``P_g + jQ_g``.

    The rotor sits on the q-axis voltage ``V + j x_q I``; ``E_f`` follows from the
    stator-network relations.  Raises ``InitializationError`` when the required
    excitation is non-positive or above ``ef_max``.
    """
    V = np.asarray(V, dtype=complex)
    P_g = np.asarray(P_g, float)
    Q_g = np.asarray(Q_g, float)
    mp = MachineParams.from_case(case)
    Vt = V[case.gen_bus]
    if np.any(np.abs(Vt) < 1e-6):
        raise InitializationError("zero terminal voltage at a generator bus")
    current = np.conj((P_g + 1j * Q_g) / Vt)
    E_Q = Vt + 1j * mp.x_q * current
    delta = np.angle(E_Q)
    rot = np.exp(-1j * (delta - np.pi / 2))
    vdq = Vt * rot
    idq = current * rot
    Vd, Vq = vdq.real, vdq.imag
    Id = idq.real
    E_f = Vq + mp.x_d * Id
    if np.any(E_f <= 0):
        bad = np.flatnonzero(E_f <= 0).tolist()
        raise InitializationError(f"non-positive field voltage required at generators {bad}")
    if ef_max is not None and np.any(E_f > ef_max):
        bad = np.flatnonzero(E_f > ef_max).tolist()
        raise InitializationError(
            f"generators {bad} need E_f above {ef_max} (beyond pull-out for this excitation bound)")
    Eq_p, Ed_p = transient_voltages(mp, E_f, Vd, Vq)
    return DynamicState(delta=delta, omega=np.zeros_like(delta), Eq_p=Eq_p, Ed_p=Ed_p,
                        E_f=E_f, Vx=V.real.copy(), Vy=V.imag.copy(), Vd=Vd, Vq=Vq,
                        P_m=P_g.copy())


def stator_residual(case: CaseSystem, state: DynamicState, P_g, Q_g) -> np.ndarray:
    """Steady-state stator-network residuals, shape ``(n_gen, 2)``.

    Column 0: ``P - (E_f/x_d) V_d - ((x_d - x_q)/(x_d x_q)) V_d V_q``;
    column 1: ``Q - (E_f/x_d) V_q + V_d^2/x_q + V_q^2/x_d``.
    """
    mp = MachineParams.from_case(case)
    Ef, Vd, Vq = state.E_f, state.Vd, state.Vq
    ra = np.asarray(P_g) - Ef * Vd / mp.x_d - (mp.x_d - mp.x_q) / (mp.x_d * mp.x_q) * Vd * Vq
    rb = np.asarray(Q_g) - Ef * Vq / mp.x_d + Vd**2 / mp.x_q + Vq**2 / mp.x_d
    return np.column_stack([ra, rb])


def dae_residual(case: CaseSystem, state: DynamicState, mats: NetworkMatrices | None = None) -> np.ndarray:
    """Stacked ``[f; g]`` at ``state`` (zero at an equilibrium)."""
    mats = mats or build_matrices(case)
    mp = MachineParams.from_case(case)
    s = state
    Id = (s.Eq_p - s.Vq) / mp.xp_d
    Iq = (s.Vd - s.Ed_p) / mp.xp_q
    Pe = s.Vd * Id + s.Vq * Iq
    Qe = s.Vq * Id - s.Vd * Iq
    f = np.concatenate([
        OMEGA_B * s.omega,
        (s.P_m - Pe - mp.D * s.omega) / (2 * mp.H),
        (s.E_f - s.Eq_p - (mp.x_d - mp.xp_d) * Id) / mp.T_d0,
        (-s.Ed_p + (mp.x_q - mp.xp_q) * Iq) / mp.T_q0,
    ])
    v = np.concatenate([s.Vx, s.Vy])
    P_inj = np.einsum("i,kij,j->k", v, mats.Yk, v)
    Q_inj = np.einsum("i,kij,j->k", v, mats.Yk_bar, v)
    C = case.gen_incidence
    gb = case.gen_bus
    xk, yk = s.Vx[gb], s.Vy[gb]
    g = np.concatenate([
        C @ Pe - case.P_d - P_inj,
        C @ Qe - case.Q_d - Q_inj,
        s.Vd - (xk * np.sin(s.delta) - yk * np.cos(s.delta)),
        s.Vq - (xk * np.cos(s.delta) + yk * np.sin(s.delta)),
    ])
    return np.concatenate([f, g])


@dataclass
class Layout:
    """Index bookkeeping for states, algebraic variables and coordinates."""

    n_gen: int
    n_bus: int

    @property
    def n(self) -> int:
        return 4 * self.n_gen

    @property
    def m(self) -> int:
        return 2 * self.n_bus + 2 * self.n_gen

    def x(self, block: str, i) -> int:
        return {"delta": 0, "omega": 1, "Eq": 2, "Ed": 3}[block] * self.n_gen + i

    def y(self, block: str, i) -> int:
        ng, nb = self.n_gen, self.n_bus
        off = {"Vx": 0, "Vy": nb, "Vd": 2 * nb, "Vq": 2 * nb + ng}[block]
        return self.n + off + i

    def g(self, block: str, i) -> int:
        ng, nb = self.n_gen, self.n_bus
        off = {"P": 0, "Q": nb, "park_d": 2 * nb, "park_q": 2 * nb + ng}[block]
        return self.n + off + i

    def p(self, block: str, i) -> int:
        ng, nb = self.n_gen, self.n_bus
        off = {"u": 0, "v": ng, "Eq": 2 * ng, "Ed": 3 * ng, "Vx": 4 * ng,
               "Vy": 4 * ng + nb, "Vd": 4 * ng + 2 * nb, "Vq": 5 * ng + 2 * nb}[block]
        return off + i

    @property
    def n_coords(self) -> int:
        return 6 * self.n_gen + 2 * self.n_bus


def _jacobian_at(case: CaseSystem, mats: NetworkMatrices, p: np.ndarray) -> np.ndarray:
    """Analytic DAE Jacobian as a function of the coordinates ``p`` (affine in ``p``)."""
    mp = MachineParams.from_case(case)
    L = Layout(case.n_gen, case.n_bus)
    ng, nb = L.n_gen, L.n_bus
    N = L.n + L.m
    J = np.zeros((N, N))

    def blk(name):
        return p[L.p(name, 0): L.p(name, 0) + (nb if name in ("Vx", "Vy") else ng)]

    u, v, Eq, Ed = blk("u"), blk("v"), blk("Eq"), blk("Ed")
    Vx, Vy, Vd, Vq = blk("Vx"), blk("Vy"), blk("Vd"), blk("Vq")
    Id = (Eq - Vq) / mp.xp_d
    Iq = (Vd - Ed) / mp.xp_q
    # partials of P_e and Q_e
    dP = {"Eq": Vd / mp.xp_d, "Ed": -Vq / mp.xp_q,
          "Vd": Id + Vq / mp.xp_q, "Vq": -Vd / mp.xp_d + Iq}
    dQ = {"Eq": Vq / mp.xp_d, "Ed": Vd / mp.xp_q,
          "Vd": -Iq - Vd / mp.xp_q, "Vq": Id - Vq / mp.xp_d}
    gb = case.gen_bus
    for i in range(ng):
        M2 = 2 * mp.H[i]
        J[L.x("delta", i), L.x("omega", i)] = OMEGA_B
        r = L.x("omega", i)
        J[r, L.x("omega", i)] = -mp.D[i] / M2
        J[r, L.x("Eq", i)] = -dP["Eq"][i] / M2
        J[r, L.x("Ed", i)] = -dP["Ed"][i] / M2
        J[r, L.y("Vd", i)] = -dP["Vd"][i] / M2
        J[r, L.y("Vq", i)] = -dP["Vq"][i] / M2
        r = L.x("Eq", i)
        J[r, L.x("Eq", i)] = -(mp.x_d[i] / mp.xp_d[i]) / mp.T_d0[i]
        J[r, L.y("Vq", i)] = ((mp.x_d[i] - mp.xp_d[i]) / mp.xp_d[i]) / mp.T_d0[i]
        r = L.x("Ed", i)
        J[r, L.x("Ed", i)] = -(mp.x_q[i] / mp.xp_q[i]) / mp.T_q0[i]
        J[r, L.y("Vd", i)] = ((mp.x_q[i] - mp.xp_q[i]) / mp.xp_q[i]) / mp.T_q0[i]
        k = gb[i]
        for key, col in (("Eq", L.x("Eq", i)), ("Ed", L.x("Ed", i)),
                         ("Vd", L.y("Vd", i)), ("Vq", L.y("Vq", i))):
            J[L.g("P", k), col] += dP[key][i]
            J[L.g("Q", k), col] += dQ[key][i]
        # Park rows; d/d(delta) uses V_q, V_d from the Park relations themselves
        r = L.g("park_d", i)
        J[r, L.x("delta", i)] = -Vq[i]
        J[r, L.y("Vx", k)] = -u[i]
        J[r, L.y("Vy", k)] = v[i]
        J[r, L.y("Vd", i)] = 1.0
        r = L.g("park_q", i)
        J[r, L.x("delta", i)] = Vd[i]
        J[r, L.y("Vx", k)] = -v[i]
        J[r, L.y("Vy", k)] = -u[i]
        J[r, L.y("Vq", i)] = 1.0
    vv = np.concatenate([Vx, Vy])
    ycols = slice(L.n, L.n + 2 * nb)
    J[L.n: L.n + nb, ycols] = -2 * np.einsum("kij,j->ki", mats.Yk, vv)
    J[L.n + nb: L.n + 2 * nb, ycols] = -2 * np.einsum("kij,j->ki", mats.Yk_bar, vv)
    return J


@dataclass
class JacobianAffine:
    """``J(p) = J0 + sum_k p_k J_k`` with ``n`` dynamic states.

    ``sens`` is a sparse ``(N*N, K)`` matrix whose column ``k`` is ``vec(J_k)``
    (row-major).  ``coord_names`` labels the coordinates ``p``.
    """

    J0: np.ndarray
    sens: sp.csc_matrix
    n: int
    coord_names: list[str]
    state_names: list[str] = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.J0.shape[0]

    @property
    def m(self) -> int:
        return self.size - self.n

    @property
    def E(self) -> np.ndarray:
        return np.diag((np.arange(self.size) < self.n).astype(float))

    def sensitivity(self, k: int) -> np.ndarray:
        return self.sens[:, k].toarray().reshape(self.size, self.size)

    def evaluate(self, p) -> np.ndarray:
        return self.J0 + (self.sens @ np.asarray(p, float)).reshape(self.size, self.size)

    def blocks(self, J: np.ndarray | None = None):
        J = self.J0 if J is None else J
        n = self.n
        return J[:n, :n], J[:n, n:], J[n:, :n], J[n:, n:]

    def scaled(self, d) -> "JacobianAffine":
        """Similarity transform ``S J S^{-1}`` with ``S = diag(d)``.

        Eigenvalues and the existence of a structured Lyapunov certificate are
        unchanged (``Z -> S^{-1} Z S^{-1}`` keeps the block structure for
        diagonal ``S``); only norms of ``J`` change.
        """
        d = np.asarray(d, float)
        if d.shape != (self.size,) or np.any(d <= 0):
            raise ValueError("scaling must be a positive vector of length size")
        ratio = np.outer(d, 1.0 / d)
        J0 = self.J0 * ratio
        sens = sp.csc_matrix(sp.diags(ratio.ravel()) @ self.sens)
        return JacobianAffine(J0=J0, sens=sens, n=self.n, coord_names=self.coord_names,
                              state_names=self.state_names)

    def reference_reduced(self, ref: int, n_gen: int) -> "JacobianAffine":
        """Remove the rotor-angle reference: drop ``delta_ref`` and measure
        the other rotor angles against the reference machine.

        This takes away the zero eigenvalue from the rotational invariance of
        the network and leaves the rest of the spectrum unchanged.  The
        transform is constant, so the result is still affine.
        """
        N = self.size
        d_ref = ref  # delta block starts at 0
        w_ref = n_gen + ref
        keep = np.array([i for i in range(N) if i != d_ref])
        mod = np.zeros((N, N))
        for i in range(n_gen):
            if i != ref:
                mod[i, w_ref] -= OMEGA_B
        J0 = (self.J0 + mod)[np.ix_(keep, keep)]
        flat = (keep[:, None] * N + keep[None, :]).ravel()
        sens = sp.csc_matrix(self.sens.tocsr()[flat, :])
        names = [s for i, s in enumerate(self.state_names) if i != d_ref]
        return JacobianAffine(J0=J0, sens=sens, n=self.n - 1,
                              coord_names=self.coord_names, state_names=names)


def _names(case: CaseSystem) -> tuple[list[str], list[str]]:
    ng, nb = case.n_gen, case.n_bus
    g = lambda pre: [f"{pre}[{i}]" for i in range(ng)]  # noqa: E731
    b = lambda pre: [f"{pre}[{k}]" for k in range(nb)]  # noqa: E731
    states = g("delta") + g("omega") + g("Eq_p") + g("Ed_p") + b("Vx") + b("Vy") + g("Vd") + g("Vq")
    coords = g("u") + g("v") + g("Eq_p") + g("Ed_p") + b("Vx") + b("Vy") + g("Vd") + g("Vq")
    return states, coords


def jacobian_affine(case: CaseSystem, mats: NetworkMatrices | None = None) -> JacobianAffine:
    """Affine representation of the DAE Jacobian over the coordinates ``p``."""
    mats = mats or build_matrices(case)
    L = Layout(case.n_gen, case.n_bus)
    K = L.n_coords
    J0 = _jacobian_at(case, mats, np.zeros(K))
    cols = []
    for k in range(K):
        e = np.zeros(K)
        e[k] = 1.0
        cols.append(sp.csc_matrix((_jacobian_at(case, mats, e) - J0).reshape(-1, 1)))
    sens = sp.hstack(cols, format="csc")
    sens.eliminate_zeros()
    states, coords = _names(case)
    return JacobianAffine(J0=J0, sens=sens, n=L.n, coord_names=coords, state_names=states)


def speed_in_rad_per_s(jac: JacobianAffine) -> np.ndarray:
    """Scaling vector expressing every speed state in rad/s instead of pu."""
    return np.array([OMEGA_B if name.startswith("omega[") else 1.0 for name in jac.state_names])


def build_jacobian(state: DynamicState, case: CaseSystem,
                   mats: NetworkMatrices | None = None) -> tuple[JacobianAffine, np.ndarray]:
    """Affine Jacobian of the case and its value at ``state``."""
    jac = jacobian_affine(case, mats)
    return jac, jac.evaluate(state.coords)


def reduced_jacobian(J: np.ndarray, n: int) -> np.ndarray:
    """Schur complement ``A - B D^{-1} C`` of the algebraic block."""
    A, B, C, D = J[:n, :n], J[:n, n:], J[n:, :n], J[n:, n:]
    if D.size == 0:
        return A.copy()
    if not np.all(np.isfinite(D)) or np.linalg.cond(D) * RCOND_MIN > 1.0:
        raise SingularAlgebraicError("algebraic block D is singular (impasse point)")
    return A - B @ la.solve(D, C)


@dataclass(frozen=True)
class Spectrum:
    sigma_max: float
    n_rhp: int
    n_marginal: int
    eigenvalues: np.ndarray

    @property
    def verdict(self) -> str:
        if self.n_rhp:
            return "unstable"
        return "marginal" if self.n_marginal else "stable"


def spectral_abscissa(M: np.ndarray, tol: float = 1e-9) -> Spectrum:
    """Largest real part over the eigenvalues of ``M`` and right-half-plane counts.

    Eigenvalues with ``|Re| <= tol * max(1, ||M||)`` count as marginal.
    """
    M = np.asarray(M, float)
    if M.size == 0:
        return Spectrum(-np.inf, 0, 0, np.zeros(0, complex))
    try:
        lam = la.eigvals(M)
    except la.LinAlgError as exc:
        raise EigenSolverError(str(exc)) from exc
    if not np.all(np.isfinite(lam)):
        raise EigenSolverError("eigensolver returned non-finite values")
    lam = lam[np.argsort(-lam.real)]
    thr = tol * max(1.0, np.linalg.norm(M, 2))
    n_rhp = int(np.sum(lam.real > thr))
    n_marg = int(np.sum(np.abs(lam.real) <= thr))
    return Spectrum(float(lam[0].real), n_rhp, n_marg, lam)


def generalized_eigenvalues(J: np.ndarray, n: int) -> np.ndarray:
    """Finite eigenvalues of the pencil ``(J, E)``; an independent route to ``eig(J_r)``."""
    E = np.diag((np.arange(J.shape[0]) < n).astype(float))
    alpha, beta = la.eig(J, E, right=False, homogeneous_eigvals=True)
    finite = np.abs(beta) > 1e-12 * np.maximum(1.0, np.abs(alpha))
    return alpha[finite] / beta[finite]


def small_signal(case: CaseSystem, state: DynamicState, mats: NetworkMatrices | None = None,
                 tol: float = 1e-9) -> tuple[Spectrum, np.ndarray]:
    """Spectrum of the angle-reference-reduced system at ``state`` and its ``J_r``."""
    jac = jacobian_affine(case, mats).reference_reduced(case.reference_gen, case.n_gen)
    J = jac.evaluate(state.coords)
    Jr = reduced_jacobian(J, jac.n)
    return spectral_abscissa(Jr, tol), Jr


def export_matrix(M: np.ndarray, path) -> None:
    """Dense text dump (row-major, whitespace separated) for debugging."""
    np.savetxt(path, np.asarray(M), fmt="%.17g")
