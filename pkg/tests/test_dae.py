import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import fsolve

from cscopf.case_model import build_matrices, case_from_dict
from cscopf.dae import (OMEGA_B, DynamicState, InitializationError, Layout, MachineParams,
                        SingularAlgebraicError, _jacobian_at, build_jacobian, dae_residual,
                        export_matrix, generalized_eigenvalues, init_operating_point,
                        jacobian_affine, reduced_jacobian, small_signal, spectral_abscissa,
                        speed_in_rad_per_s, stator_residual)

from conftest import small_case


def residual_at(case, state, mats, z):
    return dae_residual(case, state.with_z(z), mats)


def fd_jacobian(case, state, mats, h=1e-6):
    z = state.z
    J = np.zeros((z.size, z.size))
    for k in range(z.size):
        e = np.zeros_like(z)
        e[k] = h
        J[:, k] = (residual_at(case, state, mats, z + e) - residual_at(case, state, mats, z - e)) / (2 * h)
    return J


def match_spectra(a, b, rtol=1e-8):
    """Largest distance from an eigenvalue of ``a`` to the nearest one in ``b``, relative."""
    a, b = np.asarray(a), np.asarray(b)
    assert a.size == b.size
    d = np.abs(a[:, None] - b[None, :]).min(axis=1) / np.maximum(1.0, np.abs(a))
    return d.max()


@pytest.mark.parametrize("sys_", ["9", "39"])
def test_jacobian_matches_finite_differences(sys_, request):
    case = request.getfixturevalue(f"case{sys_}")
    mats = request.getfixturevalue(f"mats{sys_}")
    st_ = request.getfixturevalue(f"eq{sys_}")
    _, J = build_jacobian(st_, case, mats)
    Jfd = fd_jacobian(case, st_, mats)
    assert np.linalg.norm(J - Jfd) / np.linalg.norm(J) <= 1e-6


@pytest.mark.parametrize("sys_", ["9", "39"])
def test_second_order_remainder(sys_, request, rng):
    case = request.getfixturevalue(f"case{sys_}")
    mats = request.getfixturevalue(f"mats{sys_}")
    st_ = request.getfixturevalue(f"eq{sys_}")
    _, J = build_jacobian(st_, case, mats)
    z = st_.z
    F0 = residual_at(case, st_, mats, z)
    ratios = []
    for _ in range(20):
        dz = rng.normal(size=z.size)
        for scale in (1e-2, 1e-3):
            d = scale * dz / np.linalg.norm(dz)
            r = np.linalg.norm(J @ d - (residual_at(case, st_, mats, z + d) - F0))
            ratios.append(r / np.linalg.norm(d) ** 2)
    # quadratic remainder: bounded ratio, the same at both step sizes
    assert max(ratios) < 1e3
    r = np.array(ratios).reshape(20, 2)
    assert np.all(np.abs(r[:, 0] - r[:, 1]) <= 0.1 * r.max(axis=1) + 1e-6)


def test_sizes_and_descriptor(case9, eq9, mats9):
    jac, J = build_jacobian(eq9, case9, mats9)
    assert J.shape == (36, 36)
    assert jac.n == 12 and jac.m == 24
    E = jac.E
    assert np.array_equal(E @ E, E) and np.trace(E) == 12


def test_affine_in_coordinates(case9, mats9, rng):
    jac = jacobian_affine(case9, mats9)
    K = jac.sens.shape[1]
    for _ in range(10):
        p, dp = rng.normal(size=K), rng.normal(size=K)
        direct = _jacobian_at(case9, mats9, p + dp) - _jacobian_at(case9, mats9, p)
        lin = sum(dp[k] * jac.sensitivity(k) for k in range(K))
        assert np.max(np.abs(direct - lin)) <= 1e-12
        assert np.max(np.abs(jac.evaluate(p) - _jacobian_at(case9, mats9, p))) <= 1e-12


def test_zero_coupling_gives_A(case9, eq9, mats9):
    jac, J = build_jacobian(eq9, case9, mats9)
    A, B, C, D = jac.blocks(J)
    # C is only fed by delta, E'_q, E'_d through the machine rows
    L = Layout(case9.n_gen, case9.n_bus)
    omega_cols = [L.x("omega", i) for i in range(case9.n_gen)]
    assert np.all(C[:, omega_cols] == 0)
    Jc = J.copy()
    Jc[jac.n:, :jac.n] = 0
    assert np.array_equal(reduced_jacobian(Jc, jac.n), A)


def test_singular_algebraic_block():
    J = np.zeros((4, 4))
    J[:2, :2] = -np.eye(2)
    with pytest.raises(SingularAlgebraicError):
        reduced_jacobian(J, 2)


def test_reduced_matches_generalized_random(rng):
    for _ in range(20):
        n, m = 5, 7
        J = rng.normal(size=(n + m, n + m))
        J[n:, n:] += 5 * np.eye(m)
        lam = np.linalg.eigvals(reduced_jacobian(J, n))
        assert match_spectra(lam, generalized_eigenvalues(J, n)) <= 1e-8


@pytest.mark.parametrize("sys_", ["9", "39"])
def test_reduced_matches_generalized_cases(sys_, request):
    case = request.getfixturevalue(f"case{sys_}")
    mats = request.getfixturevalue(f"mats{sys_}")
    st_ = request.getfixturevalue(f"eq{sys_}")
    jac = jacobian_affine(case, mats).reference_reduced(case.reference_gen, case.n_gen)
    J = jac.evaluate(st_.coords)
    lam = np.linalg.eigvals(reduced_jacobian(J, jac.n))
    assert match_spectra(lam, generalized_eigenvalues(J, jac.n)) <= 1e-8


def test_reference_reduction_removes_zero_mode(case9, eq9, mats9):
    full = jacobian_affine(case9, mats9)
    lam_full = np.linalg.eigvals(reduced_jacobian(full.evaluate(eq9.coords), full.n))
    red = full.reference_reduced(case9.reference_gen, case9.n_gen)
    lam_red = np.linalg.eigvals(reduced_jacobian(red.evaluate(eq9.coords), red.n))
    k = np.argmin(np.abs(lam_full))
    assert abs(lam_full[k]) < 1e-8
    assert np.min(np.abs(lam_red)) > 1e-6
    assert match_spectra(lam_red, np.delete(lam_full, k), rtol=1e-7) <= 1e-7
    assert red.size == 35 and red.n == 11


def test_speed_scaling_keeps_spectrum(case9, eq9, mats9):
    jac = jacobian_affine(case9, mats9).reference_reduced(case9.reference_gen, case9.n_gen)
    sc = jac.scaled(speed_in_rad_per_s(jac))
    a = np.linalg.eigvals(reduced_jacobian(jac.evaluate(eq9.coords), jac.n))
    b = np.linalg.eigvals(reduced_jacobian(sc.evaluate(eq9.coords), sc.n))
    assert match_spectra(a, b) <= 1e-8
    J = sc.evaluate(eq9.coords)
    # relative angle of machine 2: d/dt = omega_2 - omega_ref, both in rad/s
    assert J[0, case9.n_gen - 1] == pytest.approx(-1.0)
    assert J[0, case9.n_gen] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        jac.scaled(-np.ones(jac.size))


def test_spectral_abscissa_examples():
    s = spectral_abscissa(np.diag([-1.0, -2.0]))
    assert s.sigma_max == -1.0 and s.n_rhp == 0 and s.verdict == "stable"
    s = spectral_abscissa(np.array([[0.0, 1.0], [-1.0, 0.0]]))
    assert s.sigma_max == pytest.approx(0.0, abs=1e-15)
    assert s.n_rhp == 0 and s.n_marginal == 2 and s.verdict == "marginal"
    s = spectral_abscissa(np.diag([0.5, 0.2, -3.0]))
    assert s.n_rhp == 2 and s.verdict == "unstable"
    assert spectral_abscissa(np.zeros((0, 0))).sigma_max == -np.inf


def test_no_load_machine():
    case = case_from_dict(small_case())
    st_ = init_operating_point(case, np.array([1.0, 1.0]), [0.0], [0.0])
    assert st_.delta[0] == pytest.approx(0.0, abs=1e-15)
    assert st_.E_f[0] == pytest.approx(1.0)
    assert st_.omega[0] == 0.0


def _stator_oracle(case, V, P, Q):
    """Solve the stator equations for (delta, E_f) by root finding, machine by machine."""
    mp = MachineParams.from_case(case)
    out = []
    for i, k in enumerate(case.gen_bus):
        x, y = V[k].real, V[k].imag

        def res(z):
            d, ef = z
            vd = x * np.sin(d) - y * np.cos(d)
            vq = x * np.cos(d) + y * np.sin(d)
            return [P[i] - ef * vd / mp.x_d[i] - (mp.x_d[i] - mp.x_q[i]) / (mp.x_d[i] * mp.x_q[i]) * vd * vq,
                    Q[i] - ef * vq / mp.x_d[i] + vd**2 / mp.x_q[i] + vq**2 / mp.x_d[i]]

        d0 = np.angle(V[k]) + 0.3
        out.append(fsolve(res, [d0, 1.5], xtol=1e-13))
    return np.array(out)


@pytest.mark.parametrize("sys_", ["9", "39"])
def test_equilibrium_against_root_finding(sys_, request):
    case = request.getfixturevalue(f"case{sys_}")
    mats = request.getfixturevalue(f"mats{sys_}")
    st_ = request.getfixturevalue(f"eq{sys_}")
    opf = request.getfixturevalue(f"opf{sys_}").bundle
    assert np.max(np.abs(stator_residual(case, st_, opf.P_g, opf.Q_g))) <= 1e-8
    ref = _stator_oracle(case, st_.Vx + 1j * st_.Vy, opf.P_g, opf.Q_g)
    assert np.allclose(np.angle(np.exp(1j * (ref[:, 0] - st_.delta))), 0, atol=1e-8)
    assert np.allclose(ref[:, 1], st_.E_f, atol=1e-8)
    # machine and Park rows of the DAE vanish exactly; network rows equal the
    # injections carried by the relaxation gap, Tr(Y_k (W - w w^T))
    F = dae_residual(case, st_, mats)
    n = 4 * case.n_gen
    assert np.max(np.abs(F[:n])) <= 1e-8
    assert np.max(np.abs(F[n + 2 * case.n_bus:])) <= 1e-12
    gap = opf["W"] - np.outer(opf.V_w, opf.V_w)
    oracle = np.array([np.sum(Y * gap) for Y in list(mats.Yk) + list(mats.Yk_bar)])
    assert np.allclose(F[n:n + 2 * case.n_bus], oracle, atol=1e-9)


def test_stator_first_order_change(case9, eq9, opf9):
    b = opf9.bundle
    mp = MachineParams.from_case(case9)
    r0 = stator_residual(case9, eq9, b.P_g, b.Q_g)
    h = 0.01
    Vd = eq9.Vd.copy()
    Vd[1] += h
    r1 = stator_residual(case9, dataclasses.replace(eq9, Vd=Vd), b.P_g, b.Q_g)
    i = 1
    grad_a = -eq9.E_f[i] / mp.x_d[i] - (mp.x_d[i] - mp.x_q[i]) / (mp.x_d[i] * mp.x_q[i]) * eq9.Vq[i]
    grad_b = 2 * eq9.Vd[i] / mp.x_q[i]
    da, db = r1[i] - r0[i]
    assert da == pytest.approx(grad_a * h, rel=0.05)
    assert db == pytest.approx(grad_b * h + h**2 / mp.x_q[i], rel=1e-9)
    assert np.array_equal(r1[[0, 2]], r0[[0, 2]])


def test_round_rotor_residual_exact():
    d = small_case()
    d["generators"][0].update(x_d=0.8, x_q=0.8, x_q_prime=0.2)
    case = case_from_dict(d)
    Ef, Vd, Vq = 1.6, 0.25, 0.9
    st_ = DynamicState(delta=np.zeros(1), omega=np.zeros(1), Eq_p=np.zeros(1), Ed_p=np.zeros(1),
                       E_f=np.array([Ef]), Vx=np.zeros(2), Vy=np.zeros(2), Vd=np.array([Vd]),
                       Vq=np.array([Vq]), P_m=np.zeros(1))
    r = stator_residual(case, st_, [Ef * Vd / 0.8], [0.0])
    assert r[0, 0] == 0.0


def test_initialization_errors():
    case = case_from_dict(small_case())
    with pytest.raises(InitializationError, match="above"):
        init_operating_point(case, np.array([1.0, 1.0]), [1.5], [0.5], ef_max=1.5)
    with pytest.raises(InitializationError, match="non-positive"):
        init_operating_point(case, np.array([1.0, 1.0]), [0.0], [-1.5])
    with pytest.raises(InitializationError):
        init_operating_point(case, np.array([0.0, 1.0]), [0.5], [0.0])


def test_small_signal_consistent(case9, eq9, mats9):
    spec, Jr = small_signal(case9, eq9, mats9)
    assert Jr.shape == (11, 11)
    assert spec.sigma_max == pytest.approx(np.max(np.linalg.eigvals(Jr).real))


def test_export_matrix(tmp_path):
    M = np.arange(6.0).reshape(2, 3) / 7
    export_matrix(M, tmp_path / "m.txt")
    assert np.array_equal(np.loadtxt(tmp_path / "m.txt"), M)


def test_swing_row_constant(case9, mats9):
    J0 = jacobian_affine(case9, mats9).J0
    assert J0[0, case9.n_gen] == OMEGA_B


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 1.5), st.floats(-0.5, 0.5), st.floats(0.95, 1.05), st.floats(-0.5, 0.5))
def test_init_residuals_property(P, Q, mag, ang):
    case = case_from_dict(small_case())
    V = np.array([mag * np.exp(1j * ang), 1.0])
    try:
        s = init_operating_point(case, V, [P], [Q])
    except InitializationError:
        return
    assert np.max(np.abs(stator_residual(case, s, [P], [Q]))) <= 1e-10
    F = dae_residual(case, s, build_matrices(case))
    # machine rows and Park rows are at equilibrium by construction
    assert np.max(np.abs(F[:4])) <= 1e-10
    assert np.max(np.abs(F[4 + 4:])) <= 1e-12
