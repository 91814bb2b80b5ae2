import numpy as np
import pytest

from cscopf.case_model import add_transformer_resistance, build_matrices, case_from_dict, resolve_case
from cscopf.workflow import base_point, solve_relaxed_opf


def small_case(**over):
    """Two buses, one line, one generator; keyword overrides patch the dict."""
    d = {
        "name": "two", "base_mva": 100.0,
        "buses": [
            {"id": 1, "type": "slack", "P_d": 0.0, "Q_d": 0.0, "V_min": 0.9, "V_max": 1.1},
            {"id": 2, "type": "PQ", "P_d": 0.5, "Q_d": 0.1, "V_min": 0.9, "V_max": 1.1},
        ],
        "branches": [{"from": 1, "to": 2, "r": 0.0, "x": 0.1}],
        "generators": [{
            "bus": 1, "P_min": 0.0, "P_max": 2.0, "Q_min": -2.0, "Q_max": 2.0,
            "c2": 0.01, "c1": 10.0, "c0": 0.0, "H": 5.0, "D": 2.0, "x_d": 0.9, "x_q": 0.6,
            "x_d_prime": 0.2, "x_q_prime": 0.3, "T_d0_prime": 6.0, "T_q0_prime": 0.5,
        }],
    }
    d.update(over)
    return d


ACCEPTANCE: list[str] = []


def record(criterion: str, ok: bool, detail: str) -> bool:
    """Log one acceptance line; printed again in the terminal summary."""
    line = f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)


@pytest.fixture
def two_bus():
    return case_from_dict(small_case())


@pytest.fixture(scope="session")
def case9():
    return add_transformer_resistance(resolve_case("wscc9"))


@pytest.fixture(scope="session")
def case39():
    return add_transformer_resistance(resolve_case("ne39"))


@pytest.fixture(scope="session")
def mats9(case9):
    return build_matrices(case9)


@pytest.fixture(scope="session")
def mats39(case39):
    return build_matrices(case39)


@pytest.fixture(scope="session")
def opf9(case9, mats9):
    return solve_relaxed_opf(case9, mats=mats9)


@pytest.fixture(scope="session")
def opf39(case39, mats39):
    return solve_relaxed_opf(case39, mats=mats39)


@pytest.fixture(scope="session")
def eq9(case9, opf9):
    return base_point(case9, opf9.bundle)[1]


@pytest.fixture(scope="session")
def eq39(case39, opf39):
    return base_point(case39, opf39.bundle)[1]


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def power_flow(case, P_g, V_set):
    """Polar power flow (slack + PV + PQ) solved with ``fsolve``.

    Returns complex bus voltages and the generator outputs that balance them.
    Only the first generator at each bus is dispatched; ``P_g`` of the slack
    machine is an output.
    """
    from scipy.optimize import fsolve

    from cscopf.case_model import admittance

    Y, _, _ = admittance(case)
    nb = case.n_bus
    gb = case.gen_bus
    s = case.slack
    pq = np.array([k for k in range(nb) if k not in set(gb)], dtype=int)
    ns = np.array([k for k in range(nb) if k != s], dtype=int)
    C = case.gen_incidence
    Pspec = C @ np.where(gb == s, 0.0, P_g) - case.P_d
    mag0 = np.ones(nb)
    mag0[gb] = V_set[gb]

    def voltages(x):
        th = np.zeros(nb)
        th[ns] = x[:ns.size]
        mag = mag0.copy()
        mag[pq] = x[ns.size:]
        return mag * np.exp(1j * th)

    def mismatch(x):
        V = voltages(x)
        S = V * np.conj(Y @ V)
        return np.concatenate([S.real[ns] - Pspec[ns], S.imag[pq] + case.Q_d[pq]])

    x0 = np.concatenate([np.zeros(ns.size), np.ones(pq.size)])
    x = fsolve(mismatch, x0, xtol=1e-14)
    assert np.max(np.abs(mismatch(x))) < 1e-10
    V = voltages(x)
    S = V * np.conj(Y @ V) + case.P_d + 1j * case.Q_d
    P = np.array(P_g, float).copy()
    Q = np.zeros(case.n_gen)
    for i, k in enumerate(gb):
        if k == s:
            P[i] = S[k].real
        Q[i] = S[k].imag
    return V, P, Q


@pytest.fixture(scope="session")
def pf9(case9, opf9):
    b = opf9.bundle
    V_set = np.abs(b.V_w[:case9.n_bus] + 1j * b.V_w[case9.n_bus:])
    return power_flow(case9, b.P_g, V_set)
