import dataclasses
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from cscopf.case_model import (CaseFormatError, CaseValidationError, add_transformer_resistance,
                               admittance, build_matrices, bundled_case, case_from_dict,
                               complex_voltage, load_case, resolve_case, save_case,
                               stack_voltage)

from conftest import small_case


def injections(Y, V):
    S = V * np.conj(Y @ V)
    return S.real, S.imag


def random_voltages(rng, n, k=100):
    mag = rng.uniform(0.8, 1.2, (k, n))
    ang = rng.uniform(-np.pi, np.pi, (k, n))
    return mag * np.exp(1j * ang)


def quad(stack, v):
    return np.einsum("i,kij,j->k", v, stack, v)


@pytest.mark.parametrize("name", ["case9", "case39"])
def test_trace_injection_equivalence(name, request, rng):
    case = request.getfixturevalue(name)
    m = build_matrices(case)
    for V in random_voltages(rng, case.n_bus):
        v = stack_voltage(V)
        P, Q = injections(m.Y, V)
        # Tr{Y_k v v^T} = v^T Y_k v
        assert np.max(np.abs(quad(m.Yk, v) - P)) <= 1e-9
        assert np.max(np.abs(quad(m.Yk_bar, v) - Q)) <= 1e-9


@pytest.mark.parametrize("name", ["case9", "case39"])
def test_flow_equivalence(name, request, rng):
    case = request.getfixturevalue(name)
    m = build_matrices(case)
    for V in random_voltages(rng, case.n_bus, 20):
        v = stack_voltage(V)
        Sf = V[m.branch_from] * np.conj(m.Yf @ V)
        St = V[m.branch_to] * np.conj(m.Yt @ V)
        assert np.allclose(quad(m.Ykl, v) ** 2 + quad(m.Ykl_bar, v) ** 2, np.abs(Sf) ** 2,
                           rtol=0, atol=1e-9)
        assert np.allclose(quad(m.Ylk, v) ** 2 + quad(m.Ylk_bar, v) ** 2, np.abs(St) ** 2,
                           rtol=0, atol=1e-9)


def test_flow_matches_series_formula(two_bus):
    m = build_matrices(two_bus)
    V = np.array([1.0, 0.97 * np.exp(-0.1j)])
    y = 1 / 0.1j
    S = V[0] * np.conj(y * (V[0] - V[1]))
    v = stack_voltage(V)
    assert quad(m.Ykl, v)[0] == pytest.approx(S.real, abs=1e-12)
    assert quad(m.Ykl_bar, v)[0] == pytest.approx(S.imag, abs=1e-12)


def test_matrices_symmetric(case9):
    m = build_matrices(case9)
    for name in ("Yk", "Yk_bar", "Ykl", "Ykl_bar", "Ylk", "Ylk_bar", "Mk"):
        A = getattr(m, name)
        assert np.array_equal(A, np.swapaxes(A, 1, 2)), name


def test_two_bus_admittance(two_bus):
    Y, _, _ = admittance(two_bus)
    assert np.allclose(Y, [[-10j, 10j], [10j, -10j]], atol=1e-12)


def test_shunt_adds_to_diagonal():
    d = small_case()
    base, _, _ = admittance(case_from_dict(d))
    d["buses"][0]["B_s"] = 0.1
    Y, _, _ = admittance(case_from_dict(d))
    assert Y[0, 0] - base[0, 0] == pytest.approx(0.1j)
    assert np.array_equal(Y[1], base[1])


def test_stacked_traces_match_dense(case9, rng):
    m = build_matrices(case9)
    v = rng.normal(size=2 * case9.n_bus)
    W = np.outer(v, v)
    assert np.allclose(m.stacked("Yk") @ W.ravel(order="F"), quad(m.Yk, v), atol=1e-12)


def test_voltage_stacking_round_trip(rng):
    V = rng.normal(size=7) + 1j * rng.normal(size=7)
    assert np.array_equal(complex_voltage(stack_voltage(V)), V)


def test_round_trip_idempotent(case9, tmp_path):
    p1 = tmp_path / "a.json"
    p2 = tmp_path / "b.json"
    save_case(case9, p1)
    again = load_case(p1)
    save_case(again, p2)
    assert again == case9
    assert p1.read_text() == p2.read_text()
    assert again.fingerprint() == case9.fingerprint()


def test_costs_converted_to_pu():
    c = case_from_dict(small_case())
    g = c.generators[0]
    assert g.c2 == pytest.approx(0.01 * 100**2)
    assert g.c1 == pytest.approx(1000.0)
    # 50 MW at 10 $/MWh plus 0.01 * 50^2
    assert c.generation_cost([0.5]) == pytest.approx(525.0)


def test_bundled_cases_load():
    c9 = resolve_case("wscc9")
    c39 = resolve_case(bundled_case("ne39"))
    assert (c9.n_bus, c9.n_gen, len(c9.branches)) == (9, 3, 9)
    assert (c39.n_bus, c39.n_gen, len(c39.branches)) == (39, 10, 46)
    assert c9.reference_gen == 0
    with pytest.raises(FileNotFoundError):
        resolve_case("no-such-case")


@pytest.mark.parametrize("patch, err", [
    (lambda d: d["buses"][1].update(type="slack"), CaseValidationError),
    (lambda d: d["buses"][1].update(id=1), CaseValidationError),
    (lambda d: d["buses"][1].update(V_min=1.2), CaseValidationError),
    (lambda d: d["branches"][0].update(to=7), CaseValidationError),
    (lambda d: d["branches"][0].update(x=0.0), CaseValidationError),
    (lambda d: d["generators"][0].update(bus=9), CaseValidationError),
    (lambda d: d["generators"][0].update(P_min=3.0), CaseValidationError),
    (lambda d: d["generators"][0].update(x_q=0.0), CaseValidationError),
    (lambda d: d["generators"][0].update(c1=-1.0), CaseValidationError),
    (lambda d: d["generators"][0].pop("H"), CaseFormatError),
    (lambda d: d["generators"][0].update(H=-1.0), CaseFormatError),
    (lambda d: d["buses"][0].update(type="swing"), CaseFormatError),
    (lambda d: d["branches"][0].update(colour="red"), CaseFormatError),
])
def test_validation_errors(patch, err):
    d = small_case()
    patch(d)
    with pytest.raises(err):
        case_from_dict(d)


def test_malformed_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(CaseFormatError):
        load_case(p)


def test_transformer_resistance():
    d = small_case()
    d["branches"].append({"from": 1, "to": 2, "r": 0.01, "x": 0.085})
    c = case_from_dict(d)
    out = add_transformer_resistance(c)
    assert (out.branches[0].r, out.branches[0].x) == (1e-5, 0.1)
    assert out.branches[1] == c.branches[1]
    assert add_transformer_resistance(out) == out
    with pytest.raises(ValueError):
        add_transformer_resistance(c, 0.0)


@settings(max_examples=50, deadline=None)
@given(arrays(float, 4, elements=st.floats(-1.5, 1.5)))
def test_two_bus_injection_property(x):
    c = case_from_dict(small_case())
    m = build_matrices(c)
    V = x[:2] + 1j * x[2:]
    P, Q = injections(m.Y, V)
    v = stack_voltage(V)
    assert np.allclose(quad(m.Yk, v), P, atol=1e-9)
    assert np.allclose(quad(m.Yk_bar, v), Q, atol=1e-9)
    assert np.allclose(quad(m.Mk, v), np.abs(V) ** 2, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.5, 1.5), st.floats(0.01, 0.5), st.floats(0.0, 0.05))
def test_tap_and_charging_injection_property(tap, x, b):
    d = small_case()
    d["branches"][0].update(tap=tap, x=x, b_charging=b, r=0.01)
    c = case_from_dict(d)
    m = build_matrices(c)
    V = np.array([1.02, 0.95 * np.exp(-0.2j)])
    P, Q = injections(m.Y, V)
    v = stack_voltage(V)
    assert np.allclose(quad(m.Yk, v), P, atol=1e-9)
    assert np.allclose(quad(m.Yk_bar, v), Q, atol=1e-9)
    # flows at both ends add up to the injections for a single line
    assert quad(m.Ykl, v)[0] == pytest.approx(P[0], abs=1e-9)
    assert quad(m.Ylk, v)[0] == pytest.approx(P[1], abs=1e-9)


def test_to_dict_json_serialisable(case39):
    json.dumps(case39.to_dict())
    assert dataclasses.replace(case39) == case39
