"""Test-system data and the lifted network matrices used by the OPF relaxation.

Voltages are handled in the real embedding ``V = [V_x; V_y]`` of length
``2 * n_bus``.  For a bus ``k`` the active/reactive injections are quadratic
forms ``V^T Y_k V`` and ``V^T Ybar_k V``; branch end flows likewise.  All
matrices are symmetric, so ``Tr{Y_k W}`` with ``W = V V^T`` reproduces the
injection exactly.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np
import scipy.sparse as sp

BUS_TYPES = ("slack", "PV", "PQ")

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}

CASE_SCHEMA = {
    "type": "object",
    "required": ["base_mva", "buses", "branches", "generators"],
    "properties": {
        "name": {"type": "string"},
        "base_mva": _POS,
        "buses": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["id", "type", "P_d", "Q_d", "V_min", "V_max"],
                "properties": {
                    "id": {"type": "integer"},
                    "type": {"enum": list(BUS_TYPES)},
                    "P_d": _NUM, "Q_d": _NUM,
                    "G_s": _NUM, "B_s": _NUM,
                    "V_min": _NONNEG, "V_max": _POS,
                },
                "additionalProperties": False,
            },
        },
        "branches": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["from", "to", "r", "x"],
                "properties": {
                    "from": {"type": "integer"}, "to": {"type": "integer"},
                    "r": _NONNEG, "x": _NUM, "b_charging": _NUM,
                    "tap": _POS, "S_max": _NONNEG,
                },
                "additionalProperties": False,
            },
        },
        "generators": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["bus", "P_min", "P_max", "Q_min", "Q_max",
                             "c2", "c1", "c0", "H", "D", "x_d", "x_q",
                             "x_d_prime", "x_q_prime", "T_d0_prime", "T_q0_prime"],
                "properties": {
                    "bus": {"type": "integer"},
                    "P_min": _NUM, "P_max": _NUM, "Q_min": _NUM, "Q_max": _NUM,
                    "c2": _NUM, "c1": _NUM, "c0": _NUM,
                    "H": _POS, "D": _NONNEG,
                    "x_d": _NUM, "x_q": _NUM, "x_d_prime": _POS, "x_q_prime": _POS,
                    "T_d0_prime": _POS, "T_q0_prime": _POS,
                },
                "additionalProperties": False,
            },
        },
    },
}


class CaseFormatError(ValueError):
    """Case file does not match the JSON schema."""


class CaseValidationError(ValueError):
    """Case data violates a physical or structural invariant."""


@dataclass(frozen=True)
class Bus:
    id: int
    type: str
    P_d: float
    Q_d: float
    V_min: float
    V_max: float
    G_s: float = 0.0
    B_s: float = 0.0


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_charging: float = 0.0
    tap: float = 1.0
    S_max: float = 0.0  # 0 means unlimited


@dataclass(frozen=True)
class Generator:
    """Generator limits (pu), cost ($/h with P in pu) and IV-order machine data."""

    bus: int
    P_min: float
    P_max: float
    Q_min: float
    Q_max: float
    c2: float
    c1: float
    c0: float
    H: float
    D: float
    x_d: float
    x_q: float
    x_d_prime: float
    x_q_prime: float
    T_d0_prime: float
    T_q0_prime: float


@dataclass(frozen=True)
class CaseSystem:
    base_mva: float
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...]
    name: str = "case"

    def __post_init__(self):
        _validate(self)

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def n_gen(self) -> int:
        return len(self.generators)

    @property
    def bus_index(self) -> dict[int, int]:
        return {b.id: k for k, b in enumerate(self.buses)}

    @property
    def slack(self) -> int:
        return next(k for k, b in enumerate(self.buses) if b.type == "slack")

    @property
    def gen_bus(self) -> np.ndarray:
        """Bus position (0-based) of every generator."""
        idx = self.bus_index
        return np.array([idx[g.bus] for g in self.generators], dtype=int)

    @property
    def gen_incidence(self) -> np.ndarray:
        """``n_bus x n_gen`` 0/1 matrix mapping generator output to its bus."""
        C = np.zeros((self.n_bus, self.n_gen))
        C[self.gen_bus, np.arange(self.n_gen)] = 1.0
        return C

    @property
    def reference_gen(self) -> int:
        """Generator used as the rotor-angle reference (first one at the slack bus)."""
        gb = self.gen_bus
        at_slack = np.flatnonzero(gb == self.slack)
        return int(at_slack[0]) if at_slack.size else 0

    def array(self, attr: str, of: str = "generators") -> np.ndarray:
        return np.array([getattr(e, attr) for e in getattr(self, of)], dtype=float)

    @property
    def P_d(self) -> np.ndarray:
        return self.array("P_d", "buses")

    @property
    def Q_d(self) -> np.ndarray:
        return self.array("Q_d", "buses")

    def generation_cost(self, P_g) -> float:
        """Total cost in $/h for real power output ``P_g`` (pu)."""
        P_g = np.asarray(P_g, dtype=float)
        return float(np.sum(self.array("c2") * P_g**2 + self.array("c1") * P_g + self.array("c0")))

    def to_dict(self) -> dict:
        """JSON representation; costs go back to the MW basis of the file format."""
        base = self.base_mva
        buses = [dataclasses.asdict(b) for b in self.buses]
        branches = []
        for br in self.branches:
            d = dataclasses.asdict(br)
            d["from"] = d.pop("from_bus")
            d["to"] = d.pop("to_bus")
            branches.append(d)
        gens = []
        for g in self.generators:
            d = dataclasses.asdict(g)
            d["c2"] = g.c2 / base**2
            d["c1"] = g.c1 / base
            gens.append(d)
        return {"name": self.name, "base_mva": base, "buses": buses,
                "branches": branches, "generators": gens}

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _validate(case: CaseSystem) -> None:
    n_slack = sum(b.type == "slack" for b in case.buses)
    if n_slack != 1:
        raise CaseValidationError(f"expected exactly one slack bus, found {n_slack}")
    ids = [b.id for b in case.buses]
    if len(set(ids)) != len(ids):
        raise CaseValidationError("duplicate bus ids")
    known = set(ids)
    for b in case.buses:
        if b.V_min > b.V_max:
            raise CaseValidationError(f"bus {b.id}: V_min > V_max")
    for j, br in enumerate(case.branches):
        if br.from_bus not in known or br.to_bus not in known:
            raise CaseValidationError(f"branch {j}: unknown terminal bus")
        if br.r == 0 and br.x == 0:
            raise CaseValidationError(f"branch {j}: zero impedance")
    for i, g in enumerate(case.generators):
        if g.bus not in known:
            raise CaseValidationError(f"generator {i}: bus {g.bus} does not exist")
        if g.P_min > g.P_max:
            raise CaseValidationError(f"generator {i}: P_min > P_max")
        if g.Q_min > g.Q_max:
            raise CaseValidationError(f"generator {i}: Q_min > Q_max")
        if g.x_d <= 0 or g.x_q <= 0:
            raise CaseValidationError(f"generator {i}: x_d and x_q must be positive")
        if min(g.c2, g.c1, g.c0) < 0:
            raise CaseValidationError(f"generator {i}: negative cost coefficient")


def case_from_dict(data: dict) -> CaseSystem:
    try:
        jsonschema.validate(data, CASE_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise CaseFormatError(f"{where}: {exc.message}") from None
    base = float(data["base_mva"])
    buses = tuple(
        Bus(id=b["id"], type=b["type"], P_d=b["P_d"], Q_d=b["Q_d"],
            V_min=b["V_min"], V_max=b["V_max"], G_s=b.get("G_s", 0.0), B_s=b.get("B_s", 0.0))
        for b in data["buses"]
    )
    branches = tuple(
        Branch(from_bus=br["from"], to_bus=br["to"], r=br["r"], x=br["x"],
               b_charging=br.get("b_charging", 0.0), tap=br.get("tap", 1.0),
               S_max=br.get("S_max", 0.0))
        for br in data["branches"]
    )
    gens = []
    for g in data["generators"]:
        g = dict(g)
        # file costs are per MW; internal costs are per pu
        g["c2"] = g["c2"] * base**2
        g["c1"] = g["c1"] * base
        gens.append(Generator(**g))
    return CaseSystem(base_mva=base, buses=buses, branches=branches,
                      generators=tuple(gens), name=data.get("name", "case"))


def load_case(path) -> CaseSystem:
    """Read and validate a case JSON file."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CaseFormatError(f"{path}: invalid JSON ({exc})") from None
    return case_from_dict(data)


def save_case(case: CaseSystem, path) -> None:
    Path(path).write_text(json.dumps(case.to_dict(), indent=1) + "\n")


def bundled_case(name: str) -> Path:
    """Path of a case file shipped with the package (``wscc9``, ``ne39``)."""
    stem = Path(name).stem
    path = Path(__file__).parent / "cases" / f"{stem}.json"
    if not path.exists():
        raise FileNotFoundError(name)
    return path


def resolve_case(spec) -> CaseSystem:
    """Load ``spec`` as a file path, falling back to a bundled case name."""
    path = Path(spec)
    if path.exists():
        return load_case(path)
    try:
        return load_case(bundled_case(str(spec)))
    except FileNotFoundError:
        raise FileNotFoundError(f"no case file or bundled case named {spec!r}") from None


def add_transformer_resistance(case: CaseSystem, r_eps: float = 1e-5) -> CaseSystem:
    """Give every zero-resistance branch a small series resistance ``r_eps``."""
    if r_eps <= 0:
        raise ValueError("r_eps must be positive")
    branches = tuple(
        dataclasses.replace(br, r=r_eps) if br.r == 0 else br for br in case.branches
    )
    return dataclasses.replace(case, branches=branches)


@dataclass(frozen=True)
class NetworkMatrices:
    """Complex admittances plus their lifted real quadratic forms.

    ``Yk[k]``/``Yk_bar[k]`` give bus injections, ``Ykl[j]``/``Ykl_bar[j]`` the
    active/reactive flow leaving the from-end of branch ``j`` and
    ``Ylk``/``Ylk_bar`` the flow leaving its to-end.
    """

    Y: np.ndarray
    Yf: np.ndarray
    Yt: np.ndarray
    Yk: np.ndarray
    Yk_bar: np.ndarray
    Ykl: np.ndarray
    Ykl_bar: np.ndarray
    Ylk: np.ndarray
    Ylk_bar: np.ndarray
    Mk: np.ndarray
    branch_from: np.ndarray
    branch_to: np.ndarray
    _stack_cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_bus(self) -> int:
        return self.Y.shape[0]

    def stacked(self, name: str) -> sp.csr_matrix:
        """Rows ``vec(X_k)^T`` so that ``stacked(name) @ vec(W)`` gives every trace."""
        if name not in self._stack_cache:
            arr = getattr(self, name)
            self._stack_cache[name] = sp.csr_matrix(arr.reshape(arr.shape[0], -1))
        return self._stack_cache[name]


def _quadratic_forms(k: int, row: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Real symmetric matrices giving Re/Im of ``V_k * conj(row @ V)``."""
    n = row.size
    G, B = row.real, row.imag
    P = np.zeros((2 * n, 2 * n))
    Q = np.zeros((2 * n, 2 * n))
    # row @ V = (G x - B y) + j (B x + G y)
    P[k, :n] += G
    P[k, n:] -= B
    P[n + k, :n] += B
    P[n + k, n:] += G
    Q[n + k, :n] += G
    Q[n + k, n:] -= B
    Q[k, :n] -= B
    Q[k, n:] -= G
    return 0.5 * (P + P.T), 0.5 * (Q + Q.T)


def admittance(case: CaseSystem) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Bus admittance matrix and branch from/to admittance rows (pi model with taps)."""
    nb, nl = case.n_bus, len(case.branches)
    idx = case.bus_index
    Y = np.zeros((nb, nb), dtype=complex)
    Yf = np.zeros((nl, nb), dtype=complex)
    Yt = np.zeros((nl, nb), dtype=complex)
    for j, br in enumerate(case.branches):
        f, t = idx[br.from_bus], idx[br.to_bus]
        ys = 1.0 / complex(br.r, br.x)
        bc = 0.5j * br.b_charging
        tau = br.tap
        yff, yft, ytf, ytt = (ys + bc) / tau**2, -ys / tau, -ys / tau, ys + bc
        Yf[j, f] += yff
        Yf[j, t] += yft
        Yt[j, f] += ytf
        Yt[j, t] += ytt
        Y[f, f] += yff
        Y[f, t] += yft
        Y[t, f] += ytf
        Y[t, t] += ytt
    for k, b in enumerate(case.buses):
        Y[k, k] += complex(b.G_s, b.B_s)
    return Y, Yf, Yt


def build_matrices(case: CaseSystem) -> NetworkMatrices:
    nb = case.n_bus
    idx = case.bus_index
    Y, Yf, Yt = admittance(case)
    Yk, Yk_bar = zip(*(_quadratic_forms(k, Y[k]) for k in range(nb)))
    fb = np.array([idx[br.from_bus] for br in case.branches], dtype=int)
    tb = np.array([idx[br.to_bus] for br in case.branches], dtype=int)
    empty = np.zeros((0, 2 * nb, 2 * nb))
    if len(case.branches):
        Ykl, Ykl_bar = zip(*(_quadratic_forms(fb[j], Yf[j]) for j in range(len(fb))))
        Ylk, Ylk_bar = zip(*(_quadratic_forms(tb[j], Yt[j]) for j in range(len(tb))))
    else:
        Ykl = Ykl_bar = Ylk = Ylk_bar = empty
    Mk = np.zeros((nb, 2 * nb, 2 * nb))
    for k in range(nb):
        Mk[k, k, k] = Mk[k, nb + k, nb + k] = 1.0
    return NetworkMatrices(
        Y=Y, Yf=Yf, Yt=Yt,
        Yk=np.array(Yk), Yk_bar=np.array(Yk_bar),
        Ykl=np.array(Ykl), Ykl_bar=np.array(Ykl_bar),
        Ylk=np.array(Ylk), Ylk_bar=np.array(Ylk_bar),
        Mk=Mk, branch_from=fb, branch_to=tb,
    )


def stack_voltage(V: np.ndarray) -> np.ndarray:
    """Complex bus voltages -> real embedding ``[V_x; V_y]``."""
    V = np.asarray(V, dtype=complex)
    return np.concatenate([V.real, V.imag])


def complex_voltage(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = v.size // 2
    return v[:n] + 1j * v[n:]
