"""Regenerate the bundled case files from MATPOWER-style tables.

Network, load and cost data follow MATPOWER ``case9`` / ``case39``.  Machine
data: Sauer & Pai (9-bus) and the 10-machine New England table of Pai (39-bus),
all on the 100 MVA system base.  Run from the repository root::

    python scripts/build_cases.py
"""
import json
from pathlib import Path

OUT = Path(__file__).resolve().parents[1] / "src" / "cscopf" / "cases"

# bus_i type Pd Qd Gs Bs Vmax Vmin   (MW, MVAr)
CASE9_BUS = [
    (1, 3, 0, 0, 0, 0), (2, 2, 0, 0, 0, 0), (3, 2, 0, 0, 0, 0),
    (4, 1, 0, 0, 0, 0), (5, 1, 90, 30, 0, 0), (6, 1, 0, 0, 0, 0),
    (7, 1, 100, 35, 0, 0), (8, 1, 0, 0, 0, 0), (9, 1, 125, 50, 0, 0),
]
# fbus tbus r x b rateA tap
CASE9_BRANCH = [
    (1, 4, 0.0, 0.0576, 0.0, 250, 0), (4, 5, 0.017, 0.092, 0.158, 250, 0),
    (5, 6, 0.039, 0.17, 0.358, 150, 0), (3, 6, 0.0, 0.0586, 0.0, 300, 0),
    (6, 7, 0.0119, 0.1008, 0.209, 150, 0), (7, 8, 0.0085, 0.072, 0.149, 250, 0),
    (8, 2, 0.0, 0.0625, 0.0, 250, 0), (8, 9, 0.032, 0.161, 0.306, 250, 0),
    (9, 4, 0.01, 0.085, 0.176, 250, 0),
]
# bus Pmin Pmax Qmin Qmax c2 c1 c0 | H D xd xq xd' xq' Td0' Tq0'
CASE9_GEN = [
    (1, 10, 250, -300, 300, 0.11, 5.0, 150, 23.64, 2.0, 0.146, 0.0969, 0.0608, 0.0969, 8.96, 0.31),
    (2, 10, 300, -300, 300, 0.085, 1.2, 600, 6.40, 2.0, 0.8958, 0.8645, 0.1198, 0.1969, 6.00, 0.535),
    (3, 10, 270, -300, 300, 0.1225, 1.0, 335, 3.01, 2.0, 1.3125, 1.2578, 0.1813, 0.25, 5.89, 0.60),
]
CASE9_VLIM = (0.9, 1.0)

CASE39_BUS = [
    (1, 1, 97.6, 44.2, 0, 0), (2, 1, 0, 0, 0, 0), (3, 1, 322, 2.4, 0, 0),
    (4, 1, 500, 184, 0, 0), (5, 1, 0, 0, 0, 0), (6, 1, 0, 0, 0, 0),
    (7, 1, 233.8, 84, 0, 0), (8, 1, 522, 176.6, 0, 0), (9, 1, 6.5, -66.6, 0, 0),
    (10, 1, 0, 0, 0, 0), (11, 1, 0, 0, 0, 0), (12, 1, 8.53, 88, 0, 0),
    (13, 1, 0, 0, 0, 0), (14, 1, 0, 0, 0, 0), (15, 1, 320, 153, 0, 0),
    (16, 1, 329, 32.3, 0, 0), (17, 1, 0, 0, 0, 0), (18, 1, 158, 30, 0, 0),
    (19, 1, 0, 0, 0, 0), (20, 1, 680, 103, 0, 0), (21, 1, 274, 115, 0, 0),
    (22, 1, 0, 0, 0, 0), (23, 1, 247.5, 84.6, 0, 0), (24, 1, 308.6, -92.2, 0, 0),
    (25, 1, 224, 47.2, 0, 0), (26, 1, 139, 17, 0, 0), (27, 1, 281, 75.5, 0, 0),
    (28, 1, 206, 27.6, 0, 0), (29, 1, 283.5, 26.9, 0, 0), (30, 2, 0, 0, 0, 0),
    (31, 3, 9.2, 4.6, 0, 0), (32, 2, 0, 0, 0, 0), (33, 2, 0, 0, 0, 0),
    (34, 2, 0, 0, 0, 0), (35, 2, 0, 0, 0, 0), (36, 2, 0, 0, 0, 0),
    (37, 2, 0, 0, 0, 0), (38, 2, 0, 0, 0, 0), (39, 2, 1104, 250, 0, 0),
]
CASE39_BRANCH = [
    (1, 2, 0.0035, 0.0411, 0.6987, 600, 0), (1, 39, 0.001, 0.025, 0.75, 1000, 0),
    (2, 3, 0.0013, 0.0151, 0.2572, 500, 0), (2, 25, 0.007, 0.0086, 0.146, 500, 0),
    (2, 30, 0.0, 0.0181, 0.0, 900, 1.025), (3, 4, 0.0013, 0.0213, 0.2214, 500, 0),
    (3, 18, 0.0011, 0.0133, 0.2138, 500, 0), (4, 5, 0.0008, 0.0128, 0.1342, 600, 0),
    (4, 14, 0.0008, 0.0129, 0.1382, 500, 0), (5, 6, 0.0002, 0.0026, 0.0434, 1200, 0),
    (5, 8, 0.0008, 0.0112, 0.1476, 900, 0), (6, 7, 0.0006, 0.0092, 0.113, 900, 0),
    (6, 11, 0.0007, 0.0082, 0.1389, 480, 0), (6, 31, 0.0, 0.025, 0.0, 1800, 1.07),
    (7, 8, 0.0004, 0.0046, 0.078, 900, 0), (8, 9, 0.0023, 0.0363, 0.3804, 900, 0),
    (9, 39, 0.001, 0.025, 1.2, 900, 0), (10, 11, 0.0004, 0.0043, 0.0729, 600, 0),
    (10, 13, 0.0004, 0.0043, 0.0729, 600, 0), (10, 32, 0.0, 0.02, 0.0, 900, 1.07),
    (12, 11, 0.0016, 0.0435, 0.0, 500, 1.006), (12, 13, 0.0016, 0.0435, 0.0, 500, 1.006),
    (13, 14, 0.0009, 0.0101, 0.1723, 600, 0), (14, 15, 0.0018, 0.0217, 0.366, 600, 0),
    (15, 16, 0.0009, 0.0094, 0.171, 600, 0), (16, 17, 0.0007, 0.0089, 0.1342, 600, 0),
    (16, 19, 0.0016, 0.0195, 0.304, 600, 0), (16, 21, 0.0008, 0.0135, 0.2548, 600, 0),
    (16, 24, 0.0003, 0.0059, 0.068, 600, 0), (17, 18, 0.0007, 0.0082, 0.1319, 600, 0),
    (17, 27, 0.0013, 0.0173, 0.3216, 600, 0), (19, 20, 0.0007, 0.0138, 0.0, 900, 1.06),
    (19, 33, 0.0007, 0.0142, 0.0, 900, 1.07), (20, 34, 0.0009, 0.018, 0.0, 900, 1.009),
    (21, 22, 0.0008, 0.014, 0.2565, 900, 0), (22, 23, 0.0006, 0.0096, 0.1846, 600, 0),
    (22, 35, 0.0, 0.0143, 0.0, 900, 1.025), (23, 24, 0.0022, 0.035, 0.361, 600, 0),
    (23, 36, 0.0005, 0.0272, 0.0, 900, 1.0), (25, 26, 0.0032, 0.0323, 0.531, 600, 0),
    (25, 37, 0.0006, 0.0232, 0.0, 900, 1.025), (26, 27, 0.0014, 0.0147, 0.2396, 600, 0),
    (26, 28, 0.0043, 0.0474, 0.7802, 600, 0), (26, 29, 0.0057, 0.0625, 1.029, 600, 0),
    (28, 29, 0.0014, 0.0151, 0.249, 600, 0), (29, 38, 0.0008, 0.0156, 0.0, 1200, 1.025),
]
# T'q0 of the bus-30 unit is 0 in the source table; 0.4 s used (see README).
CASE39_GEN = [
    (30, 0, 1040, 140, 400, 0.01, 0.3, 0.2, 42.0, 2.0, 0.1, 0.069, 0.031, 0.008, 10.2, 0.4),
    (31, 0, 646, -100, 300, 0.01, 0.3, 0.2, 30.3, 2.0, 0.295, 0.282, 0.0697, 0.170, 6.56, 1.5),
    (32, 0, 725, 150, 300, 0.01, 0.3, 0.2, 35.8, 2.0, 0.2495, 0.237, 0.0531, 0.0876, 5.7, 1.5),
    (33, 0, 652, 0, 250, 0.01, 0.3, 0.2, 28.6, 2.0, 0.262, 0.258, 0.0436, 0.166, 5.69, 1.5),
    (34, 0, 508, 0, 167, 0.01, 0.3, 0.2, 26.0, 2.0, 0.67, 0.62, 0.132, 0.166, 5.4, 0.44),
    (35, 0, 687, -100, 300, 0.01, 0.3, 0.2, 34.8, 2.0, 0.254, 0.241, 0.05, 0.0814, 7.3, 0.4),
    (36, 0, 580, 0, 240, 0.01, 0.3, 0.2, 26.4, 2.0, 0.295, 0.292, 0.049, 0.186, 5.66, 1.5),
    (37, 0, 564, 0, 250, 0.01, 0.3, 0.2, 24.3, 2.0, 0.290, 0.280, 0.057, 0.0911, 6.7, 0.41),
    (38, 0, 865, -150, 300, 0.01, 0.3, 0.2, 34.5, 2.0, 0.2106, 0.205, 0.057, 0.0587, 4.79, 1.96),
    (39, 0, 1100, -100, 300, 0.01, 0.3, 0.2, 500.0, 2.0, 0.02, 0.019, 0.006, 0.008, 7.0, 0.7),
]
CASE39_VLIM = (0.94, 1.06)

TYPES = {1: "PQ", 2: "PV", 3: "slack"}


def build(name, bus, branch, gen, vlim, base=100.0):
    return {
        "name": name,
        "base_mva": base,
        "buses": [
            {"id": b, "type": TYPES[t], "P_d": pd / base, "Q_d": qd / base,
             "G_s": gs / base, "B_s": bs / base, "V_min": vlim[0], "V_max": vlim[1]}
            for b, t, pd, qd, gs, bs in bus
        ],
        "branches": [
            {"from": f, "to": t, "r": r, "x": x, "b_charging": b, "tap": tap or 1.0,
             "S_max": rate / base}
            for f, t, r, x, b, rate, tap in branch
        ],
        "generators": [
            {"bus": g[0], "P_min": g[1] / base, "P_max": g[2] / base,
             "Q_min": g[3] / base, "Q_max": g[4] / base,
             "c2": g[5], "c1": g[6], "c0": g[7],
             "H": g[8], "D": g[9], "x_d": g[10], "x_q": g[11],
             "x_d_prime": g[12], "x_q_prime": g[13],
             "T_d0_prime": g[14], "T_q0_prime": g[15]}
            for g in gen
        ],
    }


if __name__ == "__main__":
    OUT.mkdir(parents=True, exist_ok=True)
    for fname, data in [
        ("wscc9.json", build("wscc9", CASE9_BUS, CASE9_BRANCH, CASE9_GEN, CASE9_VLIM)),
        ("ne39.json", build("ne39", CASE39_BUS, CASE39_BRANCH, CASE39_GEN, CASE39_VLIM)),
    ]:
        (OUT / fname).write_text(json.dumps(data, indent=1) + "\n")
        print("wrote", OUT / fname)
