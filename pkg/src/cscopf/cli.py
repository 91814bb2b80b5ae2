"""Command-line front end: ``cscopf {opf,scopf,sweep,verify}``.

Exit codes: 0 success (and, for ``scopf``/``verify``, a stable verdict);
1 unstable or marginal; 2 invalid input; 3 solver failure; 4 incompatible
solution file.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .case_model import CaseFormatError, CaseValidationError, add_transformer_resistance, \
    build_matrices, resolve_case
from .dae import InitializationError, SingularAlgebraicError
from .recovery import ErrorReport, SolutionBundle, SolutionVersionError, verify_stability
from .relaxation import MODES, ProgramBuildError
from .solver import SolveSettings
from .workflow import (DEFAULT_GAMMA, DEFAULT_SWEEP, OPF_TRACE_WEIGHT, SolveFailed, report,
                       solve_cscopf, solve_relaxed_opf)

EXIT_OK, EXIT_UNSTABLE, EXIT_INPUT, EXIT_SOLVER, EXIT_VERSION = 0, 1, 2, 3, 4
COMMANDS = ("opf", "scopf", "sweep", "verify")

log = logging.getLogger("cscopf")


@dataclass
class RunConfig:
    command: str = "opf"
    case: str = ""
    gamma: tuple = DEFAULT_GAMMA
    mode: str = "penalty-only"
    tol: float = 1e-8
    max_iter: int = 500
    out: str = "out"
    format: str = "csv"
    eps: float = 1e-6
    angle_window: float | None = None
    trace_weight: float = OPF_TRACE_WEIGHT
    r_eps: float = 1e-5
    grid: tuple = DEFAULT_SWEEP
    jobs: int = 1
    solution: str | None = None

    def validate(self) -> "RunConfig":
        if self.command not in COMMANDS:
            raise ValueError(f"unknown command {self.command!r}")
        g = tuple(float(x) for x in self.gamma)
        if len(g) != 5 or any(x < 0 or not np.isfinite(x) for x in g):
            raise ValueError("--gamma needs five finite non-negative weights")
        if self.mode not in MODES:
            raise ValueError(f"--mode must be one of {', '.join(MODES)}")
        if self.format not in ("csv", "json"):
            raise ValueError("--format must be csv or json")
        if self.tol <= 0:
            raise ValueError("--tol must be positive")
        if not self.grid:
            raise ValueError("sweep grid is empty")
        if any(float(x) < 0 for x in self.grid):
            raise ValueError("sweep grid values must be non-negative")
        if not self.case:
            raise ValueError("no case given")
        return replace(self, gamma=g, grid=tuple(float(x) for x in self.grid))

    @property
    def settings(self) -> SolveSettings:
        return SolveSettings(feas_tol=self.tol, gap_tol=self.tol, max_iter=self.max_iter)


def _floats(text: str) -> tuple:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cscopf", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    # None marks "not given" so config-file values survive
    common.add_argument("case_pos", nargs="?", metavar="CASE",
                        help="case JSON file or bundled case name (wscc9, ne39)")
    common.add_argument("--case", dest="case_opt", default=None)
    common.add_argument("--config", default=None, help="JSON file with RunConfig fields")
    common.add_argument("--tol", type=float, default=None)
    common.add_argument("--max-iter", dest="max_iter", type=int, default=None)
    common.add_argument("--out", default=None)
    common.add_argument("--format", choices=("csv", "json"), default=None)
    common.add_argument("--trace-weight", dest="trace_weight", type=float, default=None)
    common.add_argument("--r-eps", dest="r_eps", type=float, default=None)
    stab = argparse.ArgumentParser(add_help=False)
    stab.add_argument("--gamma", type=_floats, default=None, help="g1,g2,g3,g4,g5")
    stab.add_argument("--mode", choices=MODES, default=None)
    stab.add_argument("--eps", type=float, default=None)
    stab.add_argument("--angle-window", dest="angle_window", type=float, default=None)
    sub.add_parser("opf", parents=[common], help="SDP-relaxed OPF")
    sub.add_parser("scopf", parents=[common, stab], help="convexified stability-constrained OPF")
    sw = sub.add_parser("sweep", parents=[common, stab], help="C-SCOPF over a grid of gamma_1")
    sw.add_argument("--grid", type=_floats, default=None)
    sw.add_argument("--jobs", type=int, default=None)
    v = sub.add_parser("verify", parents=[common], help="small-signal verdict for a solution file")
    v.add_argument("--solution", default=None)
    return p


def make_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig(command=args.command)
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValueError(f"config file: {exc}") from None
        known = {f.name for f in fields(RunConfig)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"config file has unknown keys {sorted(unknown)}")
        cfg = replace(cfg, **{k: tuple(v) if isinstance(v, list) else v for k, v in data.items()})
    over = {k: getattr(args, k) for k in ("tol", "max_iter", "out", "format", "trace_weight",
                                          "r_eps", "gamma", "mode", "eps", "angle_window",
                                          "grid", "jobs", "solution")
            if getattr(args, k, None) is not None}
    case = args.case_opt or args.case_pos
    if case:
        over["case"] = case
    return replace(cfg, **over, command=args.command).validate()


def _load(cfg: RunConfig):
    case = resolve_case(cfg.case)
    return add_transformer_resistance(case, cfg.r_eps)


def _write_report(rep: ErrorReport, out: Path, fmt: str, name: str = "report") -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{name}.{fmt}"
    path.write_text(rep.to_csv() if fmt == "csv" else rep.to_json() + "\n")
    return path


def _fmt(x, spec=".4g"):
    return "-" if x is None else format(x, spec)


def cmd_opf(cfg: RunConfig) -> int:
    case = _load(cfg)
    mats = build_matrices(case)
    res = solve_relaxed_opf(case, cfg.settings, mats, trace_weight=cfg.trace_weight)
    rep, chk = report(case, res.bundle, res.bundle, mats, res.timing)
    out = Path(cfg.out)
    _write_report(rep, out, cfg.format)
    res.bundle.save(out / "solution.json", case)
    print(f"relaxed OPF [{res.raw.status}]  cost {rep.cost:.2f} $/h  loss {rep.loss_mw:.3f} MW  "
          f"eps_w {rep.eps_w:.3g} %  eps_|V| {rep.eps_V:.3g}")
    print(f"sigma_max {chk.sigma_max:.4f} 1/s  RHP eigenvalues {chk.n_rhp}  ({chk.verdict})")
    return EXIT_OK


def _setpoint_table(case, base: SolutionBundle, sol: SolutionBundle) -> str:
    lines = ["gen  bus      H   P_g opf   P_g scopf   Q_g scopf"]
    H = case.array("H")
    for i, g in enumerate(case.generators):
        lines.append(f"{i + 1:>3}  {g.bus:>3} {H[i]:>6.2f}  {base.P_g[i]:>8.4f}  "
                     f"{sol.P_g[i]:>10.4f}  {sol.Q_g[i]:>10.4f}")
    return "\n".join(lines)


def cmd_scopf(cfg: RunConfig) -> int:
    case = _load(cfg)
    mats = build_matrices(case)
    base = solve_relaxed_opf(case, cfg.settings, mats, trace_weight=cfg.trace_weight)
    res = solve_cscopf(case, base.bundle, cfg.gamma, cfg.mode, cfg.settings, cfg.eps, mats,
                       angle_window=cfg.angle_window)
    timing = {f"opf_{k}": v for k, v in base.timing.items()} | res.timing
    rep, chk = report(case, res.bundle, base.bundle, mats, timing)
    out = Path(cfg.out)
    _write_report(rep, out, cfg.format)
    res.bundle.save(out / "solution.json", case)
    base.bundle.save(out / "opf_solution.json", case)
    print(f"C-SCOPF [{res.raw.status}]  gamma {','.join(f'{g:g}' for g in cfg.gamma)}  "
          f"mode {cfg.mode}")
    print(f"sigma_max {rep.sigma_max:.4f}  sigma0_max {rep.sigma0_max:.4f}  "
          f"re-initialized {rep.sigma_reinit:.4f}  -> {rep.verdict}")
    print(f"cost {rep.cost:.2f} $/h  delta_p {rep.delta_p:.2f} %  delta_loss {rep.delta_loss_mw:.2f} MW"
          f"  eps_w {rep.eps_w:.3g} %  eps_w_dq {_fmt(rep.eps_w_dq, '.3g')} %")
    print(_setpoint_table(case, base.bundle, res.bundle))
    return EXIT_OK if rep.verdict == "stable" else EXIT_UNSTABLE


SWEEP_COLUMNS = ("gamma1", "status", "stable") + ErrorReport.COLUMNS


def _sweep_point(args):
    cfg, g1, base_dict = args
    case = _load(cfg)
    mats = build_matrices(case)
    base = SolutionBundle.from_dict(base_dict, case)
    gamma = (g1,) + tuple(cfg.gamma[1:])
    try:
        res = solve_cscopf(case, base, gamma, cfg.mode, cfg.settings, cfg.eps, mats,
                           angle_window=cfg.angle_window)
        rep, _ = report(case, res.bundle, base, mats)
    except (SolveFailed, InitializationError, SingularAlgebraicError) as exc:
        return {"gamma1": g1, "status": f"failed: {exc}", "stable": False}
    row = {"gamma1": g1, "status": res.raw.status, "stable": rep.verdict == "stable"}
    row.update(rep.row())
    return row


def cmd_sweep(cfg: RunConfig) -> int:
    case = _load(cfg)
    mats = build_matrices(case)
    base = solve_relaxed_opf(case, cfg.settings, mats, trace_weight=cfg.trace_weight)
    jobs = [(cfg, g1, base.bundle.to_dict(case)) for g1 in cfg.grid]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            rows = list(pool.map(_sweep_point, jobs))
    else:
        rows = [_sweep_point(j) for j in jobs]
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: r.get(k, "") for k in SWEEP_COLUMNS})
    for r in rows:
        print(f"gamma1 {r['gamma1']:<8g} {r['status']:<14} sigma_max {_fmt(r.get('sigma_max'))}"
              f"  delta_p {_fmt(r.get('delta_p'))} %  {'stable' if r['stable'] else 'not stable'}")
    return EXIT_OK


def cmd_verify(cfg: RunConfig) -> int:
    case = _load(cfg)
    path = cfg.solution or str(Path(cfg.out) / "solution.json")
    sol = SolutionBundle.load(path, case)
    chk = verify_stability(case, sol)
    print(f"sigma_max {chk.sigma_max:.6g}  sigma0_max {chk.sigma0_max:.6g}  gap {chk.gap:.3g}  "
          f"re-initialized {chk.sigma_reinit:.6g}")
    print(f"RHP eigenvalues {chk.n_rhp} (re-initialized {chk.n_rhp_reinit}), "
          f"marginal {chk.n_marginal}")
    print(f"verdict: {chk.verdict}")
    return EXIT_OK if chk.verdict == "stable" else EXIT_UNSTABLE


HANDLERS = {"opf": cmd_opf, "scopf": cmd_scopf, "sweep": cmd_sweep, "verify": cmd_verify}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = make_config(args)
        return HANDLERS[cfg.command](cfg)
    except SolutionVersionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VERSION
    except SolveFailed as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (InitializationError, SingularAlgebraicError, ProgramBuildError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (CaseFormatError, CaseValidationError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT

if __name__ == "__main__":
    sys.exit(main())
