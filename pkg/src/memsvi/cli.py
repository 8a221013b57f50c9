"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 solver failure or invariant violation.
Options may also come from a flat JSON file given with ``--config``; explicit
flags win over file values.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import analytic1d as an
from .core import (
    DielectricSpec,
    Field,
    Grid,
    MemsviError,
    SolverConfig,
    dumps,
    output_precision,
    read_field_csv,
    write_csv,
    write_json,
)
from .evolution import evolve, penalty_evolve, zipping_time_bound
from .stationary import lambda_z_bisect, monotone_stationary

log = logging.getLogger("memsvi")

DEFAULTS = {"n": 401, "dim": 1, "h": 1e-3, "T": 1.0, "seed": 0}
_CONFIG_FIELDS = {f.name for f in dataclasses.fields(SolverConfig)}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _common(p: argparse.ArgumentParser, *names: str) -> None:
    if "lambda" in names:
        p.add_argument("--lambda", dest="lambda", type=float, help="voltage parameter lambda")
    if "W" in names:
        p.add_argument("--W", dest="W", help="constant W > 0 or CSV file of nodal W values")
    if "n" in names:
        p.add_argument("--n", type=int, help="nodes per axis (default 401)")
        p.add_argument("--dim", type=int, choices=(1, 2), help="space dimension (default 1)")
    p.add_argument("--out", help="output file or directory")
    p.add_argument("--config", help="flat JSON file of option values")
    p.add_argument("--seed", type=int, help="recorded in reports (runs are deterministic)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="memsvi", description="Constrained MEMS membrane laboratory")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("classify", help="analytic case classification (1D, constant W)")
    _common(p, "lambda", "W")

    p = sub.add_parser("stationary", help="maximal stationary state by monotone iteration")
    _common(p, "lambda", "W", "n")

    p = sub.add_parser("thresholds", help="bracket the zipping threshold and its bounds")
    _common(p, "W", "n")
    p.add_argument("--bracket", type=float, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--bisect-tol", dest="bisect_tol", type=float)

    p = sub.add_parser("evolve", help="implicit Euler evolution from rest or a given profile")
    _common(p, "lambda", "W", "n")
    p.add_argument("--h", type=float, help="time step")
    p.add_argument("--T", type=float, help="final time")
    p.add_argument("--penalty", type=float, metavar="K", help="use penalty K min(1+u,0) instead")
    p.add_argument("--u0", help="CSV file with the initial profile (default u0 = 0)")
    p.add_argument("--settle", type=float, help="stop once ||du/dt||_2 drops below this")
    p.add_argument("--every", type=int, help="snapshot stride")

    p = sub.add_parser("compare", help="numeric maximal state against the analytic profile")
    _common(p, "lambda", "W", "n")

    p = sub.add_parser("analytic", help="bifurcation sweep of the analytic branches")
    _common(p, "W")
    p.add_argument("--lambda-min", dest="lambda_min", type=float)
    p.add_argument("--lambda-max", dest="lambda_max", type=float)
    p.add_argument("--num", type=int)
    return parser


def _merge(args: argparse.Namespace) -> dict:
    opts = dict(DEFAULTS)
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file {path} not found")
        file_opts = json.loads(path.read_text())
        if not isinstance(file_opts, dict):
            raise UsageError("config file must hold a flat JSON object")
        opts.update(file_opts)
    opts.update({k: v for k, v in vars(args).items() if v is not None})
    return opts


def _solver_config(opts: dict) -> SolverConfig:
    kw = {k: opts[k] for k in _CONFIG_FIELDS if k in opts}
    try:
        return SolverConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


def _need(opts: dict, *keys: str) -> None:
    missing = [k for k in keys if opts.get(k) is None]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + k for k in missing))


def _positive(opts: dict, *keys: str) -> None:
    for k in keys:
        if opts.get(k) is not None and not float(opts[k]) > 0:
            raise UsageError(f"--{k} must be positive")


def _dielectric(opts: dict) -> tuple[DielectricSpec, Grid | None]:
    raw = opts["W"]
    try:
        return DielectricSpec(constant=float(raw)), None
    except ValueError as exc:
        if not isinstance(raw, str) or _is_number(raw):
            raise UsageError(f"invalid W: {exc}") from exc
    path = Path(raw)
    if not path.is_file():
        raise UsageError(f"W file {path} not found")
    try:
        f = read_field_csv(path, column=_pick(path, "W"))
        return DielectricSpec(sampled=f), f.grid
    except ValueError as exc:
        raise UsageError(f"bad W file {path}: {exc}") from exc


def _pick(path: Path, name: str) -> str | None:
    # use the named column when present, otherwise the reader's default
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    return name if name in header else None


def _is_number(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def _grid(opts: dict, w_grid: Grid | None) -> Grid:
    if w_grid is not None:
        if w_grid.n != int(opts["n"]) and "n" in opts and opts.get("_n_explicit"):
            raise UsageError("--n disagrees with the grid of the W file")
        return w_grid
    try:
        return Grid(int(opts["n"]), int(opts["dim"]))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _emit(payload: dict, out: str | None) -> None:
    text = dumps(payload)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)


def cmd_classify(opts: dict) -> int:
    _need(opts, "lambda", "W")
    _positive(opts, "lambda")
    w, wgrid = _dielectric(opts)
    if not w.is_constant:
        raise UsageError("classify needs a constant W: closed forms exist only for constant W in 1D")
    lam, wv = float(opts["lambda"]), w.constant
    case = an.classify(lam, wv)
    roots = an.unzipped_depths(lam, wv)
    payload = {
        "lambda": lam,
        "W": wv,
        **case.to_record(),
        "r0": an.R0,
        "lambda_star": an.lambda_star(wv),
        "fold_lambda": an.fold_lambda(wv) if an.regime(wv) == "II" else None,
        "branch_points": [b.to_record() for b in roots],
        "halfwidth": an.contact_halfwidth(lam, wv) if lam > an.lambda_star(wv) else None,
    }
    _emit(payload, opts.get("out"))
    return 0


def _profile_columns(grid: Grid, w: DielectricSpec, witness) -> dict:
    return {"u": witness.u.values, "zeta": witness.zeta.values, "W": w.values(grid)}


def cmd_stationary(opts: dict) -> int:
    _need(opts, "lambda", "W")
    _positive(opts, "lambda")
    w, wgrid = _dielectric(opts)
    grid = _grid(opts, wgrid)
    config = _solver_config(opts)
    res = monotone_stationary(float(opts["lambda"]), w, grid, config)
    out = opts.get("out") or "profile.csv"
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    write_csv(out, grid, _profile_columns(grid, w, res.witness))
    cls = res.classification
    _emit({
        "lambda": float(opts["lambda"]),
        "W": w.describe(),
        "n": grid.n,
        "dim": grid.dim,
        "min_u": float(res.u.values.min()),
        "zipped": cls.zipped,
        "coincidence_measure": cls.coincidence_measure,
        "contact_interval": list(cls.contact_interval) if cls.contact_interval else None,
        "outer_iterations": res.outer_iterations,
        "final_update_norm": res.final_update_norm,
        "energy": res.energy,
        "comp_residual": res.witness.comp_residual,
        "profile": str(out),
    }, None)
    return 0


def cmd_thresholds(opts: dict) -> int:
    _need(opts, "W")
    w, wgrid = _dielectric(opts)
    grid = _grid(opts, wgrid)
    config = _solver_config(opts)
    bracket = tuple(opts["bracket"]) if opts.get("bracket") else None
    try:
        report = lambda_z_bisect(w, grid, bracket, config)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    payload = {"W": w.describe(), "n": grid.n, "dim": grid.dim, "seed": opts["seed"],
               **report.to_record()}
    _emit(payload, opts.get("out") or "report.json")
    return 0


def cmd_evolve(opts: dict) -> int:
    _need(opts, "lambda", "W")
    _positive(opts, "h", "T", "penalty")
    if float(opts["lambda"]) < 0:
        raise UsageError("--lambda must be non-negative")
    w, wgrid = _dielectric(opts)
    if opts.get("u0"):
        path = Path(opts["u0"])
        if not path.is_file():
            raise UsageError(f"u0 file {path} not found")
        try:
            u0 = read_field_csv(path, column=_pick(path, "u"))
        except ValueError as exc:
            raise UsageError(f"bad u0 file {path}: {exc}") from exc
        if wgrid is not None and u0.grid != wgrid:
            raise UsageError("u0 and W files live on different grids")
        grid = u0.grid
    else:
        grid = _grid(opts, wgrid)
        u0 = Field.zeros(grid)
    config = _solver_config(opts)
    lam, h, t_end = float(opts["lambda"]), float(opts["h"]), float(opts["T"])
    try:
        if opts.get("penalty"):
            traj = penalty_evolve(u0, lam, w, h, t_end, float(opts["penalty"]), config,
                                  opts.get("settle"), opts.get("every"))
        else:
            traj = evolve(u0, lam, w, h, t_end, config, opts.get("settle"), opts.get("every"))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = Path(opts.get("out") or "traj")
    out.mkdir(parents=True, exist_ok=True)
    for k, (t, state) in enumerate(zip(traj.times, traj.states)):
        write_csv(out / f"snapshot_{k:05d}.csv", grid, _profile_columns(grid, w, state))
    digits = output_precision()
    with open(out / "ledger.csv", "w") as fh:
        fh.write("t,energy,kinetic,slack\n")
        for e in traj.ledger.entries:
            fh.write(",".join(f"{v:.{digits}g}" for v in (e.t, e.energy, e.kinetic, e.slack)) + "\n")
    try:
        tz = zipping_time_bound(lam, w, grid)
    except ValueError:
        tz = None
    events = {
        **traj.events(),
        "T_z_bound": tz,
        "snapshot_times": traj.times.tolist(),
        "final_time": traj.final_time,
        "n_steps": traj.n_steps,
        "min_slack": traj.ledger.min_slack,
        "penalty": traj.penalty,
        "lambda": lam,
        "W": w.describe(),
        "seed": opts["seed"],
    }
    write_json(out / "events.json", events)
    sys.stdout.write(dumps({k: events[k] for k in ("touchdown_time", "zipping_time", "T_z_bound",
                                                    "final_time", "n_steps", "min_slack")}))
    return 0


def cmd_compare(opts: dict) -> int:
    _need(opts, "lambda", "W")
    _positive(opts, "lambda")
    w, wgrid = _dielectric(opts)
    if not w.is_constant:
        raise UsageError("compare needs a constant W (analytic profile)")
    opts["dim"] = 1
    grid = _grid(opts, None)
    lam = float(opts["lambda"])
    num = monotone_stationary(lam, w, grid, _solver_config(opts))
    exact = an.maximal_profile(lam, w.constant, grid)
    err = np.abs(num.u.values - exact.values)
    out = opts.get("out") or "compare.csv"
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    write_csv(out, grid, {"u_numeric": num.u.values, "u_analytic": exact.values, "error": err})
    _emit({"lambda": lam, "W": w.constant, "n": grid.n, "sup_error": float(err.max()),
           "case": an.classify(lam, w.constant).label, "overlay": str(out)}, None)
    return 0


def cmd_analytic(opts: dict) -> int:
    _need(opts, "W")
    w, _ = _dielectric(opts)
    if not w.is_constant:
        raise UsageError("analytic sweep needs a constant W")
    lo = float(opts.get("lambda_min") or 0.1)
    hi = float(opts.get("lambda_max") or 2 * an.lambda_star(w.constant))
    num = int(opts.get("num") or 200)
    if not (0 < lo < hi and num >= 2):
        raise UsageError("need 0 < lambda-min < lambda-max and num >= 2")
    rows = an.bifurcation_sweep(w.constant, np.linspace(lo, hi, num))
    out = opts.get("out") or "sweep.csv"
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        fh.write("lambda,m1,m2,a,case\n")
        for r in rows:
            vals = ["" if math.isnan(r[k]) else f"{r[k]:.15g}" for k in ("lambda", "m1", "m2", "a")]
            fh.write(",".join(vals + [r["case"]]) + "\n")
    _emit({"W": w.constant, "rows": len(rows), "sweep": str(out)}, None)
    return 0


COMMANDS = {
    "classify": cmd_classify,
    "stationary": cmd_stationary,
    "thresholds": cmd_thresholds,
    "evolve": cmd_evolve,
    "compare": cmd_compare,
    "analytic": cmd_analytic,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
        opts = _merge(args)
        opts["_n_explicit"] = args.__dict__.get("n") is not None
        return COMMANDS[args.command](opts)
    except UsageError as exc:
        sys.stderr.write(f"memsvi: error: {exc}\n")
        return 1
    except MemsviError as exc:
        sys.stderr.write(f"memsvi: failure: {exc}\n")
        return 2
    except SystemExit as exc:
        return int(exc.code or 0)


if __name__ == "__main__":
    sys.exit(main())
