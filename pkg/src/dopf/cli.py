"""Command-line front end.

    dopf solve    --case case9 --preset case9 --iters 3000 --trace-out t.csv --report-out r.json
    dopf oracle   --case toy2
    dopf validate --case mycase.m

Exit codes: 0 success, 1 validation violations or oracle size limit,
2 unreadable or unparsable input, 3 unrecoverable solve failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import asdict, dataclass, fields
from importlib import resources
from typing import Optional


from . import __version__
from .admm import AdmmConfig, StopRule, run_admm, trace_csv, trace_jsonl
from .diagnostics import assemble_point, dumps, evaluate_centralized_feasibility, relative_objective
from .network import CaseParseError, Network, apply_overrides, build_admittance, load_case, validate
from .oracle import OracleSizeError, grid_oracle

log = logging.getLogger("dopf")

EXIT_OK, EXIT_VIOLATION, EXIT_INPUT, EXIT_SOLVE = 0, 1, 2, 3


@dataclass
class RunSpec:
    """Everything that defines one solve: case, overrides, algorithm settings, outputs."""

    case: str = ""
    format: Optional[str] = None
    taps: str = "error"
    scale_pd: float = 1.0
    scale_qd: float = 1.0
    qgmin_override: Optional[float] = None
    line_limit: str = "none"
    rho: float = 1e6
    iters: int = 1000
    eps_sub: float = 1e-10
    max_sub_iter: int = 20
    stop: str = "iters"
    net_update: str = "general"
    gossip_rounds: int = 200
    seed: int = 0
    timing: str = "wall"
    reference: Optional[float] = None
    trace_out: Optional[str] = None
    report_out: Optional[str] = None

    def admm_config(self) -> AdmmConfig:
        return AdmmConfig(rho=self.rho, max_admm_iters=self.iters, eps_sub=self.eps_sub,
                          max_sub_iter=self.max_sub_iter, stop_rule=StopRule.parse(self.stop),
                          net_update=self.net_update, gossip_rounds=self.gossip_rounds,
                          seed=self.seed, timing=self.timing == "wall")


# --------------------------------------------------------------------------
# bundled data

def bundled_path(name: str) -> Optional[str]:
    """Path of a bundled case or preset given a bare name, else None."""
    base = resources.files("dopf") / "data"
    for cand in (name, name + ".m", name + ".json"):
        p = base / cand
        if p.is_file():
            return str(p)
    return None


def preset_path(name: str) -> Optional[str]:
    if os.path.isfile(name):
        return name
    p = resources.files("dopf") / "data" / "presets" / (name if name.endswith(".json") else name + ".json")
    return str(p) if p.is_file() else None


def resolve_case(path: str) -> str:
    if os.path.exists(path):
        return path
    found = bundled_path(path)
    if found is None:
        raise FileNotFoundError(f"no such case file or bundled case: {path}")
    return found


def list_presets() -> list:
    d = resources.files("dopf") / "data" / "presets"
    return sorted(p.name[:-5] for p in d.iterdir() if p.name.endswith(".json"))


# --------------------------------------------------------------------------
# argument handling

def _add_case_args(p):
    p.add_argument("--case", required=False, help="case file, or the name of a bundled case (case9, case14, case30, toy2)")
    p.add_argument("--format", choices=["matpower-m", "canonical-json"], default=None,
                   help="input format (default: from the file extension)")
    p.add_argument("--taps", choices=["error", "ignore"], default=None,
                   help="transformer taps: reject (default) or treat as 1")


def _add_override_args(p):
    p.add_argument("--preset", help="JSON file or bundled preset name holding default overrides")
    p.add_argument("--scale-pd", type=float, default=None, help="multiply every real demand")
    p.add_argument("--scale-qd", type=float, default=None, help="multiply every reactive demand")
    p.add_argument("--qgmin-override", type=float, default=None, help="reactive lower bound (MVAr) for every generator")
    p.add_argument("--line-limit", choices=["none", "imax", "smax", "pmax"], default=None,
                   help="which line limit to enforce, valued at the line rating (default none)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dopf", description="Distributed AC optimal power flow by consensus ADMM.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="run ADMM and write trace/report files")
    _add_case_args(s)
    _add_override_args(s)
    s.add_argument("--rho", type=float, default=None, help="penalty parameter (default 1e6)")
    s.add_argument("--iters", type=int, default=None, help="ADMM iteration budget (default 1000)")
    s.add_argument("--eps-sub", type=float, default=None, help="voltage decrement tolerance of the subproblem loop")
    s.add_argument("--max-sub-iter", type=int, default=None, help="iteration cap of the subproblem loop")
    s.add_argument("--stop", default=None, help="iters | consensus:THETA | objective:THETA")
    s.add_argument("--net-update", choices=["general", "average", "gossip"], default=None)
    s.add_argument("--gossip-rounds", type=int, default=None)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--timing", choices=["wall", "off"], default=None,
                   help="write wall-clock times into the trace, or zeros for reproducible files")
    s.add_argument("--reference", type=float, default=None, help="reference objective for the relative error")
    s.add_argument("--trace-out", default=None, help="trace file; .jsonl gives JSON lines, anything else CSV")
    s.add_argument("--report-out", default=None, help="final report JSON")

    o = sub.add_parser("oracle", help="grid brute-force optimum of a network with at most 3 buses")
    _add_case_args(o)
    _add_override_args(o)
    o.add_argument("--resolution", type=int, default=None, help="points per axis of the first pass")
    o.add_argument("--refine-passes", type=int, default=12)
    o.add_argument("--feas-tol", type=float, default=0.0)
    o.add_argument("--report-out", default=None)

    v = sub.add_parser("validate", help="parse a case and list invariant violations")
    _add_case_args(v)

    sub.add_parser("presets", help="list bundled presets")
    return ap


def spec_from_args(args) -> RunSpec:
    spec = RunSpec()
    if getattr(args, "preset", None):
        path = preset_path(args.preset)
        if path is None:
            raise FileNotFoundError(f"preset {args.preset}")
        with open(path) as fh:
            data = json.load(fh)
        known = {f.name for f in fields(RunSpec)}
        for key, val in data.items():
            if key.startswith("_"):
                continue
            if key not in known:
                raise ValueError(f"unknown preset key {key!r}")
            setattr(spec, key, val)
    for f in fields(RunSpec):
        val = getattr(args, f.name, None)
        if val is not None:
            setattr(spec, f.name, val)
    if not spec.case:
        raise ValueError("no case given (use --case or a preset that names one)")
    return spec


def load_network(spec: RunSpec) -> Network:
    path = resolve_case(spec.case)
    net = load_case(path, spec.format, taps=spec.taps)
    return apply_overrides(net, spec.scale_pd, spec.scale_qd, spec.qgmin_override, spec.line_limit)


# --------------------------------------------------------------------------
# commands

def solve_report(net: Network, spec: RunSpec, rep) -> dict:
    B = net.base_mva
    N = net.n_bus
    v = rep.v
    ymat = build_admittance(net)
    feas = evaluate_centralized_feasibility(net, ymat, assemble_point(net, v, rep.z, ymat))
    out = {
        "case": os.path.basename(spec.case),
        "status": rep.status,
        "iterations": rep.iterations,
        "objective": rep.objective,
        "delta": rep.kkt.delta,
        "epsilon": rep.kkt.epsilon,
        "a": rep.kkt.a,
        "b": rep.kkt.b,
        "delta_bar": rep.kkt.delta_bar,
        "worst_df": rep.stats.max_df,
        "subproblem_calls": rep.stats.calls,
        "sub_eps_stops": rep.stats.eps_stops,
        "sub_maxiter_stops": rep.stats.maxiter_stops,
        "sub_infeasible": rep.stats.infeasible,
        "qp_solves": rep.stats.qp_solves,
        "buses": [
            {"bus": k, "label": net.buses[k].label, "pg_mw": float(rep.z[k].pg) * B,
             "qg_mvar": float(rep.z[k].qg) * B, "v_re": float(v[k]), "v_im": float(v[N + k]),
             "v_mag": math.hypot(v[k], v[N + k]), "v_ang_deg": math.degrees(math.atan2(v[N + k], v[k]))}
            for k in range(N)
        ],
        "feasibility": feas.to_dict(),
        "config": asdict(spec),
    }
    if spec.reference:
        out["reference"] = spec.reference
        out["relative_objective"] = relative_objective(rep.objective, spec.reference)
    return out


def _write(path, text):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(text)


def cmd_solve(spec: RunSpec) -> int:
    try:
        net = load_network(spec)
    except (OSError, CaseParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    bad = validate(net)
    if bad:
        for v in bad:
            print(f"error: {v}", file=sys.stderr)
        return EXIT_INPUT
    cfg = spec.admm_config()
    log.info("solving %s: N=%d, rho=%g, %s", spec.case, net.n_bus, cfg.rho, cfg.stop_rule)
    rep = run_admm(net, cfg)
    if spec.trace_out:
        _write(spec.trace_out, trace_jsonl(rep.trace) if spec.trace_out.endswith(".jsonl") else trace_csv(rep.trace))
    report = solve_report(net, spec, rep)
    if spec.report_out:
        _write(spec.report_out, dumps(report) + "\n")
    if rep.status == "failed":
        print("error: every bus subproblem failed in one round", file=sys.stderr)
        return EXIT_SOLVE
    print(f"objective {rep.objective:.6f} $/h  delta {rep.kkt.delta:.3e}  epsilon {rep.kkt.epsilon:.3e}  "
          f"worst DF {rep.stats.max_df:.3e} MVA  iterations {rep.iterations}")
    return EXIT_OK


def cmd_oracle(spec: RunSpec, resolution=None, refine_passes=12, feas_tol=0.0) -> int:
    try:
        net = load_network(spec)
    except (OSError, CaseParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        res = grid_oracle(net, resolution=resolution, refine_passes=refine_passes, feas_tol=feas_tol)
    except OracleSizeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VIOLATION
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVE
    if spec.report_out:
        _write(spec.report_out, dumps(res.to_dict()) + "\n")
    print(f"objective {res.objective:.9f} $/h  resolution {res.resolution}  passes {res.passes}  "
          f"final spacing {res.spacing:.2e} p.u.  coarse objective {res.coarse_objective:.6f}")
    return EXIT_OK


def cmd_validate(case: str, format=None, taps="error") -> int:
    try:
        net = load_case(resolve_case(case), format, taps=taps)
    except (OSError, CaseParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    bad = validate(net)
    for v in bad:
        print(v)
    if not bad:
        print(f"{case}: ok ({net.n_bus} buses, {len(net.lines)} lines, {len(net.generators)} generators)")
    return EXIT_VIOLATION if bad else EXIT_OK


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    if args.command == "presets":
        for name in list_presets():
            print(name)
        return EXIT_OK
    if args.command == "validate":
        if not args.case:
            print("error: --case is required", file=sys.stderr)
            return EXIT_INPUT
        return cmd_validate(args.case, args.format, args.taps or "error")
    try:
        spec = spec_from_args(args)
        if args.command == "solve":
            spec.admm_config()  # validate settings before loading anything
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if args.command == "solve":
        return cmd_solve(spec)
    return cmd_oracle(spec, args.resolution, args.refine_passes, args.feas_tol)


if __name__ == "__main__":
    sys.exit(main())
