"""delta and epsilon after a fixed budget for a range of penalty values.

    python3 scripts/rho_sweep.py --case case9 --iters 500 --rho 1e3 1e4 1e5 1e6
"""

import argparse

from dopf.admm import AdmmConfig, run_admm
from dopf.cli import RunSpec, build_parser, load_network, preset_path, spec_from_args


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--case", default="case9", help="bundled preset or case name")
    ap.add_argument("--iters", type=int, default=500)
    ap.add_argument("--rho", type=float, nargs="+", default=[1e3, 1e4, 1e5, 1e6])
    args = ap.parse_args()

    if preset_path(args.case):
        spec = spec_from_args(build_parser().parse_args(["solve", "--preset", args.case]))
    else:
        spec = RunSpec(case=args.case)
    net = load_network(spec)
    print(f"{'rho':>8} {'objective':>12} {'delta':>10} {'epsilon':>10} {'worst DF':>10}")
    for rho in args.rho:
        rep = run_admm(net, AdmmConfig(rho=rho, max_admm_iters=args.iters, timing=False))
        print(f"{rho:8.0e} {rep.objective:12.4f} {rep.kkt.delta:10.2e} {rep.kkt.epsilon:10.2e} "
              f"{rep.stats.max_df:10.2e}")


if __name__ == "__main__":
    main()
