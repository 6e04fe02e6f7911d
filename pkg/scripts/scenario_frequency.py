"""How the local subproblem loop terminates, per bundled preset.

Counts the calls that stop on the voltage-decrement tolerance, on the
iteration cap, and those that are infeasible.

    python3 scripts/scenario_frequency.py --iters 300 case9 case14 case30
"""

import argparse

from dopf.admm import AdmmConfig, run_admm
from dopf.cli import build_parser, load_network, spec_from_args


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("presets", nargs="*", default=["case9", "case14", "case30"])
    ap.add_argument("--iters", type=int, default=300)
    ap.add_argument("--max-sub-iter", type=int, default=20)
    args = ap.parse_args()

    print(f"{'preset':>8} {'N':>4} {'calls':>7} {'eps':>7} {'max_iter':>9} {'infeas':>7} {'max_iter %':>10}")
    for name in args.presets:
        spec = spec_from_args(build_parser().parse_args(["solve", "--preset", name]))
        net = load_network(spec)
        cfg = AdmmConfig(rho=spec.rho, max_admm_iters=args.iters, max_sub_iter=args.max_sub_iter, timing=False)
        st = run_admm(net, cfg).stats
        print(f"{name:>8} {net.n_bus:4d} {st.calls:7d} {st.eps_stops:7d} {st.maxiter_stops:9d} "
              f"{st.infeasible:7d} {100 * st.maxiter_fraction:10.3f}")


if __name__ == "__main__":
    main()
