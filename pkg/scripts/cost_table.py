"""Cost table: golden search over t_f for five initial altitudes and both cost modes."""

import argparse
import time

from lcvx.conditions import gain_activation_consistency
from lcvx.rocket import RocketConfig, run_case

REFERENCE = {(650, 0): 636.2, (650, 1): 374.5, (800, 0): 577.7, (800, 1): 350.8,
             (1000, 0): 548.9, (1000, 1): 333.7, (1500, 0): 493.4, (1500, 1): 316.1,
             (3000, 0): 558.0, (3000, 1): 323.0}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--nodes", type=int, default=150)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()
    print("h0,zeta,J,J_ref,rel_err,t_f,edge_nodes,lossless,conditions,gain_consistency,seconds")
    for (h0, zeta), ref in REFERENCE.items():
        t0 = time.perf_counter()
        out = None if args.out is None else f"{args.out}/h0_{h0}_zeta_{zeta}"
        b = run_case(RocketConfig(h0=h0, zeta=zeta, N=args.nodes), out)
        cons = gain_activation_consistency(b.adjoint, b.lossless.classes)
        print(f"{h0},{zeta},{b.cost:.2f},{ref},{abs(b.cost - ref) / ref:.2e},{b.t_f:.3f},"
              f"{len(b.lossless.edge_nodes)},{b.lossless.verdict},{b.conditions.all_hold},"
              f"{cons:.3f},{time.perf_counter() - t0:.1f}", flush=True)


if __name__ == "__main__":
    main()
