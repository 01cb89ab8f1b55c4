"""Relaxation versus branch and bound at the same small grid and final time."""

import argparse

from lcvx.rocket import RocketConfig, run_micp_comparison


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--nodes", type=int, nargs="+", default=[12])
    ap.add_argument("--h0", type=float, default=800.0)
    ap.add_argument("--max-nodes", type=int, default=100_000)
    args = ap.parse_args()
    print("N,zeta,t_f,J_lcvx,J_micp,rel_gap,bnb_nodes,micp_status,seconds")
    for N in args.nodes:
        for zeta in (0, 1):
            r = run_micp_comparison(RocketConfig(h0=args.h0, zeta=zeta), N, args.max_nodes)
            gap = "" if r["rel_gap"] is None else f"{r['rel_gap']:.2e}"
            jm = "" if r["micp_cost"] is None else f"{r['micp_cost']:.4f}"
            print(f"{N},{zeta},{r['t_f']:.3f},{r['lcvx_cost']:.4f},{jm},{gap},"
                  f"{r['micp_nodes']},{r['micp_status']},{r['micp_time']:.1f}", flush=True)


if __name__ == "__main__":
    main()
