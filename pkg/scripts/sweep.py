"""Altitude sweep with the fixed-node grid: h0 evenly spaced over [650, 6000]."""

import argparse
import time

import numpy as np

from lcvx.rocket import RocketConfig, run_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--count", type=int, default=50)
    ap.add_argument("--nodes", type=int, default=30)
    ap.add_argument("--zeta", type=int, default=0)
    ap.add_argument("--workers", type=int, default=None)
    ap.add_argument("--out", default="results/sweep")
    args = ap.parse_args()
    t0 = time.perf_counter()
    rows = run_sweep(RocketConfig(zeta=args.zeta, N=args.nodes),
                     np.linspace(650, 6000, args.count), args.out, args.workers)
    bad = [r for r in rows if r["status"] != "Optimal" or not r["lossless"]]
    for r in rows:
        print(f"{r['h0']:8.1f} {r['status']:>10} J={r.get('cost', float('nan')):9.3f} "
              f"t_f={r.get('t_f', float('nan')):7.3f} edge={r.get('n_edge')} "
              f"lossless={r.get('lossless')} c4={r.get('condition4')}")
    print(f"{len(rows)} cases, {len(bad)} not clean, {time.perf_counter() - t0:.1f} s")


if __name__ == "__main__":
    main()
