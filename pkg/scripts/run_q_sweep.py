"""Run the q sweep at one or more fleet sizes and print the trend comparisons.

    python3 scripts/run_q_sweep.py --capacity 200 800 --out results/
"""
import argparse
import time
from pathlib import Path

from rspgame.experiments import DEFAULT_Q_GRID, ExperimentConfig, InstanceParams, run_sweep, \
    trend_metrics


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--capacity", type=float, nargs="+", default=[200.0, 800.0])
    ap.add_argument("--n", type=int, default=10)
    ap.add_argument("--q", type=float, nargs="+", default=list(DEFAULT_Q_GRID))
    ap.add_argument("--out", help="write each sweep to <out>/capacity_<C>/")
    args = ap.parse_args()

    low, high = min(args.q), max(q for q in args.q if q < 0.5) if len(args.q) > 1 else None
    for cap in args.capacity:
        cfg = ExperimentConfig(instance=InstanceParams(n=args.n, capacity=cap), sweep=args.q)
        out = Path(args.out) / f"capacity_{cap:g}" if args.out else None
        t0 = time.perf_counter()
        res = run_sweep(cfg, out)
        elapsed = time.perf_counter() - t0
        m = trend_metrics(res.rows, low, high if high is not None else low)
        gains = max(max(p["relative_gain_shared"]) for p in res.summary["points"])
        print(f"capacity {cap:g}  ({elapsed:.0f}s, worst shared-constraint gain {gains:.1e})")
        for k, v in m.items():
            print(f"  {k:18s} {v:+.4f}")


if __name__ == "__main__":
    main()
