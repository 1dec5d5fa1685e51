"""Time ternary-logic-partitioned queries against their unfiltered base and tally the slower side.

    python3 scripts/tlp_experiment.py --target 200
"""
import argparse
import json
import logging
from collections import Counter

from perfmut.tlp import TLPConfig, run_tlp_comparison


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--target", type=int, default=200, help="confirmed pairs to collect")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--scale", type=float, default=0.01)
    ap.add_argument("--threshold", type=float, default=2.0)
    ap.add_argument("--timeout-ms", type=float, default=300.0)
    ap.add_argument("--max-seconds", type=float)
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)

    r = run_tlp_comparison(TLPConfig(target=args.target, scale=args.scale, seed=args.seed, threshold=args.threshold,
                                     timeout_ms=args.timeout_ms, max_seconds=args.max_seconds))
    ratios = sorted(x for _, x in r.confirmed)
    print(json.dumps({
        "confirmed": len(r.confirmed),
        "mutant_slower_share": r.mutant_slower_share,
        "mean_ratio": r.mean_ratio(),
        "median_ratio": ratios[len(ratios) // 2] if ratios else None,
        "statuses": dict(r.statuses),
        "unconfirmed_slower_side": dict(Counter(s for s, _ in r.unconfirmed)),
        "seconds": round(r.seconds, 1),
    }, indent=2))


if __name__ == "__main__":
    main()
