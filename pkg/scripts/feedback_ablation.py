"""Compare fuzzing campaigns with and without probability-table feedback.

Each configuration gets the same wall-time budget and seed list; the output
lists total and unique confirmed reports per configuration.

    python3 scripts/feedback_ablation.py --duration 120 --seeds 0 1 2
"""
import argparse
import json
import tempfile
from pathlib import Path

from perfmut.cli import FEEDBACK, RunConfig, fuzz_loop


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--duration", type=float, default=120.0, help="seconds per campaign")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--modes", nargs="+", default=["none", "both"], choices=sorted(FEEDBACK))
    ap.add_argument("--timeout-ms", type=float, default=2000.0)
    ap.add_argument("--out", help="keep run directories here instead of a temporary directory")
    args = ap.parse_args()

    root = Path(args.out) if args.out else Path(tempfile.mkdtemp(prefix="perfmut-ablation-"))
    rows = []
    for mode in args.modes:
        for seed in args.seeds:
            stats = fuzz_loop(RunConfig(seed=seed, duration=args.duration, feedback=mode, timeout_ms=args.timeout_ms,
                                        out=str(root / f"{mode}-{seed}")))
            rows.append({"feedback": mode, "seed": seed, "pairs": stats.pairs_generated,
                         "timed": stats.pairs_timed, "reports": stats.reports_emitted,
                         "unique": stats.unique_reports, "prob_updates": stats.prob_updates})
            print(json.dumps(rows[-1]))
    for mode in args.modes:
        mine = [r for r in rows if r["feedback"] == mode]
        print(f"{mode:>9}: reports {sum(r['reports'] for r in mine)}, unique {sum(r['unique'] for r in mine)}, "
              f"pairs {sum(r['pairs'] for r in mine)}")
    print(f"run directories under {root}")


if __name__ == "__main__":
    main()
