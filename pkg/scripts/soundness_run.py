"""Check that generated mutants return the same rows as their base queries.

    python3 scripts/soundness_run.py --pairs 1000 --seed 0
"""
import argparse
import json

from perfmut.soundness import SoundnessConfig, run_soundness


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--pairs", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--scale", type=float, default=0.01)
    ap.add_argument("--timeout-ms", type=float, default=500.0)
    args = ap.parse_args()

    r = run_soundness(SoundnessConfig(pairs=args.pairs, scale=args.scale, seed=args.seed, timeout_ms=args.timeout_ms))
    print(json.dumps({
        "compared": r.compared,
        "mismatches": len(r.mismatches),
        "bases": r.bases,
        "skipped_bases": r.skipped_bases,
        "skipped_pairs": r.skipped_pairs,
        "rule_counts": {str(k): v for k, v in sorted(r.rule_counts.items())},
        "seconds": round(r.seconds, 1),
    }, indent=2))
    for rules, base, mutant in r.mismatches:
        print(f"\nrules {list(rules)}\n  base:   {base}\n  mutant: {mutant}")
    return 2 if r.mismatches else 0


if __name__ == "__main__":
    raise SystemExit(main())
