"""Brute-force verification of the error decompositions and the
generalization-bound chain on random finite worlds.

Every expectation is an exact finite sum, so identities must hold to
rounding error and every inequality link must have nonnegative slack.

Usage:
    python scripts/verify_bound_chain.py --worlds 5000 --seed 0
"""

import argparse
import sys
import time

from mtcate.theory import run_world_sweep


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--worlds", type=int, default=1000)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--max-points", type=int, default=5)
    parser.add_argument("--max-support", type=int, default=4)
    args = parser.parse_args()

    started = time.perf_counter()
    summary = run_world_sweep(args.worlds, seed=args.seed,
                              max_points=args.max_points,
                              max_support=args.max_support)
    print(summary.table())
    print(f"elapsed               {time.perf_counter() - started:.1f}s")
    return 1 if (summary.residual_violations or summary.slack_violations) else 0


if __name__ == "__main__":
    sys.exit(main())
