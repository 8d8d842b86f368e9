#!/usr/bin/env python3
"""Run the five supervision-variant ablations on the fixture asset and print
the comparison table (convergence plus the structure-shift probe).

Usage: python3 scripts/ablation_table.py [--steps 200] [--out runs/ablation]
"""

import argparse
import sys

from mvreal.cli import RunConfig, cmd_ablate


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--steps", type=int, default=200)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="runs/ablation")
    args = parser.parse_args()

    config = RunConfig(seed=args.seed, out=args.out, ablate_steps=args.steps)
    code = cmd_ablate(config)
    print(f"table at {args.out}/ablation.csv")
    return code


if __name__ == "__main__":
    sys.exit(main())
