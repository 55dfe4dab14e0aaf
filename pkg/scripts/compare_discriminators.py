"""Train one adapted run per discriminator variant, changing only the
variant switch, and print the parameter/mIoU comparison table."""

import argparse
import sys
import time

from rtda.benchmark import BenchmarkSettings, compare_variants, variant_table


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--iters", type=int, default=2000)
    parser.add_argument("--quiet", action="store_true")
    args = parser.parse_args()

    settings = BenchmarkSettings(max_iter=args.iters)
    log = (lambda msg: None) if args.quiet else print

    t0 = time.time()
    rows = compare_variants(seed=args.seed, settings=settings, log=log)
    print()
    print(variant_table(rows))
    print(f"total wall time {time.time() - t0:.0f}s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
