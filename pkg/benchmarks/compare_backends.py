"""Compare the numpy and numba kernel backends on Toeplitz-like products.

Usage: python3 benchmarks/compare_backends.py [--n 256,1024,4096] [--rank 2] [--batch 1]
"""

import argparse

from ldr.bench import compare_backends


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", default="256,1024,4096")
    p.add_argument("--rank", type=int, default=2)
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--trials", type=int, default=15)
    args = p.parse_args()
    rows = compare_backends([int(x) for x in args.n.split(",")], args.rank, args.batch, args.trials)
    print(f"{'backend':8} {'scenario':20} {'n':>6} {'median_us':>10}")
    for row in rows:
        print(f"{row['backend']:8} {row['scenario']:20} {row['n']:>6} {row['median_ns'] / 1e3:>10.1f}")


if __name__ == "__main__":
    main()
