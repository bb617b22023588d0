"""Chunk-wise vs sequential GDN throughput, plus attention scaling, as CSV.

    python scripts/bench_gdn.py --L 1024 4096 --d 64 --chunks 1 16 64 > gdn.csv
"""
import argparse
import os
import sys

import torch

from had.bench import bench_attention, bench_gdn, write_csv


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--L", type=int, nargs="+", default=[1024, 4096])
    ap.add_argument("--d", type=int, default=64)
    ap.add_argument("--chunks", type=int, nargs="+", default=[1, 16, 64])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--warmup", type=int, default=2)
    ap.add_argument("--attention", action="store_true", help="also time exact self-attention at each L")
    args = ap.parse_args(argv)
    torch.set_num_threads(int(os.environ.get("HAD_THREADS", "1") or 1))
    results = bench_gdn(args.L, args.d, args.chunks, args.repeats, args.warmup)
    if args.attention:
        results += bench_attention(args.L, args.d, repeats=args.repeats, warmup=args.warmup)
    write_csv(results, sys.stdout)


if __name__ == "__main__":
    main()
