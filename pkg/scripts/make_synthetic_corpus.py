"""Write a synthetic FASTA genome and GC/AT classification CSVs for smoke runs.

    python scripts/make_synthetic_corpus.py --out data/ --bp 50000
"""
import argparse
import textwrap
from pathlib import Path

from had.synthetic import gc_at_dataset, markov_genome


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", type=Path, default=Path("data"))
    ap.add_argument("--bp", type=int, default=50_000)
    ap.add_argument("--records", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--n-labeled", type=int, default=200)
    ap.add_argument("--labeled-length", type=int, default=120)
    args = ap.parse_args(argv)
    args.out.mkdir(parents=True, exist_ok=True)
    with open(args.out / "genome.fa", "w") as fh:
        for r in range(args.records):
            fh.write(f">synthetic_{r}\n")
            fh.write(textwrap.fill(markov_genome(args.bp, seed=args.seed + r), 80) + "\n")
    for split, offset in (("train", 0), ("test", 1)):
        rows = gc_at_dataset(args.n_labeled, args.labeled_length, seed=args.seed + 1000 + offset)
        with open(args.out / f"gcat_{split}.csv", "w") as fh:
            fh.write("sequence,label\n")
            fh.writelines(f"{s},{y}\n" for s, y in rows)
    print(f"wrote {args.out}/genome.fa and {args.out}/gcat_{{train,test}}.csv")


if __name__ == "__main__":
    main()
