"""Code size, runtime and CF-Log size for the corpus, with and without the
loop optimization. Writes bench.txt and bench.csv to the given directory."""

import argparse
from pathlib import Path

from tinycfa import corpus
from tinycfa.cli import bench_csv, bench_row, render_bench


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results")
    args = ap.parse_args()
    rows = [bench_row(name, corpus.source(name)) for name in corpus.NAMES]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table = render_bench(rows)
    (out / "bench.txt").write_text(table)
    (out / "bench.csv").write_text(bench_csv(rows))
    print(table, end="")


if __name__ == "__main__":
    main()
