"""Run the seeded search on every bundled benchmark and write the figure CSVs.

    python3 scripts/reproduce_figures.py --out results -K 100 -R 10
"""
import argparse
import json
import time
from pathlib import Path

from replaytune import benchmarks
from replaytune.replay import NoiseModel
from replaytune.report import summary_text, write_csvs
from replaytune.search import Context, SearchConfig, run_search, validate


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results")
    ap.add_argument("-K", type=int, default=100)
    ap.add_argument("-R", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--noise", default="gaussian:0.01")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--validate", type=int, default=20)
    ap.add_argument("--only", nargs="*", default=None, help="subset of benchmarks")
    args = ap.parse_args()

    out = Path(args.out)
    docs = []
    for name in args.only or benchmarks.names():
        t0 = time.time()
        ctx = Context.create(name)
        cfg = SearchConfig(name, K=args.K, R=args.R, noise=NoiseModel.parse(args.noise),
                           master_seed=args.seed, worker_count=args.workers)
        rep = run_search(cfg, ctx)
        validate(rep, ctx, args.validate)
        (out / name).mkdir(parents=True, exist_ok=True)
        (out / name / "report.json").write_text(rep.to_json())
        doc = json.loads(rep.to_json())
        docs.append(doc)
        print(summary_text(doc), end="")
        print(f"  ({time.time() - t0:.1f}s)")
    for p in write_csvs(docs, out):
        print("wrote", p)


if __name__ == "__main__":
    main()
