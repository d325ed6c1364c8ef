"""How often the selected variant changes as timing noise grows.

For each noise level the same K sets are replayed; the script reports the
selected variant, its true (noise-free) speedup and how many variants the
MAD filter trimmed.
"""
import argparse

from replaytune.replay import NoiseModel
from replaytune.search import Context, SearchConfig, capture_once, run_search

LEVELS = ["off", "gaussian:0.005", "gaussian:0.02", "gaussian:0.05",
          "spikes:0.01:0.05:3", "spikes:0.02:0.2:3"]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("benchmark", nargs="?", default="fir")
    ap.add_argument("-K", type=int, default=40)
    ap.add_argument("-R", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    ctx = Context.create(args.benchmark)
    cap = capture_once(ctx)
    quiet = run_search(SearchConfig(args.benchmark, K=args.K, R=3), ctx, cap)
    true = {v.variant: v.speedup for v in quiet.variants if v.ok}
    print(f"{'noise':<22} {'best':>5} {'true speedup':>13} {'measured':>9} {'trimmed':>8}")
    for level in LEVELS:
        cfg = SearchConfig(args.benchmark, K=args.K, R=args.R, master_seed=args.seed,
                           noise=NoiseModel.parse(level))
        rep = run_search(cfg, ctx, cap)
        trimmed = sum(len(v.raw) - len(v.filtered) for v in rep.variants if v.ok)
        b = rep.best
        print(f"{level:<22} {b['variant']:>5} {true[b['variant']]:>13.4f} {b['speedup']:>9.4f} "
              f"{trimmed:>8}")


if __name__ == "__main__":
    main()
