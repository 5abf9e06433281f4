"""Run the figure presets and write one CSV per preset.

    python scripts/reproduce_figures.py --out results --trials 100 --workers 4
    python scripts/reproduce_figures.py fig6 fig8 --trials 20
"""

import argparse
import logging
import time
from dataclasses import replace
from pathlib import Path

from earlyqnet.experiments import PRESETS, emit_results, run_sweep

log = logging.getLogger("reproduce")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("presets", nargs="*", default=list(PRESETS), help="subset of presets (default: all)")
    parser.add_argument("--out", default="results")
    parser.add_argument("--trials", type=int, default=100)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--workers", type=int, default=1)
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name in args.presets:
        cfg = replace(PRESETS[name], trials=args.trials, seed=args.seed)
        t0 = time.perf_counter()
        result = run_sweep(cfg, workers=args.workers)
        emit_results(result, "csv", out / f"{name}.csv")
        log.info("%s: %d points in %.1f s", name, len(result.points), time.perf_counter() - t0)


if __name__ == "__main__":
    main()
