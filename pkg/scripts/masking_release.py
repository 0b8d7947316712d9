"""Masking release of each feature type on the desk-scale synthetic corpus.

Runs every condition of a config (``configs/acceptance.json`` by default),
prints the SRT per feature and masker, the release (stationary minus gated
SRT) with its combined simulation sigma, and writes the usual reports.

    python scripts/masking_release.py [--config FILE] [--out DIR] [--workers N]
"""

import argparse
import dataclasses
import logging
import math
import time
from pathlib import Path

from fadesim.config import load_config
from fadesim.runner import emit_reports, run_experiment

ROOT = Path(__file__).resolve().parents[1]


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", type=Path, default=ROOT / "configs" / "acceptance.json")
    p.add_argument("--out", type=Path, default=Path("results/masking_release"))
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--stationary", default="icra1")
    p.add_argument("--gated", default="icra5-250")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = dataclasses.replace(load_config(args.config), workers=args.workers)
    t0 = time.perf_counter()
    bundle = run_experiment(cfg, args.out)
    emit_reports(bundle, args.out)
    print(f"\n{len(bundle.results)} conditions in {time.perf_counter() - t0:.0f} s -> {args.out}\n")

    est = {(r.condition.feature, r.condition.noise): r.estimate for r in bundle.results if r.ok}
    for r in bundle.failed:
        print(f"FAILED {r.condition.id}: {r.error}")
    print(f"{'feature':<10} {args.stationary:>9} {args.gated:>10} {'release':>8} {'2*sigma':>8}")
    for f in cfg.features:
        s, g = est.get((f.name, args.stationary)), est.get((f.name, args.gated))
        if s is None or g is None:
            continue
        sigma = math.hypot(s.sigma_sim, g.sigma_sim)
        print(f"{f.name:<10} {s.srt_db:9.2f} {g.srt_db:10.2f} {s.srt_db - g.srt_db:8.2f} {2 * sigma:8.2f}")


if __name__ == "__main__":
    main()
