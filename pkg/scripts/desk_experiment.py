"""Full desk-scale experiment: SRTs, Lombard gains and optional evaluation.

    python scripts/desk_experiment.py [--config FILE] [--out DIR] [--empirical CSV [--listeners CSV]]

Without ``--empirical`` only the simulated SRT and gain tables are printed.
"""

import argparse
import dataclasses
import logging
from pathlib import Path

from fadesim.config import load_config
from fadesim.runner import emit_reports, evaluate, load_empirical, run_experiment, write_evaluation

ROOT = Path(__file__).resolve().parents[1]


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", type=Path, default=ROOT / "configs" / "default.json")
    p.add_argument("--out", type=Path, default=Path("results/desk"))
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--resume", action="store_true")
    p.add_argument("--empirical", type=Path)
    p.add_argument("--listeners", type=Path)
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = dataclasses.replace(load_config(args.config), workers=args.workers)
    bundle = run_experiment(cfg, args.out, resume=args.resume)
    emit_reports(bundle, args.out)

    print(f"\n{'condition':<40} {'SRT':>8} {'sigma':>6}  note")
    for r in bundle.results:
        if r.ok:
            note = "censored" if r.estimate.censored else f"train {r.estimate.winning_train_snr:+.0f} dB"
            print(f"{r.condition.id:<40} {r.estimate.srt_db:8.2f} {r.estimate.sigma_sim:6.2f}  {note}")
        else:
            print(f"{r.condition.id:<40} {'-':>8} {'-':>6}  {r.error}")
    if bundle.gains:
        print(f"\n{'Lombard gain':<40} {'gain':>8} {'sigma':>6}")
        for g in bundle.gains:
            print(f"{'|'.join((g.feature, g.speaker, g.language, g.noise)):<40} {g.gain:8.2f} {g.sigma:6.2f}")

    if args.empirical:
        panels = evaluate(bundle, load_empirical(args.empirical, args.listeners))
        write_evaluation(panels, args.out)
        print()
        for panel in panels:
            s = panel.summary
            print(
                f"{panel.feature:<8} {panel.name:<5} R={s.pearson_r:.3f} RMS={s.rms_db:.2f} "
                f"bias={s.bias_db:+.2f} chi2/nu={s.chi2_per_dof:.2f} (nu={panel.dof})"
            )


if __name__ == "__main__":
    main()
