"""Command line interface.

Exit status: 0 success, 1 at least one condition failed, 2 configuration error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .config import ExperimentConfig, dump_config, load_config
from .errors import ConfigError, NoSrtError
from .features import FeatureSpec, MfccConfig, extract_features, write_feature_csv
from .frontend import read_wav
from .noise import NoiseSource, STATIONARY, export_noise, gen_gated, gen_stationary_speech_shaped
from .runner import emit_reports, evaluate, load_empirical, load_run_manifest, load_summary, run_experiment, write_evaluation, ResultBundle, lombard_gains
from .sim import read_matrix_csv, srt_from_matrix

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2

log = logging.getLogger("fadesim")


def _effective_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else ExperimentConfig()
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "workers", None) is not None:
        changes["workers"] = args.workers
    if getattr(args, "out", None) is not None:
        changes["output_dir"] = str(args.out)
    return dataclasses.replace(cfg, **changes).validate() if changes else cfg.validate()


def cmd_run(args) -> int:
    cfg = _effective_config(args)
    out = Path(cfg.output_dir)
    bundle = run_experiment(cfg, out, resume=args.resume)
    for path in emit_reports(bundle, out):
        log.info("wrote %s", path)
    if cfg.empirical:
        panels = evaluate(bundle, load_empirical(cfg.empirical, cfg.empirical_listeners))
        write_evaluation(panels, out)
    for r in bundle.failed:
        print(f"FAILED {r.condition.id}: {r.error}", file=sys.stderr)
    ok = len(bundle.results) - len(bundle.failed)
    print(f"{ok}/{len(bundle.results)} conditions finished; results in {out}")
    return EXIT_FAILED if bundle.failed else EXIT_OK


def cmd_evaluate(args) -> int:
    out = Path(args.out)
    cfg = load_run_manifest(out / "run_manifest.json")
    empirical = args.empirical or cfg.empirical
    if empirical is None:
        raise ConfigError("no empirical table given (--empirical or config 'empirical')")
    results = load_summary(out)
    bundle = ResultBundle(cfg, results, lombard_gains(cfg, results))
    panels = evaluate(bundle, load_empirical(empirical, args.listeners or cfg.empirical_listeners))
    write_evaluation(panels, out)
    for p in panels:
        s = p.summary
        if s is None:
            print(f"{p.feature:>8} {p.name:<5} n={len(p.series)} undefined ({p.note})")
        else:
            print(
                f"{p.feature:>8} {p.name:<5} n={s.n} R={s.pearson_r:.3f} RMS={s.rms_db:.2f} dB "
                f"bias={s.bias_db:+.2f} dB chi2/nu={s.chi2_per_dof:.2f} (nu={s.dof})"
            )
    return EXIT_OK


def cmd_srt(args) -> int:
    if args.matrix:
        m = read_matrix_csv(args.matrix)
        try:
            est = srt_from_matrix(m, criterion=args.criterion, method=args.method)
        except NoSrtError as exc:
            print(f"unmeasurable: {exc}", file=sys.stderr)
            return EXIT_FAILED
        print(json.dumps(est.to_dict(), indent=2, sort_keys=True))
        return EXIT_OK
    if not args.condition:
        raise ConfigError("srt needs --matrix or --condition")
    cfg = _effective_config(args)
    bundle = run_experiment(cfg, Path(cfg.output_dir), resume=args.resume, only={args.condition})
    if not bundle.results:
        raise ConfigError(f"no condition {args.condition!r} in this configuration")
    r = bundle.results[0]
    if not r.ok:
        print(f"FAILED {r.condition.id}: {r.error}", file=sys.stderr)
        return EXIT_FAILED
    print(json.dumps(r.estimate.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_features(args) -> int:
    audio = read_wav(args.wav)
    spec = FeatureSpec(args.kind, mfcc=MfccConfig(delta_orders=args.deltas), normalize=not args.raw)
    fm = extract_features(audio, spec)
    write_feature_csv(fm, args.output)
    print(f"{fm.num_frames} frames x {fm.dim} coefficients -> {args.output}")
    return EXIT_OK


def cmd_noise(args) -> int:
    if args.kind == "stationary":
        if not args.reference:
            raise ConfigError("stationary noise needs --reference")
        noise = gen_stationary_speech_shaped(read_wav(args.reference), args.duration, args.seed, args.label or "icra1")
    else:
        if not args.base:
            raise ConfigError("gated noise needs --base")
        base = NoiseSource(STATIONARY, read_wav(args.base), "base")
        noise = gen_gated(base, args.max_gap_ms, args.seed, args.label or "icra5-250")
    export_noise(noise, args.output)
    print(f"{noise.label}: {len(noise.audio) / noise.audio.sample_rate:.2f} s -> {args.output}")
    return EXIT_OK


def cmd_print_config(args) -> int:
    sys.stdout.write(dump_config(_effective_config(args)))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fadesim", description="Simulate speech recognition thresholds with an ASR listener.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("--config", type=Path, help="JSON experiment file (defaults if omitted)")
        sp.add_argument("--seed", type=int, help="override the master seed")
        sp.add_argument("--workers", type=int, help="worker processes")
        if out:
            sp.add_argument("--out", type=Path, help="output directory")

    sp = sub.add_parser("run", help="run every condition of an experiment")
    common(sp)
    sp.add_argument("--resume", action="store_true", help="reuse cached models and finished test columns")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("evaluate", help="compare a finished run with listener data")
    sp.add_argument("--out", type=Path, required=True, help="directory of a finished run")
    sp.add_argument("--empirical", type=Path, help="per-condition SRT table (CSV)")
    sp.add_argument("--listeners", type=Path, help="per-listener SRT table (CSV)")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("srt", help="SRT of one matrix file or one configured condition")
    common(sp)
    sp.add_argument("--matrix", type=Path, help="recognition matrix CSV")
    sp.add_argument("--condition", help="condition id, e.g. SGBFB|s1|eng|plain|icra1")
    sp.add_argument("--criterion", type=float, default=0.5)
    sp.add_argument("--method", choices=("linear", "logistic"), default="linear")
    sp.add_argument("--resume", action="store_true")
    sp.set_defaults(func=cmd_srt)

    sp = sub.add_parser("features", help="dump features of a WAV file to CSV")
    sp.add_argument("--wav", type=Path, required=True)
    sp.add_argument("--kind", choices=("MFCC", "SGBFB"), default="SGBFB")
    sp.add_argument("--deltas", type=int, choices=(0, 1, 2), default=2, help="MFCC derivative orders")
    sp.add_argument("--raw", action="store_true", help="skip mean/variance normalization")
    sp.add_argument("--output", type=Path, required=True)
    sp.set_defaults(func=cmd_features)

    sp = sub.add_parser("noise", help="generate a surrogate masker")
    sp.add_argument("--kind", choices=("stationary", "gated"), required=True)
    sp.add_argument("--reference", type=Path, help="speech whose spectrum the stationary noise copies")
    sp.add_argument("--base", type=Path, help="noise to gate")
    sp.add_argument("--duration", type=float, default=30.0)
    sp.add_argument("--max-gap-ms", type=float, default=250.0)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--label")
    sp.add_argument("--output", type=Path, required=True)
    sp.set_defaults(func=cmd_noise)

    sp = sub.add_parser("print-config", help="print the effective configuration")
    common(sp)
    sp.set_defaults(func=cmd_print_config)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
