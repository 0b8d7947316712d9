"""Experiment matrix execution, aggregation and report emission."""

from __future__ import annotations

import csv
import json
import logging
import platform
import shutil
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, dump_config
from .corpus import Voice, load_manifest, make_synthetic_spec, split_train_test, synthesize_corpus
from .errors import ConfigError, NoSrtError, UndefinedCorrelationError
from .frontend import AudioBuffer
from .noise import gen_gated, gen_stationary_speech_shaped, load_noise
from .seeding import derive_seed
from .sim import RecognitionMatrix, SrtEstimate, run_sweep, srt_from_matrix, write_matrix_csv
from .stats import PairedSeries, combined_gain_sigma, evaluate_series, lombard_gain, sem

log = logging.getLogger(__name__)

SUMMARY_COLUMNS = (
    "condition",
    "feature",
    "speaker",
    "language",
    "effort",
    "noise",
    "status",
    "srt_db",
    "sigma_sim_db",
    "winning_train_snr",
    "censored",
    "error",
)
GAIN_COLUMNS = ("feature", "speaker", "language", "noise", "srt_plain_db", "srt_lombard_db", "gain_db", "sigma_db")
EVAL_COLUMNS = (
    "panel",
    "feature",
    "n",
    "dof",
    "pearson_r",
    "rms_db",
    "bias_db",
    "regression_intercept_db",
    "regression_slope",
    "chi2_per_dof",
)
SCATTER_COLUMNS = ("label", "sim_db", "emp_db", "sigma_sim_db", "sigma_emp_db", "identity_db", "regression_db")


@dataclass(frozen=True)
class Condition:
    feature: str
    speaker: str
    language: str
    effort: str
    noise: str

    @property
    def id(self) -> str:
        return "|".join((self.feature, self.speaker, self.language, self.effort, self.noise))

    @property
    def slug(self) -> str:
        return "__".join((self.feature, self.speaker, self.language, self.effort, self.noise))

    @property
    def material(self) -> tuple:
        return (self.speaker, self.language, self.effort)

    @property
    def key(self) -> tuple:
        """Key into empirical tables, which know nothing about features."""
        return (self.speaker, self.language, self.effort, self.noise)


@dataclass
class ConditionResult:
    condition: Condition
    matrix: RecognitionMatrix | None = None
    estimate: SrtEstimate | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.estimate is not None


@dataclass(frozen=True)
class GainResult:
    feature: str
    speaker: str
    language: str
    noise: str
    srt_plain: float
    srt_lombard: float
    gain: float
    sigma: float


@dataclass
class ResultBundle:
    config: ExperimentConfig
    results: list
    gains: list = field(default_factory=list)

    @property
    def failed(self) -> list:
        return [r for r in self.results if not r.ok]


# -- experiment assembly --------------------------------------------------------


def _materials(cfg: ExperimentConfig):
    """Train/test utterance lists per (speaker, language, effort)."""
    grammar = cfg.grammar()
    c = cfg.corpus
    out = {}
    if c.manifest is not None:
        manifest = load_manifest(c.manifest)
        if manifest.grammar != grammar and isinstance(c.grammar, dict):
            raise ConfigError("manifest grammar differs from the configured grammar")
        train, test = split_train_test(manifest, c.train_fraction, derive_seed(cfg.seed, "split"))
        for key in manifest.conditions():
            tr = [(e.load_audio(), e.label) for e in train.entries if e.condition == key]
            te = [(e.load_audio(), e.label) for e in test.entries if e.condition == key]
            out[key] = (tr, te, manifest.grammar)
        return out
    for lang, lcfg in sorted(cfg.languages.items()):
        for spk, scfg in sorted(cfg.speakers.items()):
            for eff, ecfg in sorted(cfg.efforts.items()):
                voice = Voice(
                    scfg.f0_scale * ecfg.f0_scale,
                    scfg.formant_scale * ecfg.formant_scale,
                    scfg.duration_scale * ecfg.duration_scale,
                    scfg.tilt_db_per_octave + ecfg.tilt_db_per_octave,
                )
                spec = make_synthetic_spec(
                    grammar, lcfg.tonal, derive_seed(cfg.seed, "recipes", lang), voice, jitter=c.jitter
                )
                sets = []
                for role, n in (("train", c.train_sentences), ("test", c.test_sentences)):
                    corpus = synthesize_corpus(spec, n, derive_seed(cfg.seed, "corpus", spk, lang, eff, role), spk, lang, eff)
                    sets.append([(e.audio, e.label) for e in corpus.entries])
                out[(spk, lang, eff)] = (sets[0], sets[1], grammar)
    return out


def _noises(cfg: ExperimentConfig, materials: dict) -> dict:
    reference = None
    out = {}
    ordered = [n for n in cfg.noises if n.kind != "gated"] + [n for n in cfg.noises if n.kind == "gated"]
    for n in ordered:
        if n.kind == "file":
            out[n.label] = load_noise(n.path, n.label)
        elif n.kind == "stationary":
            if reference is None:
                speech = [a for key in sorted(materials) for a, _ in materials[key][0]]
                reference = AudioBuffer(np.concatenate([a.samples for a in speech]), speech[0].sample_rate)
            out[n.label] = gen_stationary_speech_shaped(reference, n.duration_s, derive_seed(cfg.seed, "noise", n.label), n.label)
        else:
            out[n.label] = gen_gated(out[n.base], n.max_gap_ms, derive_seed(cfg.seed, "noise", n.label), n.label)
    return out


def conditions(cfg: ExperimentConfig, materials: dict | None = None) -> list:
    keys = sorted(materials) if materials is not None else [
        (s, l, e) for l in sorted(cfg.languages) for s in sorted(cfg.speakers) for e in sorted(cfg.efforts)
    ]
    return [
        Condition(f.name, s, l, e, n.label)
        for f in cfg.features
        for (s, l, e) in sorted(keys, key=lambda k: (k[1], k[0], k[2]))
        for n in cfg.noises
    ]


def cache_dir(cfg: ExperimentConfig, out_dir) -> Path:
    return Path(out_dir) / "cache" / cfg.hash()


def run_condition(cfg: ExperimentConfig, cond: Condition, materials, noises, out_dir=None, resume=False):
    feature = next(f for f in cfg.features if f.name == cond.feature)
    train, test, grammar = materials[cond.material]
    ckpt = cache_dir(cfg, out_dir) / cond.slug if out_dir is not None else None
    if ckpt is not None and not resume and ckpt.exists():
        shutil.rmtree(ckpt)
    result = ConditionResult(cond)
    try:
        if not train or not test:
            raise ValueError(f"condition {cond.id} has no training or no test material")
        result.matrix = run_sweep(
            train,
            test,
            cfg.grid,
            feature.spec(cfg.frontend),
            noises[cond.noise],
            derive_seed(cfg.seed, "sweep", cond.id),
            grammar,
            cfg.sweep,
            workers=cfg.workers,
            checkpoint_dir=ckpt,
        )
        result.estimate = srt_from_matrix(result.matrix, cfg.grid, cfg.criterion, cfg.interpolation)
    except NoSrtError as exc:
        result.error = f"unmeasurable: {exc}"
    except Exception as exc:  # recorded per condition, surfaced by the exit status
        log.exception("condition %s failed", cond.id)
        result.error = f"{type(exc).__name__}: {exc}"
    return result


def lombard_gains(cfg: ExperimentConfig, results: list) -> list:
    by_id = {r.condition.id: r for r in results if r.ok}
    gains = []
    for r in results:
        c = r.condition
        if c.effort != cfg.plain_effort or not r.ok:
            continue
        other = Condition(c.feature, c.speaker, c.language, cfg.lombard_effort, c.noise)
        if other.id not in by_id:
            continue
        p, q = r.estimate, by_id[other.id].estimate
        gains.append(
            GainResult(
                c.feature,
                c.speaker,
                c.language,
                c.noise,
                p.srt_db,
                q.srt_db,
                lombard_gain(p.srt_db, q.srt_db),
                combined_gain_sigma(p.sigma_sim, q.sigma_sim),
            )
        )
    return gains


def run_experiment(cfg: ExperimentConfig, out_dir=None, resume: bool = False, only=None) -> ResultBundle:
    """Run every condition (or those whose id is in ``only``)."""
    cfg.validate()
    materials = _materials(cfg)
    noises = _noises(cfg, materials)
    results = []
    for cond in conditions(cfg, materials):
        if only is not None and cond.id not in only:
            continue
        log.info("condition %s", cond.id)
        results.append(run_condition(cfg, cond, materials, noises, out_dir, resume))
    return ResultBundle(cfg, results, lombard_gains(cfg, results))


# -- reports ----------------------------------------------------------------------


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return repr(round(x, 10))
    return str(x)


def _write_csv(path: Path, header, rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def summary_rows(bundle: ResultBundle):
    for r in bundle.results:
        c, e = r.condition, r.estimate
        yield (
            c.id,
            c.feature,
            c.speaker,
            c.language,
            c.effort,
            c.noise,
            "ok" if r.ok else "failed",
            e.srt_db if e else None,
            e.sigma_sim if e else None,
            e.winning_train_snr if e else None,
            e.censored if e else None,
            r.error,
        )


def versions() -> dict:
    import numba
    import scipy

    return {
        "fadesim": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
    }


def emit_reports(bundle: ResultBundle, out_dir) -> list:
    """Matrix CSVs, summary and gain tables, and the run manifest."""
    out = Path(out_dir)
    written = []
    for r in bundle.results:
        if r.matrix is not None:
            written.append(write_matrix_csv(r.matrix, out / "matrices" / f"{r.condition.slug}.csv"))
    written.append(_write_csv(out / "summary.csv", SUMMARY_COLUMNS, summary_rows(bundle)))
    written.append(
        _write_csv(
            out / "gains.csv",
            GAIN_COLUMNS,
            ((g.feature, g.speaker, g.language, g.noise, g.srt_plain, g.srt_lombard, g.gain, g.sigma) for g in bundle.gains),
        )
    )
    manifest = {
        "config": bundle.config.to_dict(),
        "config_hash": bundle.config.hash(),
        "seed": bundle.config.seed,
        "versions": versions(),
        "conditions": {r.condition.id: ("ok" if r.ok else r.error) for r in bundle.results},
    }
    path = out / "run_manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    written.append(path)
    (out / "config.json").write_text(dump_config(bundle.config))
    return written


def load_run_manifest(path) -> ExperimentConfig:
    data = json.loads(Path(path).read_text())
    return ExperimentConfig.from_dict(data["config"])


def load_summary(out_dir) -> list:
    """Condition results (estimates only) from a finished run's summary table."""
    results = []
    with (Path(out_dir) / "summary.csv").open(newline="") as fh:
        for row in csv.DictReader(fh):
            cond = Condition(row["feature"], row["speaker"], row["language"], row["effort"], row["noise"])
            est = None
            if row["status"] == "ok":
                est = SrtEstimate(
                    float(row["srt_db"]),
                    float(row["sigma_sim_db"]),
                    float(row["winning_train_snr"]),
                    (),
                    row["censored"] == "true",
                )
            results.append(ConditionResult(cond, None, est, row["error"] or None))
    return results


# -- evaluation against listener data -------------------------------------------


@dataclass(frozen=True)
class EmpiricalEntry:
    srt_db: float
    sem_db: float
    n_listeners: int


@dataclass
class EmpiricalTable:
    """Mean SRT per (speaker, language, effort, noise), optionally per listener.

    ``listeners`` maps a condition key to {listener id: SRT}.
    """

    entries: dict
    listeners: dict = field(default_factory=dict)

    def gain(self, plain_key, lombard_key):
        """(gain, sem): per-listener gains averaged if available."""
        a, b = self.listeners.get(plain_key), self.listeners.get(lombard_key)
        if a and b and set(a) == set(b):
            ids = sorted(a)
            gains = np.array([lombard_gain(a[i], b[i]) for i in ids])
            spread = float(np.std(gains, ddof=1)) if len(ids) > 1 else 0.0
            return float(gains.mean()), sem(spread, len(ids))
        p, q = self.entries[plain_key], self.entries[lombard_key]
        return lombard_gain(p.srt_db, q.srt_db), combined_gain_sigma(p.sem_db, q.sem_db)


EMPIRICAL_COLUMNS = ("speaker", "language", "effort", "noise", "srt_db", "sem_db", "n_listeners")
LISTENER_COLUMNS = ("listener", "speaker", "language", "effort", "noise", "srt_db")


def load_empirical(path, listeners_path=None) -> EmpiricalTable:
    """Read listener SRTs.

    ``path`` is a CSV with columns speaker, language, effort, noise,
    srt_db, sem_db, n_listeners (one row per condition). The optional
    ``listeners_path`` CSV has columns listener, speaker, language, effort,
    noise, srt_db; when given, Lombard gains are averaged per listener.
    """
    entries = {}
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(EMPIRICAL_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ConfigError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            key = tuple(row[c] for c in EMPIRICAL_COLUMNS[:4])
            e = EmpiricalEntry(float(row["srt_db"]), float(row["sem_db"]), int(row["n_listeners"]))
            if e.sem_db < 0 or e.n_listeners < 1:
                raise ConfigError(f"{path}: invalid sem or listener count for {key}")
            entries[key] = e
    listeners = {}
    if listeners_path is not None:
        with Path(listeners_path).open(newline="") as fh:
            reader = csv.DictReader(fh)
            missing = set(LISTENER_COLUMNS) - set(reader.fieldnames or ())
            if missing:
                raise ConfigError(f"{listeners_path}: missing columns {sorted(missing)}")
            for row in reader:
                key = tuple(row[c] for c in LISTENER_COLUMNS[1:5])
                listeners.setdefault(key, {})[row["listener"]] = float(row["srt_db"])
    return EmpiricalTable(entries, listeners)


@dataclass
class Panel:
    name: str  # "srt" or "gain"
    feature: str
    series: PairedSeries
    dof: int
    summary: object = None  # EvalSummary, or None when undefined
    note: str = ""


def evaluate(bundle: ResultBundle, emp: EmpiricalTable) -> list:
    """One SRT panel and one gain panel per feature type."""
    ok = [r for r in bundle.results if r.ok]
    unmatched = sorted({r.condition.key for r in ok} - set(emp.entries))
    extra = sorted(set(emp.entries) - {r.condition.key for r in ok})
    if unmatched or extra:
        parts = []
        if unmatched:
            parts.append("no empirical data for " + ", ".join("|".join(k) for k in unmatched))
        if extra:
            parts.append("no simulation for " + ", ".join("|".join(k) for k in extra))
        raise ConfigError("condition mismatch: " + "; ".join(parts))
    cfg = bundle.config
    panels = []
    for feature in [f.name for f in cfg.features]:
        rows = [r for r in ok if r.condition.feature == feature]
        if not rows:
            continue
        srt = PairedSeries(
            [r.estimate.srt_db for r in rows],
            [emp.entries[r.condition.key].srt_db for r in rows],
            [r.estimate.sigma_sim for r in rows],
            [emp.entries[r.condition.key].sem_db for r in rows],
            [r.condition.id for r in rows],
        )
        panels.append(_panel("srt", feature, srt, len(rows)))
        gains = [g for g in bundle.gains if g.feature == feature]
        if gains:
            emp_gain = [
                emp.gain((g.speaker, g.language, cfg.plain_effort, g.noise), (g.speaker, g.language, cfg.lombard_effort, g.noise))
                for g in gains
            ]
            series = PairedSeries(
                [g.gain for g in gains],
                [e[0] for e in emp_gain],
                [g.sigma for g in gains],
                [e[1] for e in emp_gain],
                ["|".join((g.feature, g.speaker, g.language, g.noise)) for g in gains],
            )
            # each gain consumes two thresholds, so the thresholds' dof are halved
            n_thresholds = 2 * len(gains)
            panels.append(_panel("gain", feature, series, max(1, n_thresholds // 2)))
    return panels


def _panel(name, feature, series, dof) -> Panel:
    p = Panel(name, feature, series, dof)
    try:
        p.summary = evaluate_series(series, dof)
    except (UndefinedCorrelationError, ValueError) as exc:
        p.note = str(exc)
    return p


def write_evaluation(panels: list, out_dir) -> list:
    out = Path(out_dir)
    rows = []
    written = []
    for p in panels:
        s = p.summary
        rows.append(
            (p.name, p.feature, len(p.series), p.dof)
            + (
                (s.pearson_r, s.rms_db, s.bias_db, s.regression_intercept_db, s.regression_slope, s.chi2_per_dof)
                if s
                else (None,) * 6
            )
        )
        slope, intercept = (s.regression_slope, s.regression_intercept_db) if s else (None, None)
        scatter = []
        for lab, x, y, sx, sy in zip(p.series.labels, p.series.sim, p.series.emp, p.series.sigma_sim, p.series.sigma_emp):
            scatter.append((lab, x, y, sx, sy, y, None if slope is None else slope * y + intercept))
        written.append(_write_csv(out / f"scatter_{p.feature}_{p.name}.csv", SCATTER_COLUMNS, scatter))
    written.insert(0, _write_csv(out / "evaluation.csv", EVAL_COLUMNS, rows))
    return written
