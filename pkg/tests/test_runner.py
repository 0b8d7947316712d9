import csv
import dataclasses
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fadesim.asr import HmmTopology, TrainConfig
from fadesim.cli import main
from fadesim.config import (
    CorpusConfig,
    ExperimentConfig,
    FeatureConfig,
    NoiseConfig,
    VoiceConfig,
    dump_config,
    load_config,
)
from fadesim.corpus import make_synthetic_spec, synthesize_corpus, write_manifest, CorpusManifest
from fadesim.errors import ConfigError
from fadesim.features import MfccConfig
from fadesim.runner import (
    EMPIRICAL_COLUMNS,
    LISTENER_COLUMNS,
    ResultBundle,
    conditions,
    emit_reports,
    evaluate,
    load_empirical,
    load_run_manifest,
    load_summary,
    lombard_gains,
    run_experiment,
    write_evaluation,
)


def tiny_config(**kw) -> ExperimentConfig:
    base = ExperimentConfig(
        seed=11,
        corpus=CorpusConfig(train_sentences=16, test_sentences=8),
        noises=(NoiseConfig("icra1", "stationary", duration_s=5.0), NoiseConfig("icra5-250", "gated", base="icra1", duration_s=5.0)),
        features=(FeatureConfig("SGBFB", "SGBFB"), FeatureConfig("MFCC", "MFCC", mfcc=MfccConfig(delta_orders=0))),
        train_snrs=(0.0, 20.0),
        test_snrs=(-60.0, -20.0, 0.0, 20.0, 60.0),
        topology=HmmTopology(states_per_word=4, silence_states=2),
        training=TrainConfig(max_iterations=3),
    )
    return dataclasses.replace(base, **kw).validate()


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = tiny_config(output_dir=str(out))
    bundle = run_experiment(cfg, out)
    emit_reports(bundle, out)
    return cfg, bundle, out


def _write_table(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        w.writerows(rows)
    return path


def _self_table(bundle, tmp_path, offset=0.0, name="emp.csv"):
    rows = []
    for r in bundle.results:
        if r.ok and r.condition.feature == bundle.config.features[0].name:
            c = r.condition
            rows.append((c.speaker, c.language, c.effort, c.noise, r.estimate.srt_db + offset, max(r.estimate.sigma_sim, 0.1), 10))
    return _write_table(tmp_path / name, EMPIRICAL_COLUMNS, rows)


# -- configuration ------------------------------------------------------------------------


def test_default_config_has_eight_conditions():
    cfg = ExperimentConfig().validate()
    conds = conditions(cfg)
    assert len(conds) == 8
    assert len({c.id for c in conds}) == 8
    assert {c.feature for c in conds} == {"SGBFB", "MFCC"}
    assert {c.effort for c in conds} == {"plain", "lombard"}


def test_four_speaker_two_language_config_has_64_conditions():
    cfg = ExperimentConfig(
        speakers={"f1": VoiceConfig(), "m1": VoiceConfig(f0_scale=0.6)},
        languages={"deu": ExperimentConfig().languages["eng"], "zho": ExperimentConfig().languages["eng"]},
        noises=(NoiseConfig("icra1", "stationary"), NoiseConfig("icra5-250", "gated", base="icra1")),
    )
    cfg = dataclasses.replace(cfg, speakers={**cfg.speakers, "f2": VoiceConfig(), "m2": VoiceConfig()})
    assert len(conditions(cfg.validate())) == 2 * 4 * 2 * 2 * 2


def test_config_round_trip(tmp_path):
    cfg = tiny_config()
    path = tmp_path / "c.json"
    path.write_text(dump_config(cfg))
    back = load_config(path)
    assert back == cfg
    assert back.hash() == cfg.hash()


def test_hash_ignores_scheduling_fields():
    cfg = tiny_config()
    assert dataclasses.replace(cfg, workers=4, output_dir="elsewhere").hash() == cfg.hash()


@settings(max_examples=25)
@given(
    st.sampled_from(["seed", "pad_ms", "noise_level_dbfs", "criterion", "train", "jitter", "states", "floor"]),
    st.floats(0.01, 0.3),
)
def test_hash_changes_with_any_numeric_parameter(field, delta):
    cfg = tiny_config()
    if field == "seed":
        other = dataclasses.replace(cfg, seed=cfg.seed + 1)
    elif field == "train":
        other = dataclasses.replace(cfg, train_snrs=(0.0, 20.0 + delta))
    elif field == "jitter":
        other = dataclasses.replace(cfg, corpus=dataclasses.replace(cfg.corpus, jitter=cfg.corpus.jitter + delta))
    elif field == "states":
        other = dataclasses.replace(cfg, topology=HmmTopology(states_per_word=5, silence_states=2))
    elif field == "floor":
        other = dataclasses.replace(cfg, training=dataclasses.replace(cfg.training, variance_floor_ratio=1e-3 + delta))
    else:
        other = dataclasses.replace(cfg, **{field: getattr(cfg, field) + delta})
    assert other.hash() != cfg.hash()


@pytest.mark.parametrize(
    "change, match",
    [
        (dict(seed="x"), "seed"),
        (dict(workers=0), "workers"),
        (dict(features=()), "condition"),
        (dict(features=(FeatureConfig("A", "MFCC"), FeatureConfig("A", "SGBFB"))), "unique"),
        (dict(features=(FeatureConfig("A", "PLP"),)), "kind"),
        (dict(noises=(NoiseConfig("g", "gated", base="nope"),)), "base"),
        (dict(noises=(NoiseConfig("f", "file", path="/does/not/exist.wav"),)), "does not exist"),
        (dict(criterion=1.0), "criterion"),
        (dict(interpolation="spline"), "interpolation"),
        (dict(test_snrs=(0.0, -3.0)), "increasing"),
        (dict(corpus=CorpusConfig(manifest="/no/manifest.tsv")), "manifest"),
        (dict(corpus=CorpusConfig(train_fraction=1.0)), "train_fraction"),
        (dict(corpus=CorpusConfig(grammar="huge")), "unknown grammar"),
        (dict(empirical="/no/table.csv"), "empirical"),
        (dict(speakers={"a|b": VoiceConfig()}), "may not contain"),
    ],
)
def test_config_validation_errors(change, match):
    with pytest.raises(ConfigError, match=match):
        dataclasses.replace(ExperimentConfig(), **change).validate()


def test_config_file_errors(tmp_path):
    with pytest.raises(ConfigError, match="does not exist"):
        load_config(tmp_path / "none.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(bad)
    bad.write_text(json.dumps({"seed": 1, "colour": "blue"}))
    with pytest.raises(ConfigError, match="colour"):
        load_config(bad)
    bad.write_text(json.dumps({"topology": {"states_per_word": 0}}))
    with pytest.raises(ConfigError):
        load_config(bad)


# -- running ------------------------------------------------------------------------------


def test_tiny_run_covers_every_condition(tiny_run):
    cfg, bundle, out = tiny_run
    assert len(bundle.results) == 8
    for r in bundle.results:
        assert r.ok or r.error
    assert not bundle.failed, [r.error for r in bundle.failed]
    assert len(list((out / "matrices").glob("*.csv"))) == 8
    assert (out / "summary.csv").exists() and (out / "gains.csv").exists()
    assert len(bundle.gains) == 4
    for g in bundle.gains:
        assert g.gain == pytest.approx(g.srt_plain - g.srt_lombard)


def test_run_manifest_round_trip(tiny_run):
    cfg, _, out = tiny_run
    data = json.loads((out / "run_manifest.json").read_text())
    assert data["config_hash"] == cfg.hash() and data["seed"] == cfg.seed
    assert set(data["versions"]) >= {"fadesim", "numpy", "scipy", "python"}
    assert load_run_manifest(out / "run_manifest.json") == cfg
    assert len(data["conditions"]) == 8


def test_summary_reload(tiny_run):
    _, bundle, out = tiny_run
    back = load_summary(out)
    assert [r.condition for r in back] == [r.condition for r in bundle.results]
    for a, b in zip(back, bundle.results):
        assert a.estimate.srt_db == pytest.approx(b.estimate.srt_db, abs=1e-9)


def test_rerun_and_worker_count_give_identical_tables(tiny_run, tmp_path):
    cfg, _, out = tiny_run
    other = tmp_path / "again"
    emit_reports(run_experiment(dataclasses.replace(cfg, workers=2), other), other)
    for name in ("summary.csv", "gains.csv"):
        assert (other / name).read_bytes() == (out / name).read_bytes()
    for f in (out / "matrices").glob("*.csv"):
        assert (other / "matrices" / f.name).read_bytes() == f.read_bytes()


def test_resume_after_interruption_matches(tiny_run, tmp_path):
    cfg, _, out = tiny_run
    run_dir = tmp_path / "resume"
    first = run_experiment(cfg, run_dir)
    # simulate an interrupted run: drop some checkpoints of every condition
    cache = run_dir / "cache" / cfg.hash()
    for cond_dir in cache.iterdir():
        for p in sorted(cond_dir.glob("column_*.json"))[::2]:
            p.unlink()
        next(iter(sorted(cond_dir.glob("model_*.npz")))).unlink()
    resumed = run_experiment(cfg, run_dir, resume=True)
    emit_reports(resumed, run_dir)
    assert (run_dir / "summary.csv").read_bytes() == (out / "summary.csv").read_bytes()
    assert len(first.results) == len(resumed.results)


def test_run_only_selected_condition(tiny_run, tmp_path):
    cfg, bundle, _ = tiny_run
    target = bundle.results[3].condition.id
    sub = run_experiment(cfg, tmp_path, only={target})
    assert [r.condition.id for r in sub.results] == [target]
    assert sub.results[0].estimate.srt_db == bundle.results[3].estimate.srt_db


def test_manifest_corpus(tmp_path):
    spec = make_synthetic_spec(seed=2)
    entries = []
    for eff in ("plain", "lombard"):
        entries += synthesize_corpus(spec, 24, 5 if eff == "plain" else 6, effort=eff).entries
    path = write_manifest(CorpusManifest(spec.grammar, entries), tmp_path / "corpus" / "m.tsv")
    cfg = tiny_config(corpus=CorpusConfig(manifest=str(path), train_fraction=0.75), features=(FeatureConfig("MFCC", "MFCC"),))
    bundle = run_experiment(cfg, tmp_path / "out")
    assert len(bundle.results) == 4
    assert {r.condition.effort for r in bundle.results} == {"plain", "lombard"}
    assert not bundle.failed, [r.error for r in bundle.failed]


def test_unmeasurable_condition_is_recorded(tmp_path):
    # a model trained in noise at -60 dB and tested only there never reaches 50 %
    cfg = tiny_config(train_snrs=(-60.0,), test_snrs=(-60.0, -50.0), features=(FeatureConfig("MFCC", "MFCC"),), efforts={"plain": VoiceConfig()})
    bundle = run_experiment(cfg, tmp_path)
    assert all(not r.ok and r.error.startswith("unmeasurable") for r in bundle.results)
    emit_reports(bundle, tmp_path)
    rows = list(csv.DictReader((tmp_path / "summary.csv").open()))
    assert {r["status"] for r in rows} == {"failed"}


# -- evaluation ------------------------------------------------------------------------------


def test_self_evaluation_is_perfect(tiny_run, tmp_path):
    cfg, bundle, _ = tiny_run
    feature = cfg.features[0].name
    emp = load_empirical(_self_table(bundle, tmp_path))
    sub = ResultBundle(cfg, [r for r in bundle.results if r.condition.feature == feature])
    sub.gains = lombard_gains(cfg, sub.results)
    panels = {p.name: p for p in evaluate(dataclasses.replace(sub, config=dataclasses.replace(cfg, features=cfg.features[:1])), emp)}
    s = panels["srt"].summary
    assert s.pearson_r == pytest.approx(1.0)
    assert s.rms_db == pytest.approx(0.0, abs=1e-9)
    assert s.bias_db == pytest.approx(0.0, abs=1e-9)
    assert s.chi2_per_dof == pytest.approx(0.0, abs=1e-9)
    assert panels["gain"].dof * 2 == panels["srt"].dof


def test_offset_table_gives_negative_bias(tiny_run, tmp_path):
    cfg, bundle, _ = tiny_run
    one = dataclasses.replace(cfg, features=cfg.features[:1])
    sub = [r for r in bundle.results if r.condition.feature == one.features[0].name]
    b = ResultBundle(one, sub, lombard_gains(one, sub))
    base = {p.name: p for p in evaluate(b, load_empirical(_self_table(bundle, tmp_path)))}
    shifted = {p.name: p for p in evaluate(b, load_empirical(_self_table(bundle, tmp_path, 2.0, "shift.csv")))}
    assert shifted["srt"].summary.bias_db == pytest.approx(-2.0)
    assert shifted["srt"].summary.pearson_r == pytest.approx(base["srt"].summary.pearson_r)
    assert shifted["srt"].summary.regression_intercept_db == pytest.approx(-2.0)
    written = write_evaluation(list(shifted.values()), tmp_path)
    assert len([p for p in written if p.name.startswith("scatter_")]) >= 2
    rows = list(csv.DictReader((tmp_path / "scatter_SGBFB_srt.csv").open()))
    for r in rows:
        assert float(r["identity_db"]) == float(r["emp_db"])
        assert float(r["regression_db"]) == pytest.approx(float(r["emp_db"]) - 2.0)


def test_key_mismatch_lists_conditions(tiny_run, tmp_path):
    cfg, bundle, _ = tiny_run
    path = _write_table(tmp_path / "few.csv", EMPIRICAL_COLUMNS, [("s1", "eng", "plain", "icra1", -10, 1, 5), ("s9", "eng", "plain", "icra1", -9, 1, 5)])
    with pytest.raises(ConfigError) as exc:
        evaluate(bundle, load_empirical(path))
    msg = str(exc.value)
    assert "s1|eng|lombard|icra5-250" in msg and "s9|eng|plain|icra1" in msg


def test_empirical_listener_gains(tmp_path):
    table = _write_table(
        tmp_path / "e.csv",
        EMPIRICAL_COLUMNS,
        [("s1", "eng", "plain", "n", -10, 1, 2), ("s1", "eng", "lombard", "n", -13, 1, 2)],
    )
    listeners = _write_table(
        tmp_path / "l.csv",
        LISTENER_COLUMNS,
        [("a", "s1", "eng", "plain", "n", -10), ("b", "s1", "eng", "plain", "n", -10), ("a", "s1", "eng", "lombard", "n", -12), ("b", "s1", "eng", "lombard", "n", -14)],
    )
    emp = load_empirical(table, listeners)
    assert emp.gain(("s1", "eng", "plain", "n"), ("s1", "eng", "lombard", "n")) == (pytest.approx(3.0), pytest.approx(1.0))
    no_listeners = load_empirical(table)
    g, s = no_listeners.gain(("s1", "eng", "plain", "n"), ("s1", "eng", "lombard", "n"))
    assert g == 3.0 and s == pytest.approx(np.sqrt(2))


def test_empirical_table_errors(tmp_path):
    bad = _write_table(tmp_path / "b.csv", ("speaker", "srt_db"), [("s1", -3)])
    with pytest.raises(ConfigError, match="missing columns"):
        load_empirical(bad)
    neg = _write_table(tmp_path / "n.csv", EMPIRICAL_COLUMNS, [("s1", "eng", "plain", "n", -3, -1, 4)])
    with pytest.raises(ConfigError, match="invalid"):
        load_empirical(neg)


# -- command line -----------------------------------------------------------------------------


def test_cli_print_config(capsys):
    assert main(["print-config", "--seed", "5"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert data["seed"] == 5
    assert ExperimentConfig.from_dict(data).seed == 5


def test_cli_config_errors(tmp_path, capsys):
    assert main(["print-config", "--config", str(tmp_path / "missing.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"workers": 0}))
    assert main(["run", "--config", str(bad)]) == 2
    assert "configuration error" in capsys.readouterr().err
    assert main(["srt"]) == 2


def test_cli_srt_on_matrix(tiny_run, capsys):
    _, bundle, out = tiny_run
    r = bundle.results[0]
    assert main(["srt", "--matrix", str(out / "matrices" / f"{r.condition.slug}.csv")]) == 0
    est = json.loads(capsys.readouterr().out)
    assert est["srt_db"] == pytest.approx(r.estimate.srt_db, abs=1e-9)


def test_cli_srt_unmeasurable_matrix(tmp_path):
    path = _write_table(tmp_path / "m.csv", ("train_snr", "test_snr", "rate", "count", "correct"), [(0, -5, 0.1, 10, 1), (0, 0, 0.2, 10, 2)])
    assert main(["srt", "--matrix", str(path)]) == 1


def test_cli_run_and_evaluate(tmp_path, capsys):
    cfg = tiny_config(features=(FeatureConfig("MFCC", "MFCC", mfcc=MfccConfig(delta_orders=0)),))
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(dump_config(cfg))
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg_path), "--out", str(out)]) == 0
    assert "4/4 conditions finished" in capsys.readouterr().out
    bundle = ResultBundle(cfg, load_summary(out))
    emp = _self_table(bundle, tmp_path)
    assert main(["evaluate", "--out", str(out), "--empirical", str(emp)]) == 0
    text = capsys.readouterr().out
    assert "R=1.000" in text and "RMS=0.00" in text
    assert (out / "evaluation.csv").exists()
    assert main(["evaluate", "--out", str(out)]) == 2


def test_cli_noise_and_features(tmp_path, capsys):
    from fadesim.frontend import AudioBuffer, write_wav

    spec = make_synthetic_spec(seed=0)
    corpus = synthesize_corpus(spec, 4, 1)
    ref = write_wav(tmp_path / "ref.wav", AudioBuffer(np.concatenate([e.audio.samples for e in corpus.entries]), 16000))
    stat = tmp_path / "icra1.wav"
    assert main(["noise", "--kind", "stationary", "--reference", str(ref), "--duration", "2", "--output", str(stat)]) == 0
    gated = tmp_path / "gated.wav"
    assert main(["noise", "--kind", "gated", "--base", str(stat), "--output", str(gated)]) == 0
    assert main(["noise", "--kind", "gated", "--output", str(gated)]) == 2
    feats = tmp_path / "f.csv"
    assert main(["features", "--wav", str(ref), "--kind", "MFCC", "--output", str(feats)]) == 0
    assert "x 39 coefficients" in capsys.readouterr().out
    assert main(["features", "--wav", str(tmp_path / "none.wav"), "--output", str(feats)]) == 2
