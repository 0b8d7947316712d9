"""Acceptance criteria for the simulation toolkit.

Each test records one PASS/FAIL line (printed in the terminal summary)
before asserting. Criteria 6, 7, 8 and 10 share two runs of
``configs/acceptance.json``: one serial, one with two workers.
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import stats as sps

from conftest import ACCEPTANCE_LINES
from fadesim.asr import HmmTopology, TrainConfig, path_words, train_models, viterbi_path
from fadesim.config import load_config
from fadesim.errors import DecodeError, NoSrtError
from fadesim.features import SgbfbConfig, dct_matrix, sgbfb
from fadesim.frontend import AudioBuffer, LogMelSpectrogram, hz_to_mel
from fadesim.noise import FILE, NoiseSource, gen_gated, mix_components, snr_db
from fadesim.runner import ResultBundle, conditions, emit_reports, lombard_gains, run_experiment
from fadesim.sim import srt_from_matrix
from fadesim.stats import PairedSeries, chi2_per_dof, sem
from oracles import TRUE_MEANS, brute_force_decode, decoding_instance, random_matrix, srt_exact, two_state_data

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "acceptance.json"
SR = 16000


def verdict(n: int, name: str, ok: bool, detail: str) -> None:
    line = f"[{n:2d}] {'PASS' if ok else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


# -- 1-5, 9: exact and oracle checks -------------------------------------------------------


def test_c01_formula_exactness():
    t0 = time.perf_counter()
    mel = hz_to_mel(6300.0)
    s = sem(4.0, 16)
    chi = chi2_per_dof(PairedSeries([2.0], [0.0], [math.sqrt(2)], [math.sqrt(2)]), 1)
    dt = time.perf_counter() - t0
    errs = (abs(mel - 2595.0), abs(s - 1.0), abs(chi - 1.0))
    ok = max(errs) < 1e-9 and dt < 1.0
    verdict(1, "formula exactness", ok, f"mel(6300)={mel!r} sem={float(s)!r} chi2={chi!r} max err {max(errs):.1e}, {dt * 1e3:.1f} ms")


def test_c02_dct_and_feature_algebra():
    dct_err = max(np.abs(dct_matrix(n, n) @ dct_matrix(n, n).T - np.eye(n)).max() for n in range(1, 65))
    cfg = SgbfbConfig()
    rng = np.random.default_rng(2)

    def lm(v):
        return LogMelSpectrogram(v, 0.01, np.arange(v.shape[0], dtype=float))

    x, y = rng.standard_normal((2, 31, 120))
    base = sgbfb(lm(x), cfg).values
    shifted = sgbfb(lm(x + 11.5), cfg).values
    dc_col = np.argmax(np.abs(shifted - base).max(axis=0))
    # exactly one output (the DC-DC filter) may respond to a constant offset
    others = np.delete(np.abs(shifted - base), dc_col, axis=1)
    dc_err = others.max()
    lin_err = 0.0
    for a, b in ((2.0, -0.5), (-1.25, 3.0), (0.3, 0.7)):
        lhs = sgbfb(lm(a * x + b * y), cfg).values
        rhs = a * base + b * sgbfb(lm(y), cfg).values
        lin_err = max(lin_err, np.abs(lhs - rhs).max())
    ok = dct_err < 1e-9 and dc_err < 1e-9 and lin_err < 1e-9
    verdict(2, "DCT / SGBFB algebra", ok, f"orthonormality {dct_err:.1e}, DC leak {dc_err:.1e}, linearity {lin_err:.1e}")


def _random_instance_params(rng):
    n_slots = int(rng.integers(1, 3))
    alts = [int(rng.integers(1, 4)) for _ in range(n_slots)]
    spw = int(rng.integers(1, 3))
    edge = bool(rng.integers(2))
    if sum(alts) * spw + (2 if edge else 0) > 6:
        alts, spw = [1] * n_slots, 1
    return n_slots, alts, spw, edge, int(rng.integers(1, 7)), bool(rng.integers(2)), int(rng.integers(2**32)), bool(rng.integers(2))


def test_c03_viterbi_matches_exhaustive_search():
    rng = np.random.default_rng(3)
    t0 = time.perf_counter()
    agree = ties = 0
    for _ in range(1000):
        params = _random_instance_params(rng)
        graph, emis = decoding_instance(*params)
        assert graph.num_states <= 6
        oracle = brute_force_decode(graph, emis)
        if oracle is None:
            try:
                viterbi_path(graph, emis)
            except DecodeError:
                agree += 1
            continue
        path, score = viterbi_path(graph, emis)
        agree += (-score, path_words(graph, path)) == oracle
        ties += params[5]
    dt = time.perf_counter() - t0
    verdict(3, "Viterbi vs exhaustive", agree == 1000 and dt < 30, f"{agree}/1000 agree ({ties} tie-prone), {dt:.1f} s")


def test_c04_training_recovery():
    worst, monotone = 0.0, True
    topo = HmmTopology(states_per_word=2, silence_states=1, edge_silence=False)
    for seed in range(5):
        models = train_models(two_state_data(200, seed), topo, TrainConfig())
        worst = max(worst, np.abs(models.models["w"].means[:, 0, :] - TRUE_MEANS).max())
        h = np.asarray(models.history)
        monotone &= bool(np.all(np.diff(h) >= -1e-9 * np.abs(h[:-1])))
    verdict(4, "2-state training recovery", worst < 0.1 and monotone, f"max |mean error| {worst:.3f} over 5 runs of 200 utterances, monotone={monotone}")


def test_c05_snr_mixing_and_gap_bound():
    rng = np.random.default_rng(5)
    worst = 0.0
    for i in range(100):
        n = int(rng.integers(400, 20000))
        speech = AudioBuffer(10 ** rng.uniform(-3, 0) * rng.standard_normal(n), SR)
        noise = NoiseSource(FILE, AudioBuffer(rng.standard_normal(n + int(rng.integers(1, 20000))), SR), "w")
        target = float(rng.uniform(-60, 60))
        s, nz = mix_components(speech, noise, target, i)
        worst = max(worst, abs(snr_db(s, nz) - target))
    base = NoiseSource(FILE, AudioBuffer(np.ones(20 * SR), SR), "dc")
    longest = 0
    for seed in range(100):
        quiet = gen_gated(base, 250.0, seed).audio.samples < 0.1
        edges = np.flatnonzero(np.diff(np.concatenate(([0], quiet.astype(np.int8), [0]))))
        runs = edges[1::2] - edges[::2]
        longest = max(longest, int(runs.max()) if len(runs) else 0)
    limit_ms = 250 + 10
    ok = worst < 1e-6 and longest * 1000 / SR <= limit_ms
    verdict(5, "SNR mixing / gap bound", ok, f"max SNR error {worst:.1e} dB, longest gap {longest * 1000 / SR:.1f} ms (limit {limit_ms} ms)")


def test_c09_srt_estimator_oracle():
    rng = np.random.default_rng(9)
    agree = hits = multi_row = none = 0
    for i in range(500):
        m = random_matrix(rng, exact_hit=i % 2 == 1)
        ref = srt_exact(m.grid, m.correct, m.counts)
        if ref is None:
            none += 1
            try:
                srt_from_matrix(m)
            except NoSrtError:
                agree += 1
            continue
        est = srt_from_matrix(m)
        agree += abs(est.srt_db - float(ref[0])) <= 1e-9
        hits += float(ref[0]) in m.grid.test_snrs
        multi_row += ref[1] > 0
    verdict(9, "SRT estimator oracle", agree == 500, f"{agree}/500 within 1e-9 dB ({hits} exact hits, {multi_row} minima on a later row, {none} without crossing)")


# -- 6-8, 10: desk-scale runs ------------------------------------------------------------------


@pytest.fixture(scope="module")
def acceptance_run(tmp_path_factory):
    """Serial run; the SGBFB conditions are timed on their own."""
    cfg = load_config(CONFIG)
    out = tmp_path_factory.mktemp("acceptance_w1")
    conds = conditions(cfg)
    sg = {c.id for c in conds if c.feature == "SGBFB"}
    t0 = time.perf_counter()
    first = run_experiment(cfg, out, only=sg)
    t_sgbfb = time.perf_counter() - t0
    rest = run_experiment(cfg, out, only={c.id for c in conds} - sg)
    by_id = {r.condition.id: r for r in first.results + rest.results}
    results = [by_id[c.id] for c in conds]
    bundle = ResultBundle(cfg, results, lombard_gains(cfg, results))
    emit_reports(bundle, out)
    return bundle, out, t_sgbfb


def _result(bundle, feature, noise):
    (r,) = [r for r in bundle.results if r.condition.feature == feature and r.condition.noise == noise]
    assert r.ok, r.error
    return r


def _release(bundle, feature):
    st, ga = _result(bundle, feature, "icra1").estimate, _result(bundle, feature, "icra5-250").estimate
    return st.srt_db - ga.srt_db, math.hypot(st.sigma_sim, ga.sigma_sim), st, ga


@pytest.mark.slow
def test_c06_masking_release(acceptance_run):
    bundle, _, t_sgbfb = acceptance_run
    rel, sigma, st, ga = _release(bundle, "SGBFB")
    ok = rel >= 2.0 and rel > 2 * sigma and t_sgbfb < 600
    verdict(
        6,
        "SGBFB masking release",
        ok,
        f"SRT icra1 {st.srt_db:.2f} dB, icra5-250 {ga.srt_db:.2f} dB, release {rel:.2f} dB vs 2*sigma {2 * sigma:.2f} dB, {t_sgbfb:.0f} s",
    )


@pytest.mark.slow
def test_c07_feature_contrast(acceptance_run):
    bundle, _, _ = acceptance_run
    sg = _release(bundle, "SGBFB")[0]
    nod = _release(bundle, "MFCC-nod")[0]
    with_d = _release(bundle, "MFCC")[0]
    verdict(
        7,
        "SGBFB vs MFCC release",
        sg - nod >= 1.0,
        f"release SGBFB {sg:.2f} dB, MFCC without deltas {nod:.2f} dB (difference {sg - nod:.2f} dB), MFCC with deltas {with_d:.2f} dB (reported only)",
    )


@pytest.mark.slow
def test_c08_psychometric_sanity(acceptance_run):
    bundle, _, _ = acceptance_run
    rows = []
    for noise in ("icra1", "icra5-250"):
        m = _result(bundle, "SGBFB", noise).matrix
        for i, train in enumerate(m.grid.train_snrs):
            rows.append((noise, train, m, i))
    chance = 1.0 / 4
    alpha = 0.05 / len(rows)  # Bonferroni over rows
    rhos, p_chance = [], []
    for noise, train, m, i in rows:
        rates = m.correct[i] / m.counts[i]
        rhos.append(sps.spearmanr(m.grid.test_snrs, rates).statistic)
        p_chance.append(sps.binomtest(int(m.correct[i, 0]), int(m.counts[i, 0]), chance).pvalue)
    near_clean = [m.correct[-1, -1] / m.counts[-1, -1] for _, _, m, _ in rows[:: len(rows) // 2]]
    worst = int(np.argmin(rhos))
    rho_ok = min(rhos) >= 0.9
    clean_ok = min(near_clean) >= 0.9
    chance_ok = min(p_chance) > alpha
    bad = sum(r < 0.9 for r in rhos)
    verdict(
        8,
        "psychometric sanity",
        rho_ok and clean_ok and chance_ok,
        f"Spearman min {rhos[worst]:.3f} ({rows[worst][0]}, train {rows[worst][1]:+.0f} dB; {bad}/{len(rows)} rows < 0.9), "
        f"near-clean rate {min(near_clean):.3f}, chance test min p {min(p_chance):.3f} vs {alpha:.4f}",
    )


@pytest.mark.slow
def test_c10_end_to_end_determinism(acceptance_run, tmp_path):
    bundle, out, _ = acceptance_run
    cfg = bundle.config
    other = run_experiment(cfg.__class__(**{**cfg.__dict__, "workers": 2}), tmp_path)
    emit_reports(other, tmp_path)
    a, b = (out / "summary.csv").read_bytes(), (tmp_path / "summary.csv").read_bytes()
    mats = sorted(p.name for p in (out / "matrices").glob("*.csv"))
    same_mats = all((out / "matrices" / n).read_bytes() == (tmp_path / "matrices" / n).read_bytes() for n in mats)
    verdict(10, "end-to-end determinism", a == b and same_mats, f"summary.csv {'identical' if a == b else 'differs'} ({len(a)} bytes), {len(mats)} matrices {'identical' if same_mats else 'differ'} (workers 1 vs 2)")
