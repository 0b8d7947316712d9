"""Train-SNR x test-SNR recognition sweep and SRT extraction."""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import curve_fit

from .asr import HmmTopology, TrainConfig, build_decoding_graph, load_models, save_models, train_models, viterbi_decode
from .corpus import MatrixGrammar
from .errors import NoSrtError
from .features import FeatureSpec, extract_features
from .frontend import AudioBuffer
from .noise import NoiseSource, mix_components
from .seeding import derive_seed

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SnrGrid:
    train_snrs: tuple
    test_snrs: tuple

    def __post_init__(self):
        for name in ("train_snrs", "test_snrs"):
            v = tuple(float(x) for x in getattr(self, name))
            if not v:
                raise ValueError(f"{name} must not be empty")
            if any(b <= a for a, b in zip(v, v[1:])):
                raise ValueError(f"{name} must be strictly increasing, got {v}")
            if not all(np.isfinite(v)):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, v)

    @classmethod
    def default(cls) -> "SnrGrid":
        return cls(tuple(range(-18, 7, 3)), tuple(range(-60, 10, 3)))


@dataclass
class RecognitionMatrix:
    grid: SnrGrid
    correct: np.ndarray  # (N, K) words recognized
    counts: np.ndarray  # (N, K) words tested

    def __post_init__(self):
        self.correct = np.asarray(self.correct, dtype=np.int64)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        shape = (len(self.grid.train_snrs), len(self.grid.test_snrs))
        if self.correct.shape != shape or self.counts.shape != shape:
            raise ValueError(f"matrix shape must be {shape}")
        if np.any(self.counts <= 0) or np.any(self.correct < 0) or np.any(self.correct > self.counts):
            raise ValueError("counts must be positive and 0 <= correct <= counts")

    @property
    def rates(self) -> np.ndarray:
        return self.correct / self.counts

    def rows(self):
        """Yield ``(train_snr, test_snr, rate, count, correct)`` in row-major order."""
        for i, tr in enumerate(self.grid.train_snrs):
            for k, te in enumerate(self.grid.test_snrs):
                yield tr, te, self.correct[i, k] / self.counts[i, k], int(self.counts[i, k]), int(self.correct[i, k])


@dataclass(frozen=True)
class SrtEstimate:
    srt_db: float
    sigma_sim: float
    winning_train_snr: float
    row: tuple  # word-correct rates of the winning row
    censored: bool = False  # crossing pinned to the lowest test SNR

    def to_dict(self) -> dict:
        return asdict(self)


# -- SRT extraction -----------------------------------------------------------


def row_crossing(snrs, rates, criterion: float = 0.5):
    """First upward crossing of ``criterion`` by linear interpolation.

    Returns ``(snr, segment_start_index)`` or ``None``. A row that already
    meets the criterion at its first point crosses there.
    """
    snrs = np.asarray(snrs, dtype=np.float64)
    rates = np.asarray(rates, dtype=np.float64)
    hits = np.flatnonzero(rates >= criterion)
    if hits.size == 0:
        return None
    j = int(hits[0])
    if j == 0:
        return float(snrs[0]), 0
    r0, r1 = rates[j - 1], rates[j]
    if r1 == criterion:
        return float(snrs[j]), j - 1
    s0, s1 = snrs[j - 1], snrs[j]
    return float(s0 + (criterion - r0) * (s1 - s0) / (r1 - r0)), j - 1


def _logistic(s, mid, slope, floor):
    return floor + (1 - floor) / (1 + np.exp(-slope * (s - mid)))


def row_crossing_logistic(snrs, rates, criterion: float = 0.5):
    """Crossing of a fitted logistic between a free floor and 1."""
    snrs = np.asarray(snrs, dtype=np.float64)
    rates = np.asarray(rates, dtype=np.float64)
    lin = row_crossing(snrs, rates, criterion)
    if lin is None:
        return None
    try:
        (mid, slope, floor), _ = curve_fit(
            _logistic,
            snrs,
            rates,
            p0=(lin[0], 0.5, max(0.0, min(rates.min(), criterion - 0.05))),
            bounds=([snrs[0] - 20, 1e-3, 0.0], [snrs[-1] + 20, 10.0, criterion - 1e-6]),
            maxfev=10000,
        )
    except RuntimeError:
        return lin
    x = (criterion - floor) / (1 - floor)
    srt = mid - np.log(1 / x - 1) / slope
    return float(np.clip(srt, snrs[0], snrs[-1])), lin[1]


def binomial_srt_sigma(p: float, words: float, slope_per_db: float) -> float:
    """Binomial standard error of a rate mapped through the psychometric slope."""
    return float(np.sqrt(p * (1 - p) / words) / slope_per_db)


def srt_uncertainty(m: RecognitionMatrix, grid: SnrGrid | None, estimate: SrtEstimate, criterion: float = 0.5) -> float:
    """Simulation uncertainty of an SRT from the size of the test set.

    The binomial standard error at the criterion, sqrt(p(1-p)/words), is
    divided by the slope of the interpolated segment. A non-positive slope
    falls back to the width of that segment.
    """
    grid = grid or m.grid
    i = grid.train_snrs.index(estimate.winning_train_snr)
    snrs = np.asarray(grid.test_snrs)
    rates = m.rates[i]
    crossing = row_crossing(snrs, rates, criterion)
    j = crossing[1] if crossing else 0
    j1 = min(j + 1, len(snrs) - 1)
    if j1 == j:
        return 0.0
    width = snrs[j1] - snrs[j]
    slope = (rates[j1] - rates[j]) / width
    if slope <= 0:
        return float(width)
    words = 0.5 * (m.counts[i, j] + m.counts[i, j1])
    return binomial_srt_sigma(criterion, words, slope)


def srt_from_matrix(
    m: RecognitionMatrix, grid: SnrGrid | None = None, criterion: float = 0.5, method: str = "linear"
) -> SrtEstimate:
    """Lowest test SNR at which any training-SNR row reaches the criterion."""
    grid = grid or m.grid
    if method not in ("linear", "logistic"):
        raise ValueError(f"unknown interpolation method {method!r}")
    finder = row_crossing if method == "linear" else row_crossing_logistic
    best = None
    rates = m.rates
    for i, tr in enumerate(grid.train_snrs):
        c = finder(grid.test_snrs, rates[i], criterion)
        if c is not None and (best is None or c[0] < best[0]):
            best = (c[0], i)
    if best is None:
        raise NoSrtError(f"no training-SNR row reaches a word-correct rate of {criterion}")
    srt, i = best
    est = SrtEstimate(
        srt_db=srt,
        sigma_sim=0.0,
        winning_train_snr=grid.train_snrs[i],
        row=tuple(float(r) for r in rates[i]),
        censored=bool(rates[i][0] >= criterion),
    )
    sigma = srt_uncertainty(m, grid, est, criterion)
    return SrtEstimate(est.srt_db, sigma, est.winning_train_snr, est.row, est.censored)


# -- the sweep ------------------------------------------------------------------


@dataclass(frozen=True)
class SweepConfig:
    topology: HmmTopology = HmmTopology()
    training: TrainConfig = TrainConfig()
    pad_ms: float = 100.0  # digital silence added around each sentence before mixing
    # RMS of the noise in the mixture, dB re digital full scale. The speech
    # level follows from the SNR, so quiet speech eventually falls under the
    # absolute log-energy floor. None keeps the speech level instead.
    noise_level_dbfs: float | None = -85.0


def _snr_key(snr: float) -> str:
    return f"{snr:+.6g}"


def present(audio: AudioBuffer, noise: NoiseSource, snr: float, seed: int, sweep: "SweepConfig") -> AudioBuffer:
    """Padded speech plus a random noise section at ``snr``, at the presentation level."""
    pad = np.zeros(int(round(sweep.pad_ms * audio.sample_rate / 1000.0)))
    padded = AudioBuffer(np.concatenate([pad, audio.samples, pad]), audio.sample_rate)
    speech, section = mix_components(padded, noise, snr, seed)
    gain = 1.0
    if sweep.noise_level_dbfs is not None:
        gain = 10 ** (sweep.noise_level_dbfs / 20) / np.sqrt(np.mean(section**2))
    return AudioBuffer(gain * speech + gain * section, audio.sample_rate)


def mixed_features(audio: AudioBuffer, noise: NoiseSource, snr: float, seed: int, features: FeatureSpec, sweep):
    return extract_features(present(audio, noise, snr, seed, sweep), features)


@dataclass
class _SweepJob:
    utterances: list  # (AudioBuffer, SentenceLabel)
    noise: NoiseSource
    features: FeatureSpec
    sweep: SweepConfig
    grammar: MatrixGrammar
    seed: int
    snr: float
    models: list = field(default_factory=list)


def _train_job(job: _SweepJob):
    key = _snr_key(job.snr)
    data = [
        (mixed_features(a, job.noise, job.snr, derive_seed(job.seed, "train", key, j), job.features, job.sweep), lab)
        for j, (a, lab) in enumerate(job.utterances)
    ]
    return train_models(data, job.sweep.topology, job.sweep.training, job.grammar)


def _decode_job(job: _SweepJob):
    """Correct-word counts of every trained model at one test SNR."""
    key = _snr_key(job.snr)
    graphs = [build_decoding_graph(m, job.grammar) for m in job.models]
    correct = np.zeros(len(graphs), dtype=np.int64)
    words = 0
    for j, (a, lab) in enumerate(job.utterances):
        fm = mixed_features(a, job.noise, job.snr, derive_seed(job.seed, "test", key, j), job.features, job.sweep)
        words += len(lab.words)
        for i, g in enumerate(graphs):
            hyp = viterbi_decode(g, fm)
            correct[i] += sum(r == h for r, h in zip(lab.words, hyp.words))
    return correct, words


def _run(fn, jobs, workers: int):
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, jobs))
    return [fn(j) for j in jobs]


def run_sweep(
    train_set,
    test_set,
    grid: SnrGrid,
    features: FeatureSpec,
    noise: NoiseSource,
    seed: int,
    grammar: MatrixGrammar,
    sweep: SweepConfig = SweepConfig(),
    workers: int = 1,
    checkpoint_dir=None,
) -> RecognitionMatrix:
    """Train one recognizer per training SNR and test each at every test SNR.

    ``train_set`` and ``test_set`` are sequences of (AudioBuffer,
    SentenceLabel). Every mixture is seeded from (seed, role, SNR,
    utterance index), so results do not depend on ``workers`` or on which
    other SNRs are in the grid. With ``checkpoint_dir`` trained models and
    finished test columns are stored and reused on the next call.
    """
    ckpt = Path(checkpoint_dir) if checkpoint_dir else None
    train_set, test_set = list(train_set), list(test_set)

    models = [None] * len(grid.train_snrs)
    pending = []
    for i, snr in enumerate(grid.train_snrs):
        path = ckpt / f"model_{_snr_key(snr)}.npz" if ckpt else None
        if path is not None and path.exists():
            models[i] = load_models(path)
        else:
            pending.append(i)
    jobs = [_SweepJob(train_set, noise, features, sweep, grammar, seed, grid.train_snrs[i]) for i in pending]
    for i, m in zip(pending, _run(_train_job, jobs, workers)):
        models[i] = m
        if ckpt:
            save_models(m, ckpt / f"model_{_snr_key(grid.train_snrs[i])}.npz")
        log.info("trained model at %+.1f dB", grid.train_snrs[i])

    n, k = len(grid.train_snrs), len(grid.test_snrs)
    correct = np.zeros((n, k), dtype=np.int64)
    counts = np.zeros((n, k), dtype=np.int64)
    pending = []
    for c, snr in enumerate(grid.test_snrs):
        path = ckpt / f"column_{_snr_key(snr)}.json" if ckpt else None
        if path is not None and path.exists():
            saved = json.loads(path.read_text())
            if saved["train_snrs"] == list(grid.train_snrs):
                correct[:, c] = saved["correct"]
                counts[:, c] = saved["words"]
                continue
        pending.append(c)
    jobs = [
        _SweepJob(test_set, noise, features, sweep, grammar, seed, grid.test_snrs[c], models=models) for c in pending
    ]
    for c, (col, words) in zip(pending, _run(_decode_job, jobs, workers)):
        correct[:, c] = col
        counts[:, c] = words
        if ckpt:
            ckpt.mkdir(parents=True, exist_ok=True)
            (ckpt / f"column_{_snr_key(grid.test_snrs[c])}.json").write_text(
                json.dumps({"train_snrs": list(grid.train_snrs), "correct": col.tolist(), "words": words})
            )
    return RecognitionMatrix(grid, correct, counts)


# -- serialization ------------------------------------------------------------

MATRIX_COLUMNS = ("train_snr", "test_snr", "rate", "count", "correct")


def write_matrix_csv(m: RecognitionMatrix, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MATRIX_COLUMNS)
        for tr, te, rate, count, corr in m.rows():
            w.writerow([repr(tr), repr(te), repr(float(rate)), count, corr])
    return path


def read_matrix_csv(path) -> RecognitionMatrix:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    train = sorted({float(r["train_snr"]) for r in rows})
    test = sorted({float(r["test_snr"]) for r in rows})
    grid = SnrGrid(tuple(train), tuple(test))
    correct = np.zeros((len(train), len(test)), dtype=np.int64)
    counts = np.zeros_like(correct)
    for r in rows:
        i, k = train.index(float(r["train_snr"])), test.index(float(r["test_snr"]))
        counts[i, k] = int(r["count"])
        correct[i, k] = int(r["correct"]) if r.get("correct") else int(round(float(r["rate"]) * counts[i, k]))
    return RecognitionMatrix(grid, correct, counts)


def write_estimate_json(est: SrtEstimate, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(est.to_dict(), indent=2, sort_keys=True) + "\n")
    return path
