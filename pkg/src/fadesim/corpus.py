"""Matrix-sentence grammar, corpus manifests and a synthetic token corpus."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import butter, sosfilt

from .errors import ManifestError
from .frontend import AudioBuffer, read_wav, write_wav
from .seeding import derive_seed

MANIFEST_MAGIC = "#fadesim-manifest"
MANIFEST_VERSION = 1
MANIFEST_COLUMNS = ("path", "words", "speaker", "language", "effort")
EFFORTS = ("plain", "lombard")
COLUMN_HEADER = "\t".join(MANIFEST_COLUMNS)


@dataclass(frozen=True)
class MatrixGrammar:
    slots: tuple
    alternatives: tuple  # one tuple of word ids per slot

    def __post_init__(self):
        slots = tuple(self.slots)
        alts = tuple(tuple(a) for a in self.alternatives)
        if not slots:
            raise ValueError("grammar needs at least one slot")
        if len(alts) != len(slots):
            raise ValueError(f"{len(slots)} slots but {len(alts)} alternative lists")
        for name, words in zip(slots, alts):
            if not words:
                raise ValueError(f"slot {name!r} has no alternatives")
            if len(set(words)) != len(words):
                raise ValueError(f"slot {name!r} lists a word twice")
            for w in words:
                if not w or any(c.isspace() for c in w):
                    raise ValueError(f"word id {w!r} in slot {name!r} must be non-empty without spaces")
        object.__setattr__(self, "slots", slots)
        object.__setattr__(self, "alternatives", alts)

    @property
    def num_slots(self) -> int:
        return len(self.slots)

    @property
    def vocabulary(self) -> list[str]:
        return sorted({w for words in self.alternatives for w in words})

    def sentence_count(self) -> int:
        return math.prod(len(a) for a in self.alternatives)

    def to_dict(self) -> dict:
        return {name: list(words) for name, words in zip(self.slots, self.alternatives)}

    @classmethod
    def from_dict(cls, d: dict) -> "MatrixGrammar":
        return cls(tuple(d), tuple(tuple(v) for v in d.values()))


def default_grammar() -> MatrixGrammar:
    """5 slots x 10 alternatives: name, verb, numeral, adjective, noun."""
    return MatrixGrammar.from_dict(
        {
            "name": ["alan", "barry", "hannah", "kathy", "lucy", "nina", "peter", "rachel", "steven", "thomas"],
            "verb": ["bought", "gives", "got", "has", "kept", "ordered", "sees", "sold", "wants", "wins"],
            "numeral": ["two", "three", "four", "five", "six", "eight", "nine", "ten", "twelve", "some"],
            "adjective": ["big", "cheap", "dark", "green", "large", "old", "pink", "red", "small", "white"],
            "noun": ["beds", "chairs", "desks", "rings", "ships", "shoes", "spoons", "tables", "toys", "windows"],
        }
    )


def desk_grammar() -> MatrixGrammar:
    """3 slots x 4 alternatives, small enough for quick end-to-end runs."""
    return MatrixGrammar.from_dict(
        {
            "name": ["anna", "ben", "carl", "dora"],
            "verb": ["buys", "gets", "has", "sees"],
            "noun": ["boats", "cups", "pens", "rugs"],
        }
    )


@dataclass(frozen=True)
class SentenceLabel:
    words: tuple

    def __post_init__(self):
        object.__setattr__(self, "words", tuple(self.words))

    def validate(self, grammar: MatrixGrammar) -> "SentenceLabel":
        if len(self.words) != grammar.num_slots:
            raise ValueError(
                f"label has {len(self.words)} words, grammar has {grammar.num_slots} slots"
            )
        for name, word, alts in zip(grammar.slots, self.words, grammar.alternatives):
            if word not in alts:
                raise ValueError(f"word {word!r} is not an alternative of slot {name!r}")
        return self

    def __str__(self):
        return " ".join(self.words)


def sample_sentence(g: MatrixGrammar, rng_seed) -> SentenceLabel:
    rng = np.random.default_rng(rng_seed)
    return SentenceLabel(tuple(alts[int(rng.integers(len(alts)))] for alts in g.alternatives))


# -- manifests ----------------------------------------------------------------


@dataclass
class ManifestEntry:
    label: SentenceLabel
    speaker: str
    language: str
    effort: str
    path: Path | None = None
    audio: AudioBuffer | None = field(default=None, repr=False)

    @property
    def condition(self) -> tuple:
        return (self.speaker, self.language, self.effort)

    def load_audio(self) -> AudioBuffer:
        if self.audio is None:
            self.audio = read_wav(self.path)
        return self.audio


@dataclass
class CorpusManifest:
    grammar: MatrixGrammar
    entries: list

    def __len__(self):
        return len(self.entries)

    def conditions(self) -> dict:
        """Entries grouped by (speaker, language, effort), in first-seen order."""
        groups = defaultdict(list)
        for e in self.entries:
            groups[e.condition].append(e)
        return dict(groups)

    def subset(self, speaker=None, language=None, effort=None) -> "CorpusManifest":
        keep = [
            e
            for e in self.entries
            if (speaker is None or e.speaker == speaker)
            and (language is None or e.language == language)
            and (effort is None or e.effort == effort)
        ]
        return CorpusManifest(self.grammar, keep)


def _grammar_header(g: MatrixGrammar) -> list[str]:
    return [f"#slot\t{name}\t{' '.join(words)}" for name, words in zip(g.slots, g.alternatives)]


def write_manifest(m: CorpusManifest, path, audio_dir=None) -> Path:
    """Write a manifest; in-memory audio is exported to ``audio_dir`` first."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    audio_dir = Path(audio_dir) if audio_dir else path.parent / "audio"
    lines = [f"{MANIFEST_MAGIC}\t{MANIFEST_VERSION}", *_grammar_header(m.grammar), COLUMN_HEADER]
    for i, e in enumerate(m.entries):
        if e.path is None:
            e.path = write_wav(audio_dir / f"{e.speaker}_{e.language}_{e.effort}_{i:05d}.wav", e.audio)
        try:
            rel = Path(e.path).resolve().relative_to(path.parent.resolve())
        except ValueError:
            rel = Path(e.path).resolve()
        lines.append("\t".join([str(rel), " ".join(e.label.words), e.speaker, e.language, e.effort]))
    path.write_text("\n".join(lines) + "\n")
    return path


def load_manifest(path) -> CorpusManifest:
    """Parse and validate a manifest file.

    Layout: a magic/version line, one ``#slot<TAB>name<TAB>words...`` line
    per grammar slot, a column header, then one tab-separated row per
    recording. Audio paths are relative to the manifest's directory.
    """
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest {path} does not exist")
    lines = [ln.rstrip("\n") for ln in path.read_text().splitlines() if ln.strip()]
    if not lines or not lines[0].startswith(MANIFEST_MAGIC):
        raise ManifestError(f"{path}: missing '{MANIFEST_MAGIC}' header line")
    slots = {}
    body_start = 1
    for ln in lines[1:]:
        if not ln.startswith("#slot"):
            break
        parts = ln.split("\t")
        if len(parts) != 3:
            raise ManifestError(f"{path}: malformed slot line {ln!r}")
        slots[parts[1]] = parts[2].split()
        body_start += 1
    try:
        grammar = MatrixGrammar.from_dict(slots)
    except ValueError as exc:
        raise ManifestError(f"{path}: invalid grammar: {exc}") from exc
    if body_start >= len(lines) or tuple(lines[body_start].split("\t")) != MANIFEST_COLUMNS:
        raise ManifestError(f"{path}: expected column header {COLUMN_HEADER!r}")
    entries = []
    rates = set()
    for lineno, ln in enumerate(lines[body_start + 1 :], start=body_start + 2):
        parts = ln.split("\t")
        if len(parts) != len(MANIFEST_COLUMNS):
            raise ManifestError(f"{path}:{lineno}: expected {len(MANIFEST_COLUMNS)} fields")
        rel, words, speaker, language, effort = parts
        label = SentenceLabel(tuple(words.split()))
        try:
            label.validate(grammar)
        except ValueError as exc:
            raise ManifestError(f"{path}:{lineno}: {exc}") from exc
        audio_path = (path.parent / rel).resolve()
        if not audio_path.is_file():
            raise ManifestError(f"{path}:{lineno}: audio file {audio_path} not found")
        try:
            rate, _ = wavfile.read(str(audio_path), mmap=True)
        except Exception as exc:
            raise ManifestError(f"{path}:{lineno}: unreadable audio {audio_path}: {exc}") from exc
        rates.add(rate)
        entries.append(ManifestEntry(label, speaker, language, effort, audio_path))
    if not entries:
        raise ManifestError(f"{path}: empty corpus")
    if len(rates) > 1:
        raise ManifestError(f"{path}: mixed sample rates {sorted(rates)}")
    return CorpusManifest(grammar, entries)


def split_train_test(m: CorpusManifest, fraction: float, rng_seed):
    """Stratified split; ``fraction`` is the share of each condition used for training."""
    if not 0 < fraction < 1:
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")
    if len(m) < 2:
        raise ValueError("need at least 2 entries to split")
    rng = np.random.default_rng(rng_seed)
    train, test = [], []
    for entries in m.conditions().values():
        order = rng.permutation(len(entries))
        n_train = int(round(fraction * len(entries)))
        if len(entries) >= 2:
            n_train = min(max(n_train, 1), len(entries) - 1)
        train += [entries[i] for i in sorted(order[:n_train])]
        test += [entries[i] for i in sorted(order[n_train:])]
    return CorpusManifest(m.grammar, train), CorpusManifest(m.grammar, test)


# -- synthetic corpus ---------------------------------------------------------


@dataclass(frozen=True)
class TokenRecipe:
    """Parameters of one synthetic word token.

    F0 follows a piecewise-linear contour through start, middle and end
    values. Three resonances move linearly from their start to their end
    frequencies. An optional band-noise burst precedes the voiced part.
    """

    f0: tuple  # (start, mid, end) Hz
    formants_start: tuple  # Hz
    formants_end: tuple  # Hz
    bandwidths: tuple = (90.0, 110.0, 170.0)
    duration_ms: float = 400.0
    burst_hz: float = 0.0  # 0 disables the burst
    burst_ms: float = 0.0
    level_db: float = 0.0

    def validate(self):
        if self.duration_ms <= 100:
            raise ValueError(f"token duration must exceed 100 ms, got {self.duration_ms}")
        if min(self.f0) <= 0:
            raise ValueError("F0 must be positive")
        if len(self.formants_start) != len(self.formants_end) or len(self.bandwidths) != len(self.formants_start):
            raise ValueError("formant and bandwidth lists must have equal length")
        if self.burst_ms < 0 or self.burst_ms >= self.duration_ms:
            raise ValueError("burst must be shorter than the token")


@dataclass(frozen=True)
class Voice:
    """Speaker / vocal-effort transform applied on top of word recipes."""

    f0_scale: float = 1.0
    formant_scale: float = 1.0
    duration_scale: float = 1.0
    tilt_db_per_octave: float = 0.0  # relative to 1 kHz


@dataclass(frozen=True)
class SyntheticCorpusSpec:
    grammar: MatrixGrammar
    recipes: dict  # slot name -> {word: TokenRecipe}
    sample_rate: int = 16000
    tonal_mode: bool = False
    word_gap_ms: float = 50.0
    jitter: float = 0.04  # relative per-token F0/duration variation
    voice: Voice = Voice()

    def validate(self):
        for name, words in zip(self.grammar.slots, self.grammar.alternatives):
            slot = self.recipes.get(name)
            if slot is None or set(slot) != set(words):
                raise ValueError(f"recipes for slot {name!r} do not match its alternatives")
            for r in slot.values():
                r.validate()
            if len(set(slot.values())) != len(slot):
                raise ValueError(f"recipes within slot {name!r} are not distinct")
        if self.jitter < 0 or self.jitter >= 0.5:
            raise ValueError("jitter must be in [0, 0.5)")


_TONES = [
    (1.0, 1.0, 1.0),
    (0.85, 1.05, 1.35),
    (1.35, 1.1, 0.8),
    (1.05, 0.8, 1.15),
    (1.3, 1.3, 1.3),
    (0.8, 0.8, 0.8),
    (0.9, 1.2, 1.2),
    (1.2, 0.9, 0.9),
    (0.8, 1.0, 1.3),
    (1.3, 0.95, 1.05),
    (1.1, 1.4, 1.0),
    (1.0, 0.75, 1.0),
]


def make_recipes(grammar: MatrixGrammar, tonal_mode: bool = False, seed: int = 0) -> dict:
    """Deterministic, within-slot distinct token recipes for a grammar.

    Non-tonal words differ in resonance trajectories, burst and duration.
    Tonal words within one slot share everything except the F0 contour.
    """
    rng = np.random.default_rng(derive_seed(seed, "recipes", int(tonal_mode)))
    base_f0 = 120.0
    recipes = {}
    for name, words in zip(grammar.slots, grammar.alternatives):
        slot = {}
        if tonal_mode:
            if len(words) > len(_TONES):
                raise ValueError(f"tonal mode supports at most {len(_TONES)} alternatives per slot")
            shared = _draw_spectral(rng)
            for w, tone in zip(words, _TONES):
                slot[w] = TokenRecipe(f0=tuple(base_f0 * t for t in tone), **shared)
        else:
            drawn = []
            for w in words:
                for _ in range(200):
                    cand = _draw_spectral(rng)
                    if all(_formant_distance(cand, d) > 0.35 for d in drawn):
                        break
                drawn.append(cand)
                decl = rng.uniform(0.8, 0.95)
                slot[w] = TokenRecipe(f0=(base_f0, base_f0 * (1 + decl) / 2, base_f0 * decl), **cand)
        recipes[name] = slot
    return recipes


def _draw_spectral(rng) -> dict:
    def vowel():
        return (rng.uniform(300, 850), rng.uniform(900, 2300), rng.uniform(2400, 3300))

    burst = rng.random() < 0.6
    return dict(
        formants_start=vowel(),
        formants_end=vowel(),
        duration_ms=float(rng.uniform(320, 480)),
        burst_hz=float(rng.uniform(2500, 6000)) if burst else 0.0,
        burst_ms=float(rng.uniform(40, 90)) if burst else 0.0,
    )


def _formant_distance(a: dict, b: dict) -> float:
    fa = np.log(np.r_[a["formants_start"][:2], a["formants_end"][:2]])
    fb = np.log(np.r_[b["formants_start"][:2], b["formants_end"][:2]])
    return float(np.sqrt(np.sum((fa - fb) ** 2)))


def make_synthetic_spec(
    grammar: MatrixGrammar | None = None,
    tonal_mode: bool = False,
    seed: int = 0,
    voice: Voice = Voice(),
    sample_rate: int = 16000,
    jitter: float = 0.04,
) -> SyntheticCorpusSpec:
    grammar = grammar or desk_grammar()
    return SyntheticCorpusSpec(
        grammar, make_recipes(grammar, tonal_mode, seed), sample_rate, tonal_mode, jitter=jitter, voice=voice
    )


def _token_samples(recipe: TokenRecipe, voice: Voice, sr: int, rng: np.random.Generator, jitter: float) -> int:
    scale = voice.duration_scale * (1 + jitter * rng.uniform(-1, 1)) if jitter else voice.duration_scale
    return int(round(recipe.duration_ms * scale * sr / 1000.0))


def synthesize_token(
    recipe: TokenRecipe, voice: Voice, sr: int, n: int, rng: np.random.Generator, jitter: float = 0.0
) -> np.ndarray:
    """Render one token of exactly ``n`` samples."""
    t = np.arange(n) / sr
    dur = n / sr
    f0_scale = voice.f0_scale * (1 + jitter * rng.uniform(-1, 1)) if jitter else voice.f0_scale
    f0 = np.interp(t, [0, dur / 2, dur], recipe.f0) * f0_scale
    phase = 2 * np.pi * np.cumsum(f0) / sr
    n_harm = int(min(0.45 * sr, 7000) // (f0.min()))
    harmonics = np.arange(1, n_harm + 1)

    # spectral envelope evaluated on a 5 ms control grid
    ctrl_t = np.linspace(0, dur, max(2, int(dur / 0.005) + 1))
    frac = ctrl_t / dur
    fs = np.array(recipe.formants_start) * voice.formant_scale
    fe = np.array(recipe.formants_end) * voice.formant_scale
    formants = fs[None, :] + frac[:, None] * (fe - fs)[None, :]  # (ctrl, 3)
    f0_ctrl = np.interp(ctrl_t, t, f0)
    hf = f0_ctrl[:, None] * harmonics[None, :]  # (ctrl, H)
    bw = np.array(recipe.bandwidths)
    env = sum(
        1.0 / (1.0 + ((hf - formants[:, i : i + 1]) / (bw[i] / 2)) ** 2) * (0.8**i) for i in range(len(bw))
    )
    env = env + 0.02
    tilt = 10 ** (voice.tilt_db_per_octave * np.log2(np.maximum(hf, 50.0) / 1000.0) / 20)
    env = env * tilt * (hf < 0.45 * sr)
    amps = np.empty((n, n_harm))
    for h in range(n_harm):
        amps[:, h] = np.interp(t, ctrl_t, env[:, h])
    voiced = np.einsum("nh,nh->n", amps, np.sin(phase[:, None] * harmonics[None, :]))

    x = voiced / (np.sqrt(np.mean(voiced**2)) + 1e-12)
    if recipe.burst_hz > 0 and recipe.burst_ms > 0:
        nb = int(round(recipe.burst_ms * voice.duration_scale * sr / 1000.0))
        nb = min(nb, n // 3)
        lo = min(recipe.burst_hz * 0.75, 0.45 * sr)
        hi = min(recipe.burst_hz * 1.25, 0.49 * sr)
        sos = butter(4, [lo, hi], btype="bandpass", fs=sr, output="sos")
        burst = sosfilt(sos, rng.standard_normal(nb))
        burst *= 0.5 / (np.sqrt(np.mean(burst**2)) + 1e-12) * np.hanning(nb)
        fade = np.clip(np.arange(n) - nb / 2, 0, None) / max(1, nb / 2)
        x = x * np.minimum(fade, 1.0)
        x[:nb] += burst
    ramp = min(int(0.015 * sr), n // 2)
    edge = 0.5 * (1 - np.cos(np.pi * np.arange(ramp) / ramp))
    x[:ramp] *= edge
    x[n - ramp :] *= edge[::-1]
    return 0.1 * 10 ** (recipe.level_db / 20) * x


def synthesize_sentence(spec: SyntheticCorpusSpec, label: SentenceLabel, rng_seed) -> AudioBuffer:
    rng = np.random.default_rng(rng_seed)
    sr = spec.sample_rate
    gap = np.zeros(int(round(spec.word_gap_ms * sr / 1000.0)))
    parts = []
    for i, (name, word) in enumerate(zip(spec.grammar.slots, label.words)):
        recipe = spec.recipes[name][word]
        n = _token_samples(recipe, spec.voice, sr, rng, spec.jitter)
        if i:
            parts.append(gap)
        parts.append(synthesize_token(recipe, spec.voice, sr, n, rng, spec.jitter))
    return AudioBuffer(np.concatenate(parts), sr)


def synthesize_corpus(
    spec: SyntheticCorpusSpec,
    sentences: int,
    rng_seed: int,
    speaker: str = "s1",
    language: str = "eng",
    effort: str = "plain",
) -> CorpusManifest:
    """In-memory corpus; sentence ``i`` depends only on (seed, i)."""
    spec.validate()
    entries = []
    for i in range(sentences):
        label = sample_sentence(spec.grammar, derive_seed(rng_seed, "label", i))
        audio = synthesize_sentence(spec, label, derive_seed(rng_seed, "audio", i))
        entries.append(ManifestEntry(label, speaker, language, effort, audio=audio))
    return CorpusManifest(spec.grammar, entries)


def with_voice(spec: SyntheticCorpusSpec, voice: Voice) -> SyntheticCorpusSpec:
    return replace(spec, voice=voice)
