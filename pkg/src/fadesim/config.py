"""Declarative experiment configuration (JSON)."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .asr import HmmTopology, TrainConfig
from .corpus import MatrixGrammar, default_grammar, desk_grammar
from .errors import ConfigError
from .features import FeatureSpec, MfccConfig, SgbfbConfig
from .frontend import FrontendConfig
from .sim import SnrGrid, SweepConfig


@dataclass(frozen=True)
class VoiceConfig:
    f0_scale: float = 1.0
    formant_scale: float = 1.0
    duration_scale: float = 1.0
    tilt_db_per_octave: float = 0.0


@dataclass(frozen=True)
class LanguageConfig:
    tonal: bool = False


@dataclass(frozen=True)
class CorpusConfig:
    """Either a manifest on disk or a synthetic corpus.

    ``test_sentences`` is the size of the test list per condition; with a
    manifest, ``train_fraction`` of each condition goes to training.
    """

    manifest: str | None = None
    train_fraction: float = 0.5
    grammar: str | dict = "desk"  # "desk", "default" or an explicit grammar
    train_sentences: int = 60
    test_sentences: int = 60
    jitter: float = 0.04


@dataclass(frozen=True)
class NoiseConfig:
    label: str
    kind: str  # "file", "stationary" or "gated"
    path: str | None = None
    base: str | None = None  # label of the noise a gated surrogate is built from
    duration_s: float = 30.0
    max_gap_ms: float = 250.0


@dataclass(frozen=True)
class FeatureConfig:
    name: str
    kind: str
    mfcc: MfccConfig = MfccConfig()
    sgbfb: SgbfbConfig = SgbfbConfig()
    normalize: bool = True

    def spec(self, frontend: FrontendConfig) -> FeatureSpec:
        return FeatureSpec(self.kind, frontend, self.mfcc, self.sgbfb, self.normalize)


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 20240601
    output_dir: str = "results"
    workers: int = 1
    corpus: CorpusConfig = CorpusConfig()
    speakers: dict = field(default_factory=lambda: {"s1": VoiceConfig()})
    languages: dict = field(default_factory=lambda: {"eng": LanguageConfig()})
    efforts: dict = field(
        default_factory=lambda: {
            "plain": VoiceConfig(),
            "lombard": VoiceConfig(f0_scale=1.25, formant_scale=1.05, duration_scale=1.15, tilt_db_per_octave=3.0),
        }
    )
    plain_effort: str = "plain"
    lombard_effort: str = "lombard"
    noises: tuple = (
        NoiseConfig("icra1", "stationary"),
        NoiseConfig("icra5-250", "gated", base="icra1"),
    )
    features: tuple = (FeatureConfig("SGBFB", "SGBFB"), FeatureConfig("MFCC", "MFCC"))
    frontend: FrontendConfig = FrontendConfig()
    train_snrs: tuple = tuple(float(x) for x in range(-18, 7, 3))
    test_snrs: tuple = tuple(float(x) for x in range(-60, 10, 3))
    topology: HmmTopology = HmmTopology()
    training: TrainConfig = TrainConfig()
    pad_ms: float = 100.0
    noise_level_dbfs: float | None = -85.0
    criterion: float = 0.5
    interpolation: str = "linear"
    empirical: str | None = None
    empirical_listeners: str | None = None

    # -- derived views ---------------------------------------------------------

    @property
    def grid(self) -> SnrGrid:
        return SnrGrid(self.train_snrs, self.test_snrs)

    @property
    def sweep(self) -> SweepConfig:
        return SweepConfig(self.topology, self.training, self.pad_ms, self.noise_level_dbfs)

    def grammar(self) -> MatrixGrammar:
        g = self.corpus.grammar
        if isinstance(g, dict):
            return MatrixGrammar.from_dict(g)
        builders = {"desk": desk_grammar, "default": default_grammar}
        if g not in builders:
            raise ConfigError(f"unknown grammar {g!r}; expected one of {sorted(builders)} or a slot mapping")
        return builders[g]()

    def noise(self, label: str) -> NoiseConfig:
        for n in self.noises:
            if n.label == label:
                return n
        raise ConfigError(f"unknown noise {label!r}")

    def validate(self) -> "ExperimentConfig":
        try:
            self.grid
            self.grammar()
        except (ValueError, KeyError) as exc:
            raise ConfigError(str(exc)) from exc
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise ConfigError("seed must be an integer")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if not (self.features and self.noises and self.speakers and self.languages and self.efforts):
            raise ConfigError("the experiment needs at least one condition")
        c = self.corpus
        if c.manifest is not None and not Path(c.manifest).exists():
            raise ConfigError(f"manifest {c.manifest} does not exist")
        if not 0 < c.train_fraction < 1:
            raise ConfigError("train_fraction must lie in (0, 1)")
        if c.train_sentences < 1 or c.test_sentences < 1:
            raise ConfigError("sentence counts must be >= 1")
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise ConfigError("feature names must be unique")
        for f in self.features:
            if f.kind not in ("MFCC", "SGBFB"):
                raise ConfigError(f"feature {f.name!r}: unknown kind {f.kind!r}")
        labels = [n.label for n in self.noises]
        if len(set(labels)) != len(labels):
            raise ConfigError("noise labels must be unique")
        for n in self.noises:
            if n.kind not in ("file", "stationary", "gated"):
                raise ConfigError(f"noise {n.label!r}: unknown kind {n.kind!r}")
            if n.kind == "file" and (n.path is None or not Path(n.path).exists()):
                raise ConfigError(f"noise {n.label!r}: file {n.path} does not exist")
            if n.kind == "gated":
                if n.base not in labels or self.noise(n.base).kind == "gated":
                    raise ConfigError(f"noise {n.label!r}: base must name a non-gated noise")
                if n.max_gap_ms <= 0:
                    raise ConfigError(f"noise {n.label!r}: max_gap_ms must be positive")
        for path in (self.empirical, self.empirical_listeners):
            if path is not None and not Path(path).exists():
                raise ConfigError(f"empirical data file {path} does not exist")
        if self.interpolation not in ("linear", "logistic"):
            raise ConfigError(f"unknown interpolation {self.interpolation!r}")
        if not 0 < self.criterion < 1:
            raise ConfigError("criterion must lie in (0, 1)")
        for cond in ("speakers", "languages", "efforts"):
            for key in getattr(self, cond):
                if "|" in key or "/" in key:
                    raise ConfigError(f"{cond} name {key!r} may not contain '|' or '/'")
        return self

    # -- serialization ---------------------------------------------------------

    def to_dict(self) -> dict:
        return _plain(self)

    def hash(self) -> str:
        """Digest of every parameter that can change results."""
        d = self.to_dict()
        for volatile in ("workers", "output_dir"):
            d.pop(volatile)
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        try:
            return _build(cls, d).validate()
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc


def _plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, float) and obj.is_integer():
        return float(obj)
    return obj


_NESTED = {
    "corpus": CorpusConfig,
    "frontend": FrontendConfig,
    "topology": HmmTopology,
    "training": TrainConfig,
    "mfcc": MfccConfig,
    "sgbfb": SgbfbConfig,
}


def _build(cls, d):
    if not isinstance(d, dict):
        raise ConfigError(f"{cls.__name__} must be a JSON object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {', '.join(unknown)}")
    kw = {}
    for key, value in d.items():
        if key in _NESTED:
            kw[key] = _build(_NESTED[key], value)
        elif cls is ExperimentConfig and key in ("speakers", "efforts"):
            kw[key] = {k: _build(VoiceConfig, v) for k, v in value.items()}
        elif cls is ExperimentConfig and key == "languages":
            kw[key] = {k: _build(LanguageConfig, v) for k, v in value.items()}
        elif cls is ExperimentConfig and key == "noises":
            kw[key] = tuple(_build(NoiseConfig, v) for v in value)
        elif cls is ExperimentConfig and key == "features":
            kw[key] = tuple(_build(FeatureConfig, v) for v in value)
        elif key in ("train_snrs", "test_snrs"):
            kw[key] = tuple(float(x) for x in value)
        else:
            kw[key] = value
    return cls(**kw)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return ExperimentConfig.from_dict(data)


def dump_config(cfg: ExperimentConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"
