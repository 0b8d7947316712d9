"""Whole-word HMMs with diagonal-covariance Gaussian mixture states."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

SILENCE = "<sil>"
MODEL_FORMAT = "fadesim-hmm"
MODEL_FORMAT_VERSION = 1
LOG_2PI = float(np.log(2 * np.pi))


@dataclass(frozen=True)
class HmmTopology:
    """Strict left-to-right models with self-loops.

    ``edge_silence`` puts the shared silence model at sentence start and
    end; it is mandatory in training alignments and optional in decoding.
    """

    states_per_word: int = 16
    silence_states: int = 4
    edge_silence: bool = True

    def __post_init__(self):
        if self.states_per_word < 1:
            raise ValueError(f"states_per_word must be >= 1, got {self.states_per_word}")
        if self.silence_states < 1:
            raise ValueError(f"silence_states must be >= 1, got {self.silence_states}")


@dataclass(frozen=True)
class GaussianState:
    weights: np.ndarray  # (M,)
    means: np.ndarray  # (M, D)
    variances: np.ndarray  # (M, D)


@dataclass
class WordHmm:
    word: str
    means: np.ndarray  # (S, M, D)
    variances: np.ndarray  # (S, M, D)
    log_weights: np.ndarray  # (S, M)
    log_self: np.ndarray  # (S,)
    log_next: np.ndarray  # (S,)

    @property
    def num_states(self) -> int:
        return self.means.shape[0]

    def state(self, i: int) -> GaussianState:
        return GaussianState(np.exp(self.log_weights[i]), self.means[i], self.variances[i])

    def copy(self) -> "WordHmm":
        return WordHmm(
            self.word,
            self.means.copy(),
            self.variances.copy(),
            self.log_weights.copy(),
            self.log_self.copy(),
            self.log_next.copy(),
        )


@dataclass
class HmmModelSet:
    """All word models plus silence, with a flat state table for scoring.

    Model states are numbered word by word in ``order``; graph states
    refer to rows of that table.
    """

    topology: HmmTopology
    models: dict  # word id -> WordHmm, includes SILENCE
    variance_floor: np.ndarray
    history: list = field(default_factory=list)

    def __post_init__(self):
        self._stack = None

    @property
    def order(self) -> list[str]:
        return sorted(self.models)

    @property
    def dim(self) -> int:
        return self.variance_floor.shape[0]

    @property
    def num_mixtures(self) -> int:
        return next(iter(self.models.values())).means.shape[1]

    def offsets(self) -> dict:
        out, pos = {}, 0
        for w in self.order:
            out[w] = pos
            pos += self.models[w].num_states
        return out

    def total_states(self) -> int:
        return sum(m.num_states for m in self.models.values())

    def transition_table(self):
        """Flat (log_self, log_next) arrays over all model states."""
        return (
            np.concatenate([self.models[w].log_self for w in self.order]),
            np.concatenate([self.models[w].log_next for w in self.order]),
        )

    def _stacked(self):
        if self._stack is None:
            means = np.concatenate([self.models[w].means for w in self.order])  # (S, M, D)
            var = np.concatenate([self.models[w].variances for w in self.order])
            logw = np.concatenate([self.models[w].log_weights for w in self.order])  # (S, M)
            s, m, d = means.shape
            inv = 1.0 / var.reshape(s * m, d)
            mu = means.reshape(s * m, d)
            const = (
                logw.reshape(s * m)
                - 0.5 * (d * LOG_2PI + np.log(var.reshape(s * m, d)).sum(axis=1))
                - 0.5 * np.sum(mu * mu * inv, axis=1)
            )
            self._stack = (s, m, inv.T.copy(), (mu * inv).T.copy(), const)
        return self._stack

    def invalidate(self):
        self._stack = None

    def log_emissions(self, x: np.ndarray) -> np.ndarray:
        """Per-frame log-likelihood of every model state, shape (T, states)."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise ValueError(f"features of shape {x.shape} do not match model dimension {self.dim}")
        s, m, inv_t, mu_inv_t, const = self._stacked()
        comp = const[None, :] + x @ mu_inv_t - 0.5 * ((x * x) @ inv_t)
        if m == 1:
            return comp
        return logsumexp(comp.reshape(x.shape[0], s, m), axis=2)

    def copy(self) -> "HmmModelSet":
        return HmmModelSet(
            self.topology,
            {w: m.copy() for w, m in self.models.items()},
            self.variance_floor.copy(),
            list(self.history),
        )


def save_models(models: HmmModelSet, path) -> Path:
    """Store a model set as ``.npz``.

    Layout: ``meta`` holds a JSON string with format name, version,
    topology, word order and history; ``<i>/<field>`` holds the arrays of
    the i-th word in that order; ``variance_floor`` holds the floor.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "format": MODEL_FORMAT,
        "version": MODEL_FORMAT_VERSION,
        "topology": {
            "states_per_word": models.topology.states_per_word,
            "silence_states": models.topology.silence_states,
            "edge_silence": models.topology.edge_silence,
        },
        "words": models.order,
        "history": [float(h) for h in models.history],
    }
    arrays = {"meta": np.array(json.dumps(meta)), "variance_floor": models.variance_floor}
    for i, w in enumerate(models.order):
        m = models.models[w]
        for name in ("means", "variances", "log_weights", "log_self", "log_next"):
            arrays[f"{i}/{name}"] = getattr(m, name)
    with path.open("wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_models(path) -> HmmModelSet:
    with np.load(Path(path), allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta.get("format") != MODEL_FORMAT:
            raise ValueError(f"{path} is not a {MODEL_FORMAT} file")
        if meta.get("version") != MODEL_FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported model format version {meta.get('version')}")
        models = {}
        for i, w in enumerate(meta["words"]):
            models[w] = WordHmm(
                w,
                *(data[f"{i}/{name}"].copy() for name in ("means", "variances", "log_weights", "log_self", "log_next")),
            )
        return HmmModelSet(
            HmmTopology(**meta["topology"]), models, data["variance_floor"].copy(), meta["history"]
        )
