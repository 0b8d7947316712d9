"""Flat-start initialization and Viterbi re-estimation of word models."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from ..corpus import MatrixGrammar, SentenceLabel
from ..errors import TrainingDataError
from .graph import build_alignment_graph, graph_emissions, viterbi_path
from .models import SILENCE, HmmModelSet, HmmTopology, WordHmm

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    max_iterations: int = 12
    tolerance: float = 1e-4  # relative improvement of the aligned log-likelihood
    num_mixtures: int = 1
    variance_floor_ratio: float = 1e-3  # times the global per-dimension variance
    min_transition: float = 1e-3  # transition probabilities are clamped to [p, 1 - p]


def _path_units(label: SentenceLabel, topo: HmmTopology) -> list[str]:
    units = list(label.words)
    return [SILENCE, *units, SILENCE] if topo.edge_silence else units


def _path_states(label: SentenceLabel, topo: HmmTopology) -> list[tuple]:
    out = []
    for unit in _path_units(label, topo):
        n = topo.silence_states if unit == SILENCE else topo.states_per_word
        out += [(unit, i) for i in range(n)]
    return out


def init_models(
    data,
    topo: HmmTopology = HmmTopology(),
    cfg: TrainConfig = TrainConfig(),
    grammar: MatrixGrammar | None = None,
) -> HmmModelSet:
    """Flat start from a uniform segmentation of every utterance.

    ``data`` is a sequence of ``(FeatureMatrix, SentenceLabel)``. Each
    utterance's frames are split into equal consecutive runs over all the
    states on its label path (edge silence included), so silence is seeded
    from the utterance edges.
    """
    data = list(data)
    if not data:
        raise TrainingDataError("no training utterances")
    dim = data[0][0].values.shape[1]
    words = set(grammar.vocabulary) if grammar is not None else {w for _, lab in data for w in lab.words}
    if grammar is not None:
        for _, lab in data:
            lab.validate(grammar)
    all_frames = np.vstack([fm.values for fm, _ in data])
    floor = np.maximum(cfg.variance_floor_ratio * all_frames.var(axis=0), 1e-10)

    buckets: dict = {}
    used = 0
    for fm, lab in data:
        if fm.values.shape[1] != dim:
            raise ValueError("training utterances have different feature dimensions")
        states = _path_states(lab, topo)
        T = fm.num_frames
        if T < len(states):
            log.warning("utterance %r has %d frames for %d states; skipped", str(lab), T, len(states))
            continue
        used += 1
        pos = (np.arange(T) * len(states)) // T
        for p, key in enumerate(states):
            buckets.setdefault(key, []).append(fm.values[pos == p])
    needed = sorted(words) + ([SILENCE] if topo.edge_silence else [])
    for w in needed:
        if (w, 0) not in buckets:
            raise TrainingDataError(f"no usable training utterance contains word {w!r}")

    models = {}
    m = cfg.num_mixtures
    for w in needed:
        n_states = topo.silence_states if w == SILENCE else topo.states_per_word
        means = np.empty((n_states, m, dim))
        var = np.empty((n_states, m, dim))
        for i in range(n_states):
            x = np.vstack(buckets[(w, i)])
            mu = x.mean(axis=0)
            v = np.maximum(x.var(axis=0), floor)
            spread = np.linspace(-1, 1, m) * 0.2 if m > 1 else np.zeros(1)
            means[i] = mu[None, :] + spread[:, None] * np.sqrt(v)[None, :]
            var[i] = v[None, :]
        models[w] = WordHmm(
            w,
            means,
            var,
            np.full((n_states, m), -np.log(m)),
            np.full(n_states, np.log(0.5)),
            np.full(n_states, np.log(0.5)),
        )
    log.debug("initialized %d models from %d utterances", len(models), used)
    return HmmModelSet(topo, models, floor)


def _align(models: HmmModelSet, data, graphs):
    """Viterbi-align every usable utterance; returns alignments and total score."""
    total = 0.0
    alignments = []
    for (fm, _), graph in zip(data, graphs):
        if graph is None:
            alignments.append(None)
            continue
        graph.refresh(models)
        path, score = viterbi_path(graph, graph_emissions(graph, fm.values))
        total += score
        alignments.append(graph.state_model[path])
    return alignments, total


def _reestimate(models: HmmModelSet, data, alignments, cfg: TrainConfig) -> HmmModelSet:
    new = models.copy()
    floor = models.variance_floor
    n_total = models.total_states()
    offsets = models.offsets()
    frames = [[] for _ in range(n_total)]
    n_self = np.zeros(n_total)
    n_next = np.zeros(n_total)
    for (fm, _), states in zip(data, alignments):
        if states is None:
            continue
        for s in np.unique(states):
            frames[s].append(fm.values[states == s])
        stay = states[1:] == states[:-1]
        np.add.at(n_self, states[:-1][stay], 1)
        np.add.at(n_next, states[:-1][~stay], 1)

    lo, hi = cfg.min_transition, 1 - cfg.min_transition
    for w, hmm in new.models.items():
        for i in range(hmm.num_states):
            s = offsets[w] + i
            if frames[s]:
                _update_state(hmm, i, np.vstack(frames[s]), floor)
            visits = n_self[s] + n_next[s]
            if visits > 0:
                p_next = min(max(n_next[s] / visits, lo), hi)
                hmm.log_next[i] = np.log(p_next)
                hmm.log_self[i] = np.log1p(-p_next)
    new.invalidate()
    return new


def _update_state(hmm: WordHmm, i: int, x: np.ndarray, floor: np.ndarray):
    m = hmm.means.shape[1]
    if m == 1:
        hmm.means[i, 0] = x.mean(axis=0)
        hmm.variances[i, 0] = np.maximum(x.var(axis=0), floor)
        return
    # one EM step on the frames aligned to this state
    mu, var, logw = hmm.means[i], hmm.variances[i], hmm.log_weights[i]
    ll = (
        logw[None, :]
        - 0.5 * np.sum(np.log(2 * np.pi * var), axis=1)[None, :]
        - 0.5 * np.sum((x[:, None, :] - mu[None, :, :]) ** 2 / var[None, :, :], axis=2)
    )
    resp = np.exp(ll - logsumexp(ll, axis=1, keepdims=True))
    occ = resp.sum(axis=0)
    for k in range(m):
        if occ[k] <= 1e-8:
            continue
        r = resp[:, k : k + 1]
        mean = (r * x).sum(axis=0) / occ[k]
        hmm.means[i, k] = mean
        hmm.variances[i, k] = np.maximum((r * (x - mean) ** 2).sum(axis=0) / occ[k], floor)
    hmm.log_weights[i] = np.log(np.maximum(occ, 1e-300) / occ.sum())


def train(models: HmmModelSet, data, cfg: TrainConfig = TrainConfig()) -> HmmModelSet:
    """Iterative Viterbi re-estimation.

    Each iteration force-aligns every utterance to its label path and
    re-estimates Gaussians and transitions from the hard alignment. All
    updates are (constrained) maximizers for a fixed alignment, so the
    aligned log-likelihood recorded in ``history`` never decreases.
    Training stops at a fixed-point alignment, when the relative
    improvement drops below ``cfg.tolerance``, or after
    ``cfg.max_iterations``.
    """
    data = list(data)
    topo = models.topology
    graphs = []
    for fm, lab in data:
        if fm.num_frames < len(_path_states(lab, topo)):
            log.warning("utterance %r too short for its label path; skipped", str(lab))
            graphs.append(None)
        else:
            graphs.append(build_alignment_graph(models, lab))
    if all(g is None for g in graphs):
        raise TrainingDataError("every training utterance is shorter than its label path")

    history = list(models.history)
    previous = None
    for _ in range(cfg.max_iterations):
        alignments, total = _align(models, data, graphs)
        last = history[-1] if history else None
        history.append(total)
        models = _reestimate(models, data, alignments, cfg)
        if previous is not None and all(
            (a is None and b is None) or np.array_equal(a, b) for a, b in zip(alignments, previous)
        ):
            break
        if last is not None and abs(total - last) <= cfg.tolerance * abs(last):
            break
        previous = alignments
    models.history = history
    return models


def train_models(data, topo: HmmTopology = HmmTopology(), cfg: TrainConfig = TrainConfig(), grammar=None) -> HmmModelSet:
    return train(init_models(data, topo, cfg, grammar), data, cfg)
