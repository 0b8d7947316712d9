"""Grammar-composed decoding graphs and Viterbi search."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from ..corpus import MatrixGrammar, SentenceLabel
from ..errors import DecodeError
from .models import SILENCE, HmmModelSet

NEG_INF = -np.inf


@dataclass(frozen=True)
class Transcript:
    words: tuple
    log_likelihood: float


@dataclass
class DecodingGraph:
    """State graph: [silence] -> slot 1 words -> ... -> slot S words -> [silence].

    Incoming arcs are stored per destination state (CSR layout). Every arc
    carries ``code_add``: entering word ``w`` of slot ``k`` adds
    ``rank(w) * prod(len(slot j) for j > k)``, so a state's accumulated
    code orders partial word sequences lexicographically. Viterbi uses it
    to break exact score ties toward the smaller word sequence.
    """

    models: HmmModelSet
    grammar: MatrixGrammar
    state_model: np.ndarray  # graph state -> model state row
    state_slot: np.ndarray  # -1 for silence
    state_word: tuple
    in_ptr: np.ndarray
    in_src: np.ndarray
    in_add: np.ndarray
    arc_state: np.ndarray  # model state whose transition the arc uses
    arc_self: np.ndarray  # True for self-loops
    in_logp: np.ndarray
    init_logp: np.ndarray
    init_code: np.ndarray
    final_mask: np.ndarray

    @property
    def num_states(self) -> int:
        return self.state_model.shape[0]

    def refresh(self, models: HmmModelSet | None = None) -> "DecodingGraph":
        """Re-read transition probabilities (after training)."""
        if models is not None:
            self.models = models
        log_self, log_next = self.models.transition_table()
        self.in_logp = np.where(self.arc_self, log_self[self.arc_state], log_next[self.arc_state])
        return self


class _Builder:
    def __init__(self, models: HmmModelSet):
        self.models = models
        self.offsets = models.offsets()
        self.state_model, self.state_slot, self.state_word = [], [], []
        self.arcs = []  # (src, dst, code_add, model_state, is_self)

    def chain(self, word: str, slot: int) -> list[int]:
        if word not in self.models.models:
            raise ValueError(f"no model for word {word!r}")
        base = self.offsets[word]
        ids = []
        for i in range(self.models.models[word].num_states):
            g = len(self.state_model)
            self.state_model.append(base + i)
            self.state_slot.append(slot)
            self.state_word.append(None if word == SILENCE else word)
            self.arcs.append((g, g, 0, base + i, True))
            if ids:
                self.arcs.append((ids[-1], g, 0, base + i - 1, False))
            ids.append(g)
        return ids

    def link(self, src: int, dst: int, code_add: int):
        self.arcs.append((src, dst, code_add, self.state_model[src], False))


def build_decoding_graph(
    models: HmmModelSet, grammar: MatrixGrammar, optional_silence: bool = True
) -> DecodingGraph:
    b = _Builder(models)
    edge = models.topology.edge_silence
    sizes = [len(a) for a in grammar.alternatives]
    weights = [math.prod(sizes[k + 1 :]) for k in range(len(sizes))]
    inits, finals = [], []

    if edge:
        start = b.chain(SILENCE, -1)
        inits.append((start[0], 0))
    prev_exits = [(start[-1], 0)] if edge else None
    for k, alts in enumerate(grammar.alternatives):
        ranks = {w: r for r, w in enumerate(sorted(alts))}
        exits = []
        for w in alts:
            ids = b.chain(w, k)
            add = ranks[w] * weights[k]
            if k == 0:
                if not edge or optional_silence:
                    inits.append((ids[0], add))
                if edge:
                    b.link(start[-1], ids[0], add)
            else:
                for src, _ in prev_exits:
                    b.link(src, ids[0], add)
            exits.append((ids[-1], add))
        prev_exits = exits
    if edge:
        end = b.chain(SILENCE, -1)
        for src, _ in prev_exits:
            b.link(src, end[0], 0)
        finals.append(end[-1])
    if not edge or optional_silence:
        finals += [src for src, _ in prev_exits]

    n = len(b.state_model)
    arcs = sorted(b.arcs, key=lambda a: (a[1], a[0]))
    src = np.array([a[0] for a in arcs], dtype=np.int64)
    dst = np.array([a[1] for a in arcs], dtype=np.int64)
    in_ptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(in_ptr, dst + 1, 1)
    in_ptr = np.cumsum(in_ptr)
    init_logp = np.full(n, NEG_INF)
    init_code = np.zeros(n, dtype=np.int64)
    for s, code in inits:
        init_logp[s] = 0.0
        init_code[s] = code
    final_mask = np.zeros(n, dtype=np.bool_)
    final_mask[finals] = True
    graph = DecodingGraph(
        models=models,
        grammar=grammar,
        state_model=np.array(b.state_model, dtype=np.int64),
        state_slot=np.array(b.state_slot, dtype=np.int64),
        state_word=tuple(b.state_word),
        in_ptr=in_ptr,
        in_src=src,
        in_add=np.array([a[2] for a in arcs], dtype=np.int64),
        arc_state=np.array([a[3] for a in arcs], dtype=np.int64),
        arc_self=np.array([a[4] for a in arcs], dtype=np.bool_),
        in_logp=np.zeros(len(arcs)),
        init_logp=init_logp,
        init_code=init_code,
        final_mask=final_mask,
    )
    return graph.refresh()


def build_alignment_graph(models: HmmModelSet, label: SentenceLabel) -> DecodingGraph:
    """Linear graph spelling exactly ``label``, with mandatory edge silence."""
    g = MatrixGrammar(tuple(str(i) for i in range(len(label.words))), tuple((w,) for w in label.words))
    return build_decoding_graph(models, g, optional_silence=False)


def min_path_length(graph: DecodingGraph) -> int:
    """Fewest frames any complete path needs."""
    big = np.iinfo(np.int64).max // 2
    dst = np.repeat(np.arange(graph.num_states), np.diff(graph.in_ptr))
    dist = np.where(np.isfinite(graph.init_logp), 1, big)
    while True:
        new = dist.copy()
        np.minimum.at(new, dst, dist[graph.in_src] + 1)
        if np.array_equal(new, dist):
            break
        dist = new
    return int(dist[graph.final_mask].min())


@numba.njit(cache=True)
def _viterbi_kernel(emis, init_logp, init_code, in_ptr, in_src, in_logp, in_add, final_mask):
    T, G = emis.shape
    delta = np.empty(G)
    code = np.empty(G, dtype=np.int64)
    new_delta = np.empty(G)
    new_code = np.empty(G, dtype=np.int64)
    back = np.full((T, G), -1, dtype=np.int64)
    for s in range(G):
        delta[s] = init_logp[s] + emis[0, s] if init_logp[s] > -np.inf else -np.inf
        code[s] = init_code[s]
    for t in range(1, T):
        for d in range(G):
            best = -np.inf
            best_code = 0
            best_src = -1
            for a in range(in_ptr[d], in_ptr[d + 1]):
                s = in_src[a]
                if delta[s] == -np.inf:
                    continue
                sc = delta[s] + in_logp[a]
                c = code[s] + in_add[a]
                if best_src < 0 or sc > best or (sc == best and (c < best_code or (c == best_code and s < best_src))):
                    best = sc
                    best_code = c
                    best_src = s
            if best_src < 0 or best == -np.inf:
                new_delta[d] = -np.inf
                new_code[d] = 0
            else:
                new_delta[d] = best + emis[t, d]
                new_code[d] = best_code
            back[t, d] = best_src
        for d in range(G):
            delta[d] = new_delta[d]
            code[d] = new_code[d]
    end = -1
    for s in range(G):
        if not final_mask[s] or delta[s] == -np.inf:
            continue
        if end < 0 or delta[s] > delta[end] or (delta[s] == delta[end] and code[s] < code[end]):
            end = s
    path = np.empty(T, dtype=np.int64)
    if end < 0:
        return path, -np.inf, -1
    path[T - 1] = end
    for t in range(T - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return path, delta[end], code[end]


def viterbi_path(graph: DecodingGraph, graph_emissions: np.ndarray):
    """Best state path given per-graph-state log emissions of shape (T, G).

    Returns ``(path, score)``; raises DecodeError when no path fits.
    """
    emis = np.ascontiguousarray(graph_emissions, dtype=np.float64)
    if emis.ndim != 2 or emis.shape[1] != graph.num_states or emis.shape[0] == 0:
        raise ValueError(f"emission matrix of shape {emis.shape} does not fit {graph.num_states} graph states")
    path, score, _ = _viterbi_kernel(
        emis, graph.init_logp, graph.init_code, graph.in_ptr, graph.in_src, graph.in_logp, graph.in_add, graph.final_mask
    )
    if not np.isfinite(score):
        raise DecodeError(f"no complete path through the graph in {emis.shape[0]} frames")
    return path, float(score)


def path_words(graph: DecodingGraph, path: np.ndarray) -> tuple:
    words = [None] * graph.grammar.num_slots
    for s in path:
        k = graph.state_slot[s]
        if k >= 0:
            words[k] = graph.state_word[s]
    return tuple(words)


def graph_emissions(graph: DecodingGraph, features) -> np.ndarray:
    x = features.values if hasattr(features, "values") else np.asarray(features)
    return graph.models.log_emissions(x)[:, graph.state_model]


def viterbi_decode(graph: DecodingGraph, fm) -> Transcript:
    """Maximum-likelihood grammar-valid transcript of a feature matrix.

    Exact score ties go to the lexicographically smaller word sequence.
    """
    x = fm.values if hasattr(fm, "values") else np.asarray(fm)
    if x.ndim != 2 or x.shape[1] != graph.models.dim:
        raise ValueError(f"feature dimension {x.shape[-1]} does not match model dimension {graph.models.dim}")
    path, score = viterbi_path(graph, graph_emissions(graph, x))
    return Transcript(path_words(graph, path), score)


def path_log_likelihood(graph: DecodingGraph, graph_emissions: np.ndarray, path) -> float:
    """Score of an explicit state path, accumulated in the same order as Viterbi."""
    path = list(path)
    score = graph.init_logp[path[0]] + graph_emissions[0, path[0]]
    for t in range(1, len(path)):
        s, d = path[t - 1], path[t]
        arcs = [a for a in range(graph.in_ptr[d], graph.in_ptr[d + 1]) if graph.in_src[a] == s]
        if not arcs:
            return -np.inf
        score = score + graph.in_logp[arcs[0]]
        score = score + graph_emissions[t, d]
    return float(score) if graph.final_mask[path[-1]] else -np.inf


def score_words(ref: SentenceLabel, hyp, grammar: MatrixGrammar | None = None) -> float:
    """Fraction of slots where the hypothesis word equals the reference word."""
    hyp_words = tuple(hyp.words)
    if len(hyp_words) != len(ref.words):
        raise ValueError(f"reference has {len(ref.words)} slots, hypothesis has {len(hyp_words)}")
    if grammar is not None:
        ref.validate(grammar)
        SentenceLabel(hyp_words).validate(grammar)
    return sum(r == h for r, h in zip(ref.words, hyp_words)) / len(ref.words)
