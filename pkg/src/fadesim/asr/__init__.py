"""Whole-word HMM-GMM recognizer constrained by the matrix grammar."""

from .graph import (
    DecodingGraph,
    Transcript,
    build_alignment_graph,
    build_decoding_graph,
    graph_emissions,
    path_log_likelihood,
    path_words,
    score_words,
    viterbi_decode,
    viterbi_path,
)
from .models import SILENCE, GaussianState, HmmModelSet, HmmTopology, WordHmm, load_models, save_models
from .train import TrainConfig, init_models, train, train_models

__all__ = [
    "SILENCE",
    "DecodingGraph",
    "GaussianState",
    "HmmModelSet",
    "HmmTopology",
    "TrainConfig",
    "Transcript",
    "WordHmm",
    "build_alignment_graph",
    "build_decoding_graph",
    "graph_emissions",
    "init_models",
    "load_models",
    "path_log_likelihood",
    "path_words",
    "save_models",
    "score_words",
    "train",
    "train_models",
    "viterbi_decode",
    "viterbi_path",
]
