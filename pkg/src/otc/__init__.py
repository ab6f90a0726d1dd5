"""Weighted finite-state CTC and OTC losses in numpy.

OTC (omni-temporal classification) extends CTC training graphs with a
wildcard ``<star>`` token so that training tolerates errors in the
transcripts.
"""

__version__ = "0.1.0"

from .corruption import ErrorSpec, corrupt_transcript, error_rate, mixture_spec
from .graphs import (
    Lexicon,
    PenaltyPair,
    Vocabulary,
    build_ctc_topology,
    build_emission,
    build_lexicon_fst,
    build_linear_g,
    build_otc_g,
    build_training_graph,
)
from .loss import LossConfig, PenaltySchedule, best_path, ctc_loss, grad_check, otc_loss, penalty_at
from .oracle import brute_posterior, collapse, lattice_log_likelihood
from .wfst import Arc, Wfst, compose, connect, enumerate_paths, read_text, total_weight, write_dot, write_text

__all__ = [
    "Arc",
    "ErrorSpec",
    "Lexicon",
    "LossConfig",
    "PenaltyPair",
    "PenaltySchedule",
    "Vocabulary",
    "Wfst",
    "best_path",
    "brute_posterior",
    "build_ctc_topology",
    "build_emission",
    "build_lexicon_fst",
    "build_linear_g",
    "build_otc_g",
    "build_training_graph",
    "collapse",
    "compose",
    "connect",
    "corrupt_transcript",
    "ctc_loss",
    "enumerate_paths",
    "error_rate",
    "grad_check",
    "lattice_log_likelihood",
    "mixture_spec",
    "otc_loss",
    "penalty_at",
    "read_text",
    "total_weight",
    "write_dot",
    "write_text",
]
