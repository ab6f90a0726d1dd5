"""Brute-force references for the loss engine.

Two routes, sharing no code with :mod:`otc.loss`:

* :func:`brute_posterior` enumerates every frame-level alignment string,
  collapses it, and scores the result against the transcript directly.
* :func:`lattice_log_likelihood` composes the emission graph with the
  training graph using the generic WFST code and sums over every path.

Both are exponential and meant for desk-scale instances only.
"""

from __future__ import annotations

import itertools
import math
from functools import lru_cache
from typing import Sequence

import numpy as np

from .graphs import (
    Lexicon,
    PenaltyPair,
    Vocabulary,
    build_emission,
    build_training_graph,
    extend_emissions,
)
from .wfst import DEFAULT_PATH_LIMIT, compose, enumerate_paths, log_sum

DEFAULT_ALIGNMENT_LIMIT = 10**7


class Explosion(RuntimeError):
    pass


def collapse(pi: Sequence[int], blank_id: int = 1) -> tuple[int, ...]:
    """Merge adjacent repeats, then drop blanks."""
    out = []
    prev = None
    for label in pi:
        if label != prev and label != blank_id:
            out.append(label)
        prev = label
    return tuple(out)


@lru_cache(maxsize=64)
def _alignment_groups(n_symbols: int, frames: int) -> tuple[np.ndarray, dict]:
    """All ``n_symbols ** frames`` strings, grouped by their collapse.

    Symbol 0 plays the blank.
    """
    rows = np.array(list(itertools.product(range(n_symbols), repeat=frames)), dtype=np.int64)
    rows = rows.reshape(n_symbols**frames, frames)
    groups: dict[tuple[int, ...], list[int]] = {}
    for i, row in enumerate(rows.tolist()):
        groups.setdefault(collapse(row, blank_id=0), []).append(i)
    return rows, {k: np.array(v) for k, v in groups.items()}


def _pattern_weight(
    z: Sequence[int],
    transcript: Sequence[int],
    lexicon: Lexicon,
    penalties: PenaltyPair,
) -> float:
    """Log of the summed weight of all OTC readings of unit string ``z``.

    A reading walks the transcript left to right: a word consumes its
    pronunciation, a star either stays on the current word (self-loop) or
    replaces it (bypass).
    """
    star = lexicon.vocab.star_id
    prons = [lexicon.pronunciation(w) for w in transcript]
    n, u_len = len(z), len(transcript)
    self_w = -penalties.lambda1
    bypass_w = -penalties.lambda2

    @lru_cache(maxsize=None)
    def walk(i: int, u: int) -> float:
        if i == n:
            return 0.0 if u == u_len else -math.inf
        terms = []
        if u < u_len:
            p = prons[u]
            if tuple(z[i : i + len(p)]) == p:
                terms.append(walk(i + len(p), u + 1))
        if z[i] == star:
            if penalties.lambda1 != math.inf:
                terms.append(self_w + walk(i + 1, u))
            if u < u_len and penalties.lambda2 != math.inf:
                terms.append(bypass_w + walk(i + 1, u + 1))
        return log_sum(terms)

    return walk(0, 0)


def brute_posterior(
    log_probs: np.ndarray,
    target: Sequence[int],
    vocab: Vocabulary,
    extended: bool = False,
    penalties: PenaltyPair | None = None,
    star_mode: str = "average",
    lexicon: Lexicon | None = None,
    limit: int = DEFAULT_ALIGNMENT_LIMIT,
) -> float:
    """log P(target | x) by enumerating every alignment.

    Without ``extended``, ``target`` is a unit sequence and the alphabet is
    blank plus units.  With ``extended``, ``target`` is a word transcript
    scored under the OTC graph with ``penalties``, and star joins the
    alphabet.
    """
    log_probs = np.asarray(log_probs, dtype=np.float64)
    frames = log_probs.shape[0]
    if lexicon is None:
        lexicon = Lexicon.identity(vocab)
    ext = extend_emissions(log_probs, vocab, star_mode)
    labels = [vocab.blank_id, *vocab.unit_ids]
    if extended:
        labels.append(vocab.star_id)
        if penalties is None:
            raise ValueError("extended enumeration needs penalties")
    if len(labels) ** frames > limit:
        raise Explosion(f"{len(labels)}^{frames} alignments exceed limit {limit}")
    rows, groups = _alignment_groups(len(labels), frames)
    columns = np.array(labels) - 1
    scores = ext[np.arange(frames)[None, :], columns[rows]].sum(axis=1) if frames else np.zeros(1)

    def group_total(idx: np.ndarray) -> float:
        return log_sum(scores[idx].tolist())

    if not extended:
        to_index = {label: i for i, label in enumerate(labels)}
        key = tuple(to_index.get(u, -1) for u in target)
        idx = groups.get(key)
        return -math.inf if idx is None else group_total(idx)

    terms = []
    for key, idx in groups.items():
        z = tuple(labels[i] for i in key)
        w = _pattern_weight(z, target, lexicon, penalties)
        if w != -math.inf:
            terms.append(w + group_total(idx))
    return log_sum(terms)


def lattice_log_likelihood(
    log_probs: np.ndarray,
    transcript: Sequence[int],
    lexicon: Lexicon,
    penalties: PenaltyPair | None = None,
    star_mode: str = "average",
    limit: int = DEFAULT_PATH_LIMIT,
) -> float:
    """Sum over every path of E(x) o T o L o G(y), built with generic composition.

    ``penalties=None`` builds the CTC graph.
    """
    vocab = lexicon.vocab
    emission = build_emission(log_probs, vocab, star_mode, include_star=penalties is not None)
    lattice = compose(emission, build_training_graph(lexicon, transcript, penalties))
    return log_sum(p.weight for p in enumerate_paths(lattice, limit))


def build_lattice(
    log_probs: np.ndarray,
    transcript: Sequence[int],
    lexicon: Lexicon,
    penalties: PenaltyPair | None = None,
    star_mode: str = "average",
):
    """The composed lattice itself, for inspection."""
    vocab = lexicon.vocab
    emission = build_emission(log_probs, vocab, star_mode, include_star=penalties is not None)
    return compose(emission, build_training_graph(lexicon, transcript, penalties))
