"""Builders for the CTC topology, lexicon, transcript, OTC and emission graphs.

Label layout (epsilon is always 0)::

    1            blank
    2 .. N+1     units, in vocabulary order
    N+2          star

Emission matrices use column ``label - 1``: blank is column 0, units follow,
and in dedicated star mode the star is the last column.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .wfst import EPSILON, ONE, Arc, Wfst, compose, connect

BLANK_SYMBOL = "<blk>"
STAR_SYMBOL = "<star>"
EPS_SYMBOL = "<eps>"

STAR_MODES = ("average", "dedicated")

NORMALIZATION_TOL = 1e-6


class UnnormalizedRow(ValueError):
    def __init__(self, frame: int, value: float):
        super().__init__(f"frame {frame}: row log-sum-exp is {value:.3g}, expected 0")
        self.frame = frame


@dataclass(frozen=True)
class Vocabulary:
    """Unit inventory with reserved blank and star labels."""

    units: tuple[str, ...]

    def __post_init__(self):
        units = tuple(self.units)
        object.__setattr__(self, "units", units)
        if not units:
            raise ValueError("vocabulary needs at least one unit")
        if len(set(units)) != len(units):
            raise ValueError("duplicate unit in vocabulary")
        for u in units:
            if u in (BLANK_SYMBOL, STAR_SYMBOL, EPS_SYMBOL) or not u or any(c.isspace() for c in u):
                raise ValueError(f"invalid unit name {u!r}")

    @property
    def blank_id(self) -> int:
        return 1

    @property
    def star_id(self) -> int:
        return len(self.units) + 2

    @property
    def unit_ids(self) -> range:
        return range(2, len(self.units) + 2)

    @property
    def num_units(self) -> int:
        return len(self.units)

    @property
    def size(self) -> int:
        """Units plus blank plus star."""
        return len(self.units) + 2

    def num_columns(self, star_mode: str | None = "average") -> int:
        """Width of the model's output layer."""
        return len(self.units) + (2 if star_mode == "dedicated" else 1)

    def column_names(self, star_mode: str | None = "average") -> list[str]:
        names = [BLANK_SYMBOL, *self.units]
        if star_mode == "dedicated":
            names.append(STAR_SYMBOL)
        return names

    def id(self, symbol: str) -> int:
        if symbol == BLANK_SYMBOL:
            return self.blank_id
        if symbol == STAR_SYMBOL:
            return self.star_id
        try:
            return self.units.index(symbol) + 2
        except ValueError:
            raise KeyError(f"unknown unit {symbol!r}") from None

    def symbol(self, label: int) -> str:
        if label == EPSILON:
            return EPS_SYMBOL
        if label == self.blank_id:
            return BLANK_SYMBOL
        if label == self.star_id:
            return STAR_SYMBOL
        return self.units[label - 2]

    def encode(self, units: str | Iterable[str]) -> tuple[int, ...]:
        if isinstance(units, str):
            units = units.split()
        return tuple(self.id(u) for u in units)

    def decode(self, labels: Iterable[int]) -> list[str]:
        return [self.symbol(l) for l in labels]

    def symbol_table(self) -> dict[int, str]:
        table = {EPSILON: EPS_SYMBOL, self.blank_id: BLANK_SYMBOL, self.star_id: STAR_SYMBOL}
        table.update({i: u for i, u in zip(self.unit_ids, self.units)})
        return table


@dataclass(frozen=True)
class Lexicon:
    """Word pronunciations as unit-label sequences.

    Word ids share the label space with units for the identity lexicon;
    otherwise they start above the star label.  The star word always has
    id ``vocab.star_id`` and pronunciation ``(star_id,)``.
    """

    vocab: Vocabulary
    entries: Mapping[int, tuple[int, ...]]
    words: Mapping[int, str] = field(default_factory=dict)

    def __post_init__(self):
        entries = {int(w): tuple(p) for w, p in self.entries.items()}
        if not entries:
            raise ValueError("empty lexicon")
        valid_units = set(self.vocab.unit_ids)
        for w, pron in entries.items():
            if w == EPSILON or w == self.vocab.blank_id or w == self.vocab.star_id:
                raise ValueError(f"reserved word id {w}")
            if not pron:
                raise ValueError(f"word {w} has an empty pronunciation")
            if not set(pron) <= valid_units:
                raise ValueError(f"word {w} uses unknown units {pron}")
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "words", dict(self.words))

    @classmethod
    def identity(cls, vocab: Vocabulary) -> "Lexicon":
        entries = {i: (i,) for i in vocab.unit_ids}
        words = {i: u for i, u in zip(vocab.unit_ids, vocab.units)}
        return cls(vocab, entries, words)

    @classmethod
    def from_pronunciations(
        cls, vocab: Vocabulary, prons: Iterable[tuple[str, Sequence[str]]]
    ) -> "Lexicon":
        """Build from ``(word, [unit, ...])`` pairs; homophones are kept."""
        entries, words = {}, {}
        names: dict[str, int] = {}
        for word, units in prons:
            if word in names:
                raise ValueError(f"duplicate lexicon entry for {word!r}")
            wid = vocab.star_id + 1 + len(names)
            names[word] = wid
            entries[wid] = vocab.encode(units)
            words[wid] = word
        return cls(vocab, entries, words)

    @property
    def is_identity(self) -> bool:
        return all(p == (w,) for w, p in self.entries.items())

    def word_id(self, word: str) -> int:
        if word == STAR_SYMBOL:
            return self.vocab.star_id
        for wid, name in self.words.items():
            if name == word:
                return wid
        raise KeyError(f"unknown word {word!r}")

    def encode(self, words: str | Iterable[str]) -> tuple[int, ...]:
        if isinstance(words, str):
            words = words.split()
        return tuple(self.word_id(w) for w in words)

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [STAR_SYMBOL if i == self.vocab.star_id else self.words[i] for i in ids]

    def word_symbol_table(self) -> dict[int, str]:
        table = {EPSILON: EPS_SYMBOL, self.vocab.star_id: STAR_SYMBOL}
        table.update(self.words)
        return table

    def pronunciation(self, word_id: int) -> tuple[int, ...]:
        if word_id == self.vocab.star_id:
            return (self.vocab.star_id,)
        return self.entries[word_id]

    def expand(self, transcript: Sequence[int]) -> tuple[int, ...]:
        """Unit-level sequence of a word transcript."""
        return tuple(u for w in transcript for u in self.pronunciation(w))


@dataclass(frozen=True)
class PenaltyPair:
    """Self-loop (``lambda1``) and bypass (``lambda2``) penalties.

    An arc with penalty ``lam`` gets log-weight ``-lam``; ``+inf`` removes
    the arc.
    """

    lambda1: float
    lambda2: float

    def __post_init__(self):
        for v in (self.lambda1, self.lambda2):
            if math.isnan(v) or v == -math.inf:
                raise ValueError(f"invalid penalty {v}")

    @classmethod
    def disabled(cls) -> "PenaltyPair":
        return cls(math.inf, math.inf)


def build_ctc_topology(vocab: Vocabulary, include_star: bool = False) -> Wfst:
    """Standard CTC topology.

    State 0 is the blank state; state ``k`` remembers the last emitted unit.
    Re-reading the same unit stays put and outputs epsilon, so repeats merge
    unless a blank intervenes.  Every state is final.
    """
    labels = list(vocab.unit_ids)
    if include_star:
        labels.append(vocab.star_id)
    state_of = {label: k + 1 for k, label in enumerate(labels)}
    n = len(labels) + 1
    arcs = []
    for s in range(n):
        arcs.append(Arc(s, 0, vocab.blank_id, EPSILON, ONE))
        for label in labels:
            d = state_of[label]
            arcs.append(Arc(s, d, label, EPSILON if d == s else label, ONE))
    return Wfst(n, arcs, {s: ONE for s in range(n)})


def build_lexicon_fst(lexicon: Lexicon, include_star: bool = False) -> Wfst:
    """Closure of the lexicon's word paths around state 0.

    The first unit of a word carries the word id as output; later units
    output epsilon.
    """
    arcs: list[Arc] = []
    n = 1
    entries = list(lexicon.entries.items())
    if include_star:
        star = lexicon.vocab.star_id
        entries.append((star, (star,)))
    for word, pron in entries:
        prev = 0
        for i, unit in enumerate(pron):
            last = i == len(pron) - 1
            nxt = 0 if last else n
            if not last:
                n += 1
            arcs.append(Arc(prev, nxt, unit, word if i == 0 else EPSILON, ONE))
            prev = nxt
    return Wfst(n, arcs, {0: ONE})


def build_linear_g(transcript: Sequence[int]) -> Wfst:
    u = len(transcript)
    arcs = [Arc(i, i + 1, w, w, ONE) for i, w in enumerate(transcript)]
    return Wfst(u + 1, arcs, {u: ONE})


def build_otc_g(
    transcript: Sequence[int],
    penalties: PenaltyPair,
    star_id: int,
    bypass_id: int | None = None,
) -> Wfst:
    """Transcript acceptor with star self-loops and star bypass arcs.

    ``bypass_id`` relabels the bypass arcs; the loss engine uses this to
    tell the two arc kinds apart after composition.
    """
    if bypass_id is None:
        bypass_id = star_id
    g = build_linear_g(transcript)
    arcs = list(g.arcs)
    if penalties.lambda1 != math.inf:
        w = -penalties.lambda1
        arcs += [Arc(s, s, star_id, star_id, w) for s in range(g.num_states)]
    if penalties.lambda2 != math.inf:
        w = -penalties.lambda2
        arcs += [Arc(i, i + 1, bypass_id, bypass_id, w) for i in range(len(transcript))]
    return Wfst(g.num_states, arcs, g.finals)


def check_normalized(log_probs: np.ndarray, tol: float = NORMALIZATION_TOL) -> None:
    log_probs = np.asarray(log_probs, dtype=np.float64)
    if log_probs.ndim != 2:
        raise ValueError("emission matrix must be 2-D (frames x columns)")
    if log_probs.shape[0] == 0:
        return
    m = log_probs.max(axis=1, keepdims=True)
    lse = (m + np.log(np.exp(log_probs - m).sum(axis=1, keepdims=True)))[:, 0]
    bad = np.flatnonzero(~(np.abs(lse) <= tol))
    if bad.size:
        raise UnnormalizedRow(int(bad[0]), float(lse[bad[0]]))


def star_scores(log_probs: np.ndarray, num_units: int) -> np.ndarray:
    """Per-frame log of the mean non-blank probability.

    Unit columns are ``1 .. num_units``; blank (column 0) and any extra
    columns are ignored.
    """
    units = np.asarray(log_probs, dtype=np.float64)[:, 1 : num_units + 1]
    m = units.max(axis=1, keepdims=True)
    return (m + np.log(np.exp(units - m).mean(axis=1, keepdims=True)))[:, 0]


def extend_emissions(
    log_probs: np.ndarray, vocab: Vocabulary, star_mode: str = "average"
) -> np.ndarray:
    """Emission matrix with a star column appended when it is derived."""
    log_probs = np.asarray(log_probs, dtype=np.float64)
    expected = vocab.num_columns(star_mode)
    if log_probs.ndim != 2 or log_probs.shape[1] != expected:
        raise ValueError(
            f"expected {expected} emission columns for star_mode={star_mode!r}, "
            f"got shape {log_probs.shape}"
        )
    if star_mode == "dedicated":
        return log_probs
    if star_mode != "average":
        raise ValueError(f"unknown star mode {star_mode!r}")
    star = star_scores(log_probs, vocab.num_units)
    return np.concatenate([log_probs, star[:, None]], axis=1)


def build_emission(
    log_probs: np.ndarray,
    vocab: Vocabulary,
    star_mode: str = "average",
    include_star: bool = True,
) -> Wfst:
    """Frame-indexed chain acceptor over blank, units and star.

    ``star_mode`` fixes the column layout of ``log_probs``; with
    ``include_star=False`` the star arcs are left out, giving the plain CTC
    emission graph.
    """
    log_probs = np.asarray(log_probs, dtype=np.float64)
    check_normalized(log_probs)
    ext = extend_emissions(log_probs, vocab, star_mode)
    labels = [vocab.blank_id, *vocab.unit_ids]
    if include_star:
        labels.append(vocab.star_id)
    arcs = [
        Arc(t, t + 1, label, label, float(ext[t, label - 1]))
        for t in range(ext.shape[0])
        for label in labels
    ]
    frames = ext.shape[0]
    return Wfst(frames + 1, arcs, {frames: ONE})


def build_training_graph(
    lexicon: Lexicon,
    transcript: Sequence[int],
    penalties: PenaltyPair | None = None,
) -> Wfst:
    """S(y) = T o L o G(y), trimmed.

    ``penalties=None`` gives the CTC graph; otherwise G is the OTC graph
    and star passes through L and T as an ordinary unit.
    """
    vocab = lexicon.vocab
    if penalties is None:
        g = build_linear_g(transcript)
        otc = False
    else:
        g = build_otc_g(transcript, penalties, vocab.star_id)
        otc = True
    lg = compose(build_lexicon_fst(lexicon, include_star=otc), g)
    return connect(compose(build_ctc_topology(vocab, include_star=otc), lg))
