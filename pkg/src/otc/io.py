"""Plain-text file formats used by the command line.

* vocabulary: one unit per line
* lexicon: ``word<TAB>unit unit ...`` per line
* transcripts: one utterance per line, space-separated tokens
* emissions: TSV with a header row of column names (``<blk>`` first, then
  the units, then ``<star>`` in dedicated mode) and one row of natural-log
  probabilities per frame
"""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .graphs import BLANK_SYMBOL, STAR_SYMBOL, Lexicon, Vocabulary


class FormatError(ValueError):
    """A malformed input file; carries the offending line number."""

    def __init__(self, path: str | Path, lineno: int, message: str):
        super().__init__(f"{path}:{lineno}: {message}")
        self.path = str(path)
        self.lineno = lineno


def _lines(path: str | Path) -> list[tuple[int, str]]:
    text = Path(path).read_text()
    return [(i, line) for i, line in enumerate(text.splitlines(), start=1)]


def read_vocabulary(path: str | Path) -> Vocabulary:
    units = [line.strip() for _, line in _lines(path) if line.strip()]
    return Vocabulary(tuple(units))


def write_vocabulary(path: str | Path, vocab: Vocabulary) -> None:
    Path(path).write_text("".join(u + "\n" for u in vocab.units))


def read_lexicon(path: str | Path, vocab: Vocabulary) -> Lexicon:
    prons = []
    for lineno, line in _lines(path):
        if not line.strip():
            continue
        if "\t" not in line:
            raise FormatError(path, lineno, "expected word<TAB>units")
        word, units = line.split("\t", 1)
        try:
            vocab.encode(units)
        except KeyError as err:
            raise FormatError(path, lineno, str(err)) from None
        prons.append((word.strip(), units.split()))
    return Lexicon.from_pronunciations(vocab, prons)


def read_transcripts(path: str | Path) -> list[list[str]]:
    """Every line is an utterance; blank lines are empty transcripts."""
    return [line.split() for _, line in _lines(path)]


def write_transcripts(path: str | Path, transcripts: Iterable[Sequence[str]]) -> None:
    Path(path).write_text("".join(" ".join(t) + "\n" for t in transcripts))


def vocabulary_from_tokens(transcripts: Iterable[Sequence[str]]) -> Vocabulary:
    """Units in order of first appearance."""
    seen = dict.fromkeys(tok for t in transcripts for tok in t if tok not in (BLANK_SYMBOL, STAR_SYMBOL))
    return Vocabulary(tuple(seen))


def read_emissions(path: str | Path) -> tuple[Vocabulary, str, np.ndarray]:
    """Parse an emission TSV into ``(vocab, star_mode, log_probs)``."""
    lines = [(i, l) for i, l in _lines(path) if l.strip()]
    if not lines:
        raise FormatError(path, 1, "empty emission file")
    lineno, header = lines[0]
    names = header.rstrip("\n").split("\t")
    if names[0] != BLANK_SYMBOL:
        raise FormatError(path, lineno, f"first column must be {BLANK_SYMBOL}")
    star_mode = "average"
    if names[-1] == STAR_SYMBOL:
        star_mode = "dedicated"
        names = names[:-1]
    try:
        vocab = Vocabulary(tuple(names[1:]))
    except ValueError as err:
        raise FormatError(path, lineno, str(err)) from None
    width = vocab.num_columns(star_mode)
    rows = []
    for lineno, line in lines[1:]:
        fields = line.split("\t")
        if len(fields) != width:
            raise FormatError(path, lineno, f"expected {width} columns, got {len(fields)}")
        try:
            rows.append([float(x) for x in fields])
        except ValueError:
            raise FormatError(path, lineno, "non-numeric value") from None
    return vocab, star_mode, np.array(rows, dtype=np.float64).reshape(len(rows), width)


def format_matrix(names: Sequence[str], values: np.ndarray) -> str:
    """TSV with a header row; numbers to 6 significant digits."""
    out = ["\t".join(names)]
    out.extend("\t".join(f"{x + 0.0:.6g}" for x in row) for row in np.asarray(values))
    return "\n".join(out) + "\n"


def write_emissions(path: str | Path, vocab: Vocabulary, log_probs: np.ndarray, star_mode: str = "average") -> None:
    """Full-precision emission TSV (values round-trip exactly)."""
    names = vocab.column_names(star_mode)
    out = ["\t".join(names)]
    out.extend("\t".join(repr(float(x)) for x in row) for row in np.asarray(log_probs))
    Path(path).write_text("\n".join(out) + "\n")
