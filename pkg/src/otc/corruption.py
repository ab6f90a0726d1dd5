"""Synthetic transcript errors and edit-distance scoring.

Randomness comes from numpy's PCG64 bit generator.  Each utterance gets its
own stream seeded with ``SeedSequence([seed, utt_id])``, so a corpus
corrupts identically whatever order (or process) the utterances are
handled in.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Hashable, Sequence

import numpy as np

ERROR_TYPES = ("sub", "ins", "del", "mix")


class EmptyPool(ValueError):
    pass


@dataclass(frozen=True)
class ErrorSpec:
    p_sub: float = 0.0
    p_ins: float = 0.0
    p_del: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("p_sub", "p_ins", "p_del"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")
        if self.p_sub + self.p_del > 1.0 + 1e-12:
            raise ValueError("p_sub + p_del must not exceed 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")


@dataclass
class CorruptionReport:
    tokens: int = 0
    substituted: int = 0
    inserted: int = 0
    deleted: int = 0

    @property
    def output_length(self) -> int:
        return self.tokens - self.deleted + self.inserted

    def rates(self) -> dict[str, float]:
        n = max(self.tokens, 1)
        return {
            "sub": self.substituted / n,
            "ins": self.inserted / n,
            "del": self.deleted / n,
        }

    def __iadd__(self, other: "CorruptionReport") -> "CorruptionReport":
        self.tokens += other.tokens
        self.substituted += other.substituted
        self.inserted += other.inserted
        self.deleted += other.deleted
        return self

    def to_dict(self) -> dict:
        return {**asdict(self), "rates": self.rates()}


def mixture_spec(total: float, seed: int = 0) -> ErrorSpec:
    """Equal substitution, insertion and deletion rates summing to ``total``."""
    p = total / 3.0
    return ErrorSpec(p, p, p, seed)


def single_spec(error_type: str, rate: float, seed: int = 0) -> ErrorSpec:
    """Spec for one error type, or the mixture for ``"mix"``."""
    if error_type == "mix":
        return mixture_spec(rate, seed)
    if error_type == "sub":
        return ErrorSpec(p_sub=rate, seed=seed)
    if error_type == "ins":
        return ErrorSpec(p_ins=rate, seed=seed)
    if error_type == "del":
        return ErrorSpec(p_del=rate, seed=seed)
    raise ValueError(f"unknown error type {error_type!r}; expected one of {ERROR_TYPES}")


def utterance_rng(seed: int, utt_id: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, utt_id])))


def corrupt_transcript(
    transcript: Sequence[Hashable],
    spec: ErrorSpec,
    pool: Sequence[Hashable],
    utt_id: int = 0,
) -> tuple[list, CorruptionReport]:
    """Inject substitutions, insertions and deletions into one transcript.

    Each token independently draws one of keep / substitute / delete; then,
    independently, one random token may be inserted after its position.
    Substitutes are drawn uniformly from ``pool`` minus the original token,
    insertions uniformly from all of ``pool``.
    """
    pool = list(dict.fromkeys(pool))
    if spec.p_ins > 0 and not pool:
        raise EmptyPool("no tokens available for insertion")
    if spec.p_sub > 0 and len(pool) < 2 and transcript:
        raise EmptyPool("substitution needs at least two distinct tokens in the pool")
    rng = utterance_rng(spec.seed, utt_id)
    out = []
    report = CorruptionReport(tokens=len(transcript))
    for token in transcript:
        r = rng.random()
        if r < spec.p_sub:
            choices = [t for t in pool if t != token]
            if not choices:
                raise EmptyPool(f"no substitute for {token!r}")
            out.append(choices[rng.integers(len(choices))])
            report.substituted += 1
        elif r < spec.p_sub + spec.p_del:
            report.deleted += 1
        else:
            out.append(token)
        if rng.random() < spec.p_ins:
            out.append(pool[rng.integers(len(pool))])
            report.inserted += 1
    return out, report


def corrupt_corpus(
    transcripts: Sequence[Sequence[Hashable]],
    spec: ErrorSpec,
    pool: Sequence[Hashable],
) -> tuple[list[list], list[CorruptionReport]]:
    outs, reports = [], []
    for i, y in enumerate(transcripts):
        out, rep = corrupt_transcript(y, spec, pool, utt_id=i)
        outs.append(out)
        reports.append(rep)
    return outs, reports


@dataclass(frozen=True)
class ErrorRate:
    rate: float
    substitutions: int
    insertions: int
    deletions: int
    ref_length: int
    empty_reference: bool = False

    @property
    def errors(self) -> int:
        return self.substitutions + self.insertions + self.deletions


def error_rate(ref: Sequence[Hashable], hyp: Sequence[Hashable]) -> ErrorRate:
    """Levenshtein alignment with unit costs.

    Among minimum-cost alignments the one with the most substitutions is
    kept, which fixes the insertion and deletion counts too.  An empty
    reference scores ``len(hyp)`` and sets ``empty_reference``.
    """
    n, m = len(ref), len(hyp)
    # cell = (cost, insertions + deletions, substitutions, insertions)
    prev = [(j, j, 0, j) for j in range(m + 1)]
    for i in range(1, n + 1):
        cur = [(i, i, 0, 0)]
        for j in range(1, m + 1):
            c, e, s, ins = prev[j - 1]
            if ref[i - 1] == hyp[j - 1]:
                diag = (c, e, s, ins)
            else:
                diag = (c + 1, e, s + 1, ins)
            c, e, s, ins = prev[j]
            delete = (c + 1, e + 1, s, ins)
            c, e, s, ins = cur[j - 1]
            insert = (c + 1, e + 1, s, ins + 1)
            cur.append(min(diag, delete, insert, key=lambda x: (x[0], x[1])))
        prev = cur
    cost, _, subs, ins = prev[m]
    dels = cost - subs - ins
    if n == 0:
        return ErrorRate(float(m), 0, m, 0, 0, empty_reference=m > 0)
    return ErrorRate(cost / n, subs, ins, dels, n)


def corpus_error_rate(refs: Sequence[Sequence], hyps: Sequence[Sequence]) -> float:
    """Mean of per-utterance error rates."""
    if len(refs) != len(hyps):
        raise ValueError("reference and hypothesis counts differ")
    if not refs:
        return 0.0
    return float(np.mean([error_rate(r, h).rate for r, h in zip(refs, hyps)]))
