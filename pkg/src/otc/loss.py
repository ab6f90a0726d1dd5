"""CTC and OTC negative log-likelihoods with exact gradients.

The emission graph is a frame-indexed chain and the training graph S(y)
has no input epsilons, so the states of ``E o S`` are simply
``(frame, state of S)``.  Forward-backward runs directly over that product,
one frame at a time, vectorised over every arc of every utterance in a
batch.  Arc posteriors ``exp(alpha + w + beta - total)`` give the gradient
with respect to each emission entry.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .graphs import (
    Lexicon,
    PenaltyPair,
    STAR_MODES,
    Vocabulary,
    build_ctc_topology,
    build_lexicon_fst,
    build_linear_g,
    build_otc_g,
    check_normalized,
    extend_emissions,
)
from .wfst import EPSILON, ONE, Arc, Wfst, compose, connect

# Library defaults; the bypass bonus (negative beta2) is deliberate.
DEFAULT_BETA1 = 3.75
DEFAULT_TAU1 = 0.999
DEFAULT_BETA2 = -19.0
DEFAULT_TAU2 = 0.975

MODES = ("ctc", "otc")

_KIND_TOKEN, _KIND_SELF_LOOP, _KIND_BYPASS = 0, 1, 2


@dataclass(frozen=True)
class PenaltySchedule:
    """Per-epoch penalties ``lambda = beta * tau ** epoch``."""

    beta1: float = DEFAULT_BETA1
    tau1: float = DEFAULT_TAU1
    beta2: float = DEFAULT_BETA2
    tau2: float = DEFAULT_TAU2

    def __post_init__(self):
        for name in ("tau1", "tau2"):
            tau = getattr(self, name)
            if not 0.0 < tau < 1.0:
                raise ValueError(f"{name} must lie strictly inside (0, 1), got {tau}")
        for name in ("beta1", "beta2"):
            if math.isnan(getattr(self, name)):
                raise ValueError(f"{name} is NaN")


def penalty_at(schedule: PenaltySchedule, epoch: int) -> PenaltyPair:
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    return PenaltyPair(
        schedule.beta1 * schedule.tau1**epoch,
        schedule.beta2 * schedule.tau2**epoch,
    )


@dataclass(frozen=True)
class LossConfig:
    vocab: Vocabulary
    mode: str = "ctc"
    star_mode: str = "average"
    schedule: PenaltySchedule | None = None
    lexicon: Lexicon | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.star_mode not in STAR_MODES:
            raise ValueError(f"star_mode must be one of {STAR_MODES}")
        if self.mode == "ctc" and self.schedule is not None:
            raise ValueError("a penalty schedule only applies to mode='otc'")
        if self.mode == "otc" and self.schedule is None:
            object.__setattr__(self, "schedule", PenaltySchedule())
        if self.lexicon is None:
            object.__setattr__(self, "lexicon", Lexicon.identity(self.vocab))
        elif self.lexicon.vocab != self.vocab:
            raise ValueError("lexicon was built over a different vocabulary")

    @property
    def num_columns(self) -> int:
        return self.vocab.num_columns(self.star_mode)


@dataclass
class LossResult:
    nll: float
    grad: np.ndarray = field(repr=False)
    no_path: bool = False


class TrainingGraph:
    """Compiled T o L o G(y) as flat arc arrays.

    OTC graphs are compiled once with zero penalties; self-loop and bypass
    arcs are tagged so any penalty pair can be applied per epoch without
    recomposing.
    """

    __slots__ = ("num_states", "start", "src", "dst", "ilabel", "olabel", "kind", "base", "finals", "otc", "star_id")

    def __init__(self, wfst: Wfst, star_id: int, bypass_id: int | None, otc: bool):
        self.num_states = wfst.num_states
        self.start = wfst.start
        arcs = wfst.arcs
        self.src = np.array([a.src for a in arcs], dtype=np.int64)
        self.dst = np.array([a.dst for a in arcs], dtype=np.int64)
        self.ilabel = np.array([a.ilabel for a in arcs], dtype=np.int64)
        olabel = np.array([a.olabel for a in arcs], dtype=np.int64)
        self.kind = np.full(len(arcs), _KIND_TOKEN, dtype=np.int8)
        if otc:
            self.kind[olabel == star_id] = _KIND_SELF_LOOP
            self.kind[olabel == bypass_id] = _KIND_BYPASS
            olabel[olabel == bypass_id] = star_id
        self.olabel = olabel
        self.base = np.array([a.weight for a in arcs], dtype=np.float64)
        self.finals = np.full(self.num_states, -np.inf)
        for s, f in wfst.finals.items():
            self.finals[s] = f
        self.otc = otc
        self.star_id = star_id
        if np.any(self.ilabel == EPSILON):
            raise ValueError("training graph has input epsilons")

    @classmethod
    def build(cls, lexicon: Lexicon, transcript: Sequence[int], otc: bool) -> "TrainingGraph":
        vocab = lexicon.vocab
        star = vocab.star_id
        topo = build_ctc_topology(vocab, include_star=otc)
        if not otc:
            lg = compose(build_lexicon_fst(lexicon), build_linear_g(transcript))
            return cls(connect(compose(topo, lg)), star, None, otc=False)
        bypass = max([star, *lexicon.entries]) + 1
        g = build_otc_g(transcript, PenaltyPair(0.0, 0.0), star, bypass_id=bypass)
        lex = build_lexicon_fst(lexicon, include_star=True)
        lex = Wfst(lex.num_states, [*lex.arcs, Arc(0, 0, star, bypass, ONE)], lex.finals)
        return cls(connect(compose(topo, compose(lex, g))), star, bypass, otc=True)

    @property
    def empty(self) -> bool:
        return self.num_states == 0

    def weights(self, penalties: PenaltyPair | None = None) -> np.ndarray:
        w = self.base.copy()
        if self.otc:
            if penalties is None:
                raise ValueError("OTC graph needs penalties")
            w[self.kind == _KIND_SELF_LOOP] -= penalties.lambda1
            w[self.kind == _KIND_BYPASS] -= penalties.lambda2
        return w


class _Segments:
    """Group arc values by a key array and reduce with log-sum-exp."""

    def __init__(self, keys: np.ndarray, size: int):
        self.size = size
        self.order = np.argsort(keys, kind="stable")
        sorted_keys = keys[self.order]
        if sorted_keys.size:
            boundary = np.r_[True, sorted_keys[1:] != sorted_keys[:-1]]
        else:
            boundary = np.zeros(0, dtype=bool)
        self.starts = np.flatnonzero(boundary)
        self.ids = sorted_keys[self.starts]
        self.seg_of = np.cumsum(boundary) - 1

    def logsumexp(self, values: np.ndarray) -> np.ndarray:
        out = np.full(self.size, -np.inf)
        if not self.starts.size:
            return out
        v = values[self.order]
        m = np.maximum.reduceat(v, self.starts)
        m = np.where(np.isfinite(m), m, 0.0)
        s = np.add.reduceat(np.exp(v - m[self.seg_of]), self.starts)
        with np.errstate(divide="ignore"):
            out[self.ids] = m + np.log(s)
        return out


def lattice_forward_backward(
    emissions: Sequence[np.ndarray],
    graphs: Sequence[TrainingGraph],
    weights: Sequence[np.ndarray],
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Log-likelihoods and emission gradients for a batch of lattices.

    ``emissions[b]`` is a ``T_b x C`` matrix indexed by ``ilabel - 1``.
    Returns ``totals[b] = log Weight(E_b o S_b)`` and, per utterance, the
    derivative of ``-totals[b]`` with respect to each emission entry (the
    negated arc occupancies, summed per frame and label).
    """
    batch = len(emissions)
    totals = np.full(batch, -np.inf)
    grads = [np.zeros_like(np.asarray(e, dtype=np.float64)) for e in emissions]
    live = [b for b in range(batch) if not graphs[b].empty]
    if not live:
        return totals, grads

    cols = emissions[live[0]].shape[1]
    frames = np.array([emissions[b].shape[0] for b in live])
    t_max = int(frames.max())
    n_live = len(live)

    src, dst, eidx, warc, autt = [], [], [], [], []
    finals, state_frames, starts, offsets = [], [], [], []
    offset = 0
    for k, b in enumerate(live):
        g, w = graphs[b], np.asarray(weights[b], dtype=np.float64)
        keep = np.isfinite(w)
        src.append(g.src[keep] + offset)
        dst.append(g.dst[keep] + offset)
        eidx.append(k * cols + g.ilabel[keep] - 1)
        warc.append(w[keep])
        autt.append(np.full(int(keep.sum()), k))
        finals.append(g.finals)
        state_frames.append(np.full(g.num_states, frames[k]))
        starts.append(g.start + offset)
        offsets.append(offset)
        offset += g.num_states
    n_states = offset
    src, dst, eidx = np.concatenate(src), np.concatenate(dst), np.concatenate(eidx)
    warc, autt = np.concatenate(warc), np.concatenate(autt)
    finals, state_frames = np.concatenate(finals), np.concatenate(state_frames)
    state_utt = np.repeat(np.arange(n_live), [graphs[b].num_states for b in live])

    padded = np.zeros((t_max, n_live, cols))
    for k, b in enumerate(live):
        padded[: frames[k], k] = emissions[b]
    arc_scores = padded.reshape(t_max, n_live * cols)[:, eidx] + warc

    by_dst = _Segments(dst, n_states)
    by_src = _Segments(src, n_states)

    alpha = np.full((t_max + 1, n_states), -np.inf)
    alpha[0, starts] = 0.0
    for t in range(t_max):
        alpha[t + 1] = by_dst.logsumexp(alpha[t, src] + arc_scores[t])

    end = alpha[state_frames, np.arange(n_states)] + finals
    utt_total = _Segments(state_utt, n_live).logsumexp(end)
    totals[live] = utt_total

    beta = np.full((t_max + 1, n_states), -np.inf)
    ends_now = state_frames == t_max
    beta[t_max, ends_now] = finals[ends_now]
    for t in range(t_max - 1, -1, -1):
        rec = by_src.logsumexp(arc_scores[t] + beta[t + 1, dst])
        rec[state_frames < t] = -np.inf
        here = state_frames == t
        rec[here] = finals[here]
        beta[t] = rec

    norm = np.where(np.isfinite(utt_total), utt_total, 0.0)[autt]
    log_occ = alpha[:-1, src] + arc_scores + beta[1:, dst] - norm
    occ = np.exp(log_occ)
    flat = (np.arange(t_max)[:, None] * (n_live * cols) + eidx[None, :]).ravel()
    acc = np.bincount(flat, weights=occ.ravel(), minlength=t_max * n_live * cols)
    acc = acc.reshape(t_max, n_live, cols)
    for k, b in enumerate(live):
        if np.isfinite(utt_total[k]):
            grads[b] = -acc[: frames[k], k]
    return totals, grads


def _star_chain_rule(log_probs: np.ndarray, ext_grad: np.ndarray, vocab: Vocabulary, star_mode: str) -> np.ndarray:
    """Fold the derived star column's gradient back onto the unit columns."""
    if star_mode == "dedicated":
        return ext_grad
    n = vocab.num_units
    grad = ext_grad[:, : n + 1].copy()
    star_grad = ext_grad[:, n + 1]
    if np.any(star_grad):
        units = log_probs[:, 1 : n + 1]
        m = units.max(axis=1, keepdims=True)
        share = np.exp(units - m)
        share /= share.sum(axis=1, keepdims=True)
        grad[:, 1 : n + 1] += star_grad[:, None] * share
    return grad


def batch_loss(
    emissions: Sequence[np.ndarray],
    graphs: Sequence[TrainingGraph],
    cfg: LossConfig,
    penalties: PenaltyPair | None = None,
    check: bool = True,
) -> list[LossResult]:
    """Evaluate precompiled training graphs against model emissions."""
    ext = []
    for e in emissions:
        e = np.asarray(e, dtype=np.float64)
        if check:
            check_normalized(e)
        ext.append(extend_emissions(e, cfg.vocab, cfg.star_mode))
    weights = [g.weights(penalties if g.otc else None) for g in graphs]
    totals, ext_grads = lattice_forward_backward(ext, graphs, weights)
    results = []
    for e, total, g in zip(emissions, totals, ext_grads):
        e = np.asarray(e, dtype=np.float64)
        if not np.isfinite(total):
            results.append(LossResult(math.inf, np.zeros_like(e), no_path=True))
            continue
        grad = _star_chain_rule(e, g, cfg.vocab, cfg.star_mode)
        results.append(LossResult(-float(total), grad))
    return results


def ctc_loss(log_probs: np.ndarray, transcript: Sequence[int], cfg: LossConfig) -> LossResult:
    graph = TrainingGraph.build(cfg.lexicon, transcript, otc=False)
    return batch_loss([log_probs], [graph], cfg)[0]


def otc_loss(
    log_probs: np.ndarray,
    transcript: Sequence[int],
    cfg: LossConfig,
    epoch: int = 0,
    penalties: PenaltyPair | None = None,
) -> LossResult:
    """OTC loss; ``penalties`` overrides the epoch schedule when given."""
    if penalties is None:
        schedule = cfg.schedule if cfg.schedule is not None else PenaltySchedule()
        penalties = penalty_at(schedule, epoch)
    graph = TrainingGraph.build(cfg.lexicon, transcript, otc=True)
    return batch_loss([log_probs], [graph], cfg, penalties)[0]


def loss(log_probs: np.ndarray, transcript: Sequence[int], cfg: LossConfig, epoch: int = 0) -> LossResult:
    if cfg.mode == "ctc":
        return ctc_loss(log_probs, transcript, cfg)
    return otc_loss(log_probs, transcript, cfg, epoch)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=-1, keepdims=True)
    return z - m - np.log(np.exp(z - m).sum(axis=-1, keepdims=True))


def logit_gradient(log_probs: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Chain a log-emission gradient through a log-softmax output layer."""
    p = np.exp(log_probs)
    return grad - p * grad.sum(axis=-1, keepdims=True)


def grad_check(
    log_probs: np.ndarray,
    transcript: Sequence[int],
    cfg: LossConfig,
    epoch: int = 0,
    step: float = 1e-5,
    penalties: PenaltyPair | None = None,
    floor: float = 1e-3,
) -> float:
    """Max relative error between analytic and finite-difference gradients.

    Emissions are treated as the log-softmax of free logits: each logit is
    perturbed by ``+-step``, the row re-normalised and the loss re-evaluated.
    The relative error of each entry is ``|a - n| / max(|a|, |n|, floor)``.
    """
    log_probs = _log_softmax(np.asarray(log_probs, dtype=np.float64))

    def nll(lp):
        if cfg.mode == "ctc":
            return ctc_loss(lp, transcript, cfg).nll
        return otc_loss(lp, transcript, cfg, epoch, penalties).nll

    if cfg.mode == "ctc":
        result = ctc_loss(log_probs, transcript, cfg)
    else:
        result = otc_loss(log_probs, transcript, cfg, epoch, penalties)
    if result.no_path:
        return 0.0
    analytic = logit_gradient(log_probs, result.grad)
    numeric = np.zeros_like(analytic)
    for idx in np.ndindex(*log_probs.shape):
        z = log_probs.copy()
        z[idx] += step
        up = nll(_log_softmax(z))
        z[idx] -= 2 * step
        down = nll(_log_softmax(z))
        numeric[idx] = (up - down) / (2 * step)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


class BestPath(NamedTuple):
    score: float
    frame_labels: tuple[int, ...]
    words: tuple[int, ...]


def best_path(
    log_probs: np.ndarray,
    transcript: Sequence[int],
    cfg: LossConfig,
    epoch: int = 0,
    penalties: PenaltyPair | None = None,
) -> BestPath | None:
    """Highest-scoring alignment in the same lattice (max instead of sum).

    ``words`` are the word-level output labels along the path, with star for
    both self-loop and bypass arcs.  Returns None when no path exists.
    """
    otc = cfg.mode == "otc"
    if otc and penalties is None:
        penalties = penalty_at(cfg.schedule, epoch)
    graph = TrainingGraph.build(cfg.lexicon, transcript, otc=otc)
    if graph.empty:
        return None
    log_probs = np.asarray(log_probs, dtype=np.float64)
    check_normalized(log_probs)
    ext = extend_emissions(log_probs, cfg.vocab, cfg.star_mode)
    w = graph.weights(penalties if otc else None)
    frames = ext.shape[0]
    score = np.full((frames + 1, graph.num_states), -np.inf)
    back = np.full((frames + 1, graph.num_states), -1, dtype=np.int64)
    score[0, graph.start] = 0.0
    for t in range(frames):
        cand = score[t, graph.src] + w + ext[t, graph.ilabel - 1]
        for a in np.argsort(-cand, kind="stable"):
            if not np.isfinite(cand[a]):
                break
            d = graph.dst[a]
            if cand[a] > score[t + 1, d]:
                score[t + 1, d] = cand[a]
                back[t + 1, d] = a
    end = score[frames] + graph.finals
    s = int(np.argmax(end))
    if not np.isfinite(end[s]):
        return None
    arcs = []
    for t in range(frames, 0, -1):
        a = back[t, s]
        arcs.append(a)
        s = int(graph.src[a])
    arcs.reverse()
    labels = tuple(int(graph.ilabel[a]) for a in arcs)
    words = tuple(int(graph.olabel[a]) for a in arcs if graph.olabel[a] != EPSILON)
    return BestPath(float(end.max()), labels, words)
