"""Desk-scale training benchmark: CTC vs OTC under transcript noise.

Features are noisy copies of per-unit prototype vectors, a few frames per
unit.  The acoustic model is a single affine layer with log-softmax, trained
by plain mini-batch gradient descent on the loss engine's exact gradients.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .corruption import ErrorSpec, corpus_error_rate, corrupt_corpus, single_spec
from .graphs import Lexicon, Vocabulary
from .loss import (
    LossConfig,
    PenaltySchedule,
    TrainingGraph,
    _log_softmax,
    batch_loss,
    logit_gradient,
    penalty_at,
)
from .oracle import collapse


@dataclass
class Utterance:
    features: np.ndarray
    transcript: tuple[int, ...]
    frame_labels: tuple[int, ...]


@dataclass
class ToyDataset:
    vocab: Vocabulary
    utterances: list[Utterance]
    prototypes: np.ndarray
    sigma: float
    seed: int

    def __len__(self) -> int:
        return len(self.utterances)

    @property
    def transcripts(self) -> list[tuple[int, ...]]:
        return [u.transcript for u in self.utterances]

    def split(self, n_first: int) -> tuple["ToyDataset", "ToyDataset"]:
        a = replace(self, utterances=self.utterances[:n_first])
        b = replace(self, utterances=self.utterances[n_first:])
        return a, b


def generate_dataset(
    vocab: Vocabulary,
    n_utts: int,
    len_range: tuple[int, int] = (5, 12),
    sigma: float = 0.3,
    seed: int = 0,
    dim: int = 16,
    frames_per_unit: tuple[int, int] = (2, 4),
    prototype_scale: float = 1.0,
) -> ToyDataset:
    """Random unit strings rendered as noisy prototype frames.

    Prototypes are random directions of length ``prototype_scale``.
    Adjacent units in a transcript always differ, since a frame-wise model
    with no blank frames in the data could not separate a repeat.
    """
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if len_range[0] < 1 or len_range[1] < len_range[0]:
        raise ValueError("invalid len_range")
    if vocab.num_units < 2 and len_range[1] > 1:
        raise ValueError("need at least two units to avoid adjacent repeats")
    rng = np.random.default_rng(seed)
    protos = rng.normal(size=(vocab.num_units, dim))
    protos *= prototype_scale / np.linalg.norm(protos, axis=1, keepdims=True)
    units = np.array(vocab.unit_ids)
    utts = []
    for _ in range(n_utts):
        length = int(rng.integers(len_range[0], len_range[1] + 1))
        seq = [int(rng.choice(units))]
        while len(seq) < length:
            nxt = int(rng.choice(units[units != seq[-1]]))
            seq.append(nxt)
        reps = rng.integers(frames_per_unit[0], frames_per_unit[1] + 1, size=length)
        frame_labels = np.repeat(seq, reps)
        feats = protos[frame_labels - 2] + sigma * rng.normal(size=(frame_labels.size, dim))
        utts.append(Utterance(feats, tuple(seq), tuple(int(l) for l in frame_labels)))
    return ToyDataset(vocab, utts, protos, sigma, seed)


@dataclass
class ModelParams:
    """Affine map from features to output-layer logits."""

    weight: np.ndarray
    bias: np.ndarray

    @classmethod
    def zeros(cls, dim: int, n_out: int) -> "ModelParams":
        return cls(np.zeros((dim, n_out)), np.zeros(n_out))

    def log_probs(self, features: np.ndarray) -> np.ndarray:
        return _log_softmax(features @ self.weight + self.bias)

    def save(self, path: str | Path) -> None:
        np.savez(path, weight=self.weight, bias=self.bias)

    @classmethod
    def load(cls, path: str | Path) -> "ModelParams":
        with np.load(path) as data:
            return cls(data["weight"], data["bias"])


@dataclass
class TrainConfig:
    mode: str = "ctc"
    star_mode: str = "average"
    schedule: PenaltySchedule | None = None
    epochs: int = 30
    learning_rate: float = 0.5
    batch_size: int = 20
    seed: int = 0
    error_spec: ErrorSpec = field(default_factory=ErrorSpec)

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.mode == "otc" and self.schedule is None:
            self.schedule = PenaltySchedule()

    def loss_config(self, vocab: Vocabulary) -> LossConfig:
        return LossConfig(
            vocab,
            mode=self.mode,
            star_mode=self.star_mode,
            schedule=self.schedule if self.mode == "otc" else None,
        )


@dataclass
class TrainResult:
    params: ModelParams
    loss_trace: list[float]
    diverged: bool = False
    skipped: int = 0


def train(
    data: ToyDataset,
    transcripts: Sequence[Sequence[int]],
    cfg: TrainConfig,
) -> TrainResult:
    """Fit a linear-softmax model to ``transcripts`` (possibly corrupted).

    Each epoch uses the penalties for that epoch index.  Utterances whose
    transcript cannot be aligned in the available frames are skipped.
    """
    if len(transcripts) != len(data):
        raise ValueError("need one transcript per utterance")
    vocab = data.vocab
    loss_cfg = cfg.loss_config(vocab)
    otc = cfg.mode == "otc"
    cache: dict[tuple[int, ...], TrainingGraph] = {}
    graphs = []
    for y in transcripts:
        key = tuple(y)
        if key not in cache:
            cache[key] = TrainingGraph.build(loss_cfg.lexicon, key, otc=otc)
        graphs.append(cache[key])

    dim = data.prototypes.shape[1]
    params = ModelParams.zeros(dim, loss_cfg.num_columns)
    rng = np.random.default_rng(cfg.seed)
    trace: list[float] = []
    skipped = set()
    feats = [u.features for u in data.utterances]
    for epoch in range(cfg.epochs):
        penalties = penalty_at(cfg.schedule, epoch) if otc else None
        order = rng.permutation(len(data))
        total, count = 0.0, 0
        for lo in range(0, len(order), cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            emissions = [params.log_probs(feats[i]) for i in idx]
            results = batch_loss(emissions, [graphs[i] for i in idx], loss_cfg, penalties, check=False)
            g_w = np.zeros_like(params.weight)
            g_b = np.zeros_like(params.bias)
            n_ok = 0
            for i, lp, res in zip(idx, emissions, results):
                if res.no_path:
                    skipped.add(int(i))
                    continue
                dz = logit_gradient(lp, res.grad)
                g_w += feats[i].T @ dz
                g_b += dz.sum(axis=0)
                total += res.nll
                n_ok += 1
            if n_ok:
                params.weight -= cfg.learning_rate * g_w / n_ok
                params.bias -= cfg.learning_rate * g_b / n_ok
            count += n_ok
        mean = total / count if count else math.nan
        trace.append(mean)
        if not math.isfinite(mean) or not np.all(np.isfinite(params.weight)):
            return TrainResult(params, trace, diverged=True, skipped=len(skipped))
    return TrainResult(params, trace, skipped=len(skipped))


def greedy_decode(log_probs: np.ndarray, vocab: Vocabulary, star_mode: str = "average") -> tuple[int, ...]:
    """Frame-wise argmax, then collapse.

    Columns map to labels as ``column + 1``; ties go to the lowest label.
    A star column (dedicated mode only) can win a frame; it is then dropped
    after collapsing.
    """
    log_probs = np.asarray(log_probs)
    best = np.argmax(log_probs, axis=1) + 1
    out = collapse(best.tolist(), vocab.blank_id)
    if star_mode == "dedicated":
        out = tuple(l for l in out if l != vocab.star_id)
    return out


def evaluate(params: ModelParams, data: ToyDataset, star_mode: str = "average") -> float:
    """Mean token error rate of greedy decoding against the true transcripts."""
    hyps = [greedy_decode(params.log_probs(u.features), data.vocab, star_mode) for u in data.utterances]
    return corpus_error_rate(data.transcripts, hyps)


# --------------------------------------------------------------------------
# Benchmark configuration


@dataclass(frozen=True)
class BenchmarkConfig:
    """The committed toy benchmark; see ``data/toy_benchmark.cfg``."""

    num_units: int = 8
    dim: int = 16
    sigma: float = 0.3
    prototype_scale: float = 1.0
    n_train: int = 400
    n_test: int = 100
    min_len: int = 5
    max_len: int = 12
    min_frames: int = 2
    max_frames: int = 4
    data_seed: int = 0
    epochs: int = 30
    learning_rate: float = 0.5
    batch_size: int = 20
    train_seed: int = 0
    corruption_seed: int = 1
    star_mode: str = "average"
    beta1: float = 3.75
    tau1: float = 0.999
    beta2: float = -19.0
    tau2: float = 0.975

    @classmethod
    def from_mapping(cls, values: dict[str, str]) -> "BenchmarkConfig":
        known = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            name = key.replace("-", "_")
            if name not in known:
                raise KeyError(f"unknown benchmark setting {key!r}")
            default = getattr(cls, name)
            kwargs[name] = type(default)(raw) if not isinstance(default, str) else raw
        return cls(**kwargs)

    @classmethod
    def load(cls, path: str | Path | None = None) -> "BenchmarkConfig":
        if path is None:
            text = resources.files("otc").joinpath("data/toy_benchmark.cfg").read_text()
        else:
            text = Path(path).read_text()
        return cls.from_mapping(parse_key_values(text))

    def vocab(self) -> Vocabulary:
        return Vocabulary(tuple(chr(ord("a") + i) for i in range(self.num_units)))

    def schedule(self) -> PenaltySchedule:
        return PenaltySchedule(self.beta1, self.tau1, self.beta2, self.tau2)

    def dataset(self) -> tuple[ToyDataset, ToyDataset]:
        data = generate_dataset(
            self.vocab(),
            self.n_train + self.n_test,
            (self.min_len, self.max_len),
            self.sigma,
            self.data_seed,
            self.dim,
            (self.min_frames, self.max_frames),
            self.prototype_scale,
        )
        return data.split(self.n_train)

    def train_config(self, mode: str, error_spec: ErrorSpec) -> TrainConfig:
        return TrainConfig(
            mode=mode,
            star_mode=self.star_mode,
            schedule=self.schedule() if mode == "otc" else None,
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            seed=self.train_seed,
            error_spec=error_spec,
        )


def parse_key_values(text: str) -> dict[str, str]:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key] = value
    return values


def run_benchmark(
    mode: str,
    error_type: str = "mix",
    error_rate: float = 0.0,
    config: BenchmarkConfig | None = None,
    data: tuple[ToyDataset, ToyDataset] | None = None,
) -> dict:
    """Train on corrupted transcripts and score on clean held-out data."""
    config = config or BenchmarkConfig.load()
    train_set, test_set = data if data is not None else config.dataset()
    spec = single_spec(error_type, error_rate, config.corruption_seed)
    pool = list(config.vocab().unit_ids)
    corrupted, reports = corrupt_corpus(train_set.transcripts, spec, pool)
    tcfg = config.train_config(mode, spec)
    started = time.perf_counter()
    result = train(train_set, corrupted, tcfg)
    ter = evaluate(result.params, test_set, config.star_mode)
    tokens = sum(r.tokens for r in reports)
    return {
        "mode": mode,
        "error_type": error_type,
        "error_rate": error_rate,
        "ter": ter,
        "loss_trace": result.loss_trace,
        "diverged": result.diverged,
        "skipped": result.skipped,
        "realized_error_rate": (
            sum(r.substituted + r.inserted + r.deleted for r in reports) / tokens if tokens else 0.0
        ),
        "seconds": time.perf_counter() - started,
        "params": result.params,
    }
