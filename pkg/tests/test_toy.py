import math

import numpy as np
import pytest

from otc.corruption import mixture_spec
from otc.graphs import Vocabulary
from otc.loss import PenaltySchedule
from otc.oracle import collapse
from otc.toy import (
    BenchmarkConfig,
    ModelParams,
    TrainConfig,
    evaluate,
    generate_dataset,
    greedy_decode,
    run_benchmark,
    train,
)

V = Vocabulary(tuple("abcd"))


def one_hot(labels, vocab, star_mode="average", p=0.9):
    width = vocab.num_columns(star_mode)
    rows = np.full((len(labels), width), (1 - p) / (width - 1))
    rows[np.arange(len(labels)), np.array(labels) - 1] = p
    return np.log(rows)


def small_data(n=40, sigma=0.3, seed=0):
    return generate_dataset(V, n, (3, 6), sigma=sigma, seed=seed, dim=8, prototype_scale=1.5)


class TestGreedyDecode:
    def test_collapses(self):
        lp = one_hot(V.encode("<blk> a a <blk> b"), V)
        assert greedy_decode(lp, V) == V.encode("a b")

    def test_all_blank(self):
        assert greedy_decode(one_hot([1, 1, 1], V), V) == ()

    def test_dedicated_star_is_dropped(self):
        lp = one_hot(V.encode("a <star> <star> b"), V, "dedicated")
        assert greedy_decode(lp, V, "dedicated") == V.encode("a b")

    def test_star_separates_repeats_before_deletion(self):
        lp = one_hot(V.encode("a <star> a"), V, "dedicated")
        assert greedy_decode(lp, V, "dedicated") == V.encode("a a")

    def test_ties_go_to_lowest_label(self):
        lp = np.log(np.full((2, 5), 0.2))
        assert greedy_decode(lp, V) == ()
        lp = np.log(np.array([[0.1, 0.4, 0.4, 0.05, 0.05]]))
        assert greedy_decode(lp, V) == V.encode("a")

    def test_matches_argmax_collapse(self, rng):
        for _ in range(50):
            lp = rng.normal(size=(10, 5)) * 3
            lp -= np.log(np.exp(lp).sum(axis=1, keepdims=True))
            expected = collapse([int(np.argmax(r)) + 1 for r in lp])
            assert greedy_decode(lp, V) == expected


class TestDataset:
    def test_shapes_and_labels(self):
        data = small_data()
        assert len(data) == 40
        for u in data.utterances:
            assert 3 <= len(u.transcript) <= 6
            assert all(a != b for a, b in zip(u.transcript, u.transcript[1:]))
            assert u.features.shape == (len(u.frame_labels), 8)
            assert collapse(u.frame_labels) == u.transcript

    def test_noiseless_nearest_prototype(self):
        data = small_data(sigma=0.0)
        for u in data.utterances:
            d = ((u.features[:, None, :] - data.prototypes[None]) ** 2).sum(-1)
            assert tuple(np.argmin(d, axis=1) + 2) == u.frame_labels

    def test_deterministic(self):
        a, b = small_data(seed=3), small_data(seed=3)
        assert all(np.array_equal(x.features, y.features) for x, y in zip(a.utterances, b.utterances))

    def test_split(self):
        head, tail = small_data().split(30)
        assert (len(head), len(tail)) == (30, 10)


class TestModel:
    def test_perfect_model_scores_zero(self):
        data = small_data(sigma=0.0)
        weight = np.zeros((8, 5))
        weight[:, 1:] = 50 * data.prototypes.T
        assert evaluate(ModelParams(weight, np.zeros(5)), data) == 0.0

    def test_zero_model_is_useless(self):
        data = small_data()
        assert evaluate(ModelParams.zeros(8, 5), data) > 0.9

    def test_outputs_normalised(self, rng):
        p = ModelParams(rng.normal(size=(8, 5)), rng.normal(size=5))
        lp = p.log_probs(rng.normal(size=(7, 8)))
        assert np.allclose(np.exp(lp).sum(axis=1), 1.0)

    def test_save_load(self, tmp_path, rng):
        p = ModelParams(rng.normal(size=(8, 5)), rng.normal(size=5))
        p.save(tmp_path / "m.npz")
        q = ModelParams.load(tmp_path / "m.npz")
        assert np.array_equal(p.weight, q.weight) and np.array_equal(p.bias, q.bias)


class TestTraining:
    def test_ctc_loss_decreases(self):
        data = small_data()
        res = train(data, data.transcripts, TrainConfig(epochs=15, learning_rate=0.1, batch_size=10))
        trace = res.loss_trace
        assert trace[-1] < trace[0]
        assert all(b <= a * 1.05 for a, b in zip(trace, trace[1:]))

    def test_learns_clean_data(self):
        data = small_data(n=80)
        tr, te = data.split(60)
        res = train(tr, tr.transcripts, TrainConfig(epochs=20))
        assert evaluate(res.params, te) < 0.3

    def test_otc_dedicated_runs(self):
        data = small_data()
        cfg = TrainConfig(mode="otc", star_mode="dedicated", epochs=2, schedule=PenaltySchedule(1.0, 0.9, 1.0, 0.9))
        res = train(data, data.transcripts, cfg)
        assert res.params.weight.shape == (8, 6)
        assert all(math.isfinite(x) for x in res.loss_trace)

    def test_unalignable_utterance_skipped(self):
        data = small_data(n=10)
        ys = list(data.transcripts)
        ys[0] = tuple(V.encode("a b") * 40)
        res = train(data, ys, TrainConfig(epochs=1))
        assert res.skipped == 1

    def test_deterministic(self):
        data = small_data()
        cfg = TrainConfig(mode="otc", epochs=3, error_spec=mixture_spec(0.3))
        a = train(data, data.transcripts, cfg)
        b = train(data, data.transcripts, cfg)
        assert np.array_equal(a.params.weight, b.params.weight)
        assert evaluate(a.params, data) == evaluate(b.params, data)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(epochs=0)
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=0.0)
        assert TrainConfig(mode="otc").schedule == PenaltySchedule()


class TestBenchmarkConfig:
    def test_packaged_config_matches_declared_shape(self):
        cfg = BenchmarkConfig.load()
        assert (cfg.num_units, cfg.dim, cfg.sigma) == (8, 16, 0.3)
        assert (cfg.n_train, cfg.n_test, cfg.min_len, cfg.max_len) == (400, 100, 5, 12)
        assert 0.0 < cfg.tau1 < 1.0 and 0.0 < cfg.tau2 < 1.0

    def test_unknown_key(self):
        with pytest.raises(KeyError):
            BenchmarkConfig.from_mapping({"colour": "red"})

    def test_tiny_run(self):
        cfg = BenchmarkConfig(n_train=20, n_test=10, epochs=2)
        r = run_benchmark("otc", "mix", 0.3, cfg)
        assert set(r) >= {"mode", "error_type", "error_rate", "ter", "loss_trace"}
        assert len(r["loss_trace"]) == 2
        assert 0.0 <= r["ter"]
