import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from otc.wfst import (
    EPSILON,
    Arc,
    CyclicGraph,
    ParseError,
    PathExplosion,
    Wfst,
    compose,
    connect,
    enumerate_paths,
    identity_acceptor,
    linear_acceptor,
    log_plus,
    log_sum,
    read_text,
    total_weight,
    write_dot,
    write_text,
)

from conftest import random_acyclic


def naive_paths(w):
    """Independent recursive path listing: (istring, ostring, weight)."""
    out = []

    def walk(s, il, ol, acc):
        if w.is_final(s):
            out.append((tuple(il), tuple(ol), acc + w.final_weight(s)))
        for a in w.arcs:
            if a.src == s:
                walk(
                    a.dst,
                    il + ([a.ilabel] if a.ilabel else []),
                    ol + ([a.olabel] if a.olabel else []),
                    acc + a.weight,
                )

    if w.num_states:
        walk(w.start, [], [], 0.0)
    return out


def lse(values):
    values = list(values)
    if not values:
        return -math.inf
    m = max(values)
    return m + math.log(sum(math.exp(v - m) for v in values))


finite = st.floats(-50, 50, allow_nan=False)


class TestSemiring:
    @given(finite, finite)
    def test_plus_commutative(self, a, b):
        assert log_plus(a, b) == pytest.approx(log_plus(b, a), abs=1e-12)

    @given(finite, finite, finite)
    def test_plus_associative(self, a, b, c):
        assert log_plus(log_plus(a, b), c) == pytest.approx(log_plus(a, log_plus(b, c)), abs=1e-12)

    @given(finite, finite, finite)
    def test_times_distributes(self, a, b, c):
        assert a + log_plus(b, c) == pytest.approx(log_plus(a + b, a + c), abs=1e-12)

    @given(finite)
    def test_identities(self, a):
        assert log_plus(-math.inf, a) == a
        assert log_plus(a, -math.inf) == a
        assert 0.0 + a == a

    def test_no_overflow(self):
        assert log_sum([1000.0, 1000.0]) == pytest.approx(1000.0 + math.log(2))
        assert log_sum([-1000.0, -1000.0]) == pytest.approx(-1000.0 + math.log(2))
        assert log_sum([]) == -math.inf


class TestTotalWeight:
    def test_single_arc(self):
        w = Wfst(2, [Arc(0, 1, 1, 1, -2.0)], {1: 0.0})
        assert total_weight(w) == -2.0

    def test_two_parallel_paths(self):
        w = Wfst(2, [Arc(0, 1, 1, 1, -1.0), Arc(0, 1, 2, 2, -2.0)], {1: 0.0})
        assert total_weight(w) == pytest.approx(math.log(math.exp(-1) + math.exp(-2)))
        assert total_weight(w) == pytest.approx(-0.6867, abs=1e-4)

    def test_no_final_path(self):
        w = Wfst(3, [Arc(0, 1, 1, 1, 0.0)], {2: 0.0})
        assert total_weight(w) == -math.inf

    def test_cycle_rejected(self):
        w = Wfst(1, [Arc(0, 0, 1, 1, 0.0)], {0: 0.0})
        with pytest.raises(CyclicGraph):
            total_weight(w)

    def test_matches_path_enumeration(self, rng):
        for _ in range(200):
            w = random_acyclic(rng, max_states=8)
            expected = lse(p[2] for p in naive_paths(w))
            got = total_weight(w)
            if expected == -math.inf:
                assert got == -math.inf
            else:
                assert got == pytest.approx(expected, rel=1e-10, abs=1e-12)


class TestEnumeratePaths:
    def test_empty(self):
        assert enumerate_paths(Wfst.empty()) == []

    def test_linear(self):
        paths = enumerate_paths(linear_acceptor([1, 2, 3], [-1.0, -2.0, -3.0]))
        assert len(paths) == 1
        assert paths[0].ilabels == (1, 2, 3)
        assert paths[0].weight == -6.0

    def test_diamond(self):
        # two consecutive 2-way branches
        arcs = [
            Arc(0, 1, 1, 1, -0.1), Arc(0, 1, 2, 2, -0.2),
            Arc(1, 2, 3, 3, -1.0), Arc(1, 2, 4, 4, -2.0),
        ]
        paths = enumerate_paths(Wfst(3, arcs, {2: 0.0}))
        got = sorted((p.ilabels, round(p.weight, 12)) for p in paths)
        assert got == [((1, 3), -1.1), ((1, 4), -2.1), ((2, 3), -1.2), ((2, 4), -2.2)]

    def test_bound(self):
        arcs = [Arc(s, s + 1, l, l, 0.0) for s in range(12) for l in (1, 2)]
        with pytest.raises(PathExplosion):
            enumerate_paths(Wfst(13, arcs, {12: 0.0}), limit=1000)

    def test_cycle_rejected(self):
        with pytest.raises(CyclicGraph):
            enumerate_paths(identity_acceptor([1]))

    def test_agrees_with_naive(self, rng):
        for _ in range(100):
            w = random_acyclic(rng, max_states=6)
            a = sorted((p.ilabels, p.olabels, round(p.weight, 9)) for p in enumerate_paths(w))
            b = sorted((i, o, round(x, 9)) for i, o, x in naive_paths(w))
            assert a == b


class TestCompose:
    def test_identity(self, rng):
        for _ in range(50):
            a = random_acyclic(rng, labels=(1, 2, 3))
            c = compose(a, identity_acceptor([1, 2, 3]))
            pa = sorted((p.ilabels, p.olabels, round(p.weight, 9)) for p in enumerate_paths(a))
            pc = sorted((p.ilabels, p.olabels, round(p.weight, 9)) for p in enumerate_paths(c))
            assert pa == pc
            assert total_weight(c) == pytest.approx(total_weight(a), rel=1e-12)

    def test_linear_weights_add(self):
        a = linear_acceptor([1, 2], [-1.0, -1.0])
        t = Wfst(3, [Arc(0, 1, 1, 11, -0.5), Arc(1, 2, 2, 12, -0.5)], {2: 0.0})
        c = connect(compose(a, t))
        paths = enumerate_paths(c)
        assert len(paths) == 1
        assert paths[0].olabels == (11, 12)
        assert total_weight(c) == pytest.approx(-3.0)

    def test_empty_intersection(self):
        c = compose(linear_acceptor([1]), linear_acceptor([2]))
        assert total_weight(c) == -math.inf
        assert connect(c).num_states == 0

    def test_epsilons_counted_once(self):
        # a emits x then epsilon; b reads epsilon then x: one path only.
        a = Wfst(3, [Arc(0, 1, 1, 5, 0.0), Arc(1, 2, 2, EPSILON, 0.0)], {2: 0.0})
        b = Wfst(3, [Arc(0, 1, EPSILON, 7, 0.0), Arc(1, 2, 5, 8, 0.0)], {2: 0.0})
        assert len(enumerate_paths(compose(a, b))) == 1

    def test_matches_pairwise_oracle(self, rng):
        for _ in range(300):
            a = random_acyclic(rng, max_states=5)
            b = random_acyclic(rng, max_states=5)
            pairs = [
                wa + wb
                for ia, oa, wa in naive_paths(a)
                for ib, ob, wb in naive_paths(b)
                if oa == ib
            ]
            expected = lse(pairs)
            got = total_weight(compose(a, b))
            if expected == -math.inf:
                assert got == -math.inf
            else:
                assert got == pytest.approx(expected, rel=1e-10, abs=1e-12)


class TestConnect:
    def test_removes_dead_end(self):
        arcs = [Arc(0, 1, 1, 1, 0.0), Arc(0, 2, 2, 2, 0.0)]
        trimmed = connect(Wfst(3, arcs, {1: 0.0}))
        assert trimmed.num_states == 2
        assert trimmed.num_arcs == 1

    def test_already_trim(self):
        w = linear_acceptor([1, 2, 3])
        assert connect(w).isomorphic(w)
        assert connect(w) == w

    def test_may_return_empty(self):
        assert connect(Wfst(2, [Arc(0, 1, 1, 1, 0.0)], {})).num_states == 0

    def test_preserves_total_weight(self, rng):
        for _ in range(100):
            w = random_acyclic(rng, max_states=6)
            # bolt on an unreachable component
            extra = [Arc(w.num_states, w.num_states + 1, 1, 1, -0.3)]
            polluted = Wfst(w.num_states + 2, [*w.arcs, *extra], {**w.finals, w.num_states + 1: 0.0})
            before, after = total_weight(polluted), total_weight(connect(polluted))
            if before == -math.inf:
                assert after == -math.inf
            else:
                assert after == pytest.approx(before, abs=1e-12)


class TestText:
    def test_single_final_state(self):
        assert write_text(Wfst(1, [], {0: 0.0})) == "0 0.0\n"

    def test_arc_line(self):
        w = read_text("0 1 2 2 -1.5\n1\n")
        assert w.arcs == (Arc(0, 1, 2, 2, -1.5),)
        assert w.finals == {1: 0.0}

    def test_start_is_first_line(self):
        w = read_text("2 0 1 1 0.5\n0 0.0\n")
        assert w.start == 2

    @pytest.mark.parametrize(
        "text, lineno",
        [("0 1 2\n", 1), ("0 0.0\n0 x 1 1 0\n", 2), ("0 1 a b 0\n", 1), ("-1 0\n", 1)],
    )
    def test_parse_errors(self, text, lineno):
        with pytest.raises(ParseError) as err:
            read_text(text)
        assert err.value.lineno == lineno

    def test_round_trip_random(self, rng):
        for _ in range(100):
            w = random_acyclic(rng, max_states=8)
            assert read_text(write_text(w)) == w

    def test_round_trip_infinite_final(self):
        w = Wfst(2, [Arc(0, 1, 1, 1, 1e-17)], {1: 123.456789012345})
        assert read_text(write_text(w)) == w


def test_dot_notation():
    w = Wfst(2, [Arc(0, 1, 1, 2, -0.5)], {1: 0.0})
    dot = write_dot(w, {1: "a", 2: "A"})
    assert 'label = "a:A/-0.5"' in dot
    assert "doublecircle" in dot
