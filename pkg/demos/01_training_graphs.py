"""
Training graphs as transducers
==============================

Builds the pieces of a CTC training graph for a two-unit vocabulary,
composes them, and scores a small emission matrix against the result.
Then the same transcript gets the wildcard-augmented grammar.
"""

import numpy as np

from otc import (
    Lexicon,
    LossConfig,
    PenaltyPair,
    Vocabulary,
    build_ctc_topology,
    build_linear_g,
    build_otc_g,
    build_training_graph,
    ctc_loss,
    enumerate_paths,
    otc_loss,
    write_text,
)
from otc.oracle import build_lattice

vocab = Vocabulary(("a", "b"))
lexicon = Lexicon.identity(vocab)
y = vocab.encode("a b")

# The topology maps frame labels to units: blank and repeats emit nothing.
topo = build_ctc_topology(vocab)
print("topology:", topo.num_states, "states,", topo.num_arcs, "arcs")

# The grammar accepts exactly the transcript.
print(write_text(build_linear_g(y)))

# T o L o G, trimmed.
S = build_training_graph(lexicon, y)
print("training graph:", S.num_states, "states,", S.num_arcs, "arcs")

# Four frames of made-up log-probabilities over (blank, a, b).
probs = np.array(
    [
        [0.6, 0.3, 0.1],
        [0.2, 0.7, 0.1],
        [0.5, 0.1, 0.4],
        [0.1, 0.1, 0.8],
    ]
)
log_probs = np.log(probs)

# Every path through E o S is one alignment that collapses to "a b".
lattice = build_lattice(log_probs, y, lexicon)
for path in sorted(enumerate_paths(lattice), key=lambda p: -p.weight)[:5]:
    print(" ".join(vocab.decode(path.ilabels)), f"{path.weight:.3f}")

res = ctc_loss(log_probs, y, LossConfig(vocab))
print(f"CTC nll {res.nll:.4f}")
print("d nll / d log-emission (minus occupancies):")
print(np.round(res.grad, 3))

# The wildcard grammar: a star self-loop at each state, a star bypass
# beside each token.  lambda1/lambda2 are the penalties (weight -lambda).
g_otc = build_otc_g(y, PenaltyPair(1.0, 1.0), vocab.star_id)
print("OTC grammar:", g_otc.num_states, "states,", g_otc.num_arcs, "arcs")

cfg = LossConfig(vocab, mode="otc")
for lam in (float("inf"), 4.0, 1.0, 0.0):
    r = otc_loss(log_probs, y, cfg, penalties=PenaltyPair(lam, lam))
    print(f"lambda = {lam:>4}: OTC nll {r.nll:.4f}")
