"""
Where the wildcard lands
========================

An utterance says "have a nice day", but its transcript reads
"a very good day": one token missing, one inserted, one replaced.
The best alignment under the OTC graph covers the corrupted spans with
the star token and keeps the tokens that agree with the audio.
"""

import numpy as np

from otc import LossConfig, PenaltyPair, Vocabulary, best_path, ctc_loss, otc_loss
from otc.graphs import star_scores

vocab = Vocabulary(("have", "a", "nice", "day", "very", "good"))

# Four frames per spoken unit; the model is fairly sure of what it hears.
rows = []
for unit in vocab.encode("have a nice day"):
    row = np.full(vocab.num_units + 1, 0.02)
    row[0] = 0.1
    row[unit - 1] = 0.8
    rows.extend([np.log(row)] * 4)
log_probs = np.array(rows)

# In average mode the star scores each frame by the mean unit probability.
print("star log-score per frame:", np.round(star_scores(log_probs, vocab.num_units)[:4], 3))

transcript = vocab.encode("a very good day")
pen = PenaltyPair(1.0, 1.0)

ctc = best_path(log_probs, transcript, LossConfig(vocab))
otc = best_path(log_probs, transcript, LossConfig(vocab, mode="otc"), penalties=pen)
print("CTC best path:", " ".join(vocab.decode(ctc.frame_labels)))
print("OTC best path:", " ".join(vocab.decode(otc.frame_labels)))
print("OTC tokens:   ", " ".join(vocab.decode(otc.words)))

print(f"nll CTC {ctc_loss(log_probs, transcript, LossConfig(vocab)).nll:.3f}")
print(f"nll OTC {otc_loss(log_probs, transcript, LossConfig(vocab, mode='otc'), penalties=pen).nll:.3f}")
