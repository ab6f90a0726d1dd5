"""
Training on noisy transcripts
=============================

Trains the toy linear model with CTC and with OTC on transcripts
corrupted by an equal mix of substitutions, insertions and deletions,
then scores greedy decoding against the clean held-out transcripts.

The full committed benchmark takes a couple of minutes per rate on one
core.  Pass ``--quick`` for a smaller run that only shows the mechanics.
"""

import dataclasses
import sys

from otc.toy import BenchmarkConfig, run_benchmark

cfg = BenchmarkConfig.load()
if "--quick" in sys.argv:
    cfg = dataclasses.replace(cfg, n_train=150, n_test=50, epochs=15)
data = cfg.dataset()

rates = (0.0, 0.3, 0.5, 0.7)
print("rate   CTC TER   OTC TER")
for rate in rates:
    ctc = run_benchmark("ctc", "mix", rate, cfg, data)
    otc = run_benchmark("otc", "mix", rate, cfg, data)
    print(f"{rate:4.1f}   {ctc['ter']:7.3f}   {otc['ter']:7.3f}")
