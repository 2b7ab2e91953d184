"""Coin-model check: tosses and lifetime bookkeeping only, no network.

The per-window frequency of resynchronization points is compared with its
theoretical floor 2*q0*(1-q0)^g0, using a one-sided 99% lower confidence
bound.

Usage: python demos/coin_model.py [windows]
"""

import sys

from planesync.harness import lemma1_coin_model, reference_scenario

windows = int(sys.argv[1]) if len(sys.argv) > 1 else 20_000
rp = reference_scenario().resolved
print(lemma1_coin_model(rp, windows, seed=0).table())
