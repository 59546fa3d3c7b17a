"""
What it costs to keep raw observations
======================================

Storing every observation so that its embedding can be recomputed is the
simplest route to fresh gradients. For an Atari-sized memory the bill is
hundreds of gigabytes; the embeddings themselves are tiny.
"""
from memcredit.harness import footprint_report

for preset in ("atari", "mnist"):
    print(preset)
    print(footprint_report(preset).to_text())
