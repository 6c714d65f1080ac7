"""Desk-scale reproduction of the length-bias effect.

Generates a synthetic corpus whose chosen responses run ~10 tokens
longer than the rejected ones, trains the same bigram policy once with
plain uniform weighting and once with transport weighting, and then
regresses each response's log-probability change on its length. Plain
training inflates long responses; transport weighting, whose budget is
capped at the shorter length and concentrated on shared content, shows
a visibly smaller slope. A third run without the budget normalization
shows why that rescaling exists: its gradient norms run hotter.
"""

import numpy as np

from otweights import (
    Dpo,
    LossConfig,
    Otpo,
    SynthConfig,
    TauMode,
    generate,
    reference_policy,
    train,
)

cfg = SynthConfig(num_pairs=500, length_bias=10, seed=99)
pairs = generate(cfg)
diffs = [len(p.chosen) - len(p.rejected) for p in pairs]
print(f"corpus: {cfg.num_pairs} pairs, mean length difference {np.mean(diffs):+.1f} tokens\n")

runs = [
    ("plain uniform weights", Dpo()),
    ("transport weights (min-length budget)", Otpo()),
    ("transport weights (no normalization)", Otpo(tau_mode=TauMode.NONE)),
]

print(f"{'run':42s} {'slope':>9s} {'r':>6s} {'max |grad|':>11s}")
for label, scheme in runs:
    policy = reference_policy(cfg)
    report = train(policy, pairs, LossConfig(beta=0.1, scheme=scheme), steps=120, lr=0.5)
    fit = report.length_fit
    print(f"{label:42s} {fit.slope:9.5f} {fit.r:6.2f} {report.grad_norm.max():11.5f}")

print("\nreading: slope is d(logp change)/d(length). The transport run moves")
print("log-probabilities with far less regard for raw length than the plain")
print("run, and skipping the budget normalization makes updates noticeably")
print("more aggressive (larger peak gradient norm).")
