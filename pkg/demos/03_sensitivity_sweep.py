"""How the two solver knobs shape the weights.

Sweeps eps1 (entropy weight) and eps2 (marginal-penalty weight) over a
bag of random pairs with mean token distance near 1 and prints the two
headline trends: weight variance shrinks as eps1 grows (smoother
plans), and total plan mass shrinks as eps2 grows (marginals pulled
harder toward the unit targets).
"""

import numpy as np

from otweights import Otpo, PreferencePair, TokenSeq, UotConfig, cost_matrix, solve_uot, weights

rng = np.random.default_rng(42)


def random_pair(k):
    def seq(n):
        lp = -rng.uniform(0.5, 2.0, n)
        return TokenSeq(rng.integers(0, 99, n), lp, lp, 0.25 * rng.standard_normal((n, 8)))

    return PreferencePair(f"s{k}", seq(int(rng.integers(4, 9))), seq(int(rng.integers(4, 9))))


pairs = [random_pair(k) for k in range(20)]
costs = [cost_matrix(p.chosen.hidden, p.rejected.hidden) for p in pairs]
print(f"20 random pairs, mean token distance {np.mean([m.mean() for m in costs]):.3f}\n")

print("eps1 sweep (eps2 = 0.2): variance of the normalized weights")
for eps1 in (0.1, 0.5, 1.0, 5.0):
    scheme = Otpo(cfg=UotConfig(eps1=eps1))
    variances = [
        float(np.var(np.concatenate([tw.w_chosen, tw.w_rejected])))
        for tw in (weights(p, scheme) for p in pairs)
    ]
    print(f"  eps1={eps1:<4} median weight variance = {np.median(variances):.5f}")
print("  -> larger eps1 flattens the plan, so per-token weights even out\n")

print("eps2 sweep (eps1 = 1.0): total plan mass before normalization")
for eps2 in (0.05, 0.2, 1.0):
    masses = [solve_uot(m, UotConfig(eps1=1.0, eps2=eps2)).total_mass for m in costs]
    print(f"  eps2={eps2:<5} median total mass = {np.median(masses):.3f}")
print("  -> stronger marginal penalties pull the mass toward the unit targets")
print("\nthe CLI's `sweep` subcommand writes these statistics (plus reward")
print("margins) as tidy CSV for any grid of eps values.")
