"""Solve one unbalanced transport problem and export it two ways.

Prints the dense plan, its JSON export (sparse entries over a threshold)
and the Sankey nodes/links payload that downstream plotting tools
consume. The pair is tiny so the whole coupling fits on screen.
"""

import json

import numpy as np

from otweights import UotConfig, cost_matrix, plan_to_json, solve_uot

rng = np.random.default_rng(3)
d = 6

# three chosen tokens, two of which sit right on top of rejected tokens
base = rng.standard_normal((2, d)) * 0.4
hidden_c = np.vstack([base, rng.standard_normal((1, d))])
hidden_r = np.vstack([base + 0.01 * rng.standard_normal((2, d)),
                      rng.standard_normal((2, d))])

m = cost_matrix(hidden_c, hidden_r)
print("cost matrix (Euclidean distances):")
print(np.array_str(m, precision=3))

plan = solve_uot(m, UotConfig(eps1=0.5, eps2=0.2))
print(f"\nconverged={plan.converged} after {plan.iterations} sweeps,"
      f" total mass {plan.total_mass:.4f}")
print("plan:")
print(np.array_str(plan.gamma, precision=3, suppress_small=True))
print("row marginals (chosen weights before rescaling):",
      np.round(plan.row_marginals, 3))
print("col marginals (rejected weights before rescaling):",
      np.round(plan.col_marginals, 3))

print("\nJSON export (entries above 1e-3):")
print(json.dumps(plan_to_json(plan, threshold=1e-3), indent=2))

print("\nthe CLI's `plan --sankey` emits the same coupling as nodes C{i}/R{j}")
print("and links whose values are the plan entries; node weight = sum of its")
print("kept links, so the diagram is self-consistent after thresholding.")
