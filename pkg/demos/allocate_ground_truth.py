"""Allocate a per-capita budget using the true response/cost matrices.

Draws a synthetic RCT, solves the relaxed knapsack by bisection on the
multiplier and reports the matched response at the chosen multiplier, then
sweeps alpha to show the cost/response trade-off.
"""
import numpy as np

from budgetalloc import (PredictionPair, QEvalParams, cost_value_curve, evaluate_q,
                         generate_ground_truth, sample_rct)

gt = generate_ground_truth(10000, 4, seed=0)
rct = sample_rct(gt, seed=0)
batch = rct.as_batch()
pred = PredictionPair(gt.v_gt, gt.c_gt)

for budget in (1.0, 2.0, 3.0):
    r = evaluate_q(pred, batch, QEvalParams.per_capita(budget, len(batch)))
    print(f"budget {budget:.1f}: Q = {r.q:.4f} at alpha = {r.alpha:.4f}")

# cheaper multipliers spend more
for p in cost_value_curve(pred, batch, np.linspace(0.0, 0.3, 7)):
    print(f"alpha {p.alpha:.2f}  cost {p.per_capita_cost:.3f}  response {p.per_capita_response:.4f}")
