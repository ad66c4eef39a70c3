"""Score two-arm uplift rankings by the normalized area under the cost curve.

A random ranking lands near 0.5; ranking by the true incremental
response per unit of incremental cost does much better.
"""
import numpy as np

from budgetalloc import aucc, build_cost_curve, generate_featured, generate_ground_truth, sample_rct

gt = generate_ground_truth(10000, 2, seed=1)
rct = sample_rct(gt, seed=1)
rand = np.random.default_rng(0).random(len(rct))
print("random ranking :", round(aucc(build_cost_curve(rand, rct)), 4))

ds, gtf = generate_featured(10000, 2, 16, seed=1)
dv = gtf.v_gt[:, 1] - gtf.v_gt[:, 0]
dc = gtf.c_gt[:, 1] - gtf.c_gt[:, 0]
print("oracle ranking :", round(aucc(build_cost_curve(dv / np.maximum(dc, 1e-6), ds)), 4))
