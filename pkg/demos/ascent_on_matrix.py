"""Gradient ascent on Q directly over a response matrix.

No model here: v itself is the parameter. Gradients come from antithetic
Gaussian smoothing (NES) because Q is piecewise constant in v.
"""
from budgetalloc import NesParams, PredictionPair, QEvalParams, evaluate_q, generate_ground_truth, sample_rct
from budgetalloc.rng import derive_seed, stream
from budgetalloc.slearner import gradient_ascent_on_matrix

seed = 0
gt = generate_ground_truth(2000, 4, seed)
batch = sample_rct(gt, seed).as_batch()
qp = QEvalParams.per_capita(2.0, len(batch))

v0 = stream(seed, "initial_v").random(gt.v_gt.shape)
print("Q with the true v:", round(evaluate_q(PredictionPair(gt.v_gt, gt.c_gt), batch, qp).q, 4))

nes = NesParams(sigma=1e-3, num_directions=500, seed=derive_seed(seed, "nes"))
v, trace = gradient_ascent_on_matrix(v0, gt.c_gt, batch, qp, nes, steps=30, lr=0.005)
for k in range(0, len(trace), 5):
    print(f"step {k:3d}  Q = {trace[k]:.4f}")
print(f"gain over the random start: {trace[-1] - trace[0]:+.4f}")
