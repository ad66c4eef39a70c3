"""How close do NES gradients get to a finite-difference reference?

The reference perturbs a fixed random subset of entries one at a time. NES
is then run with more and more directions and compared by cosine on the
same entries.
"""
import numpy as np

from budgetalloc import (FdParams, NesParams, PredictionPair, QEvalParams, cosine_similarity,
                         estimate_grad_fd, estimate_grad_nes, generate_ground_truth, sample_rct)
from budgetalloc.allocator import QFunction
from budgetalloc.rng import derive_seed, stream

seed = 3
gt = generate_ground_truth(2000, 4, seed)
batch = sample_rct(gt, seed).as_batch()
q = QFunction(batch, QEvalParams.per_capita(2.0, len(batch)))
pred = PredictionPair(stream(seed, "initial_v").random(gt.v_gt.shape), gt.c_gt)

ref = estimate_grad_fd(q, pred, FdParams(h=3e-3, num_entries=2000, seed=derive_seed(seed, "fd_mask")))
mask = ref.grad_v != 0
print("reference: nonzero entries", int(mask.sum()), "evals", ref.evaluations_used)

for N in (50, 200, 800):
    cos = []
    for r in range(3):
        g = estimate_grad_nes(q, pred, NesParams(1e-3, N, derive_seed(seed, "nes", N, r)))
        cos.append(cosine_similarity(g.grad_v[mask], ref.grad_v[mask]))
    print(f"N = {N:4d}  cosine median {np.median(cos):.3f}")
