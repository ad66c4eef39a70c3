"""Train an S-Learner with and without the allocation-aware regularizer.

Both runs share the same pretrained network. The second continues with
lam > 0, so its gradient also pushes predictions toward better allocations.
Held-out allocations are scored against the true response matrix.
"""
from budgetalloc import ModelConfig, TrainConfig, generate_featured, split, standardize_features, train
from budgetalloc.metrics import eom_at_budget
from budgetalloc.slearner import predict

seed = 0
ds, _ = generate_featured(20000, 4, 16, seed)
tr, te = split(ds, 0.7, seed)
tf, tr = standardize_features(tr)
te = tf.transform_dataset(te)
batch = te.as_batch()

mc = ModelConfig(16, 4, trunk_layer_sizes=(128, 64), head_layer_sizes=(16, 1))
pre, _ = train(tr, mc, TrainConfig(lam=0.0, epochs=10, batch_size=5000, seed=seed))


def heldout(p):
    return eom_at_budget(predict(p, te.features), batch, 2.0).response


print("pretrained:", round(heldout(pre), 4))
for lam in (0.0, 0.01):
    cfg = TrainConfig(lam=lam, epochs=3, batch_size=5000, seed=seed + 1,
                      grad_estimator="nes")
    p, _ = train(tr, mc, cfg, params=pre)
    print(f"lam {lam}: held-out response {heldout(p):.4f}")
