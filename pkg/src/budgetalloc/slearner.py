"""S-Learner network with manual backpropagation and end-to-end training.

A shared ReLU trunk maps features to a hidden representation; 2K small heads
on top predict the response (sigmoid) and cost (softplus, or sigmoid for
binary cost labels) of every treatment. Training minimizes the per-arm
losses on observed treatments and, when ``lam > 0``, subtracts ``lam`` times a
linear term whose gradient is a detached black-box estimate of dQ/dv and
dQ/dc.
"""
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.special import expit

from .allocator import PredictionPair, QEvalParams, QFunction
from .data import batch_indices
from .errors import NonFiniteActivation, ShapeMismatch, ValidationError
from .gradest import FdParams, GradEstimate, NesParams, estimate, estimate_grad_nes
from .rng import derive_seed, stream

PROB_CLIP = 1e-7


@dataclass(frozen=True)
class ModelConfig:
    feature_dim: int
    num_treatments: int
    trunk_layer_sizes: tuple = (512, 256, 128, 64)
    head_layer_sizes: tuple = (32, 1)
    activation: str = "relu"
    cost_loss_kind: str = "regression"

    def __post_init__(self):
        object.__setattr__(self, "trunk_layer_sizes", tuple(int(s) for s in self.trunk_layer_sizes))
        object.__setattr__(self, "head_layer_sizes", tuple(int(s) for s in self.head_layer_sizes))
        if self.feature_dim < 1 or self.num_treatments < 1:
            raise ValidationError("feature_dim and num_treatments must be >= 1")
        if any(s < 1 for s in self.trunk_layer_sizes + self.head_layer_sizes):
            raise ValidationError("layer sizes must be >= 1")
        if not self.head_layer_sizes or self.head_layer_sizes[-1] != 1:
            raise ValidationError("the last head layer must have size 1")
        if self.activation != "relu":
            raise ValidationError("only the 'relu' activation is supported")
        if self.cost_loss_kind not in ("binary", "regression"):
            raise ValidationError("cost_loss_kind must be 'binary' or 'regression'")

    def to_dict(self):
        d = asdict(self)
        d["trunk_layer_sizes"] = list(self.trunk_layer_sizes)
        d["head_layer_sizes"] = list(self.head_layer_sizes)
        return d


@dataclass(eq=False)
class ModelParams:
    """All weights. Trunk layer l: ``trunk.l.W`` (in, out), ``trunk.l.b`` (out,).
    Head layer l for all 2K heads at once: ``head.l.W`` (2K, in, out),
    ``head.l.b`` (2K, out); heads 0..K-1 predict response, K..2K-1 cost."""

    config: ModelConfig
    arrays: dict

    def copy(self):
        return ModelParams(self.config, {k: a.copy() for k, a in self.arrays.items()})

    def __getitem__(self, key):
        return self.arrays[key]


def _layer_dims(config):
    trunk = [config.feature_dim, *config.trunk_layer_sizes]
    head = [trunk[-1], *config.head_layer_sizes]
    return trunk, head


def init_params(config, seed):
    """He (MSRA) normal weights, std sqrt(2 / fan_in); zero biases."""
    rng = stream(seed, "init_params")
    trunk, head = _layer_dims(config)
    H = 2 * config.num_treatments
    arrays = {}
    for l, (i, o) in enumerate(zip(trunk[:-1], trunk[1:])):
        arrays[f"trunk.{l}.W"] = rng.standard_normal((i, o)) * np.sqrt(2.0 / i)
        arrays[f"trunk.{l}.b"] = np.zeros(o)
    for l, (i, o) in enumerate(zip(head[:-1], head[1:])):
        arrays[f"head.{l}.W"] = rng.standard_normal((H, i, o)) * np.sqrt(2.0 / i)
        arrays[f"head.{l}.b"] = np.zeros((H, o))
    return ModelParams(config, arrays)


def _softplus(x):
    return np.logaddexp(0.0, x)


def forward(params, features, return_cache=False):
    cfg = params.config
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != cfg.feature_dim:
        raise ShapeMismatch(f"expected features of shape (B, {cfg.feature_dim}), got {X.shape}")
    A = params.arrays
    n_trunk = len(cfg.trunk_layer_sizes)
    n_head = len(cfg.head_layer_sizes)
    acts = [X]
    a = X
    for l in range(n_trunk):
        a = np.maximum(a @ A[f"trunk.{l}.W"] + A[f"trunk.{l}.b"], 0.0)
        acts.append(a)
    # (B, in) @ (H, in, out) broadcasts to (H, B, out)
    for l in range(n_head):
        z = np.matmul(a, A[f"head.{l}.W"]) + A[f"head.{l}.b"][:, None, :]
        a = np.maximum(z, 0.0) if l < n_head - 1 else z
        acts.append(a)
    logits = a[:, :, 0]
    K = cfg.num_treatments
    with np.errstate(invalid="ignore", over="ignore"):
        v = expit(logits[:K]).T
        if cfg.cost_loss_kind == "binary":
            c = expit(logits[K:]).T
        else:
            c = _softplus(logits[K:]).T
    if not (np.all(np.isfinite(v)) and np.all(np.isfinite(c))):
        raise NonFiniteActivation("non-finite model output")
    pred = PredictionPair(np.ascontiguousarray(v), np.ascontiguousarray(c))
    if return_cache:
        return pred, {"acts": acts, "logits": logits}
    return pred


@dataclass(frozen=True, eq=False)
class PredGrads:
    """Gradient of a scalar loss with respect to the B x K outputs v and c."""

    grad_v: np.ndarray
    grad_c: np.ndarray


def _bce(p, y):
    p = np.clip(p, PROB_CLIP, 1 - PROB_CLIP)
    loss = -(y * np.log(p) + (1 - y) * np.log1p(-p))
    grad = (p - y) / (p * (1 - p))
    return loss, grad


def sl_loss(pred, batch, cost_loss_kind="regression"):
    """Mean over the batch of CE(v[i, t_i], y_i) + L_C(c[i, t_i], z_i).

    Returns ``(loss, PredGrads)``; gradients are nonzero only in each row's
    observed-treatment column.
    """
    v, c = pred.v, pred.c
    B = len(batch)
    if v.shape[0] != B:
        raise ShapeMismatch("prediction and batch sizes differ")
    rows = np.arange(B)
    t = np.asarray(batch.treatment)
    y = np.asarray(batch.response, dtype=np.float64)
    z = np.asarray(batch.cost, dtype=np.float64)
    lv, gv = _bce(v[rows, t], y)
    if cost_loss_kind == "binary":
        lc, gc = _bce(c[rows, t], z)
    elif cost_loss_kind == "regression":
        diff = c[rows, t] - z
        lc, gc = diff**2, 2 * diff
    else:
        raise ValidationError(f"unknown cost_loss_kind {cost_loss_kind!r}")
    grad_v = np.zeros_like(v)
    grad_c = np.zeros_like(c)
    grad_v[rows, t] = gv / B
    grad_c[rows, t] = gc / B
    return float(np.mean(lv + lc)), PredGrads(grad_v, grad_c)


def trace_term(m, g):
    """Tr[m^T g], the linear term whose gradient in m is g."""
    return float(np.trace(m.T @ g))


def surrogate_loss(sl_value, pred, q_grads, lam):
    return (sl_value - lam * trace_term(pred.v, q_grads.grad_v)
            - lam * trace_term(pred.c, q_grads.grad_c))


def surrogate_grads(pred, sl_grads, q_grads, lam):
    """dL_S/d(v, c) = dL_SL/d(v, c) - lam * G, with G held constant."""
    if q_grads is None or lam == 0:
        return PredGrads(sl_grads.grad_v.copy(), sl_grads.grad_c.copy())
    if q_grads.grad_v.shape != sl_grads.grad_v.shape or q_grads.grad_c.shape != sl_grads.grad_c.shape:
        raise ShapeMismatch("gradient shapes differ")
    return PredGrads(sl_grads.grad_v - lam * q_grads.grad_v,
                     sl_grads.grad_c - lam * q_grads.grad_c)


def backward(params, features, grads, cache=None):
    """Reverse-mode gradients of all weights given dLoss/dv and dLoss/dc."""
    cfg = params.config
    if cache is None:
        _, cache = forward(params, features, return_cache=True)
    A = params.arrays
    acts, logits = cache["acts"], cache["logits"]
    K = cfg.num_treatments
    n_trunk = len(cfg.trunk_layer_sizes)
    n_head = len(cfg.head_layer_sizes)
    gv, gc = grads.grad_v, grads.grad_c
    if gv.shape != (acts[0].shape[0], K) or gc.shape != gv.shape:
        raise ShapeMismatch("output gradient shape does not match (B, K)")

    sv = expit(logits[:K])
    dlogit = np.empty_like(logits)
    dlogit[:K] = gv.T * sv * (1 - sv)
    sc = expit(logits[K:])
    if cfg.cost_loss_kind == "binary":
        dlogit[K:] = gc.T * sc * (1 - sc)
    else:
        dlogit[K:] = gc.T * sc
    out = {}
    dz = dlogit[:, :, None]
    for l in range(n_head - 1, -1, -1):
        a_prev = acts[n_trunk + l]  # (B, in) for l == 0 else (H, B, in)
        W = A[f"head.{l}.W"]
        out[f"head.{l}.b"] = dz.sum(axis=1)
        if l == 0:
            out[f"head.{l}.W"] = np.matmul(a_prev.T, dz)
            da = np.matmul(dz, W.transpose(0, 2, 1)).sum(axis=0)
        else:
            out[f"head.{l}.W"] = np.matmul(a_prev.transpose(0, 2, 1), dz)
            da = np.matmul(dz, W.transpose(0, 2, 1))
            dz = da * (a_prev > 0)
    for l in range(n_trunk - 1, -1, -1):
        dz = da * (acts[l + 1] > 0)
        out[f"trunk.{l}.W"] = acts[l].T @ dz
        out[f"trunk.{l}.b"] = dz.sum(axis=0)
        da = dz @ A[f"trunk.{l}.W"].T
    return {k: out[k] for k in A}


# ---------------------------------------------------------------------------
# Adam

@dataclass
class AdamState:
    m: dict
    s: dict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, arrays, **kw):
        return cls({k: np.zeros_like(a) for k, a in arrays.items()},
                   {k: np.zeros_like(a) for k, a in arrays.items()}, **kw)


def adam_step(params, grads, state, lr):
    """One bias-corrected Adam update. ``params`` is a ModelParams or an
    array dict; the same kind is returned along with the new state."""
    arrays = params.arrays if isinstance(params, ModelParams) else params
    if set(grads) != set(arrays):
        raise ShapeMismatch("gradient keys differ from parameter keys")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new, m_new, s_new = {}, {}, {}
    for k, w in arrays.items():
        g = grads[k]
        m = b1 * state.m[k] + (1 - b1) * g
        s = b2 * state.s[k] + (1 - b2) * g * g
        mhat = m / (1 - b1**t)
        shat = s / (1 - b2**t)
        new[k] = w - lr * mhat / (np.sqrt(shat) + state.eps)
        m_new[k], s_new[k] = m, s
    st = AdamState(m_new, s_new, t, b1, b2, state.eps)
    if isinstance(params, ModelParams):
        return ModelParams(params.config, new), st
    return new, st


# ---------------------------------------------------------------------------
# training

@dataclass(frozen=True)
class TrainConfig:
    lam: float = 0.0
    learning_rate: float = 1e-3
    epochs: int = 10
    batch_size: int = 10000
    budget_range: tuple = (1.8, 2.2)
    grad_estimator: str = "nes"
    fd: FdParams = field(default_factory=FdParams)
    nes: NesParams = field(default_factory=NesParams)
    q_eval: QEvalParams = field(
        default_factory=lambda: QEvalParams(total_budget=0.0, raise_infeasible=False)
    )
    estimate_cost_grad: bool = True
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.budget_range
        if lo > hi:
            raise ValidationError("budget_range must satisfy lo <= hi")
        if self.lam < 0:
            raise ValidationError("lam must be >= 0")
        if self.grad_estimator not in ("fd", "nes"):
            raise ValidationError("grad_estimator must be 'fd' or 'nes'")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValidationError("epochs must be >= 0 and batch_size >= 1")


def _step_estimator_params(cfg, step, wrt):
    key = 0 if wrt == "v" else 1
    if cfg.grad_estimator == "fd":
        return replace(cfg.fd, seed=derive_seed(cfg.seed, "fd_mask", step, key))
    return replace(cfg.nes, seed=derive_seed(cfg.seed, "nes", step, key))


def train_step(params, adam, batch, model_cfg, train_cfg, step):
    """Forward, optional Q-gradient estimation, surrogate backward, Adam.

    Returns ``(params, adam, record)``.
    """
    pred, cache = forward(params, batch.features, return_cache=True)
    loss, g_sl = sl_loss(pred, batch, model_cfg.cost_loss_kind)
    rec = {"step": step, "sl_loss": loss, "q": None, "alpha_final": None,
           "budget": None, "evaluations_used": 0, "clamped": 0}
    q_grads = None
    if train_cfg.lam > 0:
        B = len(batch)
        lo, hi = train_cfg.budget_range
        budget = float(stream(train_cfg.seed, "budget", step).uniform(lo, hi))
        qf = QFunction(batch, train_cfg.q_eval.with_budget(budget * B))
        q, alpha = qf.result(pred.v, pred.c)
        wrts = ("v", "c") if train_cfg.estimate_cost_grad else ("v",)
        gv = np.zeros_like(pred.v)
        gc = np.zeros_like(pred.c)
        clamped = 0
        for wrt in wrts:
            est = estimate(qf, pred, train_cfg.grad_estimator,
                           _step_estimator_params(train_cfg, step, wrt), wrt)
            if wrt == "v":
                gv = est.grad_v
            else:
                gc = est.grad_c
            clamped += est.clamped
        q_grads = GradEstimate(gv, gc, qf.calls, clamped)
        rec.update(q=float(q), alpha_final=float(alpha), budget=budget,
                   evaluations_used=int(qf.calls), clamped=int(clamped))
    g_pred = surrogate_grads(pred, g_sl, q_grads, train_cfg.lam)
    grads = backward(params, batch.features, g_pred, cache=cache)
    params, adam = adam_step(params, grads, adam, train_cfg.learning_rate)
    return params, adam, rec


def train(dataset, model_cfg, train_cfg, params=None, on_step=None, on_epoch=None):
    """Mini-batch training loop.

    With ``lam == 0`` this is plain S-Learner training and Q is never
    evaluated. ``on_step(record)`` is called after each step and
    ``on_epoch(epoch, params, adam)`` after each epoch (checkpointing hook).
    Returns ``(params, log)`` where ``log`` is the list of step records.
    """
    if dataset.feature_dim < 1:
        raise ValidationError("training needs features (d >= 1)")
    if dataset.feature_dim != model_cfg.feature_dim:
        raise ShapeMismatch("dataset feature_dim differs from the model config")
    if dataset.num_treatments != model_cfg.num_treatments:
        raise ShapeMismatch("dataset num_treatments differs from the model config")
    if params is None:
        params = init_params(model_cfg, train_cfg.seed)
    adam = AdamState.zeros_like(params.arrays)
    log = []
    step = 0
    for epoch in range(train_cfg.epochs):
        order = batch_indices(len(dataset), train_cfg.batch_size,
                              derive_seed(train_cfg.seed, "shuffle", epoch))
        for idx in order:
            batch = dataset.as_batch(idx)
            try:
                params, adam, rec = train_step(params, adam, batch, model_cfg, train_cfg, step)
            except NonFiniteActivation as exc:
                rec = {"step": step, "epoch": epoch, "error": str(exc)}
                log.append(rec)
                if on_step:
                    on_step(rec)
                raise
            rec["epoch"] = epoch
            log.append(rec)
            if on_step:
                on_step(rec)
            step += 1
        if on_epoch:
            on_epoch(epoch, params, adam)
    return params, log


def predict(params, features, batch_size=65536):
    """Forward pass in chunks; returns a PredictionPair for all rows."""
    vs, cs = [], []
    for i in range(0, len(features), batch_size):
        p = forward(params, features[i:i + batch_size])
        vs.append(p.v)
        cs.append(p.c)
    return PredictionPair(np.concatenate(vs), np.concatenate(cs))


def gradient_ascent_on_matrix(v0, c, batch, q_params, nes_params, steps, lr):
    """Maximize Q over the matrix v directly with NES gradients and Adam.

    v is clamped to [0, 1] after every step; c stays fixed. Step k uses NES
    directions from sub-stream k of ``nes_params.seed``. Returns
    ``(v_final, q_trace)`` with ``len(q_trace) == steps + 1``.
    """
    v = np.array(v0, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    qf = QFunction(batch, q_params)
    trace = [qf(v, c)]
    state = AdamState.zeros_like({"v": v})
    for k in range(steps):
        p = replace(nes_params, seed=derive_seed(nes_params.seed, "nes", k))
        est = estimate_grad_nes(qf, PredictionPair(v, c), p, "v")
        new, state = adam_step({"v": v}, {"v": -est.grad_v}, state, lr)
        v = np.clip(new["v"], 0.0, 1.0)
        trace.append(qf(v, c))
    return v, trace
