"""Command-line entry point.

    budgetalloc <command> --config FILE [--seed N] [--out DIR] [--strict-determinism]

Commands: gen-synthetic, train, eval, ascent-demo, grad-check. Configs are
YAML mappings; every key has a default except ``seed``. The whole config is
checked (including referenced files) before any output is written.

Exit codes: 0 success, 1 invalid config or input, 2 failure while running.
"""
import argparse
import contextlib
import copy
import json
import os
import sys

import numpy as np
import yaml

from .allocator import PredictionPair, QEvalParams, QFunction, cost_value_curve, write_curve
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    CRITEO_SCHEMA,
    FeatureTransform,
    Schema,
    atomic_write_text,
    load_dataset,
    split_indices,
    standardize_features,
    write_dataset,
)
from .errors import BudgetAllocError, ConfigError, ValidationError
from .gradest import FdParams, NesParams, cosine_similarity, estimate_grad_fd, estimate_grad_nes
from .metrics import aucc, build_cost_curve, config_hash, eom_at_budget, write_cost_curve
from .rng import derive_seed
from .slearner import ModelConfig, TrainConfig, gradient_ascent_on_matrix, predict, train
from .synthgen import (
    _check_k,
    generate_featured,
    generate_ground_truth,
    read_ground_truth,
    sample_rct,
    write_ground_truth,
)

DEFAULTS = {
    "seed": None,
    "output_dir": None,
    "dataset": {
        "source": "synthetic",      # synthetic | path
        "kind": "featureless",      # featureless | featured (synthetic only)
        "n": 10000,
        "num_treatments": 4,
        "feature_dim": 16,
        "path": None,
        "schema": None,             # mapping of Schema fields, or "criteo"
        "ground_truth": None,       # sidecar written by gen-synthetic
        "train_fraction": None,
    },
    "model": {
        "trunk_layer_sizes": [512, 256, 128, 64],
        "head_layer_sizes": [32, 1],
        "cost_loss_kind": "regression",
    },
    "train": {
        "lam": 0.0,
        "learning_rate": 1e-3,
        "epochs": 10,
        "pretrain_epochs": 0,
        "batch_size": 10000,
        "budget_range": [1.8, 2.2],
        "grad_estimator": "nes",
        "estimate_cost_grad": True,
        "fd": {"h": 3e-4, "num_entries": 4000},
        "nes": {"sigma": 1e-3, "num_directions": 2000},
    },
    "q_eval": {"max_iters": 40, "alpha_max": 10.0, "tolerance": None, "n_ary": 1},
    "eval": {
        "budget": 2.0,
        "predictor": "model",       # model | ground_truth
        "split": "test",            # test | all
        "checkpoint": None,
        "aucc": False,
        "n_thresholds": 100,
        "curve_points": 41,
    },
    "ascent": {
        "budget": 2.0,
        "steps": 100,
        "lr": 0.005,
        "nes": {"sigma": 1e-3, "num_directions": 2000},
        "curve_points": 41,
    },
    "grad_check": {
        "budget": 2.0,
        "num_directions": [100, 500, 2000],
        "runs": 5,
        "sigma": 1e-3,
        "reference_h": 3e-4,
        "reference_entries": None,  # None means every entry (B * K)
    },
}

# sub-mappings whose keys are free-form
_OPEN = {("dataset", "schema")}


def _merge(base, override, path=()):
    out = copy.deepcopy(base)
    for key, val in override.items():
        where = path + (key,)
        if key not in base:
            raise ConfigError(f"unknown config key {'.'.join(where)}")
        if isinstance(base[key], dict) and where not in _OPEN:
            if not isinstance(val, dict):
                raise ConfigError(f"{'.'.join(where)} must be a mapping")
            out[key] = _merge(base[key], val, where)
        else:
            out[key] = val
    return out


def load_config(path, seed=None, out=None):
    """Read a YAML config and fill in defaults. CLI overrides win."""
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        try:
            raw = yaml.safe_load(fh) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping at the top level")
    cfg = _merge(DEFAULTS, raw)
    if seed is not None:
        cfg["seed"] = seed
    if out is not None:
        cfg["output_dir"] = out
    return cfg


# ---------------------------------------------------------------------------
# validation: builds every typed object a command needs, touches no outputs

@contextlib.contextmanager
def _validating():
    # bad value types surface as config errors, not tracebacks
    try:
        yield
    except ValidationError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"invalid config value: {exc}") from None


def _need(cond, msg):
    if not cond:
        raise ConfigError(msg)


def _schema(ds_cfg):
    s = ds_cfg["schema"]
    if s is None:
        return Schema()
    if s == "criteo":
        return CRITEO_SCHEMA
    _need(isinstance(s, dict), "dataset.schema must be a mapping or 'criteo'")
    return Schema.from_dict(s)


def _q_params(cfg, **kw):
    q = cfg["q_eval"]
    return QEvalParams(total_budget=0.0, max_iters=int(q["max_iters"]),
                       alpha_max=float(q["alpha_max"]), tolerance=q["tolerance"],
                       n_ary=int(q["n_ary"]), **kw)


def _validate_common(cfg):
    seed = cfg["seed"]
    _need(isinstance(seed, int) and not isinstance(seed, bool) and seed >= 0,
          "seed must be a non-negative integer")
    _need(cfg["output_dir"] is not None, "an output directory is required (--out or output_dir)")
    ds = cfg["dataset"]
    _need(ds["source"] in ("synthetic", "path"), "dataset.source must be 'synthetic' or 'path'")
    if ds["source"] == "synthetic":
        _need(ds["kind"] in ("featureless", "featured"),
              "dataset.kind must be 'featureless' or 'featured'")
        _need(isinstance(ds["n"], int) and ds["n"] >= 1, "dataset.n must be a positive integer")
        _check_k(ds["num_treatments"])
        if ds["kind"] == "featured":
            _need(isinstance(ds["feature_dim"], int) and ds["feature_dim"] >= 1,
                  "dataset.feature_dim must be a positive integer")
    else:
        _need(ds["path"] is not None and os.path.isfile(ds["path"]),
              f"dataset.path does not exist: {ds['path']}")
        _schema(ds)
    if ds["ground_truth"] is not None:
        _need(os.path.isfile(ds["ground_truth"]),
              f"dataset.ground_truth does not exist: {ds['ground_truth']}")
    tf = ds["train_fraction"]
    _need(tf is None or (isinstance(tf, (int, float)) and 0 < tf < 1),
          "dataset.train_fraction must lie in (0, 1)")
    _q_params(cfg)


def _validate_train(cfg):
    ds, tr = cfg["dataset"], cfg["train"]
    _need(not (ds["source"] == "synthetic" and ds["kind"] == "featureless"),
          "training needs features: use dataset.kind 'featured' or a file with features")
    _need(isinstance(tr["pretrain_epochs"], int) and tr["pretrain_epochs"] >= 0,
          "train.pretrain_epochs must be a non-negative integer")
    _model_config(cfg, 1, 2)
    _train_config(cfg, cfg["seed"])


def _model_config(cfg, d, K):
    m = cfg["model"]
    return ModelConfig(feature_dim=d, num_treatments=K,
                       trunk_layer_sizes=m["trunk_layer_sizes"],
                       head_layer_sizes=m["head_layer_sizes"],
                       cost_loss_kind=m["cost_loss_kind"])


def _train_config(cfg, seed, lam=None, epochs=None):
    tr = cfg["train"]
    lo, hi = tr["budget_range"]
    return TrainConfig(
        lam=float(tr["lam"] if lam is None else lam),
        learning_rate=float(tr["learning_rate"]),
        epochs=int(tr["epochs"] if epochs is None else epochs),
        batch_size=int(tr["batch_size"]),
        budget_range=(float(lo), float(hi)),
        grad_estimator=tr["grad_estimator"],
        fd=FdParams(h=float(tr["fd"]["h"]), num_entries=int(tr["fd"]["num_entries"])),
        nes=NesParams(sigma=float(tr["nes"]["sigma"]),
                      num_directions=int(tr["nes"]["num_directions"])),
        q_eval=_q_params(cfg, raise_infeasible=False),
        estimate_cost_grad=bool(tr["estimate_cost_grad"]),
        seed=seed,
    )


def _validate_eval(cfg, checkpoint):
    ev = cfg["eval"]
    _need(ev["predictor"] in ("model", "ground_truth"),
          "eval.predictor must be 'model' or 'ground_truth'")
    _need(ev["split"] in ("test", "all"), "eval.split must be 'test' or 'all'")
    _need(float(ev["budget"]) >= 0, "eval.budget must be non-negative")
    _need(int(ev["curve_points"]) >= 1 and int(ev["n_thresholds"]) >= 1,
          "eval.curve_points and eval.n_thresholds must be >= 1")
    if ev["split"] == "test":
        _need(cfg["dataset"]["train_fraction"] is not None,
              "eval.split 'test' needs dataset.train_fraction")
    if ev["predictor"] == "model":
        _need(checkpoint is not None, "eval with a model needs --checkpoint or eval.checkpoint")
        _need(os.path.isfile(checkpoint), f"checkpoint not found: {checkpoint}")
    else:
        ds = cfg["dataset"]
        _need(ds["source"] == "synthetic" or ds["ground_truth"] is not None,
              "ground-truth predictor needs a synthetic dataset or dataset.ground_truth")


def _validate_featureless(cfg, section):
    ds = cfg["dataset"]
    _need(ds["source"] == "synthetic" and ds["kind"] == "featureless",
          f"{section} runs on the featureless synthetic dataset")


def _validate_ascent(cfg):
    _validate_featureless(cfg, "ascent-demo")
    a = cfg["ascent"]
    _need(isinstance(a["steps"], int) and a["steps"] >= 0, "ascent.steps must be >= 0")
    _need(float(a["lr"]) > 0, "ascent.lr must be positive")
    _need(int(a["nes"]["num_directions"]) >= 2 and int(a["nes"]["num_directions"]) % 2 == 0,
          "ascent.nes.num_directions must be an even integer >= 2")
    _need(float(a["nes"]["sigma"]) > 0, "ascent.nes.sigma must be positive")


def _validate_grad_check(cfg):
    _validate_featureless(cfg, "grad-check")
    g = cfg["grad_check"]
    nd = g["num_directions"]
    _need(isinstance(nd, list) and nd and all(isinstance(x, int) and x >= 2 and x % 2 == 0
                                               for x in nd),
          "grad_check.num_directions must be a list of even integers >= 2")
    _need(isinstance(g["runs"], int) and g["runs"] >= 1, "grad_check.runs must be >= 1")
    _need(float(g["sigma"]) > 0 and float(g["reference_h"]) > 0,
          "grad_check.sigma and reference_h must be positive")
    n, K = cfg["dataset"]["n"], cfg["dataset"]["num_treatments"]
    fe = g["reference_entries"]
    _need(fe is None or (isinstance(fe, int) and 1 <= fe <= n * K),
          "grad_check.reference_entries must lie in 1..B*K")


# ---------------------------------------------------------------------------
# helpers

def _synthetic(cfg):
    """(dataset, ground truth) for a synthetic source."""
    ds, seed = cfg["dataset"], cfg["seed"]
    if ds["kind"] == "featured":
        return generate_featured(ds["n"], ds["num_treatments"], ds["feature_dim"], seed)
    gt = generate_ground_truth(ds["n"], ds["num_treatments"], seed)
    return sample_rct(gt, seed), gt


def _dataset(cfg):
    ds = cfg["dataset"]
    if ds["source"] == "synthetic":
        data, gt = _synthetic(cfg)
    else:
        data, gt = load_dataset(ds["path"], _schema(ds)), None
    if ds["ground_truth"] is not None:
        gt = read_ground_truth(ds["ground_truth"])
        if gt.v_gt.shape != (len(data), data.num_treatments):
            raise ValidationError("ground-truth sidecar does not match the dataset shape")
    return data, gt


def _split(cfg, n):
    tf = cfg["dataset"]["train_fraction"]
    if tf is None:
        idx = np.arange(n)
        return idx, idx
    return split_indices(n, tf, cfg["seed"])


def _hash(cfg):
    """Config hash without output locations, so reruns elsewhere match."""
    cfg = copy.deepcopy(cfg)
    cfg["output_dir"] = None
    cfg["eval"]["checkpoint"] = None
    return config_hash(cfg)


def _dump(obj):
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _prepare_out(cfg):
    os.makedirs(cfg["output_dir"], exist_ok=True)
    return cfg["output_dir"]


def _alpha_grid(cfg, points):
    return np.linspace(0.0, float(cfg["q_eval"]["alpha_max"]), int(points))


def _uplift_scores(pred):
    """Incremental value per unit incremental cost of treatment 2 over 1."""
    dv = pred.v[:, 1] - pred.v[:, 0]
    dc = pred.c[:, 1] - pred.c[:, 0]
    return dv / np.maximum(dc, 1e-6)


# ---------------------------------------------------------------------------
# commands

def cmd_gen_synthetic(cfg):
    with _validating():
        _validate_common(cfg)
        _need(cfg["dataset"]["source"] == "synthetic",
              "gen-synthetic needs dataset.source 'synthetic'")
    data, gt = _synthetic(cfg)
    out = _prepare_out(cfg)
    schema = Schema(feature_columns=tuple(f"x{j}" for j in range(data.feature_dim)))
    write_dataset(data, os.path.join(out, "dataset.csv"), schema)
    write_ground_truth(gt, os.path.join(out, "ground_truth.csv"))
    manifest = {
        "command": "gen-synthetic",
        "config_hash": _hash(cfg),
        "rows": len(data),
        "num_treatments": data.num_treatments,
        "feature_dim": data.feature_dim,
        "files": ["dataset.csv", "ground_truth.csv"],
        "schema": {"treatment": schema.treatment, "response": schema.response,
                   "cost": schema.cost, "feature_columns": list(schema.feature_columns)},
    }
    atomic_write_text(os.path.join(out, "manifest.json"), _dump(manifest))
    return manifest


def cmd_train(cfg):
    with _validating():
        _validate_common(cfg)
        _validate_train(cfg)
    data, _ = _dataset(cfg)
    train_idx, _ = _split(cfg, len(data))
    transform, train_ds = standardize_features(data.subset(train_idx))
    model_cfg = _model_config(cfg, train_ds.feature_dim, train_ds.num_treatments)
    seed = cfg["seed"]
    tr = cfg["train"]
    # with pretraining: a lambda = 0 phase, then the configured lambda from there
    phases = []
    if tr["pretrain_epochs"] > 0:
        phases.append(("pretrain", _train_config(cfg, seed, lam=0.0,
                                                 epochs=tr["pretrain_epochs"])))
        phases.append(("main", _train_config(cfg, derive_seed(seed, "init_params", 1))))
    else:
        phases.append(("main", _train_config(cfg, seed)))

    out = _prepare_out(cfg)
    ckpt_path = os.path.join(out, "checkpoint.zip")
    log_path = os.path.join(out, "train_log.jsonl")
    chash = _hash(cfg)
    lines = []
    state = {"step": 0, "epochs_done": 0}

    def on_step(rec):
        rec = dict(rec, step=state["step"], phase=phase)
        lines.append(json.dumps(rec, sort_keys=True))
        state["step"] += 1

    def on_epoch(epoch, p, adam):
        state["epochs_done"] += 1
        meta = {"config_hash": chash, "transform": transform.to_dict(), "phase": phase,
                "epoch": epoch, "epochs_done": state["epochs_done"],
                "rng": {"seed": seed, "next_step": state["step"]}}
        # log first, so a checkpoint never refers to steps missing from the log
        atomic_write_text(log_path, "".join(line + "\n" for line in lines))
        save_checkpoint(ckpt_path, p, meta)

    params = None
    for phase, tcfg in phases:
        params, _ = train(train_ds, model_cfg, tcfg, params=params,
                          on_step=on_step, on_epoch=on_epoch)
    if params is not None and state["epochs_done"] == 0:
        on_epoch(-1, params, None)
    atomic_write_text(log_path, "".join(line + "\n" for line in lines))
    q_calls = sum(json.loads(line)["evaluations_used"] for line in lines)
    return {"steps": state["step"], "q_calls": q_calls, "config_hash": chash}


def cmd_eval(cfg, checkpoint=None):
    checkpoint = checkpoint or cfg["eval"]["checkpoint"]
    with _validating():
        _validate_common(cfg)
        _validate_eval(cfg, checkpoint)
    ev = cfg["eval"]
    data, gt = _dataset(cfg)
    _, test_idx = _split(cfg, len(data))
    if ev["split"] == "all":
        test_idx = np.arange(len(data))
    rct = data.subset(test_idx)
    train_hash = None
    if ev["predictor"] == "ground_truth":
        pred = PredictionPair(gt.v_gt[test_idx], gt.c_gt[test_idx])
    else:
        params, meta = load_checkpoint(checkpoint)
        if params.config.feature_dim != rct.feature_dim:
            raise ValidationError("checkpoint feature_dim differs from the dataset")
        transform = FeatureTransform.from_dict(meta["transform"])
        pred = predict(params, transform.apply(rct.features))
        train_hash = meta.get("config_hash")
    batch = rct.as_batch()
    res = eom_at_budget(pred, batch, float(ev["budget"]), _q_params(cfg))
    report = {
        "command": "eval",
        "predictor": ev["predictor"],
        "budget": float(ev["budget"]),
        "response": res.response,
        "cost": res.cost,
        "alpha": res.alpha,
        "rows": len(rct),
        "config_hash": _hash(cfg),
        "train_config_hash": train_hash,
    }
    out = _prepare_out(cfg)
    write_curve(cost_value_curve(pred, batch, _alpha_grid(cfg, ev["curve_points"])),
                os.path.join(out, "curve.csv"))
    if ev["aucc"]:
        curve = build_cost_curve(_uplift_scores(pred), rct, int(ev["n_thresholds"]))
        report["aucc"] = aucc(curve)
        write_cost_curve(curve, os.path.join(out, "cost_curve.csv"))
    atomic_write_text(os.path.join(out, "eval_report.json"), _dump(report))
    return report


def cmd_ascent_demo(cfg):
    with _validating():
        _validate_common(cfg)
        _validate_ascent(cfg)
    a, ds, seed = cfg["ascent"], cfg["dataset"], cfg["seed"]
    rct, gt = _synthetic(cfg)
    # the starting point is an independent draw from the same generator
    v0 = generate_ground_truth(ds["n"], ds["num_treatments"], seed, purpose="initial_v").v_gt
    c = gt.c_gt
    batch = rct.as_batch()
    qp = _q_params(cfg).with_budget(float(a["budget"]) * len(rct))
    nes = NesParams(sigma=float(a["nes"]["sigma"]), num_directions=int(a["nes"]["num_directions"]),
                    seed=derive_seed(seed, "nes"))
    v, trace = gradient_ascent_on_matrix(v0, c, batch, qp, nes, a["steps"], float(a["lr"]))
    out = _prepare_out(cfg)
    atomic_write_text(os.path.join(out, "ascent_trace.csv"),
                      "step,q\n" + "".join(f"{k},{q!r}\n" for k, q in enumerate(trace)))
    grid = _alpha_grid(cfg, a["curve_points"])
    write_curve(cost_value_curve(PredictionPair(v0, c), batch, grid),
                os.path.join(out, "curve_initial.csv"))
    write_curve(cost_value_curve(PredictionPair(v, c), batch, grid),
                os.path.join(out, "curve_final.csv"))
    report = {"command": "ascent-demo", "initial_q": float(trace[0]), "final_q": float(trace[-1]),
              "steps": a["steps"], "config_hash": _hash(cfg)}
    atomic_write_text(os.path.join(out, "ascent_report.json"), _dump(report))
    return report


def cmd_grad_check(cfg):
    with _validating():
        _validate_common(cfg)
        _validate_grad_check(cfg)
    g, ds, seed = cfg["grad_check"], cfg["dataset"], cfg["seed"]
    rct, gt = _synthetic(cfg)
    v = generate_ground_truth(ds["n"], ds["num_treatments"], seed, purpose="initial_v").v_gt
    pred = PredictionPair(v, gt.c_gt)
    qf = QFunction(rct.as_batch(), _q_params(cfg).with_budget(float(g["budget"]) * len(rct)))
    entries = g["reference_entries"] or v.size
    ref = estimate_grad_fd(qf, pred, FdParams(h=float(g["reference_h"]), num_entries=entries,
                                              seed=derive_seed(seed, "fd_mask")), "v")
    rows = []
    for N in g["num_directions"]:
        cos, evals = [], 0
        for r in range(g["runs"]):
            p = NesParams(sigma=float(g["sigma"]), num_directions=N,
                          seed=derive_seed(seed, "nes", N, r))
            est = estimate_grad_nes(qf, pred, p, "v")
            cos.append(cosine_similarity(est.grad_v, ref.grad_v))
            evals += est.evaluations_used
        rows.append({"num_directions": N, "cosine": cos, "median": float(np.median(cos)),
                     "evaluations_used": evals})
    # same seed twice must give the same estimate
    p = NesParams(sigma=float(g["sigma"]), num_directions=g["num_directions"][0],
                  seed=derive_seed(seed, "nes", g["num_directions"][0], 0))
    a1 = estimate_grad_nes(qf, pred, p, "v").grad_v
    a2 = estimate_grad_nes(qf, pred, p, "v").grad_v
    medians = [r["median"] for r in rows]
    report = {
        "command": "grad-check",
        "reference": {"method": "fd", "num_entries": int(entries), "h": float(g["reference_h"]),
                      "evaluations_used": ref.evaluations_used,
                      "nonzero": int(np.count_nonzero(ref.grad_v))},
        "nes": rows,
        "medians_strictly_increasing": bool(np.all(np.diff(medians) > 0)),
        "self_similarity": cosine_similarity(a1, a2),
        "config_hash": _hash(cfg),
    }
    out = _prepare_out(cfg)
    atomic_write_text(os.path.join(out, "grad_check.json"), _dump(report))
    return report


COMMANDS = {
    "gen-synthetic": cmd_gen_synthetic,
    "train": cmd_train,
    "eval": cmd_eval,
    "ascent-demo": cmd_ascent_demo,
    "grad-check": cmd_grad_check,
}


def build_parser():
    ap = argparse.ArgumentParser(prog="budgetalloc", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, metavar="PATH")
    ap.add_argument("--seed", type=int, default=None, metavar="N", help="override config seed")
    ap.add_argument("--out", default=None, metavar="DIR", help="output directory")
    ap.add_argument("--checkpoint", default=None, metavar="PATH", help="model for eval")
    ap.add_argument("--strict-determinism", action="store_true",
                    help="single-threaded numerics for byte-identical reruns")
    return ap


def _run(args):
    cfg = load_config(args.config, seed=args.seed, out=args.out)
    if args.command == "eval":
        return cmd_eval(cfg, args.checkpoint)
    return COMMANDS[args.command](cfg)


def main(argv=None):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        if args.strict_determinism:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=1):
                result = _run(args)
        else:
            result = _run(args)
    except ValidationError as exc:
        print(f"budgetalloc: error: {exc}", file=sys.stderr)
        return 1
    except (BudgetAllocError, OSError, ArithmeticError) as exc:
        print(f"budgetalloc: runtime error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(result, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
