"""Offline policy-evaluation metrics on RCT data.

``eom_at_budget`` reports the matched per-capita response at a target
per-capita cost. ``build_cost_curve`` / ``aucc`` score a ranking in the
two-treatment setting: for each treated fraction rho the top-rho users are
treated and everyone else is left in control, and the policy's incremental
value and cost over treating nobody are estimated by arm matching,

    dV(rho) = sum_{top, treated} y / n_treated - sum_{top, control} y / n_control

(and likewise for cost). The area under the (dC, dV) curve is divided by
``max dC * max dV``, so random targeting scores about 0.5. Values are only
comparable within this implementation.
"""
import hashlib
import json
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .allocator import QEvalParams, evaluate_q
from .data import atomic_write_text
from .errors import DegenerateCurve, NotTwoTreatments, ShapeMismatch, ValidationError

DEFAULT_THRESHOLDS = 100


class EomResult(NamedTuple):
    response: float
    cost: float
    alpha: float


def eom_at_budget(pred, batch, per_capita_budget, q_params=None):
    """(V, C, alpha) of the bisection solution at ``per_capita_budget``.

    ``q_params`` supplies the bisection settings; its budget is replaced.
    """
    B = len(batch)
    base = q_params or QEvalParams(total_budget=0.0)
    params = base.with_budget(per_capita_budget * B)
    r = evaluate_q(pred, batch, params)
    C = next(p.per_capita_cost for p in reversed(r.trace) if p.alpha == r.alpha)
    return EomResult(r.q, C, r.alpha)


@dataclass(frozen=True, eq=False)
class CostCurve:
    fractions: np.ndarray
    costs: np.ndarray
    values: np.ndarray

    def __len__(self):
        return len(self.fractions)


def build_cost_curve(scores, rct, n_thresholds=DEFAULT_THRESHOLDS):
    """Incremental cost/value of treating the top-rho users, rho = 0, 1/n, ..., 1.

    Ties in ``scores`` keep dataset order. Control is treatment index 0,
    treated is index 1.
    """
    if rct.num_treatments != 2:
        raise NotTwoTreatments(f"cost curves need K = 2, got K = {rct.num_treatments}")
    scores = np.asarray(scores, dtype=np.float64)
    n = len(rct)
    if scores.shape != (n,):
        raise ShapeMismatch("one score per user is required")
    if not np.all(np.isfinite(scores)):
        raise ValidationError("scores must be finite")
    treated = np.asarray(rct.treatment) == 1
    n_t, n_c = int(treated.sum()), int((~treated).sum())
    if n_t == 0 or n_c == 0:
        raise ValidationError("both arms need at least one user")
    order = np.argsort(-scores, kind="stable")
    w = np.where(treated, 1.0 / n_t, -1.0 / n_c)[order]
    y = np.asarray(rct.response)[order]
    z = np.asarray(rct.cost)[order]
    cum_v = np.concatenate([[0.0], np.cumsum(w * y)])
    cum_c = np.concatenate([[0.0], np.cumsum(w * z)])
    fractions = np.linspace(0.0, 1.0, n_thresholds + 1)
    cut = np.ceil(np.round(fractions * n, 9)).astype(np.int64)
    return CostCurve(fractions, cum_c[cut], cum_v[cut])


def aucc(curve):
    """Trapezoidal area under (cost, value), over ``max cost * max value``."""
    if len(curve) < 2:
        raise DegenerateCurve("need at least two points")
    x, y = curve.costs, curve.values
    if np.all(x == x[0]):
        raise DegenerateCurve("all curve costs are equal")
    xmax, ymax = float(np.max(x)), float(np.max(y))
    if xmax <= 0 or ymax <= 0:
        raise DegenerateCurve("curve never reaches positive cost and value")
    area = float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(x)))
    return area / (xmax * ymax)


def curve_from_points(points):
    pts = np.asarray(points, dtype=np.float64)
    return CostCurve(np.linspace(0, 1, len(pts)), pts[:, 0], pts[:, 1])


def write_cost_curve(curve, path):
    lines = ["fraction,incremental_cost,incremental_value"]
    for f, c, v in zip(curve.fractions, curve.costs, curve.values):
        lines.append(f"{float(f)!r},{float(c)!r},{float(v)!r}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def config_hash(config):
    """sha256 over the canonical JSON form of a config mapping."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def summary_record(name, value, config):
    v = float(value)
    return {"metric": name, "value": v if math.isfinite(v) else None,
            "config_hash": config_hash(config)}
