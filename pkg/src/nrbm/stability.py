"""Two-stage (R)BM + lasso pipeline and feature-selection stability.

Stage 1 maps rows to hidden posteriors, stage 2 fits an l1-penalized
logistic regression on them.  Hidden-space weights are pulled back to the
input features with ``W @ w_hat`` so that selections from different
pipelines (and from a plain lasso) can be compared feature by feature.
"""

from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .data import DataMatrix, STREAM_PROTOCOL, bootstrap, rng_stream
from .errors import DegenerateError, DimError, NumericError
from .rbm import RbmParams, logit, sigmoid
from .train import TrainConfig, hidden_posteriors, train

log = logging.getLogger(__name__)

METHODS = ("lasso", "rbm+lasso", "nrbm+lasso")
Z_95 = 1.959963984540054


# ----------------------------------------------------------------------
# stage 2: l1-penalized logistic regression


@dataclass(frozen=True)
class LassoModel:
    weights: np.ndarray
    bias: float
    beta: float
    converged: bool = True
    iterations: int = 0

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        if w.ndim != 1:
            raise DimError("lasso weights must be a vector")
        if not np.all(np.isfinite(w)) or not math.isfinite(self.bias):
            raise NumericError("non-finite lasso parameters")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", float(self.bias))

    def decision(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.weights.size:
            raise DimError(f"{X.shape[-1]} features given, model has {self.weights.size}")
        return X @ self.weights + self.bias

    def predict_proba(self, X) -> np.ndarray:
        return sigmoid(self.decision(X))


def _mean_logloss(z, y):
    # -mean log p(y | z) for the logistic link
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def lasso_objective(X, y, weights, bias, beta) -> float:
    """(1/M) sum log p(y_m | x_m) - beta * ||w||_1  (to be maximized)."""
    z = np.asarray(X) @ weights + bias
    return -_mean_logloss(z, y) - beta * float(np.sum(np.abs(weights)))


def _soft_threshold(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def fit_lasso(
    X,
    y,
    beta: float = 0.001,
    max_iter: int = 10_000,
    tol: float = 1e-6,
    history: Optional[list] = None,
) -> LassoModel:
    """Maximize the l1-penalized mean log-likelihood by proximal gradient.

    Iterative soft-thresholding with backtracking, so every accepted step
    does not decrease the objective.  The bias is not penalized.  Stops when
    the gradient-mapping norm drops to ``tol`` or after ``max_iter`` steps.
    If ``history`` is a list, the objective after each step is appended.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise DimError("X must be M x D and y length M")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0/1")
    if beta < 0:
        raise ValueError("beta must be >= 0")
    M, D = X.shape
    base = np.clip(y.mean(), 1e-12, 1 - 1e-12)
    w = np.zeros(D)
    b = float(logit(base))

    def smooth(w, b):
        z = X @ w + b
        return _mean_logloss(z, y), z

    f, z = smooth(w, b)
    obj = f + beta * np.abs(w).sum()
    if history is not None:
        history.append(-obj)
    step = 1.0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        r = sigmoid(z) - y
        gw = X.T @ r / M
        gb = float(r.mean())
        while True:
            w_new = _soft_threshold(w - step * gw, step * beta)
            b_new = b - step * gb
            f_new, z_new = smooth(w_new, b_new)
            dw, db = w_new - w, b_new - b
            quad = f + gw @ dw + gb * db + (dw @ dw + db * db) / (2 * step)
            if f_new <= quad + 1e-15 * abs(f):
                break
            step *= 0.5
            if step < 1e-20:
                raise NumericError("lasso line search failed")
        obj_new = f_new + beta * np.abs(w_new).sum()
        if not math.isfinite(obj_new):
            raise NumericError("non-finite lasso objective")
        grad_map = math.sqrt(dw @ dw + db * db) / step
        w, b, f, z, obj = w_new, b_new, f_new, z_new, obj_new
        if history is not None:
            history.append(-obj)
        if grad_map <= tol:
            converged = True
            break
        step *= 1.5
    return LassoModel(w, b, beta, converged, it)


# ----------------------------------------------------------------------
# conjugated weights and selection


def conjugate_weights(rbm: RbmParams, lasso: LassoModel) -> np.ndarray:
    """Input-feature weights ``w_bar_n = sum_k w_hat_k * W[n, k]``."""
    if lasso.weights.size != rbm.n_hidden:
        raise DimError(
            f"lasso has {lasso.weights.size} weights but the RBM has {rbm.n_hidden} hidden units"
        )
    return rbm.W @ lasso.weights


@dataclass(frozen=True)
class FeatureSubset:
    indices: tuple
    source_replicate: int = 0

    @property
    def T(self) -> int:
        return len(self.indices)

    def as_set(self) -> frozenset:
        return frozenset(self.indices)


def select_top(weights, T: int, source_replicate: int = 0) -> FeatureSubset:
    """Indices of the T largest |weight| values, ties going to the lower index."""
    w = np.abs(np.asarray(weights, dtype=np.float64))
    if w.ndim != 1:
        raise DimError("weights must be a vector")
    if T > w.size:
        raise DimError(f"cannot select {T} of {w.size} features")
    if T < 0:
        raise ValueError("T must be >= 0")
    order = np.argsort(-w, kind="stable")[:T]
    return FeatureSubset(tuple(int(i) for i in order), source_replicate)


def _as_sets(subsets) -> list[frozenset]:
    out = []
    for s in subsets:
        out.append(s.as_set() if isinstance(s, FeatureSubset) else frozenset(int(i) for i in s))
    return out


def consistency_index(subsets, K_total: int) -> float:
    """Mean pairwise chance-corrected overlap (R*K - T^2) / (T*(K - T))."""
    sets = _as_sets(subsets)
    if len(sets) < 2:
        raise DegenerateError("consistency needs at least two subsets")
    T = len(sets[0])
    if any(len(s) != T for s in sets):
        raise ValueError("all subsets must have the same size")
    if any(i < 0 or i >= K_total for s in sets for i in s):
        raise DimError("subset index out of range")
    if T == 0 or T >= K_total:
        raise DegenerateError(f"consistency undefined for T={T}, K={K_total}")
    total = 0.0
    pairs = 0
    for i in range(len(sets) - 1):
        for j in range(i + 1, len(sets)):
            r = len(sets[i] & sets[j])
            total += (r * K_total - T * T) / (T * (K_total - T))
            pairs += 1
    return total / pairs


def jaccard_index(subsets) -> float:
    """Mean pairwise |S_i & S_j| / |S_i | S_j|."""
    sets = _as_sets(subsets)
    if len(sets) < 2:
        raise DegenerateError("Jaccard index needs at least two subsets")
    if any(len(s) == 0 for s in sets):
        raise DegenerateError("Jaccard index undefined for empty subsets")
    total = 0.0
    pairs = 0
    for i in range(len(sets) - 1):
        for j in range(i + 1, len(sets)):
            total += len(sets[i] & sets[j]) / len(sets[i] | sets[j])
            pairs += 1
    return total / pairs


# ----------------------------------------------------------------------
# classification metrics


@dataclass(frozen=True)
class ClassificationMetrics:
    sensitivity: float
    specificity: float
    precision: float
    f_measure: float
    auc: Optional[float]
    auc_ci_low: Optional[float]
    auc_ci_high: Optional[float]
    threshold: float = 0.5

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _average_ranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    ranks = np.empty(x.size)
    start = 0
    n = x.size
    while start < n:
        stop = start + 1
        while stop < n and xs[stop] == xs[start]:
            stop += 1
        ranks[order[start:stop]] = 0.5 * (start + stop + 1)
        start = stop
    return ranks


def auc_mann_whitney(scores, labels) -> tuple[float, float, float]:
    """AUC as the normalized Mann-Whitney U (ties count 1/2) with a 95% CI.

    The interval uses the Hanley-McNeil standard error of the AUC and is
    clipped to [0, 1].
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    pos = y == 1
    n1, n2 = int(pos.sum()), int((~pos).sum())
    if n1 == 0 or n2 == 0:
        raise DegenerateError("AUC needs both classes")
    ranks = _average_ranks(s)
    u = ranks[pos].sum() - n1 * (n1 + 1) / 2.0
    auc = u / (n1 * n2)
    q1 = auc / (2.0 - auc)
    q2 = 2.0 * auc * auc / (1.0 + auc)
    var = (auc * (1 - auc) + (n1 - 1) * (q1 - auc * auc) + (n2 - 1) * (q2 - auc * auc)) / (n1 * n2)
    se = math.sqrt(max(var, 0.0))
    return auc, max(0.0, auc - Z_95 * se), min(1.0, auc + Z_95 * se)


def _ratio(num, den):
    return num / den if den else 0.0


def classification_metrics(scores, labels, threshold: float = 0.5) -> ClassificationMetrics:
    """Confusion-matrix metrics at ``threshold`` plus Mann-Whitney AUC.

    A score at or above the threshold predicts the positive class.  Rates
    with an empty denominator are reported as 0.  With a single class the
    AUC fields are None (see :func:`auc_mann_whitney`).
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise DimError("scores and labels must be equal-length vectors")
    if not np.all(np.isin(y, (0, 1))):
        raise ValueError("labels must be 0/1")
    pred = s >= threshold
    tp = int(np.sum(pred & (y == 1)))
    fp = int(np.sum(pred & (y == 0)))
    fn = int(np.sum(~pred & (y == 1)))
    tn = int(np.sum(~pred & (y == 0)))
    sens = _ratio(tp, tp + fn)
    spec = _ratio(tn, tn + fp)
    prec = _ratio(tp, tp + fp)
    f = _ratio(2 * prec * sens, prec + sens)
    try:
        auc, lo, hi = auc_mann_whitney(s, y)
    except DegenerateError:
        log.warning("single-class labels; AUC not defined")
        auc = lo = hi = None
    return ClassificationMetrics(sens, spec, prec, f, auc, lo, hi, threshold)


# ----------------------------------------------------------------------
# bootstrap protocol


@dataclass
class StabilityReport:
    T: int
    consistency: float
    jaccard: float
    subsets: list
    K_total: int
    M_boot: int

    def to_dict(self) -> dict:
        return {
            "T": self.T,
            "consistency": self.consistency,
            "jaccard": self.jaccard,
            "K_total": self.K_total,
            "M_boot": self.M_boot,
            "subsets": [
                {"replicate": s.source_replicate, "indices": list(s.indices)} for s in self.subsets
            ],
        }


@dataclass
class Replicate:
    index: int
    rbm: Optional[RbmParams]
    lasso: LassoModel
    feature_weights: np.ndarray


@dataclass
class ProtocolResult:
    method: str
    reports: list
    replicates: list
    final_rbm: Optional[RbmParams]
    final_lasso: LassoModel
    metrics: Optional[ClassificationMetrics] = None
    settings: dict = field(default_factory=dict)

    def predict_proba(self, data) -> np.ndarray:
        x = data.values if isinstance(data, DataMatrix) else np.asarray(data, dtype=np.float64)
        if self.final_rbm is not None:
            x = hidden_posteriors(self.final_rbm, x)
        return self.final_lasso.predict_proba(x)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "settings": self.settings,
            "reports": [r.to_dict() for r in self.reports],
            "metrics": None if self.metrics is None else self.metrics.to_dict(),
        }


def thread_count() -> int:
    """Worker cap from NRBM_THREADS (0 or unset = one per CPU)."""
    raw = os.environ.get("NRBM_THREADS", "0").strip() or "0"
    n = int(raw)
    return n if n > 0 else (os.cpu_count() or 1)


def _replicate_seed(seed: int, index: int) -> int:
    return int(rng_stream(seed, STREAM_PROTOCOL, index).integers(0, 2**63 - 1))


def _run_replicate(train_data, method, index, seed, rbm_config, beta, lasso_opts) -> Replicate:
    sample = bootstrap(train_data.rows, index, seed)
    part = train_data.take(sample.row_indices)
    y = part.binary_labels()
    if method == "lasso":
        lasso = fit_lasso(part.values, y, beta, **lasso_opts)
        return Replicate(index, None, lasso, lasso.weights)
    alpha = 0.0 if method == "rbm+lasso" else rbm_config.alpha
    cfg = replace(rbm_config, alpha=alpha, seed=_replicate_seed(seed, index))
    params, _ = train(part, cfg)
    lasso = fit_lasso(hidden_posteriors(params, part), y, beta, **lasso_opts)
    return Replicate(index, params, lasso, conjugate_weights(params, lasso))


def _average_model(method, replicates) -> tuple[Optional[RbmParams], LassoModel]:
    m = len(replicates)
    bias = float(np.mean([r.lasso.bias for r in replicates]))
    beta = replicates[0].lasso.beta
    conv = all(r.lasso.converged for r in replicates)
    iters = max(r.lasso.iterations for r in replicates)
    if method == "lasso":
        w = np.mean([r.lasso.weights for r in replicates], axis=0)
        return None, LassoModel(w, bias, beta, conv, iters)
    # hidden layers of the replicates side by side; averaging the linear
    # predictors equals one lasso on the stacked posteriors with weights / m
    stacked = RbmParams(
        np.mean([r.rbm.a for r in replicates], axis=0),
        np.concatenate([r.rbm.b for r in replicates]),
        np.concatenate([r.rbm.W for r in replicates], axis=1),
    )
    w = np.concatenate([r.lasso.weights for r in replicates]) / m
    return stacked, LassoModel(w, bias, beta, conv, iters)


def run_stability_protocol(
    train_data: DataMatrix,
    method: str = "nrbm+lasso",
    t_list: Sequence[int] = (10, 50, 100, 150, 200),
    m_boot: int = 10,
    seed: int = 0,
    rbm_config: Optional[TrainConfig] = None,
    beta: float = 0.001,
    test_data: Optional[DataMatrix] = None,
    replicate_indices: Optional[Sequence[int]] = None,
    lasso_opts: Optional[dict] = None,
    threads: Optional[int] = None,
) -> ProtocolResult:
    """Bootstrap the selection pipeline and score subset stability per T.

    Each replicate resamples the training rows, fits the stage-1 model (if
    any) and the lasso, and ranks input features by |weight|.  Replicate
    ``i`` uses bootstrap stream ``i`` of ``seed``; passing repeated
    ``replicate_indices`` reproduces identical replicates.  The final model
    averages the replicate predictors and is scored on ``test_data`` when
    given.  Any replicate failure aborts the whole protocol.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
    if replicate_indices is None:
        replicate_indices = list(range(1, m_boot + 1))
    replicate_indices = [int(i) for i in replicate_indices]
    if len(replicate_indices) < 2:
        raise DegenerateError("the protocol needs at least two bootstrap replicates")
    train_data.binary_labels()
    if rbm_config is None:
        rbm_config = TrainConfig(hidden_count=200)
    lasso_opts = dict(lasso_opts or {})
    K_total = train_data.cols
    for T in t_list:
        if not 0 < T < K_total:
            raise DegenerateError(f"subset size T={T} must satisfy 0 < T < {K_total}")

    workers = min(threads or thread_count(), len(replicate_indices))

    def job(i):
        return _run_replicate(train_data, method, i, seed, rbm_config, beta, lasso_opts)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            replicates = list(pool.map(job, replicate_indices))
    else:
        replicates = [job(i) for i in replicate_indices]

    reports = []
    for T in t_list:
        subsets = [select_top(r.feature_weights, T, r.index) for r in replicates]
        reports.append(StabilityReport(
            T, consistency_index(subsets, K_total), jaccard_index(subsets),
            subsets, K_total, len(replicates),
        ))
    final_rbm, final_lasso = _average_model(method, replicates)
    result = ProtocolResult(
        method, reports, replicates, final_rbm, final_lasso,
        settings={
            "m_boot": len(replicates),
            "replicate_indices": replicate_indices,
            "seed": seed,
            "beta": beta,
            "t_list": list(t_list),
            "rbm_config": None if method == "lasso" else rbm_config.to_dict(),
        },
    )
    if test_data is not None:
        result.metrics = classification_metrics(
            result.predict_proba(test_data), test_data.binary_labels()
        )
    return result


def write_report_csv(result: ProtocolResult, path) -> None:
    with open(path, "w") as fh:
        fh.write("T,C,J\n")
        for r in result.reports:
            fh.write(f"{r.T},{r.consistency!r},{r.jaccard!r}\n")


def write_report_json(result: ProtocolResult, path) -> None:
    with open(path, "w") as fh:
        json.dump(result.to_dict(), fh, indent=2)
