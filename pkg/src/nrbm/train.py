"""Nonnegative RBM training with a quadratic barrier on negative weights.

The regularized objective is the data log-likelihood minus
``alpha/2 * sum(min(w, 0)**2)``; its stochastic ascent step adds
``-eta * alpha * min(w, 0)`` to the usual CD weight update.  With
``alpha = 0`` training is exactly the plain RBM rule.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .data import DataMatrix, STREAM_CD, STREAM_INIT, make_batches, rng_stream
from .errors import DimError, NumericError
from .rbm import RbmParams, cd_statistics, hidden_conditional, logit, reconstruct

log = logging.getLogger(__name__)

INIT_CLAMP = 1e-4
DEFAULT_TAUS = (0.01, 0.02, 0.03, 0.04, 0.05, 0.06)
# 41 bins of width 0.005; the middle bin [-0.0025, 0.0025) is the near-zero bin
DEFAULT_HIST_EDGES = tuple((np.arange(-20, 22) - 0.5) * 0.005)


@dataclass(frozen=True)
class TrainConfig:
    eta: float = 0.1
    alpha: float = 0.1
    cd_k: int = 1
    batch_size: int = 100
    epochs: int = 100
    seed: int = 0
    hidden_count: int = 100
    hidden_bias_init: float = -2.0
    weight_init_max: float = 0.01

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be > 0")
        if not self.alpha >= 0:
            raise ValueError("alpha must be >= 0")
        if self.cd_k < 1:
            raise ValueError("cd_k must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.hidden_count < 1:
            raise ValueError("hidden_count must be >= 1")
        if not self.weight_init_max > 0:
            raise ValueError("weight_init_max must be > 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class DeadUnitConfig:
    taus: tuple = DEFAULT_TAUS

    def __post_init__(self):
        taus = tuple(float(t) for t in self.taus)
        if not taus:
            raise ValueError("threshold set must be non-empty")
        if any(t <= 0 for t in taus):
            raise ValueError("thresholds must be > 0")
        object.__setattr__(self, "taus", taus)


@dataclass(frozen=True)
class DeadUnitReport:
    taus: tuple
    used_counts: tuple
    averaged_used_count: float
    dead_masks: tuple


@dataclass
class EpochRecord:
    epoch: int
    reconstruction_error: float
    barrier_penalty: float
    negative_fraction: float
    histogram: np.ndarray
    used_units: float


@dataclass
class TrainTrace:
    bin_edges: np.ndarray
    records: list = field(default_factory=list)

    def near_zero_counts(self) -> list[int]:
        """Per-epoch count in the histogram bin that contains 0."""
        i = int(np.searchsorted(self.bin_edges, 0.0, side="right")) - 1
        return [int(r.histogram[i]) for r in self.records]

    def rows(self) -> list[dict]:
        out = []
        for r in self.records:
            out.append({
                "epoch": r.epoch,
                "reconstruction_error": r.reconstruction_error,
                "barrier_penalty": r.barrier_penalty,
                "negative_fraction": r.negative_fraction,
                "used_units": r.used_units,
                "histogram": " ".join(str(int(c)) for c in r.histogram),
            })
        return out


def _values(data) -> np.ndarray:
    return data.values if isinstance(data, DataMatrix) else np.asarray(data, dtype=np.float64)


def barrier_penalty(W, alpha: float) -> float:
    """(alpha / 2) * sum of squared negative weights."""
    neg = negative_part(W)
    return 0.5 * alpha * float(np.sum(neg * neg))


def negative_part(W) -> np.ndarray:
    return np.minimum(np.asarray(W, dtype=np.float64), 0.0)


def init_params(data, config: TrainConfig) -> RbmParams:
    """Visible biases from clamped column means, small positive weights.

    ``a_n = logit(mean_n)`` makes the hidden-free model match the empirical
    marginals.  Hidden biases start at ``config.hidden_bias_init``.
    """
    x = _values(data)
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
        raise DimError("cannot initialize from empty data")
    mean = np.clip(x.mean(axis=0), INIT_CLAMP, 1.0 - INIT_CLAMP)
    rng = rng_stream(config.seed, STREAM_INIT)
    W = rng.uniform(0.0, config.weight_init_max, size=(x.shape[1], config.hidden_count))
    b = np.full(config.hidden_count, float(config.hidden_bias_init))
    return RbmParams(logit(mean), b, W)


def _apply(params, da, db, dW) -> RbmParams:
    a, b, W = params.a + da, params.b + db, params.W + dW
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b)) and np.all(np.isfinite(W))):
        raise NumericError("non-finite parameters after update; aborting training")
    return RbmParams(a, b, W)


def update_step(params: RbmParams, batch, config: TrainConfig, rng) -> RbmParams:
    """One barrier-regularized CD update on a mini-batch."""
    data, model = cd_statistics(params, _values(batch), config.cd_k, rng)
    eta = config.eta
    dW = eta * (data.vh - model.vh - config.alpha * negative_part(params.W))
    return _apply(
        params,
        eta * (data.v_mean - model.v_mean),
        eta * (data.h_mean - model.h_mean),
        dW,
    )


def rbm_update_step(params: RbmParams, batch, config: TrainConfig, rng) -> RbmParams:
    """Plain RBM CD update; ``config.alpha`` is ignored."""
    data, model = cd_statistics(params, _values(batch), config.cd_k, rng)
    eta = config.eta
    return _apply(
        params,
        eta * (data.v_mean - model.v_mean),
        eta * (data.h_mean - model.h_mean),
        eta * (data.vh - model.vh),
    )


def hidden_posteriors(params: RbmParams, data) -> np.ndarray:
    """M x K matrix of p(h_k = 1 | v_m)."""
    x = _values(data)
    if x.ndim != 2:
        raise DimError("data must be a matrix")
    return hidden_conditional(params, x)


def reconstruction_error(params: RbmParams, data) -> float:
    x = _values(data)
    return float(np.mean((x - reconstruct(params, x)) ** 2))


def dead_units(params, config: DeadUnitConfig = DeadUnitConfig()) -> DeadUnitReport:
    """Dead/used hidden units under each threshold in ``config.taus``.

    Unit k is dead under tau when ``sum_n |w_nk| / N <= tau``.
    """
    W = params.W if isinstance(params, RbmParams) else np.asarray(params, dtype=np.float64)
    norms = np.abs(W).sum(axis=0) / W.shape[0]
    masks = tuple(norms <= t for t in config.taus)
    used = tuple(int(W.shape[1] - m.sum()) for m in masks)
    return DeadUnitReport(config.taus, used, float(np.mean(used)), masks)


def weight_histogram(params, bin_edges: Sequence[float] = DEFAULT_HIST_EDGES) -> np.ndarray:
    """Counts of weights per bin; values outside the edges go to the end bins."""
    W = params.W if isinstance(params, RbmParams) else np.asarray(params, dtype=np.float64)
    edges = np.asarray(bin_edges, dtype=np.float64)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("bin edges must be strictly increasing with at least two entries")
    idx = np.searchsorted(edges, W.ravel(), side="right") - 1
    idx = np.clip(idx, 0, edges.size - 2)
    return np.bincount(idx, minlength=edges.size - 1)


def _record(epoch, params, x, alpha, edges) -> EpochRecord:
    return EpochRecord(
        epoch=epoch,
        reconstruction_error=reconstruction_error(params, x),
        barrier_penalty=barrier_penalty(params.W, alpha),
        negative_fraction=float(np.mean(params.W < 0)),
        histogram=weight_histogram(params, edges),
        used_units=dead_units(params).averaged_used_count,
    )


def train(
    data,
    config: TrainConfig,
    bin_edges: Sequence[float] = DEFAULT_HIST_EDGES,
    step: Optional[Callable] = None,
    init: Optional[RbmParams] = None,
) -> tuple[RbmParams, TrainTrace]:
    """Run ``config.epochs`` passes of mini-batch updates.

    ``step`` defaults to :func:`update_step`; pass :func:`rbm_update_step`
    for the unregularized model.  The trace holds one record for the
    initialization (epoch 0) and one per completed epoch.
    """
    x = _values(data)
    step = update_step if step is None else step
    params = init_params(x, config) if init is None else init
    edges = np.asarray(bin_edges, dtype=np.float64)
    trace = TrainTrace(edges)
    trace.records.append(_record(0, params, x, config.alpha, edges))
    rng = rng_stream(config.seed, STREAM_CD)
    for epoch in range(1, config.epochs + 1):
        plan = make_batches(x.shape[0], config.batch_size, config.seed, epoch)
        for idx in plan:
            params = step(params, x[idx], config, rng)
        rec = _record(epoch, params, x, config.alpha, edges)
        trace.records.append(rec)
        log.debug("epoch %d recon %.5f", epoch, rec.reconstruction_error)
    return params, trace
