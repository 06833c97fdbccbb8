"""Binary RBM: energy, factorized conditionals, CD-k statistics.

Also carries exhaustive-enumeration oracles (partition function, exact
log-likelihood and its gradient, exact model moments) for models with at
most 20 units in total.  Those oracles sum over every joint configuration
and do not use the conditional factorization, so they can check it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DimError, NumericError, OracleSizeError

ORACLE_MAX_UNITS = 20


def sigmoid(x):
    """Logistic function, evaluated without overflow for any finite input."""
    x = np.asarray(x, dtype=np.float64)
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


def _logsumexp(x, axis=None):
    m = np.max(x, axis=axis, keepdims=True)
    out = m + np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis) if axis is not None else out.item()


@dataclass(frozen=True)
class RbmParams:
    """Visible biases ``a`` (N), hidden biases ``b`` (K), weights ``W`` (N x K)."""

    a: np.ndarray
    b: np.ndarray
    W: np.ndarray

    def __post_init__(self):
        a = np.array(self.a, dtype=np.float64)
        b = np.array(self.b, dtype=np.float64)
        W = np.array(self.W, dtype=np.float64)
        if a.ndim != 1 or b.ndim != 1 or W.ndim != 2:
            raise DimError("a and b must be vectors and W a matrix")
        if a.size < 1 or b.size < 1:
            raise DimError("need N >= 1 and K >= 1")
        if W.shape != (a.size, b.size):
            raise DimError(f"W has shape {W.shape}, expected {(a.size, b.size)}")
        for name, arr in (("a", a), ("b", b), ("W", W)):
            if not np.all(np.isfinite(arr)):
                raise NumericError(f"non-finite entries in {name}")
            arr.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "W", W)

    @property
    def n_visible(self) -> int:
        return self.a.size

    @property
    def n_hidden(self) -> int:
        return self.b.size

    def transpose(self) -> "RbmParams":
        """Swap the roles of the two layers."""
        return RbmParams(self.b, self.a, self.W.T)

    @classmethod
    def zeros(cls, n_visible: int, n_hidden: int) -> "RbmParams":
        return cls(np.zeros(n_visible), np.zeros(n_hidden), np.zeros((n_visible, n_hidden)))


@dataclass
class GibbsState:
    v: np.ndarray
    h: np.ndarray
    step: int = 0


@dataclass(frozen=True)
class SufficientStats:
    """Averages of v h^T, v and h over ``count`` rows (or chains)."""

    vh: np.ndarray
    v_mean: np.ndarray
    h_mean: np.ndarray
    count: int

    @classmethod
    def from_rows(cls, v: np.ndarray, h: np.ndarray) -> "SufficientStats":
        m = v.shape[0]
        if m < 1:
            raise DimError("statistics need at least one row")
        return cls(v.T @ h / m, v.mean(axis=0), h.mean(axis=0), m)


def _check_visible(params: RbmParams, v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != params.n_visible:
        raise DimError(f"visible vector length {v.shape[-1]} != N={params.n_visible}")
    return v


def _check_hidden(params: RbmParams, h: np.ndarray) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    if h.shape[-1] != params.n_hidden:
        raise DimError(f"hidden vector length {h.shape[-1]} != K={params.n_hidden}")
    return h


def energy(params: RbmParams, v, h) -> float:
    """E(v, h) = -(a.v + b.h + v.W.h); broadcasts over leading axes."""
    v = _check_visible(params, v)
    h = _check_hidden(params, h)
    return -(v @ params.a + h @ params.b + np.sum((v @ params.W) * h, axis=-1))


def hidden_conditional(params: RbmParams, v) -> np.ndarray:
    """p(h_k = 1 | v) for each hidden unit (rows of ``v`` handled jointly)."""
    v = _check_visible(params, v)
    return sigmoid(params.b + v @ params.W)


def visible_conditional(params: RbmParams, h) -> np.ndarray:
    """p(v_n = 1 | h) for each visible unit."""
    h = _check_hidden(params, h)
    return sigmoid(params.a + h @ params.W.T)


def sample_bernoulli(probs, rng: np.random.Generator) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    return (rng.random(probs.shape) < probs).astype(np.float64)


def gibbs_step(params: RbmParams, state: GibbsState, rng, mean_field_visible=True) -> GibbsState:
    """One h -> v -> h alternation starting from the state's hidden layer.

    ``state.h`` is sampled to binary, the visible layer is set to its
    conditional probabilities (or a binary sample when
    ``mean_field_visible`` is false) and the hidden layer to
    p(h | v).
    """
    h_sample = sample_bernoulli(state.h, rng)
    v = visible_conditional(params, h_sample)
    if not mean_field_visible:
        v = sample_bernoulli(v, rng)
    h = hidden_conditional(params, v)
    return GibbsState(v, h, state.step + 1)


def cd_statistics(
    params: RbmParams,
    batch,
    k_steps: int = 1,
    rng: Optional[np.random.Generator] = None,
    mean_field_visible: bool = True,
) -> tuple[SufficientStats, SufficientStats]:
    """Data-side and CD-k model-side sufficient statistics for one batch.

    Data side: v = the batch rows, h = p(h | v).  The chain starts from the
    data, alternates ``k_steps`` times (binary hidden samples, probability
    visibles by default) and the model side uses the final
    (v, p(h | v)) pair.  With ``mean_field_visible=False`` the visibles are
    sampled too, which makes the chain an exact Gibbs sampler of the model.
    """
    if k_steps < 1:
        raise ValueError("k_steps must be >= 1")
    if rng is None:
        rng = np.random.default_rng()
    v0 = _check_visible(params, np.atleast_2d(batch))
    h0 = hidden_conditional(params, v0)
    data_stats = SufficientStats.from_rows(v0, h0)
    state = GibbsState(v0, h0)
    for _ in range(k_steps):
        state = gibbs_step(params, state, rng, mean_field_visible)
    model_stats = SufficientStats.from_rows(state.v, state.h)
    return data_stats, model_stats


def free_energy(params: RbmParams, v) -> np.ndarray:
    """F(v) = -log sum_h exp(-E(v, h)), via the hidden-layer factorization."""
    v = _check_visible(params, v)
    return -(v @ params.a) - np.sum(np.logaddexp(0.0, params.b + v @ params.W), axis=-1)


def reconstruct(params: RbmParams, v) -> np.ndarray:
    """One-step mean-field reconstruction p(v | p(h | v))."""
    return visible_conditional(params, hidden_conditional(params, v))


# ----------------------------------------------------------------------
# exact oracles


def _all_states(n: int) -> np.ndarray:
    idx = np.arange(2 ** n)
    return ((idx[:, None] >> np.arange(n)[None, :]) & 1).astype(np.float64)


def _check_oracle(params: RbmParams):
    if params.n_visible + params.n_hidden > ORACLE_MAX_UNITS:
        raise OracleSizeError(
            f"N+K={params.n_visible + params.n_hidden} exceeds {ORACLE_MAX_UNITS}"
        )


def _joint_neg_energy(params: RbmParams):
    """All visible states V, hidden states H and the table -E(V_i, H_j)."""
    _check_oracle(params)
    V = _all_states(params.n_visible)
    H = _all_states(params.n_hidden)
    neg_e = (V @ params.a)[:, None] + (H @ params.b)[None, :] + V @ params.W @ H.T
    return V, H, neg_e


def log_partition(params: RbmParams) -> float:
    """log Z by summing exp(-E) over all 2^(N+K) configurations."""
    _, _, neg_e = _joint_neg_energy(params)
    return _logsumexp(neg_e)


def exact_partition(params: RbmParams) -> float:
    return float(np.exp(log_partition(params)))


def _binary_rows(params: RbmParams, data) -> np.ndarray:
    x = getattr(data, "values", data)
    x = _check_visible(params, np.atleast_2d(x))
    if not np.all((x == 0) | (x == 1)):
        raise ValueError("exact log-likelihood needs binary rows")
    return x


def exact_loglik(params: RbmParams, data) -> float:
    """Mean over rows of log p(v) = log sum_h exp(-E(v,h)) - log Z."""
    x = _binary_rows(params, data)
    V, H, neg_e = _joint_neg_energy(params)
    log_z = _logsumexp(neg_e)
    row_idx = (x @ (2 ** np.arange(params.n_visible))).astype(np.intp)
    log_marg = _logsumexp(neg_e, axis=1)
    return float(np.mean(log_marg[row_idx]) - log_z)


def exact_model_expectation(params: RbmParams) -> SufficientStats:
    """E[v h^T], E[v], E[h] under the Boltzmann distribution, by enumeration."""
    V, H, neg_e = _joint_neg_energy(params)
    p = np.exp(neg_e - _logsumexp(neg_e))
    pv = p.sum(axis=1)
    ph = p.sum(axis=0)
    return SufficientStats(V.T @ p @ H, pv @ V, ph @ H, 1)


def exact_data_expectation(params: RbmParams, data) -> SufficientStats:
    """Data-side moments with the hidden layer marginalized by enumeration."""
    x = _binary_rows(params, data)
    V, H, neg_e = _joint_neg_energy(params)
    row_idx = (x @ (2 ** np.arange(params.n_visible))).astype(np.intp)
    rows = neg_e[row_idx]
    ph_given_v = np.exp(rows - _logsumexp(rows, axis=1)[:, None])
    eh = ph_given_v @ H
    return SufficientStats(x.T @ eh / x.shape[0], x.mean(axis=0), eh.mean(axis=0), x.shape[0])


def exact_loglik_grad(params: RbmParams, data) -> RbmParams:
    """Gradient of :func:`exact_loglik` as data moments minus model moments."""
    d = exact_data_expectation(params, data)
    m = exact_model_expectation(params)
    return RbmParams(d.v_mean - m.v_mean, d.h_mean - m.h_mean, d.vh - m.vh)


def exact_hidden_posterior(params: RbmParams, v) -> np.ndarray:
    """p(h | v) over all 2^K hidden states for one binary v, by enumeration."""
    v = _check_visible(params, v)
    _check_oracle(params)
    H = _all_states(params.n_hidden)
    neg_e = v @ params.a + H @ params.b + (v @ params.W) @ H.T
    return np.exp(neg_e - _logsumexp(neg_e))
