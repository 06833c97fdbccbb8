"""Synthetic datasets with known generating structure.

* :func:`factor_data` -- a handful of binary factors, each switching on its
  own small group of visible units; a shared per-row activity level makes
  the factors positively correlated.
* :func:`parts_data` -- images built as the union of randomly chosen
  ground-truth parts (small blocks on a square canvas), for dead-unit
  counting.
* :func:`stability_data` -- labelled data whose strongest predictors come
  in noisy duplicate pairs, which makes lasso selection unstable.
"""

from __future__ import annotations

import numpy as np

from .data import DataMatrix, STREAM_SYNTHETIC, rng_stream
from .rbm import sigmoid


def factor_data(
    n_samples: int,
    seed: int,
    n_factors: int = 3,
    group_size: int = 2,
    activity: tuple = (0.1, 0.6),
    p_on: float = 0.95,
    p_noise: float = 0.02,
) -> DataMatrix:
    """Binary rows from factors that each own ``group_size`` visibles.

    Every row first draws an activity level uniformly from ``activity``;
    each factor is then on with that probability.  A visible unit is on
    with probability ``p_on`` when its factor is active and ``p_noise``
    otherwise.  Pass a single-element ``activity`` for independent factors.
    """
    rng = rng_stream(seed, STREAM_SYNTHETIC, 1)
    levels = np.asarray(activity, dtype=np.float64)
    g = levels[rng.integers(0, levels.size, size=(n_samples, 1))]
    z = rng.random((n_samples, n_factors)) < g
    active = np.repeat(z, group_size, axis=1)
    p = np.where(active, p_on, p_noise)
    return DataMatrix((rng.random(p.shape) < p).astype(np.float64))


def block_parts(side: int, n_parts: int = 8, height: int = 2, width: int = 2) -> np.ndarray:
    """``n_parts`` non-overlapping block masks over a ``side x side`` canvas.

    Blocks sit on a 2-row grid with ``ceil(n_parts / 2)`` columns, one block
    per cell, offset one pixel from the cell corner.
    """
    cols = -(-n_parts // 2)
    cell_h, cell_w = side // 2, side // cols
    if height + 1 > cell_h or width + 1 > cell_w:
        raise ValueError("blocks do not fit on the canvas")
    parts = np.zeros((n_parts, side, side))
    for i in range(n_parts):
        r, c = divmod(i, cols)
        y, x = 1 + r * cell_h, 1 + c * cell_w
        parts[i, y:y + height, x:x + width] = 1.0
    return parts.reshape(n_parts, -1)


def parts_data(
    n_samples: int,
    seed: int,
    n_parts: int = 8,
    side: int = 20,
    part_shape: tuple = (2, 2),
    p_part: float = 0.2,
    noise: float = 0.0,
) -> tuple[DataMatrix, np.ndarray]:
    """Images that are unions of random parts, with optional pixel flips.

    Returns the data and the (n_parts x side*side) part masks.
    """
    rng = rng_stream(seed, STREAM_SYNTHETIC, 2)
    parts = block_parts(side, n_parts, *part_shape)
    z = (rng.random((n_samples, n_parts)) < p_part).astype(np.float64)
    img = np.minimum(z @ parts, 1.0)
    if noise > 0:
        flip = rng.random(img.shape) < noise
        img = np.where(flip, 1.0 - img, img)
    return DataMatrix(img), parts


def stability_data(
    n_samples: int,
    seed: int,
    n_features: int = 60,
    n_pairs: int = 5,
    p_feature: float = 0.3,
    copy_noise: float = 0.1,
    strength: float = 2.0,
    intercept: float = -1.5,
) -> tuple[DataMatrix, np.ndarray]:
    """Binary features with ``n_pairs`` duplicated predictive pairs.

    Each pair holds two copies of one latent bit, each copy independently
    flipped with ``copy_noise``.  The pairs sit at random column positions.
    The label is Bernoulli with logit ``intercept + strength * sum of latent
    bits``; the remaining columns are independent noise.  Returns the data
    and an ``n_pairs x 2`` array of the predictive column indices.
    """
    if 2 * n_pairs > n_features:
        raise ValueError("too many pairs for the feature count")
    rng = rng_stream(seed, STREAM_SYNTHETIC, 3)
    x = (rng.random((n_samples, n_features)) < p_feature).astype(np.float64)
    latent = (rng.random((n_samples, n_pairs)) < p_feature).astype(np.float64)
    pairs = rng.permutation(n_features)[: 2 * n_pairs].reshape(n_pairs, 2)
    for i, cols in enumerate(pairs):
        for c in cols:
            flip = rng.random(n_samples) < copy_noise
            x[:, c] = np.where(flip, 1.0 - latent[:, i], latent[:, i])
    logits = intercept + strength * latent.sum(axis=1)
    y = (rng.random(n_samples) < sigmoid(logits)).astype(np.int64)
    return DataMatrix(x, y), pairs
