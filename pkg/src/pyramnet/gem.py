"""Graph Embedding Module.

Each point is linked to the peers whose attribute vectors co-vary most
strongly with its own. The features of those peers are averaged and
concatenated to the point's own feature, doubling the channel count.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, DataError

log = logging.getLogger(__name__)


@dataclass
class AdjacencySimilarityMatrix:
    indices: np.ndarray  # (..., N, k) peer indices, strongest first
    scores: np.ndarray  # (..., N, k) matching covariance values, non-increasing
    k: int


def attribute_means(x):
    """Per-point mean over the attribute axis: (..., N, F) -> (..., N)."""
    xd = np.asarray(x.data if isinstance(x, T.Tensor) else x)
    if not np.all(np.isfinite(xd)):
        raise DataError("attribute map contains non-finite values")
    return xd.mean(axis=-1)


def covariance_matrix(x, correlation=False):
    """Inter-point covariance over the F attributes, (..., N, F) -> (..., N, N).

    ``S[i, j] = mean_f (x[i, f] - mu[i]) * (x[j, f] - mu[j])``. With
    ``correlation`` the matrix is rescaled to unit diagonal (zero-variance rows
    stay zero).
    """
    x = T.as_tensor(x)
    f = x.shape[-1]
    centred = x - T.mean(x, axis=-1, keepdims=True)
    axes = tuple(range(x.ndim - 2)) + (x.ndim - 1, x.ndim - 2)
    s = T.matmul(centred, T.transpose(centred, axes)) * (1.0 / f)
    if correlation:
        var = np.diagonal(s.data, axis1=-2, axis2=-1)
        inv = np.where(var > 0, 1.0 / np.sqrt(np.where(var > 0, var, 1.0)), 0.0).astype(s.dtype)
        s = s * (inv[..., :, None] * inv[..., None, :])
    s.op = "covariance"
    return s


def top_k_select(S, k):
    """Per row, the ``k`` largest off-diagonal entries.

    Ties go to the smaller column index. Rows are returned strongest first.
    """
    s = np.array(S.data if isinstance(S, T.Tensor) else S)
    n = s.shape[-1]
    if not 1 <= k <= n - 1:
        raise ConfigError(f"top-k: k={k} outside [1, {n - 1}] for N={n}")
    diag = np.arange(n)
    s[..., diag, diag] = -np.inf
    kth = -np.partition(-s, k - 1, axis=-1)[..., k - 1 : k]
    chosen = s >= kth
    crowded = chosen.sum(axis=-1) > k
    if crowded.any():
        # more than k candidates at the threshold: keep the lowest-index ties
        rows_s, rows_kth = s[crowded], kth[crowded]
        above = rows_s > rows_kth
        tied = rows_s == rows_kth
        room = k - above.sum(axis=-1, keepdims=True)
        chosen[crowded] = above | (tied & (np.cumsum(tied, axis=-1) <= room))
    cols = np.broadcast_to(diag, s.shape)[chosen].reshape(s.shape[:-1] + (k,))
    scores = np.take_along_axis(s, cols, axis=-1)
    order = np.argsort(-scores, axis=-1, kind="stable")
    return AdjacencySimilarityMatrix(
        np.take_along_axis(cols, order, axis=-1), np.take_along_axis(scores, order, axis=-1), k
    )


def choose_k(f, fixed=None):
    """Neighbour count for a GEM with ``f`` input channels: ceil(f / 4) unless fixed."""
    if fixed is not None:
        return int(fixed)
    return max(1, math.ceil(f / 4))


def clamp_k(k, n):
    if k > n - 1:
        log.warning("GEM k=%d exceeds N-1=%d; clamping", k, n - 1)
        return n - 1
    return max(1, k)


def gem_forward(x, k=None, correlation=False, adjacency=None, return_adjacency=False):
    """Graph Embedding Module: (..., N, 1, F) or (..., N, F) -> same layout with 2F channels.

    Pipeline: covariance matrix -> top-k peer selection -> mean of the selected
    peers' feature rows -> concatenation with the input. Selection indices are
    constants of the forward pass; gradients reach ``x`` through both the
    gathered rows and the skip path. A precomputed ``adjacency`` may be passed
    to freeze the selection.
    """
    x = T.as_tensor(x)
    unit_axis = x.ndim >= 3 and x.shape[-2] == 1
    flat = T.reshape(x, x.shape[:-2] + (x.shape[-1],)) if unit_axis else x
    n, f = flat.shape[-2:]
    if n < 2:
        raise DataError(f"GEM needs at least 2 points, got N={n}")
    if adjacency is None:
        attribute_means(flat)
        kk = clamp_k(choose_k(f, k), n)
        cov = covariance_matrix(T.Tensor(flat.data), correlation=correlation)
        adjacency = top_k_select(cov.data, kk)
    peers = T.neighbor_mean(flat, adjacency.indices)
    out = T.concat([flat, peers], axis=-1)
    if unit_axis:
        out = T.reshape(out, out.shape[:-1] + (1, 2 * f))
    out.op = "gem"
    if return_adjacency:
        return out, adjacency
    return out
