"""Comparison losses over embedded patch vectors.

All losses return float64 scalars. Softmax-style terms go through a
max-shifted log-sum-exp so large distances never underflow to ``log(0)``.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError
from .tensor import Function, Tensor, _unbroadcast

DEFAULT_MARGIN = 0.2


def softplus(x):
    """log(1 + e^x), stable for either sign."""
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def logsumexp(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    m = z.max(axis=axis, keepdims=True)
    return (m + np.log(np.exp(z - m).sum(axis=axis, keepdims=True))).squeeze(axis)


# -- distances ------------------------------------------------------------


class Distance(Function):
    """Euclidean norm over the last axis of ``a - b`` (broadcasting)."""

    def forward(self, a, b):
        if a.shape[-1] != b.shape[-1]:
            raise DimensionError(f"distance needs equal vector lengths, got {a.shape[-1]} and {b.shape[-1]}")
        diff = np.subtract(a, b, dtype=np.float64)
        dist = np.sqrt((diff * diff).sum(axis=-1))
        self.diff, self.dist = diff, dist
        return dist

    def backward(self, g):
        # zero distance has no gradient direction; use the 0 subgradient
        safe = np.where(self.dist > 0, self.dist, 1.0)
        unit = np.where((self.dist > 0)[..., None], self.diff / safe[..., None], 0.0)
        ga = g[..., None] * unit
        a, b = self.inputs
        return _unbroadcast(ga, a.shape).astype(a.dtype), _unbroadcast(-ga, b.shape).astype(b.dtype)


def distance(a: Tensor, b: Tensor) -> Tensor:
    return Distance.apply(a, b)


class L2Normalize(Function):
    def forward(self, x, eps=1e-12):
        norm = np.sqrt((x.astype(np.float64) ** 2).sum(axis=-1, keepdims=True))
        self.norm = np.maximum(norm, eps)
        self.y = x / self.norm
        return self.y.astype(x.dtype)

    def backward(self, g):
        g64 = g.astype(np.float64)
        dx = (g64 - self.y * (g64 * self.y).sum(axis=-1, keepdims=True)) / self.norm
        return dx.astype(self.inputs[0].dtype)


def l2_normalize(x: Tensor) -> Tensor:
    return L2Normalize.apply(x)


# -- triplet losses -------------------------------------------------------


def _check_triplet(a: Tensor, p: Tensor, n: Tensor) -> None:
    if not (a.shape == p.shape == n.shape):
        raise DimensionError(f"triplet vectors must share a shape, got {a.shape}, {p.shape}, {n.shape}")


class _Hinge(Function):
    def forward(self, dpos, dneg, alpha=DEFAULT_MARGIN):
        z = dpos - dneg + alpha
        self.active = (z > 0).astype(np.float64)
        return np.asarray(np.maximum(z, 0.0).mean())

    def backward(self, g):
        k = float(g) * self.active / self.active.size
        return k, -k


def margin_triplet_loss(anchor: Tensor, positive: Tensor, negative: Tensor, alpha: float = DEFAULT_MARGIN) -> Tensor:
    """max(|a-p| - |a-n| + alpha, 0); averaged over leading axes when batched."""
    if alpha < 0:
        raise DimensionError(f"margin must be non-negative, got {alpha}")
    _check_triplet(anchor, positive, negative)
    return _Hinge.apply(distance(anchor, positive), distance(anchor, negative), alpha=alpha)


class _DistanceRatio(Function):
    # -log(e^-dp / (e^-dp + e^-dn)) = dp + logsumexp(-dp, -dn)
    def forward(self, dpos, dneg):
        z = np.stack([-dpos, -dneg], axis=-1)
        lse = logsumexp(z, axis=-1)
        self.q_neg = np.exp(-dneg - lse)
        return np.asarray((dpos + lse).mean())

    def backward(self, g):
        k = float(g) * self.q_neg / self.q_neg.size
        return k, -k


def ratio_triplet_loss(anchor: Tensor, positive: Tensor, negative: Tensor) -> Tensor:
    """Negative log of the softmax weight on the positive distance."""
    _check_triplet(anchor, positive, negative)
    return _DistanceRatio.apply(distance(anchor, positive), distance(anchor, negative))


# -- spatial contrasting --------------------------------------------------


def sc_pair_loss(anchor: Tensor, positive: Tensor, contrast: Tensor) -> Tensor:
    """Pairwise spatial-contrasting loss; the contrast patch comes from another image."""
    return ratio_triplet_loss(anchor, positive, contrast)


def sc_pair_loss_symmetric(x1: tuple[Tensor, Tensor], x2: tuple[Tensor, Tensor]) -> Tensor:
    """Average of the two directional pair losses.

    ``x1`` and ``x2`` each hold two patch vectors from one image; the first
    patch of the other image serves as contrast.
    """
    (a1, p1), (a2, p2) = x1, x2
    return 0.5 * (sc_pair_loss(a1, p1, a2) + sc_pair_loss(a2, p2, a1))


class _BatchContrast(Function):
    def forward(self, dist):
        if dist.ndim != 2 or dist.shape[0] != dist.shape[1] or dist.shape[0] < 1:
            raise DimensionError(f"sc_batch_loss needs a non-empty square distance matrix, got {dist.shape}")
        d = dist.astype(np.float64)
        lse = logsumexp(-d, axis=1)
        self.soft = np.exp(-d - lse[:, None])
        # d_i = Dist(i,i) + log sum_k exp(-Dist(i,k))
        self.rows = np.diagonal(d) + lse
        return np.asarray(self.rows.mean())

    def backward(self, g):
        n = self.soft.shape[0]
        return ((np.eye(n) - self.soft) * (float(g) / n)).astype(self.inputs[0].dtype)


def sc_batch_loss(dist: Tensor) -> Tensor:
    """Mean over rows of -log softmax(-Dist)[i, i]."""
    return _BatchContrast.apply(dist)


def sc_row_terms(dist) -> np.ndarray:
    """Per-image terms d_i (no tape); handy for inspection and tests."""
    d = np.asarray(dist.data if isinstance(dist, Tensor) else dist, dtype=np.float64)
    return np.diagonal(d) + logsumexp(-d, axis=1)
