"""Naive reference implementations, written as explicit loops."""

import math

import numpy as np


def conv2d_loops(x, w, b, stride=1, padding=0):
    n, h, wd, cin = x.shape
    kh, kw, _, cout = w.shape
    xp = np.zeros((n, h + 2 * padding, wd + 2 * padding, cin))
    xp[:, padding : padding + h, padding : padding + wd] = x
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((n, ho, wo, cout))
    for i in range(n):
        for r in range(ho):
            for c in range(wo):
                for o in range(cout):
                    acc = b[o]
                    for u in range(kh):
                        for v in range(kw):
                            for k in range(cin):
                                acc += xp[i, r * stride + u, c * stride + v, k] * w[u, v, k, o]
                    out[i, r, c, o] = acc
    return out


def maxpool_loops(x, window, stride):
    n, h, w, c = x.shape
    ho, wo = (h - window) // stride + 1, (w - window) // stride + 1
    out = np.zeros((n, ho, wo, c))
    for i in range(n):
        for r in range(ho):
            for col in range(wo):
                for k in range(c):
                    best = -math.inf
                    for u in range(window):
                        for v in range(window):
                            best = max(best, x[i, r * stride + u, col * stride + v, k])
                    out[i, r, col, k] = best
    return out


def affine_loops(x, w, b):
    n, din = x.shape
    dout = w.shape[1]
    out = np.zeros((n, dout))
    for i in range(n):
        for o in range(dout):
            out[i, o] = b[o] + sum(x[i, k] * w[k, o] for k in range(din))
    return out


def batchnorm_loops(x, gamma, beta, eps=1e-5):
    """Training-mode BN over all axes but the last, one channel at a time."""
    flat = x.reshape(-1, x.shape[-1])
    out = np.zeros_like(flat, dtype=np.float64)
    means, variances = [], []
    for k in range(flat.shape[1]):
        col = [float(v) for v in flat[:, k]]
        mean = sum(col) / len(col)
        var = sum((v - mean) ** 2 for v in col) / len(col)
        means.append(mean)
        variances.append(var)
        for r, v in enumerate(col):
            out[r, k] = gamma[k] * (v - mean) / math.sqrt(var + eps) + beta[k]
    return out.reshape(x.shape), np.array(means), np.array(variances)


def euclid(u, v):
    return math.sqrt(sum((float(a) - float(b)) ** 2 for a, b in zip(u, v)))


def sc_loss_loops(anchors, contrasts):
    """Per-image double loop: L = mean_i -log(exp(-D_ii) / sum_j exp(-D_ij)).

    ``anchors[i]`` is image i's first patch; ``contrasts[i][j]`` is the patch
    of image j compared against it (j == i is the positive).
    """
    n = len(anchors)
    total = 0.0
    for i in range(n):
        dists = [euclid(anchors[i], contrasts[i][j]) for j in range(n)]
        denom = sum(math.exp(-d) for d in dists)
        total += -math.log(math.exp(-dists[i]) / denom)
    return total / n


def window_vector(f, origin, ph, pw):
    i, r, c = origin
    return [float(v) for v in f[i, r : r + ph, c : c + pw, :].reshape(-1)]
