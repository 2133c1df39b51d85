"""Finite-difference gradient checks.

Every case builds float64 inputs, projects the op output onto a fixed random
direction to get a scalar, and compares the tape gradient with a central
difference (h = 1e-3). Inputs are drawn away from kinks: activations keep
clear of zero, pooling windows have no near-ties, hinge terms stay off the
clamp boundary.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import losses, ops
from .rng import make_rng
from .sampler import SampleConfig, build_distance_matrix
from .tensor import Tensor

H = 1e-3
TOL = 1e-4
BN_TOL = 1e-3


def numerical_grad(fn: Callable[[], float], arr: np.ndarray, h: float = H) -> np.ndarray:
    """Central differences of ``fn`` with respect to ``arr`` (perturbed in place)."""
    grad = np.zeros_like(arr, dtype=np.float64)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = arr[idx]
        arr[idx] = orig + h
        up = fn()
        arr[idx] = orig - h
        down = fn()
        arr[idx] = orig
        grad[idx] = (up - down) / (2 * h)
    return grad


def rel_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """||a - b|| / max(||a||, ||b||); below ``floor`` the comparison is absolute."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / denom)


def check(build: Callable[[list[Tensor]], Tensor], arrays: list[np.ndarray], h: float = H) -> float:
    """Worst relative error over all inputs of ``build``.

    ``build`` maps a list of tensors to a scalar (or to any tensor, which is
    then reduced with a fixed random projection).
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    probe = build([Tensor(a) for a in arrays])
    proj = None
    if probe.data.size != 1:
        proj = make_rng(12345, "projection").standard_normal(probe.shape)

    def scalar(ts):
        out = build(ts)
        return out.sum() if proj is None else (out * Tensor(proj)).sum()

    ts = [Tensor(a, requires_grad=True) for a in arrays]
    scalar(ts).backward()
    worst = 0.0
    for t, a in zip(ts, arrays):
        num = numerical_grad(lambda: scalar([Tensor(x) for x in arrays]).item(), a, h)
        ana = t.grad if t.grad is not None else np.zeros_like(a)
        worst = max(worst, rel_error(ana, num))
    return worst


# -- case generators -------------------------------------------------------


def _away_from_zero(rng, shape, gap=0.05):
    x = rng.uniform(gap, 1.0, size=shape)
    return x * rng.choice([-1.0, 1.0], size=shape)


def _distinct(rng, shape, spacing=0.01):
    # values spaced well beyond 2h so no window max can flip under perturbation
    n = int(np.prod(shape))
    return (rng.permutation(n) * spacing - n * spacing / 2).reshape(shape) + rng.uniform(0, spacing / 10, size=shape)


def _conv(rng):
    n = int(rng.integers(1, 3))
    k = int(rng.integers(1, 4))
    h, w = int(rng.integers(k, 7)), int(rng.integers(k, 7))
    cin, cout = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, 2))
    arrays = [rng.standard_normal((n, h, w, cin)), rng.standard_normal((k, k, cin, cout)), rng.standard_normal(cout)]
    return (lambda t: ops.conv2d(t[0], t[1], t[2], stride=stride, padding=pad)), arrays


def _pool(rng):
    win = int(rng.integers(1, 4))
    stride = int(rng.integers(1, 3))
    h, w = int(rng.integers(win, 7)), int(rng.integers(win, 7))
    x = _distinct(rng, (int(rng.integers(1, 3)), h, w, int(rng.integers(1, 3))))
    return (lambda t: ops.maxpool2d(t[0], win, stride)), [x]


def _bn(rng):
    shape = (int(rng.integers(2, 4)), int(rng.integers(1, 5)), int(rng.integers(1, 5)), int(rng.integers(1, 4)))
    c = shape[-1]
    arrays = [rng.standard_normal(shape) * 2 + 1, rng.uniform(0.5, 1.5, c), rng.standard_normal(c)]

    def build(t):
        return ops.batchnorm(t[0], t[1], t[2], ops.BatchNormState(c), train=True)

    return build, arrays


def _bn_eval(rng):
    shape = (int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(1, 4)))
    c = shape[-1]
    state = ops.BatchNormState(c, mean=rng.standard_normal(c), var=rng.uniform(0.5, 2.0, c))
    arrays = [rng.standard_normal(shape), rng.uniform(0.5, 1.5, c), rng.standard_normal(c)]
    return (lambda t: ops.batchnorm(t[0], t[1], t[2], state, train=False)), arrays


def _relu(rng):
    shape = tuple(int(s) for s in rng.integers(1, 5, size=int(rng.integers(1, 4))))
    return (lambda t: ops.relu(t[0])), [_away_from_zero(rng, shape)]


def _leaky(rng):
    shape = tuple(int(s) for s in rng.integers(1, 5, size=int(rng.integers(1, 4))))
    slope = float(rng.uniform(0.01, 0.5))
    return (lambda t: ops.leaky_relu(t[0], slope)), [_away_from_zero(rng, shape)]


def _affine(rng):
    n, d, k = (int(v) for v in rng.integers(1, 6, size=3))
    arrays = [rng.standard_normal((n, d)), rng.standard_normal((d, k)), rng.standard_normal(k)]
    return (lambda t: ops.affine(t[0], t[1], t[2])), arrays


def _dropout(rng):
    shape = tuple(int(s) for s in rng.integers(1, 6, size=2))
    p = float(rng.uniform(0.1, 0.7))
    seed = int(rng.integers(1 << 30))
    # same stream every evaluation, so the mask is a fixed linear map
    return (lambda t: ops.dropout(t[0], p, True, make_rng(seed, "dropout"))), [rng.standard_normal(shape)]


def _gap(rng):
    shape = tuple(int(s) for s in rng.integers(1, 5, size=4))
    return (lambda t: ops.global_avg_pool(t[0])), [rng.standard_normal(shape)]


def _xent(rng):
    n, k = int(rng.integers(1, 6)), int(rng.integers(2, 8))
    labels = rng.integers(0, k, size=n)
    return (lambda t: ops.log_softmax_cross_entropy(t[0], labels)), [rng.standard_normal((n, k)) * 2]


def _vectors(rng, count, margin=0.05):
    # every pairwise distance clear of the |x| kink at zero
    d = int(rng.integers(1, 9))
    while True:
        vs = [rng.standard_normal(d) for _ in range(count)]
        if all(np.linalg.norm(u - v) > margin for i, u in enumerate(vs) for v in vs[i + 1 :]):
            return vs


def _triplet(rng):
    while True:
        a, p, n = _vectors(rng, 3)
        gap = np.linalg.norm(a - p) - np.linalg.norm(a - n) + losses.DEFAULT_MARGIN
        if abs(gap) > 0.05:
            return a, p, n


def _margin(rng):
    return (lambda t: losses.margin_triplet_loss(t[0], t[1], t[2])), list(_triplet(rng))


def _ratio(rng):
    return (lambda t: losses.ratio_triplet_loss(t[0], t[1], t[2])), _vectors(rng, 3)


def _sc_pair(rng):
    return (lambda t: losses.sc_pair_loss(t[0], t[1], t[2])), _vectors(rng, 3)


def _sc_sym(rng):
    arrays = _vectors(rng, 4)
    return (lambda t: losses.sc_pair_loss_symmetric((t[0], t[1]), (t[2], t[3]))), arrays


def _sc_batch(rng):
    n = int(rng.integers(1, 7))
    return (lambda t: losses.sc_batch_loss(t[0])), [rng.uniform(0, 4, size=(n, n))]


def _sc_sampled(rng):
    n = int(rng.integers(2, 5))
    h, w, c = (int(v) for v in rng.integers(1, 5, size=3))
    ph, pw = int(rng.integers(1, h + 1)), int(rng.integers(1, w + 1))
    fresh = bool(rng.integers(2))
    seed = int(rng.integers(1 << 30))
    cfg = SampleConfig(ph, pw, seed=seed, fresh_contrast_per_pair=fresh)

    def build(t):
        dm = build_distance_matrix(t[0], cfg, make_rng(seed, "sampler"))
        return losses.sc_batch_loss(dm.values)

    return build, [rng.standard_normal((n, h, w, c))]


def _clear_of_kinks(y: np.ndarray, gap: float) -> bool:
    if np.min(np.abs(y)) < gap:
        return False
    # no two values in any 2x2 pool window closer than gap
    win = ops._windows(np.maximum(y, 0), 2, 2, 2).reshape(*y.shape[:1], -1, 4)
    s = np.sort(win, axis=-1)
    top = s[..., -1] - s[..., -2]
    return bool(np.all((top > gap) | (s[..., -1] == 0)))


def _composed(rng):
    # conv -> relu -> pool -> gap -> cross-entropy, the path a classifier uses
    labels = rng.integers(0, 3, size=2)
    while True:
        x = rng.standard_normal((2, 6, 6, 2))
        w = rng.standard_normal((3, 3, 2, 3)) * 0.5
        b = rng.standard_normal(3) * 0.1
        y = ops.conv2d(Tensor(x), Tensor(w), Tensor(b), padding=1).data
        if _clear_of_kinks(y, 0.02):
            break

    def build(t):
        y = ops.maxpool2d(ops.relu(ops.conv2d(t[0], t[1], t[2], padding=1)), 2, 2)
        return ops.log_softmax_cross_entropy(ops.global_avg_pool(y), labels)

    return build, [x, w, b]


@dataclass
class Case:
    name: str
    group: str  # "layers" or "losses"
    make: Callable
    tol: float = TOL


CASES: list[Case] = [
    Case("conv2d", "layers", _conv),
    Case("maxpool2d", "layers", _pool),
    Case("batchnorm", "layers", _bn, BN_TOL),
    Case("batchnorm_eval", "layers", _bn_eval, BN_TOL),
    Case("relu", "layers", _relu),
    Case("leaky_relu", "layers", _leaky),
    Case("affine", "layers", _affine),
    Case("dropout", "layers", _dropout),
    Case("global_avg_pool", "layers", _gap),
    Case("log_softmax_cross_entropy", "layers", _xent),
    Case("composed_conv_pool_loss", "layers", _composed),
    Case("margin_triplet_loss", "losses", _margin),
    Case("ratio_triplet_loss", "losses", _ratio),
    Case("sc_pair_loss", "losses", _sc_pair),
    Case("sc_pair_loss_symmetric", "losses", _sc_sym),
    Case("sc_batch_loss", "losses", _sc_batch),
    Case("sc_batch_loss_sampled", "losses", _sc_sampled),
]


@dataclass
class Result:
    name: str
    worst: float
    tol: float
    trials: int
    seconds: float
    failures: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.worst < self.tol


def run_suite(group: str = "all", trials: int = 20, seed: int = 0, cases: list[Case] | None = None) -> list[Result]:
    """Run every case in ``group`` over ``trials`` random shapes."""
    cases = CASES if cases is None else cases
    selected = [c for c in cases if group == "all" or c.group == group]
    results = []
    for case in selected:
        rng = make_rng(seed, "gradcheck", case.name)
        t0 = time.perf_counter()
        worst = 0.0
        failures = []
        for trial in range(trials):
            build, arrays = case.make(rng)
            err = check(build, arrays)
            worst = max(worst, err)
            if not err < case.tol:
                failures.append((trial, [a.shape for a in arrays], err))
        results.append(Result(case.name, worst, case.tol, trials, time.perf_counter() - t0, failures))
    return results


def format_report(results: list[Result]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'op':<{width}}  {'worst rel err':>13}  {'tol':>7}  status"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {r.worst:13.3e}  {r.tol:7.0e}  {'PASS' if r.ok else 'FAIL'}")
    return "\n".join(lines)
