"""Feature-space patch sampling and the batch distance matrix."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError
from .losses import distance, l2_normalize
from .tensor import Function, Tensor


@dataclass
class SampleConfig:
    patch_rows: int = 1
    patch_cols: int = 1
    seed: int = 0
    fresh_contrast_per_pair: bool = True
    exclude_overlap: bool = False
    normalize: bool = False

    def __post_init__(self):
        if self.patch_rows < 1 or self.patch_cols < 1:
            raise DimensionError(f"patch window must be positive, got {self.patch_rows}x{self.patch_cols}")


@dataclass
class PatchVector:
    """A flattened window (row-major, then channel) plus where it came from."""

    values: Tensor
    origin: tuple[int, int, int]  # (image, row, col)


@dataclass
class DistanceMatrix:
    """Dist(i, j) between image i's anchor and image j's contrast patch."""

    values: Tensor
    anchor_origins: list = field(default_factory=list)
    contrast_origins: list = field(default_factory=list)  # [i][j] -> (j, row, col)

    @property
    def n(self) -> int:
        return self.values.shape[0]


class _GatherWindows(Function):
    """Stack windows (img, row, col) of an NHWC map into (M, ph*pw*C)."""

    def forward(self, f, origins, ph, pw):
        self.shape, self.origins, self.ph, self.pw = f.shape, origins, ph, pw
        rows = [f[i, r : r + ph, c : c + pw, :].reshape(-1) for i, r, c in origins]
        return np.stack(rows) if rows else np.zeros((0, ph * pw * f.shape[3]), f.dtype)

    def backward(self, g):
        df = np.zeros(self.shape, dtype=self.inputs[0].dtype)
        c = self.shape[3]
        for k, (i, r, col) in enumerate(self.origins):
            df[i, r : r + self.ph, col : col + self.pw, :] += g[k].reshape(self.ph, self.pw, c)
        return df


def gather_windows(f: Tensor, origins, ph: int, pw: int) -> Tensor:
    return _GatherWindows.apply(f, origins=[tuple(o) for o in origins], ph=ph, pw=pw)


def _check_fit(f: Tensor, cfg: SampleConfig) -> None:
    if f.ndim != 4:
        raise DimensionError(f"feature map must be N x H x W x C, got shape {f.shape}")
    n, h, w, _ = f.shape
    if n < 1:
        raise DimensionError("feature map has an empty batch")
    if cfg.patch_rows > h or cfg.patch_cols > w:
        raise DimensionError(
            f"patch window {cfg.patch_rows}x{cfg.patch_cols} exceeds feature map {h}x{w} (axes 1, 2)"
        )


def draw_origin(f: Tensor, cfg: SampleConfig, rng: np.random.Generator) -> tuple[int, int]:
    """Uniform over every valid top-left corner."""
    _, h, w, _ = f.shape
    nr, nc = h - cfg.patch_rows + 1, w - cfg.patch_cols + 1
    k = int(rng.integers(nr * nc))
    return divmod(k, nc)


def _overlaps(a: tuple[int, int], b: tuple[int, int], cfg: SampleConfig) -> bool:
    return abs(a[0] - b[0]) < cfg.patch_rows and abs(a[1] - b[1]) < cfg.patch_cols


def _draw_excluding(f, cfg, rng, avoid) -> tuple[int, int]:
    _, h, w, _ = f.shape
    free = [
        (r, c)
        for r in range(h - cfg.patch_rows + 1)
        for c in range(w - cfg.patch_cols + 1)
        if not _overlaps((r, c), avoid, cfg)
    ]
    if not free:
        raise DimensionError(
            f"no non-overlapping {cfg.patch_rows}x{cfg.patch_cols} window exists on a {h}x{w} map"
        )
    return free[int(rng.integers(len(free)))]


def sample_patch(f: Tensor, image_index: int, cfg: SampleConfig, rng: np.random.Generator) -> PatchVector:
    _check_fit(f, cfg)
    r, c = draw_origin(f, cfg, rng)
    origin = (image_index, r, c)
    return PatchVector(gather_windows(f, [origin], cfg.patch_rows, cfg.patch_cols)[0], origin)


def sample_pair(f: Tensor, image_index: int, cfg: SampleConfig, rng: np.random.Generator) -> tuple[PatchVector, PatchVector]:
    """Two independent draws from one image; overlap allowed unless configured otherwise."""
    _check_fit(f, cfg)
    first = draw_origin(f, cfg, rng)
    second = _draw_excluding(f, cfg, rng, first) if cfg.exclude_overlap else draw_origin(f, cfg, rng)
    origins = [(image_index, *first), (image_index, *second)]
    both = gather_windows(f, origins, cfg.patch_rows, cfg.patch_cols)
    return PatchVector(both[0], origins[0]), PatchVector(both[1], origins[1])


def build_distance_matrix(f: Tensor, cfg: SampleConfig, rng: np.random.Generator) -> DistanceMatrix:
    """Sample anchors and contrasts for a batch and return all N^2 distances.

    Origins are drawn in the double-loop order: anchor i, then contrasts
    (i, 0..N-1). With ``fresh_contrast_per_pair`` off, image j's contrast is
    drawn once up front and shared by every row.
    """
    _check_fit(f, cfg)
    n = f.shape[0]

    def contrast(j: int, anchor_rc: tuple[int, int]) -> tuple[int, int, int]:
        # overlap exclusion only concerns the same image's anchor
        if cfg.exclude_overlap and anchor_rc is not None:
            return (j, *_draw_excluding(f, cfg, rng, anchor_rc))
        return (j, *draw_origin(f, cfg, rng))

    anchors: list[tuple[int, int, int]] = []
    contrasts: list[list[tuple[int, int, int]]] = []
    if cfg.fresh_contrast_per_pair:
        for i in range(n):
            anchors.append((i, *draw_origin(f, cfg, rng)))
            contrasts.append([contrast(j, anchors[i][1:] if j == i else None) for j in range(n)])
    else:
        anchors = [(i, *draw_origin(f, cfg, rng)) for i in range(n)]
        shared = [contrast(j, anchors[j][1:]) for j in range(n)]
        contrasts = [list(shared) for _ in range(n)]

    flat = anchors + [o for row in contrasts for o in row]
    vecs = gather_windows(f, flat, cfg.patch_rows, cfg.patch_cols)
    if cfg.normalize:
        vecs = l2_normalize(vecs)
    d = vecs.shape[1]
    a = vecs[:n].reshape(n, 1, d)
    c = vecs[n:].reshape(n, n, d)
    return DistanceMatrix(distance(a, c), anchors, contrasts)
