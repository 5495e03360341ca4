"""Online Kohonen self-organising map on a rectangular grid."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from hsaw.errors import DomainError, ShapeError
from hsaw.rng import SplitMix64, derive_seed

FINAL_ALPHA = 0.01
FINAL_SIGMA = 0.5


@dataclass
class SomTrainConfig:
    epochs: int = 30
    alpha0: float = 0.5
    sigma0: Optional[float] = None  # defaults to max(rows, cols) / 2
    seed: int = 0

    def resolved_sigma0(self, rows: int, cols: int) -> float:
        return self.sigma0 if self.sigma0 is not None else max(rows, cols) / 2

    def validate(self, rows: int, cols: int) -> None:
        if not 0 < self.alpha0 <= 1:
            raise DomainError(f"alpha0 must be in (0, 1], got {self.alpha0}")
        if self.resolved_sigma0(rows, cols) < 0.5:
            raise DomainError("sigma0 must be >= 0.5")
        if self.epochs < 1:
            raise DomainError("epochs must be >= 1")


@dataclass
class SomGrid:
    rows: int
    cols: int
    prototypes: np.ndarray  # (rows * cols, d) float32
    trained: bool = False

    @property
    def dim(self) -> int:
        return self.prototypes.shape[1]

    @property
    def size(self) -> int:
        return self.rows * self.cols

    def coords(self) -> np.ndarray:
        r, c = np.divmod(np.arange(self.size), self.cols)
        return np.stack([r, c], axis=1).astype(np.float64)


def _as_features(features) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[None]
    if x.ndim > 2:
        x = x.reshape(x.shape[0], -1)
    return x


def _schedule(start: float, end: float, step: int, total: int) -> float:
    """Exponential decay from ``start`` to ``end`` over ``total`` steps."""
    if total <= 1:
        return end
    return start * (end / start) ** (step / (total - 1))


def initial_grid(features, rows: int = 4, cols: int = 4,
                 config: Optional[SomTrainConfig] = None) -> SomGrid:
    """The seeded starting prototypes that ``train_som`` refines."""
    config = config or SomTrainConfig()
    x = _as_features(features)
    init = SplitMix64(derive_seed(config.seed, "som")).permutation(x.shape[0])[: rows * cols]
    return SomGrid(rows, cols, x[init].astype(np.float32))


def train_som(features, rows: int = 4, cols: int = 4,
              config: Optional[SomTrainConfig] = None) -> SomGrid:
    """Fit prototypes with classic online updates and a Gaussian neighbourhood.

    Prototypes start as a seeded sample of the training features. Learning
    rate and radius decay exponentially to (0.01, 0.5) across all updates.
    """
    config = config or SomTrainConfig()
    config.validate(rows, cols)
    x = _as_features(features)
    n = x.shape[0]
    if n < rows * cols:
        raise DomainError(f"train_som needs at least {rows * cols} samples for a {rows}x{cols} grid, got {n}")
    rng = SplitMix64(derive_seed(config.seed, "som"))
    init = rng.permutation(n)[: rows * cols]
    grid = SomGrid(rows, cols, x[init].astype(np.float32))
    protos = x[init].copy()
    coords = grid.coords()
    sigma0 = config.resolved_sigma0(rows, cols)
    total = config.epochs * n
    step = 0
    for _ in range(config.epochs):
        for i in rng.permutation(n):
            alpha = _schedule(config.alpha0, FINAL_ALPHA, step, total)
            sigma = max(_schedule(sigma0, FINAL_SIGMA, step, total), FINAL_SIGMA)
            d2 = ((protos - x[i]) ** 2).sum(axis=1)
            b = int(np.argmin(d2))
            g2 = ((coords - coords[b]) ** 2).sum(axis=1)
            h = alpha * np.exp(-g2 / (2.0 * sigma * sigma))
            protos += h[:, None] * (x[i] - protos)
            step += 1
    grid.prototypes = protos.astype(np.float32)
    grid.trained = True
    return grid


def bmu_batch(grid: SomGrid, features) -> np.ndarray:
    x = _as_features(features)
    if x.shape[1] != grid.dim:
        raise ShapeError(f"feature dim {x.shape[1]} does not match SOM prototype dim {grid.dim}")
    p = grid.prototypes.astype(np.float64)
    d2 = (x * x).sum(1)[:, None] - 2.0 * x @ p.T + (p * p).sum(1)[None, :]
    # recompute exactly for near-ties so the lowest index wins deterministically
    best = d2.min(axis=1, keepdims=True)
    cand = d2 <= best + 1e-9 * (1.0 + np.abs(best))
    out = np.empty(x.shape[0], dtype=np.int64)
    for i in range(x.shape[0]):
        idx = np.flatnonzero(cand[i])
        if idx.size == 1:
            out[i] = idx[0]
        else:
            exact = ((p[idx] - x[i]) ** 2).sum(axis=1)
            out[i] = idx[int(np.argmin(exact))]
    return out


def bmu(grid: SomGrid, x) -> int:
    """Index of the nearest prototype (Euclidean); ties go to the lowest index."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size != grid.dim:
        raise ShapeError(f"feature dim {x.size} does not match SOM prototype dim {grid.dim}")
    return int(bmu_batch(grid, x[None])[0])


def quantization_error(grid: SomGrid, features) -> float:
    x = _as_features(features)
    b = bmu_batch(grid, x)
    p = grid.prototypes.astype(np.float64)[b]
    return float(np.sqrt(((x - p) ** 2).sum(axis=1)).mean())
