"""Recursive construction of the hierarchy of cross-modal GAN levels.

Level ``l`` trains a pair on its subset, scores *every* training couple,
clusters the fused distance maps with a SOM and marks each neuron normal when
its mean score is below the level threshold. Members of abnormal neurons that
no earlier level accepted become the next level's training subset.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from hsaw.errors import DomainError
from hsaw.gan import CrossModalPair, GanConfig, distance_maps, fingerprint, train_pair
from hsaw.rng import derive_seed
from hsaw.som import SomGrid, SomTrainConfig, bmu_batch, train_som

log = logging.getLogger(__name__)


@dataclass
class BuildConfig:
    theta_policy: str = "auto"  # "auto" or "fixed"
    theta: float = math.inf  # used when theta_policy == "fixed"
    k: float = 3.0  # auto: theta = mean + k * std
    max_levels: int = 4
    min_cluster_frac: float = 0.05
    seed: int = 0
    gan: GanConfig = field(default_factory=GanConfig)
    som_rows: int = 4
    som_cols: int = 4
    som_epochs: int = 30

    def validate(self) -> None:
        if self.theta_policy not in ("auto", "fixed"):
            raise DomainError(f"theta_policy must be 'auto' or 'fixed', got {self.theta_policy!r}")
        if self.max_levels < 1:
            raise DomainError("max_levels must be >= 1")
        if not 0 < self.min_cluster_frac < 0.5:
            raise DomainError("min_cluster_frac must lie in (0, 0.5)")


@dataclass
class HierarchyLevel:
    index: int
    pair: CrossModalPair
    som: SomGrid
    cluster_mu: np.ndarray  # per neuron
    cluster_count: np.ndarray  # per neuron
    theta: float
    train_indices: np.ndarray

    @property
    def normal_mask(self) -> np.ndarray:
        return self.cluster_mu < self.theta

    @property
    def subset_fingerprint(self) -> str:
        return fingerprint(self.train_indices)


@dataclass
class Hierarchy:
    levels: list
    tau: float
    build_config: BuildConfig
    dataset_fingerprint: str = ""

    def __len__(self) -> int:
        return len(self.levels)


def compute_theta_auto(scores, k: float = 1.0) -> float:
    """mean + k * (population) standard deviation of ``scores``."""
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        raise DomainError("compute_theta_auto needs at least one score")
    return float(s.mean() + k * s.std())


def level_scores(pair: CrossModalPair, frames: np.ndarray, flows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Fused distance maps (N, h, w) and their per-sample means."""
    dmaps = distance_maps(pair, frames, flows)
    return dmaps, dmaps.reshape(len(dmaps), -1).mean(axis=1, dtype=np.float64)


def cluster_statistics(som: SomGrid, features: np.ndarray, scores: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-neuron mean member score and member count.

    An empty neuron takes the mean of its own prototype as its score, so a
    test sample mapped to it is judged by what the neuron encodes.
    """
    b = bmu_batch(som, features)
    counts = np.bincount(b, minlength=som.size)
    sums = np.bincount(b, weights=scores, minlength=som.size)
    proto_mu = som.prototypes.astype(np.float64).mean(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        mu = np.where(counts > 0, sums / np.maximum(counts, 1), proto_mu)
    return mu, counts


def _theta_for(config: BuildConfig, train_scores: np.ndarray) -> float:
    if config.theta_policy == "fixed":
        return float(config.theta)
    return compute_theta_auto(train_scores, config.k)


def build_hierarchy(frames: np.ndarray, flows: np.ndarray, initial_subset,
                    config: Optional[BuildConfig] = None, dataset_fingerprint: str = "") -> Hierarchy:
    """Grow levels from ``initial_subset`` (indices into the full sequence)."""
    config = config or BuildConfig()
    config.validate()
    n = frames.shape[0]
    subset = np.unique(np.asarray(initial_subset, dtype=np.int64))
    if subset.size == 0:
        raise DomainError("build_hierarchy: the initial subset is empty")
    if subset.min() < 0 or subset.max() >= n:
        raise DomainError("build_hierarchy: initial subset indexes outside the sequence")

    levels: list[HierarchyLevel] = []
    remaining = np.ones(n, dtype=bool)  # not yet accepted by any level
    for l in range(config.max_levels):
        gan_cfg = _replace_seed(config.gan, derive_seed(config.seed, "level", l, "gan"))
        pair = train_pair(frames[subset], flows[subset], gan_cfg, fingerprint(subset))
        dmaps, scores = level_scores(pair, frames, flows)
        feats = dmaps.reshape(n, -1)
        theta = _theta_for(config, scores[subset])
        som_cfg = SomTrainConfig(epochs=config.som_epochs, seed=derive_seed(config.seed, "level", l, "som"))
        som = train_som(feats, config.som_rows, config.som_cols, som_cfg)
        mu, counts = cluster_statistics(som, feats, scores)
        level = HierarchyLevel(l, pair, som, mu, counts, theta, subset)
        levels.append(level)
        log.info("level %d: |V|=%d theta=%.4f abnormal neurons=%d",
                 l, subset.size, theta, int((~level.normal_mask).sum()))

        if l == config.max_levels - 1:
            break
        b = bmu_batch(som, feats)
        abnormal = remaining & ~level.normal_mask[b]
        chosen = []
        for c in np.flatnonzero(mu >= theta):
            members = np.flatnonzero(abnormal & (b == c))
            if members.size == 0:
                continue
            if members.size / n < config.min_cluster_frac:
                log.info("level %d: neuron %d has %d members, below min_cluster_frac", l, c, members.size)
                continue
            if members.size < config.gan.min_samples:
                log.warning("level %d: neuron %d has %d members (< %d trainable); skipped",
                            l, c, members.size, config.gan.min_samples)
                continue
            chosen.append(members)
        remaining = abnormal
        if not chosen:
            break
        nxt = np.unique(np.concatenate(chosen))
        if nxt.size < config.gan.min_samples:
            log.warning("level %d: spawned subset has %d couples (< %d); not training another level",
                        l, nxt.size, config.gan.min_samples)
            break
        subset = nxt

    return Hierarchy(levels, levels[-1].theta, config, dataset_fingerprint)


def _replace_seed(cfg: GanConfig, seed: int) -> GanConfig:
    return replace(cfg, seed=seed)
