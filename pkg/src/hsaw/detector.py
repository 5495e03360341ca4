"""Test-time routing through the hierarchy and the abnormality signal."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from hsaw.hierarchy import Hierarchy, level_scores
from hsaw.som import bmu_batch


@dataclass
class Verdict:
    is_abnormal: bool
    accepted_level: Optional[int]
    y_tilde: float
    per_level_scores: list = field(default_factory=list)


@dataclass
class AbnormalitySignal:
    raw: np.ndarray
    normalized: np.ndarray
    frame_indices: np.ndarray
    verdicts: list

    @property
    def accepted_levels(self) -> np.ndarray:
        return np.array([-1 if v.accepted_level is None else v.accepted_level for v in self.verdicts])

    @property
    def is_abnormal(self) -> np.ndarray:
        return np.array([v.is_abnormal for v in self.verdicts], dtype=bool)


def _reduce(dmaps: np.ndarray, reduce: str) -> np.ndarray:
    flat = dmaps.reshape(len(dmaps), -1)
    if reduce == "mean":
        return flat.mean(axis=1, dtype=np.float64)
    if reduce == "max":
        return flat.max(axis=1).astype(np.float64)
    raise ValueError(f"reduce must be 'mean' or 'max', got {reduce!r}")


def route_batch(hierarchy: Hierarchy, frames: np.ndarray, flows: np.ndarray,
                tau: Optional[float] = None, reduce: str = "mean") -> list[Verdict]:
    """Route every couple; a couple stops at the first level whose neuron is normal.

    ``tau`` overrides the hierarchy's final threshold. ``reduce="max"`` uses
    the largest distance-map entry instead of the mean as the measurement.
    """
    tau = hierarchy.tau if tau is None else tau
    n = frames.shape[0]
    per_level = [[] for _ in range(n)]
    accepted: list[Optional[int]] = [None] * n
    y = np.zeros(n)
    active = np.arange(n)
    for level in hierarchy.levels:
        if active.size == 0:
            break
        dmaps, _ = level_scores(level.pair, frames[active], flows[active])
        s = _reduce(dmaps, reduce)
        b = bmu_batch(level.som, dmaps.reshape(len(active), -1))
        normal = level.normal_mask[b]
        for j, i in enumerate(active):
            per_level[i].append(float(s[j]))
            y[i] = s[j]
            if normal[j]:
                accepted[i] = level.index
        active = active[~normal]
    last = len(hierarchy.levels) - 1
    verdicts = []
    for i in range(n):
        if accepted[i] is not None:
            verdicts.append(Verdict(False, accepted[i], float(y[i]), per_level[i]))
        elif y[i] > tau:
            verdicts.append(Verdict(True, None, float(y[i]), per_level[i]))
        else:
            # rejected by every neuron but under the final threshold
            verdicts.append(Verdict(False, last, float(y[i]), per_level[i]))
    return verdicts


def route(hierarchy: Hierarchy, couple, tau: Optional[float] = None, reduce: str = "mean") -> Verdict:
    frame = np.asarray(couple.frame, dtype=np.float32).transpose(2, 0, 1)[None]
    flow = np.asarray(couple.flow, dtype=np.float32).transpose(2, 0, 1)[None]
    return route_batch(hierarchy, frame, flow, tau, reduce)[0]


def minmax_normalize(raw) -> np.ndarray:
    raw = np.asarray(raw, dtype=np.float64)
    lo, hi = raw.min(), raw.max()
    if hi - lo <= 0:
        return np.zeros_like(raw)
    return (raw - lo) / (hi - lo)


def abnormality_signal(hierarchy: Hierarchy, frames: np.ndarray, flows: np.ndarray,
                       reduce: str = "mean") -> AbnormalitySignal:
    """Per-frame measurement from the deepest level each frame reached."""
    if frames.shape[0] == 0:
        raise ValueError("abnormality_signal needs a non-empty sequence")
    verdicts = route_batch(hierarchy, frames, flows, reduce=reduce)
    raw = np.array([v.y_tilde for v in verdicts])
    return AbnormalitySignal(raw, minmax_normalize(raw), np.arange(len(raw)), verdicts)
