"""Single cross-modal GAN versus the hierarchy on the same train/test pair."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from hsaw.detector import AbnormalitySignal, abnormality_signal
from hsaw.evaluation import RocCurve, false_positives, metrics_dict, roc
from hsaw.hierarchy import BuildConfig, Hierarchy, build_hierarchy
from hsaw.scene import ActivityLabel, ScenarioData, subset_indices


@dataclass
class CompareReport:
    hierarchy: Hierarchy
    single: Hierarchy
    signal_hierarchy: AbnormalitySignal
    signal_single: AbnormalitySignal
    roc_hierarchy: RocCurve
    roc_single: RocCurve
    curve_fp_hierarchy: int
    curve_fp_single: int

    def summary(self) -> dict:
        return {
            "hierarchy": {**metrics_dict(self.roc_hierarchy), "curve_false_positives": self.curve_fp_hierarchy,
                          "levels": len(self.hierarchy)},
            "single": {**metrics_dict(self.roc_single), "curve_false_positives": self.curve_fp_single},
        }


def train_single(train: ScenarioData, config: BuildConfig, dataset_fingerprint: str = "") -> Hierarchy:
    """One pair on the entire training sequence, wrapped as a one-level hierarchy."""
    cfg = replace(config, max_levels=1)
    return build_hierarchy(train.frames, train.flows, np.arange(len(train)), cfg, dataset_fingerprint)


def train_hierarchy(train: ScenarioData, config: BuildConfig, dataset_fingerprint: str = "") -> Hierarchy:
    seed_subset = subset_indices(train, ActivityLabel.Straight)
    return build_hierarchy(train.frames, train.flows, seed_subset, config, dataset_fingerprint)


def evaluate_models(hierarchy: Hierarchy, single: Hierarchy, test: ScenarioData,
                    reduce: str = "mean") -> CompareReport:
    labels = test.is_anomalous
    curve = test.labels == ActivityLabel.Curve
    sig_h = abnormality_signal(hierarchy, test.frames, test.flows, reduce)
    sig_s = abnormality_signal(single, test.frames, test.flows, reduce)
    roc_h = roc(sig_h.normalized, labels)
    roc_s = roc(sig_s.normalized, labels)
    return CompareReport(
        hierarchy, single, sig_h, sig_s, roc_h, roc_s,
        false_positives(sig_h.normalized, labels, roc_h.eer_threshold, curve),
        false_positives(sig_s.normalized, labels, roc_s.eer_threshold, curve),
    )


def compare_single_vs_hierarchy(train: ScenarioData, test: ScenarioData,
                                config: Optional[BuildConfig] = None, reduce: str = "mean",
                                dataset_fingerprint: str = "") -> CompareReport:
    config = config or BuildConfig()
    hierarchy = train_hierarchy(train, config, dataset_fingerprint)
    single = train_single(train, config, dataset_fingerprint)
    return evaluate_models(hierarchy, single, test, reduce)
