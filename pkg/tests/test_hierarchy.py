import math

import numpy as np
import pytest

from hsaw.errors import DomainError
from hsaw.gan import GanConfig, distance_maps
from hsaw.hierarchy import BuildConfig, build_hierarchy, cluster_statistics, compute_theta_auto, level_scores
from hsaw.scene import ActivityLabel, ScenarioConfig, split_subset, subset_indices, synthesize_scenario
from hsaw.som import bmu_batch

FAST = GanConfig(epochs=2)


@pytest.fixture(scope="module")
def small():
    return synthesize_scenario(ScenarioConfig(scenario=1, laps=1, image_size=(32, 32)))


def test_theta_examples():
    assert compute_theta_auto([0.3] * 5, 1.0) == pytest.approx(0.3)
    assert compute_theta_auto([0.0, 1.0], 1.0) == 1.0
    assert compute_theta_auto([0.2, 0.4, 0.9], 0.0) == pytest.approx(0.5)
    assert compute_theta_auto([0.0, 1.0], 3.0) == 2.0
    with pytest.raises(DomainError):
        compute_theta_auto([])


def test_config_validation():
    with pytest.raises(DomainError):
        BuildConfig(max_levels=0).validate()
    with pytest.raises(DomainError):
        BuildConfig(min_cluster_frac=0.5).validate()
    with pytest.raises(DomainError):
        BuildConfig(theta_policy="median").validate()


def test_infinite_fixed_theta_gives_one_level(small):
    cfg = BuildConfig(theta_policy="fixed", theta=math.inf, gan=FAST, som_epochs=2)
    h = build_hierarchy(small.frames, small.flows, subset_indices(small, ActivityLabel.Straight), cfg)
    assert len(h) == 1
    assert h.tau == math.inf
    assert np.all(h.levels[0].normal_mask)


def test_empty_or_invalid_seed_subset(small):
    with pytest.raises(DomainError):
        build_hierarchy(small.frames, small.flows, [], BuildConfig(gan=FAST))
    with pytest.raises(DomainError):
        build_hierarchy(small.frames, small.flows, [0, 500], BuildConfig(gan=FAST))


@pytest.fixture(scope="module")
def forced(small):
    # theta = 0 marks every neuron abnormal, so each level spawns from all unaccepted members
    cfg = BuildConfig(theta_policy="fixed", theta=0.0, max_levels=2, gan=FAST, som_rows=2, som_cols=2, som_epochs=2)
    return build_hierarchy(small.frames, small.flows, subset_indices(small, ActivityLabel.Straight), cfg)


def test_recursion_soundness_and_coverage(forced, small):
    assert len(forced) == 2
    l0, l1 = forced.levels
    assert np.array_equal(l0.train_indices, subset_indices(small, ActivityLabel.Straight))
    dm, _ = level_scores(l0.pair, small.frames, small.flows)
    b = bmu_batch(l0.som, dm.reshape(len(small), -1))
    abnormal_members = np.flatnonzero(~l0.normal_mask[b])
    assert set(l1.train_indices) <= set(abnormal_members)
    for lvl in forced.levels:
        assert len(np.unique(lvl.train_indices)) == len(lvl.train_indices)
        assert lvl.train_indices.min() >= 0 and lvl.train_indices.max() < len(small)
    assert forced.tau == l1.theta


def test_normal_mask_follows_stats(forced):
    for lvl in forced.levels:
        assert np.array_equal(lvl.normal_mask, lvl.cluster_mu < lvl.theta)
        assert lvl.cluster_count.sum() == 128


def test_level_scores_are_map_means(forced, small):
    pair = forced.levels[0].pair
    dm, s = level_scores(pair, small.frames[:7], small.flows[:7])
    ref = distance_maps(pair, small.frames[:7], small.flows[:7])
    assert np.array_equal(dm, ref)
    np.testing.assert_allclose(s, [float(m.astype(np.float64).mean()) for m in ref])


def test_cluster_statistics_empty_neuron_uses_prototype(forced, small):
    lvl = forced.levels[0]
    feats = np.zeros((3, lvl.som.dim))
    mu, count = cluster_statistics(lvl.som, feats, np.array([0.1, 0.2, 0.3]))
    hit = bmu_batch(lvl.som, feats)[0]
    assert count[hit] == 3 and mu[hit] == pytest.approx(0.2)
    for c in np.flatnonzero(count == 0):
        assert mu[c] == pytest.approx(float(lvl.som.prototypes[c].astype(np.float64).mean()))


def test_build_is_deterministic(small):
    cfg = BuildConfig(gan=GanConfig(epochs=1), som_epochs=1, max_levels=1)
    idx = subset_indices(small, ActivityLabel.Straight)
    a = build_hierarchy(small.frames, small.flows, idx, cfg)
    b = build_hierarchy(small.frames, small.flows, idx, cfg)
    assert np.array_equal(a.levels[0].som.prototypes, b.levels[0].som.prototypes)
    assert a.levels[0].theta == b.levels[0].theta


def test_homogeneous_sequence_gives_one_level():
    data = synthesize_scenario(ScenarioConfig(scenario=1, laps=1))
    straight = split_subset(data, ActivityLabel.Straight)
    h = build_hierarchy(straight.frames, straight.flows, np.arange(len(straight)), BuildConfig(gan=GanConfig(epochs=10)))
    assert len(h) == 1
    _, s = level_scores(h.levels[0].pair, straight.frames, straight.flows)
    assert s.mean() < h.levels[0].theta
