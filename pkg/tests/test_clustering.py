"""Clustering: k-means against a brute-force partition oracle, silhouette
against a direct-definition reimplementation, representatives and nesting."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graspselect.clustering import (ClusterConfig, diversify,
                                    diversify_nested, kmeans,
                                    kmeans_multi_restart, nested_refinement,
                                    select_k, silhouette)
from graspselect.errors import ConfigError, SingleCluster, TooFewPoints

from conftest import make_candidates

# --- independent oracles -----------------------------------------------------

_RGS_CACHE: dict[tuple[int, int], np.ndarray] = {}


def all_partitions(n: int, max_k: int) -> np.ndarray:
    """All restricted-growth label vectors of length n with <= max_k blocks."""
    key = (n, max_k)
    if key not in _RGS_CACHE:
        rows = []

        def grow(prefix, used):
            if len(prefix) == n:
                rows.append(prefix)
                return
            for label in range(min(used + 1, max_k)):
                grow(prefix + [label], max(used, label + 1))

        grow([0], 1)
        _RGS_CACHE[key] = np.array(rows, dtype=np.int64)
    return _RGS_CACHE[key]


def brute_force_inertia(points: np.ndarray, k: int) -> float:
    """Globally optimal k-clustering inertia by enumerating all partitions."""
    n = len(points)
    labels = all_partitions(n, k)
    onehot = labels[:, :, None] == np.arange(k)[None, None, :]  # (A, n, k)
    counts = onehot.sum(axis=1)  # (A, k)
    sums = np.einsum("ank,nd->akd", onehot.astype(np.float64), points)
    total_sq = float(np.sum(points ** 2))
    with np.errstate(divide="ignore", invalid="ignore"):
        per_cluster = np.where(counts > 0,
                               np.sum(sums ** 2, axis=2) / np.maximum(counts, 1),
                               0.0)
    return float(total_sq - per_cluster.sum(axis=1).max())


def silhouette_direct(points: np.ndarray, assign: np.ndarray) -> float:
    """Silhouette straight from the definition, all plain loops."""
    n = len(points)
    labels = sorted(set(assign.tolist()))
    scores = []
    for i in range(n):
        own = [j for j in range(n) if assign[j] == assign[i] and j != i]
        if not own:
            scores.append(0.0)
            continue
        a = sum(np.linalg.norm(points[i] - points[j]) for j in own) / len(own)
        b = min(
            sum(np.linalg.norm(points[i] - points[j])
                for j in range(n) if assign[j] == lab) /
            sum(1 for j in range(n) if assign[j] == lab)
            for lab in labels if lab != assign[i])
        denom = max(a, b)
        scores.append(0.0 if denom == 0 else (b - a) / denom)
    return float(np.mean(scores))


# --- tests -------------------------------------------------------------------

class TestConfig:
    def test_validation(self):
        with pytest.raises(ConfigError):
            ClusterConfig(k=0)
        with pytest.raises(ConfigError):
            ClusterConfig(k="many")
        with pytest.raises(ConfigError):
            ClusterConfig(max_iterations=0)
        with pytest.raises(ConfigError):
            ClusterConfig(auto_k_range=(1, 5))
        assert ClusterConfig(k="auto").k == "auto"


class TestKmeans:
    def test_separated_blobs_recovered(self, rng):
        blobs = [rng.normal(loc=c, scale=0.01, size=(10, 3))
                 for c in ([0, 0, 0], [1, 0, 0], [0, 1, 0])]
        points = np.vstack(blobs)
        assign, centroids, inertia = kmeans(points, 3)
        # Every blob maps to a single cluster.
        for b in range(3):
            assert len(set(assign[10 * b:10 * (b + 1)].tolist())) == 1
        assert inertia < 0.1

    def test_k_bounds(self, rng):
        points = rng.normal(size=(4, 3))
        with pytest.raises(TooFewPoints):
            kmeans(points, 5)
        with pytest.raises(TooFewPoints):
            kmeans(points, 0)

    def test_deterministic_for_seed(self, rng):
        points = rng.normal(size=(30, 3))
        r1 = kmeans(points, 3, ClusterConfig(seed=7))
        r2 = kmeans(points, 3, ClusterConfig(seed=7))
        assert np.array_equal(r1[0], r2[0])
        assert r1[2] == r2[2]

    def test_multi_restart_reaches_brute_force_optimum(self):
        rng = np.random.default_rng(42)
        for trial in range(30):
            n = int(rng.integers(4, 11))
            k = int(rng.integers(2, 4))
            points = rng.uniform(-1, 1, size=(n, 3))
            _, _, inertia = kmeans_multi_restart(points, k)
            optimum = brute_force_inertia(points, k)
            assert inertia == pytest.approx(optimum, abs=1e-9)

    def test_single_restart_never_beats_optimum(self, rng):
        points = rng.uniform(-1, 1, size=(9, 3))
        _, _, inertia = kmeans(points, 3)
        assert inertia >= brute_force_inertia(points, 3) - 1e-9


class TestSilhouette:
    def test_matches_direct_definition(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            n = int(rng.integers(4, 15))
            points = rng.normal(size=(n, 3))
            assign = rng.integers(0, 3, size=n)
            if len(set(assign.tolist())) < 2:
                assign[0] = (assign[1] + 1) % 3
            assert silhouette(points, assign) == pytest.approx(
                silhouette_direct(points, assign), abs=1e-12)

    def test_well_separated_near_one(self):
        points = np.vstack([np.zeros((5, 3)), np.full((5, 3), 10.0)])
        points += np.random.default_rng(0).normal(scale=1e-3, size=points.shape)
        assign = np.array([0] * 5 + [1] * 5)
        assert silhouette(points, assign) > 0.99

    def test_single_cluster_rejected(self, rng):
        with pytest.raises(SingleCluster):
            silhouette(rng.normal(size=(5, 3)), np.zeros(5, dtype=int))

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_range_bounded(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(4, 12))
        points = rng.normal(size=(n, 3))
        assign = rng.integers(0, 2, size=n)
        if len(set(assign.tolist())) < 2:
            assign[0] = 1 - assign[0]
        s = silhouette(points, assign)
        assert -1.0 <= s <= 1.0


class TestSelectK:
    def test_finds_obvious_k(self, rng):
        blobs = [rng.normal(loc=c, scale=0.02, size=(12, 3))
                 for c in ([0, 0, 0], [3, 0, 0], [0, 3, 0], [0, 0, 3])]
        assert select_k(np.vstack(blobs), ClusterConfig(auto_k_range=(2, 6))) == 4

    def test_needs_three_points(self, rng):
        with pytest.raises(TooFewPoints):
            select_k(rng.normal(size=(2, 3)))

    def test_tie_prefers_smaller_k(self):
        # Two tight blobs: every k >= 3 scores no better than k = 2.
        rng = np.random.default_rng(1)
        points = np.vstack([rng.normal(loc=0, scale=0.01, size=(8, 3)),
                            rng.normal(loc=5, scale=0.01, size=(8, 3))])
        assert select_k(points, ClusterConfig(auto_k_range=(2, 5))) == 2


class TestDiversify:
    def test_representative_is_cluster_argmax(self, rng):
        contacts = rng.uniform(-0.1, 0.1, size=(30, 3))
        confs = rng.uniform(0.1, 0.9, size=30)
        cands = make_candidates(contacts, confs)
        result, reps = diversify(cands, ClusterConfig(k=3))
        for cluster, rep_id in enumerate(result.representatives):
            members = [cid for cid, c in result.assignments.items() if c == cluster]
            best = max(members, key=lambda cid: (cands.by_id(cid).confidence, -cid))
            assert rep_id == best
        assert len(reps) == len(result.representatives)

    def test_confidence_tie_breaks_to_lower_id(self):
        cands = make_candidates([[0, 0, 0], [0.001, 0, 0], [1, 0, 0]],
                                [0.5, 0.5, 0.9])
        result, _ = diversify(cands, ClusterConfig(k=2))
        cluster_of_0 = result.assignments[0]
        assert result.representatives[cluster_of_0] == 0

    def test_coincident_points_backfill_distinct_ids(self):
        # All contacts identical: clustering degenerates, but the three
        # best-confidence candidates still come out as distinct ids.
        cands = make_candidates([[0, 0, 0]] * 5, [0.9, 0.8, 0.7, 0.6, 0.5])
        result, reps = diversify(cands, ClusterConfig(k=3))
        assert sorted(result.representatives) == [0, 1, 2]

    def test_rescaled_confidences_keep_representatives(self, rng):
        contacts = rng.uniform(-0.1, 0.1, size=(20, 3))
        confs = rng.uniform(0.1, 0.5, size=20)
        a, _ = diversify(make_candidates(contacts, confs), ClusterConfig(k=3))
        b, _ = diversify(make_candidates(contacts, confs * 1.8), ClusterConfig(k=3))
        assert a.representatives == b.representatives

    def test_k_clamped_to_size(self):
        cands = make_candidates([[0, 0, 0], [1, 0, 0]], [0.5, 0.6])
        result, reps = diversify(cands, ClusterConfig(k=5))
        assert len(reps) == 2

    def test_empty_set_rejected(self):
        from graspselect.candidates import CandidateSet
        with pytest.raises(TooFewPoints):
            diversify(CandidateSet(candidates=()))

    def test_auto_k(self, rng):
        blobs = [rng.normal(loc=c, scale=0.002, size=(8, 3))
                 for c in ([0, 0, 0], [0.5, 0, 0], [0, 0.5, 0])]
        contacts = np.vstack(blobs)
        cands = make_candidates(contacts, rng.uniform(0.2, 0.8, size=24))
        result, reps = diversify(cands, ClusterConfig(k="auto"))
        assert len(reps) == 3

    def test_result_serializes(self, rng):
        cands = make_candidates(rng.uniform(size=(10, 3)),
                                rng.uniform(0.1, 0.9, size=10))
        result, _ = diversify(cands, ClusterConfig(k=2))
        d = result.to_dict()
        assert set(d) == {"assignments", "centroids", "representatives", "inertia"}
        assert len(d["assignments"]) == 10


class TestNestedRefinement:
    def test_assignments_nest(self, rng):
        points = rng.uniform(-1, 1, size=(40, 3))
        levels = nested_refinement(points, 6)
        assert len(levels) == 6
        for k in range(1, 6):
            prev, cur = levels[k - 1], levels[k]
            # Each cluster at level k+1 sits inside one cluster at level k.
            for label in set(cur.tolist()):
                parents = set(prev[cur == label].tolist())
                assert len(parents) == 1

    def test_level_sizes(self, rng):
        points = rng.uniform(-1, 1, size=(25, 3))
        for k, assign in enumerate(nested_refinement(points, 5), start=1):
            assert len(set(assign.tolist())) == k

    def test_representatives_persist_as_k_grows(self, rng):
        contacts = rng.uniform(-0.2, 0.2, size=(30, 3))
        cands = make_candidates(contacts, rng.uniform(0.1, 0.9, size=30))
        previous: set[int] = set()
        for k in range(1, 7):
            result, _ = diversify_nested(cands, k)
            current = set(result.representatives)
            assert previous <= current
            previous = current
