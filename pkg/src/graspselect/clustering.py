"""Grasp diversification: k-means over contact points plus silhouette auto-K.

The clustering is deliberately self-contained (no sklearn): the empty-cluster
repair rule, tie-breaking and seeding behavior are part of the pipeline
contract, because cluster representatives drive the prompt layout downstream.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .candidates import CandidateSet
from .errors import ConfigError, SingleCluster, TooFewPoints


@dataclass(frozen=True)
class ClusterConfig:
    k: int | str = 3  # fixed count or "auto"
    max_iterations: int = 100
    convergence_tol: float = 1e-6  # meters of centroid displacement
    seed: int = 0
    auto_k_range: tuple[int, int] = (2, 8)

    def __post_init__(self):
        if self.k != "auto" and (not isinstance(self.k, int) or self.k < 1):
            raise ConfigError("k must be a positive integer or 'auto'")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")
        if self.convergence_tol <= 0:
            raise ConfigError("convergence_tol must be positive")
        lo, hi = self.auto_k_range
        if lo < 2 or hi < lo:
            raise ConfigError("auto_k_range lower bound must be >= 2")


@dataclass(frozen=True)
class ClusterResult:
    assignments: dict[int, int]  # candidate id -> cluster index
    centroids: np.ndarray  # (k, 3)
    representatives: tuple[int, ...]  # candidate ids, one per cluster
    inertia: float

    def to_dict(self) -> dict:
        return {
            "assignments": {str(k): int(v) for k, v in sorted(self.assignments.items())},
            "centroids": [[float(x) for x in c] for c in self.centroids],
            "representatives": [int(r) for r in self.representatives],
            "inertia": float(self.inertia),
        }


def _as_points(points) -> np.ndarray:
    return np.asarray(points, dtype=np.float64).reshape(-1, 3)


def _assign(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    d2 = np.sum((points[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
    return np.argmin(d2, axis=1)  # ties -> lowest centroid index


def _inertia(points: np.ndarray, centroids: np.ndarray,
             assign: np.ndarray) -> float:
    return float(np.sum((points - centroids[assign]) ** 2))


def kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator,
                   first: int | None = None) -> np.ndarray:
    """k-means++ seeding; ``first`` pins the initial centroid's point index."""
    n = len(points)
    chosen = [rng.integers(n) if first is None else first]
    d2 = np.sum((points - points[chosen[0]]) ** 2, axis=1)
    while len(chosen) < k:
        total = d2.sum()
        if total <= 0:
            # All remaining points coincide with a centroid; pick arbitrarily.
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        chosen.append(idx)
        d2 = np.minimum(d2, np.sum((points - points[idx]) ** 2, axis=1))
    return points[chosen].copy()


def lloyd(points: np.ndarray, centroids: np.ndarray,
          max_iterations: int, tol: float) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd iterations with farthest-point repair for empty clusters."""
    k = len(centroids)
    centroids = centroids.copy()
    assign = _assign(points, centroids)
    for _ in range(max_iterations):
        new = centroids.copy()
        for c in range(k):
            members = points[assign == c]
            if len(members):
                new[c] = members.mean(axis=0)
            else:
                far = int(np.argmax(np.sum((points - centroids[assign]) ** 2, axis=1)))
                new[c] = points[far]
        new_assign = _assign(points, new)
        shift = float(np.max(np.linalg.norm(new - centroids, axis=1)))
        centroids, assign = new, new_assign
        if shift < tol:
            break
    return assign, centroids


def kmeans(points, k: int, cfg: ClusterConfig | None = None) -> tuple[np.ndarray, np.ndarray, float]:
    """Seeded k-means++ plus Lloyd; returns (assignments, centroids, inertia)."""
    cfg = cfg or ClusterConfig()
    points = _as_points(points)
    if k < 1 or k > len(points):
        raise TooFewPoints(f"k={k} with {len(points)} points")
    rng = np.random.default_rng(cfg.seed)
    init = kmeans_pp_init(points, k, rng)
    assign, centroids = lloyd(points, init, cfg.max_iterations, cfg.convergence_tol)
    return assign, centroids, _inertia(points, centroids, assign)


def kmeans_multi_restart(points, k: int,
                         cfg: ClusterConfig | None = None) -> tuple[np.ndarray, np.ndarray, float]:
    """Best-of-many k-means: every point serves as an initial seed once.

    For small instances all k-subsets of points are additionally tried as
    initializations, which in practice recovers the global optimum.
    """
    cfg = cfg or ClusterConfig()
    points = _as_points(points)
    n = len(points)
    if k < 1 or k > n:
        raise TooFewPoints(f"k={k} with {n} points")
    inits: list[np.ndarray] = []
    rng = np.random.default_rng(cfg.seed)
    for first in range(n):
        inits.append(kmeans_pp_init(points, k, rng, first=first))
    n_subsets = 1
    for i in range(k):
        n_subsets = n_subsets * (n - i) // (i + 1)
    if n_subsets <= 2000:
        for combo in itertools.combinations(range(n), k):
            inits.append(points[list(combo)].copy())
    best = None
    for init in inits:
        assign, centroids = lloyd(points, init, cfg.max_iterations,
                                  cfg.convergence_tol)
        inertia = _inertia(points, centroids, assign)
        if best is None or inertia < best[2]:
            best = (assign, centroids, inertia)
    return best


def silhouette(points, assignments) -> float:
    """Mean silhouette over points; singletons and zero-spread pairs score 0."""
    points = _as_points(points)
    assignments = np.asarray(assignments, dtype=np.int64)
    labels = np.unique(assignments)
    if len(labels) < 2:
        raise SingleCluster("silhouette needs at least 2 non-empty clusters")
    diff = points[:, None, :] - points[None, :, :]
    dist = np.sqrt(np.sum(diff ** 2, axis=2))
    scores = np.zeros(len(points))
    for i in range(len(points)):
        own = assignments == assignments[i]
        n_own = int(own.sum())
        if n_own == 1:
            continue  # singleton: s(i) = 0
        a = dist[i, own].sum() / (n_own - 1)
        b = np.inf
        for lab in labels:
            if lab == assignments[i]:
                continue
            b = min(b, float(dist[i, assignments == lab].mean()))
        denom = max(a, b)
        if denom > 0:
            scores[i] = (b - a) / denom
    return float(scores.mean())


def select_k(points, cfg: ClusterConfig | None = None) -> int:
    """Pick K in the configured range by maximal mean silhouette."""
    cfg = cfg or ClusterConfig()
    points = _as_points(points)
    n = len(points)
    if n < 3:
        raise TooFewPoints(f"auto-K needs >= 3 points, got {n}")
    lo, hi = cfg.auto_k_range
    ks = [k for k in range(lo, hi + 1) if 2 <= k <= n - 1]
    if not ks:
        raise TooFewPoints(f"auto_k_range {cfg.auto_k_range} empty for {n} points")
    best_k, best_score = None, -np.inf
    for k in ks:  # ascending, so ties keep the smaller K
        assign, _, _ = kmeans(points, k, cfg)
        if len(np.unique(assign)) < 2:
            continue
        score = silhouette(points, assign)
        if score > best_score:
            best_k, best_score = k, score
    if best_k is None:
        return ks[0]
    return best_k


def _pick_representatives(cands: CandidateSet, assign: np.ndarray,
                          k: int) -> list[int]:
    """Per-cluster confidence argmax (ties: lower id); empty clusters are
    back-filled with the best unused candidates so exactly k distinct ids
    come out whenever the set allows it."""
    order = list(cands)  # already confidence-desc, id-asc
    reps: list[int | None] = [None] * k
    used: set[int] = set()
    for cluster in range(k):
        for i, cand in enumerate(order):
            if assign[i] == cluster and cand.id not in used:
                reps[cluster] = cand.id
                used.add(cand.id)
                break
    for cluster in range(k):
        if reps[cluster] is None:
            for cand in order:
                if cand.id not in used:
                    reps[cluster] = cand.id
                    used.add(cand.id)
                    break
    return [r for r in reps if r is not None]


def diversify(cands: CandidateSet,
              cfg: ClusterConfig | None = None) -> tuple[ClusterResult, CandidateSet]:
    """Cluster contact points and keep the best grasp per cluster."""
    cfg = cfg or ClusterConfig()
    if len(cands) == 0:
        raise TooFewPoints("cannot diversify an empty candidate set")
    points = cands.contacts()
    n = len(points)
    if cfg.k == "auto":
        k = select_k(points, cfg) if n >= 3 else min(n, 2)
    else:
        k = int(cfg.k)
    k = min(k, n)
    assign, centroids, inertia = kmeans(points, k, cfg)
    rep_ids = _pick_representatives(cands, assign, k)
    assignments = {cand.id: int(assign[i]) for i, cand in enumerate(cands)}
    result = ClusterResult(assignments=assignments, centroids=centroids,
                           representatives=tuple(rep_ids), inertia=inertia)
    reps = CandidateSet(candidates=tuple(cands.by_id(r) for r in rep_ids),
                        source=cands.source)
    return result, reps


# --- nested refinement (for K sweeps) ----------------------------------------

def nested_refinement(points, k_max: int,
                      local_iterations: int = 20) -> list[np.ndarray]:
    """Hierarchical bisecting sweep: assignments for K = 1 .. k_max.

    Each step splits only the cluster containing the point farthest from its
    centroid, so every cluster at level K is a subset of one cluster at level
    K-1. Per-cluster maxima therefore persist as clusters refine, which makes
    sweep metrics well behaved.
    """
    points = _as_points(points)
    n = len(points)
    if k_max < 1 or k_max > n:
        raise TooFewPoints(f"k_max={k_max} with {n} points")
    assign = np.zeros(n, dtype=np.int64)
    centroids = points.mean(axis=0, keepdims=True).copy()
    out = [assign.copy()]
    for k in range(2, k_max + 1):
        d2 = np.sum((points - centroids[assign]) ** 2, axis=1)
        far = int(np.argmax(d2))
        split = assign[far]
        members = np.nonzero(assign == split)[0]
        # Two-centroid Lloyd restricted to the split cluster.
        ca, cb = centroids[split].copy(), points[far].copy()
        local = points[members]
        for _ in range(local_iterations):
            to_b = np.sum((local - cb) ** 2, axis=1) < np.sum((local - ca) ** 2, axis=1)
            if to_b.all() or (~to_b).all():
                break
            na, nb = local[~to_b].mean(axis=0), local[to_b].mean(axis=0)
            if np.allclose(na, ca) and np.allclose(nb, cb):
                ca, cb = na, nb
                break
            ca, cb = na, nb
        to_b = np.sum((local - cb) ** 2, axis=1) < np.sum((local - ca) ** 2, axis=1)
        if not to_b.any():
            to_b[np.argmax(np.sum((local - ca) ** 2, axis=1))] = True
        new_label = k - 1
        assign[members[to_b]] = new_label
        centroids = np.vstack([centroids, cb])
        centroids[split] = points[assign == split].mean(axis=0) \
            if (assign == split).any() else ca
        centroids[new_label] = points[assign == new_label].mean(axis=0)
        out.append(assign.copy())
    return out


def diversify_nested(cands: CandidateSet, k: int) -> tuple[ClusterResult, CandidateSet]:
    """Diversify with the nested-refinement sweep truncated at level k."""
    if len(cands) == 0:
        raise TooFewPoints("cannot diversify an empty candidate set")
    points = cands.contacts()
    k = min(k, len(points))
    assign = nested_refinement(points, k)[k - 1]
    centroids = np.array([points[assign == c].mean(axis=0) for c in range(k)])
    inertia = _inertia(points, centroids, assign)
    rep_ids = _pick_representatives(cands, assign, k)
    assignments = {cand.id: int(assign[i]) for i, cand in enumerate(cands)}
    result = ClusterResult(assignments=assignments, centroids=centroids,
                           representatives=tuple(rep_ids), inertia=inertia)
    reps = CandidateSet(candidates=tuple(cands.by_id(r) for r in rep_ids),
                        source=cands.source)
    return result, reps
