"""Lake clustering, hierarchical quadruple sampling and the multi-level pairwise loss."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import regime_task
from .errors import InvalidArgument, PoolExhausted
from .nets import cosine_sim_grad, log_sigmoid, sigmoid


@dataclass
class ClusterModel:
    centroids: np.ndarray      # (K, F) in standardized feature space
    feature_mean: np.ndarray
    feature_std: np.ndarray
    assignment: dict           # lake_id -> cluster
    distances: np.ndarray      # (K, K) centroid distances

    @property
    def K(self):
        return len(self.centroids)

    def cluster_of(self, lake_id):
        return self.assignment[lake_id]

    def ranked(self, c):
        """Clusters ordered by centroid distance from cluster c (c itself first)."""
        return [int(j) for j in np.lexsort((np.arange(self.K), self.distances[c]))]

    def semi_cluster(self, c):
        return self.ranked(c)[1]

    def far_cluster(self, c):
        return self.ranked(c)[-1]

    def lakes_in(self, c):
        return [lk for lk, cc in self.assignment.items() if cc == c]

    def to_csv(self, path, header=""):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            if header:
                fh.write(f"# {header}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["lake_id", "cluster_id"])
            for lk in sorted(self.assignment):
                w.writerow([lk, self.assignment[lk]])


def _pairwise_sq(X, C):
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)


def kmeans(X, K, rng, max_iter=100, tol=1e-8):
    """Lloyd's algorithm from a k-means++ start; returns (centroids, labels, inertia)."""
    n = len(X)
    centers = [X[rng.integers(n)]]
    for _ in range(1, K):
        d2 = _pairwise_sq(X, np.array(centers)).min(axis=1)
        if d2.sum() == 0:
            centers.append(X[rng.integers(n)])
        else:
            centers.append(X[rng.choice(n, p=d2 / d2.sum())])
    C = np.array(centers, dtype=float)
    for _ in range(max_iter):
        labels = _pairwise_sq(X, C).argmin(axis=1)
        new = C.copy()
        for k in range(K):
            members = X[labels == k]
            if len(members):
                new[k] = members.mean(axis=0)
        shift = np.abs(new - C).max()
        C = new
        if shift < tol:
            break
    d2 = _pairwise_sq(X, C)
    labels = d2.argmin(axis=1)
    return C, labels, float(d2[np.arange(n), labels].sum())


def cluster_lakes(lakes, K=4, seed=0, n_init=4):
    """K-means over standardized static lake features; also writes ``cluster_id`` on each lake."""
    if K < 3:
        raise InvalidArgument(f"need K >= 3 clusters, got {K}")
    if len(lakes) < K:
        raise InvalidArgument(f"{len(lakes)} lakes cannot form {K} clusters")
    F = np.array([lk.static_features() for lk in lakes])
    mean = F.mean(axis=0)
    std = F.std(axis=0)
    std = np.where(std < 1e-12, 1.0, std)
    Z = (F - mean) / std
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        C, labels, inertia = kmeans(Z, K, rng)
        if best is None or inertia < best[2]:
            best = (C, labels, inertia)
    C, labels, _ = best
    assignment = {lk.lake_id: int(c) for lk, c in zip(lakes, labels)}
    for lk in lakes:
        lk.cluster_id = assignment[lk.lake_id]
    dist = np.sqrt(_pairwise_sq(C, C))
    return ClusterModel(C, mean, std, assignment, dist)


@dataclass
class Quadruple:
    anchor: object
    positive: object
    semi_positive: object
    negative: object

    def members(self):
        return (self.anchor, self.positive, self.semi_positive, self.negative)


def month_distance(a, b):
    d = abs(a - b) % 12
    return min(d, 12 - d)


class ScenarioPool:
    """Candidate scenarios for quadruple sampling, indexed by lake and month."""

    def __init__(self, scenarios):
        self.scenarios = list(scenarios)
        self.by_lake_month = {}
        self.by_month_year = {}
        for s in self.scenarios:
            self.by_lake_month.setdefault((s.lake_id, s.month), []).append(s)
            self.by_month_year.setdefault((s.month, s.year), []).append(s)
        self.lakes = sorted({s.lake_id for s in self.scenarios})

    def gather(self, lakes, months):
        out = []
        for lk in lakes:
            for m in months:
                out.extend(self.by_lake_month.get((lk, m), ()))
        return out


def _pick(cands, anchor, rng, slot):
    cands = [c for c in cands if c.id != anchor.id]
    if not cands:
        raise PoolExhausted(slot, f"anchor {anchor.id}")
    return cands[int(rng.integers(len(cands)))]


def sample_quadruple(anchor, pool, clusters, rng, semi_offset=1, neg_min_offset=3):
    """Draw (positive, semi-positive, negative) scenarios for ``anchor`` from ``pool``."""
    c = clusters.cluster_of(anchor.lake_id)
    own = set(clusters.lakes_in(c))

    pos = [s for s in pool.by_lake_month.get((anchor.lake_id, anchor.month), ()) if s.year != anchor.year]
    pos += [s for s in pool.by_month_year.get((anchor.month, anchor.year), ())
            if s.lake_id != anchor.lake_id and s.lake_id in own]

    ranked = clusters.ranked(c)
    semi_c, far_c = ranked[1], ranked[-1]
    if semi_c == far_c:
        raise PoolExhausted("semi-positive", "semi-positive and negative clusters coincide")
    semi_months = sorted({(anchor.month - 1 + d) % 12 + 1 for d in (-semi_offset, semi_offset)})
    semi = pool.gather(clusters.lakes_in(semi_c), semi_months)
    neg_months = [m for m in range(1, 13) if month_distance(m, anchor.month) >= neg_min_offset]
    neg = pool.gather(clusters.lakes_in(far_c), neg_months)

    return Quadruple(anchor, _pick(pos, anchor, rng, "positive"), _pick(semi, anchor, rng, "semi-positive"),
                     _pick(neg, anchor, rng, "negative"))


def _check_lambda(lam):
    if not (0.0 <= lam <= 1.0):
        raise InvalidArgument(f"lambda must lie in [0, 1], got {lam}")


def loss_from_sims(sim_pos, sim_semi, sim_neg, lam):
    _check_lambda(lam)
    z = lam * (sim_pos - sim_semi) + (1 - lam) * (sim_semi - sim_neg)
    return float(-log_sigmoid(z))


def multilevel_loss(s_a, s_pos, s_semi, s_neg, lam):
    return multilevel_loss_grad(s_a, s_pos, s_semi, s_neg, lam)[0]


def multilevel_loss_grad(s_a, s_pos, s_semi, s_neg, lam):
    """Loss and gradients w.r.t. the four embeddings ``(L, dA, dP, dS, dN)``."""
    _check_lambda(lam)
    sp, dA_p, dP = cosine_sim_grad(s_a, s_pos)
    ss, dA_s, dS = cosine_sim_grad(s_a, s_semi)
    sn, dA_n, dN = cosine_sim_grad(s_a, s_neg)
    z = lam * (sp - ss) + (1 - lam) * (ss - sn)
    loss = float(-log_sigmoid(z))
    dz = float(sigmoid(z)) - 1.0
    cp, cs, cn = dz * lam, dz * (1 - 2 * lam), -dz * (1 - lam)
    dA = cp * dA_p + cs * dA_s + cn * dA_n
    return loss, dA, cp * dP, cs * dS, cn * dN


def regime_pool(scenarios, task):
    """Scenarios of ``task`` in its own months plus the companion task elsewhere."""
    return [s for s in scenarios if s.task == regime_task(task, s.month)]


def export_clusters(clusters, path, header=""):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    clusters.to_csv(path, header)
