"""Embedding index, top-k retrieval and similarity weights."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import stack_inputs
from .errors import InvalidArgument, InsufficientObservations
from .nets import cosine_matrix, cosine_sim_grad, embed_forward

WEIGHT_EPS = 1e-6


def scenario_key(sid):
    lake, year, month, task = sid
    return f"{lake}-{year}-{month}-{task}"


def encode(scenarios, encoder, chunk=256):
    """Embeddings (N, H) of scenarios under the given encoder parameters."""
    out = []
    for lo in range(0, len(scenarios), chunk):
        s, _ = embed_forward(stack_inputs(scenarios[lo:lo + chunk]), encoder)
        out.append(s)
    return np.concatenate(out) if out else np.zeros((0, encoder["fwd.Wh"].shape[0]))


class EmbeddingIndex:
    """Embeddings of a fixed scenario set, kept in ascending scenario-id order."""

    def __init__(self, scenarios, embeddings, refresh_period=1):
        order = sorted(range(len(scenarios)), key=lambda i: scenarios[i].id)
        self.scenarios = [scenarios[i] for i in order]
        self.ids = [s.id for s in self.scenarios]
        self.embeddings = np.asarray(embeddings, float)[order]
        self.observed = np.array([s.n_obs > 0 for s in self.scenarios])
        self.pos = {sid: i for i, sid in enumerate(self.ids)}
        self.staleness = 0
        self.refresh_period = refresh_period

    @classmethod
    def build(cls, scenarios, encoder, refresh_period=1):
        return cls(scenarios, encode(scenarios, encoder), refresh_period)

    def __len__(self):
        return len(self.ids)

    def tick(self):
        self.staleness += 1

    @property
    def stale(self):
        return self.staleness >= self.refresh_period

    def embedding_of(self, sid):
        return self.embeddings[self.pos[sid]]


def refresh(index, encoder, scenarios=None):
    """Fresh index over ``scenarios`` (default: the same set) with the current encoder."""
    scenarios = index.scenarios if scenarios is None else scenarios
    return EmbeddingIndex.build(scenarios, encoder, index.refresh_period)


def _ranking(anchor_emb, index, exclude):
    sims = cosine_matrix(np.asarray(anchor_emb, float)[None], index.embeddings)[0]
    order = np.lexsort((np.arange(len(sims)), -sims))
    if exclude is not None and exclude in index.pos:
        order = order[order != index.pos[exclude]]
    return order, sims


def top_k(anchor_emb, index, k, exclude=None):
    """Positions of the k most similar entries (ties -> smaller id), never ``exclude``."""
    if k < 1:
        raise InvalidArgument(f"k must be >= 1, got {k}")
    if k >= len(index):
        raise InvalidArgument(f"k={k} must be smaller than the index size {len(index)}")
    order, _ = _ranking(anchor_emb, index, exclude)
    return order[:k]


def ensure_observed(anchor_emb, index, k0, exclude=None, min_observed=2):
    """Smallest k >= k0 whose top-k holds at least ``min_observed`` observed scenarios."""
    order, _ = _ranking(anchor_emb, index, exclude)
    obs_rank = np.flatnonzero(index.observed[order])
    if len(obs_rank) < min_observed:
        raise InsufficientObservations(
            f"only {len(obs_rank)} observed scenarios available for anchor {exclude}, need {min_observed}")
    k = max(k0, int(obs_rank[min_observed - 1]) + 1)
    if k > len(order):
        raise InvalidArgument(f"k={k} exceeds the {len(order)} retrievable scenarios")
    return order[:k]


def similarity_weights(anchor_emb, member_embs, active=None, eps=WEIGHT_EPS):
    """Normalized clamped cosine weights of members relative to the anchor.

    Inactive members get weight 0 and the rest are renormalized.
    """
    sims = cosine_matrix(np.asarray(anchor_emb, float)[None], np.atleast_2d(member_embs))[0]
    raw = np.maximum(sims, 0.0) + eps
    if active is not None:
        raw = np.where(active, raw, 0.0)
    return raw / raw.sum(), sims


def similarity_weights_backward(anchor_emb, member_embs, dw, active=None, eps=WEIGHT_EPS):
    """Gradients of sum(dw * w) w.r.t. the anchor embedding and each member embedding."""
    M = len(member_embs)
    sims = np.empty(M)
    d_a = np.empty((M, len(anchor_emb)))
    d_m = np.empty_like(member_embs)
    for j in range(M):
        sims[j], d_m[j], d_a[j] = cosine_sim_grad(member_embs[j], anchor_emb)
    raw = np.maximum(sims, 0.0) + eps
    act = np.ones(M, bool) if active is None else np.asarray(active, bool)
    raw = np.where(act, raw, 0.0)
    S = raw.sum()
    w = raw / S
    draw = (dw - np.sum(dw * w)) / S
    dsim = np.where(act & (sims > 0), draw, 0.0)
    return (dsim[:, None] * d_a).sum(axis=0), dsim[:, None] * d_m


@dataclass
class RetrievalBatch:
    anchor: object                 # Scenario
    retrieved: list                # Scenarios, ranked
    sims: np.ndarray               # similarity to the anchor, for [anchor] + retrieved
    weights: np.ndarray            # weights over [anchor] + retrieved

    @property
    def members(self):
        return [self.anchor] + list(self.retrieved)

    @property
    def k(self):
        return len(self.retrieved)


def build_batch(anchor, anchor_emb, index, k0):
    """Retrieval set for ``anchor`` using frozen index embeddings."""
    pos = ensure_observed(anchor_emb, index, k0, exclude=anchor.id)
    embs = np.vstack([anchor_emb, index.embeddings[pos]])
    w, sims = similarity_weights(anchor_emb, embs)
    return RetrievalBatch(anchor, [index.scenarios[i] for i in pos], sims, w)


def inspect_rows(batches):
    rows = []
    for b in batches:
        for rank, (s, sim, w) in enumerate(zip(b.members, b.sims, b.weights)):
            rows.append([scenario_key(b.anchor.id), rank, scenario_key(s.id), repr(float(sim)),
                         repr(float(w)), s.n_obs])
    return rows


def write_inspect(batches, path, header=""):
    """CSV dump of retrieval sets: one row per member of every batch (rank 0 is the anchor)."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if header:
            fh.write(f"# {header}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["anchor", "rank", "member", "sim", "weight", "observed_days"])
        w.writerows(inspect_rows(batches))
