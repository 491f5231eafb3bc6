"""Interactive norm-concept discovery engine.

Implements the iterative loop: cluster unmapped norm descriptions with
spherical k-means, let an expert seed concepts from 5-10 closely related
descriptions, augment each concept by nearest-centroid assignment above a
similarity threshold, then re-assign using good and bad example centers.
Rounds repeat over whatever stays unmapped.

Similarity is cosine over L2-normalized vectors throughout, which keeps
k-means and nearest-centroid assignment consistent. All scoring is exact
(no approximate index); corpus scale permits it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from . import schema
from .schema import NormConcept
from .store import InvariantError, ProjectState, ProjectStore, new_id

DEFAULT_TAU = 0.7
DEFAULT_LAMBDA = 1.0


class DiscoveryError(Exception):
    pass


@dataclass(frozen=True)
class ClusterView:
    cluster_id: str
    member_ids: tuple[str, ...]
    centroid: tuple[float, ...]
    iteration: int
    exemplar_ids: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "cluster_id": self.cluster_id,
            "member_ids": list(self.member_ids),
            "centroid": list(self.centroid),
            "iteration": self.iteration,
            "exemplar_ids": list(self.exemplar_ids),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ClusterView":
        return cls(
            cluster_id=d["cluster_id"],
            member_ids=tuple(d["member_ids"]),
            centroid=tuple(float(x) for x in d["centroid"]),
            iteration=int(d["iteration"]),
            exemplar_ids=tuple(d["exemplar_ids"]),
        )


@dataclass(frozen=True)
class ConceptCenters:
    concept_id: str
    good_centroid: tuple[float, ...]
    bad_centroid: Optional[tuple[float, ...]] = None


@dataclass(frozen=True)
class KMeansResult:
    labels: np.ndarray
    centroids: np.ndarray
    inertia_trace: tuple[float, ...]
    iterations: int


def _normalize_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    safe = np.where(norms < 1e-12, 1.0, norms)
    return x / safe


def _renormalize(vec: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(vec))
    return vec / norm if norm >= 1e-12 else vec


def kmeans(vectors: Sequence[Sequence[float]], k: int, seed: int, max_iters: int = 100) -> KMeansResult:
    """Lloyd iterations on L2-normalized vectors (spherical k-means).

    k-means++ initialization under the given seed; empty clusters are
    repaired by splitting the largest cluster at its farthest member.
    Inertia (sum of squared distances to the renormalized-mean centroids) is
    asserted non-increasing at every iteration.
    """
    X = np.asarray(vectors, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("need a non-empty 2-d vector set")
    n = X.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > n:
        raise ValueError(f"k={k} exceeds the number of points ({n})")
    X = _normalize_rows(X)
    rng = np.random.default_rng(seed)

    # k-means++ seeding
    centers = [int(rng.integers(n))]
    if k > 1:
        sims = X @ X[centers[0]]
        d2 = np.maximum(2.0 - 2.0 * sims, 0.0)
        for _ in range(k - 1):
            total = float(d2.sum())
            if total <= 1e-12:
                choices = [i for i in range(n) if i not in centers]
                centers.append(int(rng.choice(choices)))
            else:
                centers.append(int(rng.choice(n, p=d2 / total)))
            d2 = np.minimum(d2, np.maximum(2.0 - 2.0 * (X @ X[centers[-1]]), 0.0))
    C = X[centers].copy()

    labels = np.full(n, -1, dtype=np.int64)
    trace: list[float] = []
    iterations = 0
    for _ in range(max_iters):
        iterations += 1
        sims = X @ C.T
        new_labels = np.argmax(sims, axis=1)

        counts = np.bincount(new_labels, minlength=k)
        for j in np.flatnonzero(counts == 0):
            largest = int(np.argmax(counts))
            members = np.flatnonzero(new_labels == largest)
            member_sims = X[members] @ C[largest]
            farthest = members[int(np.argmin(member_sims))]
            new_labels[farthest] = j
            counts[largest] -= 1
            counts[j] += 1

        for j in range(k):
            members = np.flatnonzero(new_labels == j)
            if members.size:
                C[j] = _renormalize(X[members].mean(axis=0))

        inertia = float(np.sum(2.0 - 2.0 * np.einsum("ij,ij->i", X, C[new_labels])))
        if trace and inertia > trace[-1] + 1e-9:
            raise AssertionError(
                f"inertia increased: {trace[-1]} -> {inertia} at iteration {iterations}"
            )
        trace.append(inertia)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels

    return KMeansResult(labels=labels, centroids=C, inertia_trace=tuple(trace), iterations=iterations)


def default_k(n: int) -> int:
    return max(1, math.ceil(math.sqrt(n / 2)))


def build_cluster_views(
    ids: Sequence[str],
    vectors: Sequence[Sequence[float]],
    k: int,
    seed: int,
    iteration: int,
    max_iters: int = 100,
    exemplars: int = 5,
) -> list[ClusterView]:
    """Cluster the given descriptions and package display-ready views with
    nearest-to-centroid exemplars."""
    result = kmeans(vectors, k=k, seed=seed, max_iters=max_iters)
    X = _normalize_rows(np.asarray(vectors, dtype=np.float64))
    views = []
    for j in range(k):
        members = np.flatnonzero(result.labels == j)
        sims = X[members] @ result.centroids[j]
        order = members[np.argsort(-sims, kind="stable")]
        views.append(
            ClusterView(
                cluster_id=f"r{iteration}c{j}",
                member_ids=tuple(ids[i] for i in order),
                centroid=tuple(float(x) for x in result.centroids[j]),
                iteration=iteration,
                exemplar_ids=tuple(ids[i] for i in order[:exemplars]),
            )
        )
    return views


# ---------------------------------------------------------------------------
# Scoring


def _embedding_matrix(
    state: ProjectState, ids: Sequence[str]
) -> np.ndarray:
    missing = [did for did in ids if did not in state.embeddings]
    if missing:
        raise DiscoveryError(f"missing embeddings for {len(missing)} descriptions: {missing[:5]}")
    return _normalize_rows(
        np.asarray([state.embeddings[did].vector for did in ids], dtype=np.float64)
    )


def concept_centers(state: ProjectState, concept: NormConcept) -> ConceptCenters:
    """Good center = normalized mean of seed+good embeddings; bad center
    present iff the concept has bad marks."""
    good_ids = [*concept.seed_ids, *concept.good_ids]
    if not good_ids:
        raise DiscoveryError(f"concept {concept.name!r} has no seed embeddings")
    good = _renormalize(_embedding_matrix(state, good_ids).mean(axis=0))
    bad = None
    if concept.bad_ids:
        bad = _renormalize(_embedding_matrix(state, list(concept.bad_ids)).mean(axis=0))
    return ConceptCenters(
        concept_id=concept.id,
        good_centroid=tuple(float(x) for x in good),
        bad_centroid=tuple(float(x) for x in bad) if bad is not None else None,
    )


def best_concept(
    vector: np.ndarray,
    centers: Sequence[ConceptCenters],
    lam: float,
) -> tuple[Optional[str], float, float]:
    """Return (concept_id, good_cosine, adjusted score) of the argmax concept.

    Adjusted = cos(v, good) - lam * cos(v, bad), with the bad term absent when
    the concept has no bad center. Ties go to the earliest-created concept
    (centers are passed in creation order and ties keep the first maximum).
    """
    best_id: Optional[str] = None
    best_good = best_adj = -math.inf
    for c in centers:
        good_cos = float(np.dot(vector, np.asarray(c.good_centroid)))
        adj = good_cos
        if c.bad_centroid is not None:
            adj -= lam * float(np.dot(vector, np.asarray(c.bad_centroid)))
        if adj > best_adj:
            best_id, best_good, best_adj = c.concept_id, good_cos, adj
    return best_id, best_good, best_adj


def knn_augment(store: ProjectStore, tau: float = DEFAULT_TAU) -> list[dict]:
    """Assign unmapped norm descriptions to their nearest concept center.

    A description joins the argmax concept iff its cosine to that concept's
    good center is at least tau; everything else stays unmapped. Existing
    assignments are never touched here.
    """
    if not -1.0 <= tau <= 1.0:
        raise ValueError("tau must be within [-1, 1]")
    state = store.state
    concepts = state.concept_order()
    if not concepts:
        return []
    centers = [concept_centers(state, c) for c in concepts]
    unmapped = state.unmapped_norm_ids()
    if not unmapped:
        return []
    X = _embedding_matrix(state, unmapped)
    assigned = []
    for i, did in enumerate(unmapped):
        # knn scoring ignores bad centers; they only matter on reassignment
        cid, good_cos, _ = best_concept(X[i], [ConceptCenters(c.concept_id, c.good_centroid) for c in centers], 0.0)
        if cid is not None and good_cos >= tau:
            assigned.append({"description_id": did, "concept_id": cid, "score": good_cos})
    if assigned:
        store.append(
            "assignments_applied",
            {
                "iteration": max(state.round, 1),
                "provenance": schema.PROVENANCE_KNN,
                "assigned": assigned,
                "unassigned": [],
            },
        )
    return assigned


def reassign_with_good_bad(
    store: ProjectStore, tau: float = DEFAULT_TAU, lam: float = DEFAULT_LAMBDA
) -> dict:
    """Re-score every non-seed assignment and every unmapped description
    against good & bad concept centers, moving or unassigning as needed.

    Human-seeded assignments are a fixpoint of this step. Requires fresh
    good/bad marks since the previous reassignment.
    """
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    if not -1.0 <= tau <= 1.0:
        raise ValueError("tau must be within [-1, 1]")
    state = store.state
    if not state.marks_dirty:
        raise DiscoveryError("no good/bad marks recorded since the last reassignment")
    concepts = state.concept_order()
    centers = [concept_centers(state, c) for c in concepts]

    active = state.active_assignments()
    candidates = [
        did for did, a in active.items() if a.provenance != schema.PROVENANCE_HUMAN_SEED
    ] + state.unmapped_norm_ids()
    assigned, unassigned = [], []
    if candidates:
        X = _embedding_matrix(state, candidates)
        for i, did in enumerate(candidates):
            cid, good_cos, adj = best_concept(X[i], centers, lam)
            current = active.get(did)
            if cid is not None and adj >= tau:
                if (
                    current is not None
                    and current.concept_id == cid
                    and abs(current.score - good_cos) < 1e-12
                ):
                    continue  # identical outcome; leave the record untouched
                assigned.append({"description_id": did, "concept_id": cid, "score": good_cos})
            elif current is not None:
                unassigned.append(did)
    payload = {
        "iteration": max(state.round, 1),
        "provenance": schema.PROVENANCE_REASSIGNED,
        "assigned": assigned,
        "unassigned": unassigned,
    }
    store.append("assignments_applied", payload)
    return payload


def create_concept(
    store: ProjectStore,
    *,
    name: str,
    description: str,
    settings: Sequence[str],
    violation_sketch: str,
    actor_roles: str,
    recipient_roles: str,
    seed_ids: Sequence[str],
    annotator: str,
    concept_id: Optional[str] = None,
) -> NormConcept:
    """Create a concept from 5-10 unassigned seed descriptions plus its
    symbolic structure; seeds become human_seed assignments at score 1.0."""
    concept = NormConcept(
        id=concept_id or new_id(),
        name=name,
        description=description,
        settings=tuple(settings),
        violation_sketch=violation_sketch,
        actor_roles=actor_roles,
        recipient_roles=recipient_roles,
        seed_ids=tuple(seed_ids),
        created_by=annotator,
        iteration=max(store.state.round, 1),
    )
    store.append("concept_created", {"concept": concept.to_dict()})
    return concept


def record_marks(
    store: ProjectStore,
    concept_id: str,
    good: Sequence[str],
    bad: Sequence[str],
    annotator: str = "",
) -> list[str]:
    """Record good/bad example marks for a concept. Returns advisory
    warnings (counts outside 5-10 warn rather than block)."""
    warnings = []
    for label, ids in (("good", good), ("bad", bad)):
        if ids and not 5 <= len(ids) <= 10:
            warnings.append(f"{label} mark count {len(ids)} outside the advised 5-10 range")
    store.append(
        "marks_recorded",
        {"concept_id": concept_id, "good": list(good), "bad": list(bad), "annotator": annotator},
    )
    return warnings


def next_round(
    store: ProjectStore,
    k: Optional[int] = None,
    seed: int = 0,
    max_iters: int = 100,
) -> tuple[list[ClusterView], list[str]]:
    """Cluster the remaining unmapped descriptions as a fresh round.

    Full coverage yields an empty view list without advancing the round; a k
    larger than the unmapped pool is reduced with a warning.
    """
    state = store.state
    unmapped = state.unmapped_norm_ids()
    warnings: list[str] = []
    if not unmapped:
        return [], warnings
    if k is None:
        k = default_k(len(unmapped))
    if k > len(unmapped):
        warnings.append(f"k reduced from {k} to {len(unmapped)} (unmapped pool size)")
        k = len(unmapped)
    vectors = [state.embeddings[did].vector for did in unmapped if did in state.embeddings]
    if len(vectors) != len(unmapped):
        raise DiscoveryError("unmapped descriptions lack embeddings; run embed first")
    iteration = state.round + 1
    views = build_cluster_views(unmapped, vectors, k=k, seed=seed, iteration=iteration, max_iters=max_iters)
    store.append(
        "round_clustered",
        {
            "iteration": iteration,
            "k": k,
            "seed": seed,
            "clusters": [v.to_dict() for v in views],
        },
    )
    return views, warnings


@dataclass(frozen=True)
class CoverageStats:
    concepts: int
    mapped: int
    total: int
    coverage_fraction: float

    def to_dict(self) -> dict:
        return {
            "concepts": self.concepts,
            "mapped": self.mapped,
            "total": self.total,
            "coverage_fraction": self.coverage_fraction,
        }


def coverage_stats(state: ProjectState) -> CoverageStats:
    """Coverage = actively assigned non-discarded norm descriptions over all
    non-discarded norm descriptions."""
    norm_ids = set(state.norm_ids())
    mapped = sum(1 for did in norm_ids if state.active_assignment(did) is not None)
    total = len(norm_ids)
    return CoverageStats(
        concepts=len(state.concepts),
        mapped=mapped,
        total=total,
        coverage_fraction=(mapped / total) if total else 0.0,
    )
