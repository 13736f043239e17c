"""Core domain types: arm/key-term catalogs, the weighted bipartite graph
linking them, and derived key-term feature vectors.

All types are immutable after construction and safe to share across
concurrent simulation workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

NORM_TOL = 1e-9


def _as_matrix(features, name: str) -> np.ndarray:
    feats = np.array(features, dtype=np.float64)  # copy: ownership stays local
    if feats.ndim != 2 or feats.shape[0] < 1 or feats.shape[1] < 1:
        raise ValueError(f"{name} must be a non-empty 2-D array, got shape {feats.shape}")
    if not np.all(np.isfinite(feats)):
        raise ValueError(f"{name} contains non-finite entries")
    return feats


@dataclass(frozen=True)
class ArmCatalog:
    """Fixed collection of arm feature vectors, identified by row index.

    Every arm vector must have unit L2 norm (within ``NORM_TOL``).
    """

    features: np.ndarray

    def __post_init__(self):
        feats = _as_matrix(self.features, "arm features")
        norms = np.linalg.norm(feats, axis=1)
        bad = np.flatnonzero(np.abs(norms - 1.0) > NORM_TOL)
        if bad.size:
            raise ValueError(
                f"arm vectors must be unit-norm: arms {bad[:5].tolist()} have norms "
                f"{norms[bad[:5]].tolist()}"
            )
        feats.setflags(write=False)
        object.__setattr__(self, "features", feats)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class KeyTermGraph:
    """Sparse weighted bipartite relation between arms and key-terms.

    Stored as parallel COO arrays (arm id, key-term id, weight), sorted
    canonically by (key-term, arm) so that derived quantities do not depend
    on the order entries were supplied in.
    """

    num_arms: int
    num_keyterms: int
    arm_ids: np.ndarray
    key_ids: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        arm_ids = np.asarray(self.arm_ids, dtype=np.int64)
        key_ids = np.asarray(self.key_ids, dtype=np.int64)
        weights = np.asarray(self.weights, dtype=np.float64)
        if not (arm_ids.shape == key_ids.shape == weights.shape) or arm_ids.ndim != 1:
            raise ValueError("graph entry arrays must be 1-D and of equal length")
        if arm_ids.size == 0:
            raise ValueError("graph has no entries")
        if arm_ids.min() < 0 or arm_ids.max() >= self.num_arms:
            raise ValueError("arm id out of range")
        if key_ids.min() < 0 or key_ids.max() >= self.num_keyterms:
            raise ValueError("key-term id out of range")
        if not np.all(np.isfinite(weights)) or np.any(weights < 0):
            raise ValueError("weights must be finite and non-negative")
        order = np.lexsort((arm_ids, key_ids))
        arm_ids, key_ids, weights = arm_ids[order], key_ids[order], weights[order]
        pairs = arm_ids * self.num_keyterms + key_ids
        if np.unique(pairs).size != pairs.size:
            raise ValueError("duplicate (arm, key-term) entries")
        for arr in (arm_ids, key_ids, weights):
            arr.setflags(write=False)
        object.__setattr__(self, "arm_ids", arm_ids)
        object.__setattr__(self, "key_ids", key_ids)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def from_entries(cls, num_arms: int, num_keyterms: int, entries) -> "KeyTermGraph":
        """Build from an iterable of (arm id, key-term id, weight) triples."""
        entries = list(entries)
        if not entries:
            raise ValueError("graph has no entries")
        arm_ids = np.array([e[0] for e in entries], dtype=np.int64)
        key_ids = np.array([e[1] for e in entries], dtype=np.int64)
        weights = np.array([e[2] for e in entries], dtype=np.float64)
        return cls(num_arms, num_keyterms, arm_ids, key_ids, weights)

    def arm_weight_sums(self) -> np.ndarray:
        return np.bincount(self.arm_ids, weights=self.weights, minlength=self.num_arms)

    def keyterm_weight_sums(self) -> np.ndarray:
        return np.bincount(self.key_ids, weights=self.weights, minlength=self.num_keyterms)

    def entries(self):
        return zip(self.arm_ids.tolist(), self.key_ids.tolist(), self.weights.tolist())


@dataclass(frozen=True)
class KeyTermCatalog:
    """Derived key-term feature vectors plus the graph they came from.

    ``features[k]`` is the weight-normalized convex combination of the arm
    vectors related to key-term k; recomputable from ``source_graph``.
    """

    features: np.ndarray
    source_graph: KeyTermGraph = field(repr=False)

    def __post_init__(self):
        feats = _as_matrix(self.features, "key-term features")
        if feats.shape[0] != self.source_graph.num_keyterms:
            raise ValueError("feature count does not match graph key-term count")
        feats.setflags(write=False)
        object.__setattr__(self, "features", feats)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class UserProfile:
    """A user's ground-truth preference vector (L2 norm at most 1)."""

    theta: np.ndarray
    id: int

    def __post_init__(self):
        theta = np.array(self.theta, dtype=np.float64)
        if theta.ndim != 1 or not np.all(np.isfinite(theta)):
            raise ValueError("user preference vector must be a finite 1-D array")
        norm = float(np.linalg.norm(theta))
        if norm > 1.0 + NORM_TOL:
            raise ValueError(f"user {self.id} preference norm {norm} exceeds 1")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)


def compute_keyterm_features(graph: KeyTermGraph, arms: ArmCatalog) -> KeyTermCatalog:
    """Derive key-term features as weight-normalized combinations of arm vectors.

    For each key-term k the feature is sum_a (w[a,k] / sum_a' w[a',k]) * x_a.
    Raises ``ValueError`` if any key-term has zero total weight or the arm
    count does not match the graph.
    """
    if len(arms) != graph.num_arms:
        raise ValueError(
            f"catalog has {len(arms)} arms but graph expects {graph.num_arms}"
        )
    totals = graph.keyterm_weight_sums()
    dead = np.flatnonzero(totals <= 0.0)
    if dead.size:
        raise ValueError(
            f"key-terms {dead[:5].tolist()} have zero total weight; every key-term "
            "must relate to at least one arm"
        )
    coef = graph.weights / totals[graph.key_ids]
    feats = np.zeros((graph.num_keyterms, arms.dim))
    np.add.at(feats, graph.key_ids, coef[:, None] * arms.features[graph.arm_ids])
    return KeyTermCatalog(features=feats, source_graph=graph)


def validate_graph(graph: KeyTermGraph, tol: float = NORM_TOL) -> list[str]:
    """Report invariant violations: per-arm weights must sum to 1 and every
    key-term must carry positive total weight. Returns an empty list when the
    graph is valid; report-only, never raises."""
    violations = []
    arm_sums = graph.arm_weight_sums()
    for a in np.flatnonzero(np.abs(arm_sums - 1.0) > tol):
        violations.append(f"arm {a}: weights sum to {arm_sums[a]!r}, expected 1.0")
    key_sums = graph.keyterm_weight_sums()
    for k in np.flatnonzero(key_sums <= 0.0):
        violations.append(f"key-term {k}: total weight {key_sums[k]!r}, expected > 0")
    return violations
