"""Ground-truth environments: synthetic generation, HetRec tag-data
ingestion with truncated-SVD features, reward/feedback oracles and per-round
candidate sampling.

Environments are immutable once built and safe to share read-only across
parallel simulations; randomness comes from caller-supplied generators.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .model import (
    ArmCatalog,
    KeyTermCatalog,
    KeyTermGraph,
    UserProfile,
    compute_keyterm_features,
    validate_graph,
)
from .spanner import Spanner

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SyntheticConfig:
    """Parameters of the random environment generator."""

    num_arms: int
    num_keyterms: int
    d: int
    num_users: int
    nk_range: tuple[int, int] = (1, 10)
    noise_sigma: float = 0.1
    pool_size: int = 20
    key_pool_size: int | None = None
    seed: int = 0

    def __post_init__(self):
        for name in ("num_arms", "num_keyterms", "d", "num_users"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        lo, hi = self.nk_range
        if not 1 <= lo <= hi <= self.num_arms:
            raise ValueError(
                f"nk_range must satisfy 1 <= lo <= hi <= num_arms, got {self.nk_range}"
            )
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if not 1 <= self.pool_size <= self.num_arms:
            raise ValueError("pool_size must lie in [1, num_arms]")
        if self.key_pool_size is not None and not (
            1 <= self.key_pool_size <= self.num_keyterms
        ):
            raise ValueError("key_pool_size must lie in [1, num_keyterms]")

    def to_dict(self) -> dict:
        return {
            "num_arms": self.num_arms,
            "num_keyterms": self.num_keyterms,
            "d": self.d,
            "num_users": self.num_users,
            "nk_range": list(self.nk_range),
            "noise_sigma": self.noise_sigma,
            "pool_size": self.pool_size,
            "key_pool_size": self.key_pool_size,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "SyntheticConfig":
        raw = dict(raw)
        if "nk_range" in raw:
            raw["nk_range"] = tuple(raw["nk_range"])
        return cls(**raw)


@dataclass(frozen=True)
class Environment:
    """Arms, key-terms, users and noise model for one simulation world."""

    arms: ArmCatalog
    keyterms: KeyTermCatalog
    graph: KeyTermGraph
    users: tuple[UserProfile, ...]
    noise_sigma: float
    pool_size: int
    key_pool_size: int | None = None
    spanner: Spanner | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if not 1 <= self.pool_size <= len(self.arms):
            raise ValueError("pool_size must lie in [1, num_arms]")
        if self.key_pool_size is not None and not (
            1 <= self.key_pool_size <= len(self.keyterms)
        ):
            raise ValueError("key_pool_size must lie in [1, num_keyterms]")
        object.__setattr__(self, "users", tuple(self.users))

    @property
    def dim(self) -> int:
        return self.arms.dim

    # -- oracles -------------------------------------------------------------

    def reward(self, user: UserProfile, arm_id: int, rng) -> float:
        """Noisy arm-level reward: x_a . theta + Gaussian noise."""
        mean = float(self.arms.features[arm_id] @ user.theta)
        if self.noise_sigma > 0.0:
            mean += self.noise_sigma * rng.standard_normal()
        return mean

    def keyterm_feedback(self, user: UserProfile, key_id: int, rng) -> float:
        """Noisy key-term-level feedback on the derived key-term feature."""
        mean = float(self.keyterms.features[key_id] @ user.theta)
        if self.noise_sigma > 0.0:
            mean += self.noise_sigma * rng.standard_normal()
        return mean

    def best_arm(self, user: UserProfile, pool) -> tuple[int, float]:
        """Noiseless argmax over the pool, ties to the lowest arm id. Used by
        the regret computation only; never exposed to policies."""
        pool = np.asarray(pool, dtype=np.int64)
        if pool.size == 0:
            raise ValueError("cannot select from an empty pool")
        vals = self.arms.features[pool] @ user.theta
        best = vals.max()
        arm = int(pool[vals == best].min())
        return arm, float(best)

    # -- candidate sampling ----------------------------------------------------

    def sample_pool(self, rng, size: int | None = None) -> np.ndarray:
        """Distinct arm ids drawn uniformly without replacement."""
        size = self.pool_size if size is None else size
        if not 1 <= size <= len(self.arms):
            raise ValueError(f"pool size {size} out of range [1, {len(self.arms)}]")
        return _kernels.sample_indices(rng, len(self.arms), size)

    def sample_keypool(self, rng, size: int | None = None) -> np.ndarray:
        """Distinct key-term ids for the time-varying key-term mode."""
        size = self.key_pool_size if size is None else size
        if size is None:
            raise ValueError("no key pool size configured")
        if not 1 <= size <= len(self.keyterms):
            raise ValueError(
                f"key pool size {size} out of range [1, {len(self.keyterms)}]"
            )
        return _kernels.sample_indices(rng, len(self.keyterms), size)

    # -- serialization ---------------------------------------------------------

    def to_dict(self) -> dict:
        span = None
        if self.spanner is not None:
            span = {
                "member_ids": list(self.spanner.member_ids),
                "approx_c": self.spanner.approx_c,
                "swap_count": self.spanner.swap_count,
            }
        return {
            "dim": self.dim,
            "noise_sigma": self.noise_sigma,
            "pool_size": self.pool_size,
            "key_pool_size": self.key_pool_size,
            "arms": self.arms.features.tolist(),
            "users": [u.theta.tolist() for u in self.users],
            "graph": {
                "num_arms": self.graph.num_arms,
                "num_keyterms": self.graph.num_keyterms,
                "entries": [[a, k, w] for a, k, w in self.graph.entries()],
            },
            "keyterm_features": self.keyterms.features.tolist(),
            "spanner": span,
            "provenance": self.provenance,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())
            fh.write("\n")

    @classmethod
    def from_dict(cls, raw: dict) -> "Environment":
        graph = KeyTermGraph.from_entries(
            raw["graph"]["num_arms"],
            raw["graph"]["num_keyterms"],
            raw["graph"]["entries"],
        )
        arms = ArmCatalog(np.asarray(raw["arms"], dtype=np.float64))
        keyterms = KeyTermCatalog(
            np.asarray(raw["keyterm_features"], dtype=np.float64), graph
        )
        recomputed = compute_keyterm_features(graph, arms)
        if not np.allclose(
            recomputed.features, keyterms.features, atol=1e-9, rtol=0.0
        ):
            raise ValueError("stored key-term features disagree with the graph")
        users = tuple(
            UserProfile(np.asarray(t, dtype=np.float64), i)
            for i, t in enumerate(raw["users"])
        )
        span = None
        if raw.get("spanner"):
            ids = [int(i) for i in raw["spanner"]["member_ids"]]
            basis = keyterms.features[ids].T.copy()
            _, logdet = np.linalg.slogdet(basis)
            span = Spanner(
                member_ids=tuple(ids),
                basis=basis,
                approx_c=float(raw["spanner"]["approx_c"]),
                swap_count=int(raw["spanner"].get("swap_count", 0)),
                log_abs_det=float(logdet),
            )
        return cls(
            arms=arms,
            keyterms=keyterms,
            graph=graph,
            users=users,
            noise_sigma=float(raw["noise_sigma"]),
            pool_size=int(raw["pool_size"]),
            key_pool_size=(
                None if raw.get("key_pool_size") is None else int(raw["key_pool_size"])
            ),
            spanner=span,
            provenance=raw.get("provenance", {}),
        )

    @classmethod
    def load(cls, path) -> "Environment":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def with_spanner(self, spanner: Spanner) -> "Environment":
        return Environment(
            arms=self.arms, keyterms=self.keyterms, graph=self.graph,
            users=self.users, noise_sigma=self.noise_sigma,
            pool_size=self.pool_size, key_pool_size=self.key_pool_size,
            spanner=spanner, provenance=self.provenance,
        )


def _unit_rows(mat: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise ValueError("cannot normalize a zero vector")
    return mat / norms


def gen_synthetic(cfg: SyntheticConfig) -> Environment:
    """Random environment: unit-norm arm and user vectors with i.i.d. standard
    normal entries, and a two-step bipartite weight graph (each key-term grabs
    a random handful of arms, each arm splits weight equally over its
    key-terms). Arms that no key-term picked are attached to one uniformly
    chosen key-term before weights are assigned, so every arm is covered.

    Deterministic given the config seed.
    """
    rng = np.random.default_rng(cfg.seed)
    users = _unit_rows(rng.standard_normal((cfg.num_users, cfg.d)))
    arm_feats = _unit_rows(rng.standard_normal((cfg.num_arms, cfg.d)))

    lo, hi = cfg.nk_range
    arm_keys: list[list[int]] = [[] for _ in range(cfg.num_arms)]
    for k in range(cfg.num_keyterms):
        nk = int(rng.integers(lo, hi + 1))
        for a in rng.choice(cfg.num_arms, size=nk, replace=False):
            arm_keys[int(a)].append(k)
    for a in range(cfg.num_arms):
        if not arm_keys[a]:
            arm_keys[a].append(int(rng.integers(0, cfg.num_keyterms)))

    entries = []
    for a in range(cfg.num_arms):
        w = 1.0 / len(arm_keys[a])
        entries.extend((a, k, w) for k in arm_keys[a])
    graph = KeyTermGraph.from_entries(cfg.num_arms, cfg.num_keyterms, entries)

    problems = validate_graph(graph)
    if problems:
        raise ValueError(f"generated graph is invalid: {problems[:3]}")

    arms = ArmCatalog(arm_feats)
    keyterms = compute_keyterm_features(graph, arms)
    profiles = tuple(UserProfile(users[u], u) for u in range(cfg.num_users))
    return Environment(
        arms=arms,
        keyterms=keyterms,
        graph=graph,
        users=profiles,
        noise_sigma=cfg.noise_sigma,
        pool_size=cfg.pool_size,
        key_pool_size=cfg.key_pool_size,
        provenance={"kind": "synthetic", "config": cfg.to_dict()},
    )


# ---------------------------------------------------------------------------
# HetRec 2011 ingestion
# ---------------------------------------------------------------------------

_ITEM_COLUMNS = {"lastfm": "artistID", "movielens": "movieID"}


@dataclass(frozen=True)
class HetRecDataset:
    """Deduplicated (user, item, tag) tagging records."""

    records: np.ndarray  # shape (n, 3) int64 columns: user, item, tag
    source: str

    def __post_init__(self):
        rec = np.asarray(self.records, dtype=np.int64).reshape(-1, 3)
        if rec.size and rec.min() < 0:
            raise ValueError("ids must be non-negative")
        rec.setflags(write=False)
        object.__setattr__(self, "records", rec)

    def __len__(self) -> int:
        return self.records.shape[0]


def load_hetrec(path, source: str) -> HetRecDataset:
    """Parse a HetRec 2011 tab-separated tagging file.

    Expects a header row naming at least userID, tagID and the per-source
    item column (artistID for lastfm, movieID for movielens); extra columns
    such as timestamps are ignored. Duplicate (user, item, tag) triples are
    dropped. Malformed lines raise, naming the offending line numbers.
    """
    if source not in _ITEM_COLUMNS:
        raise ValueError(f"unknown source {source!r}; expected lastfm or movielens")
    item_col = _ITEM_COLUMNS[source]
    with open(path, encoding="utf-8", errors="replace") as fh:
        header = fh.readline()
        if not header:
            raise ValueError(f"{path}: empty file, expected a header row")
        names = [c.strip() for c in header.rstrip("\n").split("\t")]
        missing = [c for c in ("userID", item_col, "tagID") if c not in names]
        if missing:
            raise ValueError(f"{path}: missing required columns {missing}")
        cols = [names.index("userID"), names.index(item_col), names.index("tagID")]
        rows = []
        bad: list[str] = []
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) < len(names):
                bad.append(f"line {lineno}: expected {len(names)} fields")
                continue
            try:
                triple = [int(parts[c]) for c in cols]
            except ValueError:
                bad.append(f"line {lineno}: non-numeric id")
                continue
            if min(triple) < 0:
                bad.append(f"line {lineno}: negative id")
                continue
            rows.append(triple)
        if bad:
            shown = "; ".join(bad[:5])
            raise ValueError(f"{path}: {len(bad)} malformed lines ({shown})")
    if rows:
        records = np.unique(np.asarray(rows, dtype=np.int64), axis=0)
    else:
        records = np.empty((0, 3), dtype=np.int64)
    logger.info(
        "loaded %s: %d records (%d raw), %d users, %d items, %d tags",
        path, records.shape[0], len(rows),
        np.unique(records[:, 0]).size if records.size else 0,
        np.unique(records[:, 1]).size if records.size else 0,
        np.unique(records[:, 2]).size if records.size else 0,
    )
    return HetRecDataset(records=records, source=source)


def _top_by_distinct(pair_first: np.ndarray, pair_second: np.ndarray, count: int):
    """Ids from pair_first ranked by number of distinct pair_second values,
    ties broken by lowest raw id."""
    pairs = np.unique(np.stack([pair_first, pair_second], axis=1), axis=0)
    ids, tallies = np.unique(pairs[:, 0], return_counts=True)
    if ids.size < count:
        raise ValueError(f"only {ids.size} candidates available, need {count}")
    order = np.lexsort((ids, -tallies))
    return ids[order[:count]]


def truncated_svd(
    mat: np.ndarray, k: int, oversample: int = 2, seed: int = 0,
    min_iters: int = 20, max_iters: int = 400,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Rank-k factorization by randomized block power iteration.

    Runs orthonormalized subspace iteration on a (k + oversample)-column
    random block until the leading singular values stabilize, then extracts
    factors by a Rayleigh-Ritz step. Returns (U, s, Vt) with orthonormal
    U (m, k), Vt (k, n) and descending s. Signs are fixed so each left
    vector's largest-magnitude entry is positive.
    """
    mat = np.asarray(mat, dtype=np.float64)
    m, n = mat.shape
    if not 1 <= k <= min(m, n):
        raise ValueError(f"rank {k} out of range for shape {mat.shape}")
    p = min(k + oversample, min(m, n))
    rng = np.random.default_rng(seed)
    q_block, _ = np.linalg.qr(mat @ rng.standard_normal((n, p)))
    prev = None
    for it in range(max_iters):
        q_block, _ = np.linalg.qr(mat.T @ q_block)
        q_block, _ = np.linalg.qr(mat @ q_block)
        sv = np.linalg.svd(q_block.T @ mat, compute_uv=False)
        if prev is not None and it + 1 >= min_iters:
            if np.all(np.abs(sv[:k] - prev[:k]) <= 1e-12 * max(sv[0], 1e-300)):
                break
        prev = sv
    u_small, s, vt = np.linalg.svd(q_block.T @ mat, full_matrices=False)
    u = q_block @ u_small
    u, s, vt = u[:, :k], s[:k], vt[:k]
    for j in range(k):
        i = int(np.argmax(np.abs(u[:, j])))
        if u[i, j] < 0:
            u[:, j] = -u[:, j]
            vt[j, :] = -vt[j, :]
    return u, s, vt


def assemble_feedback_matrix(
    data: HetRecDataset, num_arms: int, num_users: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Binary feedback matrix over the top taggers and most-tagged items.

    Selects the ``num_arms`` items and ``num_users`` users with the most
    distinct tags (ties to lowest raw id); entry (u, a) is 1 iff the user
    tagged the item. Returns (matrix, sorted raw user ids, sorted raw item
    ids); row/column order follows ascending raw id.
    """
    if len(data) == 0:
        raise ValueError("dataset has no records")
    rec = data.records
    top_items = np.sort(_top_by_distinct(rec[:, 1], rec[:, 2], num_arms))
    top_users = np.sort(_top_by_distinct(rec[:, 0], rec[:, 2], num_users))
    item_index = {int(raw): i for i, raw in enumerate(top_items)}
    user_index = {int(raw): i for i, raw in enumerate(top_users)}
    feedback = np.zeros((num_users, num_arms))
    pair_mask = np.isin(rec[:, 1], top_items) & np.isin(rec[:, 0], top_users)
    for raw_user, raw_item in np.unique(rec[pair_mask][:, :2], axis=0):
        feedback[user_index[int(raw_user)], item_index[int(raw_item)]] = 1.0
    return feedback, top_users, top_items


def build_real_env(
    data: HetRecDataset,
    num_arms: int,
    num_users: int,
    max_tags_per_arm: int = 20,
    d: int = 50,
    noise_sigma: float = 0.1,
    pool_size: int = 50,
    key_pool_size: int | None = None,
    seed: int = 0,
) -> Environment:
    """Environment from tagging records.

    Keeps the ``num_arms`` items and ``num_users`` users with the most
    distinct tags (ties to lowest raw id); per arm keeps at most
    ``max_tags_per_arm`` tags ranked by how many kept arms carry them, with
    equal weights. The binary feedback matrix (1 iff the user tagged the
    item) is factored by rank-d truncated SVD; user profiles come from the
    left factor scaled by the singular values (norms clipped to 1) and arm
    features from the right factor re-normalized to unit norm.
    """
    feedback, top_users, top_items = assemble_feedback_matrix(
        data, num_arms, num_users
    )
    rec = data.records
    item_index = {int(raw): i for i, raw in enumerate(top_items)}

    # arm-tag relation over kept arms; tag rank = distinct kept arms carrying it
    arm_tag = np.unique(rec[np.isin(rec[:, 1], top_items)][:, 1:3], axis=0)
    tag_ids, tag_reach = np.unique(arm_tag[:, 1], return_counts=True)
    reach = dict(zip(tag_ids.tolist(), tag_reach.tolist()))

    kept_pairs: list[tuple[int, int]] = []
    for raw_item in np.sort(top_items):
        tags = np.sort(arm_tag[arm_tag[:, 0] == raw_item][:, 1])
        if tags.size == 0:
            raise ValueError(f"item {raw_item} has no tags after filtering")
        ranked = sorted(tags.tolist(), key=lambda tg: (-reach[tg], tg))
        kept_pairs.extend(
            (item_index[int(raw_item)], tg) for tg in ranked[:max_tags_per_arm]
        )
    kept_tags = sorted({tg for _, tg in kept_pairs})
    tag_index = {raw: i for i, raw in enumerate(kept_tags)}

    per_arm_counts = np.zeros(num_arms, dtype=np.int64)
    for a, _ in kept_pairs:
        per_arm_counts[a] += 1
    if np.any(per_arm_counts == 0):
        raise ValueError("some kept arms lost all their tags")
    entries = [
        (a, tag_index[tg], 1.0 / per_arm_counts[a]) for a, tg in kept_pairs
    ]
    graph = KeyTermGraph.from_entries(num_arms, len(kept_tags), entries)

    u, s, vt = truncated_svd(feedback, d, seed=seed)
    if s[-1] <= 1e-10 * max(s[0], 1e-300):
        raise ValueError(
            f"feedback matrix rank is below {d}; reduce the feature dimension"
        )
    arm_feats = _unit_rows(vt.T)
    user_mat = u * s
    norms = np.linalg.norm(user_mat, axis=1, keepdims=True)
    np.clip(norms, 1.0, None, out=norms)
    user_mat = user_mat / norms

    arms = ArmCatalog(arm_feats)
    keyterms = compute_keyterm_features(graph, arms)
    profiles = tuple(UserProfile(user_mat[i], i) for i in range(num_users))
    return Environment(
        arms=arms,
        keyterms=keyterms,
        graph=graph,
        users=profiles,
        noise_sigma=noise_sigma,
        pool_size=pool_size,
        key_pool_size=key_pool_size,
        provenance={
            "kind": "hetrec",
            "source": data.source,
            "num_arms": num_arms,
            "num_users": num_users,
            "max_tags_per_arm": max_tags_per_arm,
            "d": d,
            "seed": seed,
            "raw_item_ids": [int(i) for i in top_items],
            "raw_user_ids": [int(i) for i in top_users],
            "raw_tag_ids": [int(t) for t in kept_tags],
        },
    )
