"""Bandit policies sharing one step interface.

Implements the joint-estimator conversational loop with three pluggable
key-term selection strategies (uniform over a precomputed spanner, maximum
confidence radius, and a UCB-style score), plus the LinUCB, Arm-Con and
two-stage ConUCB baselines.

A policy instance simulates one user; it owns its estimator state(s) and a
private random stream where needed, so instances can run in parallel without
coordination. Environment interaction goes through a per-round handle
exposing ``pool(t)``, ``keyset(t)``, ``reward(arm_id)`` and
``feedback(key_id)``; policies never see ground truth.

Wall-clock durations are captured around the selection computations only
(environment sampling, feedback generation and estimator updates are
excluded), separately for the arm-selection and conversation phases.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from time import perf_counter

import numpy as np

from . import _kernels
from .estimator import ConfidenceParams, EstimatorState, exploration_coefficient
from .spanner import Spanner

POLICY_KINDS = (
    "LinUCB",
    "ArmCon",
    "ConUCB",
    "ConLinUCB-BS",
    "ConLinUCB-MCR",
    "ConLinUCB-UCB",
)


@dataclass(frozen=True)
class ConversationSchedule:
    """Cumulative conversation budget b(t) and the per-round quota q(t).

    Modes:
      * ``log_floor``: b(t) = rate * floor(log(t + 1)), natural log by
        default (``log_base="10"`` switches to base 10). Produces occasional
        bursts of conversations.
      * ``linear``: b(t) = rate * t with rate in (0, 1).

    ``q_convention`` picks how the quota is derived from b:
      * ``literal``: allowed iff b(t) - b(t-1) > 0, q = floor(b(t) - b(t-1)).
        Degenerate for linear rates below 1 (q is always 0).
      * ``floor``: q = floor(b(t)) - floor(b(t-1)), allowed iff q > 0.
    """

    mode: str
    rate: float
    q_convention: str = "literal"
    log_base: str = "e"

    def __post_init__(self):
        if self.mode not in ("log_floor", "linear"):
            raise ValueError(f"unknown schedule mode {self.mode!r}")
        if self.q_convention not in ("literal", "floor"):
            raise ValueError(f"unknown q convention {self.q_convention!r}")
        if self.log_base not in ("e", "10"):
            raise ValueError(f"log base must be 'e' or '10', got {self.log_base!r}")
        if self.mode == "linear":
            if not 0.0 < self.rate < 1.0:
                raise ValueError(f"linear rate must lie in (0, 1), got {self.rate}")
        elif self.rate <= 0.0:
            raise ValueError(f"rate must be positive, got {self.rate}")

    def cumulative(self, t: int) -> float:
        """Budget function value b(t); b(0) = 0."""
        if t <= 0:
            return 0.0
        if self.mode == "linear":
            return self.rate * t
        log_val = math.log10(t + 1) if self.log_base == "10" else math.log(t + 1)
        return self.rate * math.floor(log_val)

    def budget(self, t: int) -> tuple[bool, int]:
        """(conversations allowed this round, how many)."""
        if t < 1:
            raise ValueError("round index starts at 1")
        bt = self.cumulative(t)
        bt_prev = self.cumulative(t - 1)
        if self.q_convention == "floor":
            q = math.floor(bt) - math.floor(bt_prev)
            return q > 0, max(q, 0)
        allowed = bt - bt_prev > 0.0
        return allowed, max(math.floor(bt - bt_prev), 0)


@dataclass(frozen=True)
class StepOutcome:
    """Everything one round produced, including per-phase selection timings."""

    arm: int
    reward: float
    keyterms: tuple[int, ...]
    feedbacks: tuple[float, ...]
    num_conversations: int
    est_reward: float
    conf_radius: float
    arm_select_seconds: float
    key_select_seconds: float


def _lowest_id_argmax(ids: np.ndarray, scores: np.ndarray) -> int:
    best = scores.max()
    return int(ids[scores == best].min())


class Policy:
    """Common machinery: arm selection by estimated reward + confidence radius."""

    kind = "?"

    def __init__(self, arm_features, key_features, params: ConfidenceParams,
                 schedule: ConversationSchedule | None,
                 exploration_scale: float = 1.0):
        self.arm_features = np.ascontiguousarray(arm_features, dtype=np.float64)
        self.key_features = (
            None if key_features is None
            else np.ascontiguousarray(key_features, dtype=np.float64)
        )
        if params.d != self.arm_features.shape[1]:
            raise ValueError("confidence params dimension does not match features")
        if exploration_scale <= 0.0:
            raise ValueError("exploration scale must be positive")
        self.params = params
        self.schedule = schedule
        self.exploration_scale = float(exploration_scale)
        self.state = EstimatorState(params.d, params.beta)

    # -- selection ---------------------------------------------------------

    def _budget_value(self, t: int) -> float:
        return self.schedule.cumulative(t) if self.schedule is not None else 0.0

    def alpha(self, t: int) -> float:
        """Exploration coefficient actually used for selection: the
        theoretical width times a practical scale (1.0 keeps the pure
        formula)."""
        return self.exploration_scale * exploration_coefficient(
            t, self._budget_value(t), self.params
        )

    def select_arm(self, pool, t: int) -> int:
        """Pool arm maximizing estimated reward plus confidence radius;
        exact ties broken by lowest arm id."""
        arm, _, _ = self._pick_arm(np.asarray(pool, dtype=np.int64), t)
        return arm

    def _pick_arm(self, pool: np.ndarray, t: int) -> tuple[int, float, float]:
        if pool.size == 0:
            raise ValueError("cannot select from an empty pool")
        alpha = self.alpha(t)
        theta = self.state.theta()
        feats = self.arm_features[pool]
        scores = _kernels.ucb_scores(feats, theta, self.state.Minv, alpha)
        arm = _lowest_id_argmax(pool, scores)
        x = self.arm_features[arm]
        est = float(x @ theta)
        radius = self.state.conf_radius(x, alpha)
        return arm, est, radius

    # -- round loop --------------------------------------------------------

    def step(self, handle, t: int) -> StepOutcome:
        """One round: conversations (if budgeted), then play one arm."""
        raise NotImplementedError

    def _arm_phase(self, handle, pool, t, keyterms, feedbacks, num_conv,
                   key_seconds) -> StepOutcome:
        start = perf_counter()
        arm, est, radius = self._pick_arm(pool, t)
        arm_seconds = perf_counter() - start
        reward = handle.reward(arm)
        self.state.update(self.arm_features[arm], reward, level="arm")
        return StepOutcome(
            arm=arm,
            reward=reward,
            keyterms=tuple(keyterms),
            feedbacks=tuple(feedbacks),
            num_conversations=num_conv,
            est_reward=est,
            conf_radius=radius,
            arm_select_seconds=arm_seconds,
            key_select_seconds=key_seconds,
        )


class LinUCBPolicy(Policy):
    """Arm-level learning only; never conducts conversations."""

    kind = "LinUCB"

    def __init__(self, arm_features, params: ConfidenceParams,
                 exploration_scale: float = 1.0):
        super().__init__(arm_features, None, params, schedule=None,
                         exploration_scale=exploration_scale)

    def step(self, handle, t: int) -> StepOutcome:
        pool = np.asarray(handle.pool(t), dtype=np.int64)
        return self._arm_phase(handle, pool, t, [], [], 0, 0.0)


class ArmConPolicy(Policy):
    """Spends the conversation budget on extra arm queries over the current
    pool (same UCB rule, same estimator) instead of key-terms."""

    kind = "ArmCon"

    def __init__(self, arm_features, params: ConfidenceParams,
                 schedule: ConversationSchedule, exploration_scale: float = 1.0):
        super().__init__(arm_features, None, params, schedule,
                         exploration_scale=exploration_scale)

    def step(self, handle, t: int) -> StepOutcome:
        pool = np.asarray(handle.pool(t), dtype=np.int64)
        _, q = self.schedule.budget(t)
        key_seconds = 0.0
        for _ in range(q):
            start = perf_counter()
            arm, _, _ = self._pick_arm(pool, t)
            key_seconds += perf_counter() - start
            reward = handle.reward(arm)
            self.state.update(self.arm_features[arm], reward, level="arm")
        return self._arm_phase(handle, pool, t, [], [], q, key_seconds)


class ConLinUCBPolicy(Policy):
    """Joint-estimator conversational loop with a pluggable key-term strategy.

    One estimator state absorbs both feedback levels. Strategies:
      * ``bs``: uniform draw from a precomputed spanner (needs ``spanner``
        and a seeded ``rng`` exposing ``randrange``); unusable when the
        available key-term set varies per round.
      * ``mcr``: key-term with maximal confidence radius among candidates.
      * ``ucb``: estimated feedback plus confidence radius among candidates.
    """

    def __init__(self, arm_features, key_features, params: ConfidenceParams,
                 schedule: ConversationSchedule, strategy: str,
                 spanner: Spanner | None = None, rng=None, seed: int | None = None,
                 exploration_scale: float = 1.0):
        if strategy not in ("bs", "mcr", "ucb"):
            raise ValueError(f"unknown key-term strategy {strategy!r}")
        if key_features is None:
            raise ValueError("conversational policies need key-term features")
        super().__init__(arm_features, key_features, params, schedule,
                         exploration_scale=exploration_scale)
        self.strategy = strategy
        self.kind = f"ConLinUCB-{strategy.upper()}"
        self.spanner = spanner
        self._rng = None
        self._members: tuple[int, ...] = ()
        if strategy == "bs":
            if spanner is None:
                raise ValueError("the spanner strategy needs a precomputed spanner")
            self._rng = rng if rng is not None else random.Random(seed)
            self._members = tuple(spanner.member_ids)
            self._num_members = len(self._members)
        self._all_keys = np.arange(self.key_features.shape[0], dtype=np.int64)

    def select_keyterm(self, candidates, t: int) -> int:
        """Next key-term to converse about; ``candidates=None`` means the full
        key-term set is available."""
        if self.strategy == "bs":
            if candidates is not None:
                raise ValueError(
                    "the spanner strategy does not apply to time-varying key-term sets"
                )
            return self._members[self._rng.randrange(self._num_members)]
        cand = self._all_keys if candidates is None else np.asarray(candidates, np.int64)
        if cand.size == 0:
            raise ValueError("cannot select from an empty candidate set")
        alpha = self.alpha(t)
        feats = self.key_features[cand]
        if self.strategy == "mcr":
            scores = alpha * _kernels.radius_scores(feats, self.state.Minv)
        else:
            theta = self.state.theta()
            scores = _kernels.ucb_scores(feats, theta, self.state.Minv, alpha)
        return _lowest_id_argmax(cand, scores)

    def step(self, handle, t: int) -> StepOutcome:
        _, q = self.schedule.budget(t)
        keyterms: list[int] = []
        feedbacks: list[float] = []
        key_seconds = 0.0
        if q > 0:
            candidates = handle.keyset(t)
            if self.strategy == "bs" and candidates is not None:
                raise ValueError(
                    "the spanner strategy does not apply to time-varying key-term sets"
                )
            for _ in range(q):
                start = perf_counter()
                k = self.select_keyterm(candidates, t)
                key_seconds += perf_counter() - start
                fb = handle.feedback(k)
                self.state.update(self.key_features[k], fb, level="key")
                keyterms.append(k)
                feedbacks.append(fb)
        pool = np.asarray(handle.pool(t), dtype=np.int64)
        return self._arm_phase(handle, pool, t, keyterms, feedbacks, q, key_seconds)


class ConUCBPolicy(Policy):
    """Two-stage baseline: a key-term-level ridge estimate feeds an arm-level
    estimate through a discount weight lam in (0, 1).

    Arm level solves min_theta lam * sum (x' theta - r)^2
    + (1 - lam) * ||theta - theta_key||^2, so its covariance is
    lam * sum x x^T + (1 - lam) I, maintained by feeding the shared update
    rule observations scaled by sqrt(lam). Key-terms are chosen to maximize
    the reduction of summed arm-side uncertainty over the current pool under
    the key-level covariance.
    """

    kind = "ConUCB"

    def __init__(self, arm_features, key_features, params: ConfidenceParams,
                 schedule: ConversationSchedule, lam: float = 0.5,
                 exploration_scale: float = 1.0):
        if not 0.0 < lam < 1.0:
            raise ValueError(f"discount weight must lie in (0, 1), got {lam}")
        super().__init__(arm_features, key_features, params, schedule,
                         exploration_scale=exploration_scale)
        if key_features is None:
            raise ValueError("conversational policies need key-term features")
        self.lam = float(lam)
        # arm-level state: ridge (1 - lam) plays the regularizer role
        self.arm_state = EstimatorState(params.d, 1.0 - lam)
        self.key_state = EstimatorState(params.d, params.beta)
        self.state = None  # two-stage: no single joint state
        self._sqrt_lam = math.sqrt(lam)

    def _theta(self) -> np.ndarray:
        theta_key = self.key_state.theta()
        return self.arm_state.Minv @ (self.arm_state.b + (1.0 - self.lam) * theta_key)

    def _width_coefficient(self, t: int) -> float:
        lam, beta, d = self.lam, self.params.beta, self.params.d
        delta = self.params.delta
        bt = self._budget_value(t)
        two_log = 2.0 * math.log(2.0 / delta)
        term1 = math.sqrt((1.0 - lam) / lam)
        term2 = math.sqrt((1.0 - lam) / (lam * beta)) * math.sqrt(
            two_log + d * math.log(1.0 + bt / (beta * d))
        )
        term3 = math.sqrt(two_log + d * math.log(1.0 + lam * t / ((1.0 - lam) * d)))
        return self.exploration_scale * (term1 + term2 + term3)

    def _pick_arm(self, pool: np.ndarray, t: int) -> tuple[int, float, float]:
        if pool.size == 0:
            raise ValueError("cannot select from an empty pool")
        width = self._width_coefficient(t)
        theta = self._theta()
        feats = self.arm_features[pool]
        scores = _kernels.ucb_scores(feats, theta, self.arm_state.Minv, width)
        arm = _lowest_id_argmax(pool, scores)
        x = self.arm_features[arm]
        est = float(x @ theta)
        radius = self.arm_state.conf_radius(x, width)
        return arm, est, radius

    def select_keyterm(self, candidates, pool) -> int:
        cand = (
            np.arange(self.key_features.shape[0], dtype=np.int64)
            if candidates is None else np.asarray(candidates, np.int64)
        )
        if cand.size == 0:
            raise ValueError("cannot select from an empty candidate set")
        kinv = self.key_state.Minv
        pool_feats = self.arm_features[pool]
        key_feats = self.key_features[cand]
        cross = pool_feats @ kinv @ key_feats.T
        gain = (cross**2).sum(axis=0)
        norm_sq = np.einsum("ij,jk,ik->i", key_feats, kinv, key_feats)
        scores = gain / (1.0 + norm_sq)
        return _lowest_id_argmax(cand, scores)

    def step(self, handle, t: int) -> StepOutcome:
        pool = np.asarray(handle.pool(t), dtype=np.int64)
        _, q = self.schedule.budget(t)
        keyterms: list[int] = []
        feedbacks: list[float] = []
        key_seconds = 0.0
        if q > 0:
            candidates = handle.keyset(t)
            for _ in range(q):
                start = perf_counter()
                k = self.select_keyterm(candidates, pool)
                key_seconds += perf_counter() - start
                fb = handle.feedback(k)
                self.key_state.update(self.key_features[k], fb, level="key")
                keyterms.append(k)
                feedbacks.append(fb)
        start = perf_counter()
        arm, est, radius = self._pick_arm(pool, t)
        arm_seconds = perf_counter() - start
        reward = handle.reward(arm)
        self.arm_state.update(
            self._sqrt_lam * self.arm_features[arm], self._sqrt_lam * reward,
            level="arm",
        )
        return StepOutcome(
            arm=arm, reward=reward, keyterms=tuple(keyterms),
            feedbacks=tuple(feedbacks), num_conversations=q,
            est_reward=est, conf_radius=radius,
            arm_select_seconds=arm_seconds, key_select_seconds=key_seconds,
        )


def make_policy(kind: str, arm_features, key_features=None,
                params: ConfidenceParams | None = None,
                schedule: ConversationSchedule | None = None,
                spanner: Spanner | None = None, rng=None,
                seed: int | None = None, lam: float = 0.5,
                exploration_scale: float = 1.0) -> Policy:
    """Instantiate a policy by its configuration name."""
    if params is None:
        params = ConfidenceParams(d=np.asarray(arm_features).shape[1])
    if kind == "LinUCB":
        return LinUCBPolicy(arm_features, params, exploration_scale=exploration_scale)
    if kind not in POLICY_KINDS:
        raise ValueError(f"unknown policy kind {kind!r}; expected one of {POLICY_KINDS}")
    if schedule is None:
        raise ValueError(f"{kind} needs a conversation schedule")
    if kind == "ArmCon":
        return ArmConPolicy(arm_features, params, schedule,
                            exploration_scale=exploration_scale)
    if kind == "ConUCB":
        return ConUCBPolicy(arm_features, key_features, params, schedule, lam=lam,
                            exploration_scale=exploration_scale)
    strategy = kind.rsplit("-", 1)[1].lower()
    return ConLinUCBPolicy(arm_features, key_features, params, schedule,
                           strategy, spanner=spanner, rng=rng, seed=seed,
                           exploration_scale=exploration_scale)
