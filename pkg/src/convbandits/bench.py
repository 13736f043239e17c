"""Experiment orchestration and reporting.

Runs (algorithm x user x run) grids over an environment, accumulates
cumulative-regret traces with per-phase selection timings, aggregates them,
evaluates the theoretical regret-bound formulas, and writes plot-ready CSV
artifacts plus a manifest sufficient for bit-identical reruns.

Regret is computed on noiseless expected values: realized noisy rewards feed
only the learner. Within one experiment every algorithm sees the same
per-round candidate pools for a given (user, run), so comparisons are paired.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import __version__, _kernels
from .env import Environment, SyntheticConfig, gen_synthetic
from .estimator import ConfidenceParams
from .policies import ConversationSchedule, make_policy
from .spanner import (
    compute_spanner,
    exploration_burn_in,
    min_covariance_eigenvalue,
)

# rng sub-stream tags; pool and key-pool streams are shared across algorithms
_POOL_STREAM, _KEYPOOL_STREAM, _NOISE_STREAM, _POLICY_STREAM = 0, 1, 2, 3


@dataclass(frozen=True)
class ExperimentConfig:
    """Full description of one benchmark run."""

    environment: SyntheticConfig | str
    algorithms: tuple[dict, ...]
    horizon: int
    schedule: ConversationSchedule
    pool_size: int | None = None
    key_pool_size: int | None = None
    num_runs: int = 1
    base_seed: int = 0
    out_dir: str | None = None

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.num_runs < 1:
            raise ValueError("num_runs must be >= 1")
        if not self.algorithms:
            raise ValueError("need at least one algorithm")
        object.__setattr__(self, "algorithms", tuple(dict(a) for a in self.algorithms))
        kinds = [a.get("kind") for a in self.algorithms]
        if len(set(kinds)) != len(kinds):
            raise ValueError("duplicate algorithm kinds in one experiment")

    def to_dict(self) -> dict:
        env = (
            {"artifact": self.environment}
            if isinstance(self.environment, str)
            else {"synthetic": self.environment.to_dict()}
        )
        return {
            "environment": env,
            "algorithms": [dict(a) for a in self.algorithms],
            "horizon": self.horizon,
            "schedule": {
                "mode": self.schedule.mode,
                "rate": self.schedule.rate,
                "q_convention": self.schedule.q_convention,
                "log_base": self.schedule.log_base,
            },
            "pool_size": self.pool_size,
            "key_pool_size": self.key_pool_size,
            "num_runs": self.num_runs,
            "base_seed": self.base_seed,
            "out_dir": self.out_dir,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        env_spec = raw["environment"]
        if "artifact" in env_spec:
            environment = env_spec["artifact"]
        else:
            environment = SyntheticConfig.from_dict(env_spec["synthetic"])
        return cls(
            environment=environment,
            algorithms=tuple(raw["algorithms"]),
            horizon=int(raw["horizon"]),
            schedule=ConversationSchedule(**raw["schedule"]),
            pool_size=raw.get("pool_size"),
            key_pool_size=raw.get("key_pool_size"),
            num_runs=int(raw.get("num_runs", 1)),
            base_seed=int(raw.get("base_seed", 0)),
            out_dir=raw.get("out_dir"),
        )

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class RegretTrace:
    """Per-round cumulative regret and selection timings for one simulation."""

    algorithm: str
    user: int
    run: int
    cum_regret: np.ndarray
    arm_select_seconds: float
    key_select_seconds: float

    @property
    def final_regret(self) -> float:
        return float(self.cum_regret[-1])


class _RoundHandle:
    """Read-only environment view handed to policies each round."""

    __slots__ = ("env", "user", "noise_rng", "current_pool", "current_keyset")

    def __init__(self, env: Environment, user, noise_rng):
        self.env = env
        self.user = user
        self.noise_rng = noise_rng
        self.current_pool = None
        self.current_keyset = None

    def pool(self, t):
        return self.current_pool

    def keyset(self, t):
        return self.current_keyset

    def reward(self, arm_id):
        return self.env.reward(self.user, arm_id, self.noise_rng)

    def feedback(self, key_id):
        return self.env.keyterm_feedback(self.user, key_id, self.noise_rng)


def _derive_rng(base_seed, stream, algo_idx, user, run):
    return np.random.default_rng(
        np.random.SeedSequence([base_seed, stream, algo_idx, user, run])
    )


def _build_policy(env: Environment, algo_cfg: dict, algo_idx: int, user: int,
                  run: int, schedule: ConversationSchedule, base_seed: int):
    kind = algo_cfg["kind"]
    params = ConfidenceParams(
        d=env.dim,
        delta=float(algo_cfg.get("delta", 0.05)),
        beta=float(algo_cfg.get("beta", 1.0)),
    )
    seed_offset = int(algo_cfg.get("seed", 0))
    seed = int(
        np.random.SeedSequence(
            [base_seed + seed_offset, _POLICY_STREAM, algo_idx, user, run]
        ).generate_state(1)[0]
    )
    return make_policy(
        kind,
        env.arms.features,
        env.keyterms.features,
        params=params,
        schedule=schedule,
        spanner=env.spanner,
        seed=seed,
        lam=float(algo_cfg.get("lam", 0.5)),
        exploration_scale=float(algo_cfg.get("exploration_scale", 1.0)),
    )


def _simulate(env: Environment, algo_cfg: dict, algo_idx: int, user_id: int,
              run: int, horizon: int, schedule: ConversationSchedule,
              pool_size: int, key_pool_size: int | None,
              base_seed: int) -> RegretTrace:
    user = env.users[user_id]
    policy = _build_policy(env, algo_cfg, algo_idx, user_id, run, schedule, base_seed)
    pool_rng = _derive_rng(base_seed, _POOL_STREAM, 0, user_id, run)
    keypool_rng = _derive_rng(base_seed, _KEYPOOL_STREAM, 0, user_id, run)
    noise_rng = _derive_rng(base_seed, _NOISE_STREAM, algo_idx, user_id, run)
    handle = _RoundHandle(env, user, noise_rng)
    arm_feats = env.arms.features
    theta_star = user.theta
    cum = np.empty(horizon)
    total = 0.0
    arm_secs = 0.0
    key_secs = 0.0
    for t in range(1, horizon + 1):
        pool = env.sample_pool(pool_rng, pool_size)
        handle.current_pool = pool
        handle.current_keyset = (
            env.sample_keypool(keypool_rng, key_pool_size)
            if key_pool_size is not None
            else None
        )
        outcome = policy.step(handle, t)
        # one shared value vector keeps the optimal arm's regret exactly zero
        vals = arm_feats[pool] @ theta_star
        chosen = int(np.flatnonzero(pool == outcome.arm)[0])
        total += float(vals.max() - vals[chosen])
        cum[t - 1] = total
        arm_secs += outcome.arm_select_seconds
        key_secs += outcome.key_select_seconds
    return RegretTrace(
        algorithm=policy.kind,
        user=user_id,
        run=run,
        cum_regret=cum,
        arm_select_seconds=arm_secs,
        key_select_seconds=key_secs,
    )


def resolve_environment(cfg: ExperimentConfig) -> Environment:
    """Materialize the experiment's environment, computing and attaching a
    spanner when a spanner-based algorithm needs one."""
    if isinstance(cfg.environment, str):
        env = Environment.load(cfg.environment)
    else:
        env = gen_synthetic(cfg.environment)
    needs_spanner = any(a["kind"] == "ConLinUCB-BS" for a in cfg.algorithms)
    if needs_spanner and env.spanner is None:
        approx_c = 1.05
        for a in cfg.algorithms:
            if a["kind"] == "ConLinUCB-BS":
                approx_c = float(a.get("spanner_c", 1.05))
        env = env.with_spanner(compute_spanner(env.keyterms, approx_c))
    return env


_worker_ctx = None


def _init_worker(ctx):
    global _worker_ctx
    _worker_ctx = ctx


def _run_task(task):
    algo_idx, user_id, run = task
    env, algorithms, horizon, schedule, pool_size, key_pool_size, base_seed = _worker_ctx
    return _simulate(env, algorithms[algo_idx], algo_idx, user_id, run, horizon,
                     schedule, pool_size, key_pool_size, base_seed)


def run_experiment(cfg: ExperimentConfig, env: Environment | None = None,
                   threads: int = 1) -> list[RegretTrace]:
    """Simulate the full (algorithm x user x run) grid.

    Deterministic given the config and base seed (selection timings aside).
    Rejects spanner-based algorithms combined with a time-varying key-term
    pool. ``threads > 1`` distributes simulations over processes; timings are
    measured inside each simulation, so parallelism does not distort them.
    """
    if env is None:
        env = resolve_environment(cfg)
    key_pool_size = (
        cfg.key_pool_size if cfg.key_pool_size is not None else env.key_pool_size
    )
    if key_pool_size is not None and any(
        a["kind"] == "ConLinUCB-BS" for a in cfg.algorithms
    ):
        raise ValueError(
            "the spanner strategy does not apply to time-varying key-term sets"
        )
    pool_size = cfg.pool_size if cfg.pool_size is not None else env.pool_size
    tasks = [
        (algo_idx, user_id, run)
        for algo_idx in range(len(cfg.algorithms))
        for user_id in range(len(env.users))
        for run in range(cfg.num_runs)
    ]
    ctx = (env, cfg.algorithms, cfg.horizon, cfg.schedule, pool_size,
           key_pool_size, cfg.base_seed)
    if threads <= 1:
        _init_worker(ctx)
        return [_run_task(t) for t in tasks]
    with ProcessPoolExecutor(
        max_workers=threads, initializer=_init_worker, initargs=(ctx,)
    ) as pool:
        return list(pool.map(_run_task, tasks, chunksize=8))


def aggregate(traces) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Pointwise mean and population standard deviation of cumulative regret
    across (user, run) traces, per algorithm."""
    by_algo: dict[str, list[np.ndarray]] = {}
    for tr in traces:
        by_algo.setdefault(tr.algorithm, []).append(tr.cum_regret)
    out = {}
    for algo, curves in by_algo.items():
        stack = np.stack(curves)
        out[algo] = (stack.mean(axis=0), stack.std(axis=0))
    return out


def final_regret_by_run(traces) -> dict[str, np.ndarray]:
    """Per algorithm: the user-averaged final regret of each run index."""
    by_algo: dict[str, dict[int, list[float]]] = {}
    for tr in traces:
        by_algo.setdefault(tr.algorithm, {}).setdefault(tr.run, []).append(
            tr.final_regret
        )
    out = {}
    for algo, runs in by_algo.items():
        out[algo] = np.array([np.mean(runs[r]) for r in sorted(runs)])
    return out


# ---------------------------------------------------------------------------
# theoretical regret-bound evaluators
# ---------------------------------------------------------------------------


def regret_bound_spanner(horizon, rate: float, min_eig: float, beta: float,
                         delta: float, d: int):
    """Upper bound on the spanner policy's cumulative regret under a linear
    conversation schedule. Accepts a scalar or array horizon."""
    if not 0.0 < delta <= 0.25:
        raise ValueError(f"delta must lie in (0, 1/4], got {delta}")
    if not 0.0 < rate <= 1.0 or min_eig <= 0.0 or beta <= 0.0 or d < 1:
        raise ValueError("invalid bound parameters")
    t = np.asarray(horizon, dtype=np.float64)
    lead = (
        4.0
        * np.sqrt(2.0 / (rate * min_eig))
        * np.sqrt(t)
        * (
            np.sqrt(
                2.0 * np.log(2.0 / delta)
                + d * np.log(1.0 + (1.0 + rate) * t / (beta * d))
            )
            + np.sqrt(beta)
        )
    )
    tail = (256.0 / (rate * min_eig**2)) * np.log(
        256.0 * d / (min_eig**2 * delta)
    ) + 1.0
    out = lead + tail
    return float(out) if np.isscalar(horizon) else out


def regret_bound_mcr(horizon, rate: float, beta: float, delta: float, d: int):
    """Upper bound on the max-confidence-radius policy's cumulative regret."""
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if rate < 0.0 or beta <= 0.0 or d < 1:
        raise ValueError("invalid bound parameters")
    t = np.asarray(horizon, dtype=np.float64)
    out = (
        2.0
        * np.sqrt(2.0 * t * d * np.log(1.0 + (t + 1.0) / (beta * d)))
        * (
            np.sqrt(beta)
            + np.sqrt(
                2.0 * np.log(1.0 / delta)
                + d * np.log(1.0 + (rate + 1.0) * t / (beta * d))
            )
        )
    )
    return float(out) if np.isscalar(horizon) else out


def regret_bound_conucb(horizon, rate: float, lam: float, beta: float,
                        delta: float, d: int):
    """The two-stage baseline's published regret upper bound."""
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if not 0.0 < lam < 1.0 or rate < 0.0 or beta <= 0.0 or d < 1:
        raise ValueError("invalid bound parameters")
    t = np.asarray(horizon, dtype=np.float64)
    two_log = 2.0 * np.log(2.0 / delta)
    out = (
        2.0
        * np.sqrt(2.0 * t * d * np.log(1.0 + lam * (t + 1.0) / ((1.0 - lam) * d)))
        * (
            np.sqrt((1.0 - lam) / lam)
            + np.sqrt((1.0 - lam) / (lam * beta))
            * np.sqrt(two_log + d * np.log(1.0 + rate * t / (beta * d)))
            + np.sqrt(two_log + d * np.log(1.0 + lam * t / ((1.0 - lam) * d)))
        )
    )
    return float(out) if np.isscalar(horizon) else out


# ---------------------------------------------------------------------------
# CSV / manifest export
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


def export(traces, out_dir, cfg: ExperimentConfig | None = None,
           environment: Environment | None = None) -> dict:
    """Write regret_curves.csv, summary.csv and manifest.json under out_dir.

    regret_curves.csv is fully determined by the config and base seed;
    wall-clock timings live only in summary.csv.
    """
    traces = sorted(traces, key=lambda tr: (tr.algorithm, tr.user, tr.run))
    if not traces:
        raise ValueError("no traces to export")
    os.makedirs(out_dir, exist_ok=True)
    curves_path = os.path.join(out_dir, "regret_curves.csv")
    with open(curves_path, "w") as fh:
        fh.write("run,user,algorithm,t,cum_regret\n")
        for tr in traces:
            for t, value in enumerate(tr.cum_regret, start=1):
                fh.write(f"{tr.run},{tr.user},{tr.algorithm},{t},{_fmt(value)}\n")

    num_runs = cfg.num_runs if cfg is not None else (
        max(tr.run for tr in traces) + 1
    )
    summary_path = os.path.join(out_dir, "summary.csv")
    algos = sorted({tr.algorithm for tr in traces})
    with open(summary_path, "w") as fh:
        fh.write("algorithm,T,mean_regret,std,arm_select_seconds,key_select_seconds\n")
        for algo in algos:
            sub = [tr for tr in traces if tr.algorithm == algo]
            finals = np.array([tr.final_regret for tr in sub])
            horizon = len(sub[0].cum_regret)
            arm_secs = sum(tr.arm_select_seconds for tr in sub) / num_runs
            key_secs = sum(tr.key_select_seconds for tr in sub) / num_runs
            fh.write(
                f"{algo},{horizon},{_fmt(finals.mean())},{_fmt(finals.std())},"
                f"{_fmt(arm_secs)},{_fmt(key_secs)}\n"
            )

    manifest = {
        "package_version": __version__,
        "kernel_backend": _kernels.backend(),
        "num_traces": len(traces),
        "config": cfg.to_dict() if cfg is not None else None,
        "base_seed": cfg.base_seed if cfg is not None else None,
        "environment_provenance": (
            environment.provenance if environment is not None else None
        ),
    }
    manifest_path = os.path.join(out_dir, "manifest.json")
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return {
        "regret_curves": curves_path,
        "summary": summary_path,
        "manifest": manifest_path,
    }


# ---------------------------------------------------------------------------
# empirical checks of the concentration guarantees
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CoverageReport:
    """Observed frequency of the played arm's true expected reward escaping
    its confidence interval."""

    samples: int
    violations: int

    @property
    def rate(self) -> float:
        return self.violations / self.samples if self.samples else 0.0


def check_confidence_coverage(
    env: Environment | None = None,
    *,
    d: int = 10,
    num_arms: int = 200,
    num_keyterms: int = 50,
    num_users: int = 10,
    horizon: int = 1000,
    pool_size: int = 20,
    delta: float = 0.05,
    beta: float = 1.0,
    sigma: float = 0.1,
    schedule: ConversationSchedule | None = None,
    kind: str = "ConLinUCB-MCR",
    base_seed: int = 7,
    alpha_scale: float = 1.0,
) -> CoverageReport:
    """Run a conversational policy against known ground truth and count how
    often |x_a . (theta_t - theta*)| exceeds the confidence radius at the
    played arm. ``alpha_scale`` widens (or narrows) the radius used in the
    comparison without changing the policy's behaviour."""
    if env is None:
        env = gen_synthetic(SyntheticConfig(
            num_arms=num_arms, num_keyterms=num_keyterms, d=d,
            num_users=num_users, noise_sigma=sigma, pool_size=pool_size,
            seed=base_seed,
        ))
    if schedule is None:
        schedule = ConversationSchedule(mode="log_floor", rate=5.0)
    algo_cfg = {"kind": kind, "delta": delta, "beta": beta}
    violations = 0
    samples = 0
    for user_id in range(len(env.users)):
        user = env.users[user_id]
        policy = _build_policy(env, algo_cfg, 0, user_id, 0, schedule, base_seed)
        pool_rng = _derive_rng(base_seed, _POOL_STREAM, 0, user_id, 0)
        noise_rng = _derive_rng(base_seed, _NOISE_STREAM, 0, user_id, 0)
        handle = _RoundHandle(env, user, noise_rng)
        for t in range(1, horizon + 1):
            handle.current_pool = env.sample_pool(pool_rng)
            outcome = policy.step(handle, t)
            true_mean = float(env.arms.features[outcome.arm] @ user.theta)
            if abs(outcome.est_reward - true_mean) > alpha_scale * outcome.conf_radius:
                violations += 1
            samples += 1
    return CoverageReport(samples=samples, violations=violations)


@dataclass(frozen=True)
class NormCeilingReport:
    """Worst observed ratio of the played arm's inverse-covariance norm to
    its theoretical ceiling, per seed, past the burn-in round."""

    max_ratios: tuple[float, ...]
    burn_in: float
    min_eig: float
    horizon: int

    @property
    def passes(self) -> int:
        return sum(1 for r in self.max_ratios if r <= 1.0)


def check_norm_ceiling(
    *,
    d: int = 5,
    rate: float = 0.5,
    num_arms: int = 200,
    num_keyterms: int = 200,
    pool_size: int = 20,
    delta: float = 0.125,
    beta: float = 1.0,
    sigma: float = 0.1,
    approx_c: float = 1.05,
    seeds: int = 10,
    horizon_margin: float = 1.05,
    base_seed: int = 11,
) -> NormCeilingReport:
    """Spanner-policy runs under a linear conversation schedule
    (floor-difference quota): past the burn-in round the played arm's norm
    should stay below sqrt(2 / (min_eig * rate * t)). Returns the per-seed
    maxima of norm / ceiling."""
    env = gen_synthetic(SyntheticConfig(
        num_arms=num_arms, num_keyterms=num_keyterms, d=d, num_users=1,
        nk_range=(1, 1), noise_sigma=sigma, pool_size=pool_size,
        seed=base_seed,
    ))
    span = compute_spanner(env.keyterms, approx_c)
    min_eig = min_covariance_eigenvalue(span)
    burn_in = exploration_burn_in(rate, min_eig, delta, d)
    t_start = int(math.ceil(burn_in))
    horizon = int(math.ceil(burn_in * horizon_margin)) + 1
    span_feats = np.ascontiguousarray(env.keyterms.features[list(span.member_ids)])
    theta_star = np.ascontiguousarray(env.users[0].theta)
    arm_feats = np.ascontiguousarray(env.arms.features)
    ratios = []
    for s in range(seeds):
        pool_rng = _derive_rng(base_seed, _POOL_STREAM, 0, 0, s)
        noise_rng = _derive_rng(base_seed, _NOISE_STREAM, 0, 0, s)
        policy_rng = _derive_rng(base_seed, _POLICY_STREAM, 0, 0, s)
        ratios.append(float(_kernels.ceiling_scan(
            arm_feats, span_feats, theta_star, rate, pool_size, horizon,
            t_start, beta, delta, sigma, min_eig,
            pool_rng, noise_rng, policy_rng,
        )))
    return NormCeilingReport(
        max_ratios=tuple(ratios),
        burn_in=burn_in,
        min_eig=min_eig,
        horizon=horizon,
    )
