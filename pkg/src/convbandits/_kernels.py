"""Hot numeric kernels: numba-compiled loops with a pure-numpy fallback.

Every kernel exists in two versions: a scalar-loop implementation that numba
compiles to machine code, and a vectorized numpy implementation. The numba
path is the default; set the environment variable ``CONVBANDITS_NO_NUMBA=1``
(before import) to force the numpy path, e.g. for debugging or on platforms
where numba is unavailable. ``benchmarks/kernel_bench.py`` compares the two.

Functions that consume randomness take a ``numpy.random.Generator`` and draw
scalar values one at a time, so both backends consume identical streams.
"""

import os

import numpy as np

_ENV_FLAG = "CONVBANDITS_NO_NUMBA"

NUMBA_ENABLED = False
if not os.environ.get(_ENV_FLAG):
    try:
        from numba import njit as _njit

        NUMBA_ENABLED = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        pass

if not NUMBA_ENABLED:
    def _njit(*args, **kwargs):
        # identity decorator: the loop implementations run as plain Python
        if args and callable(args[0]):
            return args[0]

        def wrap(f):
            return f

        return wrap


def backend() -> str:
    """Name of the active kernel backend ("numba" or "numpy")."""
    return "numba" if NUMBA_ENABLED else "numpy"


# ---------------------------------------------------------------------------
# loop implementations (numba-friendly)
# ---------------------------------------------------------------------------


def _quad_form_loop(minv, x):
    d = x.shape[0]
    acc = 0.0
    for i in range(d):
        row = 0.0
        for j in range(d):
            row += minv[i, j] * x[j]
        acc += x[i] * row
    return acc


def _ucb_scores_loop(feats, theta, minv, alpha):
    n, d = feats.shape
    out = np.empty(n)
    for k in range(n):
        est = 0.0
        quad = 0.0
        for i in range(d):
            row = 0.0
            for j in range(d):
                row += minv[i, j] * feats[k, j]
            quad += feats[k, i] * row
            est += feats[k, i] * theta[i]
        if quad < 0.0:
            quad = 0.0
        out[k] = est + alpha * np.sqrt(quad)
    return out


def _radius_scores_loop(feats, minv):
    n, d = feats.shape
    out = np.empty(n)
    for k in range(n):
        quad = 0.0
        for i in range(d):
            row = 0.0
            for j in range(d):
                row += minv[i, j] * feats[k, j]
            quad += feats[k, i] * row
        if quad < 0.0:
            quad = 0.0
        out[k] = np.sqrt(quad)
    return out


def _sm_update_loop(m, minv, b, x, r):
    d = x.shape[0]
    v = np.empty(d)
    denom = 1.0
    for i in range(d):
        acc = 0.0
        for j in range(d):
            acc += minv[i, j] * x[j]
        v[i] = acc
        denom += x[i] * acc
    for i in range(d):
        vi = v[i]
        xi = x[i]
        for j in range(d):
            minv[i, j] -= vi * v[j] / denom
            m[i, j] += xi * x[j]
        b[i] += r * xi


# ---------------------------------------------------------------------------
# vectorized numpy implementations
# ---------------------------------------------------------------------------


def _quad_form_np(minv, x):
    return float(x @ minv @ x)


def _ucb_scores_np(feats, theta, minv, alpha):
    quad = np.einsum("ij,jk,ik->i", feats, minv, feats)
    np.clip(quad, 0.0, None, out=quad)
    return feats @ theta + alpha * np.sqrt(quad)


def _radius_scores_np(feats, minv):
    quad = np.einsum("ij,jk,ik->i", feats, minv, feats)
    np.clip(quad, 0.0, None, out=quad)
    return np.sqrt(quad)


def _sm_update_np(m, minv, b, x, r):
    v = minv @ x
    denom = 1.0 + float(x @ v)
    minv -= np.outer(v, v) / denom
    m += np.outer(x, x)
    b += r * x


# ---------------------------------------------------------------------------
# backend selection
# ---------------------------------------------------------------------------

if NUMBA_ENABLED:
    quad_form = _njit(cache=True)(_quad_form_loop)
    ucb_scores = _njit(cache=True)(_ucb_scores_loop)
    radius_scores = _njit(cache=True)(_radius_scores_loop)
    sm_update = _njit(cache=True)(_sm_update_loop)
else:
    quad_form = _quad_form_np
    ucb_scores = _ucb_scores_np
    radius_scores = _radius_scores_np
    sm_update = _sm_update_np

# implementation pairs, for the kernel benchmark and cross-checking tests
KERNEL_PAIRS = {
    "quad_form": (_quad_form_loop, _quad_form_np),
    "ucb_scores": (_ucb_scores_loop, _ucb_scores_np),
    "radius_scores": (_radius_scores_loop, _radius_scores_np),
    "sm_update": (_sm_update_loop, _sm_update_np),
}


# ---------------------------------------------------------------------------
# rng-consuming kernels (single source, both backends)
# ---------------------------------------------------------------------------


@_njit(cache=True)
def sample_indices(rng, n, k):
    """Draw k distinct indices from range(n) by partial Fisher-Yates."""
    idx = np.arange(n)
    for i in range(k):
        j = rng.integers(i, n)
        tmp = idx[i]
        idx[i] = idx[j]
        idx[j] = tmp
    return idx[:k].copy()


@_njit(cache=True)
def ceiling_scan(
    arm_feats,
    span_feats,
    theta_star,
    rate,
    pool_size,
    horizon,
    t_start,
    beta,
    delta,
    sigma,
    min_eig,
    pool_rng,
    noise_rng,
    policy_rng,
):
    """Full spanner-policy run under a linear conversation schedule.

    Plays ``horizon`` rounds of the joint-estimator loop with uniform spanner
    conversations (floor-difference budget, cumulative rate*t), tracking the
    played arm's inverse-covariance norm each round. Returns the maximum of
    ``norm_t * sqrt(min_eig * rate * t / 2)`` over rounds ``t >= t_start``,
    i.e. the worst observed norm relative to its theoretical ceiling.
    """
    n_arms, d = arm_feats.shape
    n_span = span_feats.shape[0]
    m = np.eye(d) * beta
    minv = np.eye(d) / beta
    b = np.zeros(d)
    max_ratio = 0.0
    prev_floor = 0
    sqrt_beta = np.sqrt(beta)
    two_log_inv_delta = 2.0 * np.log(1.0 / delta)
    for t in range(1, horizon + 1):
        cur_floor = int(np.floor(rate * t))
        q = cur_floor - prev_floor
        prev_floor = cur_floor
        for _ in range(q):
            j = policy_rng.integers(0, n_span)
            x = span_feats[j]
            fb = x @ theta_star
            if sigma > 0.0:
                fb += sigma * noise_rng.standard_normal()
            sm_update(m, minv, b, x, fb)
        theta = minv @ b
        pool = sample_indices(pool_rng, n_arms, pool_size)
        alpha = (
            np.sqrt(two_log_inv_delta + d * np.log(1.0 + (t + rate * t) / (beta * d)))
            + sqrt_beta
        )
        # score through the shared kernel so this scan and the per-round
        # policy path produce bit-identical trajectories on either backend
        scores = ucb_scores(arm_feats[pool], theta, minv, alpha)
        best_score = -np.inf
        best_arm = -1
        for i in range(pool_size):
            a = pool[i]
            s = scores[i]
            if s > best_score or (s == best_score and a < best_arm):
                best_score = s
                best_arm = a
        x = arm_feats[best_arm]
        quad = quad_form(minv, x)
        if quad < 0.0:
            quad = 0.0
        best_norm = np.sqrt(quad)
        r = x @ theta_star
        if sigma > 0.0:
            r += sigma * noise_rng.standard_normal()
        sm_update(m, minv, b, x, r)
        if t >= t_start:
            ratio = best_norm * np.sqrt(min_eig * rate * t / 2.0)
            if ratio > max_ratio:
                max_ratio = ratio
    return max_ratio
