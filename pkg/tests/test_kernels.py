import os
import subprocess
import sys

import numpy as np
import pytest

from convbandits import _kernels
from convbandits.bench import check_norm_ceiling
from convbandits.estimator import ConfidenceParams
from convbandits.policies import ConLinUCBPolicy, ConversationSchedule
from convbandits.spanner import Spanner

from conftest import unit_rows


def _random_pd(rng, d):
    a = rng.standard_normal((d, d))
    return np.linalg.inv(a @ a.T / d + np.eye(d))


@pytest.mark.parametrize("d,n", [(3, 7), (10, 20), (17, 40)])
def test_score_kernel_pairs_agree(rng, d, n):
    feats = unit_rows(rng.standard_normal((n, d)))
    theta = rng.standard_normal(d)
    minv = _random_pd(rng, d)
    for name, args in (
        ("ucb_scores", (feats, theta, minv, 1.7)),
        ("radius_scores", (feats, minv)),
    ):
        loop_impl, np_impl = _kernels.KERNEL_PAIRS[name]
        np.testing.assert_allclose(loop_impl(*args), np_impl(*args), atol=1e-12)
        np.testing.assert_allclose(
            getattr(_kernels, name)(*args), np_impl(*args), atol=1e-12
        )


def test_quad_form_pair_agrees(rng):
    minv = _random_pd(rng, 8)
    x = rng.standard_normal(8)
    loop_impl, np_impl = _kernels.KERNEL_PAIRS["quad_form"]
    assert loop_impl(minv, x) == pytest.approx(np_impl(minv, x), abs=1e-12)
    assert _kernels.quad_form(minv, x) == pytest.approx(np_impl(minv, x), abs=1e-12)


def test_sm_update_pair_agrees(rng):
    d = 6
    loop_impl, np_impl = _kernels.KERNEL_PAIRS["sm_update"]
    m1 = np.eye(d) * 1.5
    minv1 = np.eye(d) / 1.5
    b1 = np.zeros(d)
    m2, minv2, b2 = m1.copy(), minv1.copy(), b1.copy()
    for _ in range(40):
        x = rng.standard_normal(d)
        r = rng.standard_normal()
        loop_impl(m1, minv1, b1, x, r)
        np_impl(m2, minv2, b2, x, r)
    np.testing.assert_allclose(m1, m2, atol=1e-12)
    np.testing.assert_allclose(minv1, minv2, atol=1e-10)
    np.testing.assert_allclose(b1, b2, atol=1e-12)
    np.testing.assert_allclose(minv1 @ m1, np.eye(d), atol=1e-9)


def test_sample_indices_properties():
    rng = np.random.default_rng(0)
    seen = set()
    for _ in range(300):
        idx = _kernels.sample_indices(rng, 50, 12)
        assert len(set(idx.tolist())) == 12
        assert idx.min() >= 0 and idx.max() < 50
        seen.update(idx.tolist())
    assert seen == set(range(50))
    a = _kernels.sample_indices(np.random.default_rng(7), 30, 10)
    b = _kernels.sample_indices(np.random.default_rng(7), 30, 10)
    np.testing.assert_array_equal(a, b)


class _GeneratorRandrange:
    """randrange adapter so a policy consumes the same stream as the scan."""

    def __init__(self, generator):
        self._g = generator

    def randrange(self, n):
        return int(self._g.integers(0, n))


def test_ceiling_scan_matches_step_path():
    d, n_arms, pool_size, horizon, rate = 4, 30, 8, 400, 0.5
    arm_feats = unit_rows(np.random.default_rng(1).standard_normal((n_arms, d)))
    span_feats = np.ascontiguousarray(arm_feats[:d])
    theta_star = unit_rows(np.random.default_rng(2).standard_normal((1, d)))[0]
    beta, delta, sigma, min_eig = 1.0, 0.125, 0.1, 0.2

    scan = _kernels.ceiling_scan(
        arm_feats, span_feats, theta_star, rate, pool_size, horizon, 1,
        beta, delta, sigma, min_eig,
        np.random.default_rng(10), np.random.default_rng(11),
        np.random.default_rng(12),
    )

    # same rounds through the policy interface with identical generators
    _, logdet = np.linalg.slogdet(span_feats.T)
    span = Spanner(member_ids=tuple(range(d)), basis=span_feats.T.copy(),
                   approx_c=1.05, swap_count=0, log_abs_det=float(logdet))
    sched = ConversationSchedule(mode="linear", rate=rate, q_convention="floor")
    policy = ConLinUCBPolicy(
        arm_feats, span_feats, ConfidenceParams(d=d, delta=delta, beta=beta),
        sched, "bs", spanner=span,
        rng=_GeneratorRandrange(np.random.default_rng(12)),
    )
    pool_rng = np.random.default_rng(10)
    noise_rng = np.random.default_rng(11)

    class Handle:
        current_pool = None

        def pool(self, t):
            return self.current_pool

        def keyset(self, t):
            return None

        def reward(self, arm_id):
            return float(arm_feats[arm_id] @ theta_star
                         + sigma * noise_rng.standard_normal())

        def feedback(self, key_id):
            return float(span_feats[key_id] @ theta_star
                         + sigma * noise_rng.standard_normal())

    handle = Handle()
    max_ratio = 0.0
    for t in range(1, horizon + 1):
        handle.current_pool = _kernels.sample_indices(pool_rng, n_arms, pool_size)
        outcome = policy.step(handle, t)
        norm = outcome.conf_radius / policy.alpha(t)
        max_ratio = max(max_ratio, norm * np.sqrt(min_eig * rate * t / 2.0))
    assert scan == pytest.approx(max_ratio, abs=1e-9)


@pytest.mark.skipif(not _kernels.NUMBA_ENABLED, reason="numba disabled")
def test_ceiling_scan_compiled_matches_python_source():
    d, n_arms = 3, 20
    arm_feats = unit_rows(np.random.default_rng(5).standard_normal((n_arms, d)))
    span_feats = np.ascontiguousarray(arm_feats[:d])
    theta_star = unit_rows(np.random.default_rng(6).standard_normal((1, d)))[0]
    args = (arm_feats, span_feats, theta_star, 0.5, 6, 500, 1, 1.0, 0.125,
            0.1, 0.2)
    compiled = _kernels.ceiling_scan(
        *args, np.random.default_rng(1), np.random.default_rng(2),
        np.random.default_rng(3)
    )
    interpreted = _kernels.ceiling_scan.py_func(
        *args, np.random.default_rng(1), np.random.default_rng(2),
        np.random.default_rng(3)
    )
    assert compiled == interpreted


def test_norm_ceiling_small_scale_passes():
    report = check_norm_ceiling(
        d=3, rate=0.5, num_arms=60, num_keyterms=60, pool_size=10,
        seeds=3, horizon_margin=1.02, base_seed=5,
    )
    assert report.min_eig > 0
    assert report.burn_in > 0
    assert report.horizon > report.burn_in
    assert all(r <= 1.0 for r in report.max_ratios)


def test_env_flag_selects_numpy_backend():
    env = dict(os.environ, CONVBANDITS_NO_NUMBA="1")
    out = subprocess.run(
        [sys.executable, "-c", "import convbandits; print(convbandits.backend())"],
        capture_output=True, text=True, env=env, check=True,
    )
    assert out.stdout.strip() == "numpy"
