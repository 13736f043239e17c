import math

import numpy as np
import pytest

from convbandits import (
    ArmCatalog,
    KeyTermCatalog,
    KeyTermGraph,
    Spanner,
    compute_spanner,
    exploration_burn_in,
    min_covariance_eigenvalue,
    verify_spanner,
)
from convbandits.spanner import swap_budget

from conftest import unit_rows


def _catalog_from_features(feats):
    """Wrap raw feature rows as a key-term catalog (one arm per key-term)."""
    feats = np.asarray(feats, dtype=np.float64)
    n, _ = feats.shape
    arms = ArmCatalog(unit_rows(np.where(
        np.linalg.norm(feats, axis=1, keepdims=True) > 0, feats, 1.0)))
    graph = KeyTermGraph.from_entries(n, n, [(i, i, 1.0) for i in range(n)])
    return KeyTermCatalog(feats, graph)


def test_standard_basis_is_its_own_spanner():
    catalog = _catalog_from_features(np.eye(4))
    span = compute_spanner(catalog, 1.05)
    assert sorted(span.member_ids) == [0, 1, 2, 3]
    assert span.swap_count == 0
    ok, max_coeff = verify_spanner(span, catalog)
    assert ok and max_coeff == pytest.approx(1.0)


def test_one_dimensional_picks_largest_magnitude():
    catalog = _catalog_from_features([[0.2], [-0.9], [0.5]])
    span = compute_spanner(catalog, 1.05)
    assert span.member_ids == (1,)
    np.testing.assert_allclose(span.basis, [[-0.9]])


def test_random_catalogs_verify(rng):
    for trial in range(20):
        d = int(rng.integers(2, 8))
        n = int(rng.integers(3 * d, 60))
        feats = unit_rows(np.random.default_rng(trial).standard_normal((n, d)))
        catalog = _catalog_from_features(feats)
        span = compute_spanner(catalog, 1.05)
        ok, max_coeff = verify_spanner(span, catalog, tol=1e-6)
        assert ok, f"trial {trial}: max coefficient {max_coeff}"
        assert min_covariance_eigenvalue(span) > 0
        assert span.swap_count <= swap_budget(d, 1.05)
        assert len(set(span.member_ids)) == d


def test_verify_identity_basis_coefficients():
    catalog = _catalog_from_features([[1.0, 0.0], [0.0, 1.0], [0.3, -0.7]])
    span = compute_spanner(catalog, 1.05)
    coeffs = np.linalg.solve(span.basis, np.array([0.3, -0.7]))
    # identity basis (possibly permuted/sign-flipped): coefficients +-0.3, +-0.7
    np.testing.assert_allclose(sorted(np.abs(coeffs)), [0.3, 0.7])
    ok, _ = verify_spanner(span, catalog)
    assert ok


def test_member_query_is_unit_coefficient():
    feats = unit_rows(np.random.default_rng(3).standard_normal((12, 4)))
    catalog = _catalog_from_features(feats)
    span = compute_spanner(catalog, 1.05)
    member = span.member_ids[2]
    coeffs = np.linalg.solve(span.basis, catalog.features[member])
    expected = np.zeros(4)
    expected[2] = 1.0
    np.testing.assert_allclose(coeffs, expected, atol=1e-10)


def test_verify_fails_against_fixed_bad_basis():
    # vector (1.5, 0) needs coefficient 1.5 against the standard basis
    catalog = _catalog_from_features([[1.0, 0.0], [0.0, 1.0], [1.5, 0.0]])
    bad = Spanner(member_ids=(0, 1), basis=np.eye(2), approx_c=1.05,
                  swap_count=0, log_abs_det=0.0)
    ok, max_coeff = verify_spanner(bad, catalog, tol=1e-6)
    assert not ok
    assert max_coeff == pytest.approx(1.5)


def test_min_eigenvalue_standard_basis():
    span = Spanner(member_ids=(0, 1, 2), basis=np.eye(3), approx_c=1.05,
                   swap_count=0, log_abs_det=0.0)
    assert min_covariance_eigenvalue(span) == pytest.approx(1.0 / 3.0)


def test_min_eigenvalue_matches_characteristic_polynomial():
    eps = 1e-3
    basis = np.array([[1.0, 1.0], [0.0, eps]])
    span = Spanner(member_ids=(0, 1), basis=basis, approx_c=1.05,
                   swap_count=0, log_abs_det=float(np.log(eps)))
    # closed form for the 2x2 average outer-product matrix
    avg = basis @ basis.T / 2.0
    tr, det = avg[0, 0] + avg[1, 1], avg[0, 0] * avg[1, 1] - avg[0, 1] ** 2
    lam_min = (tr - math.sqrt(tr * tr - 4.0 * det)) / 2.0
    assert min_covariance_eigenvalue(span) == pytest.approx(lam_min, rel=1e-10)
    assert min_covariance_eigenvalue(span) < eps  # degenerates as eps -> 0


def test_min_eigenvalue_quadratic_homogeneity():
    basis = unit_rows(np.random.default_rng(5).standard_normal((3, 3))).T
    full = Spanner(member_ids=(0, 1, 2), basis=basis, approx_c=1.05,
                   swap_count=0, log_abs_det=0.0)
    half = Spanner(member_ids=(0, 1, 2), basis=0.5 * basis, approx_c=1.05,
                   swap_count=0, log_abs_det=0.0)
    assert min_covariance_eigenvalue(half) == pytest.approx(
        min_covariance_eigenvalue(full) / 4.0
    )


def test_burn_in_formula_value():
    # min_eig = 1, rate = 1 (boundary), delta = 1/8, d = 1 -> 256 * log(1024)
    assert exploration_burn_in(1.0, 1.0, 0.125, 1) == pytest.approx(
        256.0 * math.log(1024.0)
    )


def test_burn_in_monotonicities():
    base = exploration_burn_in(0.5, 0.1, 0.1, 4)
    assert exploration_burn_in(0.5, 0.2, 0.1, 4) < base
    assert exploration_burn_in(0.25, 0.1, 0.1, 4) == pytest.approx(2.0 * base)


def test_burn_in_rejects_out_of_range_delta():
    with pytest.raises(ValueError):
        exploration_burn_in(0.5, 0.1, 0.2, 4)
    with pytest.raises(ValueError):
        exploration_burn_in(0.5, 0.1, 0.0, 4)
    with pytest.raises(ValueError):
        exploration_burn_in(1.5, 0.1, 0.1, 4)


def test_compute_rejects_bad_inputs():
    catalog = _catalog_from_features(np.eye(3))
    with pytest.raises(ValueError, match="exceed 1"):
        compute_spanner(catalog, 1.0)
    flat = _catalog_from_features([[1.0, 0.0], [0.5, 0.0], [-1.0, 0.0]])
    with pytest.raises(ValueError, match="span"):
        compute_spanner(flat, 1.05)


def test_spanner_rejects_singular_basis():
    with pytest.raises(ValueError, match="singular"):
        Spanner(member_ids=(0, 1), basis=np.array([[1.0, 1.0], [1.0, 1.0]]),
                approx_c=1.05, swap_count=0, log_abs_det=0.0)
