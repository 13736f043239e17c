"""Approximate barycentric spanner of a key-term feature set.

A spanner is a set of d key-terms whose features form a basis expressing
every other key-term feature with coefficients bounded by the approximation
factor C. Construction follows the classic two-phase exchange algorithm:
greedily build a nonsingular basis by determinant maximization, then swap in
any vector that grows |det| by more than a factor C until none does.

Determinant ratios are evaluated through linear solves: replacing column i
of basis B by vector x scales det(B) by exactly the i-th entry of B^-1 x,
so one factorization per sweep prices every candidate swap, and comparisons
stay well-scaled regardless of how small |det(B)| is.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import KeyTermCatalog


@dataclass(frozen=True)
class Spanner:
    """Basis of key-term features with bounded expression coefficients.

    ``basis`` holds the member features as columns, ordered as ``member_ids``.
    """

    member_ids: tuple[int, ...]
    basis: np.ndarray
    approx_c: float
    swap_count: int
    log_abs_det: float

    def __post_init__(self):
        basis = np.array(self.basis, dtype=np.float64)
        d = basis.shape[0]
        if basis.shape != (d, d) or len(self.member_ids) != d:
            raise ValueError("basis must be d x d with one member per column")
        # nonsingular relative to column scales: |det| > 1e-12 * prod ||col||
        # (for unit-norm columns this is exactly |det| > 1e-12)
        sign, logdet = np.linalg.slogdet(basis)
        col_scale = float(np.sum(np.log(np.linalg.norm(basis, axis=0))))
        if sign == 0.0 or logdet <= math.log(1e-12) + col_scale:
            raise ValueError("spanner basis is singular")
        basis.setflags(write=False)
        object.__setattr__(self, "basis", basis)
        object.__setattr__(self, "member_ids", tuple(int(i) for i in self.member_ids))

    @property
    def dim(self) -> int:
        return self.basis.shape[0]


def swap_budget(d: int, c: float) -> int:
    """Hard cap on phase-2 swaps: each swap multiplies |det| by more than c,
    so the count is bounded; exceeding the cap indicates a bug or degenerate
    input."""
    return math.ceil(d * math.log(max(d, 2)) / math.log(c)) + d


def compute_spanner(catalog: KeyTermCatalog, approx_c: float = 1.05) -> Spanner:
    """Construct a C-approximate barycentric spanner of the catalog.

    Requires the key-term features to span R^d and ``approx_c > 1``. Raises
    ``ValueError`` on rank-deficient catalogs and ``RuntimeError`` if the
    swap budget is exhausted (should not happen for finite inputs).
    """
    if approx_c <= 1.0:
        raise ValueError(f"approximation factor must exceed 1, got {approx_c}")
    feats = catalog.features
    n, d = feats.shape
    if n < d or np.linalg.matrix_rank(feats) < d:
        raise ValueError(
            f"key-term features must span R^{d}; rank-deficient catalog"
        )
    cols = feats.T  # candidate vectors as columns, shape (d, n)

    # phase 1: greedy nonsingular basis, unfilled slots held at standard basis
    basis = np.eye(d)
    members = [-1] * d
    for slot in range(d):
        coeffs = np.linalg.solve(basis, cols)
        ratios = np.abs(coeffs[slot])
        pick = int(np.argmax(ratios))
        if ratios[pick] <= 0.0:
            raise ValueError("key-term features must span R^d; rank-deficient catalog")
        basis[:, slot] = cols[:, pick]
        members[slot] = pick

    # phase 2: exchange while some replacement grows |det| by a factor > C
    budget = swap_budget(d, approx_c)
    swaps = 0
    while True:
        coeffs = np.abs(np.linalg.solve(basis, cols))
        slot, pick = np.unravel_index(int(np.argmax(coeffs)), coeffs.shape)
        ratio = coeffs[slot, pick]
        if ratio <= approx_c:
            break
        basis[:, slot] = cols[:, pick]
        members[slot] = int(pick)
        swaps += 1
        if swaps > budget:
            raise RuntimeError(
                f"spanner exchange exceeded its swap budget of {budget}"
            )

    _, log_abs_det = np.linalg.slogdet(basis)
    return Spanner(
        member_ids=tuple(members),
        basis=basis,
        approx_c=float(approx_c),
        swap_count=swaps,
        log_abs_det=float(log_abs_det),
    )


def verify_spanner(
    spanner: Spanner, catalog: KeyTermCatalog, tol: float = 1e-6
) -> tuple[bool, float]:
    """Check the defining property: every catalog feature is expressed in the
    spanner basis with coefficients bounded by C (+ tol in magnitude).

    Returns (passed, max absolute coefficient observed).
    """
    coeffs = np.linalg.solve(spanner.basis, catalog.features.T)
    max_coeff = float(np.max(np.abs(coeffs)))
    return max_coeff <= spanner.approx_c + tol, max_coeff


def min_covariance_eigenvalue(spanner: Spanner) -> float:
    """Minimum eigenvalue of the members' average outer-product matrix,
    (1/d) * sum_k x_k x_k^T. Strictly positive for any valid spanner; this is
    the spectral quantity governing how fast uniform spanner queries shrink
    confidence radii."""
    d = spanner.dim
    avg_outer = (spanner.basis @ spanner.basis.T) / d
    return float(np.linalg.eigvalsh(avg_outer)[0])


def exploration_burn_in(rate: float, min_eig: float, delta: float, d: int) -> float:
    """Round count after which uniform spanner sampling at conversation rate
    ``rate`` pins the inverse-covariance norm under its theoretical ceiling:
    (256 / (rate * min_eig^2)) * log(128 d / (min_eig^2 * delta)).

    Valid for rate in (0, 1], min_eig > 0 and delta in (0, 1/8].
    """
    if not 0.0 < rate <= 1.0:
        raise ValueError(f"conversation rate must lie in (0, 1], got {rate}")
    if min_eig <= 0.0:
        raise ValueError(f"minimum eigenvalue must be positive, got {min_eig}")
    if not 0.0 < delta <= 0.125:
        raise ValueError(f"delta must lie in (0, 1/8], got {delta}")
    if d < 1:
        raise ValueError("dimension must be >= 1")
    return (256.0 / (rate * min_eig**2)) * math.log(128.0 * d / (min_eig**2 * delta))
