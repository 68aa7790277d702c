import numpy as np
from hypothesis import given, strategies as st

from conftest import crandn
from mimocs.linalg import masked_gram_solve, pinv_solve


@given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 2**32 - 1))
def test_pinv_solve_matches_numpy_lstsq(m, n, seed):
    rng = np.random.default_rng(seed)
    A, B = crandn(rng, m, n), crandn(rng, m, 2)
    X, rank = pinv_solve(A, B)
    ref = np.linalg.lstsq(A, B, rcond=None)[0]
    np.testing.assert_allclose(X, ref, atol=1e-9)
    assert rank == min(m, n)


def test_pinv_solve_rank_deficient_minimum_norm(rng):
    a = crandn(rng, 6, 1)
    A = np.hstack([a, a, crandn(rng, 6, 1)])
    B = crandn(rng, 6, 1)
    X, rank = pinv_solve(A, B)
    assert rank == 2
    np.testing.assert_allclose(X, np.linalg.pinv(A) @ B, atol=1e-10)
    # residual orthogonal to the column space
    assert np.max(np.abs(A.conj().T @ (B - A @ X))) < 1e-10


def _masked_reference(A, B, mask):
    U, P, G, n = A.shape
    X = np.zeros((U, P, n, B.shape[-1]), complex)
    for u in range(U):
        cols = np.flatnonzero(mask[u])
        for p in range(P):
            if cols.size:
                X[u, p][cols] = np.linalg.lstsq(A[u, p][:, cols], B[u, p], rcond=None)[0]
    return X


def test_masked_gram_solve_matches_column_lstsq(rng):
    A = crandn(rng, 3, 2, 10, 5)
    B = crandn(rng, 3, 2, 10, 3)
    mask = np.array([[1, 0, 1, 1, 0], [1, 1, 0, 0, 0], [0, 0, 0, 0, 0]], dtype=bool)
    AH = np.swapaxes(A, -1, -2).conj()
    X, deficient = masked_gram_solve(AH @ A, AH @ B, mask, A, B)
    assert not np.any(deficient)
    np.testing.assert_allclose(X, _masked_reference(A, B, mask), atol=1e-10)


def test_masked_gram_solve_flags_dependent_columns(rng):
    A = crandn(rng, 1, 1, 8, 4)
    A[..., 3] = A[..., 0]
    B = crandn(rng, 1, 1, 8, 2)
    mask = np.array([[1, 1, 0, 1]], dtype=bool)
    AH = np.swapaxes(A, -1, -2).conj()
    X, deficient = masked_gram_solve(AH @ A, AH @ B, mask, A, B)
    assert deficient[0]
    # still a least-squares solution: residual orthogonal to the kept columns
    res = B - A @ X
    assert np.max(np.abs((AH @ res)[..., [0, 1, 3], :])) < 1e-10
