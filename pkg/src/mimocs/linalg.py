"""Batched least-squares helpers.

The reference path is a minimum-norm solve through the SVD with a relative
rank tolerance. The greedy estimators solve hundreds of small restricted
systems per iteration, so they use masked normal equations and drop back to
the SVD whenever the Cholesky factor of a Gram matrix looks ill-conditioned.
"""

import numpy as np

RCOND = 1e-10
# Cholesky diagonal ratio below which a Gram matrix is re-solved by SVD.
# Singular values relate to this ratio only loosely for unpivoted factors, so
# it is kept far above RCOND.
_CHOL_SUSPECT = 1e-5


def hermitian(A):
    return np.conj(np.swapaxes(A, -1, -2))


def pinv_solve(A, B, rcond=RCOND):
    """Minimum-norm least-squares solution of ``A X = B`` (batched).

    Singular values below ``rcond`` times the largest one are treated as zero.

    Returns
    -------
    X : numpy.ndarray
        ``(..., n, k)`` solution.
    rank : numpy.ndarray of int
        Numerical rank of each ``A``.
    """
    A = np.asarray(A)
    U, s, Vh = np.linalg.svd(A, full_matrices=False)
    smax = s[..., :1] if s.shape[-1] else s
    keep = s > rcond * smax
    sinv = np.where(keep, 1.0 / np.where(keep, s, 1.0), 0.0)
    X = hermitian(Vh) @ (sinv[..., :, None] * (hermitian(U) @ B))
    return X, keep.sum(axis=-1)


def masked_gram_solve(gram, rhs, mask, A=None, B=None):
    """Solve many column-restricted LS problems sharing one Gram matrix.

    Parameters
    ----------
    gram : (U, P, n, n) complex
        Full Gram matrices ``A^H A`` of the unrestricted column set.
    rhs : (U, P, n, k) complex
        ``A^H B``.
    mask : (U, n) bool
        Columns kept by each problem ``u`` (same for every ``P``).
    A, B : optional
        ``(U, P, G, n)`` and ``(U, P, G, k)``; needed for the SVD fallback.

    Returns
    -------
    X : (U, P, n, k) complex, zero on dropped columns
    deficient : (U,) bool
    """
    U, P, n, _ = gram.shape
    mm = mask[:, None, :, None] & mask[:, None, None, :]
    eye = np.eye(n, dtype=bool)
    Gm = np.where(mm, gram, 0) + (eye & ~mask[:, None, :, None]).astype(gram.dtype)
    rhs_m = rhs * mask[:, None, :, None]

    suspect = np.zeros(U, dtype=bool)
    try:
        Lc = np.linalg.cholesky(Gm)
    except np.linalg.LinAlgError:
        suspect[:] = True
    else:
        d = np.abs(np.diagonal(Lc, axis1=-2, axis2=-1))  # (U, P, n)
        on = mask[:, None, :]
        with np.errstate(invalid="ignore", divide="ignore"):
            ratio = (np.min(np.where(on, d, np.inf), axis=-1)
                     / np.max(np.where(on, d, 0.0), axis=-1)) if n else None
        if ratio is not None:
            has = mask.any(axis=1)
            suspect[has] = np.any(~(ratio[has] > _CHOL_SUSPECT), axis=-1)

    X = np.zeros_like(rhs_m)
    deficient = np.zeros(U, dtype=bool)
    ok = ~suspect
    if ok.any():
        X[ok] = np.linalg.solve(Gm[ok], rhs_m[ok])
    if suspect.any():
        if A is None or B is None:
            raise ValueError("ill-conditioned system needs A and B for the SVD fallback")
        Am = A[suspect] * mask[suspect][:, None, None, :]
        Xs, rank = pinv_solve(Am, B[suspect])
        X[suspect] = Xs
        # Dropped columns are zero; compare the rank against the kept count.
        deficient[suspect] = rank.min(axis=-1) < mask[suspect].sum(axis=1)
    return X, deficient
