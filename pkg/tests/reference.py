"""Slow, literal implementations used as oracles by the test suite."""

import itertools

import numpy as np


def lstsq_cols(A, y, cols):
    """Minimum-norm LS of ``y`` on the columns ``cols`` of ``A``."""
    x = np.zeros(A.shape[1], dtype=complex)
    if cols:
        x[cols] = np.linalg.lstsq(A[:, cols], y, rcond=None)[0]
    return x


def greedy_reference(R, Theta, gamma_th=0.0, max_iter=None):
    """Loop-by-loop joint greedy recovery with per-user pruning.

    ``R`` is ``(P, G, K)`` and ``Theta`` ``(P, G, N)``. Every user keeps an
    ordered support shared by all subcarriers. Returns ``(H, supports,
    trace)``.
    """
    P, G, K = R.shape
    N = Theta.shape[2]
    cap = min(G if max_iter is None else max_iter, G, N)
    supports = [[] for _ in range(K)]
    H = np.zeros((P, N, K), dtype=complex)
    Z = R.copy()
    res = sum(np.linalg.norm(Z[p]) for p in range(P))
    trace = [res]
    for _ in range(cap):
        score = np.zeros(N)
        for p in range(P):
            score += np.sum(np.abs(Theta[p].conj().T @ Z[p]) ** 2, axis=1)
        rho = int(np.argmax(score))
        H_new = H.copy()
        trial = [list(s) if rho in s else list(s) + [rho] for s in supports]
        for k in range(K):
            for p in range(P):
                H_new[p, :, k] = lstsq_cols(Theta[p], R[p, :, k], trial[k])
        power = np.mean(np.abs(H_new[:, rho, :]) ** 2, axis=0)
        weak = power < gamma_th
        if weak.all():
            break
        for k in np.flatnonzero(weak):
            if rho not in supports[k]:
                trial[k] = list(supports[k])
                H_new[:, :, k] = H[:, :, k]
        Z_new = R - np.einsum("pgn,pnk->pgk", Theta, H_new)
        res_new = sum(np.linalg.norm(Z_new[p]) for p in range(P))
        trace.append(res_new)
        if res_new >= res:
            break
        H, Z, res, supports = H_new, Z_new, res_new, trial
    return H, [sorted(s) for s in supports], np.array(trace)


def brute_force_support(A, y, s):
    """Support of size ``s`` with the smallest LS residual (exhaustive)."""
    best, best_res = None, np.inf
    for cols in itertools.combinations(range(A.shape[1]), s):
        x = lstsq_cols(A, y, list(cols))
        r = np.linalg.norm(y - A @ x)
        if r < best_res:
            best, best_res = cols, r
    return list(best), best_res
