"""Greedy joint sparse recovery of aggregate angular channels.

All estimators take feedback ``R`` of shape ``(P, G, K)`` and sensing matrices
``Theta`` of shape ``(P, G, N)`` and return an :class:`EstimateResult` whose
``H_hat`` has shape ``(P, N, K)``.

:func:`jmumc_omp` grows one support per user, shared by all subcarriers, and
picks every new angle bin from the correlation energy summed over users and
subcarriers. After each least-squares refit, users whose new coefficient is
weaker than ``gamma_th`` (averaged over subcarriers) drop the bin again. The
loop ends when every user drops the bin, when the summed residual norm stops
decreasing, or at the iteration cap.
"""

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionError, UnderdeterminedError
from .linalg import hermitian, masked_gram_solve, pinv_solve

__all__ = [
    "EstimatorConfig",
    "EstimateResult",
    "jmumc_omp",
    "jmu_omp",
    "single_cell_joint_omp",
    "per_cell_single_omp",
    "oracle_ls",
    "nmse",
    "NMSE_FLOOR_DB",
]

NMSE_FLOOR_DB = -300.0
# Relative Schur complement below which an appended column counts as dependent.
_SCHUR_TOL = 1e-10


@dataclass(frozen=True)
class EstimatorConfig:
    gamma_th: float = 0.0
    max_iter: Optional[int] = None  # None: number of pilot slots G

    def __post_init__(self):
        if self.gamma_th < 0:
            raise ValueError("gamma_th must be non-negative")
        if self.max_iter is not None and self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


@dataclass
class EstimateResult:
    """Recovered channels and the greedy run that produced them.

    ``support_mask[p, k]`` flags the recovered bins of user ``k`` on subcarrier
    ``p``. ``traces`` holds one residual history per independently solved
    problem (one for the joint multi-carrier solver, ``P`` for the
    per-subcarrier ones); entry 0 is the initial residual ``sum_p ||R_p||_F``.
    """

    H_hat: np.ndarray
    support_mask: np.ndarray
    traces: list
    iterations: np.ndarray
    degenerate: bool = False
    cap_reached: bool = False
    selections: list = field(default_factory=list)

    @property
    def trace(self) -> np.ndarray:
        return self.traces[0]

    def support(self, k: int, p: int = 0) -> np.ndarray:
        return np.flatnonzero(self.support_mask[p, k])

    @property
    def supports(self):
        """Per-user supports on subcarrier 0."""
        return [self.support(k) for k in range(self.support_mask.shape[1])]


def _check_inputs(R, Theta):
    R = np.asarray(R)
    Theta = np.asarray(Theta)
    if R.ndim == 2:
        R = R[None]
    if Theta.ndim == 2:
        Theta = Theta[None]
    if R.ndim != 3 or Theta.ndim != 3:
        raise DimensionError("expected R (P, G, K) and Theta (P, G, N)")
    if Theta.shape[0] != R.shape[0] or Theta.shape[1] != R.shape[1]:
        raise DimensionError(f"R {R.shape} and Theta {Theta.shape} disagree on (P, G)")
    return R.astype(np.complex128, copy=False), Theta.astype(np.complex128, copy=False)


def _unique_masks(mask):
    """Deduplicate ``(A, K, n)`` boolean rows per problem.

    Returns the problem index and mask of every distinct row, plus the
    ``(A, K)`` map from user to distinct row.
    """
    A, K, n = mask.shape
    keys = np.concatenate([np.repeat(np.arange(A), K)[:, None],
                           mask.reshape(A * K, n).astype(np.int64)], axis=1)
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    return uniq[:, 0], uniq[:, 1:].astype(bool), inv.reshape(A, K)


class _State:
    """Per-problem arrays of the greedy loop, compactable along axis 0."""

    FIELDS = ("Th", "ThH", "ThR", "R", "order", "mask", "coef", "Tsel", "CselT",
              "gram", "thr", "ginv", "lead", "slow", "running", "res", "gid")

    def __init__(self, **arrays):
        self.__dict__.update(arrays)

    def compact(self, keep):
        for name in self.FIELDS:
            setattr(self, name, getattr(self, name)[keep])


def _score(corr):
    """Correlation energy summed over subcarriers and users, ``(C, N)``."""
    C, P, N, K = corr.shape
    v = corr.view(np.float64).reshape(C, P, N * 2 * K)
    return np.einsum("cpj,cpj->cj", v, v).reshape(C, N, 2 * K).sum(axis=-1)


def _first_equal(key):
    """For every entry of ``(C, K)`` integer keys, the first column with the same key."""
    return np.argmax(key[:, :, None] == key[:, None, :], axis=2)


def _greedy(R, Theta, gamma_th, max_iter, observer=None):
    """Algorithm-1 loop over ``B`` independent problems in lockstep.

    ``R`` is ``(B, P, G, K)`` and ``Theta`` ``(B, P, G, N)``; the ``P`` axis is
    solved jointly inside each problem. Users with identical supports form a
    class that shares one inverse Gram matrix per subcarrier, stored at the
    class's lowest user index ("leader"). Appending a bin is then a
    Schur-complement update. A problem that hits a (near) dependent column
    switches to the SVD-backed solver for the rest of the run.

    Finished problems are carried along (their state is never written) until
    they make up half of the batch, then the batch is compacted.
    """
    B, P, G, K = R.shape
    N = Theta.shape[-1]
    cap = min(G if max_iter is None else max_iter, G, N)

    Th = np.ascontiguousarray(Theta)
    ThH = np.ascontiguousarray(hermitian(Theta))  # (B, P, N, G)
    st = _State(
        Th=Th,
        ThH=ThH,
        ThR=ThH @ R,  # (B, P, N, K)
        R=R,
        order=np.full((B, cap), -1, dtype=np.int64),
        mask=np.zeros((B, K, cap), dtype=bool),
        coef=np.zeros((B, P, cap, K), dtype=np.complex128),
        Tsel=np.zeros((B, P, G, cap), dtype=np.complex128),
        CselT=np.zeros((B, P, cap, N), dtype=np.complex128),  # (Theta^H Theta_sel)^T
        gram=np.zeros((B, P, cap, cap), dtype=np.complex128),
        thr=np.zeros((B, P, cap, K), dtype=np.complex128),
        ginv=np.zeros((B, K, P, cap, cap), dtype=np.complex128),
        lead=np.zeros((B, K), dtype=np.int64),
        slow=np.zeros(B, dtype=bool),
        running=np.ones(B, dtype=bool),
        res=np.linalg.norm(R, axis=(-2, -1)).sum(axis=1),
        gid=np.arange(B),
    )
    out_order = np.full((B, cap), -1, dtype=np.int64)
    out_mask = np.zeros((B, K, cap), dtype=bool)
    out_coef = np.zeros((B, P, cap, K), dtype=np.complex128)
    traces = [[float(r)] for r in st.res]
    iters = np.zeros(B, dtype=np.int64)
    degenerate = False
    cap_hit = False
    kk = np.arange(K)

    def save(sel):
        g = st.gid[sel]
        out_order[g] = st.order[sel]
        out_mask[g] = st.mask[sel]
        out_coef[g] = st.coef[sel]

    for i in range(1, cap + 1):
        live = st.running
        n_live = int(live.sum())
        if n_live == 0:
            break
        if n_live <= 0.5 * live.size:
            save(~live)
            st.compact(live)
            live = st.running
        C = live.size
        n = i - 1  # slot of the new column
        iters[st.gid[live]] = i
        rows = np.arange(C)

        # line 6: bin with the largest correlation energy, Theta^H Z = Theta^H R - C_sel G
        corr = st.ThR
        if n:
            corr = corr - np.swapaxes(st.CselT[:, :, :n, :], -1, -2) @ st.coef[:, :, :n, :]
        rho = np.argmax(_score(corr), axis=1)  # first maximum wins ties

        col = st.ThH[rows, :, rho, :].conj()  # (C, P, G)
        # theta_m^H theta_rho for every m, as the conjugate of a row product
        cnew = (col.conj()[:, :, None, :] @ st.Th)[:, :, 0, :].conj()  # (C, P, N)
        # write slot n only for live problems; finished ones stay frozen
        wl = np.flatnonzero(live)
        st.order[wl, n] = rho[wl]
        st.Tsel[wl, :, :, n] = col[wl]
        st.CselT[wl, :, n, :] = cnew[wl]
        # (C, P, n+1): theta_j^H theta_rho over the selected slots
        gcol = np.take_along_axis(cnew, np.maximum(st.order[:, None, :n + 1], 0), axis=2)
        st.gram[wl, :, :n + 1, n] = gcol[wl]
        st.gram[wl, :, n, :n + 1] = gcol[wl].conj()
        st.thr[wl, :, n, :] = st.ThR[wl, :, rho[wl], :]

        # A re-selected bin stays at its old slot for users who already hold it;
        # their fit is unchanged. Everyone else appends it as usual.
        hits = st.order[:, :n] == rho[:, None]
        dup = hits.any(axis=1) & live
        h0 = np.argmax(hits, axis=1) if n else np.zeros(C, dtype=np.int64)
        held = st.mask[rows, :, h0] & dup[:, None]  # (C, K)
        test_pos = np.where(held, h0[:, None], n)
        m = st.mask[:, :, :n + 1].copy()
        m[:, :, n] = ~held

        # lines 7-8: refit every (user, subcarrier) on its grown support
        new = np.zeros((C, P, n + 1, K), dtype=np.complex128)
        fast = np.flatnonzero(live & ~st.slow)
        if fast.size:
            lb, lk = np.nonzero(st.lead[fast] == kk)  # class leaders
            lb = fast[lb]
            qpos = np.full((C, K), -1)
            qpos[lb, lk] = np.arange(lb.size)
            qidx = qpos[fast[:, None], st.lead[fast]]  # (F, K) class of each user

            bq = st.gram[lb, :, :n, n] * st.mask[lb, lk, None, :n]  # (Q, P, n)
            gq = st.ginv[lb, lk, :, :n, :n]  # (Q, P, n, n)
            uq = (gq @ bq[..., None])[..., 0]
            dq = st.gram[lb, :, n, n].real
            sq = dq - np.einsum("qpn,qpn->qp", bq.conj(), uq).real
            # classes holding a re-selected bin do not append it
            badq = np.any(~(sq > _SCHUR_TOL * dq), axis=1) & ~held[lb, lk]
            bad = np.zeros(C, dtype=bool)
            bad[lb[badq]] = True
            st.slow |= bad

            bu, uu, su = bq[qidx], uq[qidx], sq[qidx]  # (F, K, P, ...)
            with np.errstate(divide="ignore", invalid="ignore"):
                x_old = st.coef[fast, :, :n, :].transpose(0, 3, 1, 2)  # (F, K, P, n)
                rhs_n = st.thr[fast, :, n, :].transpose(0, 2, 1)  # (F, K, P)
                x_n = (rhs_n - np.einsum("fkpn,fkpn->fkp", bu.conj(), x_old)) / su
                x_top = x_old - uu * x_n[..., None]
            xf = np.concatenate([x_top, x_n[..., None]], axis=-1)
            hf = held[fast]
            if hf.any():
                xf[hf, :, :n] = x_old[hf]
                xf[hf, :, n] = 0
            new[fast] = xf.transpose(0, 2, 3, 1)
        sl = np.flatnonzero(live & st.slow)
        if sl.size:
            up, umask, inv = _unique_masks(m[sl])
            g_sl = sl[up]
            X, defi = masked_gram_solve(st.gram[g_sl, :, :n + 1, :n + 1],
                                        st.thr[g_sl, :, :n + 1, :], umask,
                                        st.Tsel[g_sl, :, :, :n + 1], st.R[g_sl])
            degenerate |= bool(defi.any())
            new[sl] = X[inv, :, :, kk[None, :]].transpose(0, 2, 3, 1)
        if observer is not None:
            observer(i, st.gid[wl], new[wl], m[wl])

        # lines 9-12: prune weak users, or stop when every user is weak
        g_rho = np.take_along_axis(new, test_pos[:, None, None, :], axis=2)[:, :, 0, :]
        power = np.mean(np.abs(g_rho) ** 2, axis=1)  # (C, K)
        weak = power < gamma_th
        quit_all = weak.all(axis=1) & live
        drop = weak & ~quit_all[:, None] & (test_pos == n) & live[:, None]
        if drop.any():
            ja, jk = np.nonzero(drop)
            m[ja, jk, n] = False
            new[ja, :, :n, jk] = st.coef[ja, :, :n, jk]
            new[ja, :, n, jk] = 0
        st.running[quit_all] = False

        go = np.flatnonzero(live & ~quit_all)
        if go.size == 0:
            continue
        Zc = st.R[go] - st.Tsel[go, :, :, :n + 1] @ new[go]
        res_c = np.linalg.norm(Zc, axis=(-2, -1)).sum(axis=1)
        for b, r in zip(st.gid[go], res_c):
            traces[b].append(float(r))

        # line 16: stop on a non-decreasing residual and keep the previous iterate
        stop = res_c >= st.res[go]
        st.running[go[stop]] = False
        acc = go[~stop]
        st.mask[acc, :, :n + 1] = m[acc]
        st.coef[acc, :, :n + 1, :] = new[acc]
        st.res[acc] = res_c[~stop]
        if i == cap and acc.size:
            cap_hit = True

        # inverse Gram update; a class splits when only some of its users keep the bin
        if fast.size:
            ok = st.running[fast] & ~st.slow[fast]
            fo = fast[ok]
            if fo.size:
                kept = m[fo, :, n]
                lead = _first_equal(2 * st.lead[fo] + kept)
                st.lead[fo] = lead
                nb, nk = np.nonzero(lead == kk)
                q = qidx[ok][nb, nk]
                kq = kept[nb, nk]
                blk = np.zeros((q.size, P, n + 1, n + 1), dtype=np.complex128)
                blk[:, :, :n, :n] = gq[q]
                with np.errstate(divide="ignore", invalid="ignore"):
                    us = uq[q] / sq[q][..., None]
                    blk[kq, :, :n, :n] += us[kq][..., :, None] * uq[q][kq].conj()[..., None, :]
                    blk[kq, :, :n, n] = -us[kq]
                    blk[kq, :, n, :n] = -us[kq].conj()
                    blk[:, :, n, n] = np.where(kq[:, None], 1.0 / sq[q], 1.0)
                st.ginv[fo[nb], nk, :, :n + 1, :n + 1] = blk

    save(slice(None))
    return out_order, out_mask, out_coef, traces, iters, degenerate, cap_hit


def _scatter(order, mask, coef, N):
    """Map per-problem ``(P, n, K)`` coefficients to ``(P, N, K)`` and masks."""
    B, P, cap, K = coef.shape
    bb, jj = np.nonzero(order >= 0)
    cols = order[bb, jj]
    kept = mask[bb, :, jj]  # (Q, K)
    Ht = np.zeros((B, N, P, K), dtype=np.complex128)
    # a bin re-selected into a second slot is never held by the same user twice
    np.add.at(Ht, (bb, cols), coef[bb, :, jj, :] * kept[:, None, :])
    S = np.zeros((B, K, N), dtype=bool)
    qb, qk = np.nonzero(kept)
    S[bb[qb], qk, cols[qb]] = True
    return Ht.transpose(0, 2, 1, 3), S


def _kept_bins(order, mask):
    """Per problem, the bins held by at least one user in acquisition order."""
    held = (order >= 0) & mask.any(axis=1)
    return [o[h] for o, h in zip(order, held)]


def jmumc_omp(R, Theta, cfg: EstimatorConfig = EstimatorConfig()) -> EstimateResult:
    """Joint multi-user multi-carrier OMP.

    Parameters
    ----------
    R : (P, G, K) complex
        Fed-back pilots of a ``K``-user group on ``P`` subcarriers.
    Theta : (P, G, N) complex
        Sensing matrices, identical for every user of the group.
    cfg : EstimatorConfig
        Pruning threshold and iteration cap (default cap ``G``).

    Returns
    -------
    EstimateResult
        One support per user shared by all subcarriers.
    """
    R, Theta = _check_inputs(R, Theta)
    P, G, K = R.shape
    N = Theta.shape[-1]
    order, mask, coef, traces, iters, degen, cap_hit = _greedy(
        R[None], Theta[None], cfg.gamma_th, cfg.max_iter)
    H, S = _scatter(order, mask, coef, N)
    support_mask = np.broadcast_to(S[0][None], (P, K, N)).copy()
    return EstimateResult(H[0], support_mask, [np.array(t) for t in traces], iters,
                          degen, cap_hit, _kept_bins(order, mask)[:1])


def jmu_omp(R, Theta, cfg: EstimatorConfig = EstimatorConfig()) -> EstimateResult:
    """Joint multi-user OMP run separately on every subcarrier."""
    R, Theta = _check_inputs(R, Theta)
    P, G, K = R.shape
    N = Theta.shape[-1]
    order, mask, coef, traces, iters, degen, cap_hit = _greedy(
        R[:, None], Theta[:, None], cfg.gamma_th, cfg.max_iter)
    H, S = _scatter(order, mask, coef, N)
    return EstimateResult(H[:, 0], S, [np.array(t) for t in traces], iters,
                          degen, cap_hit, _kept_bins(order, mask))


def single_cell_joint_omp(R, Theta_target, cfg: EstimatorConfig = EstimatorConfig()) -> EstimateResult:
    """Per-subcarrier joint OMP that models one cell only.

    ``Theta_target`` holds just the serving cell's block; pilots of every other
    cell reach ``R`` unmodelled and act as noise.
    """
    return jmu_omp(R, Theta_target, cfg)


def per_cell_single_omp(R, Theta, M: int,
                        cfg: EstimatorConfig = EstimatorConfig()) -> EstimateResult:
    """Single-cell baseline run by every cell of an aggregate sensing matrix.

    ``Theta`` is ``(P, G, M * C)`` with one ``M``-column block per cell. Each
    block is estimated on its own with :func:`single_cell_joint_omp`
    semantics, i.e. the other cells' pilots are unmodelled, and the blocks are
    stacked back into ``(P, M * C, K)``. All cells run as one batch.
    """
    R, Theta = _check_inputs(R, Theta)
    P, G, K = R.shape
    N = Theta.shape[-1]
    if M < 1 or N % M:
        raise DimensionError(f"{N} columns do not split into blocks of M={M}")
    C = N // M
    Th = Theta.reshape(P, G, C, M).transpose(2, 0, 1, 3).reshape(C * P, 1, G, M)
    Rb = np.broadcast_to(R[None], (C, P, G, K)).reshape(C * P, 1, G, K)
    order, mask, coef, traces, iters, degen, cap_hit = _greedy(Rb, Th, cfg.gamma_th, cfg.max_iter)
    H, S = _scatter(order, mask, coef, M)
    H = H.reshape(C, P, M, K).transpose(1, 0, 2, 3).reshape(P, N, K)
    S = S.reshape(C, P, K, M).transpose(1, 2, 0, 3).reshape(P, K, N)
    sel = [o + (b // P) * M for b, o in enumerate(_kept_bins(order, mask))]
    return EstimateResult(H, S, [np.array(t) for t in traces], iters, degen, cap_hit, sel)


def oracle_ls(R, Theta, true_supports: Sequence) -> EstimateResult:
    """Least squares restricted to the genie-provided support of each user.

    ``true_supports[k]`` indexes columns of ``Theta`` and applies to every
    subcarrier.
    """
    R, Theta = _check_inputs(R, Theta)
    P, G, K = R.shape
    N = Theta.shape[-1]
    if len(true_supports) != K:
        raise DimensionError(f"need {K} supports, got {len(true_supports)}")
    H = np.zeros((P, N, K), dtype=np.complex128)
    S = np.zeros((P, K, N), dtype=bool)
    groups = {}
    for k, sup in enumerate(true_supports):
        key = tuple(int(i) for i in np.unique(np.asarray(sup, dtype=int)))
        if len(key) > G:
            raise UnderdeterminedError(
                f"support of user {k} has {len(key)} entries but only G={G} measurements")
        if key and (key[0] < 0 or key[-1] >= N):
            raise DimensionError(f"support of user {k} out of range for N={N}")
        groups.setdefault(key, []).append(k)
    degenerate = False
    for key, users in groups.items():
        if not key:
            continue
        cols = list(key)
        X, rank = pinv_solve(Theta[:, :, cols], R[:, :, users])
        degenerate |= bool(np.any(rank < len(cols)))
        for j, k in enumerate(users):
            H[:, cols, k] = X[:, :, j]
            S[:, k, cols] = True
    return EstimateResult(H, S, [np.array([])], np.zeros(1, dtype=np.int64), degenerate)


def nmse(H_hat, H_true) -> float:
    """``10 log10(sum |H_hat - H|^2 / sum |H|^2)`` in dB.

    Returns ``NMSE_FLOOR_DB`` for an exact match and NaN when the truth is all
    zero.
    """
    H_hat = np.asarray(H_hat)
    H_true = np.asarray(H_true)
    if H_hat.shape != H_true.shape:
        raise DimensionError(f"shape mismatch {H_hat.shape} vs {H_true.shape}")
    den = float(np.sum(np.abs(H_true) ** 2))
    if den == 0.0:
        return math.nan
    num = float(np.sum(np.abs(H_hat - H_true) ** 2))
    if num == 0.0:
        return NMSE_FLOOR_DB
    return max(10 * math.log10(num / den), NMSE_FLOOR_DB)
