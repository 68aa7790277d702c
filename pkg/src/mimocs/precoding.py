"""Multi-cell joint zero-forcing precoding and downlink throughput.

Every scheduled user is served by a small cluster of base stations. Its beam
is the matching column of a zero-forcing precoder computed over the antennas
of that cluster for all scheduled users, so it nulls (estimated) interference
towards every other user through those antennas. Power is then scaled
globally to one total budget.

Channel rows ``h_k`` are stacked per cell, ``(L * M,)`` per user and
subcarrier, and the received sample is ``h_k @ x``. Rates depend on the
channels only through inner products, so angular-domain rows can be used
directly: a unitary transform applied per cell block leaves every SINR
unchanged.
"""

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DimensionError

__all__ = [
    "ServingAssignment",
    "PrecodingReport",
    "ZFResult",
    "select_serving_sets",
    "zf_precoder",
    "evaluate_throughput",
]

REG_EPS = 1e-8


@dataclass(frozen=True)
class ServingAssignment:
    """Ordered serving cells of every user, ``cells[k]`` best first."""

    cells: tuple

    def __len__(self):
        return len(self.cells)

    def antennas(self, k: int, M: int) -> np.ndarray:
        """Stacked antenna indices of user ``k``'s serving cells."""
        return np.concatenate([np.arange(l * M, (l + 1) * M) for l in sorted(self.cells[k])])


@dataclass
class PrecodingReport:
    rates: np.ndarray  # (N,) bit/s/Hz
    sinr: np.ndarray  # (N, P) linear
    degenerate: np.ndarray  # (N, P) bool, estimate was zero on the serving antennas
    regularized: bool = False

    @property
    def mean_rate(self) -> float:
        """Average throughput per user."""
        return float(np.mean(self.rates))


class ZFResult(NamedTuple):
    W: np.ndarray
    regularized: bool


def select_serving_sets(gains, n_serve: int) -> ServingAssignment:
    """The ``n_serve`` strongest cells per user; ties go to the lower index.

    ``gains`` is ``(K, L)`` (or ``(L,)`` for a single user). ``n_serve`` is
    clamped to ``L``.
    """
    if n_serve < 1:
        raise ValueError("n_serve must be at least 1")
    g = np.atleast_2d(np.asarray(gains, dtype=float))
    n = min(n_serve, g.shape[1])
    order = np.argsort(-g, axis=1, kind="stable")[:, :n]
    return ServingAssignment(tuple(tuple(int(l) for l in row) for row in order))


def _zf_directions(H):
    """Unscaled ZF columns ``H^H (H H^H)^{-1}`` with loading when rank-deficient.

    All-zero rows are decoupled exactly (unit diagonal) and get zero columns.
    """
    U = H.shape[-2]
    HH = np.swapaxes(H, -1, -2).conj()
    gram = H @ HH
    zero = ~np.any(H != 0, axis=-1)
    gram = gram + zero[..., None] * np.eye(U)
    rank = np.linalg.matrix_rank(gram, hermitian=True)
    deficient = rank < U
    if np.any(deficient):
        tr = np.trace(gram, axis1=-2, axis2=-1).real
        load = np.where(deficient, REG_EPS * tr, 0.0)
        gram = gram + load[..., None, None] * np.eye(U)
    return HH @ np.linalg.inv(gram), bool(np.any(deficient))


def zf_precoder(H, total_power: float) -> ZFResult:
    """Zero-forcing precoder ``W = H^H (H H^H)^{-1}`` at a total power.

    ``H`` is ``(..., U, A)`` with users as rows; leading axes are batched and
    each matrix is scaled on its own so that ``sum_k ||W[:, k]||^2`` equals
    ``total_power``. Rank-deficient channels get diagonal loading of
    ``1e-8 * trace(H H^H)`` and set the ``regularized`` flag.
    """
    H = np.asarray(H, dtype=np.complex128)
    if H.ndim < 2:
        raise DimensionError("H must be at least two-dimensional")
    U, A = H.shape[-2:]
    if U > A:
        raise DimensionError(f"cannot zero-force {U} users with {A} antennas")
    if total_power < 0:
        raise ValueError("total_power must be non-negative")
    W, regularized = _zf_directions(H)
    norm2 = np.sum(np.abs(W) ** 2, axis=(-2, -1), keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(norm2 > 0, np.sqrt(total_power / norm2), 0.0)
    return ZFResult(W * scale, regularized)


def evaluate_throughput(H_true, H_est, assignment: ServingAssignment, noise_var: float,
                        total_power: float, user_group_map: Sequence[int],
                        M: int) -> PrecodingReport:
    """Per-user rates of cluster-based joint ZF built on estimated channels.

    Parameters
    ----------
    H_true, H_est : (P, N, L*M) complex
        True and estimated channel rows of the ``N`` scheduled users towards
        every cell, stacked cell by cell.
    assignment : ServingAssignment
        Serving cells of every scheduled user.
    noise_var : float
        Receiver noise power per subcarrier.
    total_power : float
        Transmit power per subcarrier summed over users and cells.
    user_group_map : sequence of int
        Group of every scheduled user; at most one user per group.
    M : int
        Antennas per cell.

    Returns
    -------
    PrecodingReport
        ``rates[k] = mean_p log2(1 + sinr[k, p])``.

    Notes
    -----
    User ``k`` gets column ``k`` of the ZF precoder over its serving cells'
    antennas, computed from the estimates of all scheduled users. The SINR
    counts every other user's beam through the true channel, which covers
    both residual intra-cluster interference and leakage from cells outside
    the user's cluster. Where a user's estimate is zero on its serving
    antennas it cannot be zero-forced; on those subcarriers it gets a fixed
    all-ones beam at the average ZF column norm and is flagged.
    """
    H_true = np.asarray(H_true, dtype=np.complex128)
    H_est = np.asarray(H_est, dtype=np.complex128)
    if H_true.ndim != 3 or H_true.shape != H_est.shape:
        raise DimensionError(f"channel shapes {H_true.shape} and {H_est.shape} differ")
    P, N, A = H_true.shape
    if len(assignment) != N or len(user_group_map) != N:
        raise DimensionError(f"{N} users but {len(assignment)} assignments and "
                             f"{len(user_group_map)} group labels")
    if A % M:
        raise DimensionError(f"{A} antennas do not split into cells of M={M}")
    L = A // M
    if any(l < 0 or l >= L for cells in assignment.cells for l in cells):
        raise DimensionError("serving cell index out of range")
    if len(set(user_group_map)) != N:
        raise ValueError("scheduled users must come from distinct groups")
    if noise_var <= 0:
        raise ValueError("noise_var must be positive")

    W = np.zeros((P, A, N), dtype=np.complex128)
    degenerate = np.zeros((P, N), dtype=bool)
    regularized = False
    clusters = {}
    for k, cells in enumerate(assignment.cells):
        clusters.setdefault(tuple(sorted(cells)), []).append(k)
    for cells, users in clusters.items():
        ant = np.concatenate([np.arange(l * M, (l + 1) * M) for l in cells])
        if ant.size < N:
            raise DimensionError(f"{ant.size} serving antennas cannot zero-force {N} users")
        Hc = H_est[:, :, ant]  # (P, N, |ant|)
        Wc, reg = _zf_directions(Hc)
        regularized |= reg
        W[:, ant[:, None], users] = Wc[:, :, users]
        degenerate[:, users] = ~np.any(Hc[:, users] != 0, axis=2)
    if degenerate.any():
        # fixed beam at the average ZF column norm (unit norm if there is none)
        col2 = np.sum(np.abs(W) ** 2, axis=1)  # (P, N)
        ok = ~degenerate
        n_ok = ok.sum(axis=1)
        ref = np.where(n_ok > 0, (col2 * ok).sum(axis=1) / np.maximum(n_ok, 1), 1.0)
        for p, k in zip(*np.nonzero(degenerate)):
            ant = assignment.antennas(k, M)
            W[p, ant, k] = np.sqrt(ref[p] / ant.size)
    norm2 = np.sum(np.abs(W) ** 2, axis=(1, 2), keepdims=True)
    W *= np.sqrt(total_power / norm2)

    gain = np.abs(H_true @ W) ** 2  # (P, N_rx, N_tx)
    signal = np.diagonal(gain, axis1=1, axis2=2)  # (P, N)
    interference = gain.sum(axis=2) - signal
    sinr = (signal / (interference + noise_var)).T
    rates = np.mean(np.log2(1.0 + sinr), axis=1)
    return PrecodingReport(rates, sinr, degenerate.T, regularized)
