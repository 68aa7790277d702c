"""Multi-cell geometry, path loss and sparse angular-domain channels.

Channels are generated directly in the angular (beamspace) domain. For a user
``k`` and base station ``l`` the angular vector on subcarrier ``p`` is nonzero
only on a support set that is shared by every subcarrier, and the supports of
users in one group share a common core of angle bins.

Array conventions
-----------------
``coeffs`` has shape ``(K, L, P, M)``: users, cells, subcarriers, angle bins.
"""

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, DimensionError

__all__ = [
    "AngularTransform",
    "CellLayout",
    "PathLossModel",
    "UserDrop",
    "AngularChannelSet",
    "unitary_dft",
    "path_loss",
    "hex_layout",
    "drop_edge_group",
    "sample_group_supports",
    "synthesize_channels",
]


@dataclass(frozen=True)
class AngularTransform:
    """Unitary angular-domain transform ``F`` (spatial = F @ angular).

    ``is_dft`` marks the unitary DFT so callers can use an FFT instead of a
    dense product.
    """

    matrix: np.ndarray
    is_dft: bool = False

    @property
    def M(self) -> int:
        return self.matrix.shape[0]

    def to_spatial(self, h_ang: np.ndarray) -> np.ndarray:
        """Map angular vectors (last axis) to antenna-domain vectors."""
        if self.is_dft:
            return np.fft.fft(h_ang, axis=-1) / np.sqrt(self.M)
        return h_ang @ self.matrix.T

    def to_angular(self, h: np.ndarray) -> np.ndarray:
        if self.is_dft:
            return np.fft.ifft(h, axis=-1) * np.sqrt(self.M)
        return h @ self.matrix.conj()

    def right_multiply(self, rows: np.ndarray) -> np.ndarray:
        """Return ``rows @ F`` for row vectors stacked along the last axis."""
        if self.is_dft:
            # F is symmetric, so rows @ F is the DFT of each row.
            return np.fft.fft(rows, axis=-1) / np.sqrt(self.M)
        return rows @ self.matrix


def unitary_dft(M: int) -> AngularTransform:
    """M-point unitary DFT, entry ``(a, b) = exp(-2j*pi*a*b/M) / sqrt(M)``."""
    if not isinstance(M, (int, np.integer)) or M < 1:
        raise DimensionError(f"DFT size must be a positive integer, got {M!r}")
    idx = np.arange(M)
    F = np.exp(-2j * np.pi * np.outer(idx, idx) / M) / np.sqrt(M)
    return AngularTransform(F, is_dft=True)


@dataclass(frozen=True)
class PathLossModel:
    """Distance power law ``1 / max(d, d_min) ** alpha`` with d in km."""

    alpha: float = 3.8
    d_min: float = 0.035

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigError("path-loss exponent must be positive", "alpha")
        if not self.d_min > 0:
            raise ConfigError("near-field clamp must be positive", "d_min")

    def gain(self, d):
        return path_loss(d, self)


def path_loss(d, model: PathLossModel = PathLossModel()):
    """Linear large-scale power gain at distance ``d`` (km).

    Works elementwise on arrays. Distances below ``model.d_min`` are clamped.
    """
    d = np.asarray(d, dtype=float)
    if np.any(d < 0):
        raise ValueError("distance must be non-negative")
    out = np.maximum(d, model.d_min) ** (-model.alpha)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class CellLayout:
    bs_positions: np.ndarray  # (L, 2), km
    radius: float

    @property
    def L(self) -> int:
        return self.bs_positions.shape[0]


def hex_layout(L: int, radius: float = 1.0) -> CellLayout:
    """Central cell at the origin, optionally surrounded by one hexagonal ring.

    For ``L == 7`` the six neighbours sit at multiples of 60 degrees, at the
    inter-site distance ``sqrt(3) * radius``.
    """
    if not radius > 0:
        raise ConfigError("cell radius must be positive", "radius_km")
    if L == 1:
        pos = np.zeros((1, 2))
    elif L == 7:
        ang = np.deg2rad(60.0 * np.arange(6))
        ring = np.sqrt(3.0) * radius * np.column_stack([np.cos(ang), np.sin(ang)])
        pos = np.vstack([np.zeros((1, 2)), ring])
    else:
        raise ConfigError(f"only L=1 or L=7 cells are supported, got {L}", "L")
    return CellLayout(pos, float(radius))


@dataclass(frozen=True)
class UserDrop:
    positions: np.ndarray  # (K, 2)
    distances: np.ndarray  # (K, L), user to every BS

    @property
    def angles(self) -> np.ndarray:
        return np.arctan2(self.positions[:, 1], self.positions[:, 0])


def drop_edge_group(layout: CellLayout, K: int, rng: np.random.Generator,
                    sector_deg: float = 60.0,
                    sector_start: Optional[float] = None) -> UserDrop:
    """Place a group of ``K`` users on the edge circle of the central cell.

    Every user is at distance ``layout.radius`` from BS 0. Angles are uniform
    inside one sector of width ``sector_deg``; the sector start is uniform on
    the circle unless given (radians).
    """
    if K < 1:
        raise ConfigError("group size must be at least 1", "K")
    if sector_start is None:
        sector_start = rng.uniform(0.0, 2 * np.pi)
    phi = sector_start + np.deg2rad(sector_deg) * rng.random(K)
    pos = layout.radius * np.column_stack([np.cos(phi), np.sin(phi)])
    dist = np.linalg.norm(pos[:, None, :] - layout.bs_positions[None, :, :], axis=-1)
    return UserDrop(pos, dist)


def sample_group_supports(M: int, s: int, c_overlap: int, K: int,
                          subgroup_spec: Optional[Sequence[int]] = None,
                          rng: Optional[np.random.Generator] = None):
    """Draw the angular supports of a user group towards one BS.

    A common core of ``c_overlap`` bins is drawn first; each subgroup then adds
    ``s - c_overlap`` extra bins. Extras of different subgroups are disjoint
    whenever ``M`` leaves room, so two subgroups overlap on the core exactly.
    Users inside a subgroup share their subgroup's support.

    Parameters
    ----------
    subgroup_spec : sequence of int, optional
        Subgroup sizes summing to ``K``. Defaults to two halves (one group
        when ``K == 1``).

    Returns
    -------
    list of numpy.ndarray
        ``K`` sorted index arrays.
    """
    if rng is None:
        rng = np.random.default_rng()
    if not 0 <= c_overlap <= s:
        raise ConfigError(f"need 0 <= c_overlap <= s, got {c_overlap}, {s}", "c_overlap")
    if not 1 <= s <= M:
        raise ConfigError(f"need 1 <= s <= M, got s={s}, M={M}", "s")
    if subgroup_spec is None:
        subgroup_spec = (K,) if K == 1 else (K // 2, K - K // 2)
    subgroup_spec = [int(n) for n in subgroup_spec if n > 0]
    if sum(subgroup_spec) != K:
        raise ConfigError(f"subgroup sizes {subgroup_spec} do not sum to K={K}", "subgroup_spec")

    perm = rng.permutation(M)
    core, rest = perm[:c_overlap], perm[c_overlap:]
    n_extra = s - c_overlap
    n_sub = len(subgroup_spec)
    if n_sub * n_extra <= rest.size:
        extras = [rest[i * n_extra:(i + 1) * n_extra] for i in range(n_sub)]
    else:
        extras = [rng.choice(rest, n_extra, replace=False) for _ in range(n_sub)]

    out = []
    for size, extra in zip(subgroup_spec, extras):
        support = np.sort(np.concatenate([core, extra]))
        out.extend(support.copy() for _ in range(size))
    return out


@dataclass
class AngularChannelSet:
    """Angular-domain channels of a user group towards every BS.

    ``supports[k][l]`` is the sorted support of user ``k`` towards cell ``l``
    and ``gains[k, l]`` the large-scale power gain.
    """

    coeffs: np.ndarray  # (K, L, P, M)
    supports: list
    gains: np.ndarray  # (K, L)

    @property
    def K(self) -> int:
        return self.coeffs.shape[0]

    @property
    def L(self) -> int:
        return self.coeffs.shape[1]

    @property
    def P(self) -> int:
        return self.coeffs.shape[2]

    @property
    def M(self) -> int:
        return self.coeffs.shape[3]

    def aggregate(self, cells) -> np.ndarray:
        """Stack the blocks of ``cells`` into ``(P, M*len(cells), K)``."""
        cells = list(cells)
        blocks = self.coeffs[:, cells]  # (K, C, P, M)
        return blocks.transpose(2, 1, 3, 0).reshape(self.P, -1, self.K)

    def aggregate_supports(self, cells):
        """Per-user support in the stacked coordinates of :meth:`aggregate`."""
        cells = list(cells)
        return [np.concatenate([self.supports[k][l] + b * self.M
                                for b, l in enumerate(cells)])
                for k in range(self.K)]

    def scaled(self, factor) -> "AngularChannelSet":
        return AngularChannelSet(self.coeffs * factor, self.supports,
                                 self.gains * abs(factor) ** 2)


def synthesize_channels(supports, gains, P: int, M: int,
                        rng: np.random.Generator) -> AngularChannelSet:
    """Draw exactly-sparse angular channels on the given supports.

    Each on-support coefficient is CN(0, gains[k, l] / |support|), independent
    over subcarriers, so ``E||h||^2 = gains[k, l]`` on every subcarrier.
    """
    gains = np.asarray(gains, dtype=float)
    K, L = gains.shape
    if len(supports) != K or any(len(row) != L for row in supports):
        raise DimensionError("supports must be indexed [k][l] matching gains")

    mask = np.zeros((K, L, M), dtype=bool)
    scale = np.zeros((K, L))
    for k in range(K):
        for l in range(L):
            idx = np.asarray(supports[k][l], dtype=int)
            if idx.size and (idx.min() < 0 or idx.max() >= M):
                raise DimensionError(f"support index out of range for M={M}")
            if idx.size == 0:
                if gains[k, l] > 0:
                    raise ConfigError(f"empty support with positive gain at (k={k}, l={l})",
                                      "supports")
                continue
            mask[k, l, idx] = True
            scale[k, l] = np.sqrt(gains[k, l] / idx.size)

    z = rng.standard_normal((K, L, P, M, 2)).view(np.complex128)[..., 0] / np.sqrt(2)
    coeffs = z * (mask * scale[:, :, None])[:, :, None, :]
    supports = [[np.asarray(supports[k][l], dtype=int) for l in range(L)] for k in range(K)]
    return AngularChannelSet(coeffs, supports, gains)
