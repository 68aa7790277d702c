"""Downlink pilot design, sensing matrices and fed-back pilot observations.

Shapes used throughout:

* pilot symbols ``(L, P, G, M)`` -- cell, subcarrier, time slot, antenna
* sensing matrices ``(P, G, M * |Pi|)``
* feedback ``(P, G, K)``
"""

import io
import struct
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .channel_model import AngularChannelSet, AngularTransform
from .errors import DimensionError

__all__ = [
    "PilotBook",
    "ActiveCellSet",
    "FeedbackTensor",
    "design_pilot_book",
    "active_cell_set",
    "group_active_cells",
    "assemble_sensing_matrix",
    "simulate_feedback",
]

_MAGIC = b"PBK1"


@dataclass(frozen=True)
class PilotBook:
    symbols: np.ndarray  # (L, P, G, M), unit modulus

    @property
    def shape(self):
        return self.symbols.shape

    @property
    def G(self) -> int:
        return self.symbols.shape[2]

    def truncate(self, G: int) -> "PilotBook":
        """First ``G`` time slots. Books drawn for a larger G nest."""
        if not 1 <= G <= self.G:
            raise DimensionError(f"cannot truncate {self.G} slots to {G}")
        return PilotBook(self.symbols[:, :, :G])

    # Flat layout: index order (l, p, t, m), each entry as a (re, im) pair.
    def to_bytes(self) -> bytes:
        head = _MAGIC + struct.pack("<4q", *self.shape)
        body = np.ascontiguousarray(self.symbols, dtype="<c16").view("<f8").tobytes()
        return head + body

    @classmethod
    def from_bytes(cls, blob: bytes) -> "PilotBook":
        if blob[:4] != _MAGIC:
            raise ValueError("not a pilot book")
        shape = struct.unpack("<4q", blob[4:36])
        data = np.frombuffer(blob[36:], dtype="<f8")
        if data.size != 2 * int(np.prod(shape)):
            raise ValueError("truncated pilot book")
        return cls(data.view("<c16").reshape(shape).copy())

    def to_csv(self) -> str:
        buf = io.StringIO()
        L, P, G, M = self.shape
        buf.write(f"# L={L},P={P},G={G},M={M}\n")
        buf.write("re,im\n")
        flat = self.symbols.reshape(-1)
        for z in flat:
            buf.write(f"{float(z.real)!r},{float(z.imag)!r}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "PilotBook":
        lines = text.splitlines()
        dims = dict(kv.split("=") for kv in lines[0].lstrip("# ").split(","))
        shape = tuple(int(dims[k]) for k in ("L", "P", "G", "M"))
        vals = np.array([[float(x) for x in ln.split(",")] for ln in lines[2:] if ln])
        if vals.shape[0] != int(np.prod(shape)):
            raise ValueError("pilot CSV row count does not match header")
        return cls((vals[:, 0] + 1j * vals[:, 1]).reshape(shape))


def design_pilot_book(L: int, M: int, P: int, G: int,
                      rng: np.random.Generator) -> PilotBook:
    """Unit-modulus pilots with i.i.d. uniform phases on [0, 2*pi)."""
    for name, v in (("L", L), ("M", M), ("P", P), ("G", G)):
        if v < 1:
            raise DimensionError(f"{name} must be >= 1, got {v}")
    theta = rng.uniform(0.0, 2 * np.pi, size=(L, P, G, M))
    return PilotBook(np.exp(1j * theta))


@dataclass(frozen=True)
class ActiveCellSet:
    cells: tuple

    def __len__(self):
        return len(self.cells)

    def __iter__(self):
        return iter(self.cells)


def active_cell_set(snr_per_cell: Sequence[float], rho_th: float) -> ActiveCellSet:
    """Cells whose linear SNR strictly exceeds ``rho_th``, ascending."""
    snr = np.asarray(snr_per_cell, dtype=float)
    if np.any(snr < 0):
        raise ValueError("SNR values must be non-negative")
    return ActiveCellSet(tuple(int(l) for l in np.flatnonzero(snr > rho_th)))


def group_active_cells(snr: np.ndarray, rho_th: float) -> ActiveCellSet:
    """One active set for a whole user group.

    Users of a group see near-identical large-scale fading, so the group is
    assigned the active set of its mean per-cell SNR. ``snr`` is ``(K, L)``.
    """
    return active_cell_set(np.mean(np.atleast_2d(snr), axis=0), rho_th)


def assemble_sensing_matrix(book: PilotBook, F: AngularTransform,
                            pi, p: Optional[int] = None) -> np.ndarray:
    """Sensing matrix ``Theta`` for the cells in ``pi``.

    Row ``t`` is the concatenation over ``l`` in ``pi`` of ``s_{l,p}^t @ F``.
    Returns ``(G, M * |pi|)`` for one subcarrier ``p``, or ``(P, G, M * |pi|)``
    stacked over all subcarriers when ``p`` is None.
    """
    cells = list(pi)
    if not cells:
        raise ValueError("active cell set is empty")
    L, P, G, M = book.shape
    if F.M != M:
        raise DimensionError(f"transform size {F.M} does not match M={M}")
    if min(cells) < 0 or max(cells) >= L:
        raise DimensionError("active cell index out of range")
    sym = book.symbols[cells] if p is None else book.symbols[cells, p:p + 1]
    phi = F.right_multiply(sym)  # (C, P', G, M)
    theta = phi.transpose(1, 2, 0, 3).reshape(phi.shape[1], G, -1)
    return theta if p is None else theta[0]


@dataclass
class FeedbackTensor:
    """Fed-back pilot observations of a user group.

    ``R`` is ``(P, G, K)``. ``noise`` holds the AWGN draw and ``ici`` the part
    of ``R`` contributed by cells outside ``active`` (both ``(P, G, K)``).
    """

    R: np.ndarray
    noise_var: float
    noise: np.ndarray
    ici: Optional[np.ndarray] = None
    active: Optional[ActiveCellSet] = None

    @property
    def P(self) -> int:
        return self.R.shape[0]

    @property
    def G(self) -> int:
        return self.R.shape[1]

    @property
    def K(self) -> int:
        return self.R.shape[2]


def simulate_feedback(channels: AngularChannelSet, book: PilotBook,
                      F: AngularTransform, noise_var: float,
                      rng: np.random.Generator,
                      active: Optional[ActiveCellSet] = None) -> FeedbackTensor:
    """Received and fed-back pilots ``r = sum_l s^T F h_l + w``.

    Every cell contributes through its true channel; cells outside ``active``
    are not noise-modelled, they are simply absent from the sensing matrix the
    estimator later uses.
    """
    K, L, P, M = channels.coeffs.shape
    Lb, Pb, G, Mb = book.shape
    if (Lb, Pb, Mb) != (L, P, M) or F.M != M:
        raise DimensionError(
            f"pilot book {book.shape} does not match channels (L={L}, P={P}, M={M})")
    if noise_var < 0:
        raise ValueError("noise variance must be non-negative")

    h = F.to_spatial(channels.coeffs)  # (K, L, P, M)
    per_cell = book.symbols @ h.transpose(1, 2, 3, 0)  # (L, P, G, K)
    w = rng.standard_normal((P, G, K, 2)).view(np.complex128)[..., 0]
    w *= np.sqrt(noise_var / 2)
    R = per_cell.sum(axis=0) + w

    ici = None
    if active is not None:
        outside = [l for l in range(L) if l not in set(active.cells)]
        ici = per_cell[outside].sum(axis=0) if outside else np.zeros_like(R)
    return FeedbackTensor(R, float(noise_var), w, ici, active)
