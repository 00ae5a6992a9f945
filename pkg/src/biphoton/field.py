"""The 4D two-photon amplitude container, per-photon transforms and reductions."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ContractError, NumericalError
from .grid import DOMAINS, MOMENTUM, POSITION, TransverseGrid, transform_planes
from .store import InCoreStore

PHOTONS = ("signal", "idler")
NORMALIZATIONS = ("raw", "unit-peak")


@dataclass
class ReducedMap:
    """Non-negative 2D rate on one photon's lattice, indexed ``[x, y]``."""

    values: np.ndarray
    grid: TransverseGrid
    domain: str
    photon: str
    normalization: str = "raw"
    label: str = ""

    def __post_init__(self):
        if self.domain not in DOMAINS:
            raise ValueError(f"unknown domain {self.domain!r}")
        if self.normalization not in NORMALIZATIONS:
            raise ValueError(f"normalization must be one of {NORMALIZATIONS}")
        if np.any(self.values < 0):
            raise NumericalError(f"reduced map {self.label!r} has negative entries")

    @property
    def coords(self) -> np.ndarray:
        return self.grid.coords(self.domain)

    def total(self) -> float:
        """Cell-measure weighted sum."""
        return float(self.values.sum() * self.grid.cell_measure(self.domain))

    def unit_peak(self) -> "ReducedMap":
        peak = self.values.max()
        if not peak > 0:
            raise NumericalError(f"cannot peak-normalize the all-zero map {self.label!r}")
        return replace(self, values=self.values / peak, normalization="unit-peak")


@dataclass
class BiphotonField:
    """Amplitude indexed ``(sx, sy, ix, iy)`` with a domain tag per photon."""

    grid: TransverseGrid
    store: object
    signal_domain: str = MOMENTUM
    idler_domain: str = MOMENTUM
    workers: int = 1

    @classmethod
    def from_array(cls, grid: TransverseGrid, array: np.ndarray, signal_domain: str = MOMENTUM,
                   idler_domain: str = MOMENTUM, slab: int | None = None) -> "BiphotonField":
        """Wrap an existing in-core ``(n, n, n, n)`` complex128 array (not copied)."""
        return cls(grid, InCoreStore(grid.n, slab=slab, array=array), signal_domain, idler_domain)

    @property
    def array(self) -> np.ndarray:
        if not hasattr(self.store, "array"):
            raise ContractError("field is spilled to disk; use slabs or planes")
        return self.store.array

    def domain(self, photon: str) -> str:
        if photon == "signal":
            return self.signal_domain
        if photon == "idler":
            return self.idler_domain
        raise ValueError(f"photon must be one of {PHOTONS}")

    def measure(self, photon: str) -> float:
        return self.grid.cell_measure(self.domain(photon))

    @property
    def natural_side(self) -> str:
        """Slab side that needs no layout change in the backing store."""
        return getattr(self.store, "layout", "signal")

    def total_power(self) -> float:
        return reduce_both(self)[0].total()


_TARGET = {"forward": MOMENTUM, "inverse": POSITION}
_SOURCE = {"forward": POSITION, "inverse": MOMENTUM}


def fft2_per_photon(field: BiphotonField, photon: str, direction: str) -> BiphotonField:
    """Transform one photon's coordinates (or ``"both"``) in place."""
    if direction not in _TARGET:
        raise ValueError("direction must be 'forward' or 'inverse'")
    if photon == "both":
        # signal first for the inverse, idler first for the forward: each
        # starts on the store's current side
        order = ("signal", "idler") if field.natural_side == "signal" else ("idler", "signal")
        for p in order:
            fft2_per_photon(field, p, direction)
        return field
    if field.domain(photon) != _SOURCE[direction]:
        raise ContractError(
            f"{direction} transform needs the {photon} photon in {_SOURCE[direction]}, "
            f"field is in {field.domain(photon)}"
        )
    axes = (0, 1) if photon == "signal" else (2, 3)
    for _, chunk in field.store.slabs(photon):
        transform_planes(chunk, axes, field.grid, direction, field.workers)
    if photon == "signal":
        field.signal_domain = _TARGET[direction]
    else:
        field.idler_domain = _TARGET[direction]
    return field


def _slab_power(chunk: np.ndarray) -> np.ndarray:
    p = chunk.real**2
    p += chunk.imag**2
    return p


def reduce_both(field: BiphotonField, label: str = "") -> tuple[ReducedMap, ReducedMap]:
    """Signal and idler reductions from a single read-only pass over the field.

    Partial sums are combined slab by slab in a fixed order, so the result
    is deterministic. Raises :class:`NumericalError` on non-finite entries.
    """
    n = field.grid.n
    sig = np.zeros((n, n))
    idl = np.zeros((n, n))
    side = field.natural_side
    for sl, chunk in field.store.slabs(side, write=False):
        p = _slab_power(chunk)
        if side == "signal":
            sig += p.sum(axis=(2, 3))
            idl[:, sl] += p.sum(axis=(0, 1))
        else:
            sig[sl] += p.sum(axis=(2, 3))
            idl += p.sum(axis=(0, 1))
    if not (np.isfinite(sig).all() and np.isfinite(idl).all()):
        raise NumericalError(f"non-finite entries in the field at stage {label!r}")
    sig *= field.measure("idler")
    idl *= field.measure("signal")
    return (
        ReducedMap(sig, field.grid, field.signal_domain, "signal", label=label),
        ReducedMap(idl, field.grid, field.idler_domain, "idler", label=label),
    )


def reduce(field: BiphotonField, keep: str) -> ReducedMap:
    """``C1(a) = sum_b |field(a, b)|^2 * cell measure of b`` for ``keep`` in {signal, idler}."""
    if keep not in PHOTONS:
        raise ValueError(f"keep must be one of {PHOTONS}")
    s, i = reduce_both(field)
    return s if keep == "signal" else i


def slice_coincidence(field: BiphotonField, fixed_photon: str, fixed_index: tuple[int, int],
                      label: str = "") -> ReducedMap:
    """``|field(a, fixed)|^2`` over the free photon's lattice."""
    n = field.grid.n
    jx, jy = (int(j) for j in fixed_index)
    if not (0 <= jx < n and 0 <= jy < n):
        raise ContractError(f"fixed index {fixed_index} outside the {n}x{n} lattice")
    if fixed_photon == "idler":
        plane = field.store.idler_planes([(jx, jy)])[0]
        free = "signal"
    elif fixed_photon == "signal":
        plane = field.store.signal_plane(jx, jy)
        free = "idler"
    else:
        raise ValueError(f"fixed_photon must be one of {PHOTONS}")
    return ReducedMap(np.abs(plane) ** 2, field.grid, field.domain(free), free, label=label)


def _cut_kernels(grid: TransverseGrid, domain: str, qx: float, q: np.ndarray):
    """Row ``kx`` and matrix ``ky`` taking one photon's lattice to ``F(qx, q)``.

    In position space they are the DTFT weights ``exp(-i q x) dx``. In
    momentum space the lattice values are first taken back through the
    exact inverse sum, which makes the cut a band-limited interpolation.
    """
    x = grid.x
    kx = np.exp(-1j * qx * x) * grid.step
    ky = np.exp(-1j * np.outer(q, x)) * grid.step
    if domain == MOMENTUM:
        inv = np.exp(1j * np.outer(x, grid.q)) / (grid.n * grid.step)
        kx = kx @ inv
        ky = ky @ inv
    return kx, ky


def signal_cut(field: BiphotonField, qx: float, q, label: str = "") -> np.ndarray:
    """Signal far-field rate along ``q_x = qx`` at arbitrary ``q_y``, idler traced out.

    Equals the far-field signal reduction wherever ``q`` falls on the lattice.
    One read-only pass; coherent partial sums are accumulated slab by slab.
    """
    q = np.atleast_1d(np.asarray(q, dtype=float))
    n = field.grid.n
    kx, ky = _cut_kernels(field.grid, field.signal_domain, qx, q)
    amp = np.zeros((len(q), n, n), dtype=np.complex128)
    side = field.natural_side
    for sl, chunk in field.store.slabs(side, write=False):
        if side == "signal":
            t = np.tensordot(kx, chunk, axes=(0, 0))  # (sy, ix, iy-slab)
            amp[:, :, sl] = np.tensordot(ky, t, axes=(1, 0))
        else:
            t = np.tensordot(kx[sl], chunk, axes=(0, 0))
            amp += np.tensordot(ky, t, axes=(1, 0))
    out = (amp.real**2 + amp.imag**2).sum(axis=(1, 2)) * field.measure("idler")
    if not np.isfinite(out).all():
        raise NumericalError(f"non-finite far-field cut {label!r}")
    return out
