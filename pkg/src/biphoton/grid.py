"""Transverse sampling lattices and the centered 2D Fourier transform pair.

Conventions
-----------
Position samples sit at ``x_j = (j - n/2) * dx`` and momentum samples at
``q_k = (k - n/2) * dq`` with ``dq * extent = 2 pi``; index ``n/2`` is the
optical axis.

Forward transform (position -> momentum)::

    F(q) = sum_rho f(rho) exp(-i rho.q) dx**2

Inverse transform (momentum -> position)::

    f(rho) = (2 pi)**-2 sum_q F(q) exp(+i q.rho) dq**2

so the discrete pair is an exact inverse and Parseval holds when position
sums carry ``dx**2`` and momentum sums carry ``(dq / 2 pi)**2`` -- see
:meth:`TransverseGrid.cell_measure`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft as sfft

from .errors import ConfigurationError

POSITION = "position"
MOMENTUM = "momentum"
DOMAINS = (POSITION, MOMENTUM)


@dataclass(frozen=True)
class TransverseGrid:
    """Square lattice shared by the signal and idler transverse coordinates."""

    n: int
    extent: float

    def __post_init__(self):
        if not isinstance(self.n, (int, np.integer)) or self.n < 8 or self.n % 2:
            raise ConfigurationError(
                f"grid n_points must be an even integer >= 8, got {self.n!r}"
            )
        if not (self.extent > 0 and math.isfinite(self.extent)):
            raise ConfigurationError(f"grid extent must be positive, got {self.extent!r}")

    @property
    def step(self) -> float:
        return self.extent / self.n

    @property
    def dq(self) -> float:
        return 2 * math.pi / self.extent

    @cached_property
    def x(self) -> np.ndarray:
        """Position samples (m), centered; index ``n/2`` is zero."""
        return (np.arange(self.n) - self.n // 2) * self.step

    @cached_property
    def q(self) -> np.ndarray:
        """Momentum samples (rad/m), centered."""
        return (np.arange(self.n) - self.n // 2) * self.dq

    def coords(self, domain: str) -> np.ndarray:
        if domain == POSITION:
            return self.x
        if domain == MOMENTUM:
            return self.q
        raise ValueError(f"unknown domain {domain!r}")

    def cell_measure(self, domain: str) -> float:
        """Integration weight of one 2D cell in ``domain``."""
        if domain == POSITION:
            return self.step**2
        if domain == MOMENTUM:
            return (self.dq / (2 * math.pi)) ** 2
        raise ValueError(f"unknown domain {domain!r}")

    def mesh(self, domain: str) -> tuple[np.ndarray, np.ndarray]:
        c = self.coords(domain)
        return np.meshgrid(c, c, indexing="ij")

    def index_of(self, value: float, domain: str) -> int:
        """Nearest lattice index to a coordinate; raises if off the window."""
        c = self.coords(domain)
        step = c[1] - c[0]
        j = int(round(value / step)) + self.n // 2
        if not 0 <= j < self.n:
            raise ConfigurationError(
                f"coordinate {value:g} lies outside the {domain} window "
                f"[{c[0]:g}, {c[-1]:g}]"
            )
        return j

    def describe(self) -> dict:
        return {"n": self.n, "extent_m": self.extent, "step_m": self.step, "dq_rad_per_m": self.dq}


def make_grid(n_points: int, spatial_extent: float) -> TransverseGrid:
    return TransverseGrid(int(n_points), float(spatial_extent))


def checkerboard(n: int) -> np.ndarray:
    """``(-1)**(j+k)``; turns the plain DFT into the centered one for even n."""
    s = 1.0 - 2.0 * (np.arange(n) % 2)
    return np.multiply.outer(s, s)


def _plane_broadcast(board: np.ndarray, ndim: int, axes: tuple[int, int]) -> np.ndarray:
    shape = [1] * ndim
    shape[axes[0]] = board.shape[0]
    shape[axes[1]] = board.shape[1]
    return board.reshape(shape)


def transform_planes(
    chunk: np.ndarray,
    axes: tuple[int, int],
    grid: TransverseGrid,
    direction: str,
    workers: int = 1,
) -> None:
    """Centered 2D transform of every plane spanned by ``axes``, written back into ``chunk``.

    ``direction`` is ``"forward"`` (position -> momentum) or ``"inverse"``.
    Only one output buffer the size of ``chunk`` is allocated.
    """
    board = _plane_broadcast(checkerboard(grid.n), chunk.ndim, axes)
    chunk *= board
    if direction == "forward":
        out = sfft.fft2(chunk, axes=axes, workers=workers)
        out *= board * grid.step**2
    elif direction == "inverse":
        out = sfft.ifft2(chunk, axes=axes, workers=workers)
        out *= board / grid.step**2
    else:
        raise ValueError(f"direction must be 'forward' or 'inverse', got {direction!r}")
    chunk[...] = out


def forward2(f: np.ndarray, grid: TransverseGrid, workers: int = 1) -> np.ndarray:
    """Forward transform of a single 2D map (returns a new array)."""
    out = np.array(f, dtype=np.complex128)
    transform_planes(out, (0, 1), grid, "forward", workers)
    return out


def inverse2(f: np.ndarray, grid: TransverseGrid, workers: int = 1) -> np.ndarray:
    out = np.array(f, dtype=np.complex128)
    transform_planes(out, (0, 1), grid, "inverse", workers)
    return out
