"""Pump transverse profiles u(rho) and their spectra.

The spectrum follows ``u~(q) = integral u(rho) exp(-i rho.q) d^2 rho``. All
supported kinds are separable, ``u~(q) = fx(qx) * fy(qy)``, which lets the
sum-lattice lookup ``u~(q_s + q_i)`` be stored as two ``n x n`` tables.

Widths are 4-sigma intensity widths of the Gaussian envelope, so the
1/e^2 field radius is ``w0 = width / 2``. TEM01 is the Hermite-Gaussian
HG01 mode with its node on the x-axis (lobes at ``y = +-w0/sqrt(2)``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .grid import TransverseGrid

KINDS = ("gaussian", "tem01", "plane_wave")

# window must capture the beam: edge intensity below this fraction of the peak
EDGE_INTENSITY_LIMIT = 1e-3
MIN_SAMPLES_PER_WIDTH = 8


@dataclass(frozen=True)
class PumpSpec:
    kind: str
    width_x: float = 140e-6
    width_y: float | None = None
    wavelength: float = 404e-9
    center: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"pump kind must be one of {KINDS}, got {self.kind!r}")
        if self.kind != "plane_wave":
            if not self.width_x > 0 or (self.width_y is not None and not self.width_y > 0):
                raise ConfigurationError("pump widths must be positive")
        if not self.wavelength > 0:
            raise ConfigurationError("pump wavelength must be positive")

    @property
    def w0x(self) -> float:
        return self.width_x / 2

    @property
    def w0y(self) -> float:
        return (self.width_y if self.width_y is not None else self.width_x) / 2


def _gauss_axis(s, w0):
    return math.sqrt(math.pi) * w0 * np.exp(-((s * w0) ** 2) / 4)


def _hg1_axis(s, w0):
    # transform of (sqrt(2) y / w0) exp(-y^2 / w0^2)
    return -1j * math.sqrt(math.pi / 2) * w0**2 * s * np.exp(-((s * w0) ** 2) / 4)


def _axis_spectrum(spec: PumpSpec, s: np.ndarray, axis: int) -> np.ndarray:
    """One separable factor of u~ evaluated at momenta ``s`` (any shape)."""
    s = np.asarray(s, dtype=float)
    w0 = spec.w0x if axis == 0 else spec.w0y
    if spec.kind == "tem01" and axis == 1:
        f = _hg1_axis(s, w0)
    else:
        f = _gauss_axis(s, w0).astype(np.complex128)
    offset = spec.center[axis]
    if offset:
        f = f * np.exp(-1j * s * offset)
    return f


def pump_profile(spec: PumpSpec, grid: TransverseGrid) -> np.ndarray:
    """Near-field amplitude u(x, y) on the position lattice, shape ``(n, n)``."""
    X, Y = grid.mesh("position")
    if spec.kind == "plane_wave":
        return np.ones_like(X, dtype=np.complex128)
    X = X - spec.center[0]
    Y = Y - spec.center[1]
    env = np.exp(-(X / spec.w0x) ** 2 - (Y / spec.w0y) ** 2)
    if spec.kind == "tem01":
        env = env * (math.sqrt(2) * Y / spec.w0y)
    return env.astype(np.complex128)


def check_resolution(spec: PumpSpec, grid: TransverseGrid) -> None:
    """Raise unless the window captures the beam and the step resolves it."""
    if spec.kind == "plane_wave":
        return
    narrow = min(spec.width_x, spec.width_y or spec.width_x)
    if grid.step > narrow / MIN_SAMPLES_PER_WIDTH:
        need = math.ceil(grid.extent * MIN_SAMPLES_PER_WIDTH / narrow)
        raise ConfigurationError(
            f"pump width {narrow:.3g} m is under-resolved: step {grid.step:.3g} m exceeds "
            f"width/{MIN_SAMPLES_PER_WIDTH}; use n >= {need + need % 2} for this window"
        )
    u = np.abs(pump_profile(spec, grid)) ** 2
    edge = max(u[0].max(), u[-1].max(), u[:, 0].max(), u[:, -1].max())
    if edge > EDGE_INTENSITY_LIMIT * u.max():
        raise ConfigurationError(
            f"pump is clipped by the {grid.extent:.3g} m window: edge intensity "
            f"{edge / u.max():.2e} of peak exceeds {EDGE_INTENSITY_LIMIT:g}; enlarge the extent"
        )


def pump_spectrum(spec: PumpSpec, grid: TransverseGrid) -> np.ndarray:
    """u~(q) on the momentum lattice, shape ``(n, n)`` indexed ``[qx, qy]``."""
    check_resolution(spec, grid)
    if spec.kind == "plane_wave":
        out = np.zeros((grid.n, grid.n), dtype=np.complex128)
        out[grid.n // 2, grid.n // 2] = 1.0 / grid.cell_measure("momentum")
        return out
    q = grid.q
    return np.multiply.outer(_axis_spectrum(spec, q, 0), _axis_spectrum(spec, q, 1))


@dataclass
class SumLatticeSpectrum:
    """Lookup of ``u~(q_s + q_i)`` for every signal/idler lattice pair.

    ``x_table[js, ji]`` and ``y_table[js, ji]`` hold the x and y factors at
    ``q[js] + q[ji]``; the full value is their product.
    """

    spec: PumpSpec
    grid: TransverseGrid
    x_table: np.ndarray
    y_table: np.ndarray

    def __call__(self, qs, qi) -> np.ndarray:
        """Evaluate at arbitrary momentum pairs ``qs = (qsx, qsy)``, ``qi = (qix, qiy)``."""
        sx = np.asarray(qs[0]) + np.asarray(qi[0])
        sy = np.asarray(qs[1]) + np.asarray(qi[1])
        if self.spec.kind == "plane_wave":
            tol = 1e-9 * self.grid.dq
            peak = 1.0 / self.grid.cell_measure("momentum")
            return np.where((np.abs(sx) < tol) & (np.abs(sy) < tol), peak, 0.0).astype(np.complex128)
        return _axis_spectrum(self.spec, sx, 0) * _axis_spectrum(self.spec, sy, 1)

    def block(self, iy: slice | int) -> np.ndarray:
        """Values for all ``(sx, sy, ix)`` and the idler-y indices ``iy``.

        Shape ``(n, n, n, len(iy))`` (or ``(n, n, n)`` for an integer index).
        """
        yt = self.y_table[:, iy]
        if yt.ndim == 1:
            return self.x_table[:, None, :] * yt[None, :, None]
        return self.x_table[:, None, :, None] * yt[None, :, None, :]


def pump_field_on_sum_lattice(spec: PumpSpec, grid: TransverseGrid, check: bool = True) -> SumLatticeSpectrum:
    """Build the ``u~(q_s + q_i)`` lookup.

    Analytic kinds are evaluated at the exact sum, even where it leaves the
    single-photon window. The plane wave lives only on the ``q_s = -q_i``
    lattice antidiagonal.
    """
    if check:
        check_resolution(spec, grid)
    n = grid.n
    if spec.kind == "plane_wave":
        j = np.arange(n)
        hit = (j[:, None] + j[None, :]) == n
        amp = 1.0 / grid.dq * 2 * math.pi  # per axis: factors multiply to 1/cell_measure
        table = np.where(hit, amp, 0.0).astype(np.complex128)
        return SumLatticeSpectrum(spec, grid, table, table.copy())
    s = grid.q[:, None] + grid.q[None, :]
    return SumLatticeSpectrum(spec, grid, _axis_spectrum(spec, s, 0), _axis_spectrum(spec, s, 1))
