"""Closed-form limits used as validation targets, and the relative-error metric.

thin crystal (L -> 0)
    near field: C2 = |u(rho_s)|^2 on rho_s = rho_i, C1(rho_s) = |u(rho_s)|^2
    far field:  C2 = |u~(q_s + q_i)|^2, C1(q_s) = const
plane-wave pump
    far field:  C2 = sinc^2(dkz(q_s, -q_s) L / 2) on q_s = -q_i, C1 the same profile

Every oracle map is unit-peak; the overall constants are dropped.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ContractError
from .field import ReducedMap
from .grid import MOMENTUM, POSITION, TransverseGrid
from .phasematch import PhaseMatchModel
from .pump import PumpSpec, pump_field_on_sum_lattice, pump_profile


@dataclass
class OracleResult:
    """Analytic signal C1 and a C2 evaluator on lattice index pairs."""

    kind: str
    c1: ReducedMap
    c2_value: Callable[[tuple[int, int], tuple[int, int]], float]

    def c2(self, signal_index, idler_index) -> float:
        return float(self.c2_value(tuple(signal_index), tuple(idler_index)))

    def c2_slice(self, fixed_photon: str, fixed_index) -> ReducedMap:
        """C2 over the free photon's lattice with the other photon held fixed."""
        n = self.c1.grid.n
        out = np.empty((n, n))
        for jx in range(n):
            for jy in range(n):
                if fixed_photon == "idler":
                    out[jx, jy] = self.c2((jx, jy), fixed_index)
                else:
                    out[jx, jy] = self.c2(fixed_index, (jx, jy))
        free = "signal" if fixed_photon == "idler" else "idler"
        return ReducedMap(out, self.c1.grid, self.c1.domain, free, "unit-peak", f"{self.kind} C2 slice")


def thin_crystal_near(pump: PumpSpec, grid: TransverseGrid) -> OracleResult:
    intensity = np.abs(pump_profile(pump, grid)) ** 2
    peak = intensity.max()
    c1 = ReducedMap(intensity / peak, grid, POSITION, "signal", "unit-peak", "thin-crystal near C1")

    def c2(s, i):
        return c1.values[s] if s == i else 0.0

    return OracleResult("thin_crystal_near", c1, c2)


def thin_crystal_far(pump: PumpSpec, grid: TransverseGrid) -> OracleResult:
    lookup = pump_field_on_sum_lattice(pump, grid)
    ax = np.abs(lookup.x_table) ** 2
    ay = np.abs(lookup.y_table) ** 2
    peak = ax.max() * ay.max()
    c1 = ReducedMap(np.ones((grid.n, grid.n)), grid, MOMENTUM, "signal", "unit-peak", "thin-crystal far C1")

    def c2(s, i):
        return ax[s[0], i[0]] * ay[s[1], i[1]] / peak

    return OracleResult("thin_crystal_far", c1, c2)


def thin_far_interior(pump: PumpSpec, grid: TransverseGrid, tail: float = 1e-12) -> np.ndarray:
    """Signal momenta whose partners ``q_i = Q - q_s`` stay in the window for all significant ``Q``.

    ``Q`` is significant where ``|u~(Q)|^2`` exceeds ``tail`` of its peak.
    Outside this region the window truncates the C1 integral, so the
    constant far-field law does not hold there.
    """
    lookup = pump_field_on_sum_lattice(pump, grid)
    q, c = grid.q, grid.n // 2
    tol = 1e-9 * grid.dq
    ok = []
    for table in (lookup.x_table, lookup.y_table):
        f = np.abs(table[c]) ** 2  # |factor(q_i)|^2 at q_s = 0
        reach = np.abs(q[f >= tail * f.max()]).max()
        ok.append((-reach - q >= q[0] - tol) & (reach - q <= q[-1] + tol))
    return ok[0][:, None] & ok[1][None, :]


def plane_wave_far(pm: PhaseMatchModel, grid: TransverseGrid) -> OracleResult:
    QX, QY = grid.mesh(MOMENTUM)
    s2 = pm.phase_matching((QX, QY), (-QX, -QY)) ** 2
    c1 = ReducedMap(s2 / s2.max(), grid, MOMENTUM, "signal", "unit-peak", "plane-wave far C1")
    n = grid.n

    def c2(s, i):
        if s[0] + i[0] == n and s[1] + i[1] == n:
            return c1.values[s]
        return 0.0

    return OracleResult("plane_wave_far", c1, c2)


def paired_region(grid: TransverseGrid) -> np.ndarray:
    """Signal momenta whose anticorrelated partner ``-q_s`` lies on the lattice.

    The even lattice has no ``+n/2`` sample, so the first row and column
    have no partner and the simulated plane-wave rate vanishes there.
    """
    ok = np.ones((grid.n, grid.n), bool)
    ok[0, :] = False
    ok[:, 0] = False
    return ok


@dataclass
class ErrorReport:
    delta: np.ndarray
    max: float
    scale: float


def relative_error(simulated: ReducedMap, oracle: ReducedMap, scale: str = "lsq",
                   region: np.ndarray | None = None) -> ErrorReport:
    """``|C_oracle - k C_sim| / max(C_oracle)`` pointwise, and its maximum.

    ``k`` is the least-squares scale (``scale="lsq"``) or the ratio of peaks
    (``scale="peak"``). ``region`` restricts both the fit and the maximum.
    """
    if (simulated.domain != oracle.domain or simulated.grid.n != oracle.grid.n
            or not np.isclose(simulated.grid.extent, oracle.grid.extent, rtol=1e-12)):
        raise ContractError("relative_error needs both maps on the same lattice")
    s, o = simulated.values, oracle.values
    sel = np.ones(s.shape, bool) if region is None else np.asarray(region, bool)
    if scale == "lsq":
        den = float((s[sel] * s[sel]).sum())
        k = float((s[sel] * o[sel]).sum()) / den if den > 0 else 0.0
    elif scale == "peak":
        k = float(o[sel].max() / s[sel].max()) if s[sel].max() > 0 else 0.0
    else:
        raise ValueError("scale must be 'lsq' or 'peak'")
    delta = np.abs(o - k * s) / o[sel].max()
    delta = np.where(sel, delta, 0.0)
    return ErrorReport(delta, float(delta.max()), k)
