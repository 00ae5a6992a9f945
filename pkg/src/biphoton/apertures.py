"""Real amplitude masks: T(q) in the far-field plane, N(rho) in the near-field plane.

Hard-edged shapes are sampled by cell-center inclusion. Slit and rectangle
edges are open (a center exactly on an edge is outside), so a mask that is
mirror-symmetric about the axis samples mirror-symmetrically on the
centered lattice.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ContractError
from .grid import DOMAINS, TransverseGrid

KINDS = ("identity", "double_slit", "circular", "rectangular", "composite")
MIN_FEATURE_SAMPLES = 4
_EDGE_TOL = 1e-9  # fraction of a cell


@dataclass(frozen=True)
class ApertureMask:
    """Transmission mask.

    Geometry is in the plane's native unit: metres for ``position``, rad/m
    for ``momentum``. For ``double_slit``, ``separation`` is center-to-center
    and ``axis`` names the separation axis; slits run along the other axis.
    """

    kind: str = "identity"
    plane: str = "position"
    photon: str = "signal"
    separation: float = 0.0
    width: float = 0.0
    radius: float = 0.0
    size: tuple[float, float] = (0.0, 0.0)
    center: tuple[float, float] = (0.0, 0.0)
    axis: str = "y"
    parts: tuple["ApertureMask", ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"mask kind must be one of {KINDS}, got {self.kind!r}")
        if self.plane not in DOMAINS:
            raise ConfigurationError(f"mask plane must be one of {DOMAINS}")
        if self.photon not in ("signal", "idler"):
            raise ConfigurationError("mask photon must be 'signal' or 'idler'")
        if self.kind == "double_slit":
            if not (self.width > 0 and self.separation > self.width):
                raise ConfigurationError("double slit needs 0 < width < separation")
            if self.axis not in ("x", "y"):
                raise ConfigurationError("double slit axis must be 'x' or 'y'")
        if self.kind == "circular" and not self.radius > 0:
            raise ConfigurationError("circular aperture needs radius > 0")
        if self.kind == "rectangular" and not (self.size[0] > 0 and self.size[1] > 0):
            raise ConfigurationError("rectangular aperture needs positive size")
        if self.kind == "composite":
            for p in self.parts:
                if p.plane != self.plane or p.photon != self.photon:
                    raise ConfigurationError("composite parts must share plane and photon")

    @property
    def is_identity(self) -> bool:
        return self.kind == "identity" or (self.kind == "composite" and all(p.is_identity for p in self.parts))

    def slit_bounds(self) -> list[tuple[float, float]]:
        """Open (lo, hi) intervals of the two slits along the separation axis."""
        c = self.center[1] if self.axis == "y" else self.center[0]
        h = self.width / 2
        return [(c - self.separation / 2 - h, c - self.separation / 2 + h),
                (c + self.separation / 2 - h, c + self.separation / 2 + h)]

    def slit_masks(self, grid: TransverseGrid) -> tuple[np.ndarray, np.ndarray]:
        """(lower, upper) single-slit supports as boolean maps."""
        if self.kind != "double_slit":
            raise ContractError("slit_masks needs a double_slit aperture")
        c = grid.coords(self.plane)
        step = c[1] - c[0]
        X, Y = np.meshgrid(c, c, indexing="ij")
        along = Y if self.axis == "y" else X
        return tuple(_interval(along, lo, hi, step) for lo, hi in self.slit_bounds())


def _interval(v, lo, hi, step):
    tol = _EDGE_TOL * step
    return (v > lo + tol) & (v < hi - tol)


def identity(plane: str = "position", photon: str = "signal") -> ApertureMask:
    return ApertureMask("identity", plane, photon)


def double_slit(separation: float, width: float, photon: str = "signal", axis: str = "y",
                center: tuple[float, float] = (0.0, 0.0), plane: str = "position") -> ApertureMask:
    return ApertureMask("double_slit", plane, photon, separation=separation, width=width,
                        axis=axis, center=center)


def circular(radius: float, center: tuple[float, float] = (0.0, 0.0), photon: str = "idler",
             plane: str = "position") -> ApertureMask:
    return ApertureMask("circular", plane, photon, radius=radius, center=center)


def _smallest_feature(mask: ApertureMask) -> list[tuple[str, float]]:
    if mask.kind == "double_slit":
        return [("slit width", mask.width), ("slit bar", mask.separation - mask.width)]
    if mask.kind == "circular":
        return [("disc diameter", 2 * mask.radius)]
    if mask.kind == "rectangular":
        return [("rectangle side", min(mask.size))]
    return []


def evaluate_mask(mask: ApertureMask, grid: TransverseGrid) -> np.ndarray:
    """Sampled transmission in [0, 1], shape ``(n, n)`` indexed ``[x, y]``."""
    c = grid.coords(mask.plane)
    step = c[1] - c[0]
    for name, size in _smallest_feature(mask):
        if size < MIN_FEATURE_SAMPLES * step * (1 - _EDGE_TOL):
            need = math.ceil(MIN_FEATURE_SAMPLES * grid.n * step / size)
            raise ConfigurationError(
                f"{mask.photon} {mask.kind} {name} of {size:.3g} is under-resolved "
                f"(step {step:.3g}, need >= {MIN_FEATURE_SAMPLES} samples): "
                f"use n >= {need + need % 2} for this window"
            )
    n = grid.n
    if mask.kind == "identity":
        return np.ones((n, n))
    if mask.kind == "composite":
        out = np.ones((n, n))
        for part in mask.parts:
            out *= evaluate_mask(part, grid)
        return out

    X, Y = np.meshgrid(c, c, indexing="ij")
    cx, cy = mask.center
    if mask.kind == "double_slit":
        lower, upper = mask.slit_masks(grid)
        for name, m in (("lower", lower), ("upper", upper)):
            if not m.any():
                raise ConfigurationError(f"{name} slit lies outside the {mask.plane} window")
        return (lower | upper).astype(float)
    if mask.kind == "circular":
        r = mask.radius
        inside = (X - cx) ** 2 + (Y - cy) ** 2 <= r * r * (1 + _EDGE_TOL)
        if not (c[0] <= cx - r and cx + r <= c[-1] and c[0] <= cy - r and cy + r <= c[-1]):
            raise ConfigurationError(
                f"disc at ({cx:.3g}, {cy:.3g}) radius {r:.3g} does not fit the {mask.plane} window"
            )
        return inside.astype(float)
    if mask.kind == "rectangular":
        wx, wy = mask.size
        inside = _interval(X, cx - wx / 2, cx + wx / 2, step) & _interval(Y, cy - wy / 2, cy + wy / 2, step)
        return inside.astype(float)
    raise AssertionError(mask.kind)


def check_plane(mask: ApertureMask, domain: str) -> None:
    if mask.plane != domain:
        raise ContractError(
            f"{mask.photon} mask lives in the {mask.plane} plane but the field is in {domain}"
        )


def apply_masks(field, signal_mask: ApertureMask, idler_mask: ApertureMask):
    """Multiply the field in place by ``T_s(a) T_i(b)`` (or ``N_s N_i``).

    Identity masks are skipped, so they are bit-exact no-ops.
    """
    check_plane(signal_mask, field.signal_domain)
    check_plane(idler_mask, field.idler_domain)
    ms = None if signal_mask.is_identity else evaluate_mask(signal_mask, field.grid)
    mi = None if idler_mask.is_identity else evaluate_mask(idler_mask, field.grid)
    if ms is None and mi is None:
        return field
    side = field.natural_side
    for sl, chunk in field.store.slabs(side):
        multiply_chunk(chunk, side, sl, ms, mi)
    return field


def multiply_chunk(chunk: np.ndarray, side: str, sl: slice, ms, mi) -> None:
    """Apply sampled masks to one slab (see :mod:`biphoton.store` for slab shapes)."""
    if side == "signal":
        if ms is not None:
            chunk *= ms[:, :, None, None]
        if mi is not None:
            chunk *= mi[None, None, :, sl]
    else:
        if ms is not None:
            chunk *= ms[sl, :, None, None]
        if mi is not None:
            chunk *= mi[None, None, :, :]
