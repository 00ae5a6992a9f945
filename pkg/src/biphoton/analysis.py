"""Detector response, which-slit distinguishability, fringe visibility and the D/V sweep."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.optimize import least_squares
from scipy.signal import find_peaks

from .apertures import ApertureMask, circular
from .errors import BiphotonError, ConfigurationError, FitError, NumericalError
from .field import ReducedMap
from .grid import MOMENTUM, POSITION

FIT_MAX_NFEV = 2000


def disc_kernel(radius: float, step: float) -> np.ndarray:
    """Normalized disc of cell centers within ``radius``; odd-sized, centered."""
    m = int(math.floor(radius / step + 1e-9))
    j = np.arange(-m, m + 1) * step
    k = (j[:, None] ** 2 + j[None, :] ** 2 <= radius**2 * (1 + 1e-9)).astype(float)
    return k / k.sum()


def detector_convolve(rmap: ReducedMap, radius: float) -> ReducedMap:
    """Average the rate over a detector disc of ``radius`` centered on each sample.

    The window is treated as periodic, so the total is preserved exactly.
    """
    step = rmap.coords[1] - rmap.coords[0]
    if radius < step:
        raise ConfigurationError(
            f"detector radius {radius:.3g} is under one cell ({step:.3g}); skip the convolution instead"
        )
    kern = disc_kernel(radius, step)
    out = ndimage.convolve(rmap.values, kern, mode="wrap")
    np.maximum(out, 0.0, out=out)
    return ReducedMap(out, rmap.grid, rmap.domain, rmap.photon, "raw", rmap.label + "+detector")


@dataclass
class SampledMap:
    """Map on an arbitrary rectilinear lattice (e.g. a coarser scan pitch)."""

    values: np.ndarray
    x: np.ndarray
    y: np.ndarray


def block_average(rmap: ReducedMap, factor: int) -> SampledMap:
    """Average ``factor x factor`` blocks; trailing samples that do not fill a block are dropped."""
    if factor < 1:
        raise ConfigurationError("downsampling factor must be >= 1")
    c = rmap.coords
    m = len(c) // factor
    v = rmap.values[: m * factor, : m * factor].reshape(m, factor, m, factor).mean(axis=(1, 3))
    cc = c[: m * factor].reshape(m, factor).mean(axis=1)
    return SampledMap(v, cc, cc.copy())


def downsample_to_pitch(rmap: ReducedMap, pitch: float) -> SampledMap:
    step = rmap.coords[1] - rmap.coords[0]
    return block_average(rmap, max(1, int(round(pitch / step))))


def slit_rates(near_map: ReducedMap, slit: ApertureMask) -> tuple[float, float]:
    """(lower, upper) integrated rate over each slit's open area."""
    if near_map.domain != POSITION:
        raise ConfigurationError("distinguishability needs a near-field (position) map")
    lower, upper = slit.slit_masks(near_map.grid)
    w = near_map.grid.cell_measure(POSITION)
    return float(near_map.values[lower].sum() * w), float(near_map.values[upper].sum() * w)


def distinguishability(near_map: ReducedMap, slit: ApertureMask) -> float:
    """``|C_upper - C_lower| / (C_upper + C_lower)``."""
    lo, up = slit_rates(near_map, slit)
    if not lo + up > 0:
        raise NumericalError("no rate behind either slit: distinguishability undefined")
    return abs(up - lo) / (up + lo)


@dataclass
class FringeFit:
    """``A + B sinc^2(xi)/2 [1 + V cos(2 a xi / b + phi)]`` with ``xi = s (q - center)``."""

    A: float
    B: float
    V: float
    phi: float
    s: float
    a: float
    b: float
    center: float
    goodness: float
    nfev: int = 0

    def model(self, q):
        return fringe_model(np.asarray(q, float), self.A, self.B, self.V, self.phi, self.s,
                            self.a, self.b, self.center)


def fringe_model(q, A, B, V, phi, s, a, b, center=0.0):
    xi = s * (q - center)
    return A + B * np.sinc(xi / math.pi) ** 2 / 2 * (1 + V * np.cos(2 * a * xi / b + phi))


def fit_visibility(q: np.ndarray, profile: np.ndarray, a: float, b: float,
                   center: float | None = None, max_nfev: int = FIT_MAX_NFEV) -> FringeFit:
    """Damped least-squares fit of the double-slit fringe model to a 1D profile.

    ``a`` (separation) and ``b`` (width) are fixed. ``V = sin^2(t)`` keeps
    the visibility in [0, 1]. Starts: phi in {0, pi/2, pi, 3pi/2} times
    s in {0.8, 1, 1.2} of ``b/2`` (the slit-diffraction scale in momentum).
    ``center`` defaults to the profile maximum.
    """
    q = np.asarray(q, dtype=float)
    y = np.asarray(profile, dtype=float)
    if q.shape != y.shape or q.ndim != 1:
        raise ConfigurationError("profile and coordinates must be matching 1D arrays")
    if not (np.isfinite(y).all() and y.max() > 0):
        raise NumericalError("fringe profile must be finite with a positive maximum")
    period = 2 * math.pi / a
    if q.max() - q.min() < 3 * period:
        raise ConfigurationError(
            f"profile spans {q.max() - q.min():.3g} rad/m, less than 3 fringe periods ({3 * period:.3g})"
        )
    if center is None:
        center = float(q[np.argmax(y)])
    scale = y.max()
    yn = y / scale
    s_geom = b / 2

    def resid(p):
        A, B, t, phi, s = p
        return fringe_model(q, A, B, math.sin(t) ** 2, phi, s * s_geom, a, b, center) - yn

    best = None
    converged = False
    for phi0 in (0.0, math.pi / 2, math.pi, 3 * math.pi / 2):
        for s0 in (0.8, 1.0, 1.2):
            p0 = [yn.min(), yn.max() - yn.min(), math.asin(math.sqrt(0.8)), phi0, s0]
            try:
                r = least_squares(resid, p0, method="lm", max_nfev=max_nfev, x_scale=[1, 1, 1, 1, 0.1])
            except (ValueError, FloatingPointError):
                continue
            ok = r.status > 0 and np.isfinite(r.cost)
            if best is None or (ok and (not converged or r.cost < best.cost)):
                best = r
                converged = converged or ok
    if best is None:
        raise FitError("fringe fit failed at every start", None, math.inf)
    A, B, t, phi, s = best.x
    fit = FringeFit(A * scale, B * scale, math.sin(t) ** 2, float(math.remainder(phi, 2 * math.pi)),
                    s * s_geom, a, b, center, float(np.linalg.norm(best.fun) * scale), int(best.nfev))
    if not converged:
        raise FitError(f"fringe fit did not converge in {max_nfev} evaluations", fit, fit.goodness)
    return fit


@dataclass
class ArcProfile:
    q: np.ndarray
    values: np.ndarray
    center: float
    arc: str


def arc_profile(far_map: ReducedMap, b: float, arc: str = "lower", qx: float = 0.0) -> ArcProfile:
    """Cut along ``q_x = qx`` through one arc of the ring.

    The arc peak is the maximum of the envelope (the profile smoothed over
    one slit-diffraction lobe) on the chosen half of the line; the returned
    window spans +-2 pi / b around it.
    """
    if far_map.domain != MOMENTUM:
        raise ConfigurationError("fringe profiles need a far-field (momentum) map")
    if arc not in ("lower", "upper"):
        raise ConfigurationError("arc must be 'lower' or 'upper'")
    g = far_map.grid
    q = g.q
    col = far_map.values[g.index_of(qx, MOMENTUM)]
    half = q < 0 if arc == "lower" else q > 0
    lobe = 2 * math.pi / b
    w = max(1, int(round(lobe / g.dq)))
    env = ndimage.uniform_filter1d(col, 2 * (w // 2) + 1, mode="constant")
    env = np.where(half, env, -np.inf)
    j = int(np.argmax(env))
    keep = np.abs(q - q[j]) <= lobe * (1 + 1e-9)
    return ArcProfile(q[keep], col[keep], float(q[j]), arc)


def count_fringes(profile: np.ndarray, prominence: float = 0.02) -> int:
    """Number of local maxima with at least ``prominence`` of the profile maximum."""
    y = np.asarray(profile, float)
    peaks, _ = find_peaks(y, prominence=prominence * y.max())
    return len(peaks)


def fringe_parity(far_map: ReducedMap, b: float) -> dict:
    out = {}
    for arc in ("upper", "lower"):
        prof = arc_profile(far_map, b, arc)
        out[arc] = count_fringes(prof.values)
    return out


@dataclass
class DVRecord:
    position: float
    D: float
    V: float
    fit: FringeFit | None = None
    error: str | None = None

    @property
    def D2V2(self) -> float:
        return self.D**2 + self.V**2

    def as_dict(self) -> dict:
        return {"rho_iy_m": self.position, "D": self.D, "V": self.V, "D2_plus_V2": self.D2V2,
                "error": self.error}


def fine_axis(prof: ArcProfile, dq: float, oversample: int) -> np.ndarray:
    """The arc window of ``prof`` resampled ``oversample`` times finer, anchored at its center."""
    step = dq / oversample
    lo = math.floor((prof.q[0] - prof.center) / step + 1e-9)
    hi = math.floor((prof.q[-1] - prof.center) / step + 1e-9)
    return prof.center + step * np.arange(lo, hi + 1)


def arc_visibility(far_map: ReducedMap, slit: ApertureMask, cut=None, oversample: int = 8,
                   arc: str = "lower", qx: float = 0.0) -> tuple[FringeFit, ArcProfile]:
    """Fit V on one arc of a far-field signal map.

    ``cut(q)`` evaluates the exact far-field rate at arbitrary ``q_y`` on the
    line ``q_x = qx``; without it the lattice samples are fitted directly.
    """
    prof = arc_profile(far_map, slit.width, arc, qx)
    if cut is not None and oversample > 1:
        q = fine_axis(prof, far_map.grid.dq, oversample)
        values = np.asarray(cut(q), dtype=float)
        prof = ArcProfile(q, values, prof.center, arc)
    fit = fit_visibility(prof.q, prof.values, slit.separation, slit.width, center=prof.center)
    return fit, prof


def dv_point(cache, slit: ApertureMask, radius: float, position: float, idler_x: float = 0.0,
             oversample: int = 8) -> DVRecord:
    """D and V for one idler-detector position, from a :class:`~biphoton.engine.NearFieldCache`.

    The arc is located on the lattice far-field map; the fitted profile is
    then the exact far-field cut over the same window, sampled ``oversample``
    times finer than the lattice.
    """
    disc = circular(radius, center=(idler_x, position), photon="idler")
    cond = cache.conditioned_maps(slit, disc)
    D = distinguishability(cond.near, slit)
    fit, _ = arc_visibility(cond.far, slit, lambda q: cache.conditioned_maps(slit, disc, far=False, cut_q=q).cut,
                            oversample)
    return DVRecord(position, D, fit.V, fit)


def dv_sweep(cache, slit: ApertureMask, radius: float, positions, idler_x: float = 0.0) -> list[DVRecord]:
    """One record per idler position; failures are recorded and the sweep continues."""
    records = []
    for y in positions:
        try:
            records.append(dv_point(cache, slit, radius, float(y), idler_x))
        except BiphotonError as exc:
            records.append(DVRecord(float(y), math.nan, math.nan, None, f"{type(exc).__name__}: {exc}"))
    return records


def sweep_maximum(records: list[DVRecord]) -> DVRecord | None:
    good = [r for r in records if r.error is None]
    return max(good, key=lambda r: r.D2V2) if good else None
