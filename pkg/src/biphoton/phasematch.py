"""Longitudinal wavevectors and phase mismatch inside a uniaxial crystal.

Paraxial forms used by the simulator::

    extraordinary: kz = alpha*qx + eta*w/c - c/(2*eta*w) * (beta**2 qx**2 + gamma**2 qy**2)
    ordinary:      kz = n_o*w/c - c/(2*n_o*w) * |q|**2

with ``x`` the walk-off axis (the plane holding the optic axis). The
coefficients are obtained from the exact extraordinary dispersion
``k_perp**2 / n_e**2 + k_par**2 / n_o**2 = (w/c)**2`` (``k_par`` along the
optic axis, tilted by the cut angle towards +x) by expanding around q = 0.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace
from importlib import resources

import numpy as np

from .errors import ConfigurationError

C0 = 299_792_458.0

PM_TYPES = ("I", "II")


@dataclass(frozen=True)
class SellmeierEntry:
    """``n^2 = A + B / (l^2 - C) - D l^2`` with ``l`` in micrometres."""

    name: str
    polarization: str
    A: float
    B: float
    C: float
    D: float
    lambda_min: float  # m
    lambda_max: float  # m

    def index(self, wavelength: float) -> float:
        if not self.lambda_min <= wavelength <= self.lambda_max:
            raise ConfigurationError(
                f"{self.name} ({self.polarization}) Sellmeier fit is valid for "
                f"{self.lambda_min * 1e9:.0f}-{self.lambda_max * 1e9:.0f} nm, "
                f"got {wavelength * 1e9:.1f} nm"
            )
        l2 = (wavelength * 1e6) ** 2
        return math.sqrt(self.A + self.B / (l2 - self.C) - self.D * l2)


@dataclass(frozen=True)
class Material:
    name: str
    ordinary: SellmeierEntry
    extraordinary: SellmeierEntry

    def n_o(self, wavelength: float) -> float:
        return self.ordinary.index(wavelength)

    def n_e(self, wavelength: float) -> float:
        return self.extraordinary.index(wavelength)


def load_sellmeier_table(path: str | os.PathLike | None = None) -> dict[str, Material]:
    """Parse a whitespace table (see ``data/bbo.sellmeier``) into materials by name."""
    if path is None:
        text = resources.files("biphoton").joinpath("data/bbo.sellmeier").read_text()
        source = "builtin bbo.sellmeier"
    else:
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigurationError(f"cannot read Sellmeier table {path!s}: {exc}") from exc
        source = str(path)

    entries: dict[tuple[str, str], SellmeierEntry] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 8 or parts[1] not in ("o", "e"):
            raise ConfigurationError(f"{source}:{lineno}: expected 'name o|e A B C D lmin lmax'")
        try:
            A, B, C, D, lo, hi = map(float, parts[2:])
        except ValueError as exc:
            raise ConfigurationError(f"{source}:{lineno}: {exc}") from exc
        entries[parts[0], parts[1]] = SellmeierEntry(parts[0], parts[1], A, B, C, D, lo * 1e-6, hi * 1e-6)

    materials = {}
    for name in {k[0] for k in entries}:
        if (name, "o") not in entries or (name, "e") not in entries:
            raise ConfigurationError(f"{source}: material {name} needs both o and e rows")
        materials[name] = Material(name, entries[name, "o"], entries[name, "e"])
    return materials


@dataclass(frozen=True)
class BeamCoefficients:
    """Paraxial dispersion coefficients of one beam at its own frequency."""

    polarization: str
    wavelength: float
    n_o: float
    eta: float
    alpha: float = 0.0
    beta: float = 1.0
    gamma: float = 1.0

    @property
    def omega(self) -> float:
        return 2 * math.pi * C0 / self.wavelength

    @property
    def k_axis(self) -> float:
        """On-axis longitudinal wavevector."""
        n = self.eta if self.polarization == "e" else self.n_o
        return n * self.omega / C0


def extraordinary_index(theta: float, n_o: float, n_e: float) -> float:
    """eta(theta) = [cos^2/n_o^2 + sin^2/n_e^2]^(-1/2)."""
    return (math.cos(theta) ** 2 / n_o**2 + math.sin(theta) ** 2 / n_e**2) ** -0.5


def exact_kz_extraordinary(qx, qy, omega, n_o, n_e, theta):
    """Exact e-wave kz for transverse (qx, qy), optic axis tilted by ``theta`` towards +x."""
    qx = np.asarray(qx, dtype=float)
    qy = np.asarray(qy, dtype=float)
    A, B = 1 / n_e**2, 1 / n_o**2
    s, c = math.sin(theta), math.cos(theta)
    k0 = omega / C0
    a2 = A * s * s + B * c * c
    a1 = 2 * (B - A) * s * c * qx
    a0 = (A * c * c + B * s * s) * qx**2 + A * qy**2 - k0**2
    return (-a1 + np.sqrt(a1**2 - 4 * a2 * a0)) / (2 * a2)


def exact_kz_ordinary(qx, qy, omega, n_o):
    qx = np.asarray(qx, dtype=float)
    qy = np.asarray(qy, dtype=float)
    return np.sqrt((n_o * omega / C0) ** 2 - qx**2 - qy**2)


def derive_coefficients(
    cut_angle: float,
    wavelength: float,
    material: Material,
    polarization: str,
) -> BeamCoefficients:
    """Paraxial coefficients of one beam from the material dispersion.

    For an extraordinary beam::

        eta   = extraordinary_index(theta)
        alpha = d kz / d qx at q = 0  = (1/n_e^2 - 1/n_o^2) sin cos eta^2
        beta  = eta^2 / (n_o n_e)      (from d^2 kz / d qx^2)
        gamma = eta / n_e               (from d^2 kz / d qy^2)
    """
    n_o = material.n_o(wavelength)
    if polarization == "o":
        return BeamCoefficients("o", wavelength, n_o, eta=n_o)
    if polarization != "e":
        raise ConfigurationError(f"polarization must be 'o' or 'e', got {polarization!r}")
    n_e = material.n_e(wavelength)
    eta = extraordinary_index(cut_angle, n_o, n_e)
    s, c = math.sin(cut_angle), math.cos(cut_angle)
    alpha = (1 / n_e**2 - 1 / n_o**2) * s * c * eta**2
    beta = eta**2 / (n_o * n_e)
    gamma = eta / n_e
    return BeamCoefficients("e", wavelength, n_o, eta, alpha, beta, gamma)


def _split(q, walkoff_axis):
    qx, qy = q
    return (qx, qy) if walkoff_axis == "x" else (qy, qx)


def kz_extraordinary(q, omega: float, coeffs: BeamCoefficients, walkoff_axis: str = "x"):
    """Paraxial extraordinary kz at transverse momentum ``q = (qx, qy)``."""
    return coeffs.eta * omega / C0 + _kz_e_variation(q, omega, coeffs, walkoff_axis)


def kz_ordinary(q, omega: float, n_o: float):
    qx, qy = q
    return n_o * omega / C0 + _kz_o_variation(qx, qy, omega, n_o)


def _kz_e_variation(q, omega, coeffs, walkoff_axis):
    qw, qt = _split(q, walkoff_axis)
    qw = np.asarray(qw, dtype=float)
    qt = np.asarray(qt, dtype=float)
    curv = C0 / (2 * coeffs.eta * omega)
    return coeffs.alpha * qw - curv * (coeffs.beta**2 * qw**2 + coeffs.gamma**2 * qt**2)


def _kz_o_variation(qx, qy, omega, n_o):
    qx = np.asarray(qx, dtype=float)
    qy = np.asarray(qy, dtype=float)
    return -C0 / (2 * n_o * omega) * (qx**2 + qy**2)


@dataclass(frozen=True)
class PhaseMatchModel:
    """Crystal plus the three beams. Signal/idler polarizations follow ``pm_type``.

    Type I is ``e -> o o``. Type II is ``e -> o e`` with ``e_photon`` naming
    which down-converted beam is extraordinary.
    """

    length: float
    theta: float
    pm_type: str
    pump: BeamCoefficients
    signal: BeamCoefficients
    idler: BeamCoefficients
    walkoff_axis: str = "x"
    material: str = ""
    e_photon: str | None = None
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.length >= 0:
            raise ConfigurationError(f"crystal length must be >= 0, got {self.length}")
        if not 0 < self.theta < math.pi / 2:
            raise ConfigurationError(f"cut angle must lie in (0, pi/2), got {self.theta}")
        if self.pm_type not in PM_TYPES:
            raise ConfigurationError(f"pm_type must be one of {PM_TYPES}")
        if self.walkoff_axis not in ("x", "y"):
            raise ConfigurationError("walkoff_axis must be 'x' or 'y'")
        if self.pump.polarization != "e":
            raise ConfigurationError("the pump must be extraordinary")
        pols = (self.signal.polarization, self.idler.polarization)
        if self.pm_type == "I" and pols != ("o", "o"):
            raise ConfigurationError("type I needs ordinary signal and idler")
        if self.pm_type == "II" and sorted(pols) != ["e", "o"]:
            raise ConfigurationError("type II needs exactly one extraordinary down-converted beam")
        inv = 1 / self.pump.wavelength - 1 / self.signal.wavelength - 1 / self.idler.wavelength
        if abs(inv) * self.pump.wavelength > 1e-9:
            raise ConfigurationError("wavelengths violate energy conservation 1/lp = 1/ls + 1/li")
        for role in ("pump", "signal", "idler"):
            c = getattr(self, role)
            if c.polarization == "e" and not (0.9 <= c.beta <= 1.1 and 0.9 <= c.gamma <= 1.1):
                raise ConfigurationError(f"{role} beta/gamma outside [0.9, 1.1]: {c.beta}, {c.gamma}")

    @property
    def delta_k_axis(self) -> float:
        """Mismatch for collinear emission, q_s = q_i = 0."""
        return self.pump.k_axis - self.signal.k_axis - self.idler.k_axis

    def _variation(self, beam: BeamCoefficients, qx, qy):
        if beam.polarization == "e":
            return _kz_e_variation((qx, qy), beam.omega, beam, self.walkoff_axis)
        return _kz_o_variation(qx, qy, beam.omega, beam.n_o)

    def kz(self, role: str, q):
        beam = getattr(self, role)
        return beam.k_axis + self._variation(beam, *q)

    def delta_kz(self, qs, qi):
        """k_zp(q_s + q_i) - k_zs(q_s) - k_zi(q_i); arguments broadcast.

        The large on-axis wavevectors are cancelled analytically before the
        q-dependent parts are added, which keeps full precision in the result.
        """
        qsx, qsy = (np.asarray(a, dtype=float) for a in qs)
        qix, qiy = (np.asarray(a, dtype=float) for a in qi)
        return (
            self.delta_k_axis
            + self._variation(self.pump, qsx + qix, qsy + qiy)
            - self._variation(self.signal, qsx, qsy)
            - self._variation(self.idler, qix, qiy)
        )

    def phase_matching(self, qs, qi):
        """sinc(delta_kz L / 2) with sinc(x) = sin(x)/x."""
        return np.sinc(self.delta_kz(qs, qi) * self.length / (2 * math.pi))

    def with_length(self, length: float) -> "PhaseMatchModel":
        return replace(self, length=length)


def make_model(
    length: float = 2e-3,
    theta: float = math.radians(42.4),
    pm_type: str = "II",
    pump_wavelength: float = 404e-9,
    signal_wavelength: float | None = None,
    material: Material | str = "BBO",
    table: str | os.PathLike | None = None,
    e_photon: str = "signal",
    walkoff_axis: str = "x",
    overrides: dict[str, dict[str, float]] | None = None,
) -> PhaseMatchModel:
    """Assemble a model from material data; ``overrides[role][coef]`` pins any coefficient.

    Defaults describe a 2 mm BBO cut at 42.4 deg, type II, pumped at 404 nm
    with degenerate 808 nm signal and idler.
    """
    if isinstance(material, str):
        materials = load_sellmeier_table(table)
        if material not in materials:
            raise ConfigurationError(f"material {material!r} not in table; have {sorted(materials)}")
        material = materials[material]
    if signal_wavelength is None:
        signal_wavelength = 2 * pump_wavelength
    idler_wavelength = 1 / (1 / pump_wavelength - 1 / signal_wavelength)
    if pm_type == "I":
        pols = {"signal": "o", "idler": "o"}
    elif pm_type == "II":
        if e_photon not in ("signal", "idler"):
            raise ConfigurationError("e_photon must be 'signal' or 'idler'")
        pols = {"signal": "o", "idler": "o", e_photon: "e"}
    else:
        raise ConfigurationError(f"pm_type must be one of {PM_TYPES}")

    wl = {"pump": pump_wavelength, "signal": signal_wavelength, "idler": idler_wavelength}
    pol = {"pump": "e", **pols}
    beams = {}
    for role in ("pump", "signal", "idler"):
        c = derive_coefficients(theta, wl[role], material, pol[role])
        for key, value in (overrides or {}).get(role, {}).items():
            if key not in ("n_o", "eta", "alpha", "beta", "gamma"):
                raise ConfigurationError(f"unknown coefficient override {role}.{key}")
            c = replace(c, **{key: float(value)})
        beams[role] = c
    return PhaseMatchModel(
        length=length,
        theta=theta,
        pm_type=pm_type,
        walkoff_axis=walkoff_axis,
        material=material.name,
        e_photon=e_photon if pm_type == "II" else None,
        **beams,
    )
