"""Experiment configuration: sectioned key-value files with unit-suffixed numbers.

Example::

    [grid]
    n = 128
    extent = 360um

    [mask.N_s]
    kind = double_slit
    separation = 105um
    width = 30um

Every length carries a unit (``nm``, ``um``, ``mm``, ``m``); angles take
``deg`` or ``rad``, transverse momenta ``rad/m``, byte counts ``B``, ``KiB``,
``MiB``, ``GiB`` or ``KB``, ``MB``, ``GB``. Unknown sections and keys are
errors. The crystal's Sellmeier table is included by reference, resolved
next to the config file first and then in the packaged data directory.
"""

from __future__ import annotations

import configparser
import hashlib
import math
import os
import re
from dataclasses import dataclass, field
from importlib import resources

from .apertures import ApertureMask, circular, double_slit, identity
from .engine import MODES, STAGES, ExecutionPlan, MaskSet, SliceRequest
from .errors import ConfigurationError
from .grid import MOMENTUM, POSITION, TransverseGrid, make_grid
from .phasematch import PhaseMatchModel, make_model
from .pump import PumpSpec

LENGTH_UNITS = {"nm": 1e-9, "um": 1e-6, "mm": 1e-3, "m": 1.0}
ANGLE_UNITS = {"deg": math.pi / 180, "rad": 1.0}
MOMENTUM_UNITS = {"rad/m": 1.0, "rad/mm": 1e3, "rad/um": 1e6}
BYTE_UNITS = {"B": 1, "KiB": 2**10, "MiB": 2**20, "GiB": 2**30, "KB": 10**3, "MB": 10**6, "GB": 10**9}

_NUMBER = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*([A-Za-z/]*)\s*$")
MASK_SECTIONS = {"mask.T_s": (MOMENTUM, "signal"), "mask.T_i": (MOMENTUM, "idler"),
                 "mask.N_s": (POSITION, "signal"), "mask.N_i": (POSITION, "idler")}
COEFFICIENTS = ("n_o", "eta", "alpha", "beta", "gamma")

# key -> kind of value; kinds: int, float, bool, str, length, angle, bytes, stages, lengths, ints, slices
SCHEMA: dict[str, dict[str, str]] = {
    "experiment": {"name": "str", "description": "str"},
    "grid": {"n": "int", "extent": "length"},
    "pump": {"kind": "str", "width": "length", "width_y": "length", "wavelength": "length",
             "center_x": "length", "center_y": "length"},
    "crystal": {"length": "length", "theta": "angle", "type": "str", "material": "str",
                "sellmeier": "str", "signal_wavelength": "length", "e_photon": "str",
                "walkoff_axis": "str"},
    "coefficients": {f"{r}.{c}": "float" for r in ("pump", "signal", "idler") for c in COEFFICIENTS},
    "execution": {"mode": "str", "memory_budget": "bytes", "cache_dir": "str", "threads": "int",
                  "slab": "int", "cache_limit": "bytes", "check": "bool"},
    "outputs": {"stages": "stages", "images": "bool", "csv": "bool", "binary": "bool",
                "slices": "slices"},
    "analysis": {"distinguishability": "bool", "visibility": "bool", "fringe_parity": "bool",
                 "oversample": "int", "detector_radius": "length"},
    "sweep": {"positions": "lengths", "idler_radius": "length", "idler_x": "length",
              "oversample": "int"},
    "validate": {"n": "int", "extent": "length", "resolutions": "ints", "thin_near_max": "float",
                 "plane_wave_max": "float", "thin_far_max": "float", "consistency": "bool"},
    "output": {"directory": "str", "seed": "int"},
}
for _s in MASK_SECTIONS:
    SCHEMA[_s] = {"kind": "str", "separation": "length", "width": "length", "radius": "length",
                  "center_x": "coord", "center_y": "coord", "axis": "str"}


def parse_quantity(text: str, units: dict[str, float], what: str, required: bool = True) -> float:
    """``"105um"`` -> 1.05e-4. A bare number is only accepted when ``required`` is false."""
    m = _NUMBER.match(text)
    if not m:
        raise ConfigurationError(f"{what}: cannot parse {text!r} as a number with unit")
    value, unit = float(m.group(1)), m.group(2)
    if not unit:
        if required:
            raise ConfigurationError(f"{what}: {text!r} needs a unit, one of {sorted(units)}")
        return value
    if unit not in units:
        raise ConfigurationError(f"{what}: unknown unit {unit!r}, expected one of {sorted(units)}")
    return value * units[unit]


def _parse_bool(text: str, what: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "yes", "true", "on"):
        return True
    if t in ("0", "no", "false", "off"):
        return False
    raise ConfigurationError(f"{what}: expected yes/no, got {text!r}")


def _parse_int(text: str, what: str) -> int:
    try:
        return int(text.strip())
    except ValueError:
        raise ConfigurationError(f"{what}: expected an integer, got {text!r}") from None


def _split_list(text: str) -> list[str]:
    return [t for t in re.split(r"[,\s]+", text.strip()) if t]


def _parse_value(kind: str, text: str, what: str, plane: str | None = None):
    if kind == "str":
        return text.strip()
    if kind == "int":
        return _parse_int(text, what)
    if kind == "float":
        try:
            return float(text)
        except ValueError:
            raise ConfigurationError(f"{what}: expected a number, got {text!r}") from None
    if kind == "bool":
        return _parse_bool(text, what)
    if kind == "length":
        return parse_quantity(text, LENGTH_UNITS, what)
    if kind == "angle":
        return parse_quantity(text, ANGLE_UNITS, what)
    if kind == "bytes":
        return int(parse_quantity(text, BYTE_UNITS, what))
    if kind == "coord":
        units = MOMENTUM_UNITS if plane == MOMENTUM else LENGTH_UNITS
        return parse_quantity(text, units, what)
    if kind == "lengths":
        return [parse_quantity(t, LENGTH_UNITS, what) for t in _split_list(text)]
    if kind == "ints":
        return [_parse_int(t, what) for t in _split_list(text)]
    if kind == "stages":
        stages = _split_list(text)
        bad = [s for s in stages if s not in STAGES]
        if bad:
            raise ConfigurationError(f"{what}: unknown stage(s) {bad}, expected from {STAGES}")
        return stages
    if kind == "slices":
        return [_parse_slice(t, what) for t in text.split(";") if t.strip()]
    raise AssertionError(kind)


def _parse_slice(text: str, what: str) -> SliceRequest:
    """``"p2 idler 0um 0um"`` or ``"p1 idler 0rad/m 0rad/m"``."""
    parts = text.split()
    if len(parts) != 4:
        raise ConfigurationError(f"{what}: slice {text!r} must read 'stage photon x y'")
    stage, photon = parts[0], parts[1]
    if stage not in STAGES or photon not in ("signal", "idler"):
        raise ConfigurationError(f"{what}: bad slice stage/photon in {text!r}")
    units = MOMENTUM_UNITS if stage in ("p1", "p1_masked", "p3") else LENGTH_UNITS
    return SliceRequest(stage, photon, (parse_quantity(parts[2], units, what),
                                        parse_quantity(parts[3], units, what)))


@dataclass
class ExperimentConfig:
    """A parsed, validated experiment. ``raw`` keeps the typed values per section."""

    grid: TransverseGrid
    pump: PumpSpec
    crystal: PhaseMatchModel
    masks: MaskSet
    plan: ExecutionPlan
    raw: dict = field(default_factory=dict)
    source: str = ""
    digest: str = ""

    def get(self, section: str, key: str, default=None):
        return self.raw.get(section, {}).get(key, default)

    @property
    def name(self) -> str:
        return self.get("experiment", "name", os.path.splitext(os.path.basename(self.source))[0] or "experiment")

    @property
    def output_directory(self) -> str:
        return self.get("output", "directory", "biphoton-out")

    @property
    def stages(self) -> list[str]:
        return self.get("outputs", "stages", list(STAGES))


def packaged_path(name: str) -> str:
    """Path of a file shipped in the package data directory (e.g. ``experiments/validate.cfg``)."""
    return str(resources.files("biphoton") / "data" / name)


def _resolve_include(ref: str, base_dir: str) -> str:
    for cand in (os.path.join(base_dir, ref), packaged_path(ref)):
        if os.path.isfile(cand):
            return cand
    raise ConfigurationError(f"crystal.sellmeier: cannot find included table {ref!r}")


def _typed_sections(parser: configparser.ConfigParser) -> dict:
    out: dict[str, dict] = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigurationError(f"unknown section [{section}]; known: {sorted(SCHEMA)}")
        plane = MASK_SECTIONS.get(section, (None,))[0]
        vals = {}
        for key, text in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigurationError(f"{section}.{key}: unknown key; known: {sorted(SCHEMA[section])}")
            vals[key] = _parse_value(SCHEMA[section][key], text, f"{section}.{key}", plane)
        out[section] = vals
    return out


def _require(raw: dict, section: str, key: str):
    try:
        return raw[section][key]
    except KeyError:
        raise ConfigurationError(f"{section}.{key}: required") from None


def _build_mask(section: str, vals: dict) -> ApertureMask:
    plane, photon = MASK_SECTIONS[section]
    kind = vals.get("kind", "identity")
    center = (vals.get("center_x", 0.0), vals.get("center_y", 0.0))
    if kind == "identity":
        return identity(plane, photon)
    if kind == "double_slit":
        return double_slit(_require({section: vals}, section, "separation"),
                           _require({section: vals}, section, "width"), photon,
                           vals.get("axis", "y"), center, plane)
    if kind == "circular":
        return circular(_require({section: vals}, section, "radius"), center, photon, plane)
    raise ConfigurationError(f"{section}.kind: expected identity, double_slit or circular, got {kind!r}")


def parse_config(text: str, source: str = "<string>", overrides: dict | None = None) -> ExperimentConfig:
    """Parse and validate a config. ``overrides[section][key]`` replaces typed values (CLI flags)."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigurationError(f"{source}: {exc}") from None
    raw = _typed_sections(parser)
    for section, vals in (overrides or {}).items():
        raw.setdefault(section, {}).update({k: v for k, v in vals.items() if v is not None})
    base_dir = os.path.dirname(os.path.abspath(source)) if os.path.exists(source) else os.getcwd()

    g = raw.get("grid", {})
    n = _require(raw, "grid", "n")
    if n < 8 or n % 2:
        raise ConfigurationError(f"grid.n: must be an even integer >= 8, got {n}")
    extent = _require(raw, "grid", "extent")
    if not extent > 0:
        raise ConfigurationError("grid.extent: must be positive")
    grid = make_grid(n, extent)

    p = raw.get("pump", {})
    try:
        pump = PumpSpec(p.get("kind", "tem01"), p.get("width", 140e-6), p.get("width_y"),
                        p.get("wavelength", 404e-9), (p.get("center_x", 0.0), p.get("center_y", 0.0)))
    except ConfigurationError as exc:
        raise ConfigurationError(f"pump: {exc}") from None

    c = raw.get("crystal", {})
    table = _resolve_include(c["sellmeier"], base_dir) if "sellmeier" in c else None
    coeffs: dict[str, dict[str, float]] = {}
    for key, value in raw.get("coefficients", {}).items():
        role, name = key.split(".")
        coeffs.setdefault(role, {})[name] = value
    if "length" in c and c["length"] < 0:
        raise ConfigurationError("crystal.length: must be >= 0")
    try:
        crystal = make_model(
            length=c.get("length", 2e-3), theta=c.get("theta", math.radians(42.4)),
            pm_type=c.get("type", "II"), pump_wavelength=pump.wavelength,
            signal_wavelength=c.get("signal_wavelength"), material=c.get("material", "BBO"),
            table=table, e_photon=c.get("e_photon", "signal"), walkoff_axis=c.get("walkoff_axis", "x"),
            overrides=coeffs or None,
        )
    except ConfigurationError as exc:
        raise ConfigurationError(f"crystal: {exc}") from None

    masks = MaskSet(*(_build_mask(s, raw.get(s, {})) for s in ("mask.T_s", "mask.T_i", "mask.N_s", "mask.N_i")))

    e = raw.get("execution", {})
    mode = e.get("mode", "in_core")
    if mode not in MODES:
        raise ConfigurationError(f"execution.mode: expected one of {MODES}, got {mode!r}")
    plan = ExecutionPlan(mode, e.get("memory_budget"), e.get("cache_dir"), e.get("threads", 1),
                         e.get("cache_limit"), e.get("slab"))

    digest = hashlib.sha256(repr(sorted((s, sorted(v.items(), key=lambda kv: kv[0]))
                                        for s, v in raw.items() if s not in ("execution", "output"))
                                 ).encode()).hexdigest()[:16]
    return ExperimentConfig(grid, pump, crystal, masks, plan, raw, source, digest)


def load_config(path: str, overrides: dict | None = None) -> ExperimentConfig:
    """Read a config file; a bare name such as ``experiment1`` selects a packaged experiment."""
    if not os.path.isfile(path):
        cand = packaged_path(os.path.join("experiments", path if path.endswith(".cfg") else path + ".cfg"))
        if not os.path.isfile(cand):
            raise ConfigurationError(f"config file {path!r} not found")
        path = cand
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), path, overrides)
