"""Configuration model: physical constants, slit geometry, experiment settings.

Dimensional values are stored as exact ``Decimal`` SI quantities so that a
config survives a dump/load cycle unchanged; they are converted to MPFR only
inside a precision context.

File format (TOML, every dimensional value is a string with a unit suffix)::

    [constants]
    mass = "9.11e-31 kg"
    hbar = "1.05e-34 J*s"
    v_z = "1.46e7 m/s"

    [geometry]
    source_width = "500 nm"
    separation_factor = 1
    plane_distances = ["1 m", "400 um", "1 m"]

    [geometry.plane.1]
    slit_half_width = "196.5 nm"
    slit_centers = ["-6031.9 nm", "-2960.6 nm", "110.7 nm", "3181.9 nm", "6253.2 nm"]

    [experiment]
    sampling_interval = "1 um"
    k_min = 0
    k_max = 500

    [noise]
    snr_db = 10.0
    seed = 1
"""
from __future__ import annotations

import math
import re
import sys
from dataclasses import dataclass, field, replace
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Sequence

import gmpy2
import tomli_w
from gmpy2 import mpfr

from .numerics import PrecisionPolicy, to_real

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

DEFAULT_OVERLAP_THRESHOLD = Decimal("1e-6")
DEFAULT_PATH_CAP = 1_000_000

_UNITS = {
    "length": {
        "m": "1", "cm": "1e-2", "mm": "1e-3", "um": "1e-6", "μm": "1e-6", "µm": "1e-6",
        "nm": "1e-9", "pm": "1e-12",
    },
    "mass": {"kg": "1", "g": "1e-3"},
    "action": {"J*s": "1", "J s": "1", "Js": "1", "J·s": "1"},
    "velocity": {"m/s": "1", "km/s": "1e3"},
    "inverse_area": {"m^-2": "1", "1/m^2": "1", "nm^-2": "1e18", "um^-2": "1e12"},
}
_SI_SUFFIX = {"length": "m", "mass": "kg", "action": "J*s", "velocity": "m/s", "inverse_area": "m^-2"}

_QUANTITY = re.compile(r"^\s*([+-]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?)\s*(.*?)\s*$")


class ConfigError(Exception):
    pass


class ConfigParseError(ConfigError):
    pass


@dataclass(frozen=True)
class Violation:
    constraint: str
    message: str
    plane: int | None = None
    slit: int | None = None

    def __str__(self):
        where = ""
        if self.plane is not None:
            where = f" [plane {self.plane}" + (f", slit {self.slit}" if self.slit is not None else "") + "]"
        return f"{self.constraint}{where}: {self.message}"


class ConfigValidationError(ConfigError):
    def __init__(self, violations: Sequence[Violation]):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


@dataclass(frozen=True)
class PhysicalConstants:
    mass: Decimal
    hbar: Decimal
    v_z: Decimal


@dataclass(frozen=True)
class SetupGeometry:
    """Slit planes 1..N-1 between a Gaussian source (plane 0) and the detector (plane N)."""
    slit_centers: tuple[tuple[Decimal, ...], ...]
    slit_half_widths: tuple[Decimal, ...]
    plane_distances: tuple[Decimal, ...]
    source_width: Decimal
    separation_factor: Decimal = Decimal(1)

    @property
    def n_planes(self) -> int:
        """N, counting the detector plane."""
        return len(self.plane_distances)

    @property
    def slit_plane_count(self) -> int:
        return len(self.slit_centers)

    @property
    def slits_per_plane(self) -> tuple[int, ...]:
        return tuple(len(c) for c in self.slit_centers)

    @property
    def path_count(self) -> int:
        return math.prod(self.slits_per_plane)


@dataclass(frozen=True)
class NoiseModel:
    """Zero-mean Gaussian receiver noise, either from an SNR in dB or explicit sigma values."""
    snr_db: float | None = None
    sigma: tuple[float, ...] | float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.snr_db is None and self.sigma is None:
            raise ValueError("noise model needs snr_db or sigma")
        sig = self.sigma
        if sig is not None:
            vals = sig if isinstance(sig, tuple) else (sig,)
            if any(v < 0 for v in vals):
                raise ValueError("sigma must be non-negative")

    @property
    def sigma_max(self) -> float | None:
        if self.sigma is None:
            return None
        return max(self.sigma) if isinstance(self.sigma, tuple) else self.sigma


@dataclass(frozen=True)
class ExperimentConfig:
    sampling_interval: Decimal
    k_min: int = 0
    k_max: int = 500
    exotic_order: int = 0
    precision: PrecisionPolicy = field(default_factory=PrecisionPolicy)
    noise: NoiseModel | None = None
    rng_seed: int = 0
    d_override: tuple[Decimal, ...] | None = None
    overlap_threshold: Decimal = DEFAULT_OVERLAP_THRESHOLD
    strict_overlap: bool = False
    path_cap: int = DEFAULT_PATH_CAP
    spread_source: str = "classical"

    @property
    def k_range(self) -> range:
        return range(self.k_min, self.k_max + 1)


@dataclass(frozen=True)
class TimeSchedule:
    durations: tuple        # t_{j-1,j}, j = 1..N
    cumulative: tuple       # t_j = sum of durations up to plane j


@dataclass
class ValidationReport:
    errors: list[Violation] = field(default_factory=list)
    warnings: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors


# ---------------------------------------------------------------- units

def parse_quantity(text, kind: str) -> Decimal:
    """Parse "<number> <unit>" into an exact SI Decimal."""
    if not isinstance(text, str):
        raise ConfigParseError(f"expected a quoted {kind} with unit suffix, got {text!r}")
    m = _QUANTITY.match(text)
    if not m:
        raise ConfigParseError(f"cannot parse {kind} quantity {text!r}")
    number, unit = m.group(1), m.group(2)
    table = _UNITS[kind]
    if unit not in table:
        raise ConfigParseError(f"unknown {kind} unit {unit!r} in {text!r} (accepted: {', '.join(table)})")
    try:
        return Decimal(number) * Decimal(table[unit])
    except InvalidOperation as exc:
        raise ConfigParseError(f"bad number in {text!r}") from exc


def format_quantity(value: Decimal, kind: str) -> str:
    return f"{value.normalize():E} {_SI_SUFFIX[kind]}" if value != 0 else f"0 {_SI_SUFFIX[kind]}"


def _plain_number(raw, name, cast):
    if isinstance(raw, bool) or not isinstance(raw, (int, float, str)):
        raise ConfigParseError(f"{name}: expected a number, got {raw!r}")
    try:
        return cast(raw)
    except (ValueError, InvalidOperation) as exc:
        raise ConfigParseError(f"{name}: cannot parse {raw!r}") from exc


def _decimal(raw) -> Decimal:
    return Decimal(str(raw))


# ---------------------------------------------------------------- validation

def validate_setup(consts: PhysicalConstants, geom: SetupGeometry,
                   exp: ExperimentConfig | None = None) -> ValidationReport:
    report = ValidationReport()
    err = report.errors.append
    for name in ("mass", "hbar", "v_z"):
        if getattr(consts, name) <= 0:
            err(Violation("positive-constant", f"{name} must be > 0"))
    if geom.n_planes < 2:
        err(Violation("plane-count", f"need at least 2 planes including the detector, got {geom.n_planes}"))
    if geom.slit_plane_count != geom.n_planes - 1:
        err(Violation("plane-count",
                      f"{geom.n_planes} plane distances imply {geom.n_planes - 1} slit planes, "
                      f"got {geom.slit_plane_count}"))
    if len(geom.slit_half_widths) != geom.slit_plane_count:
        err(Violation("plane-count", "one slit half-width per slit plane required"))
    for j, L in enumerate(geom.plane_distances, start=1):
        if L <= 0:
            err(Violation("positive-distance", f"L_{{{j - 1},{j}}} must be > 0", plane=j))
    if geom.source_width <= 0:
        err(Violation("positive-source-width", "source width must be > 0"))
    alpha = geom.separation_factor
    if alpha < 1:
        err(Violation("separation-factor", f"separation factor must be >= 1, got {alpha}"))
    threshold = exp.overlap_threshold if exp else DEFAULT_OVERLAP_THRESHOLD
    for j, (centers, beta) in enumerate(zip(geom.slit_centers, geom.slit_half_widths), start=1):
        if beta <= 0:
            err(Violation("positive-half-width", "slit half-width must be > 0", plane=j))
            continue
        if not centers:
            err(Violation("slit-count", "plane has no slits", plane=j))
        for i in range(len(centers) - 1):
            gap = centers[i + 1] - centers[i]
            if gap <= 0:
                err(Violation("increasing-centers", "slit centers must be strictly increasing", plane=j, slit=i + 1))
            elif gap <= 2 * alpha * beta:
                err(Violation("separation",
                              f"gap {gap} m does not exceed 2*alpha*beta = {2 * alpha * beta} m", plane=j, slit=i + 1))
        for i in range(len(centers)):
            for l in range(i + 1, len(centers)):
                ratio = float((centers[l] - centers[i]) / beta)
                overlap = math.exp(-0.5 * ratio * ratio)
                if overlap > float(threshold):
                    v = Violation("overlap", f"window overlap {overlap:.3g} between slits {i} and {l} "
                                             f"exceeds {threshold}", plane=j, slit=l)
                    (report.errors if exp is not None and exp.strict_overlap else report.warnings).append(v)
    if exp is not None:
        if exp.sampling_interval <= 0:
            err(Violation("sampling-interval", "sampling interval must be > 0"))
        if exp.exotic_order < 0:
            err(Violation("exotic-order", "exotic order must be >= 0"))
        if exp.k_min > exp.k_max:
            err(Violation("sample-range", f"k_min {exp.k_min} exceeds k_max {exp.k_max}"))
        if exp.path_cap < 1:
            err(Violation("path-cap", "path cap must be >= 1"))
        if exp.spread_source not in ("classical", "exotic"):
            err(Violation("spread-source", f"unknown spread source {exp.spread_source!r}"))
        if exp.d_override is not None and len(exp.d_override) != geom.slit_plane_count:
            err(Violation("d-override", "d override needs one entry per slit plane"))
    return report


# ---------------------------------------------------------------- load / dump

def loads_config(text: str):
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigParseError(f"TOML syntax error: {exc}") from exc
    consts, geom, exp = _from_document(doc)
    report = validate_setup(consts, geom, exp)
    if not report.ok:
        raise ConfigValidationError(report.errors)
    return consts, geom, exp


def load_config(path):
    """Read, convert to SI and validate a config file."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigParseError(f"cannot read {path}: {exc}") from exc
    return loads_config(text)


def parse_config_text(text: str):
    """Parse without validating, for callers that want the full violation report."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigParseError(f"TOML syntax error: {exc}") from exc
    return _from_document(doc)


def _section(doc, name):
    sec = doc.get(name)
    if not isinstance(sec, dict):
        raise ConfigParseError(f"missing [{name}] section")
    return sec


def _require(sec, key, where):
    if key not in sec:
        raise ConfigParseError(f"[{where}] is missing '{key}'")
    return sec[key]


def _from_document(doc: dict):
    c = _section(doc, "constants")
    consts = PhysicalConstants(
        mass=parse_quantity(_require(c, "mass", "constants"), "mass"),
        hbar=parse_quantity(_require(c, "hbar", "constants"), "action"),
        v_z=parse_quantity(_require(c, "v_z", "constants"), "velocity"),
    )
    g = _section(doc, "geometry")
    distances = _require(g, "plane_distances", "geometry")
    if not isinstance(distances, list):
        raise ConfigParseError("[geometry] plane_distances must be a list")
    planes = g.get("plane", {})
    if not isinstance(planes, dict):
        raise ConfigParseError("[geometry.plane.<j>] tables expected")
    try:
        order = sorted(planes, key=int)
    except ValueError as exc:
        raise ConfigParseError("plane tables must be numbered [geometry.plane.1], [geometry.plane.2], ...") from exc
    if [int(k) for k in order] != list(range(1, len(order) + 1)):
        raise ConfigParseError(f"plane tables must be numbered consecutively from 1, got {order}")
    centers, widths = [], []
    for key in order:
        p = planes[key]
        where = f"geometry.plane.{key}"
        widths.append(parse_quantity(_require(p, "slit_half_width", where), "length"))
        raw = _require(p, "slit_centers", where)
        if not isinstance(raw, list):
            raise ConfigParseError(f"[{where}] slit_centers must be a list")
        centers.append(tuple(parse_quantity(v, "length") for v in raw))
    geom = SetupGeometry(
        slit_centers=tuple(centers),
        slit_half_widths=tuple(widths),
        plane_distances=tuple(parse_quantity(v, "length") for v in distances),
        source_width=parse_quantity(_require(g, "source_width", "geometry"), "length"),
        separation_factor=_plain_number(g.get("separation_factor", 1), "separation_factor", _decimal),
    )
    e = doc.get("experiment", {})
    digits = _plain_number(e.get("precision_digits", 64), "precision_digits", int)
    factor = _plain_number(e.get("escalation_factor", 2), "escalation_factor", int)
    try:
        precision = PrecisionPolicy(digits, factor)
    except ValueError as exc:
        raise ConfigParseError(str(exc)) from exc
    d_override = e.get("d_override")
    if d_override is not None:
        d_override = tuple(parse_quantity(v, "inverse_area") for v in d_override)
    noise = None
    if "noise" in doc:
        n = doc["noise"]
        sigma = n.get("sigma")
        if isinstance(sigma, list):
            sigma = tuple(_plain_number(v, "sigma", float) for v in sigma)
        elif sigma is not None:
            sigma = _plain_number(sigma, "sigma", float)
        snr = n.get("snr_db")
        try:
            noise = NoiseModel(
                snr_db=None if snr is None else _plain_number(snr, "snr_db", float),
                sigma=sigma,
                seed=_plain_number(n.get("seed", 0), "seed", int),
            )
        except ValueError as exc:
            raise ConfigParseError(f"[noise]: {exc}") from exc
    exp = ExperimentConfig(
        sampling_interval=parse_quantity(_require(e, "sampling_interval", "experiment"), "length"),
        k_min=_plain_number(e.get("k_min", 0), "k_min", int),
        k_max=_plain_number(e.get("k_max", 500), "k_max", int),
        exotic_order=_plain_number(e.get("exotic_order", 0), "exotic_order", int),
        precision=precision,
        noise=noise,
        rng_seed=_plain_number(e.get("rng_seed", 0), "rng_seed", int),
        d_override=d_override,
        overlap_threshold=_plain_number(e.get("overlap_threshold", "1e-6"), "overlap_threshold", _decimal),
        strict_overlap=bool(e.get("strict_overlap", False)),
        path_cap=_plain_number(e.get("path_cap", DEFAULT_PATH_CAP), "path_cap", int),
        spread_source=str(e.get("spread_source", "classical")),
    )
    return consts, geom, exp


def dumps_config(consts: PhysicalConstants, geom: SetupGeometry, exp: ExperimentConfig) -> str:
    """Serialize with SI unit suffixes; loading the result reproduces identical values."""
    L = lambda v: format_quantity(v, "length")
    doc = {
        "constants": {
            "mass": format_quantity(consts.mass, "mass"),
            "hbar": format_quantity(consts.hbar, "action"),
            "v_z": format_quantity(consts.v_z, "velocity"),
        },
        "geometry": {
            "source_width": L(geom.source_width),
            "separation_factor": str(geom.separation_factor),
            "plane_distances": [L(v) for v in geom.plane_distances],
            "plane": {
                str(j): {"slit_half_width": L(beta), "slit_centers": [L(x) for x in centers]}
                for j, (centers, beta) in enumerate(zip(geom.slit_centers, geom.slit_half_widths), start=1)
            },
        },
        "experiment": {
            "sampling_interval": L(exp.sampling_interval),
            "k_min": exp.k_min,
            "k_max": exp.k_max,
            "exotic_order": exp.exotic_order,
            "precision_digits": exp.precision.decimal_digits,
            "escalation_factor": exp.precision.escalation_factor,
            "rng_seed": exp.rng_seed,
            "overlap_threshold": str(exp.overlap_threshold),
            "strict_overlap": exp.strict_overlap,
            "path_cap": exp.path_cap,
            "spread_source": exp.spread_source,
        },
    }
    if exp.d_override is not None:
        doc["experiment"]["d_override"] = [format_quantity(v, "inverse_area") for v in exp.d_override]
    if exp.noise is not None:
        n = {"seed": exp.noise.seed}
        if exp.noise.snr_db is not None:
            n["snr_db"] = exp.noise.snr_db
        if exp.noise.sigma is not None:
            n["sigma"] = list(exp.noise.sigma) if isinstance(exp.noise.sigma, tuple) else exp.noise.sigma
        doc["noise"] = n
    return tomli_w.dumps(doc)


def with_precision(exp: ExperimentConfig, policy: PrecisionPolicy) -> ExperimentConfig:
    return replace(exp, precision=policy)


# ---------------------------------------------------------------- schedule

def derive_schedule(geom: SetupGeometry, consts: PhysicalConstants) -> TimeSchedule:
    """t_{j-1,j} = L_{j-1,j} / v_z at the active working precision."""
    v = to_real(consts.v_z)
    durations = tuple(to_real(L) / v for L in geom.plane_distances)
    cumulative = []
    total = mpfr(0)
    for t in durations:
        total = total + t
        cumulative.append(total)
    return TimeSchedule(durations, tuple(cumulative))


def geometry_reals(geom: SetupGeometry):
    """Slit centers and half-widths as MPFR values at the active precision."""
    centers = [[to_real(x) for x in plane] for plane in geom.slit_centers]
    betas = [to_real(b) for b in geom.slit_half_widths]
    return centers, betas


def current_digits() -> int:
    return int(gmpy2.get_context().precision / math.log2(10))
