"""Characteristic quantities of the Earth-Moon system.

Nondimensional (nd) units use the mean Earth-Moon distance as the length unit
and choose the time unit so that the Earth-Moon mean motion is one.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

__all__ = [
    "CONSTANTS_ENV_VAR",
    "SystemConstants",
    "load_constants",
    "default_constants",
]

#: Environment variable naming a TOML or JSON file that overrides defaults.
CONSTANTS_ENV_VAR = "FDCORRECT_CONSTANTS"

# km^3/s^2, planetary ephemeris values
_GM_EARTH = 398600.435436
_GM_MOON = 4902.800066
_GM_SUN = 132712440041.9394
_LSTAR_KM = 384400.0
_AU_KM = 149597870.7
_YEAR_S = 365.25 * 86400.0
_MASS_RATIO = 0.01215058426994


@dataclass(frozen=True)
class SystemConstants:
    """Dimensional inputs and derived nd parameters.

    Parameters
    ----------
    gm_earth, gm_moon, gm_sun : float
        Gravitational parameters in km^3/s^2.
    lstar_km : float
        Characteristic length l*, the mean Earth-Moon distance.
    sun_distance_km : float
        Radius of the Sun's circular orbit about the Earth-Moon barycenter,
        used by the bicircular ephemeris.
    mass_ratio : float, optional
        Explicit Earth-Moon mass ratio. The default is the customary
        ``0.01215058426994``; pass ``None`` to derive it from the two
        gravitational parameters.
    """

    gm_earth: float = _GM_EARTH
    gm_moon: float = _GM_MOON
    gm_sun: float = _GM_SUN
    lstar_km: float = _LSTAR_KM
    sun_distance_km: float = _AU_KM
    mass_ratio: float | None = _MASS_RATIO
    # derived quantities, filled in __post_init__
    mu: float = field(init=False)
    tstar_s: float = field(init=False)

    def __post_init__(self):
        for f in ("gm_earth", "gm_moon", "gm_sun", "lstar_km", "sun_distance_km"):
            v = getattr(self, f)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"constant {f} must be positive and finite, got {v}")
        gm = self.gm_earth + self.gm_moon
        mu = self.gm_moon / gm if self.mass_ratio is None else float(self.mass_ratio)
        if not 0.0 < mu < 0.5:
            raise ValueError(f"mass ratio must lie in (0, 0.5), got {mu}")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "tstar_s", math.sqrt(self.lstar_km**3 / gm))

    @property
    def mu_moon(self) -> float:
        """nd gravitational parameter of the Moon (equals mu)."""
        return self.mu

    @property
    def mu_earth(self) -> float:
        """nd gravitational parameter of the Earth, 1 - mu."""
        return 1.0 - self.mu

    @property
    def mu_sun(self) -> float:
        """nd gravitational parameter of the Sun."""
        return self.gm_sun / (self.gm_earth + self.gm_moon)

    @property
    def sun_distance(self) -> float:
        """nd radius of the Sun's orbit about the Earth-Moon barycenter."""
        return self.sun_distance_km / self.lstar_km

    @property
    def sun_rate(self) -> float:
        """nd inertial mean motion of the Sun about the Earth-Moon barycenter."""
        return math.sqrt((1.0 + self.mu_sun) / self.sun_distance**3)

    @property
    def n_earth(self) -> float:
        """Dimensional mean angular rate of the Earth about the Moon (rad/s)."""
        return 1.0 / self.tstar_s

    @property
    def vstar_kms(self) -> float:
        return self.lstar_km / self.tstar_s

    def years_to_nd(self, years: float) -> float:
        """Convert Julian years to nd time."""
        return years * _YEAR_S / self.tstar_s

    def km_to_nd(self, km: float) -> float:
        return km / self.lstar_km

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.init}


_INPUT_KEYS = {f.name for f in fields(SystemConstants) if f.init}


def _read_mapping(path: Path) -> dict:
    text = path.read_bytes()
    if path.suffix.lower() == ".json":
        return json.loads(text)
    try:
        import tomllib  # type: ignore[import-not-found]
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    return tomllib.loads(text.decode())


def load_constants(source: str | os.PathLike | dict | None = None) -> SystemConstants:
    """Build constants from defaults, an override file, or a mapping.

    With ``source=None`` the file named by ``FDCORRECT_CONSTANTS`` is used if
    set. Files may be TOML or JSON; a ``[constants]`` table is accepted as well
    as top-level keys.
    """
    if source is None:
        env = os.environ.get(CONSTANTS_ENV_VAR)
        if not env:
            return SystemConstants()
        source = env
    if isinstance(source, dict):
        data = dict(source)
    else:
        data = _read_mapping(Path(source))
    data = data.get("constants", data)
    unknown = set(data) - _INPUT_KEYS
    if unknown:
        raise ValueError(f"unknown constant keys: {sorted(unknown)}")
    return replace(SystemConstants(), **{k: (None if v is None else float(v)) for k, v in data.items()})


def default_constants() -> SystemConstants:
    return load_constants()
