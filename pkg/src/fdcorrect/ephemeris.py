"""Analytic ephemeris providers for the Moon-centered force model.

Providers answer three questions at nd time ``t``: where the perturbing
bodies are relative to the Moon (MCI), the instantaneous Earth-Moon distance
``l`` (in units of l*) and the direction cosine matrix ``C`` whose columns
are the rotating-frame axes expressed in MCI. Providers are immutable.
"""

from __future__ import annotations

import math
from typing import Protocol, runtime_checkable

import numpy as np

from .constants import SystemConstants
from .frames import rot_z, rot_z_dot

__all__ = [
    "EphemerisProvider",
    "EphemerisError",
    "CircularEphemeris",
    "BicircularEphemeris",
    "ExternalEphemeris",
    "make_provider",
    "PROVIDERS",
]


class EphemerisError(RuntimeError):
    pass


@runtime_checkable
class EphemerisProvider(Protocol):
    mu: float
    name: str

    def body_position(self, body: str, t: float) -> np.ndarray: ...

    def body_gm(self, body: str) -> float: ...

    def earth_moon_distance(self, t: float) -> tuple[float, float]: ...

    def rotating_dcm(self, t: float) -> tuple[np.ndarray, np.ndarray]: ...

    def kernel_params(self, include_earth: bool, include_sun: bool) -> np.ndarray | None: ...


class CircularEphemeris:
    """Earth and Moon on circular orbits about their barycenter, no Sun.

    The MCI axes coincide with the rotating axes at ``t = 0``.
    """

    name = "circular"
    bodies = ("earth",)

    def __init__(self, constants: SystemConstants | None = None):
        self.constants = constants or SystemConstants()
        self.mu = self.constants.mu

    def earth_moon_distance(self, t: float) -> tuple[float, float]:
        return 1.0, 0.0

    def rotating_dcm(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        return rot_z(t), rot_z_dot(t)

    def body_gm(self, body: str) -> float:
        if body == "earth":
            return 1.0 - self.mu
        if body == "sun" and "sun" in self.bodies:
            return self.constants.mu_sun
        raise EphemerisError(f"{self.name} ephemeris has no body {body!r}")

    def body_position(self, body: str, t: float) -> np.ndarray:
        if body == "earth":
            return -np.array([math.cos(t), math.sin(t), 0.0])
        raise EphemerisError(f"{self.name} ephemeris has no body {body!r}")

    def _sun_terms(self):
        return 0.0, 0.0, 0.0, 0.0

    def kernel_params(self, include_earth: bool = True, include_sun: bool = True) -> np.ndarray:
        """Parameter vector for the compiled force model.

        Layout: ``[mu_moon, mu_earth, mu_sun, a_sun, n_sun, phase_sun]``; a
        zero gravitational parameter disables that body.
        """
        mu_s, a_s, n_s, ph = self._sun_terms()
        return np.array([
            self.mu,
            (1.0 - self.mu) if include_earth else 0.0,
            mu_s if include_sun else 0.0,
            a_s, n_s, ph,
        ])


class BicircularEphemeris(CircularEphemeris):
    """Circular Earth-Moon motion plus the Sun on a coplanar circular orbit.

    The Sun circles the Earth-Moon barycenter at its inertial mean motion,
    so it appears in the rotating frame at the synodic rate ``1 - n_S``.
    ``sun_phase`` is the Sun's inertial angle at ``t = 0``.
    """

    name = "bicircular"
    bodies = ("earth", "sun")

    def __init__(self, constants: SystemConstants | None = None, sun_phase: float = 0.0):
        super().__init__(constants)
        self.sun_phase = float(sun_phase)

    def body_position(self, body: str, t: float) -> np.ndarray:
        if body == "sun":
            c = self.constants
            ang = c.sun_rate * t + self.sun_phase
            sun = c.sun_distance * np.array([math.cos(ang), math.sin(ang), 0.0])
            moon = (1.0 - self.mu) * np.array([math.cos(t), math.sin(t), 0.0])
            return sun - moon
        return super().body_position(body, t)

    def _sun_terms(self):
        c = self.constants
        return c.mu_sun, c.sun_distance, c.sun_rate, self.sun_phase


class ExternalEphemeris:
    """Adapter hook for tabulated or kernel-based ephemerides.

    Subclasses implement :meth:`body_position`, :meth:`earth_moon_distance`
    and :meth:`rotating_dcm`; propagation then falls back to a pure Python
    right-hand side. Loading binary planetary kernels is not provided.
    """

    name = "external"
    bodies = ("earth", "sun")

    def __init__(self, constants: SystemConstants | None = None):
        self.constants = constants or SystemConstants()
        self.mu = self.constants.mu

    def body_gm(self, body: str) -> float:
        return {"earth": 1.0 - self.mu, "sun": self.constants.mu_sun}[body]

    def body_position(self, body: str, t: float) -> np.ndarray:
        raise NotImplementedError("external ephemeris adapters must implement body_position")

    def earth_moon_distance(self, t: float) -> tuple[float, float]:
        raise NotImplementedError("external ephemeris adapters must implement earth_moon_distance")

    def rotating_dcm(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError("external ephemeris adapters must implement rotating_dcm")

    def kernel_params(self, include_earth: bool = True, include_sun: bool = True):
        return None


PROVIDERS = {"circular": CircularEphemeris, "bicircular": BicircularEphemeris}


def make_provider(name: str, constants: SystemConstants | None = None, **kwargs):
    try:
        cls = PROVIDERS[name]
    except KeyError:
        raise ValueError(f"unknown ephemeris provider {name!r}; choose from {sorted(PROVIDERS)}") from None
    return cls(constants, **kwargs)
