"""Reference frames, state containers and Keplerian element conversions.

Three frames are used:

``BRF``
    Barycentric rotating frame of the circular restricted three-body problem.
    The Earth sits at ``(-mu, 0, 0)`` and the Moon at ``(1 - mu, 0, 0)``.
``EOF``
    Moon-centered frame obtained by rotating the Moon-centered BRF vector with
    ``C_E(t) = R_z(t)``. Its xy-plane is the Earth's orbital plane about the
    Moon, which makes it the natural frame for averaged elements.
``MCI``
    Moon-centered inertial frame of the ephemeris model, tied to the BRF via
    the instantaneous Earth-Moon distance ``l`` and direction cosine matrix
    ``C`` supplied by an ephemeris provider.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "FrameTag",
    "FrameMismatchError",
    "StateVector6",
    "KeplerElements",
    "rot_z",
    "rot_z_dot",
    "brf_to_eof",
    "eof_to_brf",
    "brf_to_mci",
    "mci_to_brf",
    "eof_to_mci",
    "mci_to_eof",
    "kepler_to_cartesian",
    "cartesian_to_kepler",
    "elements_to_rv",
    "rv_to_elements",
    "wrap_2pi",
    "wrap_pi",
    "DEGENERATE_TOL",
]

TWO_PI = 2.0 * math.pi
DEGENERATE_TOL = 1e-11


class FrameTag(str, enum.Enum):
    BRF = "BRF"
    EOF = "EOF"
    MCI = "MCI"


class FrameMismatchError(ValueError):
    """Raised when states tagged with different frames are combined."""


@dataclass(frozen=True)
class StateVector6:
    """Position and velocity in a tagged frame, nd units.

    Arithmetic between states is only allowed within one frame.
    """

    position: np.ndarray
    velocity: np.ndarray
    frame: FrameTag
    epoch: float = 0.0

    def __post_init__(self):
        r = np.array(self.position, dtype=float).reshape(3)
        v = np.array(self.velocity, dtype=float).reshape(3)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(v))):
            raise ValueError("state components must be finite")
        r.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "position", r)
        object.__setattr__(self, "velocity", v)
        object.__setattr__(self, "frame", FrameTag(self.frame))
        object.__setattr__(self, "epoch", float(self.epoch))

    @classmethod
    def from_array(cls, x, frame, epoch=0.0) -> "StateVector6":
        x = np.asarray(x, dtype=float).reshape(6)
        return cls(x[:3], x[3:], frame, epoch)

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.position, self.velocity])

    def _check(self, other):
        if not isinstance(other, StateVector6):
            return NotImplemented
        if other.frame != self.frame:
            raise FrameMismatchError(f"cannot combine {self.frame.value} with {other.frame.value}")
        return other

    def __add__(self, other):
        if self._check(other) is NotImplemented:
            return NotImplemented
        return StateVector6(self.position + other.position, self.velocity + other.velocity,
                            self.frame, self.epoch)

    def __sub__(self, other):
        if self._check(other) is NotImplemented:
            return NotImplemented
        return StateVector6(self.position - other.position, self.velocity - other.velocity,
                            self.frame, self.epoch)

    def __eq__(self, other):
        if not isinstance(other, StateVector6):
            return NotImplemented
        return (self.frame == other.frame and self.epoch == other.epoch
                and np.array_equal(self.as_array(), other.as_array()))

    __hash__ = None  # type: ignore[assignment]


def wrap_2pi(angle):
    """Map angles to [0, 2pi)."""
    a = np.mod(angle, TWO_PI)
    # np.mod can return exactly 2pi for tiny negative inputs
    a = np.where(a >= TWO_PI, 0.0, a)
    return float(a) if np.ndim(a) == 0 else a


def wrap_pi(angle):
    """Map angles to (-pi, pi]."""
    a = -np.mod(-np.asarray(angle, dtype=float) + math.pi, TWO_PI) + math.pi
    return float(a) if np.ndim(a) == 0 else a


def rot_z(t: float) -> np.ndarray:
    c, s = math.cos(t), math.sin(t)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rot_z_dot(t: float, rate: float = 1.0) -> np.ndarray:
    c, s = math.cos(t), math.sin(t)
    return rate * np.array([[-s, -c, 0.0], [c, -s, 0.0], [0.0, 0.0, 0.0]])


def _expect(s: StateVector6, frame: FrameTag):
    if not isinstance(s, StateVector6):
        raise TypeError("expected a StateVector6")
    if s.frame != frame:
        raise FrameMismatchError(f"expected a {frame.value} state, got {s.frame.value}")


def _moon_offset(mu: float) -> np.ndarray:
    return np.array([1.0 - mu, 0.0, 0.0])


def brf_to_eof(s: StateVector6, t: float, mu: float) -> StateVector6:
    """BRF state to the Moon-centered Earth-orbit frame at nd time ``t``."""
    _expect(s, FrameTag.BRF)
    d = s.position - _moon_offset(mu)
    C, Cd = rot_z(t), rot_z_dot(t)
    return StateVector6(C @ d, C @ s.velocity + Cd @ d, FrameTag.EOF, t)


def eof_to_brf(s: StateVector6, t: float, mu: float) -> StateVector6:
    _expect(s, FrameTag.EOF)
    C, Cd = rot_z(t), rot_z_dot(t)
    d = C.T @ s.position
    v = C.T @ s.velocity + Cd.T @ s.position
    return StateVector6(d + _moon_offset(mu), v, FrameTag.BRF, t)


def brf_to_mci(s: StateVector6, t: float, eph) -> StateVector6:
    """BRF state to Moon-centered inertial using the provider's ``l`` and ``C``."""
    _expect(s, FrameTag.BRF)
    l, ld = eph.earth_moon_distance(t)
    C, Cd = eph.rotating_dcm(t)
    d = s.position - _moon_offset(eph.mu)
    r = l * (C @ d)
    v = l * (C @ s.velocity) + (ld * C + l * Cd) @ d
    return StateVector6(r, v, FrameTag.MCI, t)


def mci_to_brf(s: StateVector6, t: float, eph) -> StateVector6:
    _expect(s, FrameTag.MCI)
    l, ld = eph.earth_moon_distance(t)
    C, Cd = eph.rotating_dcm(t)
    d = (C.T @ s.position) / l
    v = (C.T @ s.velocity + Cd.T @ s.position) / l - (ld / l) * d
    return StateVector6(d + _moon_offset(eph.mu), v, FrameTag.BRF, t)


def eof_to_mci(s: StateVector6, t: float, eph) -> StateVector6:
    return brf_to_mci(eof_to_brf(s, t, eph.mu), t, eph)


def mci_to_eof(s: StateVector6, t: float, eph) -> StateVector6:
    return brf_to_eof(mci_to_brf(s, t, eph), t, eph.mu)


@dataclass(frozen=True)
class KeplerElements:
    """Classical elements about the Moon.

    ``a`` is in nd length unless noted otherwise; angles are in radians and
    normalized to [0, 2pi).
    """

    a: float
    e: float
    i: float
    raan: float
    argp: float
    M: float

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError(f"semi-major axis must be positive, got {self.a}")
        if not 0.0 <= self.e < 1.0:
            raise ValueError(f"eccentricity must lie in [0, 1), got {self.e}")
        if not 0.0 <= self.i <= math.pi:
            raise ValueError(f"inclination must lie in [0, pi], got {self.i}")
        for name in ("raan", "argp", "M"):
            object.__setattr__(self, name, wrap_2pi(float(getattr(self, name))))

    def as_array(self) -> np.ndarray:
        return np.array([self.a, self.e, self.i, self.raan, self.argp, self.M])

    @classmethod
    def from_array(cls, x) -> "KeplerElements":
        return cls(*map(float, x))


def solve_kepler(M: float, e: float) -> float:
    """Eccentric anomaly from mean anomaly by Newton iteration."""
    M = wrap_pi(M)
    E = M + e * math.sin(M) if e < 0.8 else math.pi
    for _ in range(50):
        f = E - e * math.sin(E) - M
        dE = -f / (1.0 - e * math.cos(E))
        E += dE
        if abs(dE) < 1e-15:
            break
    return E


def elements_to_rv(oe: KeplerElements, gm: float) -> tuple[np.ndarray, np.ndarray]:
    a, e, i, raan, argp, M = oe.as_array()
    E = solve_kepler(M, e)
    cE, sE = math.cos(E), math.sin(E)
    b = math.sqrt(1.0 - e * e)
    # perifocal coordinates
    rp = a * np.array([cE - e, b * sE, 0.0])
    n = math.sqrt(gm / a**3)
    vp = (a * n / (1.0 - e * cE)) * np.array([-sE, b * cE, 0.0])
    cO, sO = math.cos(raan), math.sin(raan)
    cw, sw = math.cos(argp), math.sin(argp)
    ci, si = math.cos(i), math.sin(i)
    Q = np.array([
        [cO * cw - sO * sw * ci, -cO * sw - sO * cw * ci, sO * si],
        [sO * cw + cO * sw * ci, -sO * sw + cO * cw * ci, -cO * si],
        [sw * si, cw * si, ci],
    ])
    return Q @ rp, Q @ vp


def rv_to_elements(r, v, gm: float) -> KeplerElements:
    """Osculating elements from position and velocity.

    Circular (e < 1e-11) orbits take argp = 0 so that M is the argument of
    latitude; equatorial (sin i < 1e-11) orbits take raan = 0 so that argp is
    measured from the x-axis.
    """
    r = np.asarray(r, dtype=float)
    v = np.asarray(v, dtype=float)
    rn = np.linalg.norm(r)
    h = np.cross(r, v)
    hn = np.linalg.norm(h)
    if rn == 0.0 or hn == 0.0:
        raise ValueError("degenerate state: zero radius or angular momentum")
    energy = 0.5 * (v @ v) - gm / rn
    if energy >= 0.0:
        raise ValueError("open orbit (e >= 1) is not supported")
    a = -gm / (2.0 * energy)
    evec = np.cross(v, h) / gm - r / rn
    e = float(np.linalg.norm(evec))
    if e >= 1.0:
        raise ValueError("open orbit (e >= 1) is not supported")
    i = math.acos(max(-1.0, min(1.0, h[2] / hn)))
    nvec = np.array([-h[1], h[0], 0.0])
    nn = np.linalg.norm(nvec)
    equatorial = nn / hn < DEGENERATE_TOL
    circular = e < DEGENERATE_TOL

    # in-plane basis: p along the node line (or x-axis), q = h_hat x p
    hhat = h / hn
    if equatorial:
        raan = 0.0
        p = np.array([1.0, 0.0, 0.0])
        p = p - (p @ hhat) * hhat
        p /= np.linalg.norm(p)
    else:
        raan = math.atan2(nvec[1], nvec[0])
        p = nvec / nn
    q = np.cross(hhat, p)
    if circular:
        argp = 0.0
        u = math.atan2(r @ q, r @ p)
        nu = u
        e = 0.0
    else:
        argp = math.atan2(evec @ q, evec @ p)
        ehat = evec / e
        nu = math.atan2(r @ np.cross(hhat, ehat), r @ ehat)
    E = 2.0 * math.atan2(math.sqrt(1.0 - e) * math.sin(nu / 2), math.sqrt(1.0 + e) * math.cos(nu / 2))
    M = E - e * math.sin(E)
    return KeplerElements(a, e, i, raan, argp, M)


def kepler_to_cartesian(oe: KeplerElements, gm: float, frame=FrameTag.EOF, epoch=0.0) -> StateVector6:
    """Moon-centered state from elements (``gm`` is the Moon's nd parameter)."""
    frame = FrameTag(frame)
    if frame == FrameTag.BRF:
        raise FrameMismatchError("elements are Moon-centered; use EOF or MCI")
    r, v = elements_to_rv(oe, gm)
    return StateVector6(r, v, frame, epoch)


def cartesian_to_kepler(s: StateVector6, gm: float) -> KeplerElements:
    if s.frame == FrameTag.BRF:
        raise FrameMismatchError("elements are Moon-centered; convert to EOF or MCI first")
    return rv_to_elements(s.position, s.velocity, gm)
