"""Equations of motion for the averaged, restricted three-body and ephemeris models.

The CR3BP and ephemeris-model right-hand sides, together with their
variational equations, are compiled in :mod:`fdcorrect._kernels`; the
functions here are thin numpy front ends used for analysis and testing.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from . import _kernels
from .constants import SystemConstants
from .ephemeris import CircularEphemeris, EphemerisProvider
from .frames import FrameTag, KeplerElements, StateVector6

__all__ = [
    "ModelId",
    "DynamicsModel",
    "cr3bp_model",
    "hfem_model",
    "dam_rates",
    "dam_propagate",
    "frozen_eccentricity",
    "cr3bp_accel",
    "cr3bp_jacobian",
    "hfem_accel",
    "hfem_jacobian",
    "jacobi_constant",
    "lagrange_points",
    "SingularityError",
]


class ModelId(str, enum.Enum):
    DAM = "DAM"
    CR3BP = "CR3BP"
    HFEM = "HFEM"


class SingularityError(ValueError):
    """State coincides with a gravitating body."""


@dataclass(frozen=True)
class DynamicsModel:
    """A force model ready for propagation.

    Parameters
    ----------
    model_id : ModelId
        ``CR3BP`` states live in the BRF, ``HFEM`` states in the MCI.
    constants : SystemConstants
    ephemeris : EphemerisProvider, optional
        Required for ``HFEM``.
    include_earth, include_sun : bool
        Perturber switches of the ephemeris model. With both off the model
        reduces to the lunar two-body problem.
    """

    model_id: ModelId
    constants: SystemConstants
    ephemeris: EphemerisProvider | None = None
    include_earth: bool = True
    include_sun: bool = True

    def __post_init__(self):
        object.__setattr__(self, "model_id", ModelId(self.model_id))
        if self.model_id == ModelId.HFEM and self.ephemeris is None:
            raise ValueError("the ephemeris model needs an ephemeris provider")
        if self.model_id == ModelId.DAM:
            raise ValueError("the averaged model propagates elements; use dam_propagate")

    @property
    def mu(self) -> float:
        return self.constants.mu

    @property
    def frame(self) -> FrameTag:
        return FrameTag.BRF if self.model_id == ModelId.CR3BP else FrameTag.MCI

    def kernel(self):
        """Return ``(model_code, params)`` for the compiled path, or None."""
        if self.model_id == ModelId.CR3BP:
            return _kernels.MODEL_CR3BP, np.array([self.mu])
        p = self.ephemeris.kernel_params(self.include_earth, self.include_sun)
        if p is None:
            return None
        return _kernels.MODEL_HFEM, np.asarray(p, dtype=float)

    def perturbers(self) -> tuple[str, ...]:
        if self.model_id != ModelId.HFEM:
            return ()
        avail = getattr(self.ephemeris, "bodies", ("earth", "sun"))
        out = []
        if self.include_earth and "earth" in avail:
            out.append("earth")
        if self.include_sun and "sun" in avail:
            out.append("sun")
        return tuple(out)

    def accel_and_gradient(self, t: float, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Acceleration and its position gradient (Coriolis excluded)."""
        if self.model_id == ModelId.CR3BP:
            return _cr3bp_parts(x, self.mu)
        return _hfem_parts(x, t, self.ephemeris, self.perturbers())

    def rhs(self, t: float, y: np.ndarray) -> np.ndarray:
        """Python right-hand side for 6- or 42-component states."""
        y = np.asarray(y, dtype=float)
        acc, G = self.accel_and_gradient(t, y[:6])
        if self.model_id == ModelId.CR3BP:
            acc = acc + np.array([2.0 * y[4], -2.0 * y[3], 0.0])
        dy = np.empty_like(y)
        dy[:3] = y[3:6]
        dy[3:6] = acc
        if y.size == 42:
            phi = y[6:].reshape(6, 6)
            dy[6:] = (self.a_matrix(G) @ phi).ravel()
        return dy

    def a_matrix(self, G: np.ndarray) -> np.ndarray:
        A = np.zeros((6, 6))
        A[:3, 3:] = np.eye(3)
        A[3:, :3] = G
        if self.model_id == ModelId.CR3BP:
            A[3, 4] = 2.0
            A[4, 3] = -2.0
        return A

    def jacobian(self, t: float, x: np.ndarray) -> np.ndarray:
        _, G = self.accel_and_gradient(t, np.asarray(x, dtype=float))
        return self.a_matrix(G)


def cr3bp_model(constants: SystemConstants | None = None) -> DynamicsModel:
    return DynamicsModel(ModelId.CR3BP, constants or SystemConstants())


def hfem_model(ephemeris: EphemerisProvider | None = None, include_earth: bool = True,
               include_sun: bool = True, constants: SystemConstants | None = None) -> DynamicsModel:
    if ephemeris is None:
        ephemeris = CircularEphemeris(constants)
    return DynamicsModel(ModelId.HFEM, ephemeris.constants, ephemeris, include_earth, include_sun)


def _point_mass(r, gm):
    rn = np.linalg.norm(r)
    if rn == 0.0:
        raise SingularityError("state coincides with a gravitating body")
    acc = -gm * r / rn**3
    G = gm * (3.0 * np.outer(r, r) / rn**5 - np.eye(3) / rn**3)
    return acc, G


def _cr3bp_parts(x, mu):
    x = np.asarray(x, dtype=float)
    r = x[:3]
    acc = np.array([r[0], r[1], 0.0])
    G = np.diag([1.0, 1.0, 0.0])
    for center, gm in (((-mu, 0.0, 0.0), 1.0 - mu), ((1.0 - mu, 0.0, 0.0), mu)):
        a, g = _point_mass(r - np.asarray(center), gm)
        acc += a
        G += g
    return acc, G


def _hfem_parts(x, t, eph, bodies):
    r = np.asarray(x[:3], dtype=float)
    acc, G = _point_mass(r, eph.mu)
    for body in bodies:
        rb = np.asarray(eph.body_position(body, t), dtype=float)
        gm = eph.body_gm(body)
        acc = acc - gm * rb / np.linalg.norm(rb) ** 3
        a, g = _point_mass(r - rb, gm)
        acc = acc + a
        G = G + g
    return acc, G


def _as_array(s, frame: FrameTag | None = None) -> np.ndarray:
    if isinstance(s, StateVector6):
        if frame is not None and s.frame != frame:
            raise ValueError(f"expected a {frame.value} state, got {s.frame.value}")
        return s.as_array()
    return np.asarray(s, dtype=float).reshape(6)


def cr3bp_accel(s, mu: float) -> np.ndarray:
    """Full rotating-frame acceleration including the Coriolis term."""
    x = _as_array(s, FrameTag.BRF)
    acc, _ = _cr3bp_parts(x, mu)
    return acc + np.array([2.0 * x[4], -2.0 * x[3], 0.0])


def cr3bp_jacobian(s, mu: float) -> np.ndarray:
    """6x6 linearization of the CR3BP equations of motion."""
    x = _as_array(s, FrameTag.BRF)
    _, G = _cr3bp_parts(x, mu)
    A = np.zeros((6, 6))
    A[:3, 3:] = np.eye(3)
    A[3:, :3] = G
    A[3, 4] = 2.0
    A[4, 3] = -2.0
    return A


def hfem_accel(s, t: float, eph: EphemerisProvider, bodies=("earth", "sun")) -> np.ndarray:
    """Moon two-body term plus direct and indirect third-body terms."""
    x = _as_array(s, FrameTag.MCI)
    bodies = tuple(b for b in bodies if b in getattr(eph, "bodies", bodies))
    return _hfem_parts(x, t, eph, bodies)[0]


def hfem_jacobian(s, t: float, eph: EphemerisProvider, bodies=("earth", "sun")) -> np.ndarray:
    x = _as_array(s, FrameTag.MCI)
    bodies = tuple(b for b in bodies if b in getattr(eph, "bodies", bodies))
    G = _hfem_parts(x, t, eph, bodies)[1]
    A = np.zeros((6, 6))
    A[:3, 3:] = np.eye(3)
    A[3:, :3] = G
    return A


def jacobi_constant(s, mu: float) -> float:
    x = _as_array(s)
    r, v = x[:3], x[3:]
    d = math.sqrt((r[0] + mu) ** 2 + r[1] ** 2 + r[2] ** 2)
    rr = math.sqrt((r[0] - 1.0 + mu) ** 2 + r[1] ** 2 + r[2] ** 2)
    return r[0] ** 2 + r[1] ** 2 + 2.0 * (1.0 - mu) / d + 2.0 * mu / rr - v @ v


def lagrange_points(mu: float) -> dict[str, np.ndarray]:
    """Positions of the five libration points in the BRF."""
    def gx(x):
        return x - (1.0 - mu) * (x + mu) / abs(x + mu) ** 3 - mu * (x - 1.0 + mu) / abs(x - 1.0 + mu) ** 3

    eps = 1e-9
    xm = 1.0 - mu
    l1 = brentq(gx, -mu + 0.5, xm - eps, xtol=1e-15, rtol=1e-15)
    l2 = brentq(gx, xm + eps, 2.0, xtol=1e-15, rtol=1e-15)
    l3 = brentq(gx, -2.0, -mu - eps, xtol=1e-15, rtol=1e-15)
    pts = {
        "L1": np.array([l1, 0.0, 0.0]),
        "L2": np.array([l2, 0.0, 0.0]),
        "L3": np.array([l3, 0.0, 0.0]),
        "L4": np.array([0.5 - mu, math.sqrt(3.0) / 2.0, 0.0]),
        "L5": np.array([0.5 - mu, -math.sqrt(3.0) / 2.0, 0.0]),
    }
    return pts


# --- doubly-averaged model ---------------------------------------------------


def _dam_rates(x, mu):
    a, e, i, _, w, _ = x
    n = math.sqrt(mu / a**3)
    k = (1.0 - mu) / n
    b = math.sqrt(1.0 - e * e)
    s2w, c2w = math.sin(2.0 * w), math.cos(2.0 * w)
    c2i = math.cos(2.0 * i)
    de = 15.0 / 8.0 * k * e * b * math.sin(i) ** 2 * s2w
    di = -15.0 / 16.0 * k * e * e / b * math.sin(2.0 * i) * s2w
    dw = 3.0 / 16.0 * k / b * ((3.0 + 2.0 * e * e + 5.0 * c2i) + 5.0 * (1.0 - 2.0 * e * e - c2i) * c2w)
    dO = 3.0 / 8.0 * k / b * (5.0 * e * e * c2w - 3.0 * e * e - 2.0) * math.cos(i)
    return np.array([0.0, de, di, dO, dw, n])


def dam_rates(oe: KeplerElements, c: SystemConstants) -> np.ndarray:
    """Rates of the doubly-averaged elements ``(a, e, i, raan, argp, M)``.

    ``a`` is in nd length; rates are per nd time. The Earth's perturbation
    enters through ``(1 - mu) / n`` with ``n`` the nd mean motion about the
    Moon.

    Raises
    ------
    ValueError
        For ``e = 0`` or ``sin i = 0``, where the averaged problem is
        physically degenerate.
    """
    if oe.e <= 0.0 or math.sin(oe.i) == 0.0:
        raise ValueError("averaged rates are degenerate for e = 0 or sin i = 0")
    return _dam_rates(oe.as_array(), c.mu)


def frozen_eccentricity(i: float) -> float:
    """Eccentricity of the frozen averaged orbit at inclination ``i`` (argp = pi/2)."""
    v = 1.0 - 5.0 / 3.0 * math.cos(i) ** 2
    if v < 0.0:
        raise ValueError("no frozen orbit at this inclination")
    return math.sqrt(v)


def dam_propagate(oe: KeplerElements, c: SystemConstants, times, rtol: float = 1e-12,
                  atol: float = 1e-12) -> np.ndarray:
    """Integrate the averaged elements; returns an array of shape ``(len(times), 6)``.

    Angles are left unwrapped so that secular drifts are visible.
    """
    from scipy.integrate import solve_ivp

    times = np.atleast_1d(np.asarray(times, dtype=float))
    x0 = oe.as_array()

    def f(t, x):
        return _dam_rates(x, c.mu)

    if times.size == 1 and times[0] == 0.0:
        return x0[None, :]
    sol = solve_ivp(f, (0.0, times.max()), x0, method="DOP853", t_eval=times, rtol=rtol, atol=atol)
    if not sol.success:
        raise RuntimeError(sol.message)
    return sol.y.T
