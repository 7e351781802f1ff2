"""Symmetric periodic orbits of the CR3BP, monodromy analysis and seeding.

Orbits symmetric about the xz-plane start at ``[x, 0, z, 0, vy, 0]`` and
cross the plane perpendicularly after half a period. These orbits provide
the initial guesses that the frequency-domain correctors start from.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import DynamicsModel
from .propagation import PropagationOptions, propagate_with_stm

__all__ = [
    "PeriodicOrbit",
    "CenterMode",
    "correct_symmetric_orbit",
    "monodromy",
    "center_modes",
    "seed_from_eigenstructure",
    "quasi_periodic_seed",
]


@dataclass
class PeriodicOrbit:
    state: np.ndarray
    period: float
    model: DynamicsModel
    iterations: int = 0
    residual: float = 0.0

    @property
    def nu(self) -> float:
        """Fundamental angular frequency ``2 pi / period``."""
        return 2.0 * math.pi / self.period


def correct_symmetric_orbit(model: DynamicsModel, guess, period: float | None = None, half_period: float | None = None,
                            fixed: str = "period", tol: float = 1e-12, max_iter: int = 30,
                            options: PropagationOptions | None = None) -> PeriodicOrbit:
    """Newton correction of an xz-symmetric periodic orbit.

    Parameters
    ----------
    guess : array_like
        ``[x, 0, z, 0, vy, 0]`` initial guess.
    period, half_period :
        Period guess (or the fixed period when ``fixed='period'``).
    fixed : {'period', 'x', 'z'}
        Quantity held fixed. With ``'period'`` the free variables are
        ``x, vy`` (and ``z`` for spatial orbits); otherwise the period is
        free and the named coordinate is held.
    """
    options = options or PropagationOptions()
    x0 = np.array(guess, dtype=float)
    if x0.shape != (6,):
        raise ValueError("guess must be a 6-vector")
    x0[[1, 3, 5]] = 0.0
    tau = half_period if half_period is not None else 0.5 * period
    spatial = abs(x0[2]) > 0.0
    # free variables by state index (period handled separately)
    if fixed == "period":
        free = [0, 2, 4] if spatial else [0, 4]
        free_t = False
    elif fixed in ("x", "z"):
        free = ([2, 4] if fixed == "x" else [0, 4]) if spatial else [4]
        free_t = True
    else:
        raise ValueError("fixed must be 'period', 'x' or 'z'")
    cons = [1, 3, 5] if spatial else [1, 3]
    res = math.inf
    for it in range(max_iter + 1):
        var = propagate_with_stm(model, x0, (0.0, tau), options=options)
        xf, phi = var.final_state, var.final_stm
        F = xf[cons]
        res = float(np.max(np.abs(F)))
        if res < tol:
            break
        if it == max_iter:
            raise RuntimeError(f"periodic orbit correction did not converge (residual {res:.3e})")
        J = phi[np.ix_(cons, free)]
        if free_t:
            f = model.rhs(tau, xf)
            J = np.column_stack([J, f[cons]])
        d = -np.linalg.lstsq(J, F, rcond=None)[0]
        x0[free] += d[: len(free)]
        if free_t:
            tau += d[-1]
    return PeriodicOrbit(x0, 2.0 * tau, model, it, res)


def monodromy(orbit: PeriodicOrbit, options: PropagationOptions | None = None) -> np.ndarray:
    return propagate_with_stm(orbit.model, orbit.state, (0.0, orbit.period), options=options).final_stm


@dataclass
class CenterMode:
    """A monodromy eigenvalue on the unit circle with positive imaginary part."""

    eigenvalue: complex
    eigenvector: np.ndarray
    rotation: float
    nu_orbit: float

    @property
    def nu(self) -> float:
        """Second fundamental frequency ``sigma nu_C / (2 pi)``."""
        return self.rotation * self.nu_orbit / (2.0 * math.pi)

    @property
    def planar_fraction(self) -> float:
        v = self.eigenvector
        inplane = np.linalg.norm(v[[0, 1, 3, 4]])
        return float(inplane / np.linalg.norm(v))


def center_modes(orbit: PeriodicOrbit, M: np.ndarray | None = None, unit_tol: float = 1e-6,
                 trivial_tol: float = 1e-4) -> list[CenterMode]:
    """Center eigenpairs of the monodromy matrix, excluding the trivial pair at 1."""
    if M is None:
        M = monodromy(orbit)
    w, V = np.linalg.eig(M)
    out = []
    for k in range(w.size):
        lam = w[k]
        if lam.imag <= 0 or abs(abs(lam) - 1.0) > unit_tol or abs(lam - 1.0) < trivial_tol:
            continue
        sigma = math.atan2(abs(lam.imag), lam.real)
        out.append(CenterMode(complex(lam), V[:, k], sigma, orbit.nu))
    return out


def seed_from_eigenstructure(orbit: PeriodicOrbit, mode: str | int = "planar", amplitude: float = 1e-3,
                             phase: float = 0.0, M: np.ndarray | None = None):
    """Displace the orbit's initial state along a center eigenvector.

    ``mode`` is ``'planar'``, ``'vertical'`` or an index into
    :func:`center_modes`. The displacement is ``amplitude`` times the
    real part of ``exp(i phase) v`` with ``v`` normalized to unit position
    norm. Returns ``(state, CenterMode)``.
    """
    modes = center_modes(orbit, M)
    if not modes:
        raise ValueError("monodromy has no center pair")
    if mode == "planar":
        cm = max(modes, key=lambda c: c.planar_fraction)
    elif mode == "vertical":
        cm = min(modes, key=lambda c: c.planar_fraction)
    else:
        cm = modes[int(mode)]
    v = cm.eigenvector / np.linalg.norm(cm.eigenvector[:3])
    dx = np.real(np.exp(1j * phase) * v)
    return orbit.state + amplitude * dx, cm


def quasi_periodic_seed(orbit: PeriodicOrbit, cm: CenterMode, amplitude: float, times, phase: float = 0.0,
                        options: PropagationOptions | None = None) -> np.ndarray:
    """Linearized quasi-periodic states at ``times`` (within the first few revolutions or many).

    The center mode is carried along the orbit by the STM over the partial
    revolution and rotated by ``lambda`` per full revolution, so the
    displacement stays bounded even when the orbit is unstable.
    """
    times = np.asarray(times, dtype=float)
    P = orbit.period
    v = cm.eigenvector / np.linalg.norm(cm.eigenvector[:3])
    frac = np.mod(times, P)
    revs = np.floor_divide(times, P)
    order = np.argsort(frac)
    var = propagate_with_stm(orbit.model, orbit.state, (0.0, P), frac[order], options=options)
    states = np.empty((times.size, 6))
    stms = np.empty((times.size, 6, 6))
    states[order] = var.states
    stms[order] = var.stms
    rot = np.exp(1j * (phase + cm.rotation * revs))
    dx = np.real(rot[:, None] * np.einsum("nij,j->ni", stms, v))
    return states + amplitude * dx
