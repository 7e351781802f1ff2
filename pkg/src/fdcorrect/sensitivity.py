"""Derivatives of refined frequency components with respect to shooting states.

A converged refinement satisfies ``F(xi, q(X)) = 0``; by the implicit
function theorem ``dxi/dX = -(dF/dxi)^{-1} dF/dX``. The signal enters
``F`` linearly through windowed sums, so ``dF/dX`` is the contraction of
per-sample constraint weights with the per-sample signal partials
``dq(t_i)/dX``. For multiple shooting each sample depends only on the
patchpoint that starts its segment, through the segment-local STM, so the
contraction is assembled block by block with the same ``1/N`` weights as the
constraints themselves.

Beyond the direct dependence, L-NAFF components also depend on ``X`` through
the signal mean and through the earlier components subtracted from the
residual; GMS-C components depend on the mean. Both chains are included, so
the derivatives match re-refinement of a perturbed signal.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .propagation import SampledSignal, SignalPartials
from .refine import (GMSC, LNAFF, RefinementError, RefinementResult, _GmscSystem, _Grid, _lnaff_J,
                     _lnaff_parts, _lnaff_signal_weights, refine_sequential)

__all__ = [
    "FrequencySensitivity",
    "SegmentIndexSet",
    "frequency_sensitivities",
    "lnaff_sensitivity_single",
    "gmsc_sensitivity_single",
    "sensitivity_multi",
    "implicit_function_residual",
    "finite_difference_sensitivity",
    "write_sensitivity_csv",
]


@dataclass
class FrequencySensitivity:
    """Rows ``d nu/dX``, ``dA/dX``, ``d theta/dX`` of component ``index``."""

    matrix: np.ndarray
    index: int
    method: str

    @property
    def dnu(self) -> np.ndarray:
        return self.matrix[0]

    @property
    def dA(self) -> np.ndarray:
        return self.matrix[1]

    @property
    def dtheta(self) -> np.ndarray:
        return self.matrix[2]

    def block(self, b: int) -> np.ndarray:
        return self.matrix[:, 6 * b:6 * b + 6]


@dataclass(frozen=True)
class SegmentIndexSet:
    """Sample index ranges belonging to each segment."""

    bounds: tuple

    @classmethod
    def from_partials(cls, partials: SignalPartials) -> "SegmentIndexSet":
        return cls(tuple((sl.start, sl.stop) for _, sl in partials.segment_slices()))

    def indices(self, b: int) -> np.ndarray:
        a, c = self.bounds[b]
        return np.arange(a, c)

    @property
    def counts(self) -> np.ndarray:
        return np.array([c - a for a, c in self.bounds])


def _partials(result: RefinementResult) -> SignalPartials:
    p = result.signal.partials
    if p is None:
        raise ValueError("signal was sampled without state partials")
    for b, sl in p.segment_slices():
        if sl.stop <= sl.start:
            warnings.warn(f"segment {b} contains no samples; its sensitivity block is zero", stacklevel=3)
    return p


def _mode_gradient(t, x):
    """``d/dxi`` of ``A cos(nu t + theta)`` at the samples, shape (N, 3)."""
    nu, A, th = x
    arg = nu * t + th
    s = np.sin(arg)
    return np.stack([-A * t * s, np.cos(arg), -A * s], axis=1)


def _canonical_rows(S: np.ndarray, x: np.ndarray) -> np.ndarray:
    # reported components have A >= 0; a sign flip of A is absorbed by theta + pi
    if x[1] < 0:
        S = S.copy()
        S[1] *= -1.0
    return S


def _lnaff_all(result: RefinementResult, upto: int, with_parts: bool = False):
    sig = result.signal
    P = _partials(result)
    grid = _Grid(sig.N, sig.dt)
    q = sig.values - result.model.A0
    dmean = P.contract(np.full((1, sig.N), 1.0 / sig.N))
    raw = result.raw
    sens, parts = [], []
    resid = q.copy()
    for j in range(upto + 1):
        x = raw[j]
        p = _lnaff_parts(grid, resid, x)
        J = _lnaff_J(p, x)
        W = _lnaff_signal_weights(grid, p)
        dF = P.contract(W) - np.outer(W.sum(axis=1), dmean[0])
        for a in range(j):
            dF -= (W @ _mode_gradient(grid.t, raw[a])) @ sens[a]
        try:
            S = -np.linalg.solve(J, dF)
        except np.linalg.LinAlgError as exc:
            raise RefinementError(f"singular L-NAFF Jacobian at component {j}") from exc
        sens.append(S)
        parts.append((J, dF))
        resid = resid - x[1] * np.cos(x[0] * grid.t + x[2])
    return (sens, parts) if with_parts else sens


def _gmsc_all(result: RefinementResult, with_parts: bool = False):
    sig = result.signal
    P = _partials(result)
    grid = _Grid(sig.N, sig.dt)
    q = sig.values - result.model.A0
    system = _GmscSystem(grid, q, result.modes)
    X = np.concatenate(result.raw)
    _, J = system.evaluate(X)
    W = system.signal_weights()
    dmean = P.contract(np.full((1, sig.N), 1.0 / sig.N))
    dF = P.contract(W) - np.outer(W.sum(axis=1), dmean[0])
    try:
        S = -np.linalg.solve(J, dF)
    except np.linalg.LinAlgError as exc:
        raise RefinementError("singular GMS-C Jacobian") from exc
    blocks = [S[3 * a:3 * a + 3] for a in range(len(result.raw))]
    return (blocks, (J, dF)) if with_parts else blocks


def frequency_sensitivities(result: RefinementResult) -> list[FrequencySensitivity]:
    """Sensitivities of every refined component (rows over all free states)."""
    if result.model.m == 0:
        return []
    if result.method == LNAFF:
        raw_sens = _lnaff_all(result, result.model.m - 1)
    else:
        raw_sens = _gmsc_all(result)
    return [FrequencySensitivity(_canonical_rows(S, result.raw[j]), j, result.method)
            for j, S in enumerate(raw_sens)]


def _one(result: RefinementResult, j: int, method: str) -> FrequencySensitivity:
    if result.method != method:
        raise ValueError(f"refinement used {result.method}, not {method}")
    if not 0 <= j < result.model.m:
        raise IndexError(f"component {j} not refined")
    if method == LNAFF:
        S = _lnaff_all(result, j)[j]
    else:
        S = _gmsc_all(result)[j]
    return FrequencySensitivity(_canonical_rows(S, result.raw[j]), j, method)


def lnaff_sensitivity_single(result: RefinementResult, j: int) -> FrequencySensitivity:
    """3x6 sensitivity of L-NAFF component ``j`` to the initial state."""
    return _one(result, j, LNAFF)


def gmsc_sensitivity_single(result: RefinementResult, j: int) -> FrequencySensitivity:
    """3x6 sensitivity of GMS-C component ``j`` to the initial state."""
    return _one(result, j, GMSC)


def sensitivity_multi(result: RefinementResult, j: int) -> FrequencySensitivity:
    """3 x 6n_p sensitivity of component ``j`` to all patchpoints."""
    return _one(result, j, result.method)


def implicit_function_residual(result: RefinementResult, j: int) -> float:
    """Max-norm of ``(dF/dxi) S + dF/dX`` for component ``j`` (ideally round-off)."""
    if result.method == LNAFF:
        sens, parts = _lnaff_all(result, j, with_parts=True)
        J, dF = parts[j]
        return float(np.max(np.abs(J @ sens[j] + dF)) / max(1.0, np.max(np.abs(dF))))
    blocks, (J, dF) = _gmsc_all(result, with_parts=True)
    S = np.concatenate(blocks, axis=0)
    return float(np.max(np.abs(J @ S + dF)) / max(1.0, np.max(np.abs(dF))))


def finite_difference_sensitivity(build_signal: Callable[[np.ndarray], SampledSignal], X: np.ndarray,
                                  result: RefinementResult, j: int, step: float = 1e-7,
                                  columns=None) -> np.ndarray:
    """Central-difference oracle by re-propagation and seeded re-refinement.

    ``build_signal(X)`` must return the signal for free states ``X`` (flat).
    Each perturbed signal is refined from ``result``'s components and bins so
    the same roots are tracked.
    """
    X = np.asarray(X, dtype=float).ravel()
    cols = range(X.size) if columns is None else columns
    out = np.zeros((3, X.size))
    m = j + 1

    def comp(Xp):
        r = refine_sequential(build_signal(Xp), m, result.method, seed=result)
        c = r.model.components[j]
        return np.array([c.nu, c.A, c.theta])

    for k in cols:
        e = np.zeros_like(X)
        e[k] = step
        cp, cm = comp(X + e), comp(X - e)
        d = cp - cm
        d[2] = (d[2] + np.pi) % (2.0 * np.pi) - np.pi
        out[:, k] = d / (2.0 * step)
    return out


def write_sensitivity_csv(path, sens: FrequencySensitivity) -> None:
    """Debug dump: one row per quantity, one column per free variable."""
    header = ",".join(["quantity"] + [f"X{k}" for k in range(sens.matrix.shape[1])])
    with open(path, "w") as fh:
        fh.write(f"# method={sens.method} component={sens.index}\n{header}\n")
        for name, row in zip(("nu", "A", "theta"), sens.matrix):
            fh.write(name + "," + ",".join(repr(float(v)) for v in row) + "\n")
