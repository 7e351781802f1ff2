"""Refinement of DFT peaks into frequency, amplitude and phase triplets.

Two solvers are provided:

L-NAFF
    For the residual signal ``r``, solve for ``xi = (nu, A, theta)`` such that
    ``|F_r(nu)|`` is stationary in ``nu`` and the windowed DFT of
    ``A cos(nu t + theta)`` matches that of ``r`` at ``nu``. Components are
    peeled one at a time from the residual.
GMS-C
    Collocate the windowed DFT of the sum of all approximants with that of the
    signal at each peak bin (cosine and sine parts) and at one adjacent bin
    (cosine or sine part, whichever gives the better conditioned block). At
    step ``j`` the first ``j`` components are solved jointly.

In both methods the signal mean ``A0`` is removed first.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .frames import wrap_2pi
from .propagation import SampledSignal
from .spectrum import EXCLUDE_BINS, _window, detect_peaks, dft_at_bins, initial_guess

__all__ = [
    "FrequencyComponent",
    "QuasiPeriodicModel",
    "ComponentReport",
    "RefineReport",
    "RefinementResult",
    "RefinementError",
    "lnaff_constraints",
    "lnaff_jacobian",
    "GmscMode",
    "gmsc_constraints",
    "gmsc_jacobian",
    "select_cs_row",
    "refine_sequential",
    "refine_near",
    "LNAFF",
    "GMSC",
]

LNAFF = "lnaff"
GMSC = "gmsc"
_METHODS = (LNAFF, GMSC)


class RefinementError(RuntimeError):
    pass


@dataclass(frozen=True)
class FrequencyComponent:
    """One spectral mode ``A cos(nu t + theta)``."""

    nu: float
    A: float
    theta: float

    def as_array(self) -> np.ndarray:
        return np.array([self.nu, self.A, self.theta])

    @classmethod
    def from_array(cls, x) -> "FrequencyComponent":
        return cls(float(x[0]), float(x[1]), float(x[2]))

    def canonical(self) -> "FrequencyComponent":
        """Nonnegative amplitude and phase in [0, 2pi)."""
        nu, A, th = self.nu, self.A, self.theta
        if A < 0:
            A, th = -A, th + math.pi
        return FrequencyComponent(nu, A, wrap_2pi(th))

    def evaluate(self, t) -> np.ndarray:
        return self.A * np.cos(self.nu * np.asarray(t) + self.theta)

    def shifted(self, delta: float) -> "FrequencyComponent":
        """Same mode with the time origin moved forward by ``delta``."""
        return FrequencyComponent(self.nu, self.A, wrap_2pi(self.theta + self.nu * delta))


@dataclass
class QuasiPeriodicModel:
    """Truncated Fourier representation ``A0 + sum A_j cos(nu_j t + theta_j)``."""

    A0: float
    components: list[FrequencyComponent] = field(default_factory=list)

    @property
    def m(self) -> int:
        return len(self.components)

    def evaluate(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        out = np.full(t.shape, self.A0)
        for c in self.components:
            out = out + c.evaluate(t)
        return out

    def nearest(self, nu: float) -> tuple[int, FrequencyComponent]:
        if not self.components:
            raise RefinementError("model has no components")
        k = int(np.argmin([abs(c.nu - nu) for c in self.components]))
        return k, self.components[k]

    def to_dict(self) -> dict:
        return {"A0": self.A0, "components": [{"nu": c.nu, "A": c.A, "theta": c.theta} for c in self.components]}


@dataclass
class ComponentReport:
    index: int
    iterations: int
    residual_norm: float
    converged: bool
    peak_bin: int
    neighbor_bin: int
    cs_row: str = ""


@dataclass
class RefineReport:
    method: str
    components: list[ComponentReport] = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return bool(self.components) and all(c.converged for c in self.components)

    def to_dict(self) -> dict:
        return {"method": self.method, "converged": self.converged,
                "components": [vars(c).copy() for c in self.components]}


@dataclass
class RefinementResult:
    """Refined model plus what is needed to differentiate it."""

    model: QuasiPeriodicModel
    report: RefineReport
    signal: SampledSignal
    modes: list["GmscMode"]
    raw: list[np.ndarray]

    @property
    def method(self) -> str:
        return self.report.method

    @property
    def converged(self) -> bool:
        return self.report.converged

    @property
    def components(self) -> list[FrequencyComponent]:
        return self.model.components


class _Grid:
    """Sample times and window weights shared by the constraint evaluations."""

    def __init__(self, N: int, dt: float):
        self.N = N
        self.dt = dt
        self.t = dt * np.arange(N)
        self.h2n = _window(N) * (2.0 / N)
        self.df = 2.0 * math.pi / (N * dt)

    def trig(self, f):
        ft = f * self.t
        return np.cos(ft), np.sin(ft)


# --- L-NAFF -------------------------------------------------------------------


def _lnaff_parts(grid: _Grid, r: np.ndarray, xi):
    nu, A, th = xi
    c, s = grid.trig(nu)
    w = r * grid.h2n
    wt = w * grid.t
    wtt = wt * grid.t
    C, S = np.sum(w * c), np.sum(w * s)
    dC, dS = -np.sum(wt * s), np.sum(wt * c)
    d2C, d2S = -np.sum(wtt * c), -np.sum(wtt * s)
    hc, hs = grid.h2n * c, grid.h2n * s
    th_ = grid.t * grid.h2n
    Cc, Cs, Ss = np.sum(hc * c), np.sum(hc * s), np.sum(hs * s)
    Sc = Cs
    dCc = -2.0 * np.sum(th_ * s * c)
    dSs = -dCc
    dCs = np.sum(th_ * (c * c - s * s))
    dSc = dCs
    return dict(C=C, S=S, dC=dC, dS=dS, d2C=d2C, d2S=d2S, Cc=Cc, Cs=Cs, Sc=Sc, Ss=Ss,
                dCc=dCc, dCs=dCs, dSc=dSc, dSs=dSs, c=c, s=s)


def _lnaff_F(p, xi):
    _, A, th = xi
    mag = math.hypot(p["C"], p["S"])
    if mag == 0.0:
        raise RefinementError("|F| vanishes; the L-NAFF stationarity constraint is singular")
    ca, sa = A * math.cos(th), A * math.sin(th)
    return np.array([
        (p["C"] * p["dC"] + p["S"] * p["dS"]) / (2.0 * mag),
        ca * p["Cc"] - sa * p["Cs"] - p["C"],
        ca * p["Sc"] - sa * p["Ss"] - p["S"],
    ])


def _lnaff_J(p, xi):
    _, A, th = xi
    C, S, dC, dS = p["C"], p["S"], p["dC"], p["dS"]
    m = math.hypot(C, S)
    g = C * dC + S * dS
    dg = dC * dC + C * p["d2C"] + dS * dS + S * p["d2S"]
    co, si = math.cos(th), math.sin(th)
    J = np.zeros((3, 3))
    J[0, 0] = dg / (2.0 * m) - g * g / (2.0 * m**3)
    J[1, 0] = A * co * p["dCc"] - A * si * p["dCs"] - dC
    J[1, 1] = co * p["Cc"] - si * p["Cs"]
    J[1, 2] = -A * si * p["Cc"] - A * co * p["Cs"]
    J[2, 0] = A * co * p["dSc"] - A * si * p["dSs"] - dS
    J[2, 1] = co * p["Sc"] - si * p["Ss"]
    J[2, 2] = -A * si * p["Sc"] - A * co * p["Ss"]
    return J


def _lnaff_signal_weights(grid: _Grid, p) -> np.ndarray:
    """Gradient of the three L-NAFF constraints with respect to the samples."""
    C, S, dC, dS = p["C"], p["S"], p["dC"], p["dS"]
    m = math.hypot(C, S)
    g = C * dC + S * dS
    c, s = p["c"], p["s"]
    wC = grid.h2n * c
    wS = grid.h2n * s
    wdC = -grid.t * grid.h2n * s
    wdS = grid.t * grid.h2n * c
    a_C = dC / (2.0 * m) - g * C / (2.0 * m**3)
    a_S = dS / (2.0 * m) - g * S / (2.0 * m**3)
    W = np.empty((3, grid.N))
    W[0] = a_C * wC + (C / (2.0 * m)) * wdC + a_S * wS + (S / (2.0 * m)) * wdS
    W[1] = -wC
    W[2] = -wS
    return W


def _as_xi(xi) -> np.ndarray:
    if isinstance(xi, FrequencyComponent):
        return xi.as_array()
    return np.asarray(xi, dtype=float).reshape(3)


def lnaff_constraints(signal: SampledSignal, xi) -> np.ndarray:
    """The three L-NAFF constraints for one component on ``signal``.

    ``signal`` is taken as the residual to fit; remove the mean and earlier
    components beforehand.
    """
    grid = _Grid(signal.N, signal.dt)
    x = _as_xi(xi)
    return _lnaff_F(_lnaff_parts(grid, signal.values, x), x)


def lnaff_jacobian(signal: SampledSignal, xi) -> np.ndarray:
    """Analytic 3x3 Jacobian of :func:`lnaff_constraints` with respect to xi."""
    grid = _Grid(signal.N, signal.dt)
    x = _as_xi(xi)
    return _lnaff_J(_lnaff_parts(grid, signal.values, x), x)


# --- GMS-C --------------------------------------------------------------------


@dataclass(frozen=True)
class GmscMode:
    """Collocation bins of one mode: the peak bin and its neighbor row."""

    peak_bin: int
    neighbor_bin: int
    cs_row: str = "C"

    def __post_init__(self):
        if self.cs_row not in ("C", "S"):
            raise ValueError("cs_row must be 'C' or 'S'")


def _gmsc_rows(modes):
    rows = []
    for md in modes:
        rows.append((md.peak_bin, "C"))
        rows.append((md.peak_bin, "S"))
        rows.append((md.neighbor_bin, md.cs_row))
    return rows


class _GmscSystem:
    """Stacked collocation constraints for a fixed set of modes and rows."""

    def __init__(self, grid: _Grid, q: np.ndarray, modes):
        self.grid = grid
        self.modes = list(modes)
        self.rows = _gmsc_rows(self.modes)
        self.bins = sorted({k for k, _ in self.rows})
        self.trig_f = {k: grid.trig(k * grid.df) for k in self.bins}
        w = q * grid.h2n
        self.target = np.array([np.sum(w * self.trig_f[k][0 if r == "C" else 1]) for k, r in self.rows])

    def basis(self, nu):
        """Per-row ``(Xc, Xs, dXc, dXs)`` for the DFT of cos/sin(nu t)."""
        g = self.grid
        cn, sn = g.trig(nu)
        out = np.empty((len(self.rows), 4))
        cache = {}
        for i, (k, r) in enumerate(self.rows):
            key = (k, r)
            if key not in cache:
                wf = g.h2n * self.trig_f[k][0 if r == "C" else 1]
                twf = g.t * wf
                cache[key] = (np.sum(cn * wf), np.sum(sn * wf), -np.sum(sn * twf), np.sum(cn * twf))
            out[i] = cache[key]
        return out

    def evaluate(self, X, jacobian=True):
        n = len(self.rows)
        Xm = np.asarray(X, dtype=float).reshape(-1, 3)
        F = -self.target.copy()
        J = np.zeros((n, Xm.shape[0] * 3)) if jacobian else None
        for a, (nu, A, th) in enumerate(Xm):
            B = self.basis(nu)
            co, si = math.cos(th), math.sin(th)
            F += A * co * B[:, 0] - A * si * B[:, 1]
            if jacobian:
                J[:, 3 * a] = A * co * B[:, 2] - A * si * B[:, 3]
                J[:, 3 * a + 1] = co * B[:, 0] - si * B[:, 1]
                J[:, 3 * a + 2] = -A * si * B[:, 0] - A * co * B[:, 1]
        return F, J

    def signal_weights(self) -> np.ndarray:
        """Gradient of the constraints with respect to the (mean-free) samples."""
        W = np.empty((len(self.rows), self.grid.N))
        for i, (k, r) in enumerate(self.rows):
            W[i] = -self.grid.h2n * self.trig_f[k][0 if r == "C" else 1]
        return W


def _mean_free(signal: SampledSignal) -> tuple[float, np.ndarray]:
    A0 = float(np.mean(signal.values))
    return A0, signal.values - A0


def gmsc_constraints(signal: SampledSignal, components, modes, subtract_mean: bool = True) -> np.ndarray:
    """Stacked collocation residuals (3 rows per mode) for joint components."""
    grid = _Grid(signal.N, signal.dt)
    q = _mean_free(signal)[1] if subtract_mean else signal.values
    X = np.concatenate([_as_xi(c) for c in components])
    return _GmscSystem(grid, q, modes).evaluate(X, jacobian=False)[0]


def gmsc_jacobian(signal: SampledSignal, components, modes, subtract_mean: bool = True) -> np.ndarray:
    """Square Jacobian of :func:`gmsc_constraints` including cross-mode blocks."""
    grid = _Grid(signal.N, signal.dt)
    q = _mean_free(signal)[1] if subtract_mean else signal.values
    X = np.concatenate([_as_xi(c) for c in components])
    return _GmscSystem(grid, q, modes).evaluate(X)[1]


def select_cs_row(signal: SampledSignal, xi, peak_bin: int, neighbor_bin: int) -> str:
    """Pick the neighbor-bin row whose 3x3 block has the smaller inverse norm."""
    grid = _Grid(signal.N, signal.dt)
    return _select_cs(grid, _mean_free(signal)[1], _as_xi(xi), peak_bin, neighbor_bin)


def _select_cs(grid, q, x, peak_bin, neighbor_bin):
    best, best_norm = "C", math.inf
    for row in ("C", "S"):
        J = _GmscSystem(grid, q, [GmscMode(peak_bin, neighbor_bin, row)]).evaluate(x)[1]
        try:
            nrm = np.linalg.norm(np.linalg.inv(J), 2)
        except np.linalg.LinAlgError:
            nrm = math.inf
        if nrm < best_norm:
            best, best_norm = row, nrm
    if not math.isfinite(best_norm):
        raise RefinementError("both neighbor rows give a singular collocation block")
    return best


# --- Newton driver ------------------------------------------------------------


def _newton(fun, x0, tol, max_iter):
    """Full Newton steps with halving line search on the residual norm."""
    x = np.array(x0, dtype=float)
    F, J = fun(x)
    nrm = np.max(np.abs(F))
    it = 0
    while nrm > tol and it < max_iter:
        try:
            dx = -np.linalg.solve(J, F)
        except np.linalg.LinAlgError:
            dx = -np.linalg.lstsq(J, F, rcond=None)[0]
        lam = 1.0
        accepted = False
        for _ in range(30):
            xn = x + lam * dx
            try:
                Fn, Jn = fun(xn)
            except RefinementError:
                Fn = None
            if Fn is not None and np.all(np.isfinite(Fn)) and np.max(np.abs(Fn)) < nrm:
                accepted = True
                break
            lam *= 0.5
        it += 1
        if not accepted:
            break
        small = np.all(np.abs(xn - x) <= 4.0 * np.finfo(float).eps * np.maximum(np.abs(x), 1.0))
        x, F, J, nrm = xn, Fn, Jn, np.max(np.abs(Fn))
        if small:
            break
    return x, F, J, it


def _converged(F, tol, scale):
    # accept round-off limited residuals relative to the constraint scale
    return bool(np.max(np.abs(F)) <= max(tol, 1e3 * np.finfo(float).eps * scale))


def refine_sequential(signal: SampledSignal, m: int, method: str = LNAFF, tol: float = 1e-12,
                      max_iter: int = 50, exclude: int = EXCLUDE_BINS,
                      seed: RefinementResult | None = None, strict: bool = False) -> RefinementResult:
    """Refine the ``m`` most prominent components of ``signal``.

    Parameters
    ----------
    method : {'lnaff', 'gmsc'}
    seed : RefinementResult, optional
        Start from the components and collocation bins of an earlier
        refinement instead of detecting peaks. Used to follow the same roots
        on a perturbed signal.
    strict : bool
        Raise :class:`RefinementError` on non-convergence instead of
        returning a flagged partial result.
    """
    if method not in _METHODS:
        raise ValueError(f"method must be one of {_METHODS}")
    if m < 1:
        raise ValueError("m must be at least 1")
    grid = _Grid(signal.N, signal.dt)
    A0, q = _mean_free(signal)
    ref_dft = dft_at_bins(SampledSignal(q, signal.dt))
    scale = max(np.max(np.abs(q)), 1e-300) * max(1.0, signal.span)
    report = RefineReport(method)
    comps: list[np.ndarray] = []
    modes: list[GmscMode] = []
    if seed is not None:
        m = min(m, seed.model.m)
    model_sum = np.zeros(signal.N)

    for j in range(m):
        resid = q - model_sum
        if seed is not None:
            x0 = seed.raw[j].copy()
            md = seed.modes[j]
        else:
            peaks = detect_peaks(dft_at_bins(SampledSignal(resid, signal.dt)), exclude=exclude,
                                 reference=ref_dft)
            used = {md.peak_bin for md in modes}
            peaks = [pk for pk in peaks if all(abs(pk.k - u) > 1 for u in used)]
            if not peaks:
                break
            pk = peaks[0]
            x0 = initial_guess(pk).as_array()
            md = GmscMode(pk.k, pk.neighbor, "C")

        if method == LNAFF:
            def fun(x, resid=resid):
                p = _lnaff_parts(grid, resid, x)
                return _lnaff_F(p, x), _lnaff_J(p, x)
            try:
                x, F, _, it = _newton(fun, x0, tol, max_iter)
            except RefinementError:
                x, F, it = x0, np.full(3, np.inf), 0
            comps.append(x)
            modes.append(md)
        else:
            if seed is None:
                md = GmscMode(md.peak_bin, md.neighbor_bin, _select_cs(grid, resid, x0, md.peak_bin, md.neighbor_bin))
            trial_modes = modes + [md]
            system = _GmscSystem(grid, q, trial_modes)
            X0 = np.concatenate(comps + [x0]) if seed is None else np.concatenate([seed.raw[a] for a in range(j + 1)])

            def fun(X, system=system):
                return system.evaluate(X)

            X, F, _, it = _newton(fun, X0, tol, max_iter)
            comps = [X[3 * a:3 * a + 3].copy() for a in range(j + 1)]
            modes = trial_modes
        ok = _converged(F, tol, scale) and np.all(np.isfinite(F))
        report.components.append(ComponentReport(j, it, float(np.max(np.abs(F))), bool(ok), md.peak_bin,
                                                 md.neighbor_bin, md.cs_row if method == GMSC else ""))
        if method == GMSC:
            # earlier components were re-solved jointly; refresh their flags
            for rep in report.components[:-1]:
                rep.converged = bool(ok)
                rep.residual_norm = float(np.max(np.abs(F)))
        model_sum = np.zeros(signal.N)
        for x in comps:
            model_sum += x[1] * np.cos(x[0] * grid.t + x[2])
        if strict and not ok:
            raise RefinementError(f"{method} refinement did not converge at component {j}")

    comps_out = [FrequencyComponent.from_array(x).canonical() for x in comps]
    return RefinementResult(QuasiPeriodicModel(A0, comps_out), report, signal, modes, [x.copy() for x in comps])


def refine_near(signal: SampledSignal, nu: float, guard_bins: float = 10.0, tol: float = 1e-12,
                max_iter: int = 50, exclude: int = EXCLUDE_BINS) -> FrequencyComponent:
    """Refine the strongest local DFT peak within ``guard_bins`` of ``nu``.

    A single-component L-NAFF solve on the mean-free signal, for weak modes
    that do not rank among the dominant components (e.g. amplitude monitors).
    """
    grid = _Grid(signal.N, signal.dt)
    _, q = _mean_free(signal)
    dft = dft_at_bins(SampledSignal(q, signal.dt))
    peaks = [pk for pk in detect_peaks(dft, exclude=exclude) if abs(pk.frequency - nu) <= guard_bins * dft.df]
    if not peaks:
        raise RefinementError(f"no spectral peak within {guard_bins:g} bins of {nu}")
    x0 = initial_guess(peaks[0]).as_array()

    def fun(x):
        p = _lnaff_parts(grid, q, x)
        return _lnaff_F(p, x), _lnaff_J(p, x)

    x, F, _, _ = _newton(fun, x0, tol, max_iter)
    return FrequencyComponent.from_array(x).canonical()
