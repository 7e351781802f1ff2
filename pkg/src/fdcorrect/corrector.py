"""Frequency-domain differential correctors.

Constraints are expressed on refined spectral triplets of sampled signals.
Every Newton iteration re-propagates the free states, re-samples and fully
re-refines the signals, matches the targeted modes (nearest prior frequency
within a guard band, falling back to amplitude rank), and takes the
minimum-norm step ``dX = -J^T (J J^T)^{-1} F``.

With one patchpoint this is single shooting; with several, continuity
constraints ``x_end(s) - x_{s+1} = 0`` with the block-bidiagonal Jacobian
``[Phi_s, -I]`` are stacked above the frequency rows.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .dynamics import DynamicsModel
from .frames import wrap_2pi, wrap_pi
from .propagation import (PatchpointSchedule, PropagationOptions, SampledSignal, SignalExtractor,
                          SignalPartials, propagate_segments)
from .refine import (GMSC, LNAFF, FrequencyComponent, RefinementError, RefinementResult, refine_near,
                     refine_sequential)
from .sensitivity import frequency_sensitivities

__all__ = [
    "ConfigurationError",
    "PeakIdentityError",
    "SignalRecipe",
    "ModeSelector",
    "FrequencyTarget",
    "SolverOptions",
    "ShootingProblem",
    "SolveResult",
    "ConstellationProblem",
    "ConstellationResult",
    "DriftReport",
    "relative_phase_drift",
    "evaluate_problem",
    "solve_single",
    "solve_multi",
    "solve",
    "solve_constellation",
    "verify_solution",
    "minimum_norm_step",
]


class ConfigurationError(ValueError):
    """Problem set up inconsistently (e.g. over-constrained target rows)."""


class PeakIdentityError(RuntimeError):
    """A targeted mode could not be matched to a refined component."""


@dataclass(frozen=True)
class SignalRecipe:
    """How to build and refine one signal from the free states."""

    extractor: SignalExtractor = field(default_factory=SignalExtractor)
    N: int = 4096
    span: float = 100.0
    method: str = GMSC
    m: int = 2
    refine_tol: float = 1e-12

    def __post_init__(self):
        if self.N % 2 or self.N < 16:
            raise ConfigurationError("N must be even and at least 16")
        if not self.span > 0:
            raise ConfigurationError("span must be positive")
        if self.method not in (LNAFF, GMSC):
            raise ConfigurationError(f"unknown refinement method {self.method!r}")
        if self.m < 1:
            raise ConfigurationError("m must be at least 1")

    @property
    def dt(self) -> float:
        return self.span / self.N


@dataclass(frozen=True)
class ModeSelector:
    """Identify a mode by amplitude rank ``index`` and/or prior frequency ``nu``."""

    index: int | None = None
    nu: float | None = None

    def __post_init__(self):
        if self.index is None and self.nu is None:
            raise ConfigurationError("a mode selector needs an index or a prior frequency")


@dataclass(frozen=True)
class FrequencyTarget:
    """Targets on one mode: ``(nu, theta)`` or ``(A, theta)``, or subsets.

    ``A_max`` is a monitor-only bound checked after the solve.
    """

    selector: ModeSelector
    signal: str = "q"
    nu: float | None = None
    A: float | None = None
    theta: float | None = None
    A_max: float | None = None
    label: str = ""

    def __post_init__(self):
        if self.nu is not None and self.A is not None:
            raise ConfigurationError("constraining both nu and A of one mode over-constrains the problem")
        if self.A is not None and self.A <= 0:
            raise ConfigurationError("amplitude targets must be positive")

    @property
    def monitor_only(self) -> bool:
        return self.nu is None and self.A is None and self.theta is None

    @property
    def n_rows(self) -> int:
        return int(self.nu is not None) + int(self.A is not None) + int(self.theta is not None)


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-10
    continuity_tol: float = 1e-10
    max_iter: int = 25
    max_step: float | None = None
    homotopy_step: float = math.pi / 4
    amplitude_ratio_step: float | None = None
    guard_bins: float = 10.0
    propagation: PropagationOptions = field(default_factory=PropagationOptions)


@dataclass
class ShootingProblem:
    """Free patchpoint states at fixed epochs plus frequency targets.

    The first sample of every signal is at the first epoch; signals must fit
    inside the schedule.
    """

    model: DynamicsModel
    schedule: PatchpointSchedule
    states: np.ndarray
    signals: dict
    targets: list
    options: SolverOptions = field(default_factory=SolverOptions)
    allow_frequency_rows: bool = False

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        if self.states.shape != (self.schedule.n_p, 6):
            raise ConfigurationError(f"need {self.schedule.n_p} patchpoint states of length 6")
        for tg in self.targets:
            if tg.signal not in self.signals:
                raise ConfigurationError(f"target refers to unknown signal {tg.signal!r}")
        dur = self.schedule.epochs[-1] - self.schedule.epochs[0]
        for name, rc in self.signals.items():
            if rc.span > dur * (1 + 1e-12):
                raise ConfigurationError(f"signal {name!r} span exceeds the schedule")
        if self.schedule.n_p > 1 and not self.allow_frequency_rows:
            if any(tg.nu is not None for tg in self.targets):
                raise ConfigurationError(
                    "frequency rows are excluded in multiple shooting with fixed epochs; "
                    "set allow_frequency_rows to override")
        n_rows = sum(tg.n_rows for tg in self.targets) + 6 * (self.schedule.n_p - 1)
        if n_rows > 6 * self.schedule.n_p:
            raise ConfigurationError("more constraint rows than free variables")

    @property
    def n_p(self) -> int:
        return self.schedule.n_p

    @classmethod
    def single(cls, model, x0, t0, signals, targets, options=None, duration=None) -> "ShootingProblem":
        span = max(rc.span for rc in signals.values()) if duration is None else duration
        sched = PatchpointSchedule(np.array([t0, t0 + span]))
        return cls(model, sched, np.atleast_2d(x0), signals, targets, options or SolverOptions())


@dataclass
class Evaluation:
    refinements: dict
    matches: list
    continuity: np.ndarray
    end_stms: np.ndarray | None


@dataclass
class SolveResult:
    states: np.ndarray
    converged: bool
    iterations: int
    log: list
    refinements: dict
    matched: list
    residual: float
    continuity_residual: float
    targets: list = field(default_factory=list)

    @property
    def x0(self) -> np.ndarray:
        return self.states[0]

    def component(self, k: int) -> FrequencyComponent:
        return self.matched[k][1]


def minimum_norm_step(J, F: np.ndarray, refine_steps: int = 2) -> np.ndarray:
    """Least-norm solution of ``J dX = -F``, i.e. ``-J^T (J J^T)^{-1} F``.

    Dense Jacobians use an SVD-based least-squares solve. Sparse ones
    (multiple shooting) factor ``J J^T`` and apply a few steps of iterative
    refinement to recover the accuracy lost to squaring the conditioning.
    """
    if not sp.issparse(J):
        return -np.linalg.lstsq(J, F, rcond=None)[0]
    J = J.tocsr()
    lu = spla.splu((J @ J.T).tocsc())
    dX = -(J.T @ lu.solve(F))
    for _ in range(refine_steps):
        r = F + J @ dX
        dX -= J.T @ lu.solve(r)
    return dX


def _sample_grid(problem: ShootingProblem, rc: SignalRecipe) -> np.ndarray:
    return problem.schedule.epochs[0] + rc.dt * np.arange(rc.N)


def evaluate_problem(problem: ShootingProblem, X: np.ndarray, priors: list, need_partials: bool = True,
                     include_monitors: bool = False) -> Evaluation:
    """Propagate, sample, refine and match the targets at states ``X``.

    Monitor-only targets (and signals used only by them) are skipped unless
    ``include_monitors``; a monitor that cannot be matched yields ``(None, None)``.
    """
    model = problem.model
    popt = problem.options.propagation
    sched = problem.schedule
    active = [include_monitors or not tg.monitor_only for tg in problem.targets]
    used = {tg.signal for tg, on in zip(problem.targets, active) if on}
    grids = {}
    for name, rc in problem.signals.items():
        if name in used:
            grids.setdefault((rc.N, rc.span), []).append(name)
    refinements = {}
    continuity = np.zeros(0)
    end_stms = None
    for (N, span), names in grids.items():
        times = _sample_grid(problem, problem.signals[names[0]])
        sp = propagate_segments(model, sched, X, sample_times=times, options=popt, with_stm=need_partials)
        continuity, end_stms = sp.continuity(X), sp.end_stms
        for name in names:
            rc = problem.signals[name]
            q, grad = rc.extractor.evaluate(model, times, sp.sample_states, with_gradient=True)
            partials = None
            if need_partials:
                rows = np.einsum("nj,njk->nk", grad, sp.sample_stms)
                partials = SignalPartials(rows, sp.sample_segment, problem.n_p)
            sig = SampledSignal(q, rc.dt, sched.epochs[0], rc.extractor.describe(), partials)
            refinements[name] = refine_sequential(sig, rc.m, rc.method, tol=rc.refine_tol)
    if not grids:
        sp = propagate_segments(model, sched, X, options=popt, with_stm=need_partials)
        continuity, end_stms = sp.continuity(X), sp.end_stms
    matches = []
    for tg, prior, on in zip(problem.targets, priors, active):
        if not on:
            matches.append((None, None))
            continue
        res = refinements[tg.signal]
        try:
            k = _match(res, tg.selector, prior, problem.options.guard_bins, problem.signals[tg.signal])
        except PeakIdentityError:
            if not tg.monitor_only or prior is None:
                raise
            try:
                comp = refine_near(res.signal, prior, problem.options.guard_bins)
            except RefinementError:
                comp = None
            matches.append((None, comp))
            continue
        matches.append((k, res.model.components[k]))
    return Evaluation(refinements, matches, continuity, end_stms)


def _match(res: RefinementResult, sel: ModeSelector, prior: float | None, guard_bins: float, rc: SignalRecipe) -> int:
    comps = res.model.components
    if not comps:
        raise PeakIdentityError("refinement returned no components")
    df = 2.0 * math.pi / rc.span
    if prior is not None:
        k = int(np.argmin([abs(c.nu - prior) for c in comps]))
        if abs(comps[k].nu - prior) <= guard_bins * df:
            return k
    if sel.index is not None and sel.index < len(comps):
        return sel.index
    raise PeakIdentityError(
        f"no refined component within {guard_bins:g} bins of nu = {prior}; increase m or check the guess")


def _target_rows(problem: ShootingProblem, ev: Evaluation, sens_cache: dict, homotopy: bool):
    """Residuals (true and homotopy-limited) and Jacobian rows of all frequency targets."""
    opts = problem.options
    F_true, F_step, J = [], [], []
    for tg, (k, comp) in zip(problem.targets, ev.matches):
        if tg.monitor_only:
            continue
        S = None
        if sens_cache is not None:
            if tg.signal not in sens_cache:
                sens_cache[tg.signal] = frequency_sensitivities(ev.refinements[tg.signal])
            S = sens_cache[tg.signal][k].matrix
        if tg.nu is not None:
            r = comp.nu - tg.nu
            F_true.append(r)
            F_step.append(r)
            J.append(None if S is None else S[0])
        if tg.A is not None:
            r = comp.A - tg.A
            rs = r
            if homotopy and opts.amplitude_ratio_step is not None:
                lo, hi = comp.A / opts.amplitude_ratio_step, comp.A * opts.amplitude_ratio_step
                rs = comp.A - min(max(tg.A, lo), hi)
            F_true.append(r)
            F_step.append(rs)
            J.append(None if S is None else S[1])
        if tg.theta is not None:
            r = wrap_pi(comp.theta - tg.theta)
            rs = r
            if homotopy and opts.homotopy_step is not None:
                rs = float(np.clip(r, -opts.homotopy_step, opts.homotopy_step))
            F_true.append(r)
            F_step.append(rs)
            J.append(None if S is None else S[2])
    return np.array(F_true), np.array(F_step), J


def _continuity_jacobian(end_stms: np.ndarray):
    """Sparse block-bidiagonal ``[Phi_s, -I]`` rows of the continuity constraints."""
    n_p = end_stms.shape[0]
    n = n_p - 1
    rr, cc = np.meshgrid(np.arange(6), np.arange(6), indexing="ij")
    seg = np.arange(n)[:, None, None]
    rows = np.concatenate([(6 * seg + rr).ravel(), (6 * np.arange(n)[:, None] + np.arange(6)).ravel()])
    cols = np.concatenate([(6 * seg + cc).ravel(), (6 * np.arange(n)[:, None] + 6 + np.arange(6)).ravel()])
    vals = np.concatenate([end_stms[:n].ravel(), -np.ones(6 * n)])
    return sp.csr_matrix((vals, (rows, cols)), shape=(6 * n, 6 * n_p))


def solve(problem: ShootingProblem, callback=None) -> SolveResult:
    """Newton iteration on continuity and frequency constraints."""
    opts = problem.options
    X = problem.states.copy()
    priors = [tg.selector.nu for tg in problem.targets]
    log = []
    converged = False
    ev = None
    res_f = res_c = math.inf
    t_start = time.perf_counter()
    for it in range(opts.max_iter + 1):
        ev = evaluate_problem(problem, X, priors)
        priors = [p if comp is None else comp.nu for p, (_, comp) in zip(priors, ev.matches)]
        F_true, _, _ = _target_rows(problem, ev, None, homotopy=False)
        res_f = float(np.max(np.abs(F_true))) if F_true.size else 0.0
        res_c = float(np.max(np.abs(ev.continuity))) if ev.continuity.size else 0.0
        entry = {"iteration": it, "frequency_residual": res_f, "continuity_residual": res_c,
                 "elapsed_s": time.perf_counter() - t_start,
                 "components": [None if c is None else (c.nu, c.A, c.theta) for _, c in ev.matches]}
        if res_f <= opts.tol and res_c <= opts.continuity_tol:
            converged = True
            entry["step_norm"] = 0.0
        if converged or it == opts.max_iter:
            log.append(entry)
            if callback is not None:
                callback(entry)
            break
        cache = {}
        _, F_step, J_rows = _target_rows(problem, ev, cache, homotopy=True)
        blocks_F, blocks_J = [], []
        if problem.n_p > 1:
            blocks_F.append(ev.continuity)
            blocks_J.append(_continuity_jacobian(ev.end_stms))
        if F_step.size:
            blocks_F.append(F_step)
            blocks_J.append(np.array(J_rows))
        F = np.concatenate(blocks_F)
        if problem.n_p > 1:
            J = sp.vstack([blocks_J[0]] + [sp.csr_matrix(b) for b in blocks_J[1:]], format="csr")
        else:
            J = blocks_J[0]
        dX = minimum_norm_step(J, F)
        entry["linear_residual"] = float(np.max(np.abs(J @ dX + F)))
        nrm = float(np.linalg.norm(dX))
        if opts.max_step is not None and nrm > opts.max_step:
            dX *= opts.max_step / nrm
        entry["step_norm"] = float(np.linalg.norm(dX))
        log.append(entry)
        if callback is not None:
            callback(entry)
        X = X + dX.reshape(X.shape)
    return SolveResult(X, converged, len(log) - 1, log, ev.refinements, ev.matches, res_f, res_c,
                       list(problem.targets))


def solve_single(problem: ShootingProblem, callback=None) -> SolveResult:
    if problem.n_p != 1:
        raise ConfigurationError("single shooting takes exactly one patchpoint")
    return solve(problem, callback)


def solve_multi(problem: ShootingProblem, callback=None) -> SolveResult:
    return solve(problem, callback)


def verify_solution(problem: ShootingProblem, states: np.ndarray, method: str | None = None,
                    repropagate: bool = False) -> list[dict]:
    """Independent re-refinement of the solution's signals against the targets.

    Peaks are detected and refined from scratch, optionally with a different
    method. By default the trajectory is integrated exactly as in the solver
    (state and STM together, hence the same step sequence); with
    ``repropagate`` the state alone is integrated, which exposes the
    integration error floor of the long-span phases.
    """
    X = np.atleast_2d(states)
    sigs = {name: (replace(rc, method=method) if method else rc) for name, rc in problem.signals.items()}
    prob = ShootingProblem(problem.model, problem.schedule, X, sigs, problem.targets, problem.options,
                           problem.allow_frequency_rows)
    ev = evaluate_problem(prob, X, [tg.selector.nu for tg in problem.targets], need_partials=not repropagate,
                          include_monitors=True)
    out = []
    for tg, (k, c) in zip(problem.targets, ev.matches):
        if c is None:
            out.append({"label": tg.label, "signal": tg.signal, "index": None, "A_max": tg.A_max,
                        "monitor_ok": None, "note": "mode not detected among the refined components"})
            continue
        row = {"label": tg.label, "signal": tg.signal, "index": k, "nu": c.nu, "A": c.A, "theta": c.theta}
        if tg.nu is not None:
            row["nu_error"] = c.nu - tg.nu
        if tg.A is not None:
            row["A_error"] = c.A - tg.A
            row["A_rel_error"] = (c.A - tg.A) / tg.A
        if tg.theta is not None:
            row["theta_error"] = wrap_pi(c.theta - tg.theta)
        if tg.A_max is not None:
            row["A_max"] = tg.A_max
            row["monitor_ok"] = bool(c.A < tg.A_max)
        out.append(row)
    if ev.continuity.size:
        out.append({"label": "continuity", "max_abs": float(np.max(np.abs(ev.continuity)))})
    return out


# --- constellation ----------------------------------------------------------------


@dataclass
class ConstellationProblem:
    """Satellites sharing signals and targets; followers are phased to the reference.

    ``satellites`` are single-shooting problems. The reference uses its own
    targets. For each follower, every reference target with a frequency row
    becomes a ``(nu, theta)`` target: ``nu`` equal to the reference's
    converged value and ``theta`` offset by ``offsets[f][label]`` (radians).
    A missing or ``None`` offset picks the multiple of ``phase_quantum``
    nearest to the follower's initial relative phase.
    """

    satellites: list
    offsets: list = field(default_factory=list)
    reference: int = 0
    phase_quantum: float = 2.0 * math.pi / 3.0
    threads: int = 1


@dataclass
class ConstellationResult:
    reference: SolveResult
    followers: list
    relative_phases: list
    errors: list

    @property
    def converged(self) -> bool:
        return self.reference.converged and all(r is not None and r.converged for r in self.followers)


def _phase_targets(ref_prob: ShootingProblem, ref_res: SolveResult):
    """Reference targets with a frequency row and their converged components."""
    return [(tg, c) for tg, (_, c) in zip(ref_prob.targets, ref_res.matched) if tg.nu is not None]


def _initial_phases(prob: ShootingProblem, pairs) -> dict:
    probe_targets = [FrequencyTarget(ModeSelector(tg.selector.index, c.nu), tg.signal, A_max=math.inf, label=tg.label)
                     for tg, c in pairs]
    probe = ShootingProblem(prob.model, prob.schedule, prob.states, prob.signals, probe_targets, prob.options)
    ev = evaluate_problem(probe, probe.states, [t.selector.nu for t in probe_targets], need_partials=False,
                          include_monitors=True)
    if any(c is None for _, c in ev.matches):
        raise PeakIdentityError("follower mode not found near the reference frequency")
    return {t.label: c.theta for t, (_, c) in zip(probe_targets, ev.matches)}


def _follower_problem(ref_prob: ShootingProblem, ref_res: SolveResult, prob: ShootingProblem, offsets: dict,
                      quantum: float):
    pairs = _phase_targets(ref_prob, ref_res)
    initial = None
    if any(offsets.get(tg.label) is None for tg, _ in pairs):
        initial = _initial_phases(prob, pairs)
    targets, planned = [], {}
    for tg, c in pairs:
        off = offsets.get(tg.label)
        if off is None:
            off = quantum * round(wrap_pi(initial[tg.label] - c.theta) / quantum)
        planned[tg.label] = float(wrap_pi(off))
        targets.append(FrequencyTarget(ModeSelector(tg.selector.index, c.nu), tg.signal, nu=c.nu,
                                       theta=wrap_2pi(c.theta + off), label=tg.label))
    targets += [tg for tg in ref_prob.targets if tg.monitor_only]
    return ShootingProblem(prob.model, prob.schedule, prob.states, prob.signals, targets, prob.options), planned


def solve_constellation(problem: ConstellationProblem, callback=None) -> ConstellationResult:
    """Solve the reference, then phase each follower to it (optionally in parallel)."""
    sats = problem.satellites
    ref_prob = sats[problem.reference]
    ref_cb = None if callback is None else (lambda e: callback({**e, "satellite": problem.reference}))
    ref_res = solve_single(ref_prob, ref_cb)
    if not ref_res.converged:
        raise RuntimeError("reference satellite did not converge")
    followers = [i for i in range(len(sats)) if i != problem.reference]

    def run(fi):
        offsets = problem.offsets[fi] if fi < len(problem.offsets) else {}
        planned = {}
        cb = None if callback is None else (lambda e: callback({**e, "satellite": followers[fi]}))
        try:
            fprob, planned = _follower_problem(ref_prob, ref_res, sats[followers[fi]], offsets or {},
                                               problem.phase_quantum)
            return solve_single(fprob, cb), planned, None
        except (RefinementError, PeakIdentityError) as exc:
            return None, planned, str(exc)

    if problem.threads > 1 and len(followers) > 1:
        with ThreadPoolExecutor(max_workers=problem.threads) as pool:
            outs = list(pool.map(run, range(len(followers))))
    else:
        outs = [run(fi) for fi in range(len(followers))]
    ref_theta = {tg.label: c.theta for tg, c in _phase_targets(ref_prob, ref_res)}
    results, rel, errors = [], [], []
    for res, planned, err in outs:
        results.append(res)
        errors.append(err)
        if res is None:
            rel.append(None)
            continue
        achieved = {tg.label: c.theta for tg, (_, c) in zip(res.targets, res.matched) if c is not None}
        phases = {}
        for lbl, off in planned.items():
            d = wrap_pi(achieved[lbl] - ref_theta[lbl])
            phases[lbl] = {"target": off, "achieved": d, "error": wrap_pi(d - off)}
        rel.append(phases)
    return ConstellationResult(ref_res, results, rel, errors)


@dataclass
class DriftReport:
    """Relative osculating ``M`` and ``Omega`` of followers with respect to the reference.

    ``dM`` and ``dOmega`` have shape ``(n_followers, n_times)`` (radians,
    unwrapped); ``slopes`` holds the least-squares linear trend of each in
    rad per nd, shape ``(n_followers, 2)``.
    """

    times: np.ndarray
    dM: np.ndarray
    dOmega: np.ndarray
    slopes: np.ndarray

    def secular_change(self) -> np.ndarray:
        """Linear-trend change over the whole span (rad)."""
        return self.slopes * (self.times[-1] - self.times[0])


def relative_phase_drift(model: DynamicsModel, states, t0: float, duration: float, n_times: int = 2000,
                         reference: int = 0, options: PropagationOptions | None = None) -> DriftReport:
    """Propagate every satellite and track osculating ``M``, ``Omega`` relative to the reference.

    Elements are computed about the Moon in the Earth-orientation frame. If
    any satellite leaves an elliptic orbit the report is truncated to the
    samples before the first such epoch.
    """
    from .frames import FrameTag, StateVector6, cartesian_to_kepler, mci_to_eof
    from .propagation import propagate

    if model.frame != FrameTag.MCI:
        raise ConfigurationError("phase drift is defined for inertial (ephemeris-model) states")
    times = t0 + np.linspace(0.0, duration, n_times)
    gm = model.constants.mu_moon
    els = []
    for x in np.atleast_2d(states):
        tr = propagate(model, x, (t0, t0 + duration), options=options)
        ys = tr(times)
        rows = []
        for y, t in zip(ys, times):
            try:
                o = cartesian_to_kepler(mci_to_eof(StateVector6.from_array(y, FrameTag.MCI, t), t, model.ephemeris), gm)
            except ValueError:
                break
            rows.append((o.M, o.raan))
        els.append(np.array(rows).reshape(-1, 2))
    n_ok = min(len(e) for e in els)
    if n_ok < 2:
        raise ConfigurationError("a satellite is not on an elliptic orbit about the Moon")
    times = times[:n_ok]
    els = [e[:n_ok] for e in els]
    ref = els[reference]
    others = [e for k, e in enumerate(els) if k != reference]
    dM = np.array([np.unwrap(e[:, 0] - ref[:, 0]) for e in others])
    dO = np.array([np.unwrap(e[:, 1] - ref[:, 1]) for e in others])
    tt = times - times[0]
    slopes = np.array([[np.polyfit(tt, a, 1)[0], np.polyfit(tt, b, 1)[0]] for a, b in zip(dM, dO)])
    return DriftReport(times, dM, dO, slopes)
