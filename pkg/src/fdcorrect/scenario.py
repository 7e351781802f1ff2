"""Scenario files: schema validation and construction of solver objects.

Scenarios are TOML or JSON. Every physical quantity carries its unit in the
key (``_nd`` nondimensional, ``_km``, ``_deg``, ``_rad``, ``_years``).
A ``[profiles.<name>]`` table is deep-merged over the document before
validation, which is how the reduced-N CI profiles are expressed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .constants import SystemConstants, load_constants
from .corrector import (ConstellationProblem, FrequencyTarget, ModeSelector, ShootingProblem, SignalRecipe,
                        SolverOptions)
from .dynamics import DynamicsModel, cr3bp_model, hfem_model
from .ephemeris import make_provider
from .frames import (FrameTag, KeplerElements, StateVector6, brf_to_mci, eof_to_mci, kepler_to_cartesian)
from .propagation import PatchpointSchedule, PropagationOptions, SignalExtractor

__all__ = [
    "ScenarioError",
    "Scenario",
    "load_scenario",
    "bundled_scenarios",
    "Built",
    "build",
]

FORMAT_VERSION = 1


class ScenarioError(ValueError):
    """Malformed or inconsistent scenario file."""


class _Spec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


def _one_of(obj, names):
    given = [n for n in names if getattr(obj, n) is not None]
    if len(given) != 1:
        raise ValueError(f"exactly one of {', '.join(names)} is required")
    return given[0]


class ModelSpec(_Spec):
    kind: Literal["cr3bp", "hfem"] = "cr3bp"
    provider: Literal["circular", "bicircular"] = "circular"
    include_earth: bool = True
    include_sun: bool = False
    sun_phase_rad: float = 0.0


class ConstantsSpec(_Spec):
    gm_earth_km3_s2: Optional[float] = None
    gm_moon_km3_s2: Optional[float] = None
    gm_sun_km3_s2: Optional[float] = None
    lstar_km: Optional[float] = None
    sun_distance_km: Optional[float] = None
    mass_ratio: Optional[float] = None


class PropagationSpec(_Spec):
    rtol: float = Field(1e-12, gt=0)
    atol: float = Field(1e-12, gt=0)
    max_steps: int = Field(50_000_000, gt=0)


class ElementsSpec(_Spec):
    a_km: float = Field(gt=0)
    e: float = Field(ge=0, lt=1)
    i_deg: float
    raan_deg: float
    argp_deg: float
    M_deg: float
    frame: Literal["EOF", "MCI"] = "EOF"


class StateSpec(_Spec):
    frame: Literal["BRF", "EOF", "MCI"] = "BRF"
    epoch_nd: float = 0.0
    state_nd: Optional[list[float]] = Field(None, min_length=6, max_length=6)
    elements: Optional[ElementsSpec] = None

    @model_validator(mode="after")
    def _check(self):
        _one_of(self, ("state_nd", "elements"))
        return self


class _Span(_Spec):
    span_nd: Optional[float] = Field(None, ge=0)
    span_years: Optional[float] = Field(None, ge=0)

    def span(self, c: SystemConstants) -> float:
        which = _one_of(self, ("span_nd", "span_years"))
        return self.span_nd if which == "span_nd" else c.years_to_nd(self.span_years)


class SignalSpec(_Span):
    component: Literal["x", "y", "z", "vx", "vy", "vz"] = "x"
    frame: Literal["BRF", "EOF", "MCI"] = "BRF"
    N: int = Field(4096, ge=16)
    method: Literal["lnaff", "gmsc"] = "gmsc"
    m: int = Field(2, ge=1)
    refine_tol: float = Field(1e-12, gt=0)

    @model_validator(mode="after")
    def _check(self):
        if self.N % 2:
            raise ValueError("N must be even")
        _one_of(self, ("span_nd", "span_years"))
        return self


class TargetSpec(_Spec):
    label: str = ""
    signal: str = "q"
    index: Optional[int] = Field(None, ge=0)
    prior_nu_nd: Optional[float] = None
    nu_nd: Optional[float] = None
    A_nd: Optional[float] = Field(None, gt=0)
    A_scale: Optional[float] = Field(None, gt=0)
    theta_rad: Optional[float] = None
    theta_deg: Optional[float] = None
    A_max_nd: Optional[float] = Field(None, gt=0)

    @model_validator(mode="after")
    def _check(self):
        if self.index is None and self.prior_nu_nd is None:
            raise ValueError("a target needs index or prior_nu_nd")
        if self.A_nd is not None and self.A_scale is not None:
            raise ValueError("give A_nd or A_scale, not both")
        if self.theta_rad is not None and self.theta_deg is not None:
            raise ValueError("give theta_rad or theta_deg, not both")
        if self.nu_nd is not None and (self.A_nd is not None or self.A_scale is not None):
            raise ValueError("a target constrains nu or A, not both")
        return self

    @property
    def theta(self) -> float | None:
        if self.theta_deg is not None:
            return math.radians(self.theta_deg)
        return self.theta_rad


class SolverSpec(_Spec):
    tol_nd: float = Field(1e-10, gt=0)
    continuity_tol_nd: float = Field(1e-10, gt=0)
    max_iter: int = Field(25, ge=0)
    max_step_nd: Optional[float] = Field(None, gt=0)
    homotopy_step_rad: float = Field(math.pi / 4, gt=0)
    guard_bins: float = Field(10.0, gt=0)
    allow_frequency_rows: bool = False


class SeedSpec(_Spec):
    """Symmetric CR3BP periodic orbit displaced along a center mode."""

    guess_state_nd: list[float] = Field(min_length=6, max_length=6)
    period_nd: Optional[float] = Field(None, gt=0)
    period_synodic_fraction: Optional[float] = Field(None, gt=0)
    mode: Union[Literal["planar", "vertical"], int] = "planar"
    amplitude_nd: float = 1e-3
    phase_rad: float = 0.0

    @model_validator(mode="after")
    def _check(self):
        _one_of(self, ("period_nd", "period_synodic_fraction"))
        return self


class ScheduleSpec(_Spec):
    revolutions: int = Field(gt=0)
    patchpoints_per_rev: int = Field(3, gt=0)
    t0_nd: float = 0.0


class PropagateSpec(_Span):
    n_out: int = Field(1001, ge=1)
    frame: Literal["BRF", "EOF", "MCI"] = "BRF"


class ConstellationSpec(_Spec):
    satellites: list[ElementsSpec] = Field(min_length=2)
    reference: int = Field(0, ge=0)
    offsets_deg: list[dict[str, Optional[float]]] = Field(default_factory=list)
    phase_quantum_deg: float = Field(120.0, gt=0)
    drift_years: float = Field(10.0, gt=0)
    drift_samples: int = Field(1000, ge=10)


class Scenario(_Spec):
    format_version: Literal[1] = FORMAT_VERSION
    name: str
    description: str = ""
    model: ModelSpec = ModelSpec()
    constants: ConstantsSpec = ConstantsSpec()
    propagation: PropagationSpec = PropagationSpec()
    initial: Optional[StateSpec] = None
    seed: Optional[SeedSpec] = None
    schedule: Optional[ScheduleSpec] = None
    signals: dict[str, SignalSpec] = Field(default_factory=dict)
    targets: list[TargetSpec] = Field(default_factory=list)
    solver: SolverSpec = SolverSpec()
    propagate: Optional[PropagateSpec] = None
    constellation: Optional[ConstellationSpec] = None

    @model_validator(mode="after")
    def _check(self):
        for t in self.targets:
            if t.signal not in self.signals:
                raise ValueError(f"target {t.label!r} refers to unknown signal {t.signal!r}")
        if self.seed is not None and self.model.kind == "hfem" and self.schedule is None:
            raise ValueError("an ephemeris-model seed needs a patchpoint schedule")
        if self.constellation is not None and self.model.kind != "hfem":
            raise ValueError("constellations are solved in the ephemeris model")
        return self


# --- loading ---------------------------------------------------------------------


def _deep_merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = v
    return out


def _format_validation(exc, path) -> str:
    lines = [f"{path}: invalid scenario"]
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"  field {loc}: {err['msg']}")
    return "\n".join(lines)


def bundled_scenarios() -> dict[str, Path]:
    """Names and paths of the scenarios shipped with the package."""
    root = resources.files("fdcorrect") / "scenarios"
    return {Path(str(p)).stem: Path(str(p)) for p in root.iterdir() if str(p).endswith(".toml")}


def _resolve(source) -> Path:
    p = Path(source)
    if p.exists():
        return p
    bundled = bundled_scenarios()
    if str(source) in bundled:
        return bundled[str(source)]
    raise ScenarioError(f"{source}: no such scenario file or bundled scenario (bundled: {sorted(bundled)})")


def load_scenario(source, profile: str | None = None) -> Scenario:
    """Read, merge a profile into, and validate a scenario file (or bundled name)."""
    from pydantic import ValidationError

    path = _resolve(source)
    text = path.read_text()
    try:
        if path.suffix == ".json":
            raw = json.loads(text)
        else:
            raw = tomllib.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"{path}: {exc}") from exc
    profiles = raw.pop("profiles", {})
    if profile is not None:
        if profile not in profiles:
            raise ScenarioError(f"{path}: no profile {profile!r} (available: {sorted(profiles)})")
        raw = _deep_merge(raw, profiles[profile])
    try:
        return Scenario.model_validate(raw)
    except ValidationError as exc:
        raise ScenarioError(_format_validation(exc, path)) from exc


# --- construction ----------------------------------------------------------------


_CONSTANT_KEYS = {
    "gm_earth_km3_s2": "gm_earth",
    "gm_moon_km3_s2": "gm_moon",
    "gm_sun_km3_s2": "gm_sun",
    "lstar_km": "lstar_km",
    "sun_distance_km": "sun_distance_km",
    "mass_ratio": "mass_ratio",
}


def build_constants(sc: Scenario, constants_file=None) -> SystemConstants:
    """Defaults (or the override file / environment variable) updated by the scenario."""
    base = load_constants(constants_file)
    over = {_CONSTANT_KEYS[k]: v for k, v in sc.constants.model_dump().items() if v is not None}
    if not over:
        return base
    from dataclasses import replace

    return replace(base, **over)


def build_model(sc: Scenario, c: SystemConstants) -> DynamicsModel:
    if sc.model.kind == "cr3bp":
        return cr3bp_model(c)
    kwargs = {"sun_phase": sc.model.sun_phase_rad} if sc.model.provider == "bicircular" else {}
    eph = make_provider(sc.model.provider, c, **kwargs)
    return hfem_model(eph, sc.model.include_earth, sc.model.include_sun, c)


def elements_state(spec: ElementsSpec, model: DynamicsModel, epoch: float = 0.0) -> np.ndarray:
    """Cartesian state in the model frame from (osculating) Keplerian elements about the Moon."""
    c = model.constants
    oe = KeplerElements(c.km_to_nd(spec.a_km), spec.e, math.radians(spec.i_deg), math.radians(spec.raan_deg),
                        math.radians(spec.argp_deg), math.radians(spec.M_deg))
    s = kepler_to_cartesian(oe, c.mu_moon, FrameTag(spec.frame), epoch)
    return to_model_frame(s, model, epoch)


def to_model_frame(s: StateVector6, model: DynamicsModel, t: float) -> np.ndarray:
    if s.frame == model.frame:
        return s.as_array()
    if model.frame == FrameTag.BRF:
        raise ScenarioError("restricted-problem states must be given in BRF")
    if s.frame == FrameTag.BRF:
        return brf_to_mci(s, t, model.ephemeris).as_array()
    if s.frame == FrameTag.EOF:
        return eof_to_mci(s, t, model.ephemeris).as_array()
    return s.as_array()


def initial_state(sc: Scenario, model: DynamicsModel) -> np.ndarray:
    st = sc.initial
    if st is None:
        raise ScenarioError("scenario has no [initial] state")
    if st.elements is not None:
        return elements_state(st.elements, model, st.epoch_nd)
    s = StateVector6.from_array(np.array(st.state_nd), FrameTag(st.frame), st.epoch_nd)
    return to_model_frame(s, model, st.epoch_nd)


def seed_period(seed: SeedSpec, c: SystemConstants) -> float:
    if seed.period_nd is not None:
        return seed.period_nd
    return seed.period_synodic_fraction * 2.0 * math.pi / (1.0 - c.sun_rate)


def build_signals(sc: Scenario, c: SystemConstants) -> dict:
    return {name: SignalRecipe(SignalExtractor(s.component, FrameTag(s.frame)), s.N, s.span(c), s.method, s.m,
                               s.refine_tol)
            for name, s in sc.signals.items()}


def build_options(sc: Scenario) -> SolverOptions:
    p, s = sc.propagation, sc.solver
    return SolverOptions(tol=s.tol_nd, continuity_tol=s.continuity_tol_nd, max_iter=s.max_iter,
                         max_step=s.max_step_nd, homotopy_step=s.homotopy_step_rad, guard_bins=s.guard_bins,
                         propagation=PropagationOptions(rtol=p.rtol, atol=p.atol, max_steps=p.max_steps))


def build_targets(sc: Scenario, initial: dict | None = None, probe: bool = False) -> list:
    """Targets; ``A_scale`` is resolved against ``initial[label].A`` (initial refined components).

    With ``probe`` every target is returned unconstrained (monitor-only), for
    reading the initial frequency structure.
    """
    out = []
    for t in sc.targets:
        if probe:
            out.append(FrequencyTarget(ModeSelector(t.index, t.prior_nu_nd), t.signal, A_max=math.inf, label=t.label))
            continue
        A = t.A_nd
        if t.A_scale is not None:
            if initial is None or t.label not in initial or initial[t.label] is None:
                raise ScenarioError(f"target {t.label!r}: A_scale needs the initial component")
            A = t.A_scale * initial[t.label].A
        out.append(FrequencyTarget(ModeSelector(t.index, t.prior_nu_nd), t.signal, nu=t.nu_nd, A=A, theta=t.theta,
                                   A_max=t.A_max_nd, label=t.label))
    return out


@dataclass
class Built:
    """Solver-ready objects derived from a scenario."""

    scenario: Scenario
    constants: SystemConstants
    model: DynamicsModel
    signals: dict
    options: SolverOptions


def build(sc: Scenario, constants_file=None, threads: int = 1) -> Built:
    c = build_constants(sc, constants_file)
    model = build_model(sc, c)
    opts = build_options(sc)
    if threads > 1:
        from dataclasses import replace

        opts = replace(opts, propagation=replace(opts.propagation, threads=threads))
    return Built(sc, c, model, build_signals(sc, c), opts)


def single_problem(b: Built, targets: list) -> ShootingProblem:
    x0 = initial_state(b.scenario, b.model)
    return ShootingProblem.single(b.model, x0, b.scenario.initial.epoch_nd, b.signals, targets, b.options)


def schedule_of(b: Built, period: float) -> PatchpointSchedule:
    s = b.scenario.schedule
    if s is None:
        raise ScenarioError("scenario has no [schedule]")
    return PatchpointSchedule.uniform(s.t0_nd, s.revolutions * period, s.revolutions * s.patchpoints_per_rev)


def constellation_problem(b: Built, targets: list, threads: int = 1) -> ConstellationProblem:
    cs = b.scenario.constellation
    if cs is None:
        raise ScenarioError("scenario has no [constellation]")
    sats = [ShootingProblem.single(b.model, elements_state(e, b.model), 0.0, b.signals, targets, b.options)
            for e in cs.satellites]
    offsets = [{k: (None if v is None else math.radians(v)) for k, v in d.items()} for d in cs.offsets_deg]
    return ConstellationProblem(sats, offsets, cs.reference, math.radians(cs.phase_quantum_deg), threads)


def seeded_orbit(b: Built):
    """Periodic CR3BP orbit and its selected center mode from the ``[seed]`` table."""
    from .periodic import center_modes, correct_symmetric_orbit

    seed = b.scenario.seed
    if seed is None:
        raise ScenarioError("scenario has no [seed]")
    cr = cr3bp_model(b.constants)
    orbit = correct_symmetric_orbit(cr, seed.guess_state_nd, period=seed_period(seed, b.constants),
                                    options=b.options.propagation)
    modes = center_modes(orbit)
    if not modes:
        raise ScenarioError("seed orbit has no center mode")
    if seed.mode == "planar":
        cm = max(modes, key=lambda m: m.planar_fraction)
    elif seed.mode == "vertical":
        cm = min(modes, key=lambda m: m.planar_fraction)
    else:
        cm = modes[int(seed.mode)]
    return orbit, cm


def seeded_patchpoints(b: Built):
    """Schedule and patchpoint states on the linearized quasi-periodic seed, in the model frame."""
    from .periodic import quasi_periodic_seed

    orbit, cm = seeded_orbit(b)
    sched = schedule_of(b, orbit.period)
    seed = b.scenario.seed
    taus = sched.epochs[:-1]
    xb = quasi_periodic_seed(orbit, cm, seed.amplitude_nd, taus - sched.epochs[0], seed.phase_rad,
                             options=b.options.propagation)
    X = np.array([to_model_frame(StateVector6.from_array(x, FrameTag.BRF, t), b.model, t) for x, t in zip(xb, taus)])
    return sched, X, orbit, cm


def seeded_state(b: Built) -> np.ndarray:
    """Single initial state displaced along the seed's center mode."""
    from .periodic import seed_from_eigenstructure

    orbit, cm = seeded_orbit(b)
    seed = b.scenario.seed
    x, _ = seed_from_eigenstructure(orbit, seed.mode, seed.amplitude_nd, seed.phase_rad)
    return x
