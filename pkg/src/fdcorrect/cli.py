"""Command-line front end.

Subcommands read a scenario file (or the name of a bundled scenario), run one
stage of the pipeline and write versioned CSV/JSON outputs. Exit codes: 0 on
success, 2 on configuration errors, 3 on numerical failures (including
non-convergence).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import scenario as scn
from .corrector import (ConfigurationError, PeakIdentityError, ShootingProblem, evaluate_problem,
                        relative_phase_drift, solve_constellation, solve_multi, solve_single, verify_solution)
from .dynamics import SingularityError
from .frames import FrameTag
from .propagation import (PatchpointSchedule, PropagationError, SampledSignal, frame_maps, propagate,
                          propagate_segments, sample_signal, write_trajectory_csv)
from .refine import RefinementError, refine_sequential
from .spectrum import detect_peaks, dft_at_bins

FORMAT_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

log = logging.getLogger("fdcorrect")


class NumericFailure(RuntimeError):
    """A solve or refinement finished without meeting its tolerance."""


# --- output helpers ----------------------------------------------------------------


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path: Path, payload: dict) -> None:
    body = {"format_version": FORMAT_VERSION, **payload}
    path.write_text(json.dumps(_jsonable(body), indent=2) + "\n")


def write_csv(path: Path, header, rows, comment: str = "") -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# format_version={FORMAT_VERSION}{(' ' + comment) if comment else ''}\n")
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _in_frame(model, frame: FrameTag, times, states) -> np.ndarray:
    M, b = frame_maps(model, frame, times)
    return np.einsum("nij,nj->ni", M, np.atleast_2d(states)) + b


def _components(model) -> list[dict]:
    return [{"nu_nd": c.nu, "A_nd": c.A, "theta_rad": c.theta} for c in model.components]


# --- shared steps ----------------------------------------------------------------


def _start_state(b: scn.Built) -> tuple[np.ndarray, float]:
    sc = b.scenario
    if sc.initial is not None:
        return scn.initial_state(sc, b.model), sc.initial.epoch_nd
    if sc.seed is not None and sc.model.kind == "cr3bp":
        return scn.seeded_state(b), 0.0
    raise scn.ScenarioError("scenario needs [initial] (or a CR3BP [seed])")


def _signal_from_state(b: scn.Built, name: str, x0, t0: float) -> SampledSignal:
    rc = b.signals[name]
    tr = propagate(b.model, x0, (t0, t0 + rc.span), options=b.options.propagation)
    return sample_signal(tr, rc.extractor, rc.N, rc.dt, t0=t0)


def read_signal_csv(path) -> SampledSignal:
    """Uniformly sampled signal from a CSV with columns ``t,q`` (``#`` comments and a header allowed)."""
    path = Path(path)
    try:
        data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2,
                          skiprows=1 if _has_header(path) else 0)
    except ValueError as exc:
        raise scn.ScenarioError(f"{path}: {exc}") from exc
    if data.shape[1] < 2 or data.shape[0] < 2:
        raise scn.ScenarioError(f"{path}: expected columns t,q and at least two rows")
    t, q = data[:, 0], data[:, 1]
    dt = (t[-1] - t[0]) / (t.size - 1)
    if not np.allclose(np.diff(t), dt, rtol=1e-9, atol=0.0):
        raise scn.ScenarioError(f"{path}: sample times are not uniformly spaced")
    return SampledSignal(q, dt, float(t[0]), f"csv:{path.name}")


def _has_header(path: Path) -> bool:
    with open(path) as fh:
        for line in fh:
            if line.strip() and not line.lstrip().startswith("#"):
                try:
                    float(line.split(",")[0])
                    return False
                except ValueError:
                    return True
    return False


def _input_signals(args, b: scn.Built | None):
    """Named signals for ``spectrum`` and ``refine``: a CSV file or the scenario's recipes."""
    if getattr(args, "signal_csv", None):
        sig = read_signal_csv(args.signal_csv)
        yield "csv", sig, None
        return
    x0, t0 = _start_state(b)
    for name in _signal_names(b, args.signal):
        yield name, _signal_from_state(b, name, x0, t0), b.signals[name]


def _signal_names(b: scn.Built, requested: str | None) -> list[str]:
    if not b.signals:
        raise scn.ScenarioError("scenario defines no [signals]")
    if requested is None:
        return list(b.signals)
    if requested not in b.signals:
        raise scn.ScenarioError(f"unknown signal {requested!r}; defined: {sorted(b.signals)}")
    return [requested]


def _iteration_rows(result) -> list:
    rows = []
    for e in result.log:
        rows.append([e["iteration"], e["frequency_residual"], e["continuity_residual"], e.get("step_norm", 0.0)])
    return rows


def _write_solve_outputs(out: Path, result, problem: ShootingProblem, verification: list, extra: dict) -> None:
    write_json(out / "solution.json", {
        "converged": result.converged,
        "iterations": result.iterations,
        "frequency_residual_nd": result.residual,
        "continuity_residual_nd": result.continuity_residual,
        "epochs_nd": problem.schedule.epochs,
        "frame": problem.model.frame.value,
        "states_nd": result.states,
        **extra,
    })
    write_csv(out / "iterations.csv", ["iteration", "frequency_residual_nd", "continuity_residual_nd", "step_norm_nd"],
              _iteration_rows(result))
    freq = {"targets": [], "signals": {}}
    for tg, (k, c) in zip(result.targets, result.matched):
        entry = {"label": tg.label, "signal": tg.signal, "index": k}
        if c is not None:
            entry.update({"nu_nd": c.nu, "A_nd": c.A, "theta_rad": c.theta})
        entry["target"] = {"nu_nd": tg.nu, "A_nd": tg.A, "theta_rad": tg.theta, "A_max_nd": tg.A_max}
        freq["targets"].append(entry)
    for name, res in result.refinements.items():
        freq["signals"][name] = {"source": res.signal.source, "method": res.method, "A0_nd": res.model.A0,
                                 "components": _components(res.model)}
    freq["verification"] = verification
    write_json(out / "frequency.json", freq)


def _emit_plots(out: Path, b: scn.Built, problem: ShootingProblem, states, refinements: dict) -> None:
    """Plot-ready CSVs: geometry in BRF, log10 spectra, refined peaks, strobe returns."""
    pdir = out / "plots"
    pdir.mkdir(parents=True, exist_ok=True)
    sched = problem.schedule
    n = 4000
    times = np.linspace(sched.epochs[0], sched.epochs[-1], n, endpoint=False)
    sp = propagate_segments(b.model, sched, states, sample_times=times, options=b.options.propagation,
                            with_stm=False)
    brf = _in_frame(b.model, FrameTag.BRF, times, sp.sample_states)
    write_trajectory_csv(pdir / "geometry_brf.csv", times, brf, frame="BRF")
    for name, res in refinements.items():
        dft = dft_at_bins(res.signal)
        amp = dft.amplitude
        rows = [(f, a, math.log10(a) if a > 0 else -300.0) for f, a in zip(dft.bins, amp)]
        write_csv(pdir / f"spectrum_{name}.csv", ["f_nd", "amplitude_nd", "log10_amplitude"], rows,
                  f"signal={res.signal.source}")
        write_csv(pdir / f"peaks_{name}.csv", ["rank", "nu_nd", "A_nd", "log10_A", "theta_rad"],
                  [(k, c.nu, c.A, math.log10(c.A), c.theta) for k, c in enumerate(res.model.components)])
    if problem.n_p == 1 and refinements:
        res = next(iter(refinements.values()))
        if res.model.components:
            period = 2.0 * math.pi / res.model.components[0].nu
            tr = propagate(b.model, states[0], (sched.epochs[0], sched.epochs[-1]), options=b.options.propagation)
            k = int((sched.epochs[-1] - sched.epochs[0]) / period)
            ts = sched.epochs[0] + period * np.arange(k)
            write_trajectory_csv(pdir / "strobe_brf.csv", ts, _in_frame(b.model, FrameTag.BRF, ts, tr(ts)),
                                 frame="BRF")


# --- subcommands -----------------------------------------------------------------


def cmd_propagate(args, b: scn.Built, out: Path) -> int:
    sc = b.scenario
    x0, t0 = _start_state(b)
    if sc.propagate is None:
        raise scn.ScenarioError("scenario has no [propagate] table")
    span = sc.propagate.span(b.constants)
    n = 1 if span == 0 else sc.propagate.n_out
    times = t0 + (np.linspace(0.0, span, n) if n > 1 else np.zeros(1))
    tr = propagate(b.model, x0, (t0, t0 + span), options=b.options.propagation)
    frame = FrameTag(sc.propagate.frame)
    states = _in_frame(b.model, frame, times, tr(times))
    write_trajectory_csv(out / "trajectory.csv", times, states, frame=frame.value)
    log.info("wrote %d rows to %s", n, out / "trajectory.csv")
    return EXIT_OK


def cmd_spectrum(args, b: scn.Built | None, out: Path) -> int:
    for name, sig, _ in _input_signals(args, b):
        dft = dft_at_bins(sig)
        amp = dft.amplitude
        rows = [(k, f, a, math.log10(a) if a > 0 else -300.0, C, S)
                for k, (f, a, C, S) in enumerate(zip(dft.bins, amp, dft.C, dft.S))]
        write_csv(out / f"spectrum_{name}.csv", ["bin", "f_nd", "amplitude_nd", "log10_amplitude", "C_nd", "S_nd"],
                  rows, f"signal={sig.source} N={sig.N} span_nd={sig.span!r}")
        peaks = detect_peaks(dft, args.peaks)
        write_json(out / f"peaks_{name}.json", {"signal": sig.source, "N": sig.N, "span_nd": sig.span,
                                                 "peaks": [{"bin": p.k, "f_nd": p.frequency, "amplitude_nd": p.amplitude,
                                                            "neighbor_bin": p.neighbor} for p in peaks]})
    return EXIT_OK


def cmd_refine(args, b: scn.Built | None, out: Path) -> int:
    payload = {"scenario": None if b is None else b.scenario.name, "signals": {}}
    ok = True
    for name, sig, rc in _input_signals(args, b):
        method = args.method or (rc.method if rc else "gmsc")
        m = args.m or (rc.m if rc else 2)
        res = refine_sequential(sig, m, method, tol=rc.refine_tol if rc else 1e-12)
        ok &= res.report.converged
        payload["signals"][name] = {"source": sig.source, "method": method, "N": sig.N, "span_nd": sig.span,
                                    "A0_nd": res.model.A0, "components": _components(res.model),
                                    "report": res.report.to_dict()}
        for k, c in enumerate(res.model.components):
            log.info("%s %2d  nu=%.15f  A=%.15f  theta=%.15f", name, k, c.nu, c.A, c.theta)
    write_json(out / "frequency.json", payload)
    if not ok:
        raise NumericFailure("refinement did not converge for every component")
    return EXIT_OK


def _log_iteration(e):
    sat = f"sat {e['satellite']}  " if "satellite" in e else ""
    log.info("%siter %2d  |F_freq|=%.3e  |F_cont|=%.3e  |dX|=%.3e", sat, e["iteration"], e["frequency_residual"],
             e["continuity_residual"], e.get("step_norm", 0.0))


def cmd_correct_single(args, b: scn.Built, out: Path) -> int:
    x0, t0 = _start_state(b)
    initial = None
    if any(t.A_scale is not None for t in b.scenario.targets):
        span = max(rc.span for rc in b.signals.values())
        initial = _initial_components(b, b.model, PatchpointSchedule(np.array([t0, t0 + span])), np.atleast_2d(x0))
    problem = ShootingProblem.single(b.model, x0, t0, b.signals, scn.build_targets(b.scenario, initial), b.options)
    result = solve_single(problem, callback=_log_iteration)
    return _finish_solve(args, b, out, problem, result)


def _initial_components(b: scn.Built, model, schedule, states) -> dict:
    """Initial refined components of every target, keyed by label."""
    targets = scn.build_targets(b.scenario, probe=True)
    probe = ShootingProblem(model, schedule, states, b.signals, targets, b.options)
    ev = evaluate_problem(probe, probe.states, [t.selector.nu for t in targets], need_partials=False,
                          include_monitors=True)
    comps = {t.label: c for t, (_, c) in zip(probe.targets, ev.matches)}
    for lbl, c in comps.items():
        if c is not None:
            log.info("initial %s: nu=%.12f A=%.6e theta=%.6f", lbl, c.nu, c.A, c.theta)
    return comps


def _finish_solve(args, b, out, problem, result, extra=None) -> int:
    verification = verify_solution(problem, result.states) if result.converged else []
    _write_solve_outputs(out, result, problem, verification, extra or {})
    if args.emit_plots:
        _emit_plots(out, b, problem, result.states, result.refinements)
    if not result.converged:
        raise NumericFailure(f"solver did not converge in {result.iterations} iterations "
                             f"(frequency residual {result.residual:.3e}, continuity {result.continuity_residual:.3e})")
    for row in verification:
        log.info("verify %s", {k: v for k, v in row.items() if k.endswith("error") or k in ("label", "max_abs")})
    return EXIT_OK


def cmd_correct_multi(args, b: scn.Built, out: Path) -> int:
    sc = b.scenario
    if sc.seed is None or sc.schedule is None:
        raise scn.ScenarioError("multiple shooting needs [seed] and [schedule]")
    sched, X, orbit, cm = scn.seeded_patchpoints(b)
    log.info("seed orbit period %.12f, center mode nu=%.6f; %d patchpoints", orbit.period, cm.nu, sched.n_p)
    # make the seed continuous before adding frequency rows
    cont = ShootingProblem(b.model, sched, X, {}, [], b.options)
    pre = solve_multi(cont, callback=_log_iteration)
    if not pre.converged:
        raise NumericFailure(f"continuity pre-solve failed (residual {pre.continuity_residual:.3e})")
    X = pre.states
    initial = None
    if any(t.A_scale is not None for t in sc.targets):
        initial = _initial_components(b, b.model, sched, X)
    problem = ShootingProblem(b.model, sched, X, b.signals, scn.build_targets(sc, initial), b.options,
                              allow_frequency_rows=sc.solver.allow_frequency_rows)
    result = solve_multi(problem, callback=_log_iteration)
    extra = {"initial_components": {k: (None if c is None else {"nu_nd": c.nu, "A_nd": c.A, "theta_rad": c.theta})
                                    for k, c in (initial or {}).items()}}
    return _finish_solve(args, b, out, problem, result, extra)


def cmd_constellation(args, b: scn.Built, out: Path) -> int:
    sc = b.scenario
    targets = scn.build_targets(sc)
    cprob = scn.constellation_problem(b, targets, threads=args.threads)
    res = solve_constellation(cprob, callback=_log_iteration)
    states = [res.reference.x0] + [None if r is None else r.x0 for r in res.followers]
    order = [cprob.reference] + [i for i in range(len(cprob.satellites)) if i != cprob.reference]
    ordered = [None] * len(order)
    for i, x in zip(order, states):
        ordered[i] = x
    payload = {
        "converged": res.converged,
        "reference": cprob.reference,
        "frame": b.model.frame.value,
        "initial_states_nd": [p.states[0] for p in cprob.satellites],
        "states_nd": ordered,
        "reference_components": [{"label": t.label, "nu_nd": c.nu, "A_nd": c.A, "theta_rad": c.theta}
                                 for t, (_, c) in zip(res.reference.targets, res.reference.matched) if c is not None],
        "relative_phases_rad": res.relative_phases,
        "follower_errors": res.errors,
        "iterations": [res.reference.iterations] + [None if r is None else r.iterations for r in res.followers],
    }
    monitors = []
    for p, r in zip([cprob.satellites[cprob.reference]] + [cprob.satellites[i] for i in order[1:]],
                    [res.reference] + res.followers):
        if r is None:
            monitors.append(None)
            continue
        vp = ShootingProblem(p.model, p.schedule, r.states, p.signals, r.targets, p.options)
        monitors.append(verify_solution(vp, r.states))
    payload["verification"] = monitors
    if all(x is not None for x in ordered):
        years = sc.constellation.drift_years
        span = b.constants.years_to_nd(years)
        n = sc.constellation.drift_samples
        d0 = relative_phase_drift(b.model, np.array(payload["initial_states_nd"]), 0.0, span, n, cprob.reference,
                                  b.options.propagation)
        d1 = relative_phase_drift(b.model, np.array(ordered), 0.0, span, n, cprob.reference, b.options.propagation)
        payload["drift"] = {"span_years": years, "tracked_nd": float(d1.times[-1] - d1.times[0]),
                            "initial_secular_change_deg": np.degrees(d0.secular_change()),
                            "converged_secular_change_deg": np.degrees(d1.secular_change()),
                            "converged_range_deg": {"M": np.degrees(np.ptp(d1.dM, axis=1)),
                                                    "Omega": np.degrees(np.ptp(d1.dOmega, axis=1))}}
        for tag, d in (("initial", d0), ("converged", d1)):
            header = ["t_nd"] + [f"dM{k}_deg" for k in range(len(d.dM))] + [f"dOmega{k}_deg" for k in range(len(d.dM))]
            rows = np.column_stack([d.times, np.degrees(d.dM).T, np.degrees(d.dOmega).T])
            write_csv(out / f"drift_{tag}.csv", header, rows.tolist())
    write_json(out / "constellation.json", payload)
    if not res.converged:
        raise NumericFailure("constellation did not fully converge: " + "; ".join(e for e in res.errors if e))
    return EXIT_OK


# --- entry point -----------------------------------------------------------------


COMMANDS = {
    "propagate": (cmd_propagate, "propagate the scenario's initial state and write a trajectory CSV"),
    "spectrum": (cmd_spectrum, "windowed DFT of the scenario signals and detected peaks"),
    "refine": (cmd_refine, "refine the dominant frequency components of the scenario signals"),
    "correct-single": (cmd_correct_single, "single-shooting frequency-domain correction"),
    "correct-multi": (cmd_correct_multi, "multiple-shooting frequency-domain correction"),
    "constellation": (cmd_constellation, "phase a constellation relative to a reference satellite"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fdcorrect", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        csv_input = name in ("spectrum", "refine")
        p.add_argument("scenario", nargs="?" if csv_input else None,
                       help="scenario file (TOML/JSON) or bundled scenario name")
        p.add_argument("-o", "--out", default=None, help="output directory (default: out/<scenario name>)")
        p.add_argument("--profile", default=None, help="scenario profile to merge, e.g. 'ci'")
        p.add_argument("--constants", default=None,
                       help="constants override file (default: $FDCORRECT_CONSTANTS if set)")
        p.add_argument("--threads", type=int, default=1, help="cap on worker threads")
        p.add_argument("--emit-plots", action="store_true", help="also write plot-ready CSVs")
        p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
        if name in ("spectrum", "refine"):
            p.add_argument("--signal", default=None, help="restrict to one named signal")
            p.add_argument("--signal-csv", default=None, metavar="FILE",
                           help="analyse a signal CSV (columns t,q) instead of propagating a scenario")
        if name == "spectrum":
            p.add_argument("--peaks", type=int, default=20, help="number of peaks to report")
        if name == "refine":
            p.add_argument("--method", choices=("lnaff", "gmsc"), default=None, help="override refinement method")
            p.add_argument("--m", type=int, default=None, help="override number of components")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s",
                        stream=sys.stderr)
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    func = COMMANDS[args.command][0]
    t_start = time.perf_counter()
    try:
        if args.scenario is None:
            if not getattr(args, "signal_csv", None):
                raise scn.ScenarioError("give a scenario or --signal-csv")
            b = None
            out = Path(args.out) if args.out else Path("out") / Path(args.signal_csv).stem
        else:
            sc = scn.load_scenario(args.scenario, args.profile)
            b = scn.build(sc, args.constants, args.threads)
            out = Path(args.out) if args.out else Path("out") / sc.name
        out.mkdir(parents=True, exist_ok=True)
        code = func(args, b, out)
    except (scn.ScenarioError, ConfigurationError, FileNotFoundError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericFailure, PropagationError, RefinementError, PeakIdentityError, SingularityError,
            np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    log.info("%s finished in %.1f s", args.command, time.perf_counter() - t_start)
    return code


if __name__ == "__main__":
    sys.exit(main())
