"""Numerical propagation, uniform signal sampling and segment chaining.

Integration uses an embedded Runge-Kutta 8(5,3) pair with 7th-order dense
output. The CR3BP and analytic-ephemeris models run through a compiled
kernel; other ephemeris providers fall back to :func:`scipy.integrate.solve_ivp`.
"""

from __future__ import annotations

import csv
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.integrate import solve_ivp

from . import _kernels
from .dynamics import DynamicsModel
from .frames import FrameTag, StateVector6

__all__ = [
    "PropagationOptions",
    "PropagationError",
    "Trajectory",
    "VariationalTrajectory",
    "SignalExtractor",
    "SignalPartials",
    "SampledSignal",
    "PatchpointSchedule",
    "SegmentPropagation",
    "propagate",
    "propagate_with_stm",
    "sample_signal",
    "sample_states",
    "stroboscopic_sample",
    "propagate_segments",
    "frame_maps",
    "write_trajectory_csv",
    "write_trajectory_binary",
    "read_trajectory_binary",
    "STATE_COLUMNS",
]

STATE_COLUMNS = ("x", "y", "z", "vx", "vy", "vz")
_COMPONENT_INDEX = {name: k for k, name in enumerate(STATE_COLUMNS)}


@dataclass(frozen=True)
class PropagationOptions:
    """Integrator settings; tolerances apply to state and STM components alike."""

    rtol: float = 1e-12
    atol: float = 1e-12
    max_steps: int = 50_000_000
    threads: int = 1

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0):
            raise ValueError("tolerances must be positive")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")


class PropagationError(RuntimeError):
    """Integration failed; ``segment`` identifies the shooting segment if any."""

    def __init__(self, message: str, segment: int | None = None):
        if segment is not None:
            message = f"segment {segment}: {message}"
        super().__init__(message)
        self.segment = segment


def _state_array(model: DynamicsModel, s0) -> np.ndarray:
    if isinstance(s0, StateVector6):
        if s0.frame != model.frame:
            raise ValueError(f"{model.model_id.value} states must be {model.frame.value}, got {s0.frame.value}")
        return s0.as_array()
    x = np.asarray(s0, dtype=float)
    if x.shape != (6,) or not np.all(np.isfinite(x)):
        raise ValueError("initial state must be 6 finite numbers")
    return x


def _run(model: DynamicsModel, y0: np.ndarray, t0: float, tf: float, t_eval: np.ndarray,
         options: PropagationOptions, store_dense: bool, segment: int | None = None):
    """Integrate and return ``(y_final, y_eval, dense)``; dense may be None."""
    t_eval = np.ascontiguousarray(t_eval, dtype=float)
    if not (math.isfinite(t0) and math.isfinite(tf)):
        raise ValueError("time span must be finite")
    if t_eval.size:
        lo, hi = min(t0, tf), max(t0, tf)
        if t_eval.min() < lo or t_eval.max() > hi:
            raise ValueError("requested sample times exceed the propagated span")
        d = np.diff(t_eval)
        if (tf >= t0 and np.any(d < 0)) or (tf < t0 and np.any(d > 0)):
            raise ValueError("sample times must be monotone along the integration direction")
    kern = model.kernel()
    if kern is not None:
        code, p = kern
        out = _kernels.integrate(code, p, float(t0), np.ascontiguousarray(y0, dtype=float), float(tf),
                                 options.rtol, options.atol, t_eval, options.max_steps, store_dense)
        status, t_end, y_end, y_eval = out[0], out[1], out[2], out[3]
        if status == _kernels.STATUS_MAX_STEPS:
            raise PropagationError(f"step limit reached at t = {t_end:.6g}", segment)
        if status == _kernels.STATUS_STEP_COLLAPSE:
            raise PropagationError(f"step size collapsed at t = {t_end:.6g} (singularity or NaN)", segment)
        dense = out[6:10] if store_dense else None
        return y_end, y_eval, dense
    # pure Python fallback for external ephemerides
    if tf == t0:
        return y0.copy(), np.repeat(y0[None, :], t_eval.size, axis=0), None
    sol = solve_ivp(model.rhs, (t0, tf), y0, method="DOP853", rtol=options.rtol, atol=options.atol,
                    dense_output=True)
    if not sol.success:
        raise PropagationError(sol.message, segment)
    y_eval = sol.sol(t_eval).T if t_eval.size else np.empty((0, y0.size))
    return sol.y[:, -1].copy(), y_eval, sol.sol if store_dense else None


class Trajectory:
    """Completed propagation with dense output; read-only and thread-safe.

    Calling the trajectory with times returns states in the model frame.
    """

    def __init__(self, model: DynamicsModel, x0: np.ndarray, t0: float, tf: float,
                 options: PropagationOptions, y_end: np.ndarray, dense):
        self.model = model
        self.x0 = np.array(x0, dtype=float)
        self.t0 = float(t0)
        self.tf = float(tf)
        self.options = options
        self.y_end = np.array(y_end)
        self._dense = dense

    @property
    def frame(self) -> FrameTag:
        return self.model.frame

    @property
    def n_steps(self) -> int:
        if isinstance(self._dense, tuple):
            return self._dense[0].size
        return 0

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        tt = np.atleast_1d(t)
        lo, hi = min(self.t0, self.tf), max(self.t0, self.tf)
        tol = 1e-12 * max(1.0, abs(lo), abs(hi))
        if tt.size and (tt.min() < lo - tol or tt.max() > hi + tol):
            raise ValueError("requested time outside the propagated span")
        if self.tf == self.t0:
            out = np.repeat(self.x0[None, :], tt.size, axis=0)
        elif isinstance(self._dense, tuple):
            out = np.empty((tt.size, 6))
            _kernels.dense_eval_many(np.ascontiguousarray(tt), *self._dense, self.tf, self.y_end, out)
        else:
            out = self._dense(tt).T
        return out[0] if scalar else out

    def state(self, t: float) -> StateVector6:
        return StateVector6.from_array(self(t), self.frame, t)

    @property
    def final_state(self) -> StateVector6:
        return StateVector6.from_array(self.y_end, self.frame, self.tf)


@dataclass
class VariationalTrajectory:
    """States and STMs at requested times, plus the final state and STM."""

    times: np.ndarray
    states: np.ndarray
    stms: np.ndarray
    final_state: np.ndarray
    final_stm: np.ndarray
    t0: float
    tf: float


def propagate(model: DynamicsModel, s0, t_span, options: PropagationOptions | None = None,
              t0: float | None = None) -> Trajectory:
    """Propagate a state and keep dense output.

    ``t_span`` is ``(t0, tf)`` or a scalar duration measured from ``t0``
    (default: the state's epoch, or zero).
    """
    options = options or PropagationOptions()
    x0 = _state_array(model, s0)
    if np.ndim(t_span) == 0:
        start = t0 if t0 is not None else (s0.epoch if isinstance(s0, StateVector6) else 0.0)
        t_span = (start, start + float(t_span))
    ta, tb = map(float, t_span)
    y_end, _, dense = _run(model, x0, ta, tb, np.empty(0), options, store_dense=True)
    return Trajectory(model, x0, ta, tb, options, y_end, dense)


def propagate_with_stm(model: DynamicsModel, s0, t_span, t_eval=None,
                       options: PropagationOptions | None = None) -> VariationalTrajectory:
    """Propagate state and STM jointly; Phi(t0) = I."""
    options = options or PropagationOptions()
    x0 = _state_array(model, s0)
    ta, tb = map(float, t_span)
    y0 = np.concatenate([x0, np.eye(6).ravel()])
    te = np.empty(0) if t_eval is None else np.asarray(t_eval, dtype=float)
    y_end, y_eval, _ = _run(model, y0, ta, tb, te, options, store_dense=False)
    return VariationalTrajectory(
        times=te, states=y_eval[:, :6], stms=y_eval[:, 6:].reshape(-1, 6, 6),
        final_state=y_end[:6].copy(), final_stm=y_end[6:].reshape(6, 6).copy(), t0=ta, tf=tb,
    )


# --- signal extraction ------------------------------------------------------------


def frame_maps(model: DynamicsModel, frame: FrameTag, times) -> tuple[np.ndarray, np.ndarray]:
    """Affine maps taking model-frame states to ``frame`` at each time.

    Returns ``(M, b)`` with shapes ``(n, 6, 6)`` and ``(n, 6)`` so that the
    state in ``frame`` is ``M @ x + b``.
    """
    frame = FrameTag(frame)
    times = np.atleast_1d(np.asarray(times, dtype=float))
    n = times.size
    mu = model.mu
    src = model.frame
    eye = np.broadcast_to(np.eye(6), (n, 6, 6)).copy()
    zero = np.zeros((n, 6))
    if frame == src:
        return eye, zero
    moon = np.array([1.0 - mu, 0.0, 0.0, 0.0, 0.0, 0.0])

    def rot_blocks(ts):
        c, s = np.cos(ts), np.sin(ts)
        R = np.zeros((ts.size, 3, 3))
        R[:, 0, 0], R[:, 0, 1], R[:, 1, 0], R[:, 1, 1], R[:, 2, 2] = c, -s, s, c, 1.0
        Rd = np.zeros((ts.size, 3, 3))
        Rd[:, 0, 0], Rd[:, 0, 1], Rd[:, 1, 0], Rd[:, 1, 1] = -s, -c, c, -s
        return R, Rd

    def brf_to_rot(R, Rd, l=None, ld=None):
        # Moon-centered rotated state: [lR, 0; l'R + lR', lR] (rho - rho_M)
        if l is None:
            l, ld = np.ones(R.shape[0]), np.zeros(R.shape[0])
        M = np.zeros((R.shape[0], 6, 6))
        M[:, :3, :3] = l[:, None, None] * R
        M[:, 3:, 3:] = l[:, None, None] * R
        M[:, 3:, :3] = ld[:, None, None] * R + l[:, None, None] * Rd
        return M

    def provider_blocks(ts):
        eph = model.ephemeris
        if eph is not None and type(eph).__name__ in ("CircularEphemeris", "BicircularEphemeris"):
            R, Rd = rot_blocks(ts)
            return R, Rd, np.ones(ts.size), np.zeros(ts.size)
        R = np.empty((ts.size, 3, 3))
        Rd = np.empty((ts.size, 3, 3))
        l = np.empty(ts.size)
        ld = np.empty(ts.size)
        for k, t in enumerate(ts):
            R[k], Rd[k] = eph.rotating_dcm(t)
            l[k], ld[k] = eph.earth_moon_distance(t)
        return R, Rd, l, ld

    def inv_affine(M, b):
        Mi = np.linalg.inv(M)
        return Mi, -np.einsum("nij,nj->ni", Mi, b)

    # maps from BRF to each frame
    if src == FrameTag.BRF:
        R, Rd = rot_blocks(times)
        if frame == FrameTag.EOF:
            M = brf_to_rot(R, Rd)
        else:
            if model.ephemeris is None:
                R, Rd, l, ld = rot_blocks(times) + (np.ones(n), np.zeros(n))
            else:
                R, Rd, l, ld = provider_blocks(times)
            M = brf_to_rot(R, Rd, l, ld)
        return M, -np.einsum("nij,j->ni", M, moon)
    # source is MCI
    R, Rd, l, ld = provider_blocks(times)
    M_brf = brf_to_rot(R, Rd, l, ld)
    M_inv, b_inv = inv_affine(M_brf, -np.einsum("nij,j->ni", M_brf, moon))
    if frame == FrameTag.BRF:
        return M_inv, b_inv
    Re, Rde = rot_blocks(times)
    M_eof = brf_to_rot(Re, Rde)
    M = np.einsum("nij,njk->nik", M_eof, M_inv)
    b = np.einsum("nij,nj->ni", M_eof, b_inv) - np.einsum("nij,j->ni", M_eof, moon)
    return M, b


@dataclass(frozen=True)
class SignalExtractor:
    """Scalar signal ``q = component`` of the state expressed in ``frame``."""

    component: str = "x"
    frame: FrameTag = FrameTag.BRF

    def __post_init__(self):
        if self.component not in _COMPONENT_INDEX:
            raise ValueError(f"component must be one of {STATE_COLUMNS}")
        object.__setattr__(self, "frame", FrameTag(self.frame))

    @property
    def index(self) -> int:
        return _COMPONENT_INDEX[self.component]

    def describe(self) -> str:
        return f"{self.component}[{self.frame.value}]"

    def evaluate(self, model: DynamicsModel, times, states, with_gradient: bool = False):
        """Signal values and, optionally, the gradients dq/dx (n x 6)."""
        M, b = frame_maps(model, self.frame, times)
        row = M[:, self.index, :]
        q = np.einsum("nj,nj->n", row, np.atleast_2d(states)) + b[:, self.index]
        return (q, row) if with_gradient else q


@dataclass
class SignalPartials:
    """Per-sample gradients of a signal with respect to free states.

    Sample ``i`` depends only on the free state of segment ``segment[i]``
    through ``rows[i]``; single shooting uses one segment.
    """

    rows: np.ndarray
    segment: np.ndarray
    n_blocks: int

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=float)
        self.segment = np.asarray(self.segment, dtype=np.int64)
        if self.segment.size and np.any(np.diff(self.segment) < 0):
            raise ValueError("segment indices must be nondecreasing in time")
        self._bounds = np.searchsorted(self.segment, np.arange(self.n_blocks + 1))

    @property
    def width(self) -> int:
        return 6 * self.n_blocks

    def segment_slices(self):
        for b in range(self.n_blocks):
            yield b, slice(self._bounds[b], self._bounds[b + 1])

    def contract(self, W: np.ndarray) -> np.ndarray:
        """Return ``W @ dq/dX`` for weights ``W`` of shape ``(k, N)``."""
        W = np.atleast_2d(W)
        out = np.zeros((W.shape[0], self.width))
        for b, sl in self.segment_slices():
            if sl.stop > sl.start:
                out[:, 6 * b:6 * b + 6] = W[:, sl] @ self.rows[sl]
        return out

    def dense(self) -> np.ndarray:
        """Full ``N x 6 n_blocks`` matrix (small problems only)."""
        return self.contract(np.eye(self.rows.shape[0]))

    def scaled(self, c: float) -> "SignalPartials":
        return SignalPartials(c * self.rows, self.segment, self.n_blocks)


@dataclass
class SampledSignal:
    """Uniform samples ``q(t0 + dt * i)``, ``i = 0..N-1``.

    ``times`` are relative (``dt * i``); the DFT and the phases of refined
    components refer to the first sample.
    """

    values: np.ndarray
    dt: float
    t0: float = 0.0
    source: str = ""
    partials: SignalPartials | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1:
            raise ValueError("signal values must be one-dimensional")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError("sample spacing must be positive")
        if self.values.size % 2:
            raise ValueError("the sample count must be even")
        if self.partials is not None and self.partials.rows.shape[0] != self.values.size:
            raise ValueError("partials must have one row per sample")

    @property
    def N(self) -> int:
        return self.values.size

    @property
    def span(self) -> float:
        return self.dt * self.N

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.N)

    @property
    def absolute_times(self) -> np.ndarray:
        return self.t0 + self.times

    def scaled(self, c: float) -> "SampledSignal":
        p = None if self.partials is None else self.partials.scaled(c)
        return SampledSignal(c * self.values, self.dt, self.t0, self.source, p)


def sample_times(t0: float, N: int, dt: float) -> np.ndarray:
    return t0 + dt * np.arange(N)


def sample_states(trajectory: Trajectory, N: int, dt: float, t0: float | None = None) -> np.ndarray:
    t0 = trajectory.t0 if t0 is None else t0
    return trajectory(sample_times(t0, N, dt))


def sample_signal(source, extractor: SignalExtractor, N: int, dt: float, t0: float | None = None,
                  with_partials: bool = False) -> SampledSignal:
    """Sample a scalar signal at ``t0 + dt * i`` from a trajectory.

    With ``with_partials`` the state and STM are re-propagated to the sample
    times and ``dq(t_i)/dx0`` is attached.
    """
    if N % 2 or N <= 0:
        raise ValueError("the sample count must be positive and even")
    traj: Trajectory = source
    t0 = traj.t0 if t0 is None else float(t0)
    times = sample_times(t0, N, dt)
    lo, hi = min(traj.t0, traj.tf), max(traj.t0, traj.tf)
    tol = 1e-12 * max(1.0, abs(hi))
    if times[0] < lo - tol or times[-1] > hi + tol:
        raise ValueError("sample times exceed the propagated span")
    model = traj.model
    if not with_partials:
        states = traj(times)
        q = extractor.evaluate(model, times, states)
        return SampledSignal(q, dt, t0, extractor.describe())
    if t0 != traj.t0:
        raise ValueError("partials are taken with respect to the initial state; sample from t0")
    var = propagate_with_stm(model, traj.x0, (traj.t0, traj.tf), times, traj.options)
    q, grad = extractor.evaluate(model, times, var.states, with_gradient=True)
    rows = np.einsum("nj,njk->nk", grad, var.stms)
    partials = SignalPartials(rows, np.zeros(N, dtype=np.int64), 1)
    return SampledSignal(q, dt, t0, extractor.describe(), partials)


def stroboscopic_sample(trajectory: Trajectory, period: float, extractor: SignalExtractor,
                        N: int | None = None, t0: float | None = None) -> SampledSignal:
    """Sample every ``period`` time units (a stroboscopic map).

    By default as many returns as fit in the span are used, rounded down to
    an even count.
    """
    if not period > 0:
        raise ValueError("strobe period must be positive")
    t0 = trajectory.t0 if t0 is None else t0
    avail = int(math.floor((trajectory.tf - t0) / period * (1 + 1e-14))) + 1
    if N is None:
        N = avail - (avail % 2)
    if N > avail:
        raise ValueError(f"span holds only {avail} strobe returns, {N} requested")
    return sample_signal(trajectory, extractor, N, period, t0=t0)


# --- multiple shooting ------------------------------------------------------------


@dataclass(frozen=True)
class PatchpointSchedule:
    """Fixed patchpoint epochs ``tau_0 < ... < tau_{n_p}``."""

    epochs: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.epochs, dtype=float)
        if e.ndim != 1 or e.size < 2:
            raise ValueError("a schedule needs at least two epochs")
        if np.any(np.diff(e) <= 0):
            raise ValueError("epochs must be strictly increasing")
        object.__setattr__(self, "epochs", e)

    @classmethod
    def uniform(cls, t0: float, duration: float, n_segments: int) -> "PatchpointSchedule":
        return cls(t0 + duration * np.arange(n_segments + 1) / n_segments)

    @property
    def n_p(self) -> int:
        return self.epochs.size - 1

    @property
    def durations(self) -> np.ndarray:
        return np.diff(self.epochs)

    def segment_of(self, times) -> np.ndarray:
        """Segment index of each time: ``tau_s <= t < tau_{s+1}``; the final epoch maps to the last segment."""
        idx = np.searchsorted(self.epochs, np.asarray(times, dtype=float), side="right") - 1
        return np.clip(idx, 0, self.n_p - 1)


@dataclass
class SegmentPropagation:
    """Segment endpoints and STMs, optionally with per-sample states and local STMs."""

    end_states: np.ndarray
    end_stms: np.ndarray
    sample_times: np.ndarray | None = None
    sample_states: np.ndarray | None = None
    sample_stms: np.ndarray | None = None
    sample_segment: np.ndarray | None = None

    def continuity(self, states: np.ndarray) -> np.ndarray:
        """Stacked residuals ``x_end(s) - x_{s+1}``."""
        return (self.end_states[:-1] - np.asarray(states)[1:]).ravel()


def propagate_segments(model: DynamicsModel, schedule: PatchpointSchedule, states,
                       sample_times=None, options: PropagationOptions | None = None,
                       with_stm: bool = True) -> SegmentPropagation:
    """Propagate each patchpoint over its segment, in parallel when threads > 1."""
    options = options or PropagationOptions()
    states = np.asarray(states, dtype=float)
    if states.shape != (schedule.n_p, 6):
        raise ValueError(f"expected {schedule.n_p} patchpoint states")
    if sample_times is not None:
        sample_times = np.asarray(sample_times, dtype=float)
        seg = schedule.segment_of(sample_times)
    else:
        seg = None

    def one(s):
        t_a, t_b = schedule.epochs[s], schedule.epochs[s + 1]
        te = np.empty(0) if seg is None else sample_times[seg == s]
        if with_stm:
            y0 = np.concatenate([states[s], np.eye(6).ravel()])
        else:
            y0 = states[s].copy()
        y_end, y_eval, _ = _run(model, y0, t_a, t_b, te, options, store_dense=False, segment=s)
        return y_end, y_eval

    if options.threads > 1 and schedule.n_p > 1:
        with ThreadPoolExecutor(max_workers=options.threads) as pool:
            results = list(pool.map(one, range(schedule.n_p)))
    else:
        results = [one(s) for s in range(schedule.n_p)]
    ends = np.array([r[0][:6] for r in results])
    stms = np.array([r[0][6:].reshape(6, 6) if with_stm else np.full((6, 6), np.nan) for r in results])
    out = SegmentPropagation(ends, stms)
    if seg is not None:
        ys = np.concatenate([r[1] for r in results], axis=0)
        out.sample_times = sample_times
        out.sample_states = ys[:, :6]
        out.sample_stms = ys[:, 6:].reshape(-1, 6, 6) if with_stm else None
        out.sample_segment = seg
    return out


# --- export -----------------------------------------------------------------------

_MAGIC = b"FDCTRAJ\x00"
_VERSION = 1


def write_trajectory_csv(path, times, states, columns=STATE_COLUMNS, frame: str = "") -> None:
    """Write ``t`` plus state columns; the first line records the format version."""
    times = np.atleast_1d(times)
    states = np.atleast_2d(states)
    with open(path, "w", newline="") as fh:
        fh.write(f"# format_version=1 frame={frame}\n")
        w = csv.writer(fh)
        w.writerow(("t",) + tuple(columns))
        for t, row in zip(times, states):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in row])


def write_trajectory_binary(path, t0: float, dt: float, data: np.ndarray, columns=STATE_COLUMNS) -> None:
    """Binary cache of uniformly sampled data.

    Layout (little-endian): 8-byte magic ``FDCTRAJ\\0``, uint32 version,
    uint64 N, float64 dt, float64 t0, uint32 column count, uint32 byte length
    of the comma-joined UTF-8 column names, the names, then ``N x ncols``
    float64 values row-major.
    """
    data = np.ascontiguousarray(np.atleast_2d(data), dtype="<f8")
    names = ",".join(columns).encode()
    if data.shape[1] != len(columns):
        raise ValueError("column count does not match data")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IQddII", _VERSION, data.shape[0], dt, t0, len(columns), len(names)))
        fh.write(names)
        fh.write(data.tobytes())


def read_trajectory_binary(path) -> dict:
    raw = Path(path).read_bytes()
    if raw[:8] != _MAGIC:
        raise ValueError("not a trajectory cache file")
    head = struct.calcsize("<IQddII")
    version, N, dt, t0, ncol, nlen = struct.unpack("<IQddII", raw[8:8 + head])
    if version != _VERSION:
        raise ValueError(f"unsupported cache version {version}")
    off = 8 + head
    columns = tuple(raw[off:off + nlen].decode().split(","))
    off += nlen
    data = np.frombuffer(raw[off:], dtype="<f8").reshape(N, ncol).copy()
    return {"version": version, "N": N, "dt": dt, "t0": t0, "columns": columns, "data": data}
