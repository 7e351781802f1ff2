import math
import time

import numpy as np
import pytest

from conftest import DRO_PERIOD, DRO_STATE
from fdcorrect.dynamics import hfem_model
from fdcorrect.frames import FrameTag, StateVector6, brf_to_mci
from fdcorrect.propagation import (PatchpointSchedule, PropagationOptions, SignalExtractor, frame_maps, propagate,
                                   propagate_segments, propagate_with_stm, read_trajectory_binary, sample_signal,
                                   stroboscopic_sample, write_trajectory_binary, write_trajectory_csv)
from fdcorrect.spectrum import dft_at_bins


def test_periodic_closure(cr3bp):
    t = time.perf_counter()
    tr = propagate(cr3bp, DRO_STATE, DRO_PERIOD, PropagationOptions(1e-13, 1e-13))
    assert time.perf_counter() - t < 5.0
    assert np.max(np.abs(tr.final_state.as_array() - DRO_STATE)) < 1e-10


def test_zero_span_returns_initial_state(cr3bp):
    tr = propagate(cr3bp, DRO_STATE, 0.0)
    assert np.array_equal(tr.final_state.as_array(), DRO_STATE)
    assert np.array_equal(tr(0.0), DRO_STATE)


def test_out_of_span_request_rejected(cr3bp):
    tr = propagate(cr3bp, DRO_STATE, 1.0)
    with pytest.raises(ValueError):
        tr(1.5)


def test_backward_propagation_roundtrip(cr3bp):
    fwd = propagate(cr3bp, DRO_STATE, 1.0)
    back = propagate(cr3bp, fwd.final_state.as_array(), (1.0, 0.0))
    assert np.max(np.abs(back.final_state.as_array() - DRO_STATE)) < 1e-10


def test_dense_output_matches_restart(cr3bp):
    tr = propagate(cr3bp, DRO_STATE, 1.6)
    direct = propagate(cr3bp, DRO_STATE, 0.7).final_state.as_array()
    assert np.max(np.abs(tr(0.7) - direct)) < 1e-10


def test_stm_identity_at_start(cr3bp):
    var = propagate_with_stm(cr3bp, DRO_STATE, (0.0, 1.0), t_eval=[0.0, 0.5])
    assert np.array_equal(var.stms[0], np.eye(6))


def _fd_stm(model, x0, t_span, h=1e-7):
    cols = []
    for k in range(6):
        e = np.zeros(6)
        e[k] = h
        plus = propagate(model, x0 + e, t_span).final_state.as_array()
        minus = propagate(model, x0 - e, t_span).final_state.as_array()
        cols.append((plus - minus) / (2 * h))
    return np.array(cols).T


def test_stm_matches_finite_differences_cr3bp(cr3bp):
    var = propagate_with_stm(cr3bp, DRO_STATE, (0.0, DRO_PERIOD))
    fd = _fd_stm(cr3bp, DRO_STATE, DRO_PERIOD)
    assert np.linalg.norm(var.final_stm - fd) / np.linalg.norm(fd) < 1e-5
    assert abs(np.linalg.det(var.final_stm) - 1.0) < 1e-9
    assert np.allclose(var.final_state, propagate(cr3bp, DRO_STATE, DRO_PERIOD).final_state.as_array(), atol=1e-10)


def test_stm_matches_finite_differences_hfem(hfem_bicircular, constants):
    from fdcorrect.ephemeris import BicircularEphemeris
    x0 = brf_to_mci(StateVector6.from_array(DRO_STATE, FrameTag.BRF), 0.0, BicircularEphemeris(constants)).as_array()
    var = propagate_with_stm(hfem_bicircular, x0, (0.0, 1.0))
    fd = _fd_stm(hfem_bicircular, x0, (0.0, 1.0))
    assert np.linalg.norm(var.final_stm - fd) / np.linalg.norm(fd) < 1e-5


@pytest.mark.parametrize("frame", [FrameTag.BRF, FrameTag.EOF, FrameTag.MCI])
def test_signal_partials_match_finite_differences(hfem_bicircular, constants, frame):
    from fdcorrect.ephemeris import BicircularEphemeris
    x0 = brf_to_mci(StateVector6.from_array(DRO_STATE, FrameTag.BRF), 0.0, BicircularEphemeris(constants)).as_array()
    ex = SignalExtractor("x", frame)
    N, dt = 64, 2.0 / 64

    def q(x):
        return sample_signal(propagate(hfem_bicircular, x, 2.0), ex, N, dt).values

    sig = sample_signal(propagate(hfem_bicircular, x0, 2.0), ex, N, dt, with_partials=True)
    D = sig.partials.dense()
    h = 1e-7
    fd = np.array([(q(x0 + h * e) - q(x0 - h * e)) / (2 * h) for e in np.eye(6)]).T
    assert np.linalg.norm(D - fd) / np.linalg.norm(fd) < 1e-5
    assert np.allclose(sig.values, q(x0), atol=1e-12)


def test_frame_maps_identity_in_model_frame(cr3bp):
    M, b = frame_maps(cr3bp, FrameTag.BRF, [0.0, 1.0])
    assert np.array_equal(M[1], np.eye(6)) and np.all(b == 0)


def test_sample_count_must_be_even(cr3bp):
    tr = propagate(cr3bp, DRO_STATE, 1.0)
    with pytest.raises(ValueError):
        sample_signal(tr, SignalExtractor("x"), 7, 0.1)
    with pytest.raises(ValueError):
        sample_signal(tr, SignalExtractor("x"), 20, 0.1)


def test_extractor_rejects_unknown_component():
    with pytest.raises(ValueError):
        SignalExtractor("w")


def test_segments_agree_with_single_propagation(cr3bp):
    sched = PatchpointSchedule.uniform(0.0, DRO_PERIOD, 4)
    tr = propagate(cr3bp, DRO_STATE, DRO_PERIOD)
    states = tr(sched.epochs[:-1])
    times = np.linspace(0, DRO_PERIOD, 40, endpoint=False)
    seg = propagate_segments(cr3bp, sched, states, sample_times=times)
    assert np.max(np.abs(seg.continuity(states))) < 1e-11
    assert np.max(np.abs(seg.sample_states - tr(times))) < 1e-11
    assert np.array_equal(seg.sample_segment, sched.segment_of(times))
    # composed local STMs reproduce the end-to-end STM
    Phi = np.eye(6)
    for P in seg.end_stms:
        Phi = P @ Phi
    full = propagate_with_stm(cr3bp, DRO_STATE, (0.0, DRO_PERIOD)).final_stm
    assert np.linalg.norm(Phi - full) / np.linalg.norm(full) < 1e-8


def test_schedule_validation():
    with pytest.raises(ValueError):
        PatchpointSchedule(np.array([0.0, 1.0, 1.0]))
    with pytest.raises(ValueError):
        PatchpointSchedule(np.array([0.0]))
    sched = PatchpointSchedule.uniform(0.0, 3.0, 3)
    assert list(sched.segment_of([0.0, 1.0, 2.999, 3.0])) == [0, 1, 2, 2]


def test_stroboscopic_sampling_aliases_the_orbit_frequency(cr3bp):
    # a strobe at a period slightly off the orbit period shows the beat frequency
    T = DRO_PERIOD * 1.01
    tr = propagate(cr3bp, DRO_STATE, 200 * T)
    sig = stroboscopic_sample(tr, T, SignalExtractor("x"))
    assert sig.N == 200
    dft = dft_at_bins(sig)
    k = np.argmax(dft.amplitude[1:]) + 1
    beat = abs(1 / DRO_PERIOD - 1 / T) * 2 * math.pi
    aliased = abs(((1 / DRO_PERIOD) * T) % 1.0)
    aliased = min(aliased, 1 - aliased) * 2 * math.pi / T
    assert dft.bins[k] == pytest.approx(aliased, abs=1.5 * dft.df)
    assert aliased == pytest.approx(beat, rel=1e-2)


def test_doubling_sample_count_keeps_bins_aligned(cr3bp):
    tr = propagate(cr3bp, DRO_STATE, 8.0)
    a = dft_at_bins(sample_signal(tr, SignalExtractor("x"), 64, 8.0 / 64))
    b = dft_at_bins(sample_signal(tr, SignalExtractor("x"), 128, 8.0 / 128))
    assert a.df == pytest.approx(b.df, rel=1e-14)
    assert np.allclose(a.bins, b.bins[:a.bins.size])


def test_binary_cache_roundtrip(tmp_path, cr3bp):
    data = propagate(cr3bp, DRO_STATE, 1.0)(np.linspace(0, 1, 11))
    path = tmp_path / "traj.bin"
    write_trajectory_binary(path, 0.0, 0.1, data)
    back = read_trajectory_binary(path)
    assert back["N"] == 11 and back["dt"] == 0.1 and back["version"] == 1
    assert np.array_equal(back["data"], data)
    (tmp_path / "bad.bin").write_bytes(b"nope")
    with pytest.raises(ValueError):
        read_trajectory_binary(tmp_path / "bad.bin")


def test_csv_export_is_lossless(tmp_path, cr3bp):
    times = np.linspace(0, 1, 5)
    data = propagate(cr3bp, DRO_STATE, 1.0)(times)
    path = tmp_path / "traj.csv"
    write_trajectory_csv(path, times, data, frame="BRF")
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# format_version=1")
    back = np.loadtxt(path, delimiter=",", skiprows=2)
    assert np.array_equal(back[:, 0], times) and np.array_equal(back[:, 1:], data)


def test_invalid_options():
    with pytest.raises(ValueError):
        PropagationOptions(atol=0.0)


def test_two_body_radius(circular, constants):
    model = hfem_model(circular, include_earth=False, include_sun=False, constants=constants)
    r = 0.03
    v = math.sqrt(constants.mu_moon / r)
    tr = propagate(model, [r, 0, 0, 0, 0, v], 5.0)
    assert np.max(np.abs(np.linalg.norm(tr(np.linspace(0, 5, 101))[:, :3], axis=1) - r)) < 1e-9
