import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fdcorrect.frames import wrap_pi
from fdcorrect.propagation import SampledSignal
from fdcorrect.refine import (FrequencyComponent, GmscMode, QuasiPeriodicModel, RefinementError, gmsc_constraints,
                              gmsc_jacobian, lnaff_constraints, lnaff_jacobian, refine_near, refine_sequential,
                              select_cs_row)

N, T = 4096, 400.0
DT = T / N
TIMES = DT * np.arange(N)
TONES = [(1.2345, 1.0, 0.3), (2.71828, 0.4, 5.0), (4.0123, 0.07, 2.5)]


def signal_of(tones, A0=0.0, t0=0.0, n=N, dt=DT):
    t = dt * np.arange(n)
    q = A0 + sum(A * np.cos(nu * t + th) for nu, A, th in tones)
    return SampledSignal(q, dt, t0, "synthetic")


def phase_err(a, b):
    return abs(wrap_pi(a - b))


def fd_jac(fun, x, h=1e-7):
    x = np.asarray(x, dtype=float)
    cols = []
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h * max(1.0, abs(x[k]))
        cols.append((fun(x + e) - fun(x - e)) / (2 * e[k]))
    return np.array(cols).T


def test_lnaff_fit_rows_vanish_at_truth():
    sig = signal_of(TONES[:1])
    F = lnaff_constraints(sig, TONES[0])
    assert np.all(np.abs(F[1:]) < 1e-13)
    assert abs(F[0]) < 1e-6


def test_gmsc_constraints_vanish_at_truth():
    sig = signal_of(TONES, A0=0.0)
    df = 2 * math.pi / T
    modes = [GmscMode(round(nu / df), round(nu / df) + 1, "C") for nu, _, _ in TONES]
    F = gmsc_constraints(sig, TONES, modes, subtract_mean=False)
    assert np.max(np.abs(F)) < 1e-14


@pytest.mark.parametrize("xi", [(1.2345, 1.0, 0.3), (1.23, 0.9, 0.35)])
def test_lnaff_jacobian_matches_finite_differences(xi):
    sig = signal_of(TONES[:1])
    J = lnaff_jacobian(sig, xi)
    fd = fd_jac(lambda x: lnaff_constraints(sig, x), xi)
    assert np.allclose(J, fd, rtol=1e-6, atol=1e-6 * np.max(np.abs(J)))
    assert J[0, 1] == 0.0 and J[0, 2] == 0.0


def test_gmsc_jacobian_matches_finite_differences():
    sig = signal_of(TONES, A0=0.2)
    df = 2 * math.pi / T
    modes = [GmscMode(79, 78, "C"), GmscMode(173, 174, "S"), GmscMode(255, 256, "C")]
    X = np.array([[1.23, 0.98, 0.31], [2.72, 0.41, 4.9], [4.01, 0.071, 2.45]])
    J = gmsc_jacobian(sig, X, modes)
    assert J.shape == (9, 9)
    fd = fd_jac(lambda x: gmsc_constraints(sig, x.reshape(3, 3), modes), X.ravel())
    assert np.allclose(J, fd, rtol=1e-6, atol=1e-6 * np.max(np.abs(J)))
    assert [m.peak_bin for m in modes] == [round(nu / df) for nu, _, _ in TONES]


@pytest.mark.parametrize("method", ["lnaff", "gmsc"])
def test_three_tone_recovery(method):
    res = refine_sequential(signal_of(TONES, A0=0.3), 3, method=method)
    assert res.converged and res.method == method
    tol = {"lnaff": (1e-11, 1e-9, 1e-9), "gmsc": (1e-13, 1e-13, 1e-12)}[method]
    for c, (nu, A, th) in zip(res.components, TONES):
        assert abs(c.nu - nu) < tol[0]
        assert abs(c.A - A) < tol[1]
        assert phase_err(c.theta, th) < tol[2]
    assert res.model.A0 == pytest.approx(np.mean(signal_of(TONES, A0=0.3).values))


def test_methods_agree():
    sig = signal_of(TONES, A0=-0.1)
    a = refine_sequential(sig, 3, method="lnaff")
    b = refine_sequential(sig, 3, method="gmsc")
    for x, y in zip(a.components, b.components):
        assert abs(x.nu - y.nu) < 1e-11


def test_lnaff_jacobian_well_conditioned_at_solution():
    res = refine_sequential(signal_of(TONES), 1, method="lnaff")
    assert np.linalg.cond(lnaff_jacobian(signal_of(TONES), res.raw[0])) < 1e6


def test_gmsc_jacobian_well_conditioned_at_solution():
    sig = signal_of(TONES)
    res = refine_sequential(sig, 3, method="gmsc")
    J = gmsc_jacobian(sig, res.raw, res.modes)
    assert np.linalg.cond(J) < 1e6


def test_cs_row_minimizes_inverse_norm():
    sig = signal_of(TONES[:1])
    df = 2 * math.pi / T
    k = round(TONES[0][0] / df)
    for nb in (k - 1, k + 1):
        norms = {}
        for row in "CS":
            J = gmsc_jacobian(sig, [TONES[0]], [GmscMode(k, nb, row)])
            norms[row] = np.linalg.norm(np.linalg.inv(J), 2)
        assert select_cs_row(sig, TONES[0], k, nb) == min(norms, key=norms.get)


def test_cs_row_flips_with_phase():
    # the better-conditioned neighbor row depends on the phase of the mode
    df = 2 * math.pi / T
    nu = 60.3 * df
    rows = set()
    for th in np.linspace(0, math.pi, 9):
        rows.add(select_cs_row(signal_of([(nu, 1.0, th)]), (nu, 1.0, th), 60, 61))
    assert rows == {"C", "S"}


def test_invalid_mode_row():
    with pytest.raises(ValueError):
        GmscMode(3, 4, "X")


@settings(max_examples=20)
@given(st.integers(1, 200), st.sampled_from(["lnaff", "gmsc"]))
def test_time_origin_shift_covariance(shift, method):
    # delaying the window start rotates each phase by nu * delta
    delta = shift * DT
    t = DT * np.arange(N)
    base = sum(A * np.cos(nu * t + th) for nu, A, th in TONES)
    moved = sum(A * np.cos(nu * (t + delta) + th) for nu, A, th in TONES)
    a = refine_sequential(SampledSignal(base, DT, 0.0), 3, method=method)
    b = refine_sequential(SampledSignal(moved, DT, delta), 3, method=method)
    for x, y in zip(a.components, b.components):
        assert abs(x.nu - y.nu) < 1e-10
        assert phase_err(x.shifted(delta).theta, y.theta) < 1e-8


def test_seeded_refinement_follows_roots():
    sig = signal_of(TONES)
    base = refine_sequential(sig, 3, method="gmsc")
    q = sig.values + 1e-6 * np.cos(1.25 * TIMES)
    again = refine_sequential(SampledSignal(q, DT, 0.0), 3, method="gmsc", seed=base)
    assert [m.peak_bin for m in again.modes] == [m.peak_bin for m in base.modes]
    assert abs(again.components[0].nu - base.components[0].nu) < 1e-4


def test_strict_raises_on_failure():
    sig = signal_of(TONES)
    with pytest.raises(RefinementError):
        refine_sequential(sig, 1, max_iter=0, strict=True)
    res = refine_sequential(sig, 1, max_iter=0)
    assert not res.converged


def test_argument_validation():
    sig = signal_of(TONES)
    with pytest.raises(ValueError):
        refine_sequential(sig, 1, method="naff")
    with pytest.raises(ValueError):
        refine_sequential(sig, 0)


def test_refine_near_finds_weak_mode():
    c = refine_near(signal_of(TONES), 4.0)
    assert abs(c.nu - 4.0123) < 1e-10 and c.A == pytest.approx(0.07, abs=1e-10)
    with pytest.raises(RefinementError):
        refine_near(signal_of(TONES), 8.0)


def test_model_helpers():
    c = FrequencyComponent(1.0, -2.0, 0.5).canonical()
    assert c.A == 2.0 and c.theta == pytest.approx(0.5 + math.pi)
    model = QuasiPeriodicModel(0.5, [FrequencyComponent(1.0, 1.0, 0.0), FrequencyComponent(3.0, 0.1, 0.0)])
    assert model.evaluate(0.0) == pytest.approx(1.6)
    assert model.nearest(2.8)[0] == 1
    with pytest.raises(RefinementError):
        QuasiPeriodicModel(0.0).nearest(1.0)
