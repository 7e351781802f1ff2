import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import DRO_PERIOD, DRO_STATE
from fdcorrect.dynamics import (DynamicsModel, ModelId, cr3bp_accel, cr3bp_jacobian, dam_propagate, dam_rates,
                                frozen_eccentricity, hfem_accel, hfem_jacobian, hfem_model, jacobi_constant,
                                lagrange_points)
from fdcorrect.frames import FrameTag, KeplerElements, StateVector6, brf_to_mci, mci_to_brf
from fdcorrect.propagation import PropagationOptions, propagate


def fd_jacobian(f, x, h=1e-6):
    J = np.zeros((3, 6))
    for k in range(6):
        e = np.zeros(6)
        e[k] = h
        J[:, k] = (f(x + e) - f(x - e)) / (2 * h)
    return J


def rel_err(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def test_lagrange_points_are_equilibria(constants):
    for name, p in lagrange_points(constants.mu).items():
        acc = cr3bp_accel(np.r_[p, 0, 0, 0], constants.mu)
        assert np.allclose(acc, 0.0, atol=1e-12), name


def test_cr3bp_frame_tag_enforced(constants):
    with pytest.raises(ValueError):
        cr3bp_accel(StateVector6.from_array(DRO_STATE, FrameTag.MCI), constants.mu)


brf_states = st.tuples(st.floats(0.5, 1.3), st.floats(-0.3, 0.3), st.floats(-0.3, 0.3),
                       st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1)).map(np.array)


@given(brf_states)
def test_cr3bp_jacobian_matches_finite_differences(x):
    mu = 0.01215058426994
    if min(np.linalg.norm(x[:3] - [1 - mu, 0, 0]), np.linalg.norm(x[:3] + [mu, 0, 0])) < 0.05:
        return
    A = cr3bp_jacobian(x, mu)
    J = fd_jacobian(lambda y: cr3bp_accel(y, mu), x)
    assert rel_err(A[3:], J) < 1e-7
    assert np.array_equal(A[:3], np.hstack([np.zeros((3, 3)), np.eye(3)]))


mci_states = st.tuples(st.floats(-0.1, 0.1), st.floats(-0.1, 0.1), st.floats(-0.1, 0.1),
                       st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1), st.floats(0, 30)).map(np.array)


@given(mci_states)
def test_hfem_jacobian_matches_finite_differences(xt):
    from fdcorrect.ephemeris import BicircularEphemeris
    x, t = xt[:6], xt[6]
    if np.linalg.norm(x[:3]) < 0.01:
        return
    eph = BicircularEphemeris()
    A = hfem_jacobian(x, t, eph)
    J = fd_jacobian(lambda y: hfem_accel(y, t, eph), x)
    assert rel_err(A[3:], J) < 1e-7


def test_jacobi_conserved(cr3bp, constants):
    tr = propagate(cr3bp, DRO_STATE, DRO_PERIOD)
    C0 = jacobi_constant(DRO_STATE, constants.mu)
    ts = np.linspace(0, DRO_PERIOD, 50)
    drift = max(abs(jacobi_constant(x, constants.mu) - C0) for x in tr(ts))
    assert drift < 1e-11


def test_two_body_limit_stays_circular(circular, constants):
    model = hfem_model(circular, include_earth=False, include_sun=False, constants=constants)
    r = 0.02
    v = math.sqrt(constants.mu_moon / r)
    T = 2 * math.pi * math.sqrt(r ** 3 / constants.mu_moon)
    tr = propagate(model, [r, 0, 0, 0, v, 0], 10 * T)
    radii = np.linalg.norm(tr(np.linspace(0, 10 * T, 400))[:, :3], axis=1)
    assert np.max(np.abs(radii - r)) < 1e-9


def test_hfem_circular_equals_cr3bp(cr3bp, hfem_circular, circular):
    x_mci = brf_to_mci(StateVector6.from_array(DRO_STATE, FrameTag.BRF), 0.0, circular).as_array()
    ref = propagate(cr3bp, DRO_STATE, DRO_PERIOD)
    tr = propagate(hfem_circular, x_mci, DRO_PERIOD)
    err = 0.0
    for t in np.linspace(0, DRO_PERIOD, 33):
        back = mci_to_brf(StateVector6.from_array(tr(t), FrameTag.MCI, t), t, circular).as_array()
        err = max(err, np.max(np.abs(back - ref(t))))
    assert err < 1e-6


def test_model_validation(constants):
    with pytest.raises(ValueError):
        DynamicsModel(ModelId.HFEM, constants)
    with pytest.raises(ValueError):
        DynamicsModel(ModelId.DAM, constants)


# --- averaged model ---------------------------------------------------------------


def test_frozen_eccentricity_45deg():
    e = frozen_eccentricity(math.radians(45))
    assert e == pytest.approx(math.sqrt(1 / 6), abs=1e-15)
    assert round(e, 4) == 0.4082


def test_equilibrium_rates_vanish(constants):
    i = math.radians(45)
    oe = KeplerElements(constants.km_to_nd(10000.0), frozen_eccentricity(i), i, 0.3, math.pi / 2, 1.0)
    rates = dam_rates(oe, constants)
    assert rates[0] == 0.0
    assert np.all(np.abs(rates[[1, 2, 4]]) < 1e-14)


def _averaged_potential(a, e, i, w, mu):
    return (1 - mu) / 32 * a * a * ((1 + 3 * math.cos(2 * i)) * (2 + 3 * e * e) + 30 * e * e * math.sin(i) ** 2
                                    * math.cos(2 * w))


def _lagrange_rates(oe, mu):
    # planetary equations applied to the averaged disturbing function
    a, e, i, w = oe.a, oe.e, oe.i, oe.argp
    n = math.sqrt(mu / a ** 3)
    h = 1e-6
    R = lambda *args: _averaged_potential(*args, mu)  # noqa: E731
    dRde = (R(a, e + h, i, w) - R(a, e - h, i, w)) / (2 * h)
    dRdi = (R(a, e, i + h, w) - R(a, e, i - h, w)) / (2 * h)
    dRdw = (R(a, e, i, w + h) - R(a, e, i, w - h)) / (2 * h)
    b = math.sqrt(1 - e * e)
    na2 = n * a * a
    de = -b / (na2 * e) * dRdw
    di = math.cos(i) / (na2 * b * math.sin(i)) * dRdw
    dw = b / (na2 * e) * dRde - math.cos(i) / (na2 * b * math.sin(i)) * dRdi
    dO = 1 / (na2 * b * math.sin(i)) * dRdi
    return np.array([0.0, de, di, dO, dw, n])


@given(st.floats(0.01, 0.05), st.floats(0.05, 0.8), st.floats(0.1, 3.0), st.floats(0, 6.28))
def test_dam_rates_match_planetary_equations(a, e, i, w):
    from fdcorrect.constants import default_constants
    c = default_constants()
    oe = KeplerElements(a, e, i, 0.0, w, 0.0)
    got = dam_rates(oe, c)
    want = _lagrange_rates(oe, c.mu)
    assert np.allclose(got, want, rtol=1e-6, atol=1e-9 * np.max(np.abs(want[1:5])))


def test_dam_degenerate_rejected(constants):
    with pytest.raises(ValueError):
        dam_rates(KeplerElements(0.03, 0.0, 0.5, 0, 0, 0), constants)


def test_dam_semimajor_axis_constant(constants):
    oe = KeplerElements(0.026, 0.3, 1.0, 0.2, 0.4, 0.0)
    traj = dam_propagate(oe, constants, np.linspace(0, 100, 11))
    assert np.all(traj[:, 0] == oe.a)


def test_frozen_orbit_stays_frozen(constants):
    i = math.radians(45)
    oe = KeplerElements(0.026, frozen_eccentricity(i), i, 0.0, math.pi / 2, 0.0)
    traj = dam_propagate(oe, constants, np.linspace(0, 500, 6))
    assert np.allclose(traj[:, 1], oe.e, atol=1e-12)
    assert np.allclose(traj[:, 4], math.pi / 2, atol=1e-12)


def test_integrator_tolerance_option(cr3bp):
    with pytest.raises(ValueError):
        PropagationOptions(rtol=-1.0)
