import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fdcorrect.frames import (FrameMismatchError, FrameTag, KeplerElements, StateVector6, brf_to_eof, brf_to_mci,
                              cartesian_to_kepler, eof_to_brf, eof_to_mci, kepler_to_cartesian, mci_to_brf,
                              mci_to_eof, rot_z, wrap_2pi, wrap_pi)

finite = st.floats(-2.0, 2.0, allow_nan=False)
times = st.floats(-50.0, 50.0, allow_nan=False)
state6 = st.lists(finite, min_size=6, max_size=6).map(np.array)


def brf(x, t=0.0):
    return StateVector6.from_array(x, FrameTag.BRF, t)


def test_state_requires_finite_components():
    with pytest.raises(ValueError):
        StateVector6([np.nan, 0, 0], [0, 0, 0], FrameTag.BRF)


def test_cross_frame_arithmetic_rejected():
    a = brf(np.ones(6))
    b = StateVector6.from_array(np.ones(6), FrameTag.MCI)
    assert np.allclose((a + a).as_array(), 2.0)
    with pytest.raises(FrameMismatchError):
        a - b


def test_transform_checks_input_frame(constants, circular):
    s = StateVector6.from_array(np.ones(6), FrameTag.EOF)
    with pytest.raises(FrameMismatchError):
        brf_to_eof(s, 0.0, constants.mu)
    with pytest.raises(FrameMismatchError):
        mci_to_brf(s, 0.0, circular)


def test_moon_centering(constants, circular):
    moon = brf([1 - constants.mu, 0, 0, 0, 0, 0])
    for t in (0.0, 0.7, 3.0):
        assert np.allclose(brf_to_eof(moon, t, constants.mu).position, 0.0, atol=1e-16)
        assert np.allclose(brf_to_mci(moon, t, circular).position, 0.0, atol=1e-16)


def test_eof_at_epoch_and_quarter_turn(constants):
    d = 0.05
    s = brf([1 - constants.mu + d, 0, 0, 0, 0, 0])
    assert np.allclose(brf_to_eof(s, 0.0, constants.mu).position, [d, 0, 0], atol=1e-16)
    assert np.allclose(brf_to_eof(s, math.pi / 2, constants.mu).position, [0, d, 0], atol=1e-16)


def test_circular_mci_identity_at_epoch(constants, circular):
    d = np.array([0.05, -0.01, 0.02])
    s = brf(np.r_[d + [1 - constants.mu, 0, 0], 0, 0, 0])
    assert np.allclose(brf_to_mci(s, 0.0, circular).position, d, atol=1e-16)


@given(state6, times)
def test_brf_eof_roundtrip(x, t):
    from fdcorrect.constants import default_constants
    mu = default_constants().mu
    back = eof_to_brf(brf_to_eof(brf(x, t), t, mu), t, mu)
    assert np.allclose(back.as_array(), x, rtol=1e-10, atol=1e-13)


@given(state6, times)
def test_brf_mci_roundtrip_bicircular(x, t):
    from fdcorrect.ephemeris import BicircularEphemeris
    eph = BicircularEphemeris()
    back = mci_to_brf(brf_to_mci(brf(x, t), t, eph), t, eph)
    assert np.allclose(back.as_array(), x, rtol=1e-10, atol=1e-13)
    s = StateVector6.from_array(x, FrameTag.EOF, t)
    assert np.allclose(mci_to_eof(eof_to_mci(s, t, eph), t, eph).as_array(), x, rtol=1e-10, atol=1e-13)


@given(times)
def test_dcm_orthonormal(t):
    from fdcorrect.ephemeris import BicircularEphemeris
    for C in (rot_z(t), BicircularEphemeris().rotating_dcm(t)[0]):
        assert np.allclose(C @ C.T, np.eye(3), atol=1e-13)
        assert np.linalg.det(C) == pytest.approx(1.0, abs=1e-13)


def test_mci_velocity_is_time_derivative(constants, circular):
    # finite difference of the mapped position of a fixed BRF point
    x = np.array([1.02, 0.03, -0.01, 0.1, -0.2, 0.05])
    t, h = 0.9, 1e-6
    def pos(tt):
        return brf_to_mci(brf(np.r_[x[:3] + tt * x[3:], x[3:]], tt), tt, circular).position
    fd = (pos(t + h) - pos(t - h)) / (2 * h)
    assert np.allclose(fd, brf_to_mci(brf(np.r_[x[:3] + t * x[3:], x[3:]], t), t, circular).velocity, atol=1e-8)


def test_jacobi_preserved_through_circular_mci(constants, circular, cr3bp):
    from fdcorrect.dynamics import jacobi_constant
    from fdcorrect.propagation import propagate
    from conftest import DRO_STATE
    tr = propagate(cr3bp, DRO_STATE, 0.9)
    s = brf(tr(0.9), 0.9)
    back = mci_to_brf(brf_to_mci(s, 0.9, circular), 0.9, circular)
    assert jacobi_constant(back.as_array(), constants.mu) == pytest.approx(
        jacobi_constant(s.as_array(), constants.mu), abs=1e-14)


def test_circular_equatorial_elements(constants):
    a = 0.03
    r, v = [a, 0, 0], [0, math.sqrt(constants.mu_moon / a), 0]
    oe = cartesian_to_kepler(StateVector6(r, v, FrameTag.EOF), constants.mu_moon)
    assert oe.e == pytest.approx(0.0, abs=1e-12)
    assert oe.i == pytest.approx(0.0, abs=1e-12)
    assert oe.a == pytest.approx(a, rel=1e-12)


def test_elfo_element_roundtrip(constants):
    oe = KeplerElements(constants.km_to_nd(10000.0), 0.4082, math.radians(45), 0.0, math.radians(90),
                        math.radians(180))
    back = cartesian_to_kepler(kepler_to_cartesian(oe, constants.mu_moon), constants.mu_moon)
    assert np.allclose(back.as_array(), oe.as_array(), rtol=0, atol=1e-10)


@pytest.mark.parametrize("kw", [{"a": -1.0}, {"e": 1.0}, {"i": 4.0}])
def test_invalid_elements(kw):
    args = dict(a=1.0, e=0.1, i=0.5, raan=0.0, argp=0.0, M=0.0)
    args.update(kw)
    with pytest.raises(ValueError):
        KeplerElements(**args)


def test_open_orbit_rejected(constants):
    s = StateVector6([0.02, 0, 0], [0, 2.0, 0], FrameTag.EOF)
    with pytest.raises(ValueError):
        cartesian_to_kepler(s, constants.mu_moon)


def test_angles_normalized():
    oe = KeplerElements(1.0, 0.1, 0.5, -0.5, 7.0, -2 * math.pi)
    for ang in (oe.raan, oe.argp, oe.M):
        assert 0.0 <= ang < 2 * math.pi


elements = st.builds(
    lambda a, e, i, raan, argp, M: KeplerElements(a, e, i, raan, argp, M),
    st.floats(0.005, 0.2), st.floats(1e-3, 0.9), st.floats(1e-3, math.pi - 1e-3),
    st.floats(0, 2 * math.pi - 1e-9), st.floats(0, 2 * math.pi - 1e-9), st.floats(0, 2 * math.pi - 1e-9))


def _angle_err(a, b):
    return abs(wrap_pi(a - b))


def test_random_element_roundtrip_1000(constants):
    rng = np.random.default_rng(12)
    worst = 0.0
    for _ in range(1000):
        oe = KeplerElements(rng.uniform(0.005, 0.2), rng.uniform(1e-3, 0.9), rng.uniform(1e-2, math.pi - 1e-2),
                            *rng.uniform(0, 2 * math.pi, 3))
        back = cartesian_to_kepler(kepler_to_cartesian(oe, constants.mu_moon), constants.mu_moon)
        err = max(abs(back.a - oe.a) / oe.a, abs(back.e - oe.e), abs(back.i - oe.i),
                  *(_angle_err(x, y) for x, y in zip(back.as_array()[3:], oe.as_array()[3:])))
        worst = max(worst, err)
    assert worst < 1e-9


@given(elements)
def test_element_roundtrip_property(oe):
    gm = 0.0121505842699
    back = cartesian_to_kepler(kepler_to_cartesian(oe, gm), gm)
    assert abs(back.a - oe.a) / oe.a < 1e-9
    assert abs(back.e - oe.e) < 1e-9 and abs(back.i - oe.i) < 1e-9
    # node and perilune are ill-conditioned near the degenerate limits; compare the position instead
    assert np.allclose(kepler_to_cartesian(back, gm).as_array(), kepler_to_cartesian(oe, gm).as_array(),
                       rtol=1e-9, atol=1e-12)


def test_wrap_helpers():
    assert wrap_2pi(-1e-18) == 0.0 or wrap_2pi(-1e-18) < 2 * math.pi
    assert wrap_pi(3 * math.pi / 2) == pytest.approx(-math.pi / 2)
    assert 0.0 <= wrap_2pi(-0.1) < 2 * math.pi
