import numpy as np
import pytest

from conftest import QDRO_STATE
from fdcorrect.propagation import (PatchpointSchedule, PropagationOptions, SampledSignal, SignalExtractor,
                                   SignalPartials, propagate, propagate_segments, sample_signal)
from fdcorrect.refine import refine_sequential
from fdcorrect.sensitivity import (SegmentIndexSet, finite_difference_sensitivity, frequency_sensitivities,
                                   gmsc_sensitivity_single, implicit_function_residual, lnaff_sensitivity_single,
                                   sensitivity_multi, write_sensitivity_csv)

T, N = 60.0, 2 ** 10
EXTRACT = SignalExtractor("x")


@pytest.fixture(scope="module")
def build(cr3bp):
    def _build(X):
        return sample_signal(propagate(cr3bp, X, T), EXTRACT, N, T / N, with_partials=True)
    return _build


@pytest.fixture(scope="module")
def results(build):
    sig = build(QDRO_STATE)
    return {m: refine_sequential(sig, 2, m) for m in ("lnaff", "gmsc")}


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


@pytest.mark.parametrize("method", ["lnaff", "gmsc"])
@pytest.mark.parametrize("j", [0, 1])
def test_matches_finite_difference_oracle(results, build, method, j):
    res = results[method]
    assert res.converged
    S = frequency_sensitivities(res)[j].matrix
    fd = finite_difference_sensitivity(build, QDRO_STATE, res, j, step=1e-6, columns=[0, 1, 3, 4])
    cols = [0, 1, 3, 4]
    assert rel(S[:, cols], fd[:, cols]) < 1e-5


@pytest.mark.parametrize("method", ["lnaff", "gmsc"])
def test_implicit_function_residual_is_roundoff(results, method):
    for j in range(2):
        assert implicit_function_residual(results[method], j) < 1e-12


def test_out_of_plane_columns_vanish(results):
    # a planar signal is insensitive to first order in z0 and vz0
    for method in ("lnaff", "gmsc"):
        for s in frequency_sensitivities(results[method]):
            big = np.max(np.abs(s.matrix))
            assert np.max(np.abs(s.matrix[:, [2, 5]])) < 1e-10 * big


def test_signal_scaling(results):
    res = results["gmsc"]
    sig = res.signal
    scaled = SampledSignal(3.0 * sig.values, sig.dt, sig.t0, "", sig.partials.scaled(3.0))
    a = frequency_sensitivities(res)[0]
    b = frequency_sensitivities(refine_sequential(scaled, 2, "gmsc"))[0]
    assert np.allclose(b.dnu, a.dnu, rtol=1e-8, atol=1e-12)
    assert np.allclose(b.dA, 3.0 * a.dA, rtol=1e-8, atol=1e-12)
    assert np.allclose(b.dtheta, a.dtheta, rtol=1e-8, atol=1e-12)


def test_methods_agree_on_dominant_frequency(results):
    a = frequency_sensitivities(results["lnaff"])[0].dnu
    b = frequency_sensitivities(results["gmsc"])[0].dnu
    assert rel(a, b) < 1e-3


def test_single_accessors(results):
    assert np.array_equal(lnaff_sensitivity_single(results["lnaff"], 1).matrix,
                          frequency_sensitivities(results["lnaff"])[1].matrix)
    assert gmsc_sensitivity_single(results["gmsc"], 0).matrix.shape == (3, 6)
    with pytest.raises(ValueError):
        gmsc_sensitivity_single(results["lnaff"], 0)
    with pytest.raises(IndexError):
        lnaff_sensitivity_single(results["lnaff"], 5)


def test_missing_partials_rejected(results):
    sig = results["gmsc"].signal
    res = refine_sequential(SampledSignal(sig.values, sig.dt), 1, "gmsc")
    with pytest.raises(ValueError):
        frequency_sensitivities(res)


def _multi_signal(model, sched, X, options=None):
    times = sched.epochs[0] + (T / N) * np.arange(N)
    sp = propagate_segments(model, sched, X, sample_times=times, options=options)
    q, grad = EXTRACT.evaluate(model, times, sp.sample_states, with_gradient=True)
    rows = np.einsum("nj,njk->nk", grad, sp.sample_stms)
    return SampledSignal(q, T / N, 0.0, "", SignalPartials(rows, sp.sample_segment, sched.n_p))


@pytest.mark.parametrize("method", ["lnaff", "gmsc"])
def test_multiple_shooting_chain_rule(cr3bp, method):
    # patchpoints on one continuous arc: dxi/dx0 = sum_b S_b Phi(tau_b, 0)
    opts = PropagationOptions(1e-13, 1e-13)
    sched = PatchpointSchedule.uniform(0.0, T, 3)
    X, phis = [QDRO_STATE.copy()], [np.eye(6)]
    for b in range(2):
        one = PatchpointSchedule(sched.epochs[b:b + 2])
        sp = propagate_segments(cr3bp, one, X[-1][None, :], options=opts)
        X.append(sp.end_states[0])
        phis.append(sp.end_stms[0] @ phis[-1])
    multi = refine_sequential(_multi_signal(cr3bp, sched, np.array(X), opts), 2, method)
    single = refine_sequential(_multi_signal(cr3bp, PatchpointSchedule(sched.epochs[[0, -1]]),
                                             QDRO_STATE[None, :], opts), 2, method)
    for j in range(2):
        S = sensitivity_multi(multi, j)
        assert S.matrix.shape == (3, 18)
        chained = sum(S.block(b) @ phis[b] for b in range(3))
        assert rel(chained, frequency_sensitivities(single)[j].matrix) < 1e-6


def test_empty_segment_gives_zero_block(cr3bp):
    sched = PatchpointSchedule(np.array([0.0, 30.0, T, T + 5.0]))
    tr = propagate(cr3bp, QDRO_STATE, T + 5.0)
    X = tr(sched.epochs[:-1])
    sig = _multi_signal(cr3bp, sched, X)
    assert list(SegmentIndexSet.from_partials(sig.partials).counts) == [N // 2, N // 2, 0]
    res = refine_sequential(sig, 1, "gmsc")
    with pytest.warns(UserWarning, match="no samples"):
        S = sensitivity_multi(res, 0)
    assert np.all(S.block(2) == 0.0)
    assert np.any(S.block(1) != 0.0)


def test_sensitivity_csv(tmp_path, results):
    s = frequency_sensitivities(results["lnaff"])[0]
    path = tmp_path / "sens.csv"
    write_sensitivity_csv(path, s)
    data = np.loadtxt(path, delimiter=",", skiprows=2, usecols=range(1, 7))
    assert np.array_equal(data, s.matrix)
